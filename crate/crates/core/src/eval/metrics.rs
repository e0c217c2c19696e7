//! Hard-negative error rate and RAG rescue rate, from stored outcomes.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{EvalOutcome, Mode, PROMPT_VERSION};
use crate::synthesis::stats::split_key;
use crate::synthesis::QaItem;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub numerator: usize,
    pub denominator: usize,
    pub value: f64,
}

impl Rate {
    fn of(numerator: usize, denominator: usize, what: &str) -> Result<Rate> {
        if denominator == 0 {
            return Err(Error::UndefinedRate(format!("{what}: no errors to divide by")));
        }
        if numerator > denominator {
            return Err(Error::validation(format!("{what}: {numerator} exceeds {denominator}")));
        }
        Ok(Rate {
            numerator,
            denominator,
            value: numerator as f64 / denominator as f64,
        })
    }
}

/// Share of errors that picked the hard negative.
pub fn hne_from_counts(errors: usize, hard_negative_errors: usize) -> Result<Rate> {
    Rate::of(hard_negative_errors, errors, "hard-negative error rate")
}

/// Share of zero-shot errors answered correctly once evidence is supplied.
pub fn r3_from_counts(zero_shot_errors: usize, recovered: usize) -> Result<Rate> {
    Rate::of(recovered, zero_shot_errors, "rag rescue rate")
}

fn index_items(dataset: &[QaItem]) -> HashMap<&str, &QaItem> {
    dataset.iter().map(|i| (i.qa_id.as_str(), i)).collect()
}

fn expect_mode(outcomes: &[EvalOutcome], mode: Mode) -> Result<()> {
    match outcomes.iter().find(|o| o.mode != mode) {
        Some(o) => Err(Error::validation(format!("{} is a {} outcome, expected {mode}", o.qa_id, o.mode))),
        None => Ok(()),
    }
}

/// Unparseable responses count as errors but never as hard-negative picks.
pub fn compute_hne(outcomes: &[EvalOutcome], dataset: &[QaItem]) -> Result<Rate> {
    expect_mode(outcomes, Mode::ZeroShot)?;
    let items = index_items(dataset);
    let mut errors = 0;
    let mut hard = 0;
    for o in outcomes.iter().filter(|o| !o.correct) {
        let item = items
            .get(o.qa_id.as_str())
            .ok_or_else(|| Error::validation(format!("outcome for unknown item {}", o.qa_id)))?;
        errors += 1;
        if o.parsed_choice == Some(item.hard_negative_index) {
            hard += 1;
        }
    }
    hne_from_counts(errors, hard)
}

pub fn compute_r3(zero_shot: &[EvalOutcome], rag: &[EvalOutcome]) -> Result<Rate> {
    expect_mode(zero_shot, Mode::ZeroShot)?;
    expect_mode(rag, Mode::Rag)?;
    let rag_by_id: HashMap<&str, &EvalOutcome> = rag.iter().map(|o| (o.qa_id.as_str(), o)).collect();
    if rag_by_id.len() != zero_shot.len() || zero_shot.iter().any(|o| !rag_by_id.contains_key(o.qa_id.as_str())) {
        return Err(Error::validation("zero-shot and rag outcomes cover different items"));
    }
    let errors: Vec<&EvalOutcome> = zero_shot.iter().filter(|o| !o.correct).collect();
    let recovered = errors.iter().filter(|o| rag_by_id[o.qa_id.as_str()].correct).count();
    r3_from_counts(errors.len(), recovered)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitBehavior {
    pub items: usize,
    pub zero_shot_correct: usize,
    pub unparseable: usize,
    pub errors: usize,
    pub hard_negative_errors: usize,
    pub zero_shot_accuracy: Option<f64>,
    /// `None` when the split has no zero-shot errors.
    pub hne_rate: Option<f64>,
    pub rag_correct: Option<usize>,
    pub rag_accuracy: Option<f64>,
    pub recovered: Option<usize>,
    pub r3_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralReport {
    pub model_id: String,
    pub prompt_version: String,
    pub splits: BTreeMap<String, SplitBehavior>,
}

impl BehavioralReport {
    pub fn overall(&self) -> &SplitBehavior {
        &self.splits["overall"]
    }
}

pub fn behavioral_report(model_id: &str, dataset: &[QaItem], zero_shot: &[EvalOutcome], rag: Option<&[EvalOutcome]>) -> Result<BehavioralReport> {
    expect_mode(zero_shot, Mode::ZeroShot)?;
    let items = index_items(dataset);
    let rag_by_id: Option<HashMap<&str, &EvalOutcome>> = match rag {
        Some(r) => {
            expect_mode(r, Mode::Rag)?;
            Some(r.iter().map(|o| (o.qa_id.as_str(), o)).collect())
        }
        None => None,
    };
    let mut splits: BTreeMap<String, SplitBehavior> = BTreeMap::new();
    splits.insert("overall".into(), SplitBehavior::default());
    for o in zero_shot {
        let item = items
            .get(o.qa_id.as_str())
            .ok_or_else(|| Error::validation(format!("outcome for unknown item {}", o.qa_id)))?;
        let rag_outcome = match &rag_by_id {
            Some(m) => Some(*m.get(o.qa_id.as_str()).ok_or_else(|| Error::validation(format!("no rag outcome for {}", o.qa_id)))?),
            None => None,
        };
        for key in [split_key(item), "overall".to_string()] {
            let s = splits.entry(key).or_default();
            s.items += 1;
            s.zero_shot_correct += o.correct as usize;
            s.unparseable += o.parsed_choice.is_none() as usize;
            if !o.correct {
                s.errors += 1;
                s.hard_negative_errors += (o.parsed_choice == Some(item.hard_negative_index)) as usize;
            }
            if let Some(r) = rag_outcome {
                *s.rag_correct.get_or_insert(0) += r.correct as usize;
                *s.recovered.get_or_insert(0) += (!o.correct && r.correct) as usize;
            }
        }
    }
    for s in splits.values_mut() {
        s.zero_shot_accuracy = (s.items > 0).then(|| s.zero_shot_correct as f64 / s.items as f64);
        s.hne_rate = hne_from_counts(s.errors, s.hard_negative_errors).ok().map(|r| r.value);
        s.rag_accuracy = s.rag_correct.filter(|_| s.items > 0).map(|c| c as f64 / s.items as f64);
        s.r3_rate = s.recovered.and_then(|r| r3_from_counts(s.errors, r).ok()).map(|r| r.value);
    }
    Ok(BehavioralReport {
        model_id: model_id.to_string(),
        prompt_version: PROMPT_VERSION.to_string(),
        splits,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x))
}

/// Plain-text table, one row per model and split; undefined cells show "n/a".
pub fn render_table(reports: &[BehavioralReport]) -> String {
    let mut rows = vec![[
        "model".to_string(),
        "split".into(),
        "items".into(),
        "zero-shot acc %".into(),
        "HNE %".into(),
        "RAG acc %".into(),
        "R3 %".into(),
    ]];
    for r in reports {
        for (split, s) in &r.splits {
            rows.push([
                r.model_id.clone(),
                split.clone(),
                s.items.to_string(),
                pct(s.zero_shot_accuracy),
                pct(s.hne_rate),
                pct(s.rag_accuracy),
                pct(s.r3_rate),
            ]);
        }
    }
    let widths: Vec<usize> = (0..7).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::fixtures::item;
    use proptest::prelude::*;

    fn outcome(i: usize, mode: Mode, choice: Option<usize>, answer: usize) -> EvalOutcome {
        EvalOutcome {
            model_id: "m".into(),
            qa_id: format!("q{i:04}"),
            mode,
            raw_response: String::new(),
            parsed_choice: choice,
            correct: choice == Some(answer),
            error: None,
        }
    }

    #[test]
    fn hne_on_known_counts() {
        // 10 items, answer 0, hard negative 1: 4 right, 6 wrong of which 3 hard.
        let data: Vec<QaItem> = (0..10).map(|i| item(i, 0, 1)).collect();
        let picks = [Some(0), Some(0), Some(0), Some(0), Some(1), Some(1), Some(1), Some(2), Some(3), None];
        let zs: Vec<EvalOutcome> = picks.iter().enumerate().map(|(i, p)| outcome(i, Mode::ZeroShot, *p, 0)).collect();
        let r = compute_hne(&zs, &data).unwrap();
        assert_eq!((r.numerator, r.denominator), (3, 6));
        assert!((r.value - 0.5).abs() < 1e-12);

        let rag_picks = [Some(0), Some(0), Some(1), Some(0), Some(0), Some(0), Some(1), Some(2), Some(0), Some(0)];
        let rag: Vec<EvalOutcome> = rag_picks.iter().enumerate().map(|(i, p)| outcome(i, Mode::Rag, *p, 0)).collect();
        let r3 = compute_r3(&zs, &rag).unwrap();
        assert_eq!((r3.numerator, r3.denominator), (4, 6));

        let rep = behavioral_report("m", &data, &zs, Some(&rag)).unwrap();
        let o = rep.overall();
        assert_eq!(o.items, 10);
        assert_eq!(o.unparseable, 1);
        assert_eq!(o.rag_correct, Some(7));
        assert_eq!(o.hne_rate, Some(0.5));
        let table = render_table(&[rep]);
        assert!(table.contains("overall"));
        assert!(table.contains("50.00"));
    }

    #[test]
    fn all_correct_is_undefined() {
        let data: Vec<QaItem> = (0..3).map(|i| item(i, 2, 1)).collect();
        let zs: Vec<EvalOutcome> = (0..3).map(|i| outcome(i, Mode::ZeroShot, Some(2), 2)).collect();
        assert!(matches!(compute_hne(&zs, &data), Err(Error::UndefinedRate(_))));
        let rep = behavioral_report("m", &data, &zs, None).unwrap();
        assert_eq!(rep.overall().hne_rate, None);
        assert!(render_table(&[rep]).contains("n/a"));
    }

    #[test]
    fn mismatched_sets_rejected() {
        let zs = vec![outcome(0, Mode::ZeroShot, Some(1), 0)];
        let rag = vec![outcome(1, Mode::Rag, Some(0), 0)];
        assert!(matches!(compute_r3(&zs, &rag), Err(Error::Validation(_))));
        assert!(matches!(compute_r3(&zs, &zs), Err(Error::Validation(_))));
    }

    proptest! {
        #[test]
        fn rates_match_counts(picks in prop::collection::vec((prop::option::of(0usize..4), prop::option::of(0usize..4)), 1..40)) {
            let data: Vec<QaItem> = (0..picks.len()).map(|i| item(i, 0, 1)).collect();
            let zs: Vec<EvalOutcome> = picks.iter().enumerate().map(|(i, p)| outcome(i, Mode::ZeroShot, p.0, 0)).collect();
            let rag: Vec<EvalOutcome> = picks.iter().enumerate().map(|(i, p)| outcome(i, Mode::Rag, p.1, 0)).collect();
            let errors = picks.iter().filter(|p| p.0 != Some(0)).count();
            let hard = picks.iter().filter(|p| p.0 == Some(1)).count();
            let rescued = picks.iter().filter(|p| p.0 != Some(0) && p.1 == Some(0)).count();
            match compute_hne(&zs, &data) {
                Ok(r) => {
                    prop_assert_eq!((r.numerator, r.denominator), (hard, errors));
                    prop_assert!((0.0..=1.0).contains(&r.value));
                }
                Err(Error::UndefinedRate(_)) => prop_assert_eq!(errors, 0),
                Err(e) => prop_assert!(false, "{e}"),
            }
            if errors > 0 {
                let r = compute_r3(&zs, &rag).unwrap();
                prop_assert_eq!(r.numerator, rescued);
                let rep = behavioral_report("m", &data, &zs, Some(&rag)).unwrap();
                let o = rep.overall();
                prop_assert_eq!(format!("{:.2}", o.r3_rate.unwrap()), format!("{:.2}", rescued as f64 / errors as f64));
            }
        }
    }
}
