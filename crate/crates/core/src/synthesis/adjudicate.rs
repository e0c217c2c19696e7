//! Ensemble quality adjudication with the fixed taxonomy prompt.

use serde::{Deserialize, Serialize};

use super::QaItem;
use crate::providers::mock::TASK_ADJUDICATE;
use crate::providers::{chat_complete, parse_json_lenient, CachePolicy, ChatProvider, ChatRequest};
use crate::{Error, Result};

/// The adjudication prompt, stored verbatim as a text asset.
pub const QUALITY_PROMPT: &str = include_str!("../../assets/quality_prompt.txt");

pub const PROMPT_VERSION: &str = "quality-v1";

pub struct Adjudicator<'a> {
    pub provider: &'a dyn ChatProvider,
    pub model_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub clinical_task: String,
    pub reasoning_type: String,
    pub clarity_score: f64,
    pub validity_score: f64,
    pub difficulty_score: f64,
}

impl Verdict {
    fn valid(&self) -> bool {
        [self.clarity_score, self.validity_score, self.difficulty_score]
            .iter()
            .all(|s| (1.0..=5.0).contains(s))
            && !self.clinical_task.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberVerdict {
    pub provider_id: String,
    pub model_name: String,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub qa_id: String,
    pub clinical_task: String,
    pub reasoning_type: String,
    pub clarity: f64,
    pub validity: f64,
    pub difficulty: f64,
    pub members: Vec<MemberVerdict>,
    pub prompt_version: String,
}

fn render(item: &QaItem) -> String {
    let mut s = format!("Question: {}\nOptions:\n", item.question);
    for (i, o) in item.options.iter().enumerate() {
        s.push_str(&format!("{}. {o}\n", (b'A' + i as u8) as char));
    }
    s.push_str(&format!(
        "Answer: {}\nRationale: {}\n",
        (b'A' + item.answer_index as u8) as char,
        item.rationale
    ));
    s
}

/// Most frequent label; ties go to the label voted first.
fn majority<'a>(labels: impl Iterator<Item = &'a str>) -> String {
    let mut tally: Vec<(&str, usize)> = Vec::new();
    for l in labels {
        match tally.iter_mut().find(|(x, _)| *x == l) {
            Some(e) => e.1 += 1,
            None => tally.push((l, 1)),
        }
    }
    let best = tally.iter().map(|t| t.1).max().unwrap_or(0);
    tally.iter().find(|t| t.1 == best).map_or_else(String::new, |t| t.0.to_string())
}

fn ask(member: &Adjudicator<'_>, item: &QaItem) -> Result<Option<Verdict>> {
    let mut request = ChatRequest::new(member.model_name.clone(), 0.0)
        .task(TASK_ADJUDICATE, QUALITY_PROMPT)
        .user(render(item));
    for attempt in 0..2 {
        let text = chat_complete(member.provider, None, &request, CachePolicy::Use)?;
        if let Some(v) = parse_json_lenient::<Verdict>(&text).filter(Verdict::valid) {
            return Ok(Some(v));
        }
        if attempt == 0 {
            request = request
                .message("assistant", text)
                .user("Output EXACTLY the JSON format requested, nothing else.");
        }
    }
    Ok(None)
}

/// Scores an item with every ensemble member; scores are means over the
/// members that produced a valid verdict, labels are majority votes.
pub fn adjudicate_quality(item: &QaItem, ensemble: &[Adjudicator<'_>]) -> Result<Adjudication> {
    if ensemble.is_empty() {
        return Err(Error::validation("adjudication ensemble is empty"));
    }
    let mut members = Vec::with_capacity(ensemble.len());
    for m in ensemble {
        let (verdict, error) = match ask(m, item) {
            Ok(Some(v)) => (Some(v), None),
            Ok(None) => (None, Some("no valid JSON after one re-ask".to_string())),
            Err(e) => (None, Some(e.to_string())),
        };
        members.push(MemberVerdict {
            provider_id: m.provider.provider_id(),
            model_name: m.model_name.clone(),
            verdict,
            error,
        });
    }
    let valid: Vec<&Verdict> = members.iter().filter_map(|m| m.verdict.as_ref()).collect();
    if valid.is_empty() {
        return Err(Error::Adjudication { qa_id: item.qa_id.clone() });
    }
    let mean = |f: fn(&Verdict) -> f64| valid.iter().map(|v| f(v)).sum::<f64>() / valid.len() as f64;
    Ok(Adjudication {
        qa_id: item.qa_id.clone(),
        clinical_task: majority(valid.iter().map(|v| v.clinical_task.as_str())),
        reasoning_type: majority(valid.iter().map(|v| v.reasoning_type.as_str())),
        clarity: mean(|v| v.clarity_score),
        validity: mean(|v| v.validity_score),
        difficulty: mean(|v| v.difficulty_score),
        members,
        prompt_version: PROMPT_VERSION.into(),
    })
}
