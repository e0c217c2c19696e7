//! Multiple-choice evaluation in zero-shot and retrieval-augmented modes,
//! plus the shortcut-diagnostic behavioral metrics.

pub mod metrics;
pub mod rag;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::providers::mock::TASK_ANSWER;
use crate::providers::{chat_complete, CachePolicy, ChatProvider, ChatRequest};
use crate::synthesis::QaItem;
use crate::{Error, Result};

pub use metrics::{behavioral_report, compute_hne, compute_r3, hne_from_counts, r3_from_counts, render_table, BehavioralReport, Rate, SplitBehavior};
pub use rag::{build_rag_context, build_rag_contexts, ChunkIndex, RagContext, RetrievalConfig};

pub const PROMPT_VERSION: &str = "mcq-v1";

const ANSWER_INSTRUCTIONS: &str = "You are taking a medical multiple-choice examination. Choose the single best \
option. End your reply with the sentence \"The answer is X.\" where X is the option letter.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ZeroShot,
    Rag,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ZeroShot => "zero_shot",
            Mode::Rag => "rag",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_shot" | "zero-shot" => Ok(Mode::ZeroShot),
            "rag" => Ok(Mode::Rag),
            _ => Err(Error::validation(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub model_id: String,
    pub qa_id: String,
    pub mode: Mode,
    pub raw_response: String,
    /// `None` when no option letter could be read from the response.
    pub parsed_choice: Option<usize>,
    pub correct: bool,
    pub error: Option<String>,
}

fn answer_is() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:(?i:answer)\s*(?:(?i:is)\s*)?[:：]?|答案\s*(?:是|为|：|:)?)\s*[(\[（*]*\s*([A-Z])(?:[^A-Za-z]|$)")
            .expect("valid regex")
    })
}

fn lone_letter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[(\[*]*([A-Z])[)\].:*]*$").expect("valid regex"))
}

fn leading_letter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[(\[*]*([A-Z])(?:[).:,]|$)").expect("valid regex"))
}

/// Reads the chosen option: the last "answer is X" statement, else a line
/// holding only a letter, else a leading letter token. Letters past
/// `n_options` are unparseable.
pub fn parse_choice(response: &str, n_options: usize) -> Option<usize> {
    let n = n_options.clamp(2, 26);
    let to_index = |m: regex::Match<'_>| {
        let i = (m.as_str().as_bytes()[0] - b'A') as usize;
        (i < n).then_some(i)
    };
    if let Some(c) = answer_is().captures_iter(response).last() {
        return to_index(c.get(1)?);
    }
    if let Some(c) = response.lines().find_map(|l| lone_letter().captures(l.trim())) {
        return to_index(c.get(1)?);
    }
    leading_letter().captures(response.trim()).and_then(|c| to_index(c.get(1)?))
}

pub fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// The fixed evaluation prompt body; RAG documents precede the question.
pub fn render_prompt(item: &QaItem, documents: Option<&[String]>) -> String {
    let mut s = String::new();
    if let Some(docs) = documents {
        s.push_str("Background documents:\n");
        for (i, d) in docs.iter().enumerate() {
            s.push_str(&format!("[Document {}]\n{}\n", i + 1, d.trim()));
        }
        s.push('\n');
    }
    s.push_str(&format!("Question: {}\nOptions:\n", item.question.trim()));
    for (i, o) in item.options.iter().enumerate() {
        s.push_str(&format!("{}. {o}\n", letter(i)));
    }
    s.push_str("Answer with the letter of the single best option.");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub model_name: String,
    pub temperature: f64,
    /// Items evaluated concurrently before their outcomes are appended.
    pub batch_size: usize,
    pub execution: Execution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            model_name: "mock".into(),
            temperature: 0.0,
            batch_size: 32,
            execution: Execution::Parallel,
        }
    }
}

fn evaluate_one(item: &QaItem, client: &dyn ChatProvider, model_id: &str, mode: Mode, docs: Option<&[String]>, config: &EvalConfig) -> EvalOutcome {
    let request = ChatRequest::new(config.model_name.clone(), config.temperature)
        .task(TASK_ANSWER, ANSWER_INSTRUCTIONS)
        .user(render_prompt(item, docs));
    let (raw_response, error) = match chat_complete(client, None, &request, CachePolicy::Use) {
        Ok(text) => (text, None),
        Err(e) => (String::new(), Some(e.to_string())),
    };
    let parsed_choice = parse_choice(&raw_response, item.options.len());
    EvalOutcome {
        model_id: model_id.to_string(),
        qa_id: item.qa_id.clone(),
        mode,
        correct: parsed_choice == Some(item.answer_index),
        parsed_choice,
        raw_response,
        error,
    }
}

/// Evaluates every item not already in `done`, calling `persist` with each
/// finished batch in dataset order; returns all outcomes in dataset order.
pub fn evaluate_dataset(
    dataset: &[QaItem],
    client: &dyn ChatProvider,
    model_id: &str,
    mode: Mode,
    contexts: Option<&[RagContext]>,
    config: &EvalConfig,
    done: &[EvalOutcome],
    persist: &mut dyn FnMut(&[EvalOutcome]) -> Result<()>,
) -> Result<Vec<EvalOutcome>> {
    let by_id: HashMap<&str, &RagContext> = contexts.unwrap_or_default().iter().map(|c| (c.qa_id.as_str(), c)).collect();
    if mode == Mode::Rag {
        if contexts.is_none() {
            return Err(Error::validation("rag mode needs retrieval contexts"));
        }
        if let Some(missing) = dataset.iter().find(|i| !by_id.contains_key(i.qa_id.as_str())) {
            return Err(Error::Context {
                qa_id: missing.qa_id.clone(),
                reason: "no retrieval context".into(),
            });
        }
    }
    let mut finished: HashMap<String, EvalOutcome> = done
        .iter()
        .filter(|o| o.mode == mode && o.model_id == model_id)
        .map(|o| (o.qa_id.clone(), o.clone()))
        .collect();
    let ids: HashSet<&str> = dataset.iter().map(|i| i.qa_id.as_str()).collect();
    finished.retain(|k, _| ids.contains(k.as_str()));
    let pending: Vec<&QaItem> = dataset.iter().filter(|i| !finished.contains_key(&i.qa_id)).collect();
    for batch in pending.chunks(config.batch_size.max(1)) {
        let outcomes = config.execution.map(batch, |item| {
            let docs = by_id.get(item.qa_id.as_str()).filter(|_| mode == Mode::Rag).map(|c| c.documents.as_slice());
            evaluate_one(item, client, model_id, mode, docs, config)
        });
        persist(&outcomes)?;
        finished.extend(outcomes.into_iter().map(|o| (o.qa_id.clone(), o)));
    }
    Ok(dataset.iter().filter_map(|i| finished.remove(&i.qa_id)).collect())
}


#[cfg(test)]
mod tests {
    use super::fixtures::item;
    use super::*;
    use crate::providers::mock::parse_mcq_prompt;

    #[test]
    fn parse_examples() {
        assert_eq!(parse_choice("The answer is B.", 4), Some(1));
        assert_eq!(parse_choice("A", 4), Some(0));
        assert_eq!(parse_choice("both seem plausible", 4), None);
        assert_eq!(parse_choice("Answer: (C)", 4), Some(2));
        assert_eq!(parse_choice("答案是D", 4), Some(3));
        assert_eq!(parse_choice("Reasoning...\nB\n", 4), Some(1));
        assert_eq!(parse_choice("C) because", 4), Some(2));
        assert_eq!(parse_choice("The answer is E.", 4), None);
        assert_eq!(parse_choice("A patient like this needs care", 4), None);
        assert_eq!(parse_choice("I think the answer is A, no wait, the answer is C.", 4), Some(2));
        assert_eq!(parse_choice("the answer is b", 4), None);
    }

    #[test]
    fn prompt_round_trips_through_mock_parser() {
        let it = item(1, 0, 1);
        let docs = vec!["doc one".to_string(), "doc two\nline".to_string()];
        let (d, o) = parse_mcq_prompt(&render_prompt(&it, Some(&docs)));
        assert_eq!(o, it.options);
        assert_eq!(d.len(), 2);
        let (d, _) = parse_mcq_prompt(&render_prompt(&it, None));
        assert!(d.is_empty());
    }

    /// Answers with a fixed function of the option texts.
    pub(crate) struct Picker(pub fn(&[String]) -> usize);

    impl ChatProvider for Picker {
        fn provider_id(&self) -> String {
            "picker".into()
        }
        fn complete(&self, r: &ChatRequest) -> Result<String> {
            let (_, options) = parse_mcq_prompt(r.last_user());
            Ok(format!("The answer is {}.", letter((self.0)(&options))))
        }
    }

    struct Down;

    impl ChatProvider for Down {
        fn provider_id(&self) -> String {
            "down".into()
        }
        fn complete(&self, _: &ChatRequest) -> Result<String> {
            Err(Error::Transport("connection refused".into()))
        }
    }

    #[test]
    fn resume_skips_finished_and_persists_batches() {
        let items: Vec<QaItem> = (0..10).map(|i| item(i, 0, 1)).collect();
        let client = Picker(|_| 0);
        let config = EvalConfig {
            batch_size: 4,
            ..EvalConfig::default()
        };
        let mut batches = Vec::new();
        let first = evaluate_dataset(&items[..5], &client, "m", Mode::ZeroShot, None, &config, &[], &mut |b| {
            batches.push(b.len());
            Ok(())
        })
        .unwrap();
        assert_eq!(batches, [4, 1]);
        let mut appended = 0;
        let all = evaluate_dataset(&items, &client, "m", Mode::ZeroShot, None, &config, &first, &mut |b| {
            appended += b.len();
            Ok(())
        })
        .unwrap();
        assert_eq!(appended, 5);
        assert_eq!(all.len(), 10);
        assert!(all.iter().all(|o| o.correct));
        assert_eq!(all.iter().map(|o| o.qa_id.clone()).collect::<Vec<_>>(), items.iter().map(|i| i.qa_id.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn provider_failure_is_unparseable() {
        let items = vec![item(0, 0, 1)];
        let out = evaluate_dataset(&items, &Down, "m", Mode::ZeroShot, None, &EvalConfig::default(), &[], &mut |_| Ok(())).unwrap();
        assert_eq!(out[0].parsed_choice, None);
        assert!(!out[0].correct);
        assert!(out[0].error.as_deref().unwrap().contains("refused"));
    }

    #[test]
    fn rag_needs_contexts() {
        let items = vec![item(0, 0, 1)];
        let r = evaluate_dataset(&items, &Picker(|_| 0), "m", Mode::Rag, None, &EvalConfig::default(), &[], &mut |_| Ok(()));
        assert!(matches!(r, Err(Error::Validation(_))));
    }
}
