//! Entity alignment: greedy longest-match lookup against a vocabulary, then
//! edit-distance merging of near-duplicate surface forms.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::text::{is_cjk, normalize_surface, Language};
use crate::{Error, Result};

/// Optimal-string-alignment distance over Unicode scalar values: unit-cost
/// insert, delete, substitute and adjacent transposition.
pub fn damerau_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            let mut v = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                v = v.min(d[i - 2][j - 2] + 1);
            }
            d[i][j] = v;
        }
    }
    d[n][m]
}

/// Length-dependent merge tolerance: `θ(L)` is the tolerance of the first
/// step whose `max_len` is ≥ L, else `beyond`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSchedule {
    pub steps: Vec<ThetaStep>,
    pub beyond: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaStep {
    pub max_len: usize,
    pub theta: usize,
}

impl Default for ThetaSchedule {
    fn default() -> Self {
        ThetaSchedule {
            steps: vec![
                ThetaStep { max_len: 3, theta: 0 },
                ThetaStep { max_len: 7, theta: 1 },
                ThetaStep { max_len: 12, theta: 2 },
            ],
            beyond: 3,
        }
    }
}

impl ThetaSchedule {
    pub fn theta(&self, len: usize) -> usize {
        self.steps.iter().find(|s| len <= s.max_len).map_or(self.beyond, |s| s.theta)
    }

    /// Steps must have increasing lengths and non-decreasing tolerances.
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<ThetaStep> = None;
        for s in &self.steps {
            if let Some(p) = prev {
                if s.max_len <= p.max_len || s.theta < p.theta {
                    return Err(Error::validation("theta schedule must be a non-decreasing step function"));
                }
            }
            prev = Some(*s);
        }
        if prev.is_some_and(|p| self.beyond < p.theta) {
            return Err(Error::validation("theta schedule must be a non-decreasing step function"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    Word,
    Char,
}

impl TokenMode {
    pub fn for_language(language: Language) -> Self {
        match language {
            Language::Zh => TokenMode::Char,
            _ => TokenMode::Word,
        }
    }
}

/// `(normalized token, char start, char end)` triples.
pub fn align_tokens(text: &str, mode: TokenMode) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut start = 0;
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let single = mode == TokenMode::Char && !c.is_whitespace() || is_cjk(c);
        if single || !c.is_alphanumeric() {
            if !word.is_empty() {
                out.push((std::mem::take(&mut word), start, i));
            }
            if single && (c.is_alphanumeric() || mode == TokenMode::Char) {
                out.push((c.to_lowercase().collect(), i, i + 1));
            }
            continue;
        }
        if word.is_empty() {
            start = i;
        }
        word.extend(c.to_lowercase());
    }
    if !word.is_empty() {
        out.push((word, start, chars.len()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedMention {
    pub surface: String,
    pub entity_id: String,
    /// Character offsets into the input text, end exclusive.
    pub char_span: (usize, usize),
}

/// Surface-form dictionary: each entry maps a canonical name or alias to an
/// entity id.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    mode: Option<TokenMode>,
    by_tokens: HashMap<Vec<String>, String>,
    by_surface: BTreeMap<String, String>,
    frequency: HashMap<String, u64>,
    canonical: HashMap<String, String>,
    longest: usize,
}

impl Vocabulary {
    pub fn new(mode: TokenMode) -> Self {
        Vocabulary {
            mode: Some(mode),
            ..Vocabulary::default()
        }
    }

    pub fn mode(&self) -> TokenMode {
        self.mode.unwrap_or(TokenMode::Word)
    }

    pub fn is_empty(&self) -> bool {
        self.by_surface.is_empty()
    }

    /// Registers `surface` for `entity_id`; the first surface registered for
    /// an entity is its canonical name.
    pub fn insert(&mut self, surface: &str, entity_id: &str) {
        let key = normalize_surface(surface);
        if key.is_empty() {
            return;
        }
        let tokens: Vec<String> = align_tokens(&key, self.mode()).into_iter().map(|t| t.0).collect();
        if !tokens.is_empty() {
            self.longest = self.longest.max(tokens.len());
            self.by_tokens.entry(tokens).or_insert_with(|| entity_id.to_string());
        }
        self.by_surface.entry(key.clone()).or_insert_with(|| entity_id.to_string());
        self.canonical.entry(entity_id.to_string()).or_insert(key);
    }

    pub fn set_frequency(&mut self, entity_id: &str, frequency: u64) {
        self.frequency.insert(entity_id.to_string(), frequency);
    }

    pub fn lookup(&self, surface: &str) -> Option<&str> {
        self.by_surface.get(&normalize_surface(surface)).map(String::as_str)
    }

    pub fn canonical_name(&self, entity_id: &str) -> Option<&str> {
        self.canonical.get(entity_id).map(String::as_str)
    }

    pub fn surfaces(&self) -> impl Iterator<Item = (&str, &str)> {
        self.by_surface.iter().map(|(s, id)| (s.as_str(), id.as_str()))
    }
}

/// Greedy left-to-right longest match; unmatched tokens are skipped.
pub fn align_maxmatch(text: &str, vocabulary: &Vocabulary) -> Vec<AlignedMention> {
    if vocabulary.is_empty() {
        return Vec::new();
    }
    let tokens = align_tokens(text, vocabulary.mode());
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let max = vocabulary.longest.min(tokens.len() - i);
        let hit = (1..=max).rev().find_map(|len| {
            let key: Vec<String> = tokens[i..i + len].iter().map(|t| t.0.clone()).collect();
            vocabulary.by_tokens.get(&key).map(|id| (len, id))
        });
        match hit {
            Some((len, id)) => {
                let (start, end) = (tokens[i].1, tokens[i + len - 1].2);
                out.push(AlignedMention {
                    surface: chars[start..end].iter().collect(),
                    entity_id: id.clone(),
                    char_span: (start, end),
                });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzyMatch {
    pub entity_id: String,
    pub surface: String,
    pub distance: usize,
}

/// Closest vocabulary surface within `θ(len(candidate))`. Ties go to the
/// smaller distance, then the more frequent entity, then the
/// lexicographically smaller canonical name.
pub fn fuzzy_merge(candidate: &str, vocabulary: &Vocabulary, schedule: &ThetaSchedule) -> Option<FuzzyMatch> {
    let cand = normalize_surface(candidate);
    let theta = schedule.theta(cand.chars().count());
    let cand_len = cand.chars().count();
    let mut best: Option<(usize, u64, &str, &str, &str)> = None;
    for (surface, id) in vocabulary.surfaces() {
        if surface.chars().count().abs_diff(cand_len) > theta {
            continue;
        }
        let d = damerau_levenshtein(&cand, surface);
        if d > theta {
            continue;
        }
        let freq = vocabulary.frequency.get(id).copied().unwrap_or(0);
        let canon = vocabulary.canonical_name(id).unwrap_or(surface);
        let better = match best {
            None => true,
            Some((bd, bf, bc, _, _)) => (d, std::cmp::Reverse(freq), canon) < (bd, std::cmp::Reverse(bf), bc),
        };
        if better {
            best = Some((d, freq, canon, id, surface));
        }
    }
    best.map(|(distance, _, _, id, surface)| FuzzyMatch {
        entity_id: id.to_string(),
        surface: surface.to_string(),
        distance,
    })
}
