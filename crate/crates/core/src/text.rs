//! Text normalization, tokenization and small vector helpers shared by stages.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    #[default]
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "ZH")]
    Zh,
    #[serde(rename = "other")]
    Other,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "EN",
            Language::Zh => "ZH",
            Language::Other => "other",
        }
    }

    /// Separator placed between sentences when chunk text is reassembled.
    pub fn sentence_joiner(self) -> &'static str {
        match self {
            Language::Zh => "",
            _ => " ",
        }
    }
}

impl std::str::FromStr for Language {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "en" => Ok(Language::En),
            "zh" => Ok(Language::Zh),
            "other" => Ok(Language::Other),
            _ => Err(crate::Error::validation(format!("unknown language tag `{s}`"))),
        }
    }
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2A6DF
        | 0x3040..=0x30FF | 0xAC00..=0xD7AF)
}

/// Case-folded, NFC-normalized, whitespace-collapsed form used for every
/// surface-form comparison (masking, stoplists, alias lookup).
pub fn normalize_surface(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    let lowered = nfc.to_lowercase();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalized containment check.
pub fn contains_surface(haystack: &str, needle: &str) -> bool {
    let n = normalize_surface(needle);
    !n.is_empty() && normalize_surface(haystack).contains(&n)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Character offsets `[start, end)` in the source string.
    pub start: usize,
    pub end: usize,
}

/// Word tokens for alphabetic scripts, single-character tokens for CJK.
/// In [`Language::Zh`] every non-space, non-punctuation character is a token.
pub fn tokenize_spans(text: &str, language: Language) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut word_start = 0;
    let flush = |word: &mut String, start: usize, end: usize, out: &mut Vec<Token>| {
        if !word.is_empty() {
            out.push(Token {
                text: std::mem::take(word),
                start,
                end,
            });
        }
    };
    let mut idx = 0;
    for (i, c) in text.chars().enumerate() {
        idx = i;
        let char_token = is_cjk(c) || (language == Language::Zh && !c.is_ascii() && !c.is_whitespace() && c.is_alphanumeric());
        if char_token {
            flush(&mut word, word_start, i, &mut out);
            out.push(Token {
                text: c.to_lowercase().collect(),
                start: i,
                end: i + 1,
            });
        } else if c.is_alphanumeric() {
            if word.is_empty() {
                word_start = i;
            }
            word.extend(c.to_lowercase());
        } else {
            flush(&mut word, word_start, i, &mut out);
        }
        idx += 1;
    }
    flush(&mut word, word_start, idx, &mut out);
    out
}

pub fn tokenize(text: &str, language: Language) -> Vec<String> {
    tokenize_spans(text, language)
        .into_iter()
        .map(|t| t.text)
        .collect()
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine_similarity(a, b)
}

pub fn l2_normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
