//! From utterance text to operational directives.
//!
//! Text is normalized into tokens, classified into the two-level instruction
//! taxonomy, and mapped to an action override, a human reward, or nothing.

mod rules;
mod taxonomy;

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use taxonomy::{
    to_directive, ActionKind, ActionOverride, Directive, InstructionClass, RewardKind, TopClass, THROTTLE_STEP,
    TURN_STEER,
};

/// Table 1 rows of the instruction taxonomy with their labels.
pub const TABLE1_CORPUS: &str = include_str!("../../data/table1.jsonl");
/// Paraphrase corpus authored alongside the rules.
pub const PARAPHRASE_CORPUS: &str = include_str!("../../data/paraphrases.jsonl");

/// Lowercases, drops apostrophes, turns other punctuation into spaces and
/// splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch == '\'' || ch == '\u{2019}' {
            continue;
        }
        if ch.is_alphanumeric() {
            cleaned.extend(ch.to_lowercase());
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: InstructionClass,
    pub confidence: f64,
}

/// Anything that maps utterance text to a taxonomy class.
pub trait Classifier: Send + Sync {
    fn classify(&self, text: &str) -> Classification;
}

/// Deterministic keyword/phrase classifier. When several families match,
/// action beats reward beats reasoning beats state.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleClassifier;

impl Classifier for RuleClassifier {
    fn classify(&self, text: &str) -> Classification {
        let tokens = normalize(text);
        match rules::classify_tokens(&tokens) {
            Some(m) => Classification {
                class: m.class,
                confidence: m.confidence,
            },
            None => Classification {
                class: InstructionClass::Unrecognized,
                confidence: 0.5,
            },
        }
    }
}

/// One corpus row: `{"text": ..., "top": ..., "sub": ...}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub text: String,
    #[serde(flatten)]
    pub label: InstructionClass,
}

pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<LabeledUtterance>> {
    let rows: Vec<LabeledUtterance> = crate::jsonl::read_records(reader)?;
    if let Some(i) = rows.iter().position(|r| r.text.trim().is_empty()) {
        return Err(Error::Corpus {
            line: i + 1,
            msg: "empty text".into(),
        });
    }
    Ok(rows)
}

pub fn load_corpus(path: impl AsRef<std::path::Path>) -> Result<Vec<LabeledUtterance>> {
    parse_corpus(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn table1_corpus() -> Vec<LabeledUtterance> {
    parse_corpus(TABLE1_CORPUS.as_bytes()).expect("bundled corpus is valid")
}

pub fn paraphrase_corpus() -> Vec<LabeledUtterance> {
    parse_corpus(PARAPHRASE_CORPUS.as_bytes()).expect("bundled corpus is valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Misclassified {
    pub text: String,
    pub expected: String,
    pub predicted: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Class labels indexing both axes of `confusion`.
    pub labels: Vec<String>,
    /// `confusion[expected][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub errors: Vec<Misclassified>,
}

pub fn evaluate_classifier(corpus: &[LabeledUtterance], classifier: &dyn Classifier) -> Result<ClassifierReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let index: BTreeMap<InstructionClass, usize> =
        InstructionClass::ALL.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let n = InstructionClass::ALL.len();
    let mut confusion = vec![vec![0usize; n]; n];
    let mut errors = Vec::new();
    for row in corpus {
        let predicted = classifier.classify(&row.text).class;
        confusion[index[&row.label]][index[&predicted]] += 1;
        if predicted != row.label {
            errors.push(Misclassified {
                text: row.text.clone(),
                expected: row.label.to_string(),
                predicted: predicted.to_string(),
            });
        }
    }
    let correct = (0..n).map(|i| confusion[i][i]).sum::<usize>();
    Ok(ClassifierReport {
        total: corpus.len(),
        correct,
        accuracy: correct as f64 / corpus.len() as f64,
        labels: InstructionClass::ALL.iter().map(ToString::to_string).collect(),
        confusion,
        errors,
    })
}

#[cfg(test)]
mod tests;
