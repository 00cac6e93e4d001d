//! Documents, label space, vocabulary, dataset I/O and the synthetic
//! confounded-corpus generator.

mod dataset;
mod jsonl;
mod synthetic;
mod vocab;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{encode_documents, EncodedDoc};
pub use jsonl::{load_jsonl, load_prediction_inputs, parse_jsonl, save_jsonl, to_jsonl};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticCorpus};
pub use vocab::{
    demographic_tokens, tokenize_text, AgeBucket, InputMode, TokenId, Vocabulary,
    DEMOGRAPHIC_TOKEN_COUNT, PAD, UNK,
};

/// Upper bound (exclusive) on ages accepted anywhere in the pipeline.
pub const MAX_AGE: u32 = 130;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown code {code:?}")]
    UnknownCode { line: usize, code: String },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "M" | "m" => Ok(Gender::Male),
            "F" | "f" => Ok(Gender::Female),
            other => Err(format!("gender must be M or F, got {other:?}")),
        }
    }
}

/// One clinical-note record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub age: u32,
    pub gender: Gender,
    /// Gold codes. Empty for prediction-only input.
    pub codes: Vec<String>,
}

/// Closed, ordered set of code identifiers. A label's index is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new(labels: Vec<String>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.trim().is_empty() {
                return Err(CorpusError::Validation {
                    line: i + 1,
                    message: "empty label identifier".into(),
                });
            }
            if index.insert(l.clone(), i).is_some() {
                return Err(CorpusError::Validation {
                    line: i + 1,
                    message: format!("duplicate label {l:?}"),
                });
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.labels[index]
    }

    /// Multi-hot target vector for a code list. Unknown codes are an error.
    pub fn multi_hot(&self, codes: &[String]) -> Result<Vec<f64>, String> {
        let mut y = vec![0.0; self.len()];
        for c in codes {
            let i = self.index_of(c).ok_or_else(|| c.clone())?;
            y[i] = 1.0;
        }
        Ok(y)
    }

    /// Plain-text form: one identifier per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in &self.labels {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    pub fn parse_text(text: &str) -> Result<Self, CorpusError> {
        let labels = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        Self::new(labels)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::parse_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        crate::fsutil::write_atomic(path, self.to_text().as_bytes())
            .map_err(|e| CorpusError::io(path, e))
    }
}

/// Predicate over demographics that defines the "exposed" group of the
/// planted confound. Serialized as `age>=N` or `gender=M|F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfoundAttribute {
    AgeAtLeast(u32),
    GenderIs(Gender),
}

impl ConfoundAttribute {
    pub fn holds(&self, age: u32, gender: Gender) -> bool {
        match *self {
            ConfoundAttribute::AgeAtLeast(t) => age >= t,
            ConfoundAttribute::GenderIs(g) => gender == g,
        }
    }
}

impl Default for ConfoundAttribute {
    fn default() -> Self {
        ConfoundAttribute::AgeAtLeast(65)
    }
}

impl fmt::Display for ConfoundAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfoundAttribute::AgeAtLeast(t) => write!(f, "age>={t}"),
            ConfoundAttribute::GenderIs(g) => write!(f, "gender={g}"),
        }
    }
}

impl FromStr for ConfoundAttribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("age>=") {
            let t = rest
                .trim()
                .parse()
                .map_err(|_| format!("bad age threshold in {s:?}"))?;
            Ok(ConfoundAttribute::AgeAtLeast(t))
        } else if let Some(rest) = s.strip_prefix("gender=") {
            Ok(ConfoundAttribute::GenderIs(rest.trim().parse()?))
        } else {
            Err(format!(
                "confound attribute must look like age>=65 or gender=F, got {s:?}"
            ))
        }
    }
}

impl Serialize for ConfoundAttribute {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConfoundAttribute {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
