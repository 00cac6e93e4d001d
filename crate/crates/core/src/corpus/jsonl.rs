use std::path::Path;

use serde::Deserialize;

use super::{CorpusError, Document, Gender, LabelSpace, MAX_AGE};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    age: u32,
    gender: Gender,
    codes: Option<Vec<String>>,
}

/// Parses dataset JSONL. With `require_codes`, a record without `codes` is a
/// parse error; otherwise missing codes become an empty list.
pub fn parse_jsonl(
    text: &str,
    labels: Option<&LabelSpace>,
    require_codes: bool,
) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let rec: Record = serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        let codes = match rec.codes {
            Some(c) => c,
            None if require_codes => {
                return Err(CorpusError::Parse {
                    line,
                    message: "missing field `codes`".into(),
                })
            }
            None => Vec::new(),
        };
        if rec.age >= MAX_AGE {
            return Err(CorpusError::Validation {
                line,
                message: format!("age {} out of range", rec.age),
            });
        }
        if let Some(ls) = labels {
            if let Some(code) = codes.iter().find(|c| ls.index_of(c).is_none()) {
                return Err(CorpusError::UnknownCode {
                    line,
                    code: code.clone(),
                });
            }
        }
        docs.push(Document {
            id: rec.id,
            text: rec.text,
            age: rec.age,
            gender: rec.gender,
            codes,
        });
    }
    Ok(docs)
}

pub fn to_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        // Document serializes to plain strings and integers only.
        out.push_str(&serde_json::to_string(d).expect("document serializes"));
        out.push('\n');
    }
    out
}

/// Loads a labelled dataset; every record must carry `codes`, and, when a
/// label space is given, every code must belong to it.
pub fn load_jsonl(path: &Path, labels: Option<&LabelSpace>) -> Result<Vec<Document>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_jsonl(&text, labels, true)
}

/// Loads documents for prediction; `codes` may be absent.
pub fn load_prediction_inputs(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_jsonl(&text, None, false)
}

pub fn save_jsonl(path: &Path, docs: &[Document]) -> Result<(), CorpusError> {
    crate::fsutil::write_atomic(path, to_jsonl(docs).as_bytes())
        .map_err(|e| CorpusError::io(path, e))
}
