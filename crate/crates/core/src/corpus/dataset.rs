use super::{CorpusError, Document, Gender, InputMode, LabelSpace, TokenId, Vocabulary, PAD};

/// A document prepared for the model: token ids of both inputs with PAD
/// removed, plus the multi-hot gold vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDoc {
    pub id: String,
    pub age: u32,
    pub gender: Gender,
    /// Demographic tokens followed by the (truncated) note.
    pub full: Vec<TokenId>,
    /// Demographic tokens only.
    pub demographic: Vec<TokenId>,
    pub target: Vec<f64>,
}

impl EncodedDoc {
    pub fn gold(&self) -> Vec<bool> {
        self.target.iter().map(|&y| y > 0.5).collect()
    }
}

fn strip_pad(mut ids: Vec<TokenId>) -> Vec<TokenId> {
    ids.retain(|&t| t != PAD);
    ids
}

/// Tokenizes documents and resolves their codes against `labels`.
pub fn encode_documents(
    docs: &[Document],
    vocab: &Vocabulary,
    labels: &LabelSpace,
    max_len: usize,
) -> Result<Vec<EncodedDoc>, CorpusError> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let target = labels
                .multi_hot(&d.codes)
                .map_err(|code| CorpusError::UnknownCode { line: i + 1, code })?;
            Ok(EncodedDoc {
                id: d.id.clone(),
                age: d.age,
                gender: d.gender,
                full: strip_pad(vocab.build_model_input(d, InputMode::Full, max_len)),
                demographic: strip_pad(vocab.build_model_input(
                    d,
                    InputMode::DemographicOnly,
                    max_len,
                )),
                target,
            })
        })
        .collect()
}
