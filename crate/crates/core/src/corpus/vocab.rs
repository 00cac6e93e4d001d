use std::collections::{BTreeSet, HashMap};

use super::{Document, Gender};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const DEMOGRAPHIC_TOKEN_COUNT: usize = 2;

const RESERVED: [&str; 8] = [
    "[PAD]",
    "[UNK]",
    "[AGE_0_17]",
    "[AGE_18_44]",
    "[AGE_45_64]",
    "[AGE_65_PLUS]",
    "[GENDER_M]",
    "[GENDER_F]",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgeBucket {
    Child,
    YoungAdult,
    MiddleAged,
    Senior,
}

impl AgeBucket {
    pub const ALL: [AgeBucket; 4] = [
        AgeBucket::Child,
        AgeBucket::YoungAdult,
        AgeBucket::MiddleAged,
        AgeBucket::Senior,
    ];

    pub fn of(age: u32) -> Self {
        match age {
            0..=17 => AgeBucket::Child,
            18..=44 => AgeBucket::YoungAdult,
            45..=64 => AgeBucket::MiddleAged,
            _ => AgeBucket::Senior,
        }
    }

    pub fn token(self) -> TokenId {
        match self {
            AgeBucket::Child => 2,
            AgeBucket::YoungAdult => 3,
            AgeBucket::MiddleAged => 4,
            AgeBucket::Senior => 5,
        }
    }

    /// A representative age inside the bucket.
    pub fn representative_age(self) -> u32 {
        match self {
            AgeBucket::Child => 10,
            AgeBucket::YoungAdult => 30,
            AgeBucket::MiddleAged => 55,
            AgeBucket::Senior => 80,
        }
    }
}

fn gender_token(g: Gender) -> TokenId {
    match g {
        Gender::Male => 6,
        Gender::Female => 7,
    }
}

/// The two demographic tokens (age bucket, gender) that prefix every input.
pub fn demographic_tokens(age: u32, gender: Gender) -> [TokenId; DEMOGRAPHIC_TOKEN_COUNT] {
    [AgeBucket::of(age).token(), gender_token(gender)]
}

/// Lowercased split on every non-alphanumeric character.
pub fn tokenize_text(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Full,
    DemographicOnly,
}

/// Token <-> id map. Ids `0..8` are reserved: PAD, UNK and the six
/// demographic tokens; ordinary words follow in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub const RESERVED_COUNT: usize = RESERVED.len();

    /// Builds a vocabulary from words; duplicates are collapsed and the
    /// resulting order is lexicographic so construction is order-independent.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(Into::into)
            .filter(|w| !RESERVED.contains(&w.as_str()))
            .collect();
        Self::from_ordered(set.into_iter().collect())
    }

    pub fn from_documents(docs: &[Document]) -> Self {
        Self::from_words(docs.iter().flat_map(|d| tokenize_text(&d.text)))
    }

    /// Restores a vocabulary from its non-reserved words in id order.
    pub fn from_ordered(words: Vec<String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Non-reserved words in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[Self::RESERVED_COUNT..]
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Token ids of a note, without padding or truncation.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        tokenize_text(text).map(|t| self.id(&t)).collect()
    }

    /// Model input for a document: demographic tokens, then (in full mode)
    /// the note, truncated and PAD-filled to `max_len`.
    pub fn build_model_input(
        &self,
        doc: &Document,
        mode: InputMode,
        max_len: usize,
    ) -> Vec<TokenId> {
        let mut ids = Vec::with_capacity(max_len);
        ids.extend(demographic_tokens(doc.age, doc.gender));
        if mode == InputMode::Full {
            ids.extend(self.tokenize(&doc.text));
        }
        ids.truncate(max_len);
        ids.resize(max_len, PAD);
        ids
    }
}
