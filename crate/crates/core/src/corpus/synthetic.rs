//! Synthetic multi-label corpus with a planted demographic confound.
//!
//! Every label owns a block of exclusive keyword tokens. A document mentions
//! one keyword for each of its gold labels; each remaining position is a
//! filler word, or with probability `noise_rate` a keyword of some non-gold
//! label. Those distractors leave the note alone ambiguous, which is what
//! gives the demographic shortcut its value.
//!
//! Demographics are drawn by first deciding whether the confound attribute
//! holds and then sampling age and gender uniformly subject to that outcome.
//! Documents without the confounded label get the attribute with probability
//! one half; documents with it get it with `p_conf_train` (train and dev
//! splits) or `p_conf_test` (test split). At `p_conf_test = 0.5` the test
//! split therefore carries no association at all.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConfoundAttribute, CorpusError, Document, Gender, LabelSpace};

/// Ages are drawn from `0..AGE_SUPPORT`.
const AGE_SUPPORT: u32 = 95;
const MAX_LABELS_PER_DOC: usize = 4;
/// Probability that the attribute holds for documents outside the confound.
const BASE_ATTRIBUTE_RATE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_labels: usize,
    /// Number of distinct word types (keywords plus filler).
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub doc_len: usize,
    pub keywords_per_label: usize,
    pub confounded_label: usize,
    pub confound_attribute: ConfoundAttribute,
    pub p_conf_train: f64,
    pub p_conf_test: f64,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_labels: 20,
            vocab_size: 1000,
            n_train: 2000,
            n_dev: 500,
            n_test: 500,
            doc_len: 32,
            keywords_per_label: 3,
            confounded_label: 0,
            confound_attribute: ConfoundAttribute::default(),
            p_conf_train: 0.9,
            p_conf_test: 0.5,
            noise_rate: 0.03,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Config(m));
        for (name, p) in [
            ("p_conf_train", self.p_conf_train),
            ("p_conf_test", self.p_conf_test),
            ("noise_rate", self.noise_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} = {p} is not a probability"));
            }
        }
        if self.n_labels == 0 {
            return err("n_labels must be at least 1".into());
        }
        if self.confounded_label >= self.n_labels {
            return err(format!(
                "confounded_label {} out of range for {} labels",
                self.confounded_label, self.n_labels
            ));
        }
        if self.keywords_per_label == 0 || self.doc_len == 0 {
            return err("keywords_per_label and doc_len must be positive".into());
        }
        let keywords = self.n_labels * self.keywords_per_label;
        if self.vocab_size <= keywords {
            return err(format!(
                "vocab_size {} cannot hold {keywords} keywords plus filler words",
                self.vocab_size
            ));
        }
        match self.confound_attribute {
            ConfoundAttribute::AgeAtLeast(t) if t == 0 || t >= AGE_SUPPORT => {
                err(format!("age threshold {t} must lie in 1..{AGE_SUPPORT}"))
            }
            _ => Ok(()),
        }
    }

    pub fn label_names(&self) -> Vec<String> {
        let width = (self.n_labels.max(2) - 1).to_string().len().max(2);
        (0..self.n_labels)
            .map(|i| format!("L{i:0width$}"))
            .collect()
    }

    /// Word list; the first `n_labels * keywords_per_label` entries are
    /// keywords, label `l` owning the contiguous block starting at
    /// `l * keywords_per_label`.
    pub fn word_names(&self) -> Vec<String> {
        let width = (self.vocab_size - 1).to_string().len().max(4);
        (0..self.vocab_size)
            .map(|i| format!("w{i:0width$}"))
            .collect()
    }

    pub fn keywords_of(&self, label: usize) -> std::ops::Range<usize> {
        label * self.keywords_per_label..(label + 1) * self.keywords_per_label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub labels: LabelSpace,
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticCorpus, CorpusError> {
    cfg.validate()?;
    let labels = LabelSpace::new(cfg.label_names())?;
    let words = cfg.word_names();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gen = Generator {
        cfg,
        labels: &labels,
        words: &words,
    };
    let train = gen.split(&mut rng, "train", cfg.n_train, cfg.p_conf_train);
    let dev = gen.split(&mut rng, "dev", cfg.n_dev, cfg.p_conf_train);
    let test = gen.split(&mut rng, "test", cfg.n_test, cfg.p_conf_test);
    Ok(SyntheticCorpus {
        labels,
        train,
        dev,
        test,
    })
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    labels: &'a LabelSpace,
    words: &'a [String],
}

impl Generator<'_> {
    fn split(&self, rng: &mut ChaCha8Rng, prefix: &str, n: usize, p_conf: f64) -> Vec<Document> {
        let width = n.max(2).to_string().len().max(5);
        (0..n)
            .map(|i| self.document(rng, format!("{prefix}-{i:0width$}"), p_conf))
            .collect()
    }

    fn document(&self, rng: &mut ChaCha8Rng, id: String, p_conf: f64) -> Document {
        let cfg = self.cfg;
        let max_gold = MAX_LABELS_PER_DOC.min(cfg.n_labels);
        let n_gold = rng.random_range(1..=max_gold);
        let mut gold: Vec<usize> = sample(rng, cfg.n_labels, n_gold).into_vec();
        gold.sort_unstable();

        let n_keywords = cfg.n_labels * cfg.keywords_per_label;
        let others: Vec<usize> = (0..cfg.n_labels).filter(|l| !gold.contains(l)).collect();
        let mut tokens: Vec<usize> = gold
            .iter()
            .map(|&l| rng.random_range(cfg.keywords_of(l)))
            .collect();
        while tokens.len() < cfg.doc_len {
            let tok = if !others.is_empty() && rng.random_bool(cfg.noise_rate) {
                let l = others[rng.random_range(0..others.len())];
                rng.random_range(cfg.keywords_of(l))
            } else {
                rng.random_range(n_keywords..cfg.vocab_size)
            };
            tokens.push(tok);
        }
        // Fisher-Yates with the generator's own stream.
        for i in (1..tokens.len()).rev() {
            let j = rng.random_range(0..=i);
            tokens.swap(i, j);
        }
        let text = tokens
            .iter()
            .map(|&t| self.words[t].as_str())
            .collect::<Vec<_>>()
            .join(" ");

        let p_attr = if gold.contains(&cfg.confounded_label) {
            p_conf
        } else {
            BASE_ATTRIBUTE_RATE
        };
        let want = rng.random_bool(p_attr);
        let (age, gender) = loop {
            let age = rng.random_range(0..AGE_SUPPORT);
            let gender = if rng.random_bool(0.5) {
                Gender::Female
            } else {
                Gender::Male
            };
            if cfg.confound_attribute.holds(age, gender) == want {
                break (age, gender);
            }
        };

        Document {
            id,
            text,
            age,
            gender,
            codes: gold
                .iter()
                .map(|&l| self.labels.name(l).to_owned())
                .collect(),
        }
    }
}
