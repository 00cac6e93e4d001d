#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::Rng;

pub const BIN: &str = env!("CARGO_BIN_EXE_deci");

pub fn deci(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Settings for a corpus and model small enough to train in a second or two.
pub const SMALL: &[&str] = &[
    "--set",
    "synthetic.n_train=120",
    "--set",
    "synthetic.n_dev=40",
    "--set",
    "synthetic.n_test=60",
    "--set",
    "synthetic.n_labels=8",
    "--set",
    "synthetic.vocab_size=200",
    "--set",
    "model.embed_dim=16",
    "--set",
    "model.hidden_dim=16",
    "--set",
    "model.n_experts=2",
];

pub fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

/// Generates a small corpus in `dir/data` and trains `dir/model.deci` on it.
pub fn small_fixture(dir: &Path, seed: &str, epochs: &str) {
    let data = dir.join("data");
    let model = dir.join("model.deci");
    let (data, model) = (data.to_str().unwrap(), model.to_str().unwrap());
    let out = deci(&with_small(&["gen-data", "--seed", seed, "--out", data]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = deci(&with_small(&[
        "train", "--seed", seed, "--data", data, "--out", model, "--epochs", epochs,
    ]));
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// P(s+ > s-) + P(tie) / 2 over every positive/negative pair.
pub fn brute_auc(scores: &[f64], gold: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &gi) in gold.iter().enumerate() {
        if !gi {
            continue;
        }
        for (j, &gj) in gold.iter().enumerate() {
            if gj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// `(macro, micro, per_label)` recounted cell by cell.
pub fn brute_f1(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> (f64, f64, Vec<f64>) {
    let n_labels = gold.first().map_or(0, Vec::len);
    let count = |l: Option<usize>, p: bool, g: bool| {
        let mut n = 0;
        for (pr, gr) in pred.iter().zip(gold) {
            for j in 0..n_labels {
                if l.is_none_or(|l| l == j) && pr[j] == p && gr[j] == g {
                    n += 1;
                }
            }
        }
        n
    };
    let per: Vec<f64> = (0..n_labels)
        .map(|l| {
            f1_from_counts(
                count(Some(l), true, true),
                count(Some(l), true, false),
                count(Some(l), false, true),
            )
        })
        .collect();
    let macro_f1 = if n_labels == 0 {
        0.0
    } else {
        per.iter().sum::<f64>() / n_labels as f64
    };
    let micro = f1_from_counts(
        count(None, true, true),
        count(None, true, false),
        count(None, false, true),
    );
    (macro_f1, micro, per)
}

/// Top-k by repeated selection of the highest remaining score, lowest index
/// first among ties.
pub fn brute_p_at_k(scores: &[Vec<f64>], gold: &[Vec<bool>], k: usize) -> f64 {
    let mut total = 0.0;
    for (s, g) in scores.iter().zip(gold) {
        let mut taken = vec![false; s.len()];
        let mut hits = 0;
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for j in 0..s.len() {
                if !taken[j] && best.is_none_or(|b| s[j] > s[b]) {
                    best = Some(j);
                }
            }
            let b = best.unwrap();
            taken[b] = true;
            if g[b] {
                hits += 1;
            }
        }
        total += hits as f64 / k as f64;
    }
    total / scores.len() as f64
}

/// A random score matrix of at most 200 cells, with frequent ties.
pub fn random_instance<R: Rng>(rng: &mut R) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let n_labels = rng.random_range(1..=10);
    let n_docs = rng.random_range(1..=200 / n_labels);
    let coarse = rng.random_bool(0.5);
    let p_gold = rng.random_range(0.05..0.95);
    let mut scores = Vec::with_capacity(n_docs);
    let mut gold = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        scores.push(
            (0..n_labels)
                .map(|_| {
                    if coarse {
                        f64::from(rng.random_range(0..5u8)) / 4.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect(),
        );
        gold.push((0..n_labels).map(|_| rng.random_bool(p_gold)).collect());
    }
    (scores, gold)
}

pub fn column<T: Copy>(rows: &[Vec<T>], j: usize) -> Vec<T> {
    rows.iter().map(|r| r[j]).collect()
}
