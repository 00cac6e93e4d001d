use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{resolve_config, CliError, Command, Common, RunConfig};
use crate::corpus::{
    encode_documents, generate_synthetic, load_jsonl, load_prediction_inputs, save_jsonl,
    CorpusError, EncodedDoc, LabelSpace, Vocabulary,
};
use crate::evaluation::{
    evaluate_scores, final_scores, score_documents, AuditSpec, EvalError, EvalReport,
    InferenceMode, THRESHOLD,
};
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::training::{
    batch_loss, dev_metrics, train_with_observer, Checkpoint, CheckpointError, TrainingError,
};

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            ModelError::NonFinite(m) => CliError::Numerical(format!("non-finite values in {m}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Config(m) => CliError::Config(m),
            TrainingError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainingError::Model(m) => m.into(),
            TrainingError::Argument(m) => CliError::Data(m),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    crate::fsutil::write_atomic(path, text.as_bytes()).map_err(|e| io_err(path, e))
}

/// Writes to `path` when given, otherwise to `stdout`.
fn emit(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, text),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}

pub(super) fn dispatch(
    command: Command,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    match command {
        Command::GenData { common } => gen_data(&common, stdout),
        Command::Train {
            common,
            data,
            alpha,
            beta,
            epochs,
            lr,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(d) = data {
                cfg.paths.data_dir = d;
            }
            if let Some(out) = &common.out {
                cfg.paths.checkpoint = out.clone();
            }
            cfg.train.alpha = alpha.unwrap_or(cfg.train.alpha);
            cfg.train.beta = beta.unwrap_or(cfg.train.beta);
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.learning_rate = lr.unwrap_or(cfg.train.learning_rate);
            train(&cfg, stdout, stderr)
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            mode,
            ablate,
            dump_scores,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(c) = checkpoint {
                cfg.paths.checkpoint = c;
            }
            if let Some(out) = &common.out {
                cfg.paths.report = Some(out.clone());
            }
            if let Some(m) = mode {
                cfg.eval.mode = m;
            }
            let data = data.unwrap_or_else(|| cfg.paths.data_dir.join("test.jsonl"));
            eval(&cfg, &data, ablate, dump_scores.as_deref(), stdout)
        }
        Command::Predict {
            common,
            checkpoint,
            input,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(c) = checkpoint {
                cfg.paths.checkpoint = c;
            }
            predict(&cfg, &input, common.out.as_deref(), stdout)
        }
    }
}

fn gen_data(common: &Common, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = resolve_config(common)?;
    if let Some(out) = &common.out {
        cfg.paths.data_dir = out.clone();
    }
    cfg.synthetic.validate()?;
    let corpus = generate_synthetic(&cfg.synthetic)?;
    let dir = &cfg.paths.data_dir;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, docs) in [
        ("train.jsonl", &corpus.train),
        ("dev.jsonl", &corpus.dev),
        ("test.jsonl", &corpus.test),
    ] {
        save_jsonl(&dir.join(name), docs)?;
    }
    corpus.labels.save(&dir.join("labels.txt"))?;
    let manifest = json!({
        "config": cfg.echo_without_paths(),
        "counts": {
            "train": corpus.train.len(),
            "dev": corpus.dev.len(),
            "test": corpus.test.len(),
        },
        "labels": corpus.labels.len(),
    });
    write_file(&dir.join("manifest.json"), &pretty(&manifest))?;
    emit(None, &pretty(&manifest["counts"]), stdout)
}

fn model_config(cfg: &RunConfig, vocab_size: usize, n_labels: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        embed_dim: cfg.model.embed_dim,
        hidden_dim: cfg.model.hidden_dim,
        n_labels,
        n_experts: cfg.model.n_experts,
        gate_mode: cfg.model.gate_mode,
    }
}

fn required(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Data(format!(
            "{}: file not found",
            path.display()
        )))
    }
}

fn train(cfg: &RunConfig, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    cfg.train.validate()?;
    if cfg.model.max_len < crate::corpus::DEMOGRAPHIC_TOKEN_COUNT {
        return Err(CliError::Config(
            "model.max_len must leave room for the demographic tokens".into(),
        ));
    }
    let dir = &cfg.paths.data_dir;
    let labels = LabelSpace::load(&required(dir.join("labels.txt"))?)?;
    let train_docs = load_jsonl(&required(dir.join("train.jsonl"))?, Some(&labels))?;
    let dev_docs = load_jsonl(&required(dir.join("dev.jsonl"))?, Some(&labels))?;
    if train_docs.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no training documents",
            dir.join("train.jsonl").display()
        )));
    }
    let vocab = Vocabulary::from_documents(&train_docs);
    let max_len = cfg.model.max_len;
    let train_enc = encode_documents(&train_docs, &vocab, &labels, max_len)?;
    let dev_enc = encode_documents(&dev_docs, &vocab, &labels, max_len)?;

    let mcfg = model_config(cfg, vocab.len(), labels.len());
    let params = ModelParams::init(mcfg, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;

    let log_path = cfg.paths.epoch_log();
    let file = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let outcome = train_with_observer(&train_enc, &dev_enc, params, &cfg.train, |record| {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|e| TrainingError::Argument(format!("{}: {e}", log_path.display())))
    })?;
    drop(log);

    let mut params = outcome.params;
    params.round_to_storage();
    let checkpoint = Checkpoint {
        params,
        vocab,
        labels,
        max_len,
        config: json!(cfg.echo_without_paths()),
    };
    checkpoint.save(&cfg.paths.checkpoint)?;

    let train_metrics = dev_metrics(&train_enc, &checkpoint.params, &cfg.train)?;
    let train_loss = batch_loss(
        &train_enc,
        &checkpoint.params,
        cfg.train.alpha,
        cfg.train.beta,
    )?;
    let dev = if dev_enc.is_empty() {
        None
    } else {
        Some(dev_metrics(&dev_enc, &checkpoint.params, &cfg.train)?)
    };
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "epochs": outcome.log.len(),
        "train_metrics": train_metrics,
        "train_loss": train_loss,
        "dev_metrics": dev,
    });
    let manifest = json!({
        "config": cfg.to_flat(),
        "vocab_size": checkpoint.vocab.len(),
        "labels": checkpoint.labels.len(),
        "summary": summary,
    });
    write_file(&cfg.paths.manifest(), &pretty(&manifest))?;
    let _ = writeln!(
        stderr,
        "wrote {} (best epoch {})",
        cfg.paths.checkpoint.display(),
        outcome.best_epoch
    );
    emit(None, &pretty(&summary), stdout)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint, CliError> {
    Ok(Checkpoint::load(&cfg.paths.checkpoint)?)
}

fn encode_for(
    ck: &Checkpoint,
    docs: &[crate::corpus::Document],
) -> Result<Vec<EncodedDoc>, CliError> {
    Ok(encode_documents(docs, &ck.vocab, &ck.labels, ck.max_len)?)
}

#[derive(Serialize)]
struct AblationRow {
    mode: InferenceMode,
    macro_auc: f64,
    micro_auc: f64,
    macro_f1: f64,
    micro_f1: f64,
    p_at_k: std::collections::BTreeMap<usize, f64>,
    confounded_label_f1: Option<f64>,
    fpr_gap: Option<f64>,
    threshold_fpr_gap: Option<f64>,
}

impl AblationRow {
    fn new(r: &EvalReport, label: Option<usize>) -> Self {
        Self {
            mode: r.mode,
            macro_auc: r.macro_auc,
            micro_auc: r.micro_auc,
            macro_f1: r.macro_f1,
            micro_f1: r.micro_f1,
            p_at_k: r.p_at_k.clone(),
            confounded_label_f1: label.and_then(|l| r.per_label_f1.get(l).copied()),
            fpr_gap: r.disparity.as_ref().and_then(|d| d.gap),
            threshold_fpr_gap: r.disparity.as_ref().and_then(|d| d.threshold_gap),
        }
    }
}

fn eval(
    cfg: &RunConfig,
    data: &Path,
    ablate: bool,
    dump_scores: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let ck = load_checkpoint(cfg)?;
    let labels_file = cfg.paths.data_dir.join("labels.txt");
    if labels_file.is_file() {
        let on_disk = LabelSpace::load(&labels_file)?;
        if on_disk != ck.labels {
            return Err(CliError::Data(format!(
                "label space in {} does not match the checkpoint",
                labels_file.display()
            )));
        }
    }
    let docs = load_jsonl(&required(data.to_path_buf())?, Some(&ck.labels))?;
    if docs.is_empty() {
        return Err(CliError::Data(format!("{}: no documents", data.display())));
    }
    let enc = encode_for(&ck, &docs)?;
    let pathway = score_documents(&ck.params, &enc)?;

    let audit = if cfg.eval.audit && cfg.synthetic.confounded_label < ck.labels.len() {
        Some(AuditSpec {
            label: cfg.synthetic.confounded_label,
            attribute: cfg.synthetic.confound_attribute,
        })
    } else {
        None
    };
    let ks: Vec<usize> = cfg.eval.ks.clone();

    if let Some(path) = dump_scores {
        let mut text = String::new();
        for (d, s) in enc.iter().zip(&pathway) {
            let line = json!({"doc_id": d.id, "scores": final_scores(s, cfg.eval.mode)});
            text.push_str(&line.to_string());
            text.push('\n');
        }
        write_file(path, &text)?;
    }

    let echo = cfg.echo_without_paths();
    let output = if ablate {
        let mut rows = Vec::with_capacity(InferenceMode::ALL.len());
        for mode in InferenceMode::ALL {
            let r = evaluate_scores(&enc, &pathway, mode, &ks, audit.as_ref())?;
            rows.push(AblationRow::new(&r, audit.map(|a| a.label)));
        }
        json!({"config": echo, "ablation": rows})
    } else {
        let r = evaluate_scores(&enc, &pathway, cfg.eval.mode, &ks, audit.as_ref())?;
        json!({"config": echo, "report": r})
    };
    emit(cfg.paths.report.as_deref(), &pretty(&output), stdout)
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    codes: Vec<&'a str>,
    scores: Vec<f64>,
}

fn predict(
    cfg: &RunConfig,
    input: &Path,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let ck = load_checkpoint(cfg)?;
    let docs = load_prediction_inputs(&required(input.to_path_buf())?)?;
    let stripped: Vec<_> = docs
        .iter()
        .map(|d| crate::corpus::Document {
            codes: Vec::new(),
            ..d.clone()
        })
        .collect();
    let enc = encode_for(&ck, &stripped)?;
    let pathway = score_documents(&ck.params, &enc)?;
    let mut text = String::new();
    for (d, s) in docs.iter().zip(&pathway) {
        let scores = final_scores(s, InferenceMode::Deci);
        let codes = scores
            .iter()
            .enumerate()
            .filter(|&(_, &v)| v > THRESHOLD)
            .map(|(l, _)| ck.labels.name(l))
            .collect();
        let p = Prediction {
            id: &d.id,
            codes,
            scores,
        };
        text.push_str(&serde_json::to_string(&p).expect("prediction serializes"));
        text.push('\n');
    }
    emit(out, &text, stdout)
}
