//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{
    brute_auc, brute_f1, brute_p_at_k, column, deci, random_instance, small_fixture, with_small,
};
use deci::corpus::{demographic_tokens, encode_documents, load_jsonl, EncodedDoc, Gender};
use deci::evaluation::{
    decisions, f1_scores, final_scores, precision_at_k, roc_auc, score_documents, InferenceMode,
};
use deci::model::{forward_tokens, GateMode, ModelConfig, ModelParams};
use deci::numerics::{finite_difference_check, ParamVector};
use deci::training::{loss_and_gradient, total_loss, Checkpoint};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

/// Report, ablation table, checkpoint and epoch log of one run.
type Check = fn() -> Outcome;

type RunArtifacts = [Vec<u8>; 4];

fn random_doc(rng: &mut ChaCha8Rng, vocab: u32, n_labels: usize, id: usize) -> EncodedDoc {
    let age = rng.random_range(0..100);
    let gender = if rng.random_bool(0.5) {
        Gender::Female
    } else {
        Gender::Male
    };
    let demographic = demographic_tokens(age, gender).to_vec();
    let mut full = demographic.clone();
    let len = rng.random_range(1..10);
    full.extend((0..len).map(|_| rng.random_range(8..vocab)));
    EncodedDoc {
        id: format!("d{id}"),
        age,
        gender,
        full,
        demographic,
        target: (0..n_labels)
            .map(|_| f64::from(rng.random_bool(0.4)))
            .collect(),
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for gate_mode in [GateMode::PerLabel, GateMode::PerDocument] {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let config = ModelConfig {
                vocab_size: 20,
                embed_dim: 8,
                hidden_dim: 8,
                n_labels: 5,
                n_experts: 2,
                gate_mode,
            };
            let params = ModelParams::random(config, &mut rng, 0.5).map_err(|e| e.to_string())?;
            let batch: Vec<EncodedDoc> = (0..3).map(|i| random_doc(&mut rng, 20, 5, i)).collect();
            let (_, grad) =
                loss_and_gradient(&batch, &params, 0.5, 0.5, false).map_err(|e| e.to_string())?;
            let loss = |p: &ModelParams| total_loss(&batch, p, 0.5, 0.5).unwrap();
            let report = finite_difference_check(loss, &grad, &params, 1e-5, 1e-3)
                .map_err(|e| e.to_string())?;
            if report.checked != params.num_params() {
                return Err(format!(
                    "checked {} of {} entries",
                    report.checked,
                    params.num_params()
                ));
            }
            checked += report.checked;
            if report.max_relative_error >= worst.0 {
                worst = (
                    report.max_relative_error,
                    format!("{gate_mode:?} seed {seed} {}", report.worst_parameter),
                );
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{checked} entries over 6 models, max relative error {:.2e} at {}, {secs:.1}s",
        worst.0, worst.1
    );
    if worst.0 <= 1e-3 && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn structural_identities() -> Outcome {
    const DRAWS: usize = 150;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for draw in 0..DRAWS {
        let n_experts = rng.random_range(1..=5);
        let config = ModelConfig {
            vocab_size: rng.random_range(10..40),
            embed_dim: rng.random_range(2..10),
            hidden_dim: rng.random_range(2..10),
            n_labels: rng.random_range(1..8),
            n_experts,
            gate_mode: if rng.random_bool(0.5) {
                GateMode::PerLabel
            } else {
                GateMode::PerDocument
            },
        };
        let scale = rng.random_range(0.2..2.0);
        let params = ModelParams::random(config, &mut rng, scale).unwrap();
        let doc = random_doc(&mut rng, config.vocab_size as u32, config.n_labels, draw);
        let run = |p: &ModelParams| forward_tokens(p, &doc.full, &doc.demographic).unwrap().0;
        let fail = |what: &str| Err(format!("draw {draw}: {what}"));

        let s = run(&params);
        for (&zf, &zk) in s.z_f.iter().zip(&s.z_k) {
            if zf.signum() != zk.signum() || (zf == 0.0) != (zk == 0.0) {
                return fail(&format!("sign(z_f) {zf} differs from sign(z_k) {zk}"));
            }
            if !(zf > -1.0 && zf < 1.0) {
                return fail(&format!("z_f = {zf} outside (-1, 1)"));
            }
        }
        let deci = decisions(&final_scores(&s, InferenceMode::Deci));
        for mode in [
            InferenceMode::WoZd,
            InferenceMode::WoZe,
            InferenceMode::KnowledgeOnly,
        ] {
            if decisions(&final_scores(&s, mode)) != deci {
                return fail(&format!("{mode} decisions differ from deci"));
            }
        }

        let mut flat_gate = params.clone();
        flat_gate.gate_w.data_mut().fill(0.0);
        flat_gate.gate_bias.fill(0.0);
        let s0 = run(&flat_gate);
        if bits(&s0.z_k) != bits(&s0.z_e) {
            return fail("zero gate logits but z_k != z_e");
        }

        let single = ModelConfig {
            n_experts: 1,
            ..config
        };
        let p1 = ModelParams::random(single, &mut rng, scale).unwrap();
        let s1 = run(&p1);
        if bits(&s1.z_k) != bits(&s1.z_e) {
            return fail("one expert but z_k != z_e");
        }

        let mut perm: Vec<usize> = (0..n_experts).collect();
        perm.shuffle(&mut rng);
        let mut permuted = params.clone();
        permuted.experts = perm.iter().map(|&i| params.experts[i].clone()).collect();
        if bits(&run(&permuted).z_e) != bits(&s.z_e) {
            return fail(&format!("expert permutation {perm:?} changed z_e"));
        }
    }
    Ok(format!(
        "{DRAWS} random parameter draws, all five identities exact"
    ))
}

fn metric_oracles() -> Outcome {
    const INSTANCES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut auc_checks = 0;
    for i in 0..INSTANCES {
        let (scores, gold) = random_instance(&mut rng);
        let n_labels = gold[0].len();
        if scores.len() * n_labels > 200 {
            return Err(format!("instance {i} exceeds 200 cells"));
        }
        let mut note = |d: f64, what: &str| -> Result<(), String> {
            worst = worst.max(d);
            if d <= 1e-12 {
                Ok(())
            } else {
                Err(format!("instance {i}: {what} off by {d:e}"))
            }
        };
        for j in 0..n_labels {
            let (s, g) = (column(&scores, j), column(&gold, j));
            match (roc_auc(&s, &g), brute_auc(&s, &g)) {
                (Some(a), Some(b)) => {
                    auc_checks += 1;
                    note((a - b).abs(), "roc_auc")?;
                }
                (None, None) => {}
                (a, b) => return Err(format!("instance {i}: roc_auc {a:?} vs {b:?}")),
            }
        }
        let cut = rng.random_range(0.0..1.0);
        let pred: Vec<Vec<bool>> = scores
            .iter()
            .map(|r| r.iter().map(|&v| v > cut).collect())
            .collect();
        let f = f1_scores(&pred, &gold).map_err(|e| e.to_string())?;
        let (macro_f1, micro_f1, per) = brute_f1(&pred, &gold);
        note((f.macro_f1 - macro_f1).abs(), "macro f1")?;
        note((f.micro_f1 - micro_f1).abs(), "micro f1")?;
        for (a, b) in f.per_label.iter().zip(&per) {
            note((a - b).abs(), "per-label f1")?;
        }
        for k in 1..=n_labels {
            let p = precision_at_k(&scores, &gold, k).map_err(|e| e.to_string())?;
            note(
                (p - brute_p_at_k(&scores, &gold, k)).abs(),
                "precision_at_k",
            )?;
        }
    }
    Ok(format!(
        "{INSTANCES} instances ({auc_checks} AUC columns), max deviation {worst:.1e}"
    ))
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn run_json(args: &[&str]) -> Result<Value, String> {
    let out = deci(args);
    if !out.status.success() {
        return Err(format!(
            "{:?} exited {:?}: {}",
            args.first(),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn overfit() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let model = dir.path().join("model.deci");
    let sizes = [
        "--set",
        "synthetic.n_train=16",
        "--set",
        "synthetic.n_dev=0",
        "--set",
        "synthetic.n_test=0",
    ];
    let mut gen = vec!["gen-data", "--out", path_str(&data)];
    gen.extend(sizes);
    run_json(&gen)?;
    let mut train = vec![
        "train",
        "--data",
        path_str(&data),
        "--out",
        path_str(&model),
        "--epochs",
        "200",
    ];
    train.extend(sizes);
    let summary = run_json(&train)?;
    let f1 = summary["train_metrics"]["micro_f1"]
        .as_f64()
        .unwrap_or(f64::NAN);
    let loss_k = summary["train_loss"]["k"].as_f64().unwrap_or(f64::NAN);
    let total = summary["train_loss"]["total"].as_f64().unwrap_or(f64::NAN);
    let detail = format!(
        "train micro-F1 {f1}, knowledge-pathway loss {loss_k:.4} (joint objective {total:.4})"
    );
    if f1 == 1.0 && loss_k < 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct SeedResult {
    seed: u64,
    deci_gap: f64,
    naive_gap: f64,
    wo_zd_gap: f64,
    deci_f1: f64,
    naive_f1: f64,
    modes: Vec<String>,
}

fn debias_seed(root: &Path, seed: u64) -> Result<SeedResult, String> {
    let dir = root.join(format!("seed{seed}"));
    let data = dir.join("data");
    let model = dir.join("model.deci");
    let s = seed.to_string();
    let fixed = [
        "--set",
        "synthetic.n_labels=20",
        "--set",
        "synthetic.vocab_size=1000",
        "--set",
        "synthetic.n_train=2000",
        "--set",
        "synthetic.n_dev=500",
        "--set",
        "synthetic.n_test=500",
        "--set",
        "synthetic.p_conf_train=0.9",
        "--set",
        "synthetic.p_conf_test=0.5",
    ];
    let with = |head: &[&'static str], extra: Vec<&str>| -> Vec<String> {
        head.iter()
            .map(|s| s.to_string())
            .chain(extra.into_iter().map(str::to_owned))
            .chain(fixed.iter().map(|s| s.to_string()))
            .collect()
    };
    let call = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        run_json(&refs)
    };
    call(with(
        &["gen-data"],
        vec!["--seed", &s, "--out", path_str(&data)],
    ))?;
    call(with(
        &["train"],
        vec![
            "--seed",
            &s,
            "--data",
            path_str(&data),
            "--out",
            path_str(&model),
        ],
    ))?;
    let report = call(with(
        &["eval", "--ablate"],
        vec![
            "--seed",
            &s,
            "--checkpoint",
            path_str(&model),
            "--data",
            path_str(&data.join("test.jsonl")),
        ],
    ))?;
    let rows = report["ablation"].as_array().ok_or("no ablation table")?;
    let row = |mode: &str| rows.iter().find(|r| r["mode"] == mode);
    let num = |mode: &str, key: &str| -> Result<f64, String> {
        row(mode)
            .and_then(|r| r[key].as_f64())
            .ok_or_else(|| format!("seed {seed}: no {key} for {mode}"))
    };
    Ok(SeedResult {
        seed,
        deci_gap: num("deci", "fpr_gap")?,
        naive_gap: num("naive", "fpr_gap")?,
        wo_zd_gap: num("wo-zd", "fpr_gap")?,
        deci_f1: num("deci", "confounded_label_f1")?,
        naive_f1: num("naive", "confounded_label_f1")?,
        modes: rows
            .iter()
            .filter_map(|r| r["mode"].as_str().map(str::to_owned))
            .collect(),
    })
}

fn debias_experiment() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut results = Vec::new();
    for seed in 1..=5 {
        let r = debias_seed(dir.path(), seed)?;
        println!(
            "    seed {}: fpr gap deci {:.4} naive {:.4} wo-zd {:.4}; confounded-label F1 deci {:.4} naive {:.4}",
            r.seed, r.deci_gap, r.naive_gap, r.wo_zd_gap, r.deci_f1, r.naive_f1
        );
        results.push(r);
    }
    let secs = start.elapsed().as_secs_f64();
    let count = |f: &dyn Fn(&SeedResult) -> bool| results.iter().filter(|r| f(r)).count();
    let a = count(&|r| r.deci_gap <= r.naive_gap);
    let b = count(&|r| r.deci_f1 >= r.naive_f1);
    let c = count(&|r| r.wo_zd_gap > r.deci_gap);
    let naive_positive = count(&|r| r.naive_gap > 0.0);
    let all_modes = results.iter().all(|r| {
        InferenceMode::ALL
            .iter()
            .all(|m| r.modes.iter().any(|x| x == m.as_str()))
    });
    let ok_a = a >= 4;
    let ok_b = b >= 4;
    let ok_c = all_modes && c >= 3;
    let ok_time = secs < 600.0;
    let mark = |ok: bool| if ok { "ok" } else { "not met" };
    let detail = format!(
        "(a) deci gap <= naive gap in {a}/5 [{}]; (b) deci F1 >= naive F1 in {b}/5 [{}]; \
         (c) all modes {all_modes}, wo-zd gap > deci gap in {c}/5 [{}]; naive gap > 0 in {naive_positive}/5; \
         {secs:.0}s [{}]",
        mark(ok_a),
        mark(ok_b),
        mark(ok_c),
        mark(ok_time)
    );
    if ok_a && ok_b && ok_c && ok_time {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn predictions_text(ck: &Checkpoint, docs_path: &Path) -> Result<Vec<String>, String> {
    let mut docs = load_jsonl(docs_path, Some(&ck.labels)).map_err(|e| e.to_string())?;
    for d in &mut docs {
        d.codes.clear();
    }
    let enc =
        encode_documents(&docs, &ck.vocab, &ck.labels, ck.max_len).map_err(|e| e.to_string())?;
    let scores = score_documents(&ck.params, &enc).map_err(|e| e.to_string())?;
    Ok(scores
        .iter()
        .map(|s| serde_json::to_string(&final_scores(s, InferenceMode::Deci)).unwrap())
        .collect())
}

fn persistence() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    small_fixture(dir.path(), "5", "2");
    let model = dir.path().join("model.deci");
    let test = dir.path().join("data/test.jsonl");
    let bytes = fs::read(&model).map_err(|e| e.to_string())?;

    let loaded = Checkpoint::load(&model).map_err(|e| e.to_string())?;
    if loaded.to_bytes().map_err(|e| e.to_string())? != bytes {
        return Err("re-serialising a loaded checkpoint changed its bytes".into());
    }
    let mut resaved = loaded.clone();
    resaved.params.round_to_storage();
    let copy = dir.path().join("copy.deci");
    resaved.save(&copy).map_err(|e| e.to_string())?;
    let reloaded = Checkpoint::load(&copy).map_err(|e| e.to_string())?;
    let expected = predictions_text(&loaded, &test)?;
    if predictions_text(&reloaded, &test)? != expected {
        return Err("scores changed across save and load".into());
    }

    let out = deci(&["predict", "--checkpoint", path_str(&model), path_str(&test)]);
    if !out.status.success() {
        return Err(format!(
            "predict failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    let text = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let cli: Vec<&str> = text
        .lines()
        .map(|l| {
            let at = l.find("\"scores\":").map_or(0, |i| i + "\"scores\":".len());
            l[at..].trim_end_matches('}')
        })
        .collect();
    if cli.len() != expected.len() || cli.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err("predict scores differ from the in-process scores of the saved model".into());
    }

    let header = 4 + 4 + 5 * 4;
    let mut cases: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut magic = bytes.clone();
    magic[1] = b'X';
    cases.push(("bad magic", magic));
    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&2u32.to_le_bytes());
    cases.push(("future version", version));
    for cut in [
        0,
        3,
        header - 1,
        header + 7,
        bytes.len() / 2,
        bytes.len() - 1,
    ] {
        cases.push(("truncated", bytes[..cut].to_vec()));
    }
    let mut trailing = bytes.clone();
    trailing.push(0);
    cases.push(("trailing byte", trailing));
    let mut nan = bytes.clone();
    nan[header + 4..header + 8].copy_from_slice(&f32::NAN.to_le_bytes());
    cases.push(("NaN weight", nan));
    let mut meta = bytes.clone();
    let last = meta.len() - 1;
    meta[last] = b'#';
    cases.push(("broken metadata", meta));

    let bad = dir.path().join("bad.deci");
    let report = dir.path().join("report.json");
    let preds = dir.path().join("preds.jsonl");
    for (what, corrupt) in &cases {
        fs::write(&bad, corrupt).map_err(|e| e.to_string())?;
        if Checkpoint::load(&bad).is_ok() {
            return Err(format!("{what}: library accepted the file"));
        }
        let runs = [
            with_small(&[
                "eval",
                "--checkpoint",
                path_str(&bad),
                "--data",
                path_str(&test),
                "--out",
                path_str(&report),
            ]),
            vec![
                "predict",
                "--checkpoint",
                path_str(&bad),
                "--out",
                path_str(&preds),
                path_str(&test),
            ],
        ];
        for args in runs {
            let out = deci(&args);
            if out.status.code() != Some(2) {
                return Err(format!(
                    "{what}: {} exited {:?}",
                    args[0],
                    out.status.code()
                ));
            }
            if !out.stdout.is_empty() || report.exists() || preds.exists() {
                return Err(format!("{what}: {} left output behind", args[0]));
            }
        }
    }
    Ok(format!(
        "{} documents rescored bit-exactly after save/load and through predict; {} corruptions rejected with exit 2",
        expected.len(),
        cases.len()
    ))
}

fn end_to_end(dir: &Path, seed: &str) -> Result<RunArtifacts, String> {
    let data = dir.join("data");
    let model = dir.join("model.deci");
    let report = dir.join("report.json");
    run_json(&with_small(&[
        "gen-data",
        "--seed",
        seed,
        "--out",
        path_str(&data),
    ]))?;
    run_json(&with_small(&[
        "train",
        "--seed",
        seed,
        "--data",
        path_str(&data),
        "--out",
        path_str(&model),
        "--epochs",
        "3",
    ]))?;
    let ablation = deci(&with_small(&[
        "eval",
        "--seed",
        seed,
        "--checkpoint",
        path_str(&model),
        "--data",
        path_str(&data.join("test.jsonl")),
        "--ablate",
    ]));
    if !ablation.status.success() {
        return Err(String::from_utf8_lossy(&ablation.stderr).into_owned());
    }
    let out = deci(&with_small(&[
        "eval",
        "--seed",
        seed,
        "--checkpoint",
        path_str(&model),
        "--data",
        path_str(&data.join("test.jsonl")),
        "--out",
        path_str(&report),
    ]));
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let read = |p: &Path| fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok([
        read(&report)?,
        ablation.stdout,
        read(&model)?,
        read(&dir.join("model.deci.epochs.jsonl"))?,
    ])
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = end_to_end(&dir.path().join("a"), "13")?;
    let second = end_to_end(&dir.path().join("b"), "13")?;
    let names = ["report", "ablation table", "checkpoint", "epoch log"];
    for ((name, a), b) in names.iter().zip(&first).zip(&second) {
        if a != b {
            return Err(format!("{name} differs between identical runs"));
        }
    }
    let other = end_to_end(&dir.path().join("c"), "14")?;
    if other[0] == first[0] {
        return Err("a different seed produced the same report".into());
    }
    Ok(format!(
        "report ({} bytes), ablation table, checkpoint and epoch log byte-identical across runs",
        first[0].len()
    ))
}

fn main() {
    let criteria: [(&str, Check); 7] = [
        ("gradient suite", gradient_suite),
        ("structural identities", structural_identities),
        ("metric oracles", metric_oracles),
        ("overfit check", overfit),
        ("debias experiment", debias_experiment),
        ("persistence", persistence),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (status, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{status} criterion {} {name}: {detail}", i + 1);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
