//! Acceptance criteria, one test per criterion. Each test writes a single
//! `[acceptance] criterion NN ... PASS|FAIL` line to stderr (uncaptured, so it
//! also shows up in plain `cargo test` output).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use msa_autodiff::nn::{lstm_cell_step, outer_fusion, scaled_dot_attention, Linear, LstmCell};
use msa_autodiff::{grad_check, Bound, ParamSet, Tape, Tensor, Var};
use msa_core::analysis::{
    classification_metrics, compute_metrics, make_benchmark_report, pca_project, BenchmarkEntry, BenchmarkResults,
    MetricOptions, ReportFormat,
};
use msa_core::bundle::{read_bundle, write_bundle, FeatureBundle, InstanceType, Manifest, Modality, ModalityBlock, SampleMeta, Scenario, Split};
use msa_core::extract::{extract_sample, frame_count, sample_bundle, stft, write_wav, ExtractorConfig, LabelRow, WaveBuffer, Window};
use msa_core::models::{build_model, lmf_full_tensor_expand, load_checkpoint, multitask_wrap, Batch, Model, ModelConfig};
use msa_core::robustness::{perturb_bundle, PerturbationSpec};
use msa_core::synthetic::{synthetic_bundle, synthetic_bundle_with_latents, SyntheticSpec};
use msa_core::train::{
    get_config_regression, history_jsonl, predict_indices, train_run, write_run, RunResult, DEFAULT_SEEDS, HISTORY_FILE,
};
use msa_core::{Error, ErrorClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const ZOO: [&str; 7] = ["lf_dnn", "ef_lstm", "tfn", "lmf", "mfn", "mult", "misa"];

fn announce(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] {line}");
}

/// Runs one criterion body, printing its verdict line; failures re-panic.
fn criterion(id: u32, name: &str, body: impl FnOnce() -> String) {
    match panic::catch_unwind(AssertUnwindSafe(body)) {
        Ok(detail) => announce(&format!("criterion {id:02} {name}: PASS ({detail})")),
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            announce(&format!("criterion {id:02} {name}: FAIL ({msg})"));
            panic::resume_unwind(payload);
        }
    }
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msa-forge"))
        .args(args)
        .output()
        .expect("spawn msa-forge")
}

fn cli_ok(args: &[&str]) -> Value {
    let out = cli(args);
    assert!(
        out.status.success(),
        "msa-forge {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.2..1.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

/// Scalarizes an output with fixed random weights.
fn weighted(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> msa_autodiff::Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

type Scalar = Box<dyn Fn(&mut Tape<f64>, &Bound) -> msa_autodiff::Result<Var>>;

/// Every differentiable primitive on a 2-sample batch, with its parameters.
fn primitive_cases() -> Vec<(&'static str, ParamSet<f64>, Scalar)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases: Vec<(&'static str, ParamSet<f64>, Scalar)> = Vec::new();

    let mut unary = |name: &'static str, x: Tensor<f64>, f: fn(&mut Tape<f64>, Var) -> msa_autodiff::Result<Var>, rng: &mut ChaCha8Rng| {
        let mut p = ParamSet::new();
        let a = p.add("x", x).unwrap();
        let probe = {
            let mut tape = Tape::<f64>::no_grad();
            let bound = tape.bind(&p);
            let out = f(&mut tape, bound[a]).unwrap();
            tape.shape(out).to_vec()
        };
        let w = random_tensor(rng, &probe);
        let g: Scalar = Box::new(move |tape, bound| {
            let out = f(tape, bound[a])?;
            weighted(tape, out, &w)
        });
        cases.push((name, p, g));
    };
    unary("sigmoid", random_tensor(&mut rng, &[2, 3, 2]), |t, x| Ok(t.sigmoid(x)), &mut rng);
    unary("tanh", random_tensor(&mut rng, &[2, 3, 2]), |t, x| Ok(t.tanh(x)), &mut rng);
    unary("relu", away_from_zero(&mut rng, &[2, 3, 2]), |t, x| Ok(t.relu(x)), &mut rng);
    unary("softmax", random_tensor(&mut rng, &[2, 3, 2]), |t, x| t.softmax(x, 1), &mut rng);
    unary("scale", random_tensor(&mut rng, &[2, 3]), |t, x| Ok(t.scale(x, -1.7)), &mut rng);
    unary("transpose", random_tensor(&mut rng, &[2, 3, 4]), |t, x| t.transpose(x), &mut rng);
    unary("reshape", random_tensor(&mut rng, &[2, 3, 2]), |t, x| t.reshape(x, vec![2, 6]), &mut rng);
    unary("slice", random_tensor(&mut rng, &[2, 4, 2]), |t, x| t.slice(x, 1, 1, 2), &mut rng);
    unary("sum", random_tensor(&mut rng, &[2, 3]), |t, x| Ok(t.sum(x)), &mut rng);
    unary("mean", random_tensor(&mut rng, &[2, 3]), |t, x| Ok(t.mean(x)), &mut rng);
    unary("sum_axis", random_tensor(&mut rng, &[2, 3, 2]), |t, x| t.sum_axis(x, 1), &mut rng);
    unary("mean_axis", random_tensor(&mut rng, &[2, 3, 2]), |t, x| t.mean_axis(x, 2), &mut rng);
    unary("masked_mean", random_tensor(&mut rng, &[2, 3, 2]), |t, x| t.masked_mean(x, &[true, false, true, true, true, false]), &mut rng);
    unary("dropout(eval)", random_tensor(&mut rng, &[2, 3]), |t, x| t.dropout(x, 0.5, false, &mut ChaCha8Rng::seed_from_u64(0)), &mut rng);
    unary("augment+outer_fusion", random_tensor(&mut rng, &[2, 2]), |t, x| {
        let y = t.scale(x, 0.5);
        outer_fusion(t, &[x, y], true)
    }, &mut rng);

    let mut binary = |name: &'static str, a: Tensor<f64>, b: Tensor<f64>, f: fn(&mut Tape<f64>, Var, Var) -> msa_autodiff::Result<Var>, rng: &mut ChaCha8Rng| {
        let mut p = ParamSet::new();
        let ia = p.add("a", a).unwrap();
        let ib = p.add("b", b).unwrap();
        let probe = {
            let mut tape = Tape::<f64>::no_grad();
            let bound = tape.bind(&p);
            let out = f(&mut tape, bound[ia], bound[ib]).unwrap();
            tape.shape(out).to_vec()
        };
        let w = random_tensor(rng, &probe);
        let g: Scalar = Box::new(move |tape, bound| {
            let out = f(tape, bound[ia], bound[ib])?;
            weighted(tape, out, &w)
        });
        cases.push((name, p, g));
    };
    binary("add(broadcast)", random_tensor(&mut rng, &[2, 3]), random_tensor(&mut rng, &[3]), |t, a, b| t.add(a, b), &mut rng);
    binary("sub", random_tensor(&mut rng, &[2, 3]), random_tensor(&mut rng, &[2, 3]), |t, a, b| t.sub(a, b), &mut rng);
    binary("mul", random_tensor(&mut rng, &[2, 3]), random_tensor(&mut rng, &[2, 3]), |t, a, b| t.mul(a, b), &mut rng);
    binary("matmul", random_tensor(&mut rng, &[2, 3]), random_tensor(&mut rng, &[3, 4]), |t, a, b| t.matmul(a, b), &mut rng);
    binary("matmul(batched)", random_tensor(&mut rng, &[2, 2, 3]), random_tensor(&mut rng, &[2, 3, 2]), |t, a, b| t.matmul(a, b), &mut rng);
    binary("concat", random_tensor(&mut rng, &[2, 3]), random_tensor(&mut rng, &[2, 1]), |t, a, b| t.concat(&[a, b], 1), &mut rng);
    binary("outer", random_tensor(&mut rng, &[2, 3]), random_tensor(&mut rng, &[2, 2]), |t, a, b| t.outer(a, b), &mut rng);
    binary("attention", random_tensor(&mut rng, &[2, 3, 4]), random_tensor(&mut rng, &[2, 2, 4]), |t, q, k| {
        scaled_dot_attention(t, q, k, k, Some(&[true, true, false, true]))
    }, &mut rng);

    for (name, loss) in [("l1_loss", 0usize), ("mse_loss", 1)] {
        let target = random_tensor(&mut rng, &[2, 1]);
        let gap = away_from_zero(&mut rng, &[2, 1]);
        let pred = Tensor::new(vec![2, 1], target.data().iter().zip(gap.data()).map(|(x, y)| x + y).collect()).unwrap();
        let mut p = ParamSet::new();
        let ia = p.add("pred", pred).unwrap();
        let g: Scalar = Box::new(move |tape, bound| {
            let tg = tape.constant(target.clone());
            if loss == 0 { tape.l1_loss(bound[ia], tg) } else { tape.mse_loss(bound[ia], tg) }
        });
        cases.push((name, p, g));
    }

    let mut p = ParamSet::new();
    let lin = Linear::new(&mut p, "lin", 3, 2, &mut rng).unwrap();
    let x = random_tensor(&mut rng, &[2, 3]);
    let w = random_tensor(&mut rng, &[2, 2]);
    let g: Scalar = Box::new(move |tape, bound| {
        let xv = tape.constant(x.clone());
        let out = lin.forward(tape, bound, xv)?;
        weighted(tape, out, &w)
    });
    cases.push(("linear", p, g));

    let mut p = ParamSet::new();
    let cell = LstmCell::new(&mut p, "lstm", 3, 2, &mut rng).unwrap();
    let x = random_tensor(&mut rng, &[2, 3]);
    let h0 = random_tensor(&mut rng, &[2, 2]);
    let w = random_tensor(&mut rng, &[2, 2]);
    let g: Scalar = Box::new(move |tape, bound| {
        let xv = tape.constant(x.clone());
        let h = tape.constant(h0.clone());
        let c = tape.constant(h0.clone());
        let (h1, c1) = lstm_cell_step(tape, xv, h, c, &cell.weights(bound))?;
        let both = tape.add(h1, c1)?;
        weighted(tape, both, &w)
    });
    cases.push(("lstm_cell_step", p, g));
    cases
}

fn toy_model_config(name: &str, bundle: &FeatureBundle) -> ModelConfig {
    let mut c = ModelConfig::for_model(name).unwrap();
    c.hidden = [(Modality::Text, 3), (Modality::Audio, 2), (Modality::Vision, 2)].into();
    c.post_fusion_dim = 4;
    c.lmf_rank = 2;
    c.mfn_mem_dim = 4;
    c.mfn_attn_hidden = 3;
    c.ef_lstm_hidden = 3;
    c.attn_dim = 4;
    c.attn_heads = 2;
    c.misa_hidden = 3;
    c.dropout = 0.0;
    c.seed = 5;
    c.bind_inputs(bundle);
    c
}

#[test]
fn criterion_01_gradient_suite() {
    criterion(1, "gradient suite", || {
        let start = Instant::now();
        let cases = primitive_cases();
        let n_prims = cases.len();
        for (name, params, f) in cases {
            let report = grad_check(&params, f, EPS, TOL).unwrap();
            assert!(report.passed(), "primitive {name}: worst {:?}", report.worst());
        }

        let spec = SyntheticSpec {
            n_train: 2,
            n_valid: 0,
            n_test: 0,
            seq_len: 4,
            min_len: 1,
            feature_dims: [(Modality::Text, 3), (Modality::Audio, 2), (Modality::Vision, 3)].into(),
            noise_std: 0.3,
            seed: 11,
            ..SyntheticSpec::default()
        };
        let bundle = synthetic_bundle(&spec).unwrap();
        let batch: Batch<f64> = Batch::from_bundle(&bundle, &[0, 1]).unwrap();
        let mut models: Vec<Model<f64>> = ZOO
            .iter()
            .chain(&["mlf_dnn", "mtfn", "mlmf"])
            .map(|n| build_model(&toy_model_config(n, &bundle)).unwrap())
            .collect();
        models.push(multitask_wrap(build_model(&toy_model_config("misa", &bundle)).unwrap(), 0.7).unwrap());
        let mut worst = 0.0f64;
        for model in &models {
            // Labels just above the predictions keep every L1 residual on one
            // side of the kink.
            let mut b = batch.clone();
            let out = model.forward(&b).unwrap();
            b.labels = out.pred.iter().enumerate().map(|(i, p)| p + 0.1 + 0.05 * i as f64).collect();
            for (m, labels) in b.uni_labels.iter_mut() {
                if let Some(aux) = out.aux_preds.get(m) {
                    *labels = aux.iter().enumerate().map(|(i, p)| p + 0.1 + 0.05 * i as f64).collect();
                }
            }
            let report = grad_check(
                model.params(),
                |tape, bound| {
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    Ok(model.loss(tape, bound, &b, false, &mut rng).expect("loss"))
                },
                EPS,
                TOL,
            )
            .unwrap();
            assert!(report.passed(), "model {}: worst {:?}", model.name(), report.worst());
            worst = worst.max(report.worst().map_or(0.0, |w| w.max_rel_error));
        }
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(60), "suite took {elapsed:?}");
        format!(
            "{n_prims} primitives and {} models, worst model rel err {worst:.2e}, {:.2}s",
            models.len(),
            elapsed.as_secs_f64()
        )
    });
}

#[test]
fn criterion_02_lmf_tfn_equivalence() {
    criterion(2, "LMF/TFN equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mut worst32, mut worst64) = (0.0f64, 0.0f64);
        for case in 0..20 {
            let dims: Vec<usize> = (0..3).map(|_| rng.random_range(1..=3)).collect();
            let rank = rng.random_range(1..=3);
            let spec = SyntheticSpec {
                n_train: 4,
                n_valid: 0,
                n_test: 0,
                seq_len: 3,
                min_len: 1,
                feature_dims: [(Modality::Text, 2), (Modality::Audio, 3), (Modality::Vision, 2)].into(),
                seed: case,
                ..SyntheticSpec::default()
            };
            let bundle = synthetic_bundle(&spec).unwrap();
            let mut c = toy_model_config("lmf", &bundle);
            c.hidden = [(Modality::Audio, dims[0]), (Modality::Vision, dims[1]), (Modality::Text, dims[2])].into();
            c.lmf_rank = rank;
            c.post_fusion_dim = rng.random_range(1..=3);
            c.seed = 100 + case;
            let m64: Model<f64> = build_model(&c).unwrap();
            let m32: Model<f32> = m64.cast();
            let idx: Vec<usize> = (0..bundle.len()).collect();
            let e64 = lmf_full_tensor_expand(&m64).unwrap();
            let e32 = lmf_full_tensor_expand(&m32).unwrap();
            let o64 = m64.forward(&Batch::from_bundle(&bundle, &idx).unwrap()).unwrap();
            let o32 = m32.forward(&Batch::from_bundle(&bundle, &idx).unwrap()).unwrap();
            let out = c.post_fusion_dim;
            for b in 0..bundle.len() {
                let enc64: Vec<Vec<f64>> = e64.order.iter().map(|m| {
                    let h = o64.uni_reps[m].shape()[1];
                    o64.uni_reps[m].data()[b * h..(b + 1) * h].to_vec()
                }).collect();
                let enc32: Vec<Vec<f32>> = e32.order.iter().map(|m| {
                    let h = o32.uni_reps[m].shape()[1];
                    o32.uni_reps[m].data()[b * h..(b + 1) * h].to_vec()
                }).collect();
                let r64 = e64.contract(&enc64.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap();
                let r32 = e32.contract(&enc32.iter().map(Vec::as_slice).collect::<Vec<_>>()).unwrap();
                for o in 0..out {
                    worst64 = worst64.max((r64[o] - o64.fusion_rep.data()[b * out + o]).abs());
                    worst32 = worst32.max((r32[o] - o32.fusion_rep.data()[b * out + o]).abs() as f64);
                }
            }
        }
        assert!(worst64 < 1e-10, "f64 max deviation {worst64:e}");
        assert!(worst32 < 1e-5, "f32 max deviation {worst32:e}");
        format!("20 configs, max |diff| f64 {worst64:.1e}, f32 {worst32:.1e}")
    });
}

#[test]
fn criterion_03_outer_fusion_oracle() {
    criterion(3, "outer-fusion oracle", || {
        let mut tape = Tape::<f64>::new();
        let xs: Vec<Var> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| tape.constant(Tensor::new(vec![1, 1], vec![v]).unwrap()))
            .collect();
        let z = outer_fusion(&mut tape, &xs, true).unwrap();
        assert_eq!(tape.value(z).data(), &[1.0, 3.0, 2.0, 6.0, 1.0, 3.0, 2.0, 6.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let k = rng.random_range(2..=4);
            let dims: Vec<usize> = (0..k).map(|_| rng.random_range(1..=4)).collect();
            let mut tape = Tape::<f64>::new();
            let vs: Vec<Var> = dims.iter().map(|&d| tape.constant(random_tensor(&mut rng, &[2, d]))).collect();
            let z = outer_fusion(&mut tape, &vs, true).unwrap();
            let expected: usize = dims.iter().map(|d| d + 1).product();
            assert_eq!(tape.shape(z), &[2, expected], "dims {dims:?}");
        }
        "[1],[2],[3] -> [1,3,2,6,1,3,2,6]; size formula on 50 tuples".into()
    });
}

/// Brute-force metrics: confusion counts and plain loops.
fn metric_oracle(preds: &[f64], labels: &[f64]) -> [f64; 4] {
    let n = preds.len() as f64;
    let (mut tp, mut tn, mut fp, mut fneg) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p >= 0.0, l >= 0.0) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
        }
    }
    let f1_of = |tp: f64, fp: f64, fneg: f64| if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
    let support_pos = tp + fneg;
    let support_neg = tn + fp;
    let f1 = (support_pos * f1_of(tp, fp, fneg) + support_neg * f1_of(tn, fneg, fp)) / n;
    let mut mae = 0.0;
    for (p, l) in preds.iter().zip(labels) {
        mae += (p - l).abs();
    }
    mae /= n;
    let (mut mp, mut ml) = (0.0, 0.0);
    for (p, l) in preds.iter().zip(labels) {
        mp += p;
        ml += l;
    }
    mp /= n;
    ml /= n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, l) in preds.iter().zip(labels) {
        sxy += (p - mp) * (l - ml);
        sxx += (p - mp) * (p - mp);
        syy += (l - ml) * (l - ml);
    }
    [(tp + tn) / n, f1, mae, sxy / (sxx * syy).sqrt()]
}

#[test]
fn criterion_04_metric_oracle_and_table4_row() {
    criterion(4, "metric oracle and Table 4 row", || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..3.0)).collect();
        let preds: Vec<f64> = labels.iter().map(|l| 0.6 * l + rng.random_range(-1.5..1.5)).collect();
        let got = compute_metrics(&preds, &labels).unwrap();
        let want = metric_oracle(&preds, &labels);
        let have = [got.acc2, got.f1, got.mae, got.corr];
        for (k, (h, w)) in have.iter().zip(&want).enumerate() {
            assert!((h - w).abs() < 1e-9, "metric {k}: {h} vs oracle {w}");
        }

        let mut results: BenchmarkResults = indexmap::IndexMap::new();
        results.insert(
            "TFN".into(),
            [(
                "MOSI".to_string(),
                BenchmarkEntry { acc2: 0.7802, f1: 0.7809, mae: 0.971, corr: Some(0.652) },
            )]
            .into_iter()
            .collect(),
        );
        let md = make_benchmark_report(&results, ReportFormat::Markdown).unwrap();
        let row = "| TFN | 78.02 | 78.09 | 0.971 | 0.652 |";
        assert!(md.lines().any(|l| l == row), "{md}");
        format!("1000 pairs within 1e-9; rendered `{row}`")
    });
}

/// Trained runs of every zoo model on the default synthetic dataset,
/// with per-seed wall-clock training times.
struct ZooRuns {
    bundle: FeatureBundle,
    latents: Vec<BTreeMap<Modality, f64>>,
    runs: BTreeMap<&'static str, Vec<(RunResult, Duration)>>,
}

fn zoo_runs() -> &'static ZooRuns {
    static RUNS: OnceLock<ZooRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let (bundle, latents) = synthetic_bundle_with_latents(&SyntheticSpec::default()).unwrap();
        let mut runs = BTreeMap::new();
        for name in ZOO {
            let config = get_config_regression(name, &bundle.manifest.dataset_name).unwrap();
            let per_seed: Vec<(RunResult, Duration)> = msa_core::worker_pool().install(|| {
                config
                    .seeds
                    .par_iter()
                    .map(|&seed| {
                        let start = Instant::now();
                        let run = train_run(&config, &bundle, seed).unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
                        (run, start.elapsed())
                    })
                    .collect()
            });
            runs.insert(name, per_seed);
        }
        ZooRuns { bundle, latents, runs }
    })
}

#[test]
fn criterion_05_synthetic_learnability() {
    criterion(5, "synthetic learnability", || {
        let zoo = zoo_runs();
        let test = zoo.bundle.indices_of(Split::Test);
        assert_eq!(
            (zoo.bundle.indices_of(Split::Train).len(), zoo.bundle.indices_of(Split::Valid).len(), test.len()),
            (700, 150, 150)
        );
        for m in Modality::ALL {
            let b = zoo.bundle.block(m).unwrap();
            assert_eq!((b.max_len, b.feature_dim), (20, 8));
        }
        // A linear readout of the latents separates the classes exactly.
        let readout: Vec<f64> = test.iter().map(|&i| zoo.latents[i].values().sum()).collect();
        let labels: Vec<f64> = test.iter().map(|&i| zoo.bundle.samples()[i].label_m).collect();
        let oracle = classification_metrics(&readout, &labels, &MetricOptions::default()).unwrap();
        assert_eq!(oracle.acc2, 1.0);

        let mut summary = Vec::new();
        for name in ["lf_dnn", "tfn"] {
            let runs = &zoo.runs[name];
            assert_eq!(runs.len(), DEFAULT_SEEDS.len());
            let n = runs.len() as f64;
            let acc = runs.iter().map(|(r, _)| r.test.acc2).sum::<f64>() / n;
            let corr = runs.iter().map(|(r, _)| r.test.corr.expect("defined corr")).sum::<f64>() / n;
            let slowest = runs.iter().map(|(_, t)| *t).max().unwrap();
            assert!(acc >= 0.95, "{name}: mean Acc-2 {acc:.4}");
            assert!(corr >= 0.9, "{name}: mean corr {corr:.4}");
            assert!(slowest < Duration::from_secs(180), "{name}: slowest seed {slowest:?}");
            summary.push(format!("{name} Acc-2 {acc:.4} corr {corr:.4} slowest seed {:.1}s", slowest.as_secs_f64()));
        }
        summary.join("; ")
    });
}

fn acc2_on(model: &Model<f32>, bundle: &FeatureBundle, indices: &[usize]) -> f64 {
    let reps = predict_indices(model, bundle, indices, 64).unwrap();
    classification_metrics(&reps.preds, &reps.labels, &MetricOptions::default()).unwrap().acc2
}

#[test]
fn criterion_06_robustness_monotonicity() {
    criterion(6, "robustness monotonicity", || {
        let zoo = zoo_runs();
        let test = zoo.bundle.indices_of(Split::Test);
        let mut noisy = zoo.bundle.clone();
        for (k, m) in Modality::ALL.into_iter().enumerate() {
            noisy = perturb_bundle(&noisy, &PerturbationSpec::noise(m, 0.0, 40 + k as u64), Some(&test)).unwrap();
        }
        let dropped: Vec<(Modality, FeatureBundle)> = Modality::ALL
            .into_iter()
            .map(|m| (m, perturb_bundle(&zoo.bundle, &PerturbationSpec::missing(m), Some(&test)).unwrap()))
            .collect();
        let mut summary = Vec::new();
        for name in ZOO {
            let runs = &zoo.runs[name];
            let n = runs.len() as f64;
            let mean = |b: &FeatureBundle| runs.iter().map(|(r, _)| acc2_on(&r.model, b, &test)).sum::<f64>() / n;
            let clean = mean(&zoo.bundle);
            let noise = mean(&noisy);
            assert!(noise <= clean, "{name}: noise {noise:.4} > clean {clean:.4}");
            let mut worst_drop = f64::NEG_INFINITY;
            for (m, b) in &dropped {
                let acc = mean(b);
                assert!(acc <= clean, "{name}: dropping {m} gives {acc:.4} > clean {clean:.4}");
                worst_drop = worst_drop.max(acc);
            }
            summary.push(format!("{name} {clean:.3}/{noise:.3}/{worst_drop:.3}"));
        }

        // Table-5-style report through the CLI for the first seed of each model.
        let dir = tempfile::tempdir().unwrap();
        let bundle_dir = dir.path().join("synthetic.msab");
        write_bundle(&zoo.bundle, &bundle_dir).unwrap();
        for name in ZOO {
            let run_dir = dir.path().join("runs").join(name);
            write_run(&zoo.runs[name][0].0, &run_dir).unwrap();
            let eval_dir = dir.path().join("evals").join(name);
            cli_ok(&[
                "eval", "--checkpoint", path_str(&run_dir), "--bundle", path_str(&bundle_dir),
                "--snr-db", "0", "--modality", "audio", "--drop", "vision", "--out", path_str(&eval_dir),
            ]);
        }
        let out = cli(&["report", "--runs", path_str(&dir.path().join("evals")), "--style", "table5"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let table = String::from_utf8(out.stdout).unwrap();
        let header = table.lines().next().unwrap();
        for col in ["EF_LSTM", "LF_DNN", "LMF", "MFN", "MISA", "MulT", "TFN"] {
            assert!(header.contains(col), "{header}");
        }
        for row in ["Easy", "Common", "Difficult", "Noise", "Missing", "Avg", "Avg (type mean)"] {
            let line = table
                .lines()
                .find(|l| l.starts_with(&format!("| {row} |")))
                .unwrap_or_else(|| panic!("no {row} row in\n{table}"));
            assert!(!line.contains("n/a"), "{line}");
        }
        format!("clean/noise0dB/best-drop Acc-2: {}; Table 5 rows rendered", summary.join(", "))
    });
}

fn small_synthetic(seed: u64) -> FeatureBundle {
    let spec = SyntheticSpec {
        seq_len: 8,
        min_len: 4,
        feature_dims: Modality::ALL.iter().map(|&m| (m, 4)).collect(),
        seed,
        ..SyntheticSpec::small(60, 20, 20)
    };
    synthetic_bundle(&spec).unwrap()
}

#[test]
fn criterion_07_determinism() {
    criterion(7, "determinism", || {
        let dir = tempfile::tempdir().unwrap();
        let bundle = small_synthetic(21);
        let bundle_dir = dir.path().join("toy.msab");
        write_bundle(&bundle, &bundle_dir).unwrap();
        let train = |out: &str, seed: &str| {
            let out = dir.path().join(out);
            cli_ok(&[
                "train", "--model", "tfn", "--bundle", path_str(&bundle_dir), "--seeds", seed,
                "--set", "max_epochs=6", "--set", "model.post_fusion_dim=16", "--out", path_str(&out),
            ]);
            fs::read(out.join(format!("seed_{seed}")).join(HISTORY_FILE)).unwrap()
        };
        let a = train("a", "1111");
        let b = train("b", "1111");
        assert!(!a.is_empty());
        assert_eq!(a, b, "history.jsonl differs between identical invocations");
        assert_ne!(a, train("c", "1112"), "a different seed should change the history");

        // The CLI is a thin adapter over the library.
        let mut config = get_config_regression("tfn", &bundle.manifest.dataset_name).unwrap();
        config.apply_overrides(&["max_epochs=6", "model.post_fusion_dim=16"]).unwrap();
        let lib = history_jsonl(&train_run(&config, &bundle, 1111).unwrap().history).unwrap();
        assert_eq!(lib.as_bytes(), a.as_slice(), "CLI history differs from the library call");
        format!("{} identical bytes over two invocations, equal to the library run", a.len())
    });
}

#[test]
fn criterion_08_pca() {
    criterion(8, "PCA", || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let reps = Tensor::<f64>::from_fn(vec![80, 6], |_| rng.random_range(-1.0..1.0));
        let p = pca_project(&reps, 3).unwrap();
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = p.components[i].iter().zip(&p.components[j]).map(|(a, b)| a * b).sum();
                worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        assert!(worst < 1e-6, "orthonormality error {worst:e}");
        assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1]), "{:?}", p.explained_variance);

        let dir: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rank1 = Tensor::<f64>::from_fn(vec![40, 5], |idx| {
            let (i, j) = (idx / 5, idx % 5);
            (i as f64 * 0.37 - 7.0) * dir[j]
        });
        let r = pca_project(&rank1, 3).unwrap();
        assert!(r.explained_variance[1] < 1e-8 && r.explained_variance[2] < 1e-8, "{:?}", r.explained_variance);

        // 3-column projection export through the CLI.
        let tmp = tempfile::tempdir().unwrap();
        let bundle = small_synthetic(8);
        let bundle_dir = tmp.path().join("toy.msab");
        write_bundle(&bundle, &bundle_dir).unwrap();
        let run = tmp.path().join("run");
        cli_ok(&["train", "--model", "lf_dnn", "--bundle", path_str(&bundle_dir), "--seeds", "1111", "--set", "max_epochs=3", "--out", path_str(&run)]);
        let eval = tmp.path().join("eval");
        cli_ok(&["eval", "--checkpoint", path_str(&run.join("seed_1111")), "--bundle", path_str(&bundle_dir), "--out", path_str(&eval)]);
        let csv = fs::read_to_string(eval.join("projection.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("id,x,y,z,label,pred"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), bundle.indices_of(Split::Test).len());
        assert!(rows.iter().all(|r| r.split(',').count() == 6));
        format!("orthonormality error {worst:.1e}; rank-1 tail variances {:.1e}, {:.1e}; projection.csv with {} rows", r.explained_variance[1], r.explained_variance[2], rows.len())
    });
}

fn tone(len: usize, freq: f64, rng: &mut ChaCha8Rng) -> WaveBuffer {
    WaveBuffer {
        sample_rate: 16000,
        samples: (0..len)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin() + rng.random_range(-0.05..0.05))
            .collect(),
    }
}

/// Small raw dataset: WAV files, transcripts and an embedding table.
fn write_raw_dataset(dir: &Path) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let words = ["good", "great", "fine", "bad", "awful", "poor", "movie", "plot"];
    let mut table = String::from("<unk> 0 0 0 0\n");
    for (k, w) in words.iter().enumerate() {
        let v: Vec<String> = (0..4).map(|j| format!("{:.3}", ((k * 4 + j) as f64 * 0.7).sin())).collect();
        table.push_str(&format!("{w} {}\n", v.join(" ")));
    }
    fs::write(dir.join("emb.txt"), table).unwrap();
    let mut labels = String::from("id,split,label_m,text,audio_path\n");
    for i in 0..24 {
        let split = ["train", "train", "valid", "test"][i % 4];
        let positive = i % 3 != 0;
        let text = if positive { "good movie great plot" } else { "bad movie awful plot" };
        let wav = format!("s{i}.wav");
        write_wav(&dir.join(&wav), &tone(4000 + 160 * i, if positive { 440.0 } else { 220.0 }, &mut rng)).unwrap();
        labels.push_str(&format!("s{i},{split},{},{text},{wav}\n", if positive { 1.5 } else { -1.5 }));
    }
    fs::write(dir.join("labels.csv"), labels).unwrap();
    let config = dir.join("extract.json");
    fs::write(
        &config,
        r#"{"dataset_name": "toy", "extractors": [
            {"modality": "audio", "kind": "mfcc_stats", "params": {"n_fft": 512, "hop": 160}},
            {"modality": "text", "kind": "embedding", "params": {"table": "emb.txt"}}
        ]}"#,
    )
    .unwrap();
    config
}

#[test]
fn criterion_09_stft_mfcc() {
    criterion(9, "STFT/MFCC", || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n_fft = 1usize << rng.random_range(2..10);
            let hop = rng.random_range(1..=n_fft);
            let len = n_fft + rng.random_range(0..4000);
            let wave = WaveBuffer { sample_rate: 16000, samples: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let s = stft(&wave, n_fft, hop, Window::Hann).unwrap();
            assert_eq!(s.frames, 1 + (len - n_fft) / hop, "len {len} n_fft {n_fft} hop {hop}");
            assert_eq!(s.bins, n_fft / 2 + 1);
        }

        let n_fft = 512;
        let x: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = stft(&WaveBuffer { sample_rate: 16000, samples: x.clone() }, n_fft, 160, Window::Hann).unwrap();
        let win: Vec<f64> = (0..n_fft).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n_fft as f64).cos()).collect();
        let mut worst = 0.0f64;
        for f in 0..s.frames {
            let time: f64 = (0..n_fft).map(|i| (x[f * 160 + i] * win[i]).powi(2)).sum();
            let row = s.frame(f);
            let last = row.len() - 1;
            let spectral = row.iter().enumerate().map(|(k, m)| if k == 0 || k == last { m * m } else { 2.0 * m * m }).sum::<f64>() / n_fft as f64;
            worst = worst.max(((spectral - time) / time).abs());
        }
        assert!(worst < 1e-3, "Parseval relative error {worst:e}");

        // predict dumps an STFT of formula shape; pred matches an in-process forward.
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("raw");
        fs::create_dir_all(&data).unwrap();
        let config = write_raw_dataset(&data);
        let bundle_dir = tmp.path().join("toy.msab");
        cli_ok(&["extract", "--dataset-dir", path_str(&data), "--config", path_str(&config), "--out", path_str(&bundle_dir)]);
        let run = tmp.path().join("run");
        cli_ok(&["train", "--model", "lf_dnn", "--bundle", path_str(&bundle_dir), "--seeds", "1111", "--set", "max_epochs=3", "--out", path_str(&run)]);
        let sample = tmp.path().join("probe.wav");
        let probe_len = 7321;
        write_wav(&sample, &tone(probe_len, 330.0, &mut rng)).unwrap();
        let pred_dir = tmp.path().join("pred");
        let tokens = "great plot but awful movie";
        let out = cli_ok(&[
            "predict", "--checkpoint", path_str(&run.join("seed_1111")), "--sample", path_str(&sample),
            "--tokens", tokens, "--config", path_str(&config), "--out", path_str(&pred_dir),
        ]);
        let frames = frame_count(probe_len, 512, 160).unwrap();
        assert_eq!(frames, 1 + (probe_len - 512) / 160);
        assert_eq!(out["stft_shape"], serde_json::json!([frames, 257]));
        let stft_csv = fs::read_to_string(out["stft_path"].as_str().unwrap()).unwrap();
        assert_eq!(stft_csv.lines().count(), frames + 1);
        assert!(stft_csv.lines().all(|l| l.split(',').count() == 257));
        assert!(Path::new(out["fusion_rep_path"].as_str().unwrap()).is_file());

        let model = load_checkpoint(&run.join("seed_1111").join("checkpoint")).unwrap();
        let configs: Vec<ExtractorConfig> = serde_json::from_value(
            serde_json::from_str::<Value>(&fs::read_to_string(&config).unwrap()).unwrap()["extractors"].clone(),
        )
        .unwrap();
        let mut row = LabelRow::unlabelled("probe");
        row.text = Some(tokens.into());
        row.audio_path = Some(path_str(&sample).into());
        let feats = extract_sample(&configs, &data, &row).unwrap();
        let dims = model.config().inputs.iter().map(|(&m, d)| (m, d.feature_dim)).collect();
        let single = sample_bundle("probe", &feats, &dims).unwrap();
        let batch: Batch<f32> = Batch::from_bundle(&single, &[0]).unwrap();
        let direct = model.forward(&batch).unwrap().pred[0] as f64;
        let via_cli = out["pred"].as_f64().unwrap();
        assert_eq!(via_cli, direct, "CLI pred {via_cli} vs in-process {direct}");
        format!("200 frame-count triples exact; Parseval err {worst:.1e}; predict STFT {frames}x257, pred {via_cli:.5}")
    });
}

fn random_bundle(rng: &mut ChaCha8Rng, tag: usize) -> FeatureBundle {
    let n = rng.random_range(1..8);
    let mods: Vec<Modality> = Modality::ALL.into_iter().filter(|_| rng.random_bool(0.7)).collect();
    let mods = if mods.is_empty() { vec![Modality::ALL[tag % 3]] } else { mods };
    let samples: Vec<SampleMeta> = (0..n)
        .map(|i| {
            let mut s = SampleMeta::new(format!("b{tag}-{i}"), Split::ALL[rng.random_range(0..3)], rng.random_range(-3.0..=3.0));
            if rng.random_bool(0.5) {
                s.label_a = Some(rng.random_range(-3.0..=3.0));
            }
            if rng.random_bool(0.4) {
                s.instance_type = Some(InstanceType::ALL[rng.random_range(0..5)]);
                s.scenario = Some(Scenario::ALL[rng.random_range(0..3)]);
            }
            s
        })
        .collect();
    let mut blocks = BTreeMap::new();
    for m in mods {
        let t = rng.random_range(1..10);
        let d = rng.random_range(1..6);
        let lengths: Vec<usize> = (0..n).map(|_| rng.random_range(1..=t)).collect();
        let mut data = vec![0.0f32; n * t * d];
        for (i, &len) in lengths.iter().enumerate() {
            for v in &mut data[i * t * d..(i * t + len) * d] {
                *v = f32::from_bits(rng.random::<u32>() & 0x3fff_ffff | 0x3000_0000) * if rng.random() { 1.0 } else { -1.0 };
            }
        }
        blocks.insert(m, ModalityBlock::new(d, t, data, lengths).unwrap());
    }
    FeatureBundle::new(Manifest { dataset_name: format!("random-{tag}"), label_range: (-3.0, 3.0), samples }, blocks).unwrap()
}

#[test]
fn criterion_10_container_round_trip() {
    criterion(10, "container round-trip", || {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let tmp = tempfile::tempdir().unwrap();
        for k in 0..100 {
            let b = random_bundle(&mut rng, k);
            let path = tmp.path().join(format!("r{k}.msab"));
            write_bundle(&b, &path).unwrap();
            let back = read_bundle(&path).unwrap();
            assert_eq!(back, b);
            for (m, blk) in &b.blocks {
                let bits: Vec<u32> = blk.data.iter().map(|v| v.to_bits()).collect();
                let back_bits: Vec<u32> = back.blocks[m].data.iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits, back_bits, "bundle {k} {m}");
            }
        }

        let base = small_synthetic(3);
        let corrupt = tmp.path().join("corrupt.msab");
        write_bundle(&base, &corrupt).unwrap();
        let bin = corrupt.join("audio.bin");
        let mut raw = fs::read(&bin).unwrap();
        raw[0] ^= 0xFF;
        fs::write(&bin, &raw).unwrap();
        let err = read_bundle(&corrupt).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Validation, "{err}");
        assert!(err.to_string().contains("magic"), "{err}");

        let nan = tmp.path().join("nan.msab");
        write_bundle(&base, &nan).unwrap();
        let bin = nan.join("vision.bin");
        let mut raw = fs::read(&bin).unwrap();
        let offset = 20 + 4 * 3; // sample 0, frame 0, dim 3
        raw[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&bin, &raw).unwrap();
        let err = read_bundle(&nan).unwrap_err();
        assert!(matches!(err, Error::NonFinite { modality: Modality::Vision, frame: 0, dim: 3, .. }), "{err}");
        assert_eq!(err.class(), ErrorClass::Validation);

        for fixture in [&corrupt, &nan] {
            let out_dir = tmp.path().join("never");
            let codes = [
                cli(&["perturb", "--bundle", path_str(fixture), "--drop", "audio", "--out", path_str(&out_dir)]).status.code(),
                cli(&["train", "--model", "lf_dnn", "--bundle", path_str(fixture), "--seeds", "1111", "--out", path_str(&out_dir)]).status.code(),
            ];
            assert_eq!(codes, [Some(2), Some(2)], "{}", fixture.display());
        }
        "100 random bundles bit-exact; corrupted header and NaN rejected (validation, CLI exit 2)".into()
    });
}
