//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! MNIST and Fashion-MNIST IDX files are read from `$UQ_DATA_DIR/{mnist,fashion}`
//! (default: `data/` at the workspace root). Criteria that need them report
//! FAIL when they are missing. The process exits non-zero on a FAIL only when
//! `UQ_ACCEPTANCE_STRICT=1`, so `cargo test` reports the suite's findings
//! without hiding them behind a test-runner failure; every line is printed
//! either way.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use uqkit::data::{load_idx, LabeledDataset};
use uqkit::ensemble::{self, StudyAxis, StudyBase};
use uqkit::eval::{self, Target};
use uqkit::nn::loss::one_hot;
use uqkit::nn::{self, Head, LayerSpec, LossKind, Network, NetworkSpec, OptimizerConfig, TrainConfig};
use uqkit::sae::{self, SupervisedAeSpec};
use uqkit::scoring::{self, ScoreParams, Scorer, SoftplusVector, RATIO_EPSILON};
use uqkit::{Rng, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn fmt_list(v: &[f64], digits: usize) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", parts.join(", "))
}

// ---------------------------------------------------------------- data

fn data_dir() -> PathBuf {
    std::env::var_os("UQ_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

struct Idx {
    images: PathBuf,
    labels: PathBuf,
}

fn idx(set: &str, split: &str) -> Idx {
    let d = data_dir().join(set);
    Idx {
        images: d.join(format!("{split}-images-idx3-ubyte")),
        labels: d.join(format!("{split}-labels-idx1-ubyte")),
    }
}

struct Corpus {
    mnist_train: LabeledDataset,
    mnist_test: LabeledDataset,
    fashion_train: LabeledDataset,
    fashion_test: LabeledDataset,
}

fn corpus() -> Result<&'static Corpus, String> {
    static CORPUS: OnceLock<Result<Corpus, String>> = OnceLock::new();
    CORPUS
        .get_or_init(|| {
            let load = |set: &str, split: &str| {
                let f = idx(set, split);
                load_idx(&f.images, &f.labels).map_err(|e| format!("{set}/{split} not usable under {}: {e}", data_dir().display()))
            };
            Ok(Corpus {
                mnist_train: load("mnist", "train")?,
                mnist_test: load("mnist", "t10k")?,
                fashion_train: load("fashion", "train")?,
                fashion_test: load("fashion", "t10k")?,
            })
        })
        .as_ref()
        .map_err(|e| e.clone())
}

/// The desk-scale MNIST protocol: 10k training rows, the next 2k for
/// threshold calibration, the first 2k test rows for reporting.
const TRAIN_ROWS: usize = 10_000;
const VAL_ROWS: usize = 2_000;
const TEST_ROWS: usize = 2_000;
const CNN_EPOCHS: usize = 5;
const SEEDS: [u64; 3] = [0, 1, 2];

fn cnn_input(ds: &LabeledDataset) -> LabeledDataset {
    ds.clone().with_sample_shape(&[1, 28, 28]).unwrap()
}

fn cnn_config(seed: u64) -> TrainConfig {
    TrainConfig::new(OptimizerConfig::adam(0.002), CNN_EPOCHS, 32, seed)
}

struct Splits {
    train: LabeledDataset,
    val: LabeledDataset,
    test: LabeledDataset,
}

fn mnist_splits() -> Result<&'static Splits, String> {
    static SPLITS: OnceLock<Result<Splits, String>> = OnceLock::new();
    SPLITS
        .get_or_init(|| {
            let c = corpus()?;
            Ok(Splits {
                train: cnn_input(&c.mnist_train.take(TRAIN_ROWS).unwrap()),
                val: cnn_input(&c.mnist_train.range(TRAIN_ROWS, TRAIN_ROWS + VAL_ROWS).unwrap()),
                test: cnn_input(&c.mnist_test.take(TEST_ROWS).unwrap()),
            })
        })
        .as_ref()
        .map_err(|e| e.clone())
}

/// Reference CNN per (head, seed), trained once and shared across criteria.
fn reference_net(head: Head, seed: u64) -> Result<(Network, f64), String> {
    static CACHE: OnceLock<std::sync::Mutex<BTreeMap<(u8, u64), (Network, f64)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (head as u8, seed);
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let s = mnist_splits()?;
    let t = Instant::now();
    let net = Network::from_spec(&NetworkSpec::reference_cnn(10, head, seed)).map_err(|e| e.to_string())?;
    let net = nn::train(&net, &s.train, &cnn_config(seed)).map_err(|e| e.to_string())?;
    let entry = (net, t.elapsed().as_secs_f64());
    cache.lock().unwrap().insert(key, entry.clone());
    Ok(entry)
}

// ---------------------------------------------------------------- 1

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_FLOOR: f64 = 1e-6;

fn random_small_spec(i: usize, rng: &mut Rng) -> NetworkSpec {
    let heads = [Head::Softmax, Head::Softplus];
    let losses = [LossKind::CategoricalCrossEntropy, LossKind::Mse, LossKind::HingeMulticlass];
    let width = 2 + rng.below(3);
    let classes = 3;
    let (input_shape, layers) = match i % 3 {
        0 => {
            let mut layers = vec![LayerSpec::Dense { units: width }, LayerSpec::Relu];
            if rng.below(2) == 1 {
                layers.extend([LayerSpec::Dense { units: 2 }, LayerSpec::Relu]);
            }
            layers.push(LayerSpec::Dense { units: classes });
            (vec![3], layers)
        }
        1 => (
            vec![1, 4, 4],
            vec![
                LayerSpec::Conv2d { filters: 1 + rng.below(2) },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: classes },
            ],
        ),
        _ => (
            vec![2, 2],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: width },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.1 + 0.4 * rng.uniform() },
                LayerSpec::Dense { units: classes },
            ],
        ),
    };
    NetworkSpec {
        input_shape,
        layers,
        head: heads[i % 2],
        loss: losses[i % 3],
        seed: rng.next_u64(),
    }
}

fn flat_param(net: &mut Network, mut k: usize) -> &mut f64 {
    for t in net.parameter_tensors_mut() {
        if k < t.len() {
            return &mut t.data_mut()[k];
        }
        k -= t.len();
    }
    unreachable!()
}

/// Worst relative error over every parameter of one network.
fn finite_difference_error(spec: &NetworkSpec, seed: u64) -> Result<(f64, usize), String> {
    let mut net = Network::from_spec(spec).map_err(|e| e.to_string())?;
    // zero biases put dead-relu rows exactly on max/hinge ties; test at a generic point
    let mut jitter = Rng::new(seed, 77);
    for t in net.parameter_tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += 0.1 * jitter.standard_normal());
    }
    let mut rng = Rng::new(seed, 78);
    let rows = 3;
    let mut shape = vec![rows];
    shape.extend_from_slice(&spec.input_shape);
    let n_in: usize = spec.input_shape.iter().product();
    let x = Tensor::new(shape, (0..rows * n_in).map(|_| rng.standard_normal()).collect()).unwrap();
    let y = match spec.loss {
        LossKind::Mse => Tensor::new(vec![rows, 3], (0..rows * 3).map(|_| rng.uniform()).collect()).unwrap(),
        _ => one_hot(&(0..rows).map(|_| rng.below(3)).collect::<Vec<_>>(), 3).unwrap(),
    };
    // dropout masks are regenerated identically for every evaluation
    let loss = |n: &Network| n.loss_and_gradients(&x, &y, &mut Rng::new(seed, 79), 1.0).map(|r| r.0);
    let (_, grads) = net
        .loss_and_gradients(&x, &y, &mut Rng::new(seed, 79), 1.0)
        .map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = grads.tensors().flat_map(|t| t.data().to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let (mut plus, mut minus) = (net.clone(), net.clone());
        *flat_param(&mut plus, k) += FD_H;
        *flat_param(&mut minus, k) -= FD_H;
        let numeric = (loss(&plus).unwrap() - loss(&minus).unwrap()) / (2.0 * FD_H);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR));
    }
    Ok((worst, analytic.len()))
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(20_240_601, 0);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut kinds = std::collections::BTreeSet::new();
    for i in 0..20 {
        let spec = random_small_spec(i, &mut rng);
        kinds.extend(spec.layers.iter().map(|l| l.name()));
        let parametric = spec.layers.iter().filter(|l| l.has_parameters()).count();
        assert!(parametric <= 3);
        match finite_difference_error(&spec, i as u64) {
            Ok((err, n)) => {
                assert!(n <= 64, "{n} parameters");
                worst = worst.max(err);
                checked += n;
            }
            Err(e) => return outcome(false, format!("network {i}: {e}")),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= FD_TOL && kinds.len() == 6 && secs < 60.0,
        format!(
            "20 networks, {checked} parameters, {} layer kinds, worst relative error {worst:.2e} (limit {FD_TOL:.0e}), {secs:.1}s",
            kinds.len()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn ratio_oracle(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let tail: f64 = s[2..].iter().sum();
    tail / (s[0] - s[1]).max(RATIO_EPSILON)
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut rng = Rng::new(7, 0);
    let score = |v: &[f64]| scoring::softplus_ratio_uncertainty(&SoftplusVector::new(v.to_vec()).unwrap()).unwrap();
    let (mut oracle_err, mut scale_err, mut perm_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut scale_checked = 0;
    for _ in 0..1000 {
        let n = 3 + rng.below(18);
        let v: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.uniform() * 6.0 - 3.0)).collect();
        let a = score(&v);
        let b = ratio_oracle(&v);
        oracle_err = oracle_err.max((a - b).abs() / b.abs());

        let lambda = 10f64.powf(rng.uniform() * 4.0 - 2.0);
        let scaled: Vec<f64> = v.iter().map(|x| x * lambda).collect();
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let gap = sorted[0] - sorted[1];
        if gap > RATIO_EPSILON && gap * lambda > RATIO_EPSILON {
            scale_err = scale_err.max((score(&scaled) - a).abs() / a.abs());
            scale_checked += 1;
        }
        let mut shuffled = v.clone();
        rng.shuffle(&mut shuffled);
        perm_err = perm_err.max((score(&shuffled) - a).abs() / a.abs());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        oracle_err <= 1e-12 && scale_err <= 1e-9 && perm_err <= 1e-12 && secs < 10.0,
        format!(
            "1000 vectors: oracle {oracle_err:.1e} (<=1e-12), scale {scale_err:.1e} over {scale_checked} (<=1e-9), permutation {perm_err:.1e} (<=1e-12), {secs:.2}s"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let run = || -> Result<Outcome, String> {
        let (net, secs) = reference_net(Head::Softmax, 0)?;
        let acc = nn::accuracy(&net, &mnist_splits()?.test).map_err(|e| e.to_string())?;
        Ok(outcome(
            acc >= 0.95 && secs < 600.0,
            format!(
                "reference CNN, {TRAIN_ROWS} train rows, {CNN_EPOCHS} epochs: test accuracy {:.2}% on {TEST_ROWS} (>= 95%), trained in {secs:.0}s single-threaded",
                100.0 * acc
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e))
}

// ---------------------------------------------------------------- 4

struct SeedResult {
    ratio_auroc: f64,
    tpr: [f64; 3],
    fpr: [f64; 3],
}

/// Max-softmax and MC-Dropout on the softmax network; the softplus ratio on
/// the softplus network. Thresholds at validation FPR <= 5%, rates on test.
fn misclassification_run(seed: u64) -> Result<SeedResult, String> {
    let s = mnist_splits()?;
    let (baseline, _) = reference_net(Head::Softmax, seed)?;
    let (proposed, _) = reference_net(Head::Softplus, seed)?;
    let params = ScoreParams { mc_passes: scoring::DEFAULT_MC_PASSES, seed };
    let mut tpr = [0.0; 3];
    let mut fpr = [0.0; 3];
    let mut ratio_auroc = 0.0;
    for (i, scorer) in Scorer::ALL.into_iter().enumerate() {
        let net = if scorer == Scorer::SoftplusRatio { &proposed } else { &baseline };
        let score = |d: &LabeledDataset| scoring::score_dataset(net, &d.images, &d.labels, scorer, params);
        let val = eval::misclassification_labels(&score(&s.val).map_err(|e| e.to_string())?);
        let test = eval::misclassification_labels(&score(&s.test).map_err(|e| e.to_string())?);
        let tau = eval::calibrate(&val, Target::MaxFpr(0.05)).map_err(|e| e.to_string())?;
        let p = eval::evaluate(&test, tau).map_err(|e| e.to_string())?;
        tpr[i] = p.tpr;
        fpr[i] = p.fpr;
        if scorer == Scorer::SoftplusRatio {
            ratio_auroc = eval::auroc(&test).map_err(|e| e.to_string())?;
        }
    }
    Ok(SeedResult { ratio_auroc, tpr, fpr })
}

fn criterion_4() -> Outcome {
    let run = || -> Result<Outcome, String> {
        let t = Instant::now();
        let results = SEEDS.iter().map(|&s| misclassification_run(s)).collect::<Result<Vec<_>, _>>()?;
        let col = |f: &dyn Fn(&SeedResult) -> f64| results.iter().map(f).collect::<Vec<f64>>();
        let auroc = col(&|r| r.ratio_auroc);
        let ratio_tpr = col(&|r| r.tpr[2]);
        let softmax_tpr = col(&|r| r.tpr[0]);
        let mc_tpr = col(&|r| r.tpr[1]);
        let ratio_fpr = col(&|r| r.fpr[2]);
        let softmax_fpr = col(&|r| r.fpr[0]);
        let a = median(&auroc) >= 0.85;
        let b = median(&ratio_tpr) >= median(&softmax_tpr) - 0.02;
        let secs = t.elapsed().as_secs_f64();
        Ok(outcome(
            a && b && secs < 900.0,
            format!(
                "(a) {} softplus-ratio AUROC median {:.3} {} (>= 0.85); (b) {} at validation FPR<=5%: ratio TPR median {:.3} {} vs max-softmax {:.3} {} (needs >= max-softmax - 0.02), MC-Dropout TPR {}, test FPR ratio {} / max-softmax {}; {secs:.0}s",
                if a { "PASS" } else { "FAIL" },
                median(&auroc),
                fmt_list(&auroc, 3),
                if b { "PASS" } else { "FAIL" },
                median(&ratio_tpr),
                fmt_list(&ratio_tpr, 3),
                median(&softmax_tpr),
                fmt_list(&softmax_tpr, 3),
                fmt_list(&mc_tpr, 3),
                fmt_list(&ratio_fpr, 3),
                fmt_list(&softmax_fpr, 3),
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let run = || -> Result<Outcome, String> {
        let t = Instant::now();
        let c = corpus()?;
        let train = c.mnist_train.take(TRAIN_ROWS).map_err(|e| e.to_string())?;
        let spec = SupervisedAeSpec::reference(&[28, 28], 10, 0);
        let cfg = TrainConfig::new(OptimizerConfig::adam(0.002), 10, 32, 0);
        let model = sae::train_sae(&spec, &train, &cfg).map_err(|e| e.to_string())?;
        let in_dist = model
            .reconstruction_error(&c.mnist_test.take(1000).unwrap().images)
            .map_err(|e| e.to_string())?;
        let ood = model
            .reconstruction_error(&c.fashion_test.take(1000).unwrap().images)
            .map_err(|e| e.to_string())?;
        let auroc = eval::auroc(&eval::ood_labels(&in_dist, &ood)).map_err(|e| e.to_string())?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ratio = mean(&ood) / mean(&in_dist);
        let secs = t.elapsed().as_secs_f64();
        Ok(outcome(
            auroc >= 0.90 && ratio >= 2.0 && secs < 900.0,
            format!(
                "autoencoder on {TRAIN_ROWS} MNIST rows, 10 epochs: reconstruction AUROC {auroc:.3} (>= 0.90), mean error OOD/in {ratio:.2}x (>= 2x), MNIST vs Fashion-MNIST 1k each; {secs:.0}s"
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e))
}

// ---------------------------------------------------------------- 6 & 7

const STUDY_SEEDS: [u64; 3] = [0, 100, 200];

/// Aggregate spread per (axis value, seed) for the three study axes.
fn study_results() -> Result<&'static BTreeMap<String, Vec<f64>>, String> {
    static RESULTS: OnceLock<Result<BTreeMap<String, Vec<f64>>, String>> = OnceLock::new();
    RESULTS
        .get_or_init(|| {
            let c = corpus()?;
            let train = c.mnist_train.take(TRAIN_ROWS).map_err(|e| e.to_string())?;
            let test = c.mnist_test.take(TEST_ROWS).map_err(|e| e.to_string())?;
            let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for seed in STUDY_SEEDS {
                let base = StudyBase {
                    spec: NetworkSpec::mlp(&[28, 28], 1, 16, 10, Head::Softmax, 0),
                    train: TrainConfig::new(OptimizerConfig::adam(0.001), 4, 32, 0),
                    k: 5,
                    base_seed: seed,
                };
                for (axis, values) in [
                    (StudyAxis::Epochs, &["1", "4", "8"][..]),
                    (StudyAxis::HiddenNeurons, &["4", "16", "64"][..]),
                    (StudyAxis::Loss, &["categorical_cross_entropy", "mse"][..]),
                ] {
                    let values: Vec<String> = values.iter().map(|s| s.to_string()).collect();
                    let reports = ensemble::run_study(axis, &values, &train, &test, &base, None).map_err(|e| e.to_string())?;
                    for r in reports {
                        out.entry(r.label).or_default().push(r.aggregate);
                    }
                }
            }
            Ok(out)
        })
        .as_ref()
        .map_err(|e| e.clone())
}

fn criterion_6() -> Outcome {
    let run = || -> Result<Outcome, String> {
        let t = Instant::now();
        let r = study_results()?;
        let m = |k: &str| median(&r[k]);
        let epochs = m("epochs=1") > m("epochs=4");
        let hidden = m("hidden_neurons=4") > m("hidden_neurons=16");
        // weaker shape checks reported alongside, not gating
        let tail_epochs = m("epochs=8") <= 1.10 * m("epochs=4");
        let tail_hidden = (m("hidden_neurons=64") - m("hidden_neurons=16")).abs() <= 0.25 * m("hidden_neurons=16");
        Ok(outcome(
            epochs && hidden,
            format!(
                "K=5 MLP ensembles, median of 3 seeds: spread epochs 1/4/8 = {:.5}/{:.5}/{:.5}, hidden 4/16/64 = {:.5}/{:.5}/{:.5}; 1>4 {}, 4>16 {}; (info: 8 within 10% of 4 {}, 64 within 25% of 16 {}); {:.0}s",
                m("epochs=1"),
                m("epochs=4"),
                m("epochs=8"),
                m("hidden_neurons=4"),
                m("hidden_neurons=16"),
                m("hidden_neurons=64"),
                epochs,
                hidden,
                tail_epochs,
                tail_hidden,
                t.elapsed().as_secs_f64()
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e))
}

fn criterion_7() -> Outcome {
    let run = || -> Result<Outcome, String> {
        let r = study_results()?;
        let cce = &r["loss=categorical_cross_entropy"];
        let mse = &r["loss=mse"];
        Ok(outcome(
            median(cce) <= median(mse),
            format!(
                "median spread categorical cross-entropy {:.5} {} <= mse {:.5} {}",
                median(cce),
                fmt_list(cce, 5),
                median(mse),
                fmt_list(mse, 5)
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let run = || -> Result<Outcome, String> {
        let t = Instant::now();
        let c = corpus()?;
        let s = mnist_splits()?;
        let pool = cnn_input(&c.fashion_train.take(1000).unwrap()).images;
        let spec = NetworkSpec::reference_cnn(11, Head::Softmax, 0);
        let bundle = ensemble::train_unknown_class_ensemble(&spec, &s.train, &pool, 5, &cnn_config(0), 0)
            .map_err(|e| e.to_string())?;
        let in_dist = ensemble::unknown_class_score(&bundle, &cnn_input(&c.mnist_test.take(1000).unwrap()).images)
            .map_err(|e| e.to_string())?;
        let ood = ensemble::unknown_class_score(&bundle, &cnn_input(&c.fashion_test.take(1000).unwrap()).images)
            .map_err(|e| e.to_string())?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let auroc = eval::auroc(&eval::ood_labels(&in_dist, &ood)).map_err(|e| e.to_string())?;
        Ok(outcome(
            mean(&ood) > mean(&in_dist) && auroc >= 0.85,
            format!(
                "K=5 reference CNNs, 5 disjoint Fashion-MNIST slices of 200: held-out OOD mean score {:.3} vs MNIST {:.3}, AUROC {auroc:.3} (>= 0.85); {:.0}s",
                mean(&ood),
                mean(&in_dist),
                t.elapsed().as_secs_f64()
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e))
}

// ---------------------------------------------------------------- 9

fn mann_whitney(s: &[(f64, bool)]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for &(p, _) in s.iter().filter(|x| x.1) {
        for &(n, _) in s.iter().filter(|x| !x.1) {
            pairs += 1.0;
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

fn criterion_9() -> Outcome {
    let mut rng = Rng::new(99, 0);
    let mut worst: f64 = 0.0;
    let mut extremes = true;
    for i in 0..100 {
        let n = 2 + rng.below(199);
        // half the sets on a coarse grid so ties are frequent
        let coarse = i % 2 == 0;
        let mut s: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let v = if coarse { rng.below(12) as f64 } else { rng.standard_normal() };
                (v, rng.below(2) == 1)
            })
            .collect();
        s[0].1 = true;
        s[1].1 = false;
        let report = eval::sweep(&s, "x", "y").unwrap();
        worst = worst.max((report.auroc - mann_whitney(&s)).abs());
        let pos = s.iter().filter(|x| x.1).count();
        let neg = n - pos;
        let lo = eval::evaluate(&s, f64::NEG_INFINITY).unwrap();
        let hi = eval::evaluate(&s, f64::INFINITY).unwrap();
        extremes &= (lo.tpr, lo.fpr, lo.tp, lo.fp, lo.tn, lo.fn_) == (1.0, 1.0, pos, neg, 0, 0);
        extremes &= (hi.tpr, hi.fpr, hi.tp, hi.fp, hi.tn, hi.fn_) == (0.0, 0.0, 0, 0, neg, pos);
        extremes &= report.points.first() == Some(&lo) && report.points.last() == Some(&hi);
    }
    outcome(
        worst <= 1e-9 && extremes,
        format!("100 score sets (<= 200 points): max |AUROC - Mann-Whitney| {worst:.1e} (<= 1e-9); threshold extremes exact: {extremes}"),
    )
}

// ---------------------------------------------------------------- 10

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Every subcommand on a small MNIST slice, all outputs under `root`.
fn cli_runs(root: &Path) -> Result<usize, String> {
    let mnist_train = idx("mnist", "train");
    let mnist_test = idx("mnist", "t10k");
    let fashion_train = idx("fashion", "train");
    let fashion_test = idx("fashion", "t10k");
    let config = serde_json::json!({
        "seed": 5,
        "data": {
            "train_images": mnist_train.images, "train_labels": mnist_train.labels,
            "test_images": mnist_test.images, "test_labels": mnist_test.labels,
            "ood_images": fashion_test.images, "ood_pool_images": fashion_train.images,
            "train_limit": 400, "val_limit": 200, "test_limit": 200, "ood_limit": 200, "ood_pool_limit": 200
        },
        "architecture": {"name": "reference_cnn"},
        "epochs": 1,
        "k": 2,
        "mc_passes": 10,
        "study": {"axis": "epochs", "values": [1, 2]}
    });
    let cfg = root.join("run.json");
    std::fs::write(&cfg, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    let out = |name: &str| root.join("out").join(name).to_str().unwrap().to_string();
    let c = cfg.to_str().unwrap().to_string();
    let runs: Vec<Vec<String>> = vec![
        vec!["train-ensemble".into(), "--out".into(), out("bundle")],
        vec!["train-ensemble".into(), "--out".into(), out("unknown"), "--unknown-class".into()],
        vec!["train-sae".into(), "--out".into(), out("sae")],
        vec!["eval-misclassified".into(), "--out".into(), out("mis"), "--model".into(), out("bundle")],
        vec![
            "eval-ood".into(),
            "--out".into(),
            out("ood"),
            "--sae-model".into(),
            out("sae"),
            "--bundle".into(),
            out("unknown"),
        ],
        vec!["study".into(), "--out".into(), out("study")],
        vec!["export-embeddings".into(), "--out".into(), out("emb"), "--model".into(), out("bundle")],
    ];
    for args in &runs {
        let r = Command::new(env!("CARGO_BIN_EXE_uqkit"))
            .args(args)
            .args(["--config", &c, "--threads", "1"])
            .output()
            .map_err(|e| e.to_string())?;
        if !r.status.success() {
            return Err(format!("{} failed: {}", args[0], String::from_utf8_lossy(&r.stderr).trim()));
        }
    }
    Ok(runs.len())
}

fn criterion_10() -> Outcome {
    let run = || -> Result<Outcome, String> {
        if !idx("fashion", "t10k").images.is_file() || !idx("mnist", "train").images.is_file() {
            return Err(format!("datasets not found under {}", data_dir().display()));
        }
        let t = Instant::now();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let commands = cli_runs(a.path())?;
        cli_runs(b.path())?;
        let fa = files_under(&a.path().join("out"));
        let fb = files_under(&b.path().join("out"));
        let differing: Vec<String> = fa
            .iter()
            .filter(|(k, v)| fb.get(*k) != Some(*v))
            .map(|(k, _)| k.display().to_string())
            .chain(fb.keys().filter(|k| !fa.contains_key(*k)).map(|k| k.display().to_string()))
            .collect();
        let csv = fa.keys().filter(|k| k.extension().is_some_and(|e| e == "csv")).count();
        let json = fa.keys().filter(|k| k.extension().is_some_and(|e| e == "json")).count();
        Ok(outcome(
            differing.is_empty(),
            format!(
                "{commands} CLI commands run twice with --threads 1: {} files ({csv} CSV, {json} JSON) compared, {} differ{}; {:.0}s",
                fa.len(),
                differing.len(),
                if differing.is_empty() { String::new() } else { format!(" {differing:?}") },
                t.elapsed().as_secs_f64()
            ),
        ))
    };
    run().unwrap_or_else(|e| outcome(false, e))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", criterion_1),
        ("softplus-ratio oracle suite", criterion_2),
        ("classifier quality gate", criterion_3),
        ("misclassification-detection trend", criterion_4),
        ("OOD-detection trend", criterion_5),
        ("model-uncertainty monotonicity", criterion_6),
        ("loss-function ordering", criterion_7),
        ("unknown-class ensemble", criterion_8),
        ("eval-harness oracle", criterion_9),
        ("determinism", criterion_10),
    ];
    // positional arguments select criteria by number; flags from the test runner are ignored
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();

    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        ran += 1;
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!("{} [{n:>2}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(n);
        }
    }
    println!("acceptance: {}/{ran} criteria passed{}", ran - failed.len(), if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") });
    if !failed.is_empty() && std::env::var("UQ_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
