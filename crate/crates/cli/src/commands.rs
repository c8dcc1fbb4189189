use std::path::{Path, PathBuf};

use serde::Serialize;
use uqkit::data::{self, LabeledDataset, SplitFractions};
use uqkit::ensemble::{self, StudyAxis, StudyBase, UnknownClassMode, BUNDLE_MANIFEST};
use uqkit::eval::{self, DetectionReport, EmpiricalCdf, SummaryRow, Target};
use uqkit::fsutil;
use uqkit::nn::{self, io::MODEL_MANIFEST, Network};
use uqkit::sae::{self, OodScoreRow, Origin, SupervisedAe, SupervisedAeSpec};
use uqkit::scoring::{self, ScoreParams, Scorer};
use uqkit::{Rng, Tensor, UqError};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

const BLOB_STREAM: u64 = 0xB10B;
const SPLIT_STREAM: u64 = 0x5911;
/// How many input/reconstruction pairs `train-sae` dumps when test data is given.
const RECONSTRUCTION_DUMP: usize = 16;

pub fn method_name(scorer: Scorer) -> &'static str {
    match scorer {
        Scorer::MaxSoftmax => "Baseline (Softmax)",
        Scorer::McDropout => "MC-Dropout",
        Scorer::SoftplusRatio => "Proposed",
    }
}

struct Loaded {
    train: LabeledDataset,
    val: Option<LabeledDataset>,
    test: Option<LabeledDataset>,
}

fn missing(name: &str) -> CliError {
    CliError::Config(format!("{name} is required for this command"))
}

fn require_train(cfg: &RunConfig) -> CliResult<()> {
    if cfg.data.blobs.is_some() {
        return Ok(());
    }
    cfg.data.train_images.as_ref().ok_or_else(|| missing("train_images"))?;
    cfg.data.train_labels.as_ref().ok_or_else(|| missing("train_labels"))?;
    Ok(())
}

fn require_test(cfg: &RunConfig) -> CliResult<()> {
    if cfg.data.blobs.is_some() {
        return Ok(());
    }
    cfg.data.test_images.as_ref().ok_or_else(|| missing("test_images"))?;
    cfg.data.test_labels.as_ref().ok_or_else(|| missing("test_labels"))?;
    Ok(())
}

fn load_data(cfg: &RunConfig, seed: u64, want_val: bool, want_test: bool) -> CliResult<Loaded> {
    let d = &cfg.data;
    if let Some(b) = &d.blobs {
        let ds = data::make_blobs(&mut Rng::new(seed, BLOB_STREAM), b.n_classes, b.n_per_class, b.dim, b.spread, b.sigma)?;
        let [train, val, test] = b.fractions;
        let s = data::split(&ds, SplitFractions { train, val, test }, &mut Rng::new(seed, SPLIT_STREAM))?;
        return Ok(Loaded {
            train: s.train,
            val: want_val.then_some(s.val),
            test: want_test.then_some(s.test),
        });
    }
    let (ti, tl) = (d.train_images.as_ref().unwrap(), d.train_labels.as_ref().unwrap());
    let file = data::load_idx(ti, tl)?;
    let n = file.len();
    let train_end = d.train_limit.unwrap_or(n - n / 6).min(n);
    let train = file.range(0, train_end)?;
    let val = if want_val {
        let end = d.val_limit.map_or(n, |v| train_end + v).min(n);
        if end <= train_end {
            return Err(CliError::Config(format!(
                "no validation rows: train_limit {train_end} leaves nothing of the {n}-row train file"
            )));
        }
        Some(file.range(train_end, end)?)
    } else {
        None
    };
    let test = if want_test { Some(load_test(cfg)?) } else { None };
    Ok(Loaded { train, val, test })
}

fn load_test(cfg: &RunConfig) -> CliResult<LabeledDataset> {
    let d = &cfg.data;
    let t = data::load_idx(d.test_images.as_ref().unwrap(), d.test_labels.as_ref().unwrap())?;
    Ok(t.take(d.test_limit.unwrap_or(usize::MAX))?)
}

/// Reshapes samples to `shape` when only the layout differs (e.g. `[28, 28]`
/// to `[1, 28, 28]`).
fn conform(ds: &LabeledDataset, shape: &[usize]) -> CliResult<LabeledDataset> {
    if ds.sample_shape() == shape {
        return Ok(ds.clone());
    }
    check_size(ds.sample_shape(), shape)?;
    Ok(ds.clone().with_sample_shape(shape)?)
}

fn conform_images(images: &Tensor, shape: &[usize]) -> CliResult<Tensor> {
    check_size(&images.shape()[1..], shape)?;
    let mut full = vec![images.rows()];
    full.extend_from_slice(shape);
    Ok(images.clone().reshape(full)?)
}

fn check_size(have: &[usize], want: &[usize]) -> CliResult<()> {
    if have.iter().product::<usize>() != want.iter().product::<usize>() {
        return Err(UqError::Dimension(format!("samples of shape {have:?} cannot feed a model expecting {want:?}")).into());
    }
    Ok(())
}

fn ood_files(path: &Path) -> CliResult<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    let entries = std::fs::read_dir(path).map_err(|e| CliError::Config(format!("cannot list {}: {e}", path.display())))?;
    for entry in entries {
        let p = entry.map_err(|e| CliError::Config(e.to_string()))?.path();
        if p.is_file() {
            files.push(p);
        }
    }
    if files.is_empty() {
        return Err(CliError::Config(format!("OOD directory {} contains no image files", path.display())));
    }
    files.sort();
    Ok(files)
}

fn load_images(files: &[PathBuf], limit: Option<usize>) -> CliResult<Tensor> {
    let parts = files
        .iter()
        .map(|f| data::load_idx_images(f))
        .collect::<uqkit::Result<Vec<_>>>()?;
    let shape = parts[0].shape()[1..].to_vec();
    let parts = parts
        .iter()
        .map(|t| conform_images(t, &shape))
        .collect::<CliResult<Vec<_>>>()?;
    let refs: Vec<&Tensor> = parts.iter().collect();
    let all = Tensor::concat_rows(&refs)?;
    let n = limit.unwrap_or(usize::MAX).min(all.rows());
    if n == 0 {
        return Err(UqError::EmptyInput("no OOD images selected".into()).into());
    }
    Ok(all.select_rows(&(0..n).collect::<Vec<_>>())?)
}

/// A model directory, or a bundle directory from which member `member` is taken.
pub fn load_model(path: &Path, member: usize) -> CliResult<Network> {
    if path.join(MODEL_MANIFEST).is_file() {
        return Ok(nn::load_network(path)?);
    }
    if path.join(BUNDLE_MANIFEST).is_file() {
        let dir = path.join(format!("member{member}"));
        if !dir.is_dir() {
            return Err(UqError::State(format!("bundle {} has no member {member}", path.display())).into());
        }
        return Ok(nn::load_network(&dir)?);
    }
    Err(UqError::State(format!("no trained model at {}", path.display())).into())
}

#[derive(Serialize)]
struct MemberLoss {
    member: usize,
    epoch: usize,
    loss: f64,
}

pub fn train_ensemble(cfg: &RunConfig) -> CliResult<String> {
    let (seed, out) = (cfg.seed()?, cfg.out()?);
    require_train(cfg)?;
    if cfg.k < 2 {
        return Err(CliError::Config(format!("k must be at least 2, got {}", cfg.k)));
    }
    if cfg.unknown_class && cfg.data.ood_pool_images.is_none() {
        return Err(missing("ood_pool_images (unknown_class is on)"));
    }
    let data = load_data(cfg, seed, false, false)?;
    let n = data.train.n_classes;
    let outputs = if cfg.unknown_class { n + 1 } else { n };
    let spec = cfg.network_spec(data.train.sample_shape(), outputs, seed)?;
    let train = conform(&data.train, &spec.input_shape)?;
    let tc = cfg.train_config(cfg.epochs, seed);
    let bundle = if cfg.unknown_class {
        let files = ood_files(cfg.data.ood_pool_images.as_ref().unwrap())?;
        let pool = conform_images(&load_images(&files, cfg.data.ood_pool_limit)?, &spec.input_shape)?;
        ensemble::train_unknown_class_ensemble(&spec, &train, &pool, cfg.k, &tc, seed)?
    } else {
        ensemble::train_ensemble(&spec, &train, cfg.k, &tc, seed)?
    };
    ensemble::save_bundle(&bundle, out)?;
    let log: Vec<MemberLoss> = bundle
        .members
        .iter()
        .enumerate()
        .flat_map(|(member, m)| {
            m.loss_history
                .iter()
                .enumerate()
                .map(move |(e, &loss)| MemberLoss { member, epoch: e + 1, loss })
        })
        .collect();
    fsutil::write_csv(&out.join("loss_log.csv"), &log)?;
    let mode = match &bundle.unknown_class {
        UnknownClassMode::Off => "",
        UnknownClassMode::On { .. } => " with an unknown class",
    };
    Ok(format!("trained {} members{mode} on {} samples -> {}", bundle.k(), train.len(), out.display()))
}

#[derive(Serialize)]
struct SaeLoss {
    epoch: usize,
    loss: f64,
    reconstruction: f64,
}

pub fn train_sae(cfg: &RunConfig) -> CliResult<String> {
    let (seed, out) = (cfg.seed()?, cfg.out()?);
    require_train(cfg)?;
    if !(cfg.sae.lambda > 0.0 && cfg.sae.lambda.is_finite()) {
        return Err(CliError::Config(format!("sae.lambda must be positive, got {}", cfg.sae.lambda)));
    }
    let has_test = cfg.data.blobs.is_some() || cfg.data.test_images.is_some();
    let data = load_data(cfg, seed, false, has_test && cfg.data.test_labels.is_some())?;
    let mut spec = SupervisedAeSpec::reference(data.train.sample_shape(), data.train.n_classes, seed);
    spec.lambda = cfg.sae.lambda;
    let tc = cfg.train_config(cfg.sae.epochs.unwrap_or(cfg.epochs), seed);
    let model = sae::train_sae(&spec, &data.train, &tc)?;
    model.save(out)?;
    let log: Vec<SaeLoss> = model
        .loss_history
        .iter()
        .zip(&model.reconstruction_history)
        .enumerate()
        .map(|(e, (&loss, &reconstruction))| SaeLoss { epoch: e + 1, loss, reconstruction })
        .collect();
    fsutil::write_csv(&out.join("loss_log.csv"), &log)?;
    if let Some(test) = &data.test {
        sae::write_reconstructions(&model, &test.images, RECONSTRUCTION_DUMP, &out.join("reconstructions"))?;
    }
    let last = model.reconstruction_history.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "trained autoencoder for {} epochs (reconstruction MSE {last:.5}) -> {}",
        model.epochs_completed,
        out.display()
    ))
}

fn check_target(cfg: &RunConfig) -> CliResult<()> {
    if !(0.0..=1.0).contains(&cfg.target_fpr) {
        return Err(CliError::Config(format!("target_fpr {} outside [0, 1]", cfg.target_fpr)));
    }
    Ok(())
}

fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!("{:<28} {:>8} {:>8} {:>10} {:>12}\n", "method", "TPR", "FPR", "False-Neg", "tau");
    for r in rows {
        s.push_str(&format!(
            "{:<28} {:>7.2}% {:>7.2}% {:>10} {:>12.6e}\n",
            r.method,
            100.0 * r.tpr,
            100.0 * r.fpr,
            r.false_neg,
            r.tau
        ));
    }
    s
}

pub fn eval_misclassified(cfg: &RunConfig) -> CliResult<String> {
    let (seed, out) = (cfg.seed()?, cfg.out()?);
    let model_path = cfg.model.as_ref().ok_or_else(|| missing("model"))?;
    require_train(cfg)?;
    require_test(cfg)?;
    check_target(cfg)?;
    let order: Vec<Scorer> = Scorer::ALL.into_iter().filter(|s| cfg.scorers.contains(s)).collect();
    if order.is_empty() {
        return Err(CliError::Config("no scorers selected".into()));
    }
    let proposed = load_model(model_path, cfg.member)?;
    let baseline = match &cfg.baseline_model {
        Some(p) => load_model(p, cfg.member)?,
        None => proposed.clone(),
    };
    let data = load_data(cfg, seed, true, true)?;
    let (val, test) = (data.val.unwrap(), data.test.unwrap());
    let params = ScoreParams { mc_passes: cfg.mc_passes, seed };
    let mut summary = Vec::new();
    for scorer in order {
        let net = if scorer == Scorer::SoftplusRatio { &proposed } else { &baseline };
        let v = conform(&val, &net.spec.input_shape)?;
        let t = conform(&test, &net.spec.input_shape)?;
        let vs = scoring::score_dataset(net, &v.images, &v.labels, scorer, params)?;
        let ts = scoring::score_dataset(net, &t.images, &t.labels, scorer, params)?;
        scoring::write_scores(&out.join(format!("scores_val_{}.csv", scorer.id())), &vs)?;
        scoring::write_scores(&out.join(format!("scores_test_{}.csv", scorer.id())), &ts)?;
        let tau = eval::calibrate(&eval::misclassification_labels(&vs), Target::MaxFpr(cfg.target_fpr))?;
        let labels = eval::misclassification_labels(&ts);
        let point = eval::evaluate(&labels, tau)?;
        eval::sweep(&labels, scorer.id(), eval::POSITIVE_MISCLASSIFIED)?
            .save(&out.join(format!("report_{}.json", scorer.id())))?;
        summary.push(SummaryRow::new(method_name(scorer), &point));
    }
    eval::write_summary(&out.join("summary.csv"), &summary)?;
    Ok(format_summary(&summary))
}

struct OodMethod {
    id: &'static str,
    name: &'static str,
    val: Vec<f64>,
    test_in: Vec<f64>,
    test_ood: Vec<f64>,
}

fn score_rows(origin: Origin, scores: &[f64], scorer: &str) -> Vec<OodScoreRow> {
    scores
        .iter()
        .enumerate()
        .map(|(sample_id, &score)| OodScoreRow { sample_id, origin, score, scorer: scorer.to_string() })
        .collect()
}

pub fn eval_ood(cfg: &RunConfig) -> CliResult<String> {
    let (seed, out) = (cfg.seed()?, cfg.out()?);
    let sae_path = cfg.sae_model.as_ref().ok_or_else(|| missing("sae_model"))?;
    let ood_path = cfg.data.ood_images.as_ref().ok_or_else(|| missing("ood_images"))?;
    require_train(cfg)?;
    require_test(cfg)?;
    check_target(cfg)?;
    let files = ood_files(ood_path)?;
    let model = SupervisedAe::load(sae_path)?;
    let bundle = cfg.bundle.as_ref().map(|p| ensemble::load_bundle(p)).transpose()?;
    if let Some(b) = &bundle {
        if b.unknown_class == UnknownClassMode::Off {
            return Err(UqError::State("bundle was not trained with an unknown class".into()).into());
        }
    }
    let data = load_data(cfg, seed, true, true)?;
    let (val, test) = (data.val.unwrap(), data.test.unwrap());
    let ood = load_images(&files, Some(cfg.data.ood_limit.unwrap_or(test.len())))?;
    // a differing layout of the same pixel count is accepted; anything else is a data error
    let ood = conform_images(&ood, test.sample_shape())?;
    data::OodPair::new(test.clone(), data::unlabeled(ood.clone(), "ood")?)?;

    let shape = &model.spec.input_shape;
    let (v, t, o) = (conform_images(&val.images, shape)?, conform_images(&test.images, shape)?, conform_images(&ood, shape)?);
    let mut methods = vec![OodMethod {
        id: sae::SCORER_ID,
        name: "SAE reconstruction",
        val: model.reconstruction_error(&v)?,
        test_in: model.reconstruction_error(&t)?,
        test_ood: model.reconstruction_error(&o)?,
    }];
    if let Some(b) = &bundle {
        let shape = &b.spec.input_shape;
        let score = |x: &Tensor| -> CliResult<Vec<f64>> { Ok(ensemble::unknown_class_score(b, &conform_images(x, shape)?)?) };
        methods.push(OodMethod {
            id: "unknown_class",
            name: "Unknown class",
            val: score(&val.images)?,
            test_in: score(&test.images)?,
            test_ood: score(&ood)?,
        });
        // put both scores on the in-distribution validation CDF scale before taking the max
        let cdfs = methods
            .iter()
            .map(|m| EmpiricalCdf::new(&m.val))
            .collect::<uqkit::Result<Vec<_>>>()?;
        let fuse = |pick: fn(&OodMethod) -> &Vec<f64>| -> uqkit::Result<Vec<f64>> {
            let lists: Vec<&[f64]> = methods.iter().map(|m| pick(m).as_slice()).collect();
            eval::fuse_max(&cdfs, &lists)
        };
        let fused = OodMethod {
            id: "max_fusion",
            name: "Max fusion (CDF-normalized)",
            val: fuse(|m| &m.val)?,
            test_in: fuse(|m| &m.test_in)?,
            test_ood: fuse(|m| &m.test_ood)?,
        };
        methods.push(fused);
    }

    let mut summary = Vec::new();
    for m in &methods {
        let tau = eval::calibrate_on_negatives(&m.val, cfg.target_fpr)?;
        fsutil::write_csv(&out.join(format!("ood_val_scores_{}.csv", m.id)), &score_rows(Origin::InDistribution, &m.val, m.id))?;
        let mut rows = score_rows(Origin::InDistribution, &m.test_in, m.id);
        rows.extend(score_rows(Origin::OutOfDistribution, &m.test_ood, m.id));
        sae::write_ood_scores(&out.join(format!("ood_scores_{}.csv", m.id)), &rows)?;
        let labels = eval::ood_labels(&m.test_in, &m.test_ood);
        let point = eval::evaluate(&labels, tau)?;
        let report: DetectionReport = eval::sweep(&labels, m.id, eval::POSITIVE_OOD)?;
        report.save(&out.join(format!("report_{}.json", m.id)))?;
        summary.push(SummaryRow::new(m.name, &point));
    }
    eval::write_summary(&out.join("summary.csv"), &summary)?;
    Ok(format_summary(&summary))
}

pub fn study(cfg: &RunConfig) -> CliResult<String> {
    let (seed, out) = (cfg.seed()?, cfg.out()?);
    let study = cfg.study.as_ref().ok_or_else(|| missing("study"))?;
    let axis = StudyAxis::parse(&study.axis).ok_or_else(|| {
        CliError::Config(format!(
            "unknown study axis {:?}; expected layers, loss, hidden_neurons or epochs",
            study.axis
        ))
    })?;
    let values = study.value_strings();
    if values.is_empty() {
        return Err(CliError::Config("study needs at least one value".into()));
    }
    if cfg.k < 2 {
        return Err(CliError::Config(format!("k must be at least 2, got {}", cfg.k)));
    }
    require_train(cfg)?;
    require_test(cfg)?;
    let data = load_data(cfg, seed, false, true)?;
    let spec = cfg.network_spec(data.train.sample_shape(), data.train.n_classes, seed)?;
    // reject inapplicable values before any training
    for v in &values {
        ensemble::apply_axis(axis, v, &spec, &cfg.train_config(cfg.epochs, seed))?;
    }
    let train = conform(&data.train, &spec.input_shape)?;
    let test = conform(data.test.as_ref().unwrap(), &spec.input_shape)?;
    let base = StudyBase { spec, train: cfg.train_config(cfg.epochs, seed), k: cfg.k, base_seed: seed };
    let reports = ensemble::run_study(axis, &values, &train, &test, &base, Some(out))?;
    let mut s = format!("{:<32} {:>16}\n", "value", "aggregate spread");
    for r in &reports {
        s.push_str(&format!("{:<32} {:>16.6e}\n", r.label, r.aggregate));
    }
    Ok(s)
}

pub fn export_embeddings(cfg: &RunConfig) -> CliResult<String> {
    let (seed, out) = (cfg.seed()?, cfg.out()?);
    let model_path = cfg.model.as_ref().ok_or_else(|| missing("model"))?;
    require_test(cfg)?;
    let net = load_model(model_path, cfg.member)?;
    let test = match cfg.data.blobs {
        Some(_) => load_data(cfg, seed, false, true)?.test.unwrap(),
        None => load_test(cfg)?,
    };
    let test = conform(&test, &net.spec.input_shape)?;
    let path = out.join("embeddings.csv");
    let rows = ensemble::write_embeddings_csv(&path, &net, &test)?;
    Ok(format!("wrote {rows} embeddings -> {}", path.display()))
}
