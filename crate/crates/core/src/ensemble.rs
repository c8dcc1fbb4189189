//! Ensembles of identically-shaped, differently-initialized networks: model
//! uncertainty as the spread of member outputs, the hyper-parameter studies
//! built on it, and "unknown"-class training for out-of-distribution scoring.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Normalization};
use crate::error::{Result, UqError};
use crate::fsutil;
use crate::nn::loss::normalized_probabilities;
use crate::nn::{self, infer_all, LayerSpec, LossKind, Network, NetworkSpec, TrainConfig};
use crate::tensor::{argmax, population_variance, Tensor};

pub const BUNDLE_MANIFEST: &str = "bundle.json";

/// Minimum number of out-of-distribution samples each member must receive.
pub const MIN_UNKNOWN_SLICE: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum UnknownClassMode {
    Off,
    /// Member `k` was trained with pool rows `slices[k].0 .. slices[k].1`
    /// labeled as the extra last class.
    On { slices: Vec<(usize, usize)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBundle {
    pub members: Vec<Network>,
    pub spec: NetworkSpec,
    pub seeds: Vec<u64>,
    pub unknown_class: UnknownClassMode,
}

impl EnsembleBundle {
    /// Assembles a bundle from already-built members, checking that they
    /// share one architecture (seeds aside).
    pub fn from_members(
        members: Vec<Network>,
        seeds: Vec<u64>,
        unknown_class: UnknownClassMode,
    ) -> Result<Self> {
        if members.len() < 2 {
            return Err(UqError::Parameter(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        if seeds.len() != members.len() {
            return Err(UqError::Parameter(format!(
                "{} seeds for {} members",
                seeds.len(),
                members.len()
            )));
        }
        let spec = members[0].spec.clone();
        for (k, m) in members.iter().enumerate() {
            if m.spec.clone().with_seed(spec.seed) != spec {
                return Err(UqError::Spec(format!("member {k} has a different architecture")));
            }
        }
        if let UnknownClassMode::On { slices } = &unknown_class {
            if slices.len() != members.len() {
                return Err(UqError::Parameter("one unknown-class slice per member required".into()));
            }
            let mut sorted = slices.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0].1 > w[1].0) || sorted.iter().any(|s| s.0 >= s.1) {
                return Err(UqError::Data("unknown-class slices must be non-empty and disjoint".into()));
            }
        }
        Ok(EnsembleBundle {
            members,
            spec,
            seeds,
            unknown_class,
        })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    fn ensure_trained(&self) -> Result<()> {
        match self.members.iter().position(|m| m.epochs_completed == 0) {
            Some(k) => Err(UqError::State(format!("ensemble member {k} is untrained"))),
            None => Ok(()),
        }
    }

    /// Normalized output probabilities of every member, in member order.
    pub fn member_probabilities(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        self.ensure_trained()?;
        self.members
            .par_iter()
            .map(|m| Ok(normalized_probabilities(m.spec.head, &infer_all(m, batch)?.logits)))
            .collect()
    }
}

fn member_config(config: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        shuffle_seed: seed,
        ..*config
    }
}

fn collect_members(results: Vec<Result<Network>>) -> Result<Vec<Network>> {
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_err())
        .map(|(k, _)| k)
        .collect();
    if failed.is_empty() {
        return Ok(results.into_iter().map(|r| r.unwrap()).collect());
    }
    let detail = results
        .into_iter()
        .filter_map(|r| r.err())
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    Err(UqError::Ensemble { failed, detail })
}

/// Trains `k` members with seeds `base_seed + 0 .. base_seed + k - 1`; each
/// seed drives both the member's initialization and its shuffling, so the
/// result does not depend on how members are scheduled across threads.
pub fn train_ensemble(
    spec: &NetworkSpec,
    dataset: &LabeledDataset,
    k: usize,
    config: &TrainConfig,
    base_seed: u64,
) -> Result<EnsembleBundle> {
    if k < 2 {
        return Err(UqError::Parameter(format!("an ensemble needs at least 2 members, got {k}")));
    }
    spec.validate()?;
    config.validate()?;
    let seeds: Vec<u64> = (0..k as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let results: Vec<Result<Network>> = seeds
        .par_iter()
        .map(|&seed| {
            let net = Network::from_spec(&spec.clone().with_seed(seed))?;
            nn::train(&net, dataset, &member_config(config, seed))
        })
        .collect();
    EnsembleBundle::from_members(collect_members(results)?, seeds, UnknownClassMode::Off)
}

/// Per-sample model uncertainty over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUncertaintyReport {
    /// Study label such as `epochs=4`; empty outside studies.
    pub label: String,
    /// Variance across members of the probability of the ensemble-mean argmax class.
    pub per_sample: Vec<f64>,
    /// Mean of `per_sample`.
    pub aggregate: f64,
    /// Ensemble-mean argmax class per sample.
    pub predicted: Vec<usize>,
    /// Ensemble-mean probability vectors, `[N, classes]`.
    pub mean_probabilities: Tensor,
    /// Variance across members of every class probability, `[N, classes]`.
    pub class_variance: Tensor,
}

/// Spread statistics from each member's `[N, classes]` probability matrix.
pub fn spread_from_probabilities(member_probs: &[Tensor]) -> Result<ModelUncertaintyReport> {
    let first = member_probs
        .first()
        .ok_or_else(|| UqError::EmptyInput("no member outputs".into()))?;
    if member_probs.iter().any(|p| p.shape() != first.shape()) {
        return Err(UqError::Dimension("member outputs differ in shape".into()));
    }
    let (n, c) = (first.rows(), first.row_len());
    let k = member_probs.len() as f64;
    let mut mean = Tensor::zeros(&[n, c]);
    let mut var = Tensor::zeros(&[n, c]);
    let mut per_sample = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    let mut column = vec![0.0; member_probs.len()];
    for i in 0..n {
        for j in 0..c {
            for (slot, p) in column.iter_mut().zip(member_probs) {
                *slot = p.row(i)[j];
            }
            mean.data_mut()[i * c + j] = column.iter().sum::<f64>() / k;
            var.data_mut()[i * c + j] = population_variance(&column);
        }
        let cls = argmax(mean.row(i));
        predicted.push(cls);
        per_sample.push(var.row(i)[cls]);
    }
    let aggregate = if n == 0 { 0.0 } else { per_sample.iter().sum::<f64>() / n as f64 };
    Ok(ModelUncertaintyReport {
        label: String::new(),
        per_sample,
        aggregate,
        predicted,
        mean_probabilities: mean,
        class_variance: var,
    })
}

pub fn model_uncertainty(bundle: &EnsembleBundle, batch: &Tensor) -> Result<ModelUncertaintyReport> {
    spread_from_probabilities(&bundle.member_probabilities(batch)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyAxis {
    /// Number of hidden dense blocks.
    Layers,
    Loss,
    /// Width of every hidden dense layer.
    HiddenNeurons,
    Epochs,
}

impl StudyAxis {
    pub fn name(&self) -> &'static str {
        match self {
            StudyAxis::Layers => "layers",
            StudyAxis::Loss => "loss",
            StudyAxis::HiddenNeurons => "hidden_neurons",
            StudyAxis::Epochs => "epochs",
        }
    }

    pub fn parse(s: &str) -> Option<StudyAxis> {
        [StudyAxis::Layers, StudyAxis::Loss, StudyAxis::HiddenNeurons, StudyAxis::Epochs]
            .into_iter()
            .find(|a| a.name() == s)
    }
}

/// Everything a study holds fixed while one axis varies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyBase {
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub k: usize,
    pub base_seed: u64,
}

fn parse_count(axis: StudyAxis, value: &str, min: usize) -> Result<usize> {
    match value.trim().parse::<usize>() {
        Ok(v) if v >= min => Ok(v),
        _ => Err(UqError::Spec(format!(
            "{} value {value:?} must be an integer >= {min}",
            axis.name()
        ))),
    }
}

/// Applies one study value to the base configuration.
pub fn apply_axis(
    axis: StudyAxis,
    value: &str,
    spec: &NetworkSpec,
    train: &TrainConfig,
) -> Result<(NetworkSpec, TrainConfig)> {
    let mut spec = spec.clone();
    let mut train = *train;
    let dense: Vec<usize> = spec
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Dense { .. }))
        .map(|(i, _)| i)
        .collect();
    let no_hidden = || {
        UqError::Spec(format!(
            "{} study needs a network with at least one hidden dense layer",
            axis.name()
        ))
    };
    match axis {
        StudyAxis::Epochs => train.epochs = parse_count(axis, value, 1)?,
        StudyAxis::Loss => {
            spec.loss = LossKind::parse(value.trim())
                .ok_or_else(|| UqError::Spec(format!("unknown loss {value:?}")))?;
        }
        StudyAxis::HiddenNeurons => {
            let width = parse_count(axis, value, 1)?;
            if dense.len() < 2 {
                return Err(no_hidden());
            }
            for &i in &dense[..dense.len() - 1] {
                spec.layers[i] = LayerSpec::Dense { units: width };
            }
        }
        StudyAxis::Layers => {
            let blocks = parse_count(axis, value, 0)?;
            if dense.len() < 2 {
                return Err(no_hidden());
            }
            // a hidden block runs from one dense layer up to the next one
            let block: Vec<LayerSpec> = spec.layers[dense[0]..dense[1]].to_vec();
            let last = dense[dense.len() - 1];
            let mut layers = spec.layers[..dense[0]].to_vec();
            for _ in 0..blocks {
                layers.extend(block.iter().cloned());
            }
            layers.extend(spec.layers[last..].iter().cloned());
            spec.layers = layers;
        }
    }
    spec.validate()?;
    Ok((spec, train))
}

/// Trains one ensemble per axis value on `train_set` and measures its spread
/// on `eval_set`. With `out_dir`, writes per-value spread and class variance
/// CSVs, the raw member outputs `[K, N, C]`, member 0's penultimate-layer
/// embeddings, and `summary.csv`.
pub fn run_study(
    axis: StudyAxis,
    values: &[String],
    train_set: &LabeledDataset,
    eval_set: &LabeledDataset,
    base: &StudyBase,
    out_dir: Option<&Path>,
) -> Result<Vec<ModelUncertaintyReport>> {
    if values.is_empty() {
        return Err(UqError::Parameter("study needs at least one value".into()));
    }
    // validate every value before training anything
    let configs = values
        .iter()
        .map(|v| apply_axis(axis, v, &base.spec, &base.train))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::with_capacity(values.len());
    let mut summary = Vec::with_capacity(values.len());
    for (value, (spec, train)) in values.iter().zip(configs) {
        let bundle = train_ensemble(&spec, train_set, base.k, &train, base.base_seed)?;
        let probs = bundle.member_probabilities(&eval_set.images)?;
        let mut report = spread_from_probabilities(&probs)?;
        report.label = format!("{}={}", axis.name(), value.trim());
        if let Some(dir) = out_dir {
            let stem = format!("{}_{}", axis.name(), value.trim());
            write_spread_csv(&dir.join(format!("spread_{stem}.csv")), &report)?;
            write_class_variance_csv(&dir.join(format!("class_variance_{stem}.csv")), &report)?;
            let refs: Vec<&Tensor> = probs.iter().collect();
            let (n, c) = (eval_set.len(), probs[0].row_len());
            Tensor::concat_rows(&refs)?
                .reshape(vec![probs.len(), n, c])?
                .save(&dir.join(format!("outputs_{stem}.uqt")))?;
            write_embeddings_csv(&dir.join(format!("embeddings_{stem}.csv")), &bundle.members[0], eval_set)?;
        }
        summary.push(SummaryRow {
            axis_value: value.trim().to_string(),
            aggregate_spread: report.aggregate,
        });
        reports.push(report);
    }
    if let Some(dir) = out_dir {
        fsutil::write_csv(&dir.join("summary.csv"), &summary)?;
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis_value: String,
    pub aggregate_spread: f64,
}

#[derive(Serialize)]
struct SpreadRow {
    sample_id: usize,
    spread: f64,
}

pub fn write_spread_csv(path: &Path, report: &ModelUncertaintyReport) -> Result<()> {
    let rows: Vec<SpreadRow> = report
        .per_sample
        .iter()
        .enumerate()
        .map(|(sample_id, &spread)| SpreadRow { sample_id, spread })
        .collect();
    fsutil::write_csv(path, &rows)
}

fn write_matrix_csv(path: &Path, prefix: &str, lead: &[(&str, Vec<String>)], m: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = vec!["sample_id".into()];
    header.extend(lead.iter().map(|(h, _)| h.to_string()));
    header.extend((0..m.row_len()).map(|j| format!("{prefix}{j}")));
    w.write_record(&header)?;
    for i in 0..m.rows() {
        let mut rec = vec![i.to_string()];
        rec.extend(lead.iter().map(|(_, col)| col[i].clone()));
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| UqError::Data(e.to_string()))?;
    fsutil::write_atomic(path, &bytes)
}

/// One row per sample: predicted class and the across-member variance of
/// every class probability.
pub fn write_class_variance_csv(path: &Path, report: &ModelUncertaintyReport) -> Result<()> {
    let predicted = report.predicted.iter().map(|p| p.to_string()).collect();
    write_matrix_csv(path, "var_", &[("predicted", predicted)], &report.class_variance)
}

/// Penultimate-layer activations of `net` for every row of `dataset`, one
/// CSV row per sample, for external embedding visualization.
pub fn write_embeddings_csv(path: &Path, net: &Network, dataset: &LabeledDataset) -> Result<usize> {
    let out = infer_all(net, &dataset.images)?;
    let labels = dataset.labels.iter().map(|l| l.to_string()).collect();
    write_matrix_csv(path, "e", &[("label", labels)], &out.penultimate)?;
    Ok(out.penultimate.rows())
}

/// Splits `pool_size` rows into `k` equal contiguous slices (any remainder is
/// unused).
pub fn unknown_slices(pool_size: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    if k < 2 {
        return Err(UqError::Parameter(format!("an ensemble needs at least 2 members, got {k}")));
    }
    let per = pool_size / k;
    if per < MIN_UNKNOWN_SLICE {
        return Err(UqError::Data(format!(
            "OOD pool of {pool_size} cannot give {k} members {MIN_UNKNOWN_SLICE} samples each"
        )));
    }
    Ok((0..k).map(|i| (i * per, (i + 1) * per)).collect())
}

/// Trains member `k` on `dataset` plus its own pool slice labeled as the
/// extra last class. `spec` must have one more output than `dataset` has
/// classes.
pub fn train_unknown_class_ensemble(
    spec: &NetworkSpec,
    dataset: &LabeledDataset,
    ood_pool: &Tensor,
    k: usize,
    config: &TrainConfig,
    base_seed: u64,
) -> Result<EnsembleBundle> {
    let n = dataset.n_classes;
    let outputs = spec.output_size()?;
    if outputs != n + 1 {
        return Err(UqError::Spec(format!(
            "unknown-class training needs {} outputs for {n} classes, spec has {outputs}",
            n + 1
        )));
    }
    if ood_pool.shape()[1..] != *dataset.sample_shape() {
        return Err(UqError::Data(format!(
            "OOD pool sample shape {:?} does not match {:?}",
            &ood_pool.shape()[1..],
            dataset.sample_shape()
        )));
    }
    config.validate()?;
    let slices = unknown_slices(ood_pool.rows(), k)?;
    let seeds: Vec<u64> = (0..k as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let results: Vec<Result<Network>> = seeds
        .par_iter()
        .zip(&slices)
        .map(|(&seed, &(start, end))| {
            let extra = ood_pool.select_rows(&(start..end).collect::<Vec<_>>())?;
            let mut labels = dataset.labels.clone();
            labels.extend(std::iter::repeat_n(n, end - start));
            let augmented = LabeledDataset {
                images: Tensor::concat_rows(&[&dataset.images, &extra])?,
                labels,
                n_classes: n + 1,
                name: format!("{}+unknown", dataset.name),
                normalization: Normalization::Raw,
            };
            let net = Network::from_spec(&spec.clone().with_seed(seed))?;
            nn::train(&net, &augmented, &member_config(config, seed))
        })
        .collect();
    EnsembleBundle::from_members(collect_members(results)?, seeds, UnknownClassMode::On { slices })
}

/// Mean over members of the probability each assigns to the last class.
pub fn mean_last_class(member_probs: &[Tensor]) -> Vec<f64> {
    let Some(first) = member_probs.first() else {
        return Vec::new();
    };
    let c = first.row_len();
    (0..first.rows())
        .map(|i| {
            let s: f64 = member_probs.iter().map(|p| p.row(i)[c - 1]).sum();
            (s / member_probs.len() as f64).clamp(0.0, 1.0)
        })
        .collect()
}

pub fn unknown_class_score(bundle: &EnsembleBundle, batch: &Tensor) -> Result<Vec<f64>> {
    if bundle.unknown_class == UnknownClassMode::Off {
        return Err(UqError::State("ensemble was not trained with an unknown class".into()));
    }
    Ok(mean_last_class(&bundle.member_probabilities(batch)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleManifest {
    spec: NetworkSpec,
    k: usize,
    seeds: Vec<u64>,
    unknown_class: UnknownClassMode,
}

/// Writes `bundle.json` plus one `member{k}/` model directory per member.
pub fn save_bundle(bundle: &EnsembleBundle, dir: &Path) -> Result<()> {
    for (k, m) in bundle.members.iter().enumerate() {
        nn::save_network(m, &dir.join(format!("member{k}")))?;
    }
    let manifest = BundleManifest {
        spec: bundle.spec.clone(),
        k: bundle.k(),
        seeds: bundle.seeds.clone(),
        unknown_class: bundle.unknown_class.clone(),
    };
    fsutil::write_json(&dir.join(BUNDLE_MANIFEST), &manifest)
}

pub fn load_bundle(dir: &Path) -> Result<EnsembleBundle> {
    let path = dir.join(BUNDLE_MANIFEST);
    if !path.is_file() {
        return Err(UqError::State(format!("no ensemble manifest at {}", path.display())));
    }
    let manifest: BundleManifest = fsutil::read_json(&path)?;
    let members = (0..manifest.k)
        .map(|k| nn::load_network(&dir.join(format!("member{k}"))))
        .collect::<Result<Vec<_>>>()?;
    EnsembleBundle::from_members(members, manifest.seeds, manifest.unknown_class)
}
