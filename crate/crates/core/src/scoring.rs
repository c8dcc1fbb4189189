//! Per-sample data-uncertainty scores for misclassification detection.
//!
//! Every scorer is oriented the same way: larger means more uncertain.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::fsutil;
use crate::nn::loss::{softmax_row, softplus};
use crate::nn::{Masks, Network};
use crate::rng::{mix, Rng};
use crate::tensor::{argmax, population_variance, Tensor};

/// Floor for the gap between the two largest softplus outputs.
pub const RATIO_EPSILON: f64 = 1e-9;

/// Default number of stochastic passes for MC-Dropout.
pub const DEFAULT_MC_PASSES: usize = 50;

const CHUNK: usize = 256;

/// Raw softplus-head outputs for one sample: strictly positive, not
/// normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftplusVector(Vec<f64>);

impl SoftplusVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(UqError::UnsupportedClassCount(values.len()));
        }
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(UqError::Domain(format!("softplus output {bad} is not a positive finite value")));
        }
        Ok(SoftplusVector(values))
    }

    /// Softplus of a logit row.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        SoftplusVector::new(logits.iter().map(|&z| softplus(z)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Mass outside the two most probable classes divided by the margin between
/// those two: `(p3 + … + pn) / max(p1 − p2, ε)` over the descending order.
pub fn softplus_ratio_uncertainty(v: &SoftplusVector) -> Result<f64> {
    let p = v.values();
    if p.len() < 3 {
        return Err(UqError::UnsupportedClassCount(p.len()));
    }
    let (mut i1, mut i2) = if p[1] > p[0] { (1, 0) } else { (0, 1) };
    for (i, &x) in p.iter().enumerate().skip(2) {
        if x > p[i1] {
            i2 = i1;
            i1 = i;
        } else if x > p[i2] {
            i2 = i;
        }
    }
    let rest: f64 = p
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != i1 && i != i2)
        .map(|(_, &x)| x)
        .sum();
    Ok(rest / (p[i1] - p[i2]).max(RATIO_EPSILON))
}

/// `1 − max(p)` for a probability vector.
pub fn max_softmax_score(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(UqError::EmptyInput("empty probability vector".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(UqError::Domain(format!("not a probability vector (sum {sum})")));
    }
    Ok(1.0 - probs[argmax(probs)])
}

/// Prediction and spread over stochastic passes: the class maximizing the
/// mean probability, and the population variance of that class's
/// probability across passes.
pub fn pass_spread(passes: &[Vec<f64>]) -> Result<(usize, f64)> {
    let first = passes
        .first()
        .ok_or_else(|| UqError::EmptyInput("no stochastic passes".into()))?;
    let c = first.len();
    let mut mean = vec![0.0; c];
    for p in passes {
        if p.len() != c {
            return Err(UqError::Dimension("passes differ in class count".into()));
        }
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let cls = argmax(&mean);
    let column: Vec<f64> = passes.iter().map(|p| p[cls]).collect();
    Ok((cls, population_variance(&column)))
}

fn check_mc(net: &Network, passes: usize) -> Result<usize> {
    if passes < 2 {
        return Err(UqError::Parameter(format!("MC-Dropout needs at least 2 passes, got {passes}")));
    }
    net.first_dropout_index()
        .ok_or_else(|| UqError::Spec("MC-Dropout needs a network with a dropout layer".into()))
}

/// MC-Dropout over a batch whose rows carry the given sample ids. The masks
/// of sample `id` in pass `t` come from stream `mix(id, t)` of `seed`, so the
/// result does not depend on batching or thread layout.
pub fn mc_dropout_batch(
    net: &Network,
    batch: &Tensor,
    sample_ids: &[usize],
    passes: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let start = check_mc(net, passes)?;
    if sample_ids.len() != batch.rows() {
        return Err(UqError::Dimension(format!(
            "{} sample ids for {} rows",
            sample_ids.len(),
            batch.rows()
        )));
    }
    // everything before the first dropout layer is deterministic: run it once
    let prefix = net.forward_prefix(batch, start)?;
    let n = batch.rows();
    let c = net.n_outputs();
    let mut per_sample: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(passes); n];
    for t in 0..passes {
        let mut rngs: Vec<Rng> = sample_ids
            .iter()
            .map(|&id| Rng::new(seed, mix(id as u64, t as u64)))
            .collect();
        let out = net.forward_range(&prefix, start, Masks::PerRow(&mut rngs))?;
        for (i, passes_i) in per_sample.iter_mut().enumerate() {
            let mut p = vec![0.0; c];
            softmax_row(out.logits.row(i), &mut p);
            passes_i.push(p);
        }
    }
    per_sample.iter().map(|p| pass_spread(p)).collect()
}

/// MC-Dropout score of a single sample (`[1, ...]`).
pub fn mc_dropout_score(net: &Network, sample: &Tensor, sample_id: usize, passes: usize, seed: u64) -> Result<f64> {
    Ok(mc_dropout_batch(net, sample, &[sample_id], passes, seed)?[0].1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// Softplus-ratio score on the softplus of the logits.
    SoftplusRatio,
    /// `1 − max softmax(logits)`.
    MaxSoftmax,
    /// Variance over dropout-enabled passes of the predicted class's softmax probability.
    McDropout,
}

impl Scorer {
    pub const ALL: [Scorer; 3] = [Scorer::MaxSoftmax, Scorer::McDropout, Scorer::SoftplusRatio];

    pub fn id(&self) -> &'static str {
        match self {
            Scorer::SoftplusRatio => "softplus_ratio",
            Scorer::MaxSoftmax => "max_softmax",
            Scorer::McDropout => "mc_dropout",
        }
    }

    pub fn parse(s: &str) -> Option<Scorer> {
        Scorer::ALL.into_iter().find(|x| x.id() == s)
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub mc_passes: usize,
    pub seed: u64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams {
            mc_passes: DEFAULT_MC_PASSES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: usize,
    pub true_label: usize,
    pub predicted_label: usize,
    pub score: f64,
    pub scorer: Scorer,
}

impl ScoredSample {
    pub fn misclassified(&self) -> bool {
        self.predicted_label != self.true_label
    }
}

/// Scores the rows `ids` of `images` (labels indexed the same way). Rows are
/// processed in parallel chunks; output order follows `ids`.
pub fn score_rows(
    net: &Network,
    images: &Tensor,
    labels: &[usize],
    ids: &[usize],
    scorer: Scorer,
    params: ScoreParams,
) -> Result<Vec<ScoredSample>> {
    if labels.len() != images.rows() {
        return Err(UqError::Dimension(format!(
            "{} labels for {} images",
            labels.len(),
            images.rows()
        )));
    }
    if scorer == Scorer::McDropout {
        check_mc(net, params.mc_passes)?;
    }
    let chunks: Vec<Result<Vec<ScoredSample>>> = ids
        .par_chunks(CHUNK)
        .map(|chunk| {
            let batch = images.select_rows(chunk)?;
            let scored: Vec<(usize, f64)> = match scorer {
                Scorer::McDropout => mc_dropout_batch(net, &batch, chunk, params.mc_passes, params.seed)?,
                Scorer::SoftplusRatio => {
                    let logits = net.infer(&batch)?.logits;
                    (0..chunk.len())
                        .map(|i| {
                            let row = logits.row(i);
                            Ok((argmax(row), softplus_ratio_uncertainty(&SoftplusVector::from_logits(row)?)?))
                        })
                        .collect::<Result<_>>()?
                }
                Scorer::MaxSoftmax => {
                    let logits = net.infer(&batch)?.logits;
                    let mut p = vec![0.0; logits.row_len()];
                    (0..chunk.len())
                        .map(|i| {
                            softmax_row(logits.row(i), &mut p);
                            Ok((argmax(&p), max_softmax_score(&p)?))
                        })
                        .collect::<Result<_>>()?
                }
            };
            Ok(chunk
                .iter()
                .zip(scored)
                .map(|(&id, (predicted_label, score))| ScoredSample {
                    sample_id: id,
                    true_label: labels[id],
                    predicted_label,
                    score,
                    scorer,
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(ids.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Scores every sample of `images` with the given scorer.
pub fn score_dataset(
    net: &Network,
    images: &Tensor,
    labels: &[usize],
    scorer: Scorer,
    params: ScoreParams,
) -> Result<Vec<ScoredSample>> {
    let ids: Vec<usize> = (0..images.rows()).collect();
    score_rows(net, images, labels, &ids, scorer, params)
}

pub fn write_scores(path: &Path, scores: &[ScoredSample]) -> Result<()> {
    fsutil::write_csv(path, scores)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoredSample>> {
    fsutil::read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Head, LayerSpec, LossKind, NetworkSpec};
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn ratio(v: &[f64]) -> f64 {
        softplus_ratio_uncertainty(&SoftplusVector::new(v.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn hand_evaluated_ratios() {
        assert!((ratio(&[2.0, 1.0, 0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert!((ratio(&[5.0, 0.001, 0.001, 0.001]) - 0.002 / 4.999).abs() < 1e-15);
        assert!((ratio(&[1.0, 1.0, 1.0]) - 1e9).abs() < 1e-3);
        // order of the input does not matter
        assert_eq!(ratio(&[0.5, 1.0, 0.5, 2.0]), ratio(&[2.0, 1.0, 0.5, 0.5]));
    }

    #[test]
    fn ratio_preconditions() {
        let two = SoftplusVector::new(vec![1.0, 2.0]).unwrap();
        assert!(matches!(softplus_ratio_uncertainty(&two), Err(UqError::UnsupportedClassCount(2))));
        assert!(matches!(SoftplusVector::new(vec![1.0, 0.0, 2.0]), Err(UqError::Domain(_))));
        assert!(matches!(SoftplusVector::new(vec![1.0, -1.0, 2.0]), Err(UqError::Domain(_))));
    }

    #[test]
    fn max_softmax_examples() {
        assert!((max_softmax_score(&[0.25; 4]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(max_softmax_score(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((max_softmax_score(&[0.7, 0.2, 0.1]).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(max_softmax_score(&[0.5, 0.6]), Err(UqError::Domain(_))));
    }

    #[test]
    fn pass_spread_hand_value() {
        let (cls, s) = pass_spread(&[vec![0.9, 0.1], vec![0.7, 0.3]]).unwrap();
        assert_eq!(cls, 0);
        assert!((s - 0.01).abs() < 1e-15);
    }

    fn dropout_net(rate: f64) -> Network {
        let spec = NetworkSpec {
            input_shape: vec![4],
            layers: vec![
                LayerSpec::Dense { units: 16 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate },
                LayerSpec::Dense { units: 5 },
            ],
            head: Head::Softplus,
            loss: LossKind::CategoricalCrossEntropy,
            seed: 4,
        };
        Network::from_spec(&spec).unwrap()
    }

    fn batch(n: usize) -> (Tensor, Vec<usize>) {
        let mut rng = Rng::new(9, 0);
        let data = (0..n * 4).map(|_| rng.standard_normal()).collect();
        (Tensor::new(vec![n, 4], data).unwrap(), (0..n).map(|i| i % 5).collect())
    }

    #[test]
    fn zero_rate_dropout_gives_zero_mc_score() {
        let (x, _) = batch(7);
        let ids: Vec<usize> = (0..7).collect();
        let out = mc_dropout_batch(&dropout_net(0.0), &x, &ids, 10, 1).unwrap();
        assert!(out.iter().all(|&(_, s)| s == 0.0));
    }

    #[test]
    fn mc_requires_dropout_and_two_passes() {
        let spec = NetworkSpec::mlp(&[4], 1, 8, 5, Head::Softmax, 0);
        let net = Network::from_spec(&spec).unwrap();
        let (x, _) = batch(1);
        assert!(matches!(mc_dropout_score(&net, &x, 0, 10, 0), Err(UqError::Spec(_))));
        assert!(mc_dropout_score(&dropout_net(0.5), &x, 0, 1, 0).is_err());
        assert!(mc_dropout_score(&dropout_net(0.5), &x, 0, 5, 0).unwrap() > 0.0);
    }

    #[test]
    fn mc_scores_independent_of_batching() {
        let net = dropout_net(0.5);
        let (x, labels) = batch(300);
        let all = score_dataset(&net, &x, &labels, Scorer::McDropout, ScoreParams { mc_passes: 8, seed: 3 }).unwrap();
        let single = mc_dropout_score(&net, &x.select_rows(&[257]).unwrap(), 257, 8, 3).unwrap();
        assert_eq!(all[257].score, single);
    }

    #[test]
    fn empty_selection_scores_nothing() {
        let (x, labels) = batch(3);
        for scorer in Scorer::ALL {
            let out = score_rows(&dropout_net(0.5), &x, &labels, &[], scorer, ScoreParams::default()).unwrap();
            assert!(out.is_empty());
        }
    }

    #[test]
    fn shared_logits_give_shared_predictions() {
        // with a zero dropout rate every scorer sees the same logits
        let net = dropout_net(0.0);
        let (x, labels) = batch(50);
        let p = ScoreParams { mc_passes: 3, seed: 0 };
        let runs: Vec<Vec<ScoredSample>> = Scorer::ALL
            .iter()
            .map(|&s| score_dataset(&net, &x, &labels, s, p).unwrap())
            .collect();
        for i in 0..50 {
            assert_eq!(runs[0][i].predicted_label, runs[1][i].predicted_label);
            assert_eq!(runs[0][i].predicted_label, runs[2][i].predicted_label);
        }
    }

    #[test]
    fn scores_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (x, labels) = batch(20);
        let s = score_dataset(&dropout_net(0.3), &x, &labels, Scorer::SoftplusRatio, ScoreParams::default()).unwrap();
        let path = dir.path().join("scores.csv");
        write_scores(&path, &s).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,true_label,predicted_label,score,scorer\n"));
        assert_eq!(read_scores(&path).unwrap(), s);
    }

    proptest! {
        #[test]
        fn ratio_is_scale_invariant(v in prop::collection::vec(0.01f64..10.0, 3..20), lambda in 0.01f64..100.0) {
            let sv = SoftplusVector::new(v.clone()).unwrap();
            let mut sorted = v.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assume!(sorted[0] - sorted[1] > RATIO_EPSILON && lambda * (sorted[0] - sorted[1]) > RATIO_EPSILON);
            let a = softplus_ratio_uncertainty(&sv).unwrap();
            let b = ratio(&v.iter().map(|x| x * lambda).collect::<Vec<_>>());
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300));
        }

        #[test]
        fn ratio_decreases_in_top_value(v in prop::collection::vec(0.01f64..10.0, 3..12), bump in 0.001f64..5.0) {
            let mut s = v.clone();
            s.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assume!(s[0] - s[1] > RATIO_EPSILON);
            let before = ratio(&s);
            s[0] += bump;
            prop_assert!(ratio(&s) < before || before == 0.0);
        }

        #[test]
        fn max_softmax_range(z in prop::collection::vec(-20.0f64..20.0, 2..12)) {
            let mut p = vec![0.0; z.len()];
            softmax_row(&z, &mut p);
            let s = max_softmax_score(&p).unwrap();
            prop_assert!(s >= 0.0 && s <= 1.0 - 1.0 / z.len() as f64 + 1e-12);
        }

        #[test]
        fn pass_spread_is_pass_order_invariant(
            passes in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 2..10),
            rot in 0usize..10,
        ) {
            let (c1, s1) = pass_spread(&passes).unwrap();
            let mut p2 = passes.clone();
            let r = rot % p2.len();
            p2.rotate_left(r);
            p2.reverse();
            let (c2, s2) = pass_spread(&p2).unwrap();
            prop_assert_eq!(c1, c2);
            prop_assert!((s1 - s2).abs() <= 1e-12);
        }
    }
}
