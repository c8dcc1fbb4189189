//! Supervised reconstruction autoencoder: an encoder to a bottleneck feeding
//! both a decoder (reconstruction, MSE) and a softmax classifier
//! (cross-entropy weighted by `lambda`). Per-sample reconstruction error is
//! the out-of-distribution score.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, OodPair};
use crate::error::{Result, UqError};
use crate::fsutil;
use crate::nn::loss::{loss_and_grad, normalized_probabilities, one_hot};
use crate::nn::train::{fit_epochs, INFER_CHUNK};
use crate::nn::{self, Gradients, Head, LayerSpec, LossKind, Network, NetworkSpec, Optimizer, TrainConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const SAE_MANIFEST: &str = "sae.json";
pub const SCORER_ID: &str = "reconstruction";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedAeSpec {
    pub input_shape: Vec<usize>,
    /// Ends in the bottleneck `dense(d)`.
    pub encoder: Vec<LayerSpec>,
    /// Maps the bottleneck back to the flattened input size; a logistic
    /// output keeps reconstructions in `(0, 1)`.
    pub decoder: Vec<LayerSpec>,
    pub n_classes: usize,
    /// Weight of the classification loss.
    pub lambda: f64,
    pub seed: u64,
}

impl SupervisedAeSpec {
    /// flatten → dense(128) → relu → dense(32) bottleneck; decoder
    /// dense(128) → relu → dense(input); classifier dense(n_classes).
    pub fn reference(input_shape: &[usize], n_classes: usize, seed: u64) -> Self {
        let input: usize = input_shape.iter().product();
        SupervisedAeSpec {
            input_shape: input_shape.to_vec(),
            encoder: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 128 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 32 },
            ],
            decoder: vec![LayerSpec::Dense { units: 128 }, LayerSpec::Relu, LayerSpec::Dense { units: input }],
            n_classes,
            lambda: 1.0,
            seed,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn bottleneck(&self) -> Result<usize> {
        match self.encoder.last() {
            Some(LayerSpec::Dense { units }) => Ok(*units),
            _ => Err(UqError::Spec("encoder must end in a dense bottleneck layer".into())),
        }
    }

    fn sub_specs(&self, allow_full_width: bool) -> Result<[NetworkSpec; 3]> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(UqError::Parameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.n_classes < 2 {
            return Err(UqError::Spec(format!("classifier needs >= 2 classes, got {}", self.n_classes)));
        }
        let d = self.bottleneck()?;
        let input = self.input_size();
        if d >= input && !allow_full_width {
            return Err(UqError::Spec(format!(
                "bottleneck of {d} does not compress an input of {input}"
            )));
        }
        let encoder = NetworkSpec {
            input_shape: self.input_shape.clone(),
            layers: self.encoder.clone(),
            head: Head::Linear,
            loss: LossKind::Mse,
            seed: self.seed,
        };
        let decoder = NetworkSpec {
            input_shape: vec![d],
            layers: self.decoder.clone(),
            head: Head::Sigmoid,
            loss: LossKind::Mse,
            seed: self.seed,
        };
        let classifier = NetworkSpec {
            input_shape: vec![d],
            layers: vec![LayerSpec::Dense { units: self.n_classes }],
            head: Head::Softmax,
            loss: LossKind::CategoricalCrossEntropy,
            seed: self.seed,
        };
        encoder.validate()?;
        if decoder.output_size()? != input {
            return Err(UqError::Spec(format!(
                "decoder outputs {} values for an input of {input}",
                decoder.output_size()?
            )));
        }
        Ok([encoder, decoder, classifier])
    }

    pub fn validate(&self) -> Result<()> {
        self.sub_specs(false).map(|_| ())
    }
}

/// Trained (or initialized) autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedAe {
    pub spec: SupervisedAeSpec,
    pub encoder: Network,
    pub decoder: Network,
    pub classifier: Network,
    pub epochs_completed: usize,
    /// Mean total loss per epoch.
    pub loss_history: Vec<f64>,
    /// Mean reconstruction MSE per epoch.
    pub reconstruction_history: Vec<f64>,
}

/// Losses and gradients of one batch.
#[derive(Debug, Clone)]
pub struct SaeGradients {
    pub reconstruction: f64,
    pub classification: f64,
    pub encoder: Gradients,
    pub decoder: Gradients,
    pub classifier: Gradients,
}

impl SupervisedAe {
    pub fn init(spec: &SupervisedAeSpec) -> Result<Self> {
        Self::build(spec, false)
    }

    fn build(spec: &SupervisedAeSpec, allow_full_width: bool) -> Result<Self> {
        let [e, d, c] = spec.sub_specs(allow_full_width)?;
        Ok(SupervisedAe {
            spec: spec.clone(),
            encoder: Network::init(&e, &mut Rng::new(spec.seed, 0))?,
            decoder: Network::init(&d, &mut Rng::new(spec.seed, 1))?,
            classifier: Network::init(&c, &mut Rng::new(spec.seed, 2))?,
            epochs_completed: 0,
            loss_history: Vec::new(),
            reconstruction_history: Vec::new(),
        })
    }

    fn flat(&self, batch: &Tensor) -> Result<Tensor> {
        batch.clone().reshape(vec![batch.rows(), self.spec.input_size()])
    }

    /// Loss `MSE(x, x̂) + λ·CE(y, ŷ)` on one batch and the gradients of every
    /// sub-network. The bottleneck receives the sum of the decoder's and the
    /// classifier's input gradients.
    pub fn loss_and_gradients(&self, batch: &Tensor, labels: &[usize], rng: &mut Rng) -> Result<SaeGradients> {
        if labels.len() != batch.rows() {
            return Err(UqError::Dimension(format!("{} labels for {} rows", labels.len(), batch.rows())));
        }
        let target = self.flat(batch)?;
        let (z, enc_cache) = self.encoder.forward_train(batch, rng)?;
        let (xhat, dec_cache) = self.decoder.forward_train(&z, rng)?;
        let (reconstruction, d_xhat) = loss_and_grad(Head::Sigmoid, LossKind::Mse, &xhat, &target, 1.0)?;
        let (decoder, dz_dec) = self.decoder.backward_from_logits(&dec_cache, &d_xhat, true)?;
        let (cls_logits, cls_cache) = self.classifier.forward_train(&z, rng)?;
        let y = one_hot(labels, self.spec.n_classes)?;
        let (weighted_ce, d_cls) = loss_and_grad(
            Head::Softmax,
            LossKind::CategoricalCrossEntropy,
            &cls_logits,
            &y,
            self.spec.lambda,
        )?;
        let (classifier, dz_cls) = self.classifier.backward_from_logits(&cls_cache, &d_cls, true)?;
        let mut dz = dz_dec;
        for (a, b) in dz.data_mut().iter_mut().zip(dz_cls.data()) {
            *a += b;
        }
        let (encoder, _) = self.encoder.backward_from_logits(&enc_cache, &dz, false)?;
        let loss = reconstruction + weighted_ce;
        if !loss.is_finite() {
            return Err(UqError::Numeric {
                layer: self.encoder.spec.layers.len(),
                detail: "autoencoder loss is not finite".into(),
            });
        }
        Ok(SaeGradients {
            reconstruction,
            classification: weighted_ce / self.spec.lambda,
            encoder,
            decoder,
            classifier,
        })
    }

    /// Returns a trained copy with its histories extended.
    pub fn train(&self, dataset: &LabeledDataset, config: &TrainConfig) -> Result<Self> {
        if dataset.sample_shape() != self.spec.input_shape.as_slice() {
            return Err(UqError::Dimension(format!(
                "dataset samples {:?} do not match autoencoder input {:?}",
                dataset.sample_shape(),
                self.spec.input_shape
            )));
        }
        if dataset.n_classes > self.spec.n_classes {
            return Err(UqError::Spec(format!(
                "dataset has {} classes, classifier has {}",
                dataset.n_classes, self.spec.n_classes
            )));
        }
        let mut model = self.clone();
        let mut optimizer = Optimizer::new(config.optimizer);
        let n = dataset.len();
        let (mut seen, mut recon_sum) = (0usize, 0.0);
        let mut recon_history = Vec::new();
        let history = fit_epochs(n, config, self.epochs_completed, |idx, rng| {
            let batch = dataset.images.select_rows(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels[i]).collect();
            let g = model.loss_and_gradients(&batch, &labels, rng)?;
            let params: Vec<&mut Tensor> = model
                .encoder
                .parameter_tensors_mut()
                .into_iter()
                .chain(model.decoder.parameter_tensors_mut())
                .chain(model.classifier.parameter_tensors_mut())
                .collect();
            optimizer.step(params, g.encoder.tensors().chain(g.decoder.tensors()).chain(g.classifier.tensors()));
            seen += idx.len();
            recon_sum += g.reconstruction * idx.len() as f64;
            if seen == n {
                recon_history.push(recon_sum / n as f64);
                seen = 0;
                recon_sum = 0.0;
            }
            Ok(g.reconstruction + model.spec.lambda * g.classification)
        })?;
        model.epochs_completed += history.len();
        for net in [&mut model.encoder, &mut model.decoder, &mut model.classifier] {
            net.epochs_completed = model.epochs_completed;
        }
        model.loss_history.extend(history);
        model.reconstruction_history.extend(recon_history);
        Ok(model)
    }

    /// Bottleneck activations, `[N, d]`.
    pub fn bottleneck(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.encoder.infer(batch)?.logits)
    }

    /// Reconstructions flattened to `[N, input_size]`.
    pub fn reconstruct(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.decoder.infer(&self.bottleneck(batch)?)?.outputs)
    }

    /// Classifier probabilities, `[N, n_classes]`.
    pub fn classify(&self, batch: &Tensor) -> Result<Tensor> {
        let logits = self.classifier.infer(&self.bottleneck(batch)?)?.logits;
        Ok(normalized_probabilities(Head::Softmax, &logits))
    }

    /// Per-sample pixel MSE between each input and its reconstruction.
    pub fn reconstruction_error(&self, batch: &Tensor) -> Result<Vec<f64>> {
        if batch.shape()[1..] != *self.spec.input_shape {
            return Err(UqError::Dimension(format!(
                "batch {:?} does not match autoencoder input {:?}",
                batch.shape(),
                self.spec.input_shape
            )));
        }
        let ids: Vec<usize> = (0..batch.rows()).collect();
        let parts: Vec<Result<Vec<f64>>> = ids
            .par_chunks(INFER_CHUNK)
            .map(|chunk| {
                let x = self.flat(&batch.select_rows(chunk)?)?;
                pixel_mse(&x, &self.reconstruct(&batch.select_rows(chunk)?)?)
            })
            .collect();
        let mut out = Vec::with_capacity(batch.rows());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        nn::save_network(&self.encoder, &dir.join("encoder"))?;
        nn::save_network(&self.decoder, &dir.join("decoder"))?;
        nn::save_network(&self.classifier, &dir.join("classifier"))?;
        let manifest = SaeManifest {
            spec: self.spec.clone(),
            epochs_completed: self.epochs_completed,
            loss_history: self.loss_history.clone(),
            reconstruction_history: self.reconstruction_history.clone(),
        };
        fsutil::write_json(&dir.join(SAE_MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SAE_MANIFEST);
        if !path.is_file() {
            return Err(UqError::State(format!("no autoencoder manifest at {}", path.display())));
        }
        let m: SaeManifest = fsutil::read_json(&path)?;
        let model = SupervisedAe {
            encoder: nn::load_network(&dir.join("encoder"))?,
            decoder: nn::load_network(&dir.join("decoder"))?,
            classifier: nn::load_network(&dir.join("classifier"))?,
            spec: m.spec,
            epochs_completed: m.epochs_completed,
            loss_history: m.loss_history,
            reconstruction_history: m.reconstruction_history,
        };
        let expected = model.spec.sub_specs(true)?;
        if [&model.encoder.spec, &model.decoder.spec, &model.classifier.spec] != [&expected[0], &expected[1], &expected[2]] {
            return Err(UqError::State("stored sub-networks do not match the autoencoder spec".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SaeManifest {
    spec: SupervisedAeSpec,
    epochs_completed: usize,
    loss_history: Vec<f64>,
    reconstruction_history: Vec<f64>,
}

pub fn train_sae(spec: &SupervisedAeSpec, dataset: &LabeledDataset, config: &TrainConfig) -> Result<SupervisedAe> {
    SupervisedAe::init(spec)?.train(dataset, config)
}

/// Row-wise mean squared difference of two `[N, D]` tensors.
pub fn pixel_mse(x: &Tensor, reconstruction: &Tensor) -> Result<Vec<f64>> {
    if x.rows() != reconstruction.rows() || x.row_len() != reconstruction.row_len() {
        return Err(UqError::Dimension(format!(
            "inputs {:?} vs reconstructions {:?}",
            x.shape(),
            reconstruction.shape()
        )));
    }
    let d = x.row_len() as f64;
    Ok((0..x.rows())
        .map(|i| {
            x.row(i)
                .iter()
                .zip(reconstruction.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / d
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    InDistribution,
    OutOfDistribution,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::InDistribution => "in_distribution",
            Origin::OutOfDistribution => "out_of_distribution",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    In,
    Out,
}

/// Reconstruction error of one sample and its verdict at the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OodScore {
    /// Index within its own dataset.
    pub sample_id: usize,
    pub origin: Origin,
    pub error: f64,
    pub verdict: Verdict,
}

impl OodScore {
    pub fn new(sample_id: usize, origin: Origin, error: f64, tau: f64) -> Self {
        OodScore {
            sample_id,
            origin,
            error,
            verdict: if error > tau { Verdict::Out } else { Verdict::In },
        }
    }
}

/// Scores both halves of the pair (in-distribution first); out-of-distribution
/// samples are the positives.
pub fn ood_detect(model: &SupervisedAe, pair: &OodPair, tau: f64) -> Result<Vec<OodScore>> {
    if tau.is_nan() || tau < 0.0 {
        return Err(UqError::Parameter(format!("threshold must be >= 0, got {tau}")));
    }
    if pair.in_distribution.sample_shape() != pair.out_of_distribution.sample_shape() {
        return Err(UqError::Data("OOD pair halves differ in sample shape".into()));
    }
    let ind = model.reconstruction_error(&pair.in_distribution.images)?;
    let ood = model.reconstruction_error(&pair.out_of_distribution.images)?;
    Ok(ind
        .into_iter()
        .enumerate()
        .map(|(i, e)| OodScore::new(i, Origin::InDistribution, e, tau))
        .chain(
            ood.into_iter()
                .enumerate()
                .map(|(i, e)| OodScore::new(i, Origin::OutOfDistribution, e, tau)),
        )
        .collect())
}

/// `(score, is_ood)` pairs for the evaluation harness.
pub fn detection_inputs(scores: &[OodScore]) -> Vec<(f64, bool)> {
    scores
        .iter()
        .map(|s| (s.error, s.origin == Origin::OutOfDistribution))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodScoreRow {
    pub sample_id: usize,
    pub origin: Origin,
    pub score: f64,
    pub scorer: String,
}

/// CSV with header `sample_id,origin,score,scorer`.
pub fn write_ood_scores(path: &Path, rows: &[OodScoreRow]) -> Result<()> {
    fsutil::write_csv(path, rows)
}

pub fn read_ood_scores(path: &Path) -> Result<Vec<OodScoreRow>> {
    fsutil::read_csv(path)
}

/// Writes the first `m` inputs and their reconstructions as `inputs.uqt` and
/// `reconstructions.uqt` (both shaped like the input batch).
pub fn write_reconstructions(model: &SupervisedAe, images: &Tensor, m: usize, dir: &Path) -> Result<()> {
    let m = m.min(images.rows());
    if m == 0 {
        return Err(UqError::EmptyInput("no samples to dump".into()));
    }
    let x = images.select_rows(&(0..m).collect::<Vec<_>>())?;
    let shape = x.shape().to_vec();
    let xhat = model.reconstruct(&x)?.reshape(shape)?;
    x.save(&dir.join("inputs.uqt"))?;
    xhat.save(&dir.join("reconstructions.uqt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Normalization;
    use crate::nn::OptimizerConfig;

    fn small_spec(lambda: f64) -> SupervisedAeSpec {
        SupervisedAeSpec {
            input_shape: vec![8],
            encoder: vec![LayerSpec::Dense { units: 6 }, LayerSpec::Relu, LayerSpec::Dense { units: 3 }],
            decoder: vec![LayerSpec::Dense { units: 6 }, LayerSpec::Relu, LayerSpec::Dense { units: 8 }],
            n_classes: 3,
            lambda,
            seed: 2,
        }
    }

    fn pixels(n: usize, dim: usize, seed: u64) -> LabeledDataset {
        let mut rng = Rng::new(seed, 0);
        let data = (0..n * dim).map(|_| 0.2 + 0.6 * rng.uniform()).collect();
        let labels = (0..n).map(|i| i % 3).collect();
        LabeledDataset::new(Tensor::new(vec![n, dim], data).unwrap(), labels, 3, "px", Normalization::UnitInterval)
            .unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(small_spec(1.0).validate().is_ok());
        assert!(matches!(small_spec(0.0).validate(), Err(UqError::Parameter(_))));
        let mut s = small_spec(1.0);
        s.decoder[2] = LayerSpec::Dense { units: 7 };
        assert!(matches!(s.validate(), Err(UqError::Spec(_))));
        let mut s = small_spec(1.0);
        s.encoder[2] = LayerSpec::Dense { units: 8 };
        assert!(matches!(s.validate(), Err(UqError::Spec(_))));
        assert!(SupervisedAeSpec::reference(&[1, 28, 28], 10, 0).validate().is_ok());
    }

    #[test]
    fn vanishing_lambda_leaves_reconstruction_gradients() {
        let ds = pixels(16, 8, 1);
        let tiny = SupervisedAe::init(&small_spec(1e-10)).unwrap();
        let g = tiny.loss_and_gradients(&ds.images, &ds.labels, &mut Rng::new(0, 0)).unwrap();
        // the same encoder/decoder driven by reconstruction alone
        let (z, enc_cache) = tiny.encoder.forward_train(&ds.images, &mut Rng::new(0, 0)).unwrap();
        let (xhat, dec_cache) = tiny.decoder.forward_train(&z, &mut Rng::new(0, 0)).unwrap();
        let (_, d) = loss_and_grad(Head::Sigmoid, LossKind::Mse, &xhat, &ds.images, 1.0).unwrap();
        let (_, dz) = tiny.decoder.backward_from_logits(&dec_cache, &d, true).unwrap();
        let (plain, _) = tiny.encoder.backward_from_logits(&enc_cache, &dz, false).unwrap();
        let max_diff = g
            .encoder
            .tensors()
            .zip(plain.tensors())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "{max_diff}");
        let cls_max = g.classifier.tensors().flat_map(|t| t.data().to_vec()).fold(0.0, |m: f64, v| m.max(v.abs()));
        assert!(cls_max < 1e-9);
    }

    #[test]
    fn full_width_autoencoder_reconstructs_nearly_perfectly() {
        let ds = pixels(100, 8, 3);
        let mut spec = small_spec(0.01);
        spec.encoder = vec![LayerSpec::Dense { units: 16 }, LayerSpec::Relu, LayerSpec::Dense { units: 8 }];
        spec.decoder = vec![LayerSpec::Dense { units: 16 }, LayerSpec::Relu, LayerSpec::Dense { units: 8 }];
        assert!(spec.validate().is_err());
        let model = SupervisedAe::build(&spec, true).unwrap();
        let cfg = TrainConfig::new(OptimizerConfig::adam(0.005), 400, 10, 1);
        let trained = model.train(&ds, &cfg).unwrap();
        let err = trained.reconstruction_error(&ds.images).unwrap();
        let mean = err.iter().sum::<f64>() / err.len() as f64;
        assert!(mean < 1e-3, "mean reconstruction error {mean}");
        assert_eq!(trained.reconstruction_history.len(), 400);
    }

    #[test]
    fn hand_mse() {
        let x = Tensor::zeros(&[1, 784]);
        let r = Tensor::filled(&[1, 784], 0.1);
        assert!((pixel_mse(&x, &r).unwrap()[0] - 0.01).abs() < 1e-15);
        assert_eq!(pixel_mse(&r, &r).unwrap(), vec![0.0]);
        assert!(pixel_mse(&x, &Tensor::zeros(&[1, 783])).is_err());
    }

    #[test]
    fn threshold_extremes_and_permutation_invariance() {
        let model = SupervisedAe::init(&small_spec(1.0)).unwrap();
        let a = pixels(10, 8, 4);
        let b = pixels(12, 8, 5);
        let pair = OodPair::new(a.clone(), b).unwrap();
        let all_out = ood_detect(&model, &pair, 0.0).unwrap();
        assert!(all_out.iter().all(|s| s.verdict == Verdict::Out));
        let none = ood_detect(&model, &pair, f64::INFINITY).unwrap();
        assert!(none.iter().all(|s| s.verdict == Verdict::In));
        assert!(ood_detect(&model, &pair, -1.0).is_err());
        assert_eq!(detection_inputs(&all_out).iter().filter(|x| x.1).count(), 12);

        let errs = model.reconstruction_error(&a.images).unwrap();
        let perm: Vec<usize> = (0..10).rev().collect();
        let rev = model.reconstruction_error(&a.images.select_rows(&perm).unwrap()).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(rev[i], errs[p]);
        }
        assert!(model.reconstruction_error(&Tensor::zeros(&[2, 7])).is_err());
    }

    #[test]
    fn save_load_round_trip_and_dumps() {
        let dir = tempfile::tempdir().unwrap();
        let ds = pixels(20, 8, 6);
        let cfg = TrainConfig::new(OptimizerConfig::adam(0.01), 2, 5, 0);
        let model = train_sae(&small_spec(1.0), &ds, &cfg).unwrap();
        model.save(dir.path()).unwrap();
        assert_eq!(SupervisedAe::load(dir.path()).unwrap(), model);
        write_reconstructions(&model, &ds.images, 4, dir.path()).unwrap();
        assert_eq!(Tensor::load(&dir.path().join("reconstructions.uqt")).unwrap().shape(), &[4, 8]);
        let rows = vec![OodScoreRow { sample_id: 0, origin: Origin::OutOfDistribution, score: 0.5, scorer: SCORER_ID.into() }];
        let p = dir.path().join("ood.csv");
        write_ood_scores(&p, &rows).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("sample_id,origin,score,scorer\n"));
        assert_eq!(read_ood_scores(&p).unwrap(), rows);
    }
}
