use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Result, UqError};
use crate::nn::loss::one_hot;
use crate::nn::network::{ForwardOutput, Network};
use crate::nn::optim::{Optimizer, OptimizerConfig};
use crate::rng::Rng;
use crate::tensor::{argmax, Tensor};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Rows per chunk when running inference over a whole dataset.
pub const INFER_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles and the dropout masks.
    pub shuffle_seed: u64,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig, epochs: usize, batch_size: usize, shuffle_seed: u64) -> Self {
        TrainConfig {
            optimizer,
            epochs,
            batch_size,
            shuffle_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(UqError::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(UqError::Parameter("batch size must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Mini-batch epoch driver shared by every trainer. `step` receives the
/// sample indices of one batch and a dropout generator, and returns the batch
/// mean loss. Returns the per-epoch mean losses.
pub(crate) fn fit_epochs<F>(
    n_samples: usize,
    config: &TrainConfig,
    epochs_before: usize,
    mut step: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[usize], &mut Rng) -> Result<f64>,
{
    config.validate()?;
    if n_samples == 0 {
        return Err(UqError::EmptyInput("training set is empty".into()));
    }
    let mut shuffle = Rng::new(config.shuffle_seed, SHUFFLE_STREAM);
    let mut dropout = Rng::new(config.shuffle_seed, DROPOUT_STREAM);
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let order = shuffle.permutation(n_samples);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let diverged = || UqError::Diverged {
                last_finite_epoch: epochs_before + history.len(),
            };
            let l = match step(chunk, &mut dropout) {
                Ok(l) => l,
                Err(UqError::Numeric { .. }) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !l.is_finite() {
                return Err(diverged());
            }
            total += l * chunk.len() as f64;
        }
        history.push(total / n_samples as f64);
    }
    Ok(history)
}

/// Trains a copy of `net` on `dataset` and returns it with its epoch count
/// and per-epoch mean losses extended.
pub fn train(net: &Network, dataset: &LabeledDataset, config: &TrainConfig) -> Result<Network> {
    let outputs = net.n_outputs();
    if dataset.n_classes > outputs {
        return Err(UqError::Spec(format!(
            "dataset has {} classes but the network has {outputs} outputs",
            dataset.n_classes
        )));
    }
    let mut trained = net.clone();
    let mut optimizer = Optimizer::new(config.optimizer);
    let history = fit_epochs(dataset.len(), config, net.epochs_completed, |idx, rng| {
        let batch = dataset.images.select_rows(idx)?;
        let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels[i]).collect();
        let targets = one_hot(&labels, outputs)?;
        let (l, grads) = trained.loss_and_gradients(&batch, &targets, rng, 1.0)?;
        if l.is_finite() {
            optimizer.step(trained.parameter_tensors_mut(), grads.tensors());
        }
        Ok(l)
    })?;
    trained.epochs_completed += history.len();
    trained.loss_history.extend(history);
    Ok(trained)
}

/// Inference over all rows of `images` in fixed-size chunks, concatenated.
pub fn infer_all(net: &Network, images: &Tensor) -> Result<ForwardOutput> {
    let n = images.rows();
    let mut logits = Vec::new();
    let mut outputs = Vec::new();
    let mut penult = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + INFER_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let out = net.infer(&images.select_rows(&idx)?)?;
        logits.push(out.logits);
        outputs.push(out.outputs);
        penult.push(out.penultimate);
        start = end;
    }
    let cat = |v: Vec<Tensor>| Tensor::concat_rows(&v.iter().collect::<Vec<_>>());
    Ok(ForwardOutput {
        logits: cat(logits)?,
        outputs: cat(outputs)?,
        penultimate: cat(penult)?,
    })
}

pub fn predict(net: &Network, images: &Tensor) -> Result<Vec<usize>> {
    let out = infer_all(net, images)?;
    Ok((0..out.logits.rows()).map(|r| argmax(out.logits.row(r))).collect())
}

pub fn accuracy(net: &Network, dataset: &LabeledDataset) -> Result<f64> {
    let pred = predict(net, &dataset.images)?;
    let hits = pred.iter().zip(&dataset.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / dataset.len() as f64)
}
