use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::nn::layers;
use crate::nn::loss::{self, apply_head};
use crate::nn::spec::{LayerSpec, NetworkSpec};
use crate::rng::{sample, Distribution, Rng};
use crate::tensor::Tensor;

/// Weight and bias of one parameterized layer.
///
/// Dense weights are `[fan_in, units]`; conv weights are `[filters, channels, 3, 3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Per-layer parameter gradients, aligned with `Network::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<Param>>,
}

impl Gradients {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| [&p.weight, &p.bias])
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                    *x += y;
                }
                for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                    *x += y;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout masks active, caches kept for backprop.
    Train,
    /// Dropout is the identity.
    Infer,
    /// Dropout masks active at prediction time (MC-Dropout).
    InferWithDropout,
}

/// Where dropout masks come from.
pub enum Masks<'a> {
    Off,
    /// One generator for the whole batch, drawn in row-major order.
    Shared(&'a mut Rng),
    /// One generator per batch row.
    PerRow(&'a mut [Rng]),
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Final pre-activations, `[batch, outputs]`.
    pub logits: Tensor,
    /// Head applied to the logits.
    pub outputs: Tensor,
    /// Activations entering the last dense layer, `[batch, features]`.
    pub penultimate: Tensor,
}

enum Cache {
    Dense { input: Vec<f64> },
    Conv { cols: Vec<f64> },
    Pool { argmax: Vec<usize>, input_len: usize },
    Relu { output: Vec<f64> },
    Dropout { mask: Vec<f64> },
    Flatten,
}

/// Saved activations of a training-mode forward pass.
pub struct TrainCache {
    batch: usize,
    layers: Vec<Cache>,
}

/// One trained (or freshly initialized) network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<Option<Param>>,
    pub epochs_completed: usize,
    /// Mean training loss per completed epoch.
    pub loss_history: Vec<f64>,
    shapes: Vec<Vec<usize>>,
}

impl Network {
    /// He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
    pub fn init(spec: &NetworkSpec, rng: &mut Rng) -> Result<Network> {
        let shapes = spec.shapes()?;
        let mut params = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let input = &shapes[i];
            let p = match *layer {
                LayerSpec::Dense { units } => {
                    let fan_in = input[0];
                    Some(he_uniform(rng, &[fan_in, units], fan_in, units)?)
                }
                LayerSpec::Conv2d { filters } => {
                    let c = input[0];
                    Some(he_uniform(rng, &[filters, c, 3, 3], c * 9, filters)?)
                }
                _ => None,
            };
            params.push(p);
        }
        Ok(Network {
            spec: spec.clone(),
            params,
            epochs_completed: 0,
            loss_history: Vec::new(),
            shapes,
        })
    }

    /// Initializes from `spec.seed` on stream 0.
    pub fn from_spec(spec: &NetworkSpec) -> Result<Network> {
        Network::init(spec, &mut Rng::new(spec.seed, 0))
    }

    /// Rebuilds a network from stored parameters, checking every shape.
    pub fn from_parts(
        spec: NetworkSpec,
        params: Vec<Option<Param>>,
        epochs_completed: usize,
        loss_history: Vec<f64>,
    ) -> Result<Network> {
        let template = Network::init(&spec, &mut Rng::new(0, 0))?;
        if template.params.len() != params.len() {
            return Err(UqError::Spec("parameter count does not match spec".into()));
        }
        for (i, (t, p)) in template.params.iter().zip(&params).enumerate() {
            let ok = match (t, p) {
                (None, None) => true,
                (Some(t), Some(p)) => {
                    t.weight.shape() == p.weight.shape() && t.bias.shape() == p.bias.shape()
                }
                _ => false,
            };
            if !ok {
                return Err(UqError::Spec(format!("layer {i} parameter shapes do not match spec")));
            }
            if let Some(p) = p {
                if !p.weight.is_finite() || !p.bias.is_finite() {
                    return Err(UqError::Numeric {
                        layer: i,
                        detail: "stored parameter is not finite".into(),
                    });
                }
            }
        }
        Ok(Network {
            spec,
            params,
            epochs_completed,
            loss_history,
            shapes: template.shapes,
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    pub fn parameter_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params
            .iter_mut()
            .flatten()
            .flat_map(|p| [&mut p.weight, &mut p.bias])
            .collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Param {
                        weight: Tensor::zeros(p.weight.shape()),
                        bias: Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect(),
        }
    }

    /// Index of the last dense layer, whose input is the penultimate embedding.
    pub fn last_dense_index(&self) -> Option<usize> {
        self.spec
            .layers
            .iter()
            .rposition(|l| matches!(l, LayerSpec::Dense { .. }))
    }

    /// Index of the first dropout layer, if any.
    pub fn first_dropout_index(&self) -> Option<usize> {
        self.spec
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Dropout { .. }))
    }

    /// Feature size entering layer `layer`.
    pub fn feature_size_before(&self, layer: usize) -> usize {
        self.shapes[layer].iter().product()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let want = self.spec.input_size();
        if batch.rank() < 2 || batch.row_len() != want {
            return Err(UqError::Dimension(format!(
                "batch shape {:?} does not match network input {:?}",
                batch.shape(),
                self.spec.input_shape
            )));
        }
        Ok(batch.rows())
    }

    /// Full forward pass. `rng` supplies dropout masks in `Train` and
    /// `InferWithDropout` modes and is untouched in `Infer`.
    pub fn forward(&self, batch: &Tensor, mode: Mode, rng: &mut Rng) -> Result<ForwardOutput> {
        let masks = match mode {
            Mode::Infer => Masks::Off,
            _ => Masks::Shared(rng),
        };
        self.forward_range(batch, 0, masks)
    }

    /// Deterministic forward pass with dropout disabled.
    pub fn infer(&self, batch: &Tensor) -> Result<ForwardOutput> {
        self.forward_range(batch, 0, Masks::Off)
    }

    /// Activations after layers `[0, end)` in inference mode.
    pub fn forward_prefix(&self, batch: &Tensor, end: usize) -> Result<Tensor> {
        let rows = self.check_batch(batch)?;
        let mut x = batch.data().to_vec();
        for i in 0..end.min(self.spec.layers.len()) {
            x = self.layer_forward(i, x, rows, &mut Masks::Off, None)?;
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&self.shapes[end.min(self.spec.layers.len())]);
        Tensor::new(shape, x)
    }

    /// Runs layers `[start, ..)` on activations `act` (which must have the
    /// shape entering layer `start`), then the head.
    pub fn forward_range(&self, act: &Tensor, start: usize, mut masks: Masks) -> Result<ForwardOutput> {
        let rows = act.rows();
        let want: usize = self.shapes[start].iter().product();
        if start == 0 {
            self.check_batch(act)?;
        } else if act.row_len() != want {
            return Err(UqError::Dimension(format!(
                "activation shape {:?} does not match layer {start} input {:?}",
                act.shape(),
                self.shapes[start]
            )));
        }
        let last_dense = self.last_dense_index();
        let mut penultimate = None;
        let mut x = act.data().to_vec();
        for i in start..self.spec.layers.len() {
            if Some(i) == last_dense {
                penultimate = Some(Tensor::new(vec![rows, self.feature_size_before(i)], x.clone())?);
            }
            x = self.layer_forward(i, x, rows, &mut masks, None)?;
        }
        let logits = Tensor::new(vec![rows, self.n_outputs()], x)?;
        let outputs = apply_head(self.spec.head, &logits);
        let penultimate = match penultimate {
            Some(p) => p,
            None => logits.clone(),
        };
        Ok(ForwardOutput {
            logits,
            outputs,
            penultimate,
        })
    }

    /// Training-mode forward pass keeping everything backprop needs. Fails
    /// with the index of the first layer that produced a non-finite value.
    pub fn forward_train(&self, batch: &Tensor, rng: &mut Rng) -> Result<(Tensor, TrainCache)> {
        let rows = self.check_batch(batch)?;
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut x = batch.data().to_vec();
        let mut masks = Masks::Shared(rng);
        for i in 0..self.spec.layers.len() {
            x = self.layer_forward(i, x, rows, &mut masks, Some(&mut caches))?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(UqError::Numeric {
                    layer: i,
                    detail: format!("{} produced a non-finite activation", self.spec.layers[i]),
                });
            }
        }
        let logits = Tensor::new(vec![rows, self.n_outputs()], x)?;
        Ok((logits, TrainCache { batch: rows, layers: caches }))
    }

    /// Backpropagates `dlogits` through the cached pass. Returns parameter
    /// gradients and the gradient with respect to the network input.
    pub fn backward_from_logits(
        &self,
        cache: &TrainCache,
        dlogits: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Gradients, Tensor)> {
        let rows = cache.batch;
        if dlogits.shape() != [rows, self.n_outputs()] {
            return Err(UqError::Dimension(format!(
                "logit gradient {:?} does not match batch {rows} x {}",
                dlogits.shape(),
                self.n_outputs()
            )));
        }
        let mut grads = self.zero_gradients();
        let mut g = dlogits.data().to_vec();
        let first_param = if need_input_grad {
            0
        } else {
            self.params.iter().position(|p| p.is_some()).unwrap_or(0)
        };
        for i in (0..self.spec.layers.len()).rev() {
            let need_dx = i > first_param || need_input_grad;
            let input_shape = &self.shapes[i];
            g = match (&self.spec.layers[i], &cache.layers[i]) {
                (LayerSpec::Dense { units }, Cache::Dense { input }) => {
                    let p = self.params[i].as_ref().unwrap();
                    let gp = grads.layers[i].as_mut().unwrap();
                    let fan_in = input_shape[0];
                    let dx = layers::dense_backward(
                        input,
                        &g,
                        rows,
                        p.weight.data(),
                        fan_in,
                        *units,
                        gp.weight.data_mut(),
                        gp.bias.data_mut(),
                        need_dx,
                    );
                    dx.unwrap_or_default()
                }
                (LayerSpec::Conv2d { filters }, Cache::Conv { cols }) => {
                    let p = self.params[i].as_ref().unwrap();
                    let gp = grads.layers[i].as_mut().unwrap();
                    let chw = (input_shape[0], input_shape[1], input_shape[2]);
                    let dx = layers::conv_backward(
                        cols,
                        &g,
                        rows,
                        chw,
                        p.weight.data(),
                        *filters,
                        gp.weight.data_mut(),
                        gp.bias.data_mut(),
                        need_dx,
                    );
                    dx.unwrap_or_default()
                }
                (LayerSpec::MaxPool2d, Cache::Pool { argmax, input_len }) => {
                    layers::maxpool_backward(&g, argmax, *input_len)
                }
                (LayerSpec::Relu, Cache::Relu { output }) => {
                    for (gv, &o) in g.iter_mut().zip(output) {
                        if o <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    g
                }
                (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => {
                    if !mask.is_empty() {
                        for (gv, m) in g.iter_mut().zip(mask) {
                            *gv *= m;
                        }
                    }
                    g
                }
                (LayerSpec::Flatten, Cache::Flatten) => g,
                _ => unreachable!("cache does not match layer"),
            };
            if !need_dx && i <= first_param {
                break;
            }
        }
        let input_grad = if need_input_grad {
            let mut shape = vec![rows];
            shape.extend_from_slice(&self.spec.input_shape);
            Tensor::new(shape, g)?
        } else {
            Tensor::zeros(&[1])
        };
        Ok((grads, input_grad))
    }

    /// Loss of the configured kind on `(batch, targets)` and its parameter
    /// gradients. `scale` multiplies the loss (and therefore every gradient).
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor,
        targets: &Tensor,
        rng: &mut Rng,
        scale: f64,
    ) -> Result<(f64, Gradients)> {
        let (logits, cache) = self.forward_train(batch, rng)?;
        let (l, dlogits) = loss::loss_and_grad(self.spec.head, self.spec.loss, &logits, targets, scale)?;
        if !l.is_finite() {
            return Err(UqError::Numeric {
                layer: self.spec.layers.len(),
                detail: "loss is not finite".into(),
            });
        }
        let (grads, _) = self.backward_from_logits(&cache, &dlogits, false)?;
        Ok((l, grads))
    }

    /// Gradients of the configured loss for class-index labels.
    pub fn backward(&self, batch: &Tensor, labels: &[usize], rng: &mut Rng) -> Result<Gradients> {
        if labels.len() != batch.rows() {
            return Err(UqError::Dimension(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch.rows()
            )));
        }
        let targets = loss::one_hot(labels, self.n_outputs())?;
        Ok(self.loss_and_gradients(batch, &targets, rng, 1.0)?.1)
    }

    fn layer_forward(
        &self,
        i: usize,
        x: Vec<f64>,
        rows: usize,
        masks: &mut Masks,
        caches: Option<&mut Vec<Cache>>,
    ) -> Result<Vec<f64>> {
        let input_shape = &self.shapes[i];
        let keep = caches.is_some();
        let (y, cache) = match self.spec.layers[i] {
            LayerSpec::Dense { .. } => {
                let p = self.params[i].as_ref().unwrap();
                let y = layers::dense_forward(&x, rows, p.weight.data(), p.bias.data(), input_shape[0]);
                (y, Cache::Dense { input: x })
            }
            LayerSpec::Conv2d { .. } => {
                let p = self.params[i].as_ref().unwrap();
                let chw = (input_shape[0], input_shape[1], input_shape[2]);
                let (y, cols) = layers::conv_forward(&x, rows, chw, p.weight.data(), p.bias.data());
                (y, Cache::Conv { cols: if keep { cols } else { Vec::new() } })
            }
            LayerSpec::MaxPool2d => {
                let chw = (input_shape[0], input_shape[1], input_shape[2]);
                let (y, argmax) = layers::maxpool_forward(&x, rows, chw);
                (y, Cache::Pool { argmax, input_len: x.len() })
            }
            LayerSpec::Relu => {
                let y: Vec<f64> = x.into_iter().map(|v| v.max(0.0)).collect();
                let output = if keep { y.clone() } else { Vec::new() };
                (y, Cache::Relu { output })
            }
            LayerSpec::Flatten => (x, Cache::Flatten),
            LayerSpec::Dropout { rate } => {
                let mut y = x;
                let mask = dropout_mask(rate, rows, y.len() / rows.max(1), masks)?;
                for (v, m) in y.iter_mut().zip(&mask) {
                    *v *= m;
                }
                (y, Cache::Dropout { mask })
            }
        };
        if let Some(c) = caches {
            c.push(cache);
        }
        Ok(y)
    }
}

/// Inverted-dropout mask: kept units are scaled by `1 / (1 - rate)`. Empty
/// when masks are off or the rate is zero.
fn dropout_mask(rate: f64, rows: usize, width: usize, masks: &mut Masks) -> Result<Vec<f64>> {
    if rate == 0.0 {
        return Ok(Vec::new());
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let draw = |rng: &mut Rng, out: &mut Vec<f64>| {
        for _ in 0..width {
            out.push(if rng.uniform() < keep { scale } else { 0.0 });
        }
    };
    let mut mask = Vec::with_capacity(rows * width);
    match masks {
        Masks::Off => return Ok(Vec::new()),
        Masks::Shared(rng) => {
            for _ in 0..rows {
                draw(rng, &mut mask);
            }
        }
        Masks::PerRow(rngs) => {
            if rngs.len() != rows {
                return Err(UqError::Dimension(format!(
                    "{} mask generators for {rows} rows",
                    rngs.len()
                )));
            }
            for rng in rngs.iter_mut() {
                draw(rng, &mut mask);
            }
        }
    }
    Ok(mask)
}

fn he_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize, units: usize) -> Result<Param> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Ok(Param {
        weight: sample(rng, Distribution::Uniform { low: -bound, high: bound }, shape)?,
        bias: Tensor::zeros(&[units]),
    })
}
