use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};

/// One entry of a layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fully connected layer on a flat input.
    Dense { units: usize },
    /// 3×3 convolution, stride 1, same padding, on `[channels, h, w]`.
    Conv2d { filters: usize },
    /// 2×2 max pooling with stride 2.
    #[serde(rename = "maxpool2d")]
    MaxPool2d,
    Relu,
    Flatten,
    /// Inverted dropout with drop probability `rate`.
    Dropout { rate: f64 },
}

impl LayerSpec {
    pub fn has_parameters(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }

    /// Output shape for a single sample of shape `input`.
    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err("dense layer needs at least one unit".into());
                }
                if input.len() != 1 {
                    return Err(format!("dense expects a flat input, got {input:?}"));
                }
                Ok(vec![units])
            }
            LayerSpec::Conv2d { filters } => {
                if filters == 0 {
                    return Err("conv2d needs at least one filter".into());
                }
                if input.len() != 3 {
                    return Err(format!("conv2d expects [channels, h, w], got {input:?}"));
                }
                Ok(vec![filters, input[1], input[2]])
            }
            LayerSpec::MaxPool2d => {
                if input.len() != 3 || input[1] < 2 || input[2] < 2 {
                    return Err(format!("maxpool2d expects [c, h>=2, w>=2], got {input:?}"));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate {rate} outside [0, 1)"));
                }
                Ok(input.to_vec())
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { units } => write!(f, "dense({units})"),
            LayerSpec::Conv2d { filters } => write!(f, "conv2d({filters})"),
            LayerSpec::Dropout { rate } => write!(f, "dropout({rate})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Output activation applied to the final layer's pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Softmax,
    /// ln(1 + e^z): strictly positive, not normalized across classes.
    Softplus,
    Linear,
    /// Logistic squashing into (0, 1); used by the autoencoder decoder.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CategoricalCrossEntropy,
    Mse,
    HingeMulticlass,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::CategoricalCrossEntropy => "categorical_cross_entropy",
            LossKind::Mse => "mse",
            LossKind::HingeMulticlass => "hinge_multiclass",
        }
    }

    pub fn parse(s: &str) -> Option<LossKind> {
        match s {
            "categorical_cross_entropy" | "cce" | "cross_entropy" => {
                Some(LossKind::CategoricalCrossEntropy)
            }
            "mse" => Some(LossKind::Mse),
            "hinge_multiclass" | "hinge" => Some(LossKind::HingeMulticlass),
            _ => None,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Declarative description of a network: per-sample input shape, layer
/// stack, output head, training loss and initialization seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub head: Head,
    pub loss: LossKind,
    pub seed: u64,
}

impl NetworkSpec {
    /// Per-sample shapes: entry 0 is the input, entry `i + 1` the output of
    /// layer `i`. Fails naming the first incompatible pair.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(UqError::Spec(format!(
                "input shape {:?} must be non-empty with positive dims",
                self.input_shape
            )));
        }
        if self.layers.is_empty() {
            return Err(UqError::Spec("network has no layers".into()));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = shapes.last().unwrap();
            let next = layer.output_shape(prev).map_err(|why| {
                let before = if i == 0 {
                    format!("input{:?}", self.input_shape)
                } else {
                    format!("layer {} ({})", i - 1, self.layers[i - 1])
                };
                UqError::Spec(format!("{before} -> layer {i} ({layer}): {why}"))
            })?;
            shapes.push(next);
        }
        let out = shapes.last().unwrap();
        if out.len() != 1 {
            return Err(UqError::Spec(format!(
                "network output must be flat, got {out:?}; add flatten and dense layers"
            )));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn input_size(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_size(&self) -> Result<usize> {
        Ok(self.shapes()?.last().unwrap()[0])
    }

    pub fn has_dropout(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Dropout { .. }))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Reference convolutional classifier for 28×28 grayscale digits:
    /// conv(8)→relu→pool→conv(16)→relu→pool→flatten→dense(64)→relu→dropout(0.25)→dense(n).
    pub fn reference_cnn(n_classes: usize, head: Head, seed: u64) -> NetworkSpec {
        NetworkSpec {
            input_shape: vec![1, 28, 28],
            layers: vec![
                LayerSpec::Conv2d { filters: 8 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d,
                LayerSpec::Conv2d { filters: 16 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 64 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.25 },
                LayerSpec::Dense { units: n_classes },
            ],
            head,
            loss: LossKind::CategoricalCrossEntropy,
            seed,
        }
    }

    /// Flatten followed by `hidden_layers` blocks of dense(width)+relu and a
    /// final dense(n_classes).
    pub fn mlp(
        input_shape: &[usize],
        hidden_layers: usize,
        width: usize,
        n_classes: usize,
        head: Head,
        seed: u64,
    ) -> NetworkSpec {
        let mut layers = vec![LayerSpec::Flatten];
        for _ in 0..hidden_layers {
            layers.push(LayerSpec::Dense { units: width });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Dense { units: n_classes });
        NetworkSpec {
            input_shape: input_shape.to_vec(),
            layers,
            head,
            loss: LossKind::CategoricalCrossEntropy,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_cnn_shapes() {
        let spec = NetworkSpec::reference_cnn(10, Head::Softmax, 0);
        let shapes = spec.shapes().unwrap();
        assert_eq!(shapes[3], vec![8, 14, 14]);
        assert_eq!(shapes[6], vec![16, 7, 7]);
        assert_eq!(shapes[7], vec![784]);
        assert_eq!(spec.output_size().unwrap(), 10);
        assert!(spec.has_dropout());
    }

    #[test]
    fn incompatible_pair_is_named() {
        let spec = NetworkSpec {
            input_shape: vec![1, 4, 4],
            layers: vec![LayerSpec::Conv2d { filters: 2 }, LayerSpec::Dense { units: 3 }],
            head: Head::Softmax,
            loss: LossKind::CategoricalCrossEntropy,
            seed: 0,
        };
        let msg = spec.validate().unwrap_err().to_string();
        assert!(msg.contains("layer 0 (conv2d(2)) -> layer 1 (dense(3))"), "{msg}");
    }

    #[test]
    fn dropout_rate_must_be_below_one() {
        let mut spec = NetworkSpec::mlp(&[4], 1, 3, 2, Head::Softmax, 0);
        spec.layers.insert(2, LayerSpec::Dropout { rate: 1.0 });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = NetworkSpec::reference_cnn(11, Head::Softplus, 42);
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"maxpool2d\""));
        let back: NetworkSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
