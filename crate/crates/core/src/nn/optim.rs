use serde::{Deserialize, Serialize};

use crate::error::{Result, UqError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        lr: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam { lr }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr, momentum: 0.9 }
    }

    pub fn validate(&self) -> Result<()> {
        let (lr, momentum) = match *self {
            OptimizerConfig::Sgd { lr, momentum } => (lr, momentum),
            OptimizerConfig::Adam { lr } => (lr, 0.0),
        };
        if !(lr.is_finite() && lr > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(UqError::Parameter(format!("invalid optimizer {self:?}")));
        }
        Ok(())
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Per-parameter optimizer state, indexed like the parameter list it updates.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step<'a>(
        &mut self,
        params: Vec<&mut Tensor>,
        grads: impl Iterator<Item = &'a Tensor>,
    ) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            if matches!(self.config, OptimizerConfig::Adam { .. }) {
                self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
            }
        }
        self.step += 1;
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            match self.config {
                OptimizerConfig::Sgd { lr, momentum } => {
                    let v = &mut self.first[k];
                    for ((w, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vv = momentum * *vv - lr * gv;
                        *w += *vv;
                    }
                }
                OptimizerConfig::Adam { lr } => {
                    let t = self.step as i32;
                    let c1 = 1.0 - BETA1.powi(t);
                    let c2 = 1.0 - BETA2.powi(t);
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for (i, (w, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * gv;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * gv * gv;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        *w -= lr * mh / (vh.sqrt() + EPS);
                    }
                }
            }
        }
    }
}
