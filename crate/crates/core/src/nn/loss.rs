//! Output heads and losses, differentiated with respect to the final
//! pre-activations ("logits").
//!
//! Categorical cross-entropy depends on the head: softmax uses the fused
//! log-softmax form, linear treats its outputs as logits, and the positive
//! heads (softplus, sigmoid) are L1-normalized inside the loss only.

use crate::error::{Result, UqError};
use crate::nn::spec::{Head, LossKind};
use crate::tensor::Tensor;

pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(softplus(z)), accurate for very negative `z`.
fn ln_softplus(z: f64) -> f64 {
    if z < -30.0 {
        z
    } else {
        softplus(z).ln()
    }
}

/// sigmoid(z) / softplus(z), the derivative of ln(softplus(z)).
fn dln_softplus(z: f64) -> f64 {
    if z < -30.0 {
        1.0
    } else {
        sigmoid(z) / softplus(z)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Applies the head row by row.
pub fn apply_head(head: Head, logits: &Tensor) -> Tensor {
    match head {
        Head::Linear => logits.clone(),
        Head::Softplus => logits.map(softplus),
        Head::Sigmoid => logits.map(sigmoid),
        Head::Softmax => {
            let mut out = logits.clone();
            let w = logits.row_len();
            for (src, dst) in logits
                .data()
                .chunks_exact(w)
                .zip(out.data_mut().chunks_exact_mut(w))
            {
                softmax_row(src, dst);
            }
            out
        }
    }
}

/// Head outputs rescaled to sum to one per row: the probability vector used
/// by ensemble spread and unknown-class scoring.
pub fn normalized_probabilities(head: Head, logits: &Tensor) -> Tensor {
    match head {
        Head::Softmax | Head::Linear => apply_head(Head::Softmax, logits),
        Head::Softplus | Head::Sigmoid => {
            let mut out = apply_head(head, logits);
            let w = out.row_len();
            for row in out.data_mut().chunks_exact_mut(w) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            out
        }
    }
}

/// Mean loss over the batch (times `scale`) and its gradient with respect to
/// the logits. `targets` has the same shape as `logits` (one-hot rows for
/// classification, pixel values for reconstruction).
pub fn loss_and_grad(
    head: Head,
    loss: LossKind,
    logits: &Tensor,
    targets: &Tensor,
    scale: f64,
) -> Result<(f64, Tensor)> {
    if logits.shape() != targets.shape() {
        return Err(UqError::Dimension(format!(
            "logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    let batch = logits.rows();
    let n = logits.row_len();
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    let mut buf = vec![0.0; n];
    let mut g_out = vec![0.0; n];
    for b in 0..batch {
        let z = logits.row(b);
        let y = targets.row(b);
        let dz = &mut grad.data_mut()[b * n..(b + 1) * n];
        let row_loss = match (loss, head) {
            (LossKind::CategoricalCrossEntropy, Head::Softmax | Head::Linear) => {
                let lse = log_sum_exp(z);
                let ysum: f64 = y.iter().sum();
                let mut l = 0.0;
                for j in 0..n {
                    l -= y[j] * (z[j] - lse);
                    dz[j] = ysum * (z[j] - lse).exp() - y[j];
                }
                l
            }
            (LossKind::CategoricalCrossEntropy, Head::Softplus) => {
                let s: f64 = z.iter().map(|&v| softplus(v)).sum();
                let ysum: f64 = y.iter().sum();
                let mut l = ysum * s.ln();
                for j in 0..n {
                    l -= y[j] * ln_softplus(z[j]);
                    dz[j] = -y[j] * dln_softplus(z[j]) + ysum * sigmoid(z[j]) / s;
                }
                l
            }
            (LossKind::CategoricalCrossEntropy, Head::Sigmoid) => {
                let s: f64 = z.iter().map(|&v| sigmoid(v)).sum();
                let ysum: f64 = y.iter().sum();
                let mut l = ysum * s.ln();
                for j in 0..n {
                    let sg = sigmoid(z[j]);
                    // d ln(sigmoid(z)) / dz = 1 - sigmoid(z)
                    l -= y[j] * (-softplus(-z[j]));
                    dz[j] = -y[j] * (1.0 - sg) + ysum * sg * (1.0 - sg) / s;
                }
                l
            }
            (LossKind::Mse | LossKind::HingeMulticlass, _) => {
                head_row(head, z, &mut buf);
                let l = match loss {
                    LossKind::Mse => {
                        let mut l = 0.0;
                        for j in 0..n {
                            let d = buf[j] - y[j];
                            l += d * d;
                            g_out[j] = 2.0 * d / n as f64;
                        }
                        l / n as f64
                    }
                    _ => hinge(&buf, y, &mut g_out),
                };
                head_backward(head, z, &buf, &g_out, dz);
                l
            }
        };
        total += row_loss;
    }
    let factor = scale / batch as f64;
    grad.data_mut().iter_mut().for_each(|g| *g *= factor);
    Ok((total * factor, grad))
}

fn head_row(head: Head, z: &[f64], out: &mut [f64]) {
    match head {
        Head::Linear => out.copy_from_slice(z),
        Head::Softplus => out.iter_mut().zip(z).for_each(|(o, &v)| *o = softplus(v)),
        Head::Sigmoid => out.iter_mut().zip(z).for_each(|(o, &v)| *o = sigmoid(v)),
        Head::Softmax => softmax_row(z, out),
    }
}

/// Chains `g_out = dL/d(head output)` through the head Jacobian.
fn head_backward(head: Head, z: &[f64], out: &[f64], g_out: &[f64], dz: &mut [f64]) {
    match head {
        Head::Linear => dz.copy_from_slice(g_out),
        Head::Softplus => {
            for j in 0..z.len() {
                dz[j] = g_out[j] * sigmoid(z[j]);
            }
        }
        Head::Sigmoid => {
            for j in 0..z.len() {
                dz[j] = g_out[j] * out[j] * (1.0 - out[j]);
            }
        }
        Head::Softmax => {
            let dot: f64 = g_out.iter().zip(out).map(|(g, p)| g * p).sum();
            for j in 0..z.len() {
                dz[j] = out[j] * (g_out[j] - dot);
            }
        }
    }
}

/// Multiclass hinge max(0, 1 + max_{j != y} o_j - o_y). At the kink the
/// subgradient is zero; the largest competitor is the lowest index on ties.
fn hinge(out: &[f64], y: &[f64], g: &mut [f64]) -> f64 {
    g.fill(0.0);
    let target: f64 = out.iter().zip(y).map(|(o, t)| o * t).sum();
    let mut rival = None;
    for j in 0..out.len() {
        if y[j] == 0.0 && rival.is_none_or(|r: usize| out[j] > out[r]) {
            rival = Some(j);
        }
    }
    let Some(r) = rival else { return 0.0 };
    let margin = 1.0 + out[r] - target;
    if margin > 0.0 {
        g[r] += 1.0;
        for j in 0..out.len() {
            g[j] -= y[j];
        }
        margin
    } else {
        0.0
    }
}

/// One-hot rows for `labels` over `n` classes.
pub fn one_hot(labels: &[usize], n: usize) -> Result<Tensor> {
    let mut t = vec![0.0; labels.len() * n];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n {
            return Err(UqError::Data(format!("label {l} out of range for {n} outputs")));
        }
        t[i * n + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), n], t)
}
