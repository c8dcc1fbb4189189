//! Batched forward/backward kernels. Activations are row-major with the batch
//! on the leading axis.

use crate::tensor::linalg::gemm;

/// `y[b, :] = x[b, :] · w + bias` with `w: [fan_in, units]`.
pub fn dense_forward(x: &[f64], batch: usize, w: &[f64], bias: &[f64], fan_in: usize) -> Vec<f64> {
    let units = bias.len();
    let mut y = Vec::with_capacity(batch * units);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm(batch, fan_in, units, x, false, w, false, &mut y, 1.0);
    y
}

/// Accumulates weight/bias gradients and, when requested, returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    w: &[f64],
    fan_in: usize,
    units: usize,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    gemm(fan_in, batch, units, x, true, dy, false, dw, 1.0);
    for row in dy.chunks_exact(units) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
    need_dx.then(|| {
        let mut dx = vec![0.0; batch * fan_in];
        gemm(batch, units, fan_in, dy, false, w, true, &mut dx, 0.0);
        dx
    })
}

/// Unfolds one `[c, h, w]` sample into `[c*9, h*w]` patch columns for a 3×3
/// kernel with zero padding 1.
pub fn im2col(x: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    let out = &mut row[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w {
                        let ix = ox as isize + kx as isize - 1;
                        out[ox] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
pub fn col2im(col: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dx[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..w {
                        let ix = ox as isize + kx as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += row[oy * w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward. Returns outputs `[batch, filters, h, w]` and the
/// unfolded columns (kept for the backward pass).
pub fn conv_forward(
    x: &[f64],
    batch: usize,
    (c, h, w): (usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let filters = bias.len();
    let hw = h * w;
    let k = c * 9;
    let mut cols = vec![0.0; batch * k * hw];
    let mut y = vec![0.0; batch * filters * hw];
    for b in 0..batch {
        let col = &mut cols[b * k * hw..(b + 1) * k * hw];
        im2col(&x[b * c * hw..(b + 1) * c * hw], c, h, w, col);
        let out = &mut y[b * filters * hw..(b + 1) * filters * hw];
        for (f, plane) in out.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias[f]);
        }
        gemm(filters, k, hw, weight, false, col, false, out, 1.0);
    }
    (y, cols)
}

#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    cols: &[f64],
    dy: &[f64],
    batch: usize,
    (c, h, w): (usize, usize, usize),
    weight: &[f64],
    filters: usize,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let hw = h * w;
    let k = c * 9;
    let mut dx = need_dx.then(|| vec![0.0; batch * c * hw]);
    let mut dcol = vec![0.0; k * hw];
    for b in 0..batch {
        let col = &cols[b * k * hw..(b + 1) * k * hw];
        let g = &dy[b * filters * hw..(b + 1) * filters * hw];
        gemm(filters, hw, k, g, false, col, true, dw, 1.0);
        for (f, plane) in g.chunks_exact(hw).enumerate() {
            db[f] += plane.iter().sum::<f64>();
        }
        if let Some(dx) = dx.as_mut() {
            gemm(k, filters, hw, weight, true, g, false, &mut dcol, 0.0);
            col2im(&dcol, c, h, w, &mut dx[b * c * hw..(b + 1) * c * hw]);
        }
    }
    dx
}

/// 2×2 stride-2 max pooling. Returns outputs and, for each output, the flat
/// input index that won (first index on ties).
pub fn maxpool_forward(
    x: &[f64],
    batch: usize,
    (c, h, w): (usize, usize, usize),
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let n = batch * c * oh * ow;
    let mut y = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for plane in 0..batch * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward(dy: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (g, &i) in dy.iter().zip(argmax) {
        dx[i] += g;
    }
    dx
}
