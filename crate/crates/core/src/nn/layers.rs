//! Batched forward/backward kernels over raw row-major buffers.

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_len: usize,
    pub out_len: usize,
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let mut y = vec![0.0; d.batch * d.out_ch * d.out_len];
    for b in 0..d.batch {
        for o in 0..d.out_ch {
            let out = &mut y[(b * d.out_ch + o) * d.out_len..][..d.out_len];
            out.fill(bias[o]);
            for i in 0..d.in_ch {
                let xrow = &x[(b * d.in_ch + i) * d.in_len..][..d.in_len];
                let wrow = &w[(o * d.in_ch + i) * d.kernel..][..d.kernel];
                if d.stride == 1 {
                    for (k, &wk) in wrow.iter().enumerate() {
                        axpy(wk, &xrow[k..k + d.out_len], out);
                    }
                } else {
                    for (t, ot) in out.iter_mut().enumerate() {
                        *ot += dot(wrow, &xrow[t * d.stride..t * d.stride + d.kernel]);
                    }
                }
            }
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn conv1d_backward(x: &[f64], w: &[f64], dy: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; d.out_ch];
    for b in 0..d.batch {
        for o in 0..d.out_ch {
            let g = &dy[(b * d.out_ch + o) * d.out_len..][..d.out_len];
            db[o] += g.iter().sum::<f64>();
            for i in 0..d.in_ch {
                let xoff = (b * d.in_ch + i) * d.in_len;
                let woff = (o * d.in_ch + i) * d.kernel;
                for k in 0..d.kernel {
                    let wk = w[woff + k];
                    if d.stride == 1 {
                        dw[woff + k] += dot(g, &x[xoff + k..xoff + k + d.out_len]);
                        axpy(wk, g, &mut dx[xoff + k..xoff + k + d.out_len]);
                    } else {
                        for (t, &gt) in g.iter().enumerate() {
                            let pos = xoff + t * d.stride + k;
                            dw[woff + k] += gt * x[pos];
                            dx[pos] += wk * gt;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// `y` is the forward output; the mask is `y > 0`.
pub(crate) fn relu_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect()
}

/// Non-overlapping max pooling over the last axis; trailing remainder dropped.
/// Returns the output and the flat input index of each maximum.
pub(crate) fn maxpool1d_forward(x: &[f64], rows: usize, in_len: usize, kernel: usize) -> (Vec<f64>, Vec<usize>) {
    let out_len = in_len / kernel;
    let mut y = Vec::with_capacity(rows * out_len);
    let mut idx = Vec::with_capacity(rows * out_len);
    for r in 0..rows {
        let row = &x[r * in_len..(r + 1) * in_len];
        for t in 0..out_len {
            let mut best = t * kernel;
            for j in t * kernel + 1..(t + 1) * kernel {
                if row[j] > row[best] {
                    best = j;
                }
            }
            y.push(row[best]);
            idx.push(r * in_len + best);
        }
    }
    (y, idx)
}

pub(crate) fn maxpool1d_backward(idx: &[usize], dy: &[f64], in_numel: usize) -> Vec<f64> {
    let mut dx = vec![0.0; in_numel];
    for (&i, &g) in idx.iter().zip(dy) {
        dx[i] += g;
    }
    dx
}

pub(crate) fn dense_forward(x: &[f64], w: &[f64], bias: &[f64], batch: usize, in_dim: usize, out_dim: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * out_dim);
    for b in 0..batch {
        let xrow = &x[b * in_dim..(b + 1) * in_dim];
        for o in 0..out_dim {
            y.push(bias[o] + dot(&w[o * in_dim..(o + 1) * in_dim], xrow));
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    batch: usize,
    in_dim: usize,
    out_dim: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; batch * in_dim];
    let mut dw = vec![0.0; out_dim * in_dim];
    let mut db = vec![0.0; out_dim];
    for b in 0..batch {
        let xrow = &x[b * in_dim..(b + 1) * in_dim];
        let dxrow = &mut dx[b * in_dim..(b + 1) * in_dim];
        for o in 0..out_dim {
            let g = dy[b * out_dim + o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            axpy(g, xrow, &mut dw[o * in_dim..(o + 1) * in_dim]);
            axpy(g, &w[o * in_dim..(o + 1) * in_dim], dxrow);
        }
    }
    (dx, dw, db)
}
