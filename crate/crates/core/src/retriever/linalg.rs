//! Row-major dense kernels used by the encoder. Shapes are passed explicitly.

/// `a (n×k) · w (k×m) + bias`.
pub fn affine(
    a: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    n: usize,
    k: usize,
    m: usize,
) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        if let Some(b) = bias {
            row.copy_from_slice(b);
        }
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let wrow = &w[p * m..(p + 1) * m];
            for (o, &wv) in row.iter_mut().zip(wrow) {
                *o += aip * wv;
            }
        }
    }
    out
}

/// `dout (n×m) · wᵀ` where `w` is `k×m`; the input gradient of [`affine`].
pub fn matmul_bt(dout: &[f64], w: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let drow = &dout[i * m..(i + 1) * m];
        for p in 0..k {
            out[i * k + p] = dot(drow, &w[p * m..(p + 1) * m]);
        }
    }
    out
}

/// `dw (k×m) += aᵀ · dout` for `a` of shape `n×k`; the weight gradient of [`affine`].
pub fn add_at_b(dw: &mut [f64], a: &[f64], dout: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let drow = &dout[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (g, &d) in dw[p * m..(p + 1) * m].iter_mut().zip(drow) {
                *g += aip * d;
            }
        }
    }
}

pub fn add_col_sums(db: &mut [f64], dout: &[f64], m: usize) {
    for row in dout.chunks_exact(m) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row layer normalization. Returns (normalized rows, inverse std per row, output).
pub fn layer_norm(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    n: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut hat = vec![0.0; n * d];
    let mut inv = vec![0.0; n];
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        inv[i] = s;
        for c in 0..d {
            let h = (row[c] - mean) * s;
            hat[i * d + c] = h;
            out[i * d + c] = gain[c] * h + bias[c];
        }
    }
    (hat, inv, out)
}

/// Backward pass of [`layer_norm`]; accumulates gain and bias gradients.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    dy: &[f64],
    hat: &[f64],
    inv: &[f64],
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    n: usize,
    d: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d];
    let mut dhat = vec![0.0; d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let hr = &hat[i * d..(i + 1) * d];
        for c in 0..d {
            dgain[c] += dyr[c] * hr[c];
            dbias[c] += dyr[c];
            dhat[c] = dyr[c] * gain[c];
        }
        let mean_d = dhat.iter().sum::<f64>() / d as f64;
        let mean_dh = dhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for c in 0..d {
            dx[i * d + c] = inv[i] * (dhat[c] - mean_d - hr[c] * mean_dh);
        }
    }
    dx
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `log softmax(logits)[target]` via log-sum-exp with max subtraction.
pub fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits[target] - lse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_product() {
        // [1 2; 3 4] · [1 0 1; 0 1 1] + [1 1 1]
        let out = affine(
            &[1., 2., 3., 4.],
            &[1., 0., 1., 0., 1., 1.],
            Some(&[1., 1., 1.]),
            2,
            2,
            3,
        );
        assert_eq!(out, vec![2., 3., 4., 4., 5., 8.]);
        let back = matmul_bt(
            &[1., 0., 0., 0., 0., 1.],
            &[1., 0., 1., 0., 1., 1.],
            2,
            3,
            2,
        );
        assert_eq!(back, vec![1., 0., 1., 1.]);
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        assert!((log_softmax_at(&[1000.0, 0.0], 1) + 1000.0).abs() < 1e-9);
    }
}
