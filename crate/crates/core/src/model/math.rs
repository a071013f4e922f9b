//! Dense kernels over row-major `f64` matrices.

use alloc::vec::Vec;

/// `out += W x` for a `out.len() x cols` matrix.
#[inline]
pub fn gemv(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `dx += W^T dy`.
#[inline]
pub fn gemv_t(w: &[f64], cols: usize, dy: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(dx.len(), cols);
    for (&d, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if d == 0.0 {
            continue;
        }
        for (x, a) in dx.iter_mut().zip(row) {
            *x += a * d;
        }
    }
}

/// `dW += dy x^T`.
#[inline]
pub fn ger(dw: &mut [f64], cols: usize, dy: &[f64], x: &[f64]) {
    for (&d, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if d == 0.0 {
            continue;
        }
        for (g, &xv) in row.iter_mut().zip(x) {
            *g += d * xv;
        }
    }
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// Probabilities and log-sum-exp of a logit vector.
pub fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&l| libm::exp(l - max)).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    (probs, max + libm::log(sum))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}
