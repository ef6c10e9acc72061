//! Numerical kernels: matrix products, stable softmax, small vector ops.
//!
//! `matmul` switches to a row-parallel rayon path for large shapes when
//! the `parallel` feature is on. Each output row is produced by exactly
//! one task with a fixed inner summation order, so parallel and
//! sequential results are bit-identical.

use crate::{Error, Result};

/// Row-parallel cutover: below this many multiply-adds the rayon setup
/// costs more than it saves.
const PAR_FLOP_CUTOVER: usize = 1 << 16;

#[inline]
fn matmul_row(c_row: &mut [f64], a_row: &[f64], b: &[f64], n: usize) {
    for (p, &av) in a_row.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let b_row = &b[p * n..p * n + n];
        for (cv, &bv) in c_row.iter_mut().zip(b_row) {
            *cv += av * bv;
        }
    }
}

/// C[m,n] = A[m,k] · B[k,n], sequential.
pub fn matmul_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    for (i, c_row) in c.chunks_mut(n).enumerate() {
        matmul_row(c_row, &a[i * k..i * k + k], b, n);
    }
    c
}

/// C[m,n] = A[m,k] · B[k,n], one rayon task per output row.
#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    use rayon::prelude::*;
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    c.par_chunks_mut(n).enumerate().for_each(|(i, c_row)| {
        matmul_row(c_row, &a[i * k..i * k + k], b, n);
    });
    c
}

/// C[m,n] = A[m,k] · B[k,n].
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if m >= 8 && m * k * n >= PAR_FLOP_CUTOVER {
        return matmul_par(a, b, m, k, n);
    }
    matmul_seq(a, b, m, k, n)
}

/// Shape-checked matrix product; error names both shapes.
pub fn matmul_checked(
    a: &[f64],
    (m, ka): (usize, usize),
    b: &[f64],
    (kb, n): (usize, usize),
) -> Result<Vec<f64>> {
    if ka != kb {
        return Err(Error::Shape(format!(
            "matmul: inner dimensions disagree, left is {}x{}, right is {}x{}",
            m, ka, kb, n
        )));
    }
    Ok(matmul(a, b, m, ka, n))
}

/// C[m,n] = A[m,d] · B[n,d]ᵀ (rows-dot-rows).
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, d: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * d);
    debug_assert_eq!(b.len(), n * d);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * d..i * d + d];
        let c_row = &mut c[i * n..i * n + n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            *cv = dot(a_row, &b[j * d..j * d + d]);
        }
    }
    c
}

/// C[k,n] = A[m,k]ᵀ · B[m,n].
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let a_row = &a[i * k..i * k + k];
        let b_row = &b[i * n..i * n + n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..p * n + n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// y += alpha * x
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
pub fn add_assign(y: &mut [f64], x: &[f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += xv;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Temperature softmax with max-subtraction: `exp(v_i/tau) / Σ exp(v_j/tau)`.
///
/// Validates its inputs (this is the public entry point); the in-place
/// row variant below is the unchecked kernel used by the tape.
pub fn softmax_temperature(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Param(format!("softmax temperature must be > 0, got {}", tau)));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("softmax input contains a non-finite value".into()));
    }
    if v.is_empty() {
        return Err(Error::Input("softmax input is empty".into()));
    }
    let mut out = v.to_vec();
    softmax_row_inplace(&mut out, tau);
    Ok(out)
}

/// Unchecked stable temperature softmax of one row, in place.
pub(crate) fn softmax_row_inplace(row: &mut [f64], tau: f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = ((*x - max) / tau).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Stable log-softmax of one row, in place (unit temperature).
pub(crate) fn log_softmax_row_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    for x in row.iter_mut() {
        *x = *x - max - log_sum;
    }
}
