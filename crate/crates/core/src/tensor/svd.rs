//! Singular value decomposition by one-sided Jacobi rotations.
//!
//! Matrices here stay small (at most the embedding dimension on either
//! side), so cyclic sweeps with a tight relative threshold are both
//! simple and accurate enough for the 1e-10 reconstruction contract.

use super::kernels::dot;
use crate::{Error, Result};

const CONVERGENCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Thin SVD: `m = U · diag(S) · Vt` with `U: p×r`, `S: r`, `Vt: r×q`,
/// `r = min(p, q)`. Singular values are non-negative and non-increasing;
/// U's columns and Vt's rows are orthonormal (zero singular directions
/// are completed to an orthonormal basis).
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    pub vt: Vec<f64>,
    pub p: usize,
    pub q: usize,
    pub r: usize,
}

pub fn svd(m: &[f64], p: usize, q: usize) -> Result<Svd> {
    if m.len() != p * q {
        return Err(Error::Shape(format!(
            "svd: {}x{} implies {} entries, got {}",
            p,
            q,
            p * q,
            m.len()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("svd input contains a non-finite entry".into()));
    }
    if p >= q {
        Ok(svd_tall(m, p, q))
    } else {
        // Decompose the transpose and swap factors: A = (U' S V'ᵀ)ᵀ.
        let mt = super::kernels::transpose(m, p, q);
        let t = svd_tall(&mt, q, p);
        let r = p;
        // U = V'ᵀᵀ restricted to p×r; Vt = U'ᵀ (r×q).
        let u = super::kernels::transpose(&t.vt, r, p);
        let vt = super::kernels::transpose(&t.u, q, r);
        Ok(Svd { u, s: t.s, vt, p, q, r })
    }
}

/// One-sided Jacobi for p ≥ q. Works on W = Aᵀ stored row-major so the
/// columns of A are contiguous rows; V accumulates the same rotations.
fn svd_tall(a: &[f64], p: usize, q: usize) -> Svd {
    let mut w = super::kernels::transpose(a, p, q); // q rows of length p
    let mut vt = vec![0.0; q * q];
    for i in 0..q {
        vt[i * q + i] = 1.0;
    }

    for _sweep in 0..MAX_SWEEPS {
        let mut max_off = 0.0f64;
        for i in 0..q.saturating_sub(1) {
            for j in i + 1..q {
                let (wi, wj) = row_pair(&mut w, i, j, p);
                let aa = dot(wi, wi);
                let bb = dot(wj, wj);
                let d = dot(wi, wj);
                let denom = (aa * bb).sqrt();
                if denom > 0.0 {
                    max_off = max_off.max(d.abs() / denom);
                }
                if d.abs() <= CONVERGENCE * denom || d == 0.0 {
                    continue;
                }
                let zeta = (bb - aa) / (2.0 * d);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wi, wj, c, s);
                let (vi, vj) = row_pair(&mut vt, i, j, q);
                rotate(vi, vj, c, s);
            }
        }
        if max_off <= CONVERGENCE {
            break;
        }
    }

    // Column norms are the singular values; sort descending (stable).
    let mut order: Vec<usize> = (0..q).collect();
    let norms: Vec<f64> = (0..q).map(|i| dot(&w[i * p..i * p + p], &w[i * p..i * p + p]).sqrt()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut s = Vec::with_capacity(q);
    let mut u = vec![0.0; p * q];
    let mut vt_sorted = vec![0.0; q * q];
    let mut zero_cols = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let norm = norms[src];
        s.push(norm);
        vt_sorted[dst * q..dst * q + q].copy_from_slice(&vt[src * q..src * q + q]);
        if norm > 1e-300 {
            for row in 0..p {
                u[row * q + dst] = w[src * p + row] / norm;
            }
        } else {
            zero_cols.push(dst);
        }
    }
    if !zero_cols.is_empty() {
        complete_basis(&mut u, p, q, &zero_cols);
    }

    Svd { u, s, vt: vt_sorted, p, q, r: q }
}

fn row_pair<'a>(m: &'a mut [f64], i: usize, j: usize, len: usize) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(i < j);
    let (head, tail) = m.split_at_mut(j * len);
    (&mut head[i * len..i * len + len], &mut tail[..len])
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xv, yv) in x.iter_mut().zip(y.iter_mut()) {
        let nx = c * *xv - s * *yv;
        let ny = s * *xv + c * *yv;
        *xv = nx;
        *yv = ny;
    }
}

/// Fill zero columns of U (rank deficiency) with unit vectors
/// orthogonalized against all nonzero columns, keeping U orthonormal.
fn complete_basis(u: &mut [f64], p: usize, q: usize, zero_cols: &[usize]) {
    let mut filled: Vec<usize> = (0..q).filter(|c| !zero_cols.contains(c)).collect();
    for &col in zero_cols {
        let mut best: Option<Vec<f64>> = None;
        let mut best_norm = 0.0;
        for cand in 0..p {
            let mut v = vec![0.0; p];
            v[cand] = 1.0;
            for &f in &filled {
                let proj: f64 = (0..p).map(|r| u[r * q + f] * v[r]).sum();
                for (r, item) in v.iter_mut().enumerate() {
                    *item -= proj * u[r * q + f];
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm > best_norm {
                best_norm = norm;
                best = Some(v);
            }
            if best_norm > 0.5 {
                break;
            }
        }
        let v = best.expect("p >= q guarantees a completion vector exists");
        for (r, item) in v.iter().enumerate() {
            u[r * q + col] = item / best_norm;
        }
        filled.push(col);
    }
}
