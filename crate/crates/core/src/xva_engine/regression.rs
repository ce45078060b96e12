//! Least-squares conditional expectations on polynomial functions of the state.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

const MAX_DEGREE: u32 = 3;
const CHUNK: usize = 4096;

/// Fits `E[y | x]` on the rows selected by `mask` and evaluates the fit on every row.
///
/// Factors are standardized; those with no spread across the selected rows are
/// dropped, leaving at least the constant term. Rank-deficient designs are solved
/// in the minimum-norm sense.
pub(crate) fn fit_and_predict(
    factors: &[[f64; 3]],
    enabled: [bool; 3],
    y: &[f64],
    mask: &[bool],
) -> Vec<f64> {
    let n_fit = mask.iter().filter(|&&m| m).count();
    if n_fit == 0 {
        return vec![0.0; factors.len()];
    }
    let (mean, scale) = standardization(factors, mask, n_fit);
    let active: Vec<usize> = (0..3)
        .filter(|&j| enabled[j] && scale[j] > 1e-12 * (1.0 + mean[j].abs()))
        .collect();
    if active.is_empty() {
        let avg = ordered_sum(y.len(), |i| if mask[i] { y[i] } else { 0.0 }) / n_fit as f64;
        return vec![avg; factors.len()];
    }
    let exponents = monomials(active.len());
    let terms = exponents.len();
    let row = |i: usize, out: &mut [f64]| {
        let mut z = [0.0; 3];
        for (zk, &j) in z.iter_mut().zip(&active) {
            *zk = (factors[i][j] - mean[j]) / scale[j];
        }
        for (t, e) in exponents.iter().enumerate() {
            out[t] = e
                .iter()
                .zip(&z)
                .map(|(&p, &zj)| zj.powi(p as i32))
                .product();
        }
    };

    // normal equations, accumulated in fixed chunks for thread-count independence
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..factors.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut xtx = vec![0.0; terms * terms];
            let mut xty = vec![0.0; terms];
            let mut x = vec![0.0; terms];
            for &i in idx {
                if !mask[i] {
                    continue;
                }
                row(i, &mut x);
                for a in 0..terms {
                    xty[a] += x[a] * y[i];
                    for b in a..terms {
                        xtx[a * terms + b] += x[a] * x[b];
                    }
                }
            }
            (xtx, xty)
        })
        .collect();
    let mut xtx = DMatrix::<f64>::zeros(terms, terms);
    let mut xty = DVector::<f64>::zeros(terms);
    for (pa, pb) in &partials {
        for a in 0..terms {
            xty[a] += pb[a];
            for b in a..terms {
                xtx[(a, b)] += pa[a * terms + b];
            }
        }
    }
    for a in 0..terms {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let svd = xtx.svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-12;
    let beta = svd
        .solve(&xty, cutoff)
        .unwrap_or_else(|_| DVector::zeros(terms));

    (0..factors.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; terms],
            |x, i| {
                row(i, x);
                x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum()
            },
        )
        .collect()
}

fn standardization(factors: &[[f64; 3]], mask: &[bool], n_fit: usize) -> ([f64; 3], [f64; 3]) {
    let mut mean = [0.0; 3];
    let mut scale = [0.0; 3];
    for j in 0..3 {
        mean[j] = ordered_sum(factors.len(), |i| if mask[i] { factors[i][j] } else { 0.0 })
            / n_fit as f64;
        let var = ordered_sum(factors.len(), |i| {
            if mask[i] {
                let d = factors[i][j] - mean[j];
                d * d
            } else {
                0.0
            }
        }) / n_fit as f64;
        scale[j] = var.sqrt();
    }
    (mean, scale)
}

fn ordered_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partials: Vec<f64> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| idx.iter().map(|&i| f(i)).sum())
        .collect();
    partials.iter().sum()
}

/// Exponent tuples of all monomials in `d` variables of total degree ≤ 3.
fn monomials(d: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0; d]];
    let mut frontier = out.clone();
    for _ in 0..MAX_DEGREE {
        let mut next = Vec::new();
        for e in &frontier {
            // extend only at or after the last raised variable to avoid duplicates
            let start = e.iter().rposition(|&p| p > 0).unwrap_or(0);
            for j in start..d {
                let mut f = e.clone();
                f[j] += 1;
                next.push(f);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
