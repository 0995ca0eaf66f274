use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, StatsError};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaSolver {
    /// Full symmetric eigendecomposition of the explicit `d x d` covariance.
    Dense,
    /// Block subspace iteration with Rayleigh-Ritz on the smaller of the
    /// covariance and the Gram matrix. Falls back to `Dense` if it stalls.
    #[default]
    Iterative,
}

const MAX_ITERS: usize = 500;
const RESIDUAL_TOL: f64 = 1e-10;
const ZERO_SNAP: f64 = 1e-12;

/// Sorted top-`l` eigenvalues of the sample covariance of the rows of the
/// row-major `n x d` matrix `data`, zero-padded to `l`.
pub fn covariance_spectrum(
    data: &[f64],
    n: usize,
    d: usize,
    l: usize,
    solver: PcaSolver,
) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(StatsError::ZeroDim);
    }
    if n == 0 {
        return Err(StatsError::EmptyShard);
    }
    if data.len() != n * d {
        return Err(StatsError::Shape {
            rows: n,
            cols: d,
            actual: data.len(),
        });
    }
    if n == 1 || d == 0 {
        return Ok(vec![0.0; l]);
    }
    // roundoff in centering scales with the raw second moment
    let magnitude = data.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64;
    let zc = centered(data, n, d);
    let top = match solver {
        PcaSolver::Dense => dense_top(&covariance(&zc, n), l),
        PcaSolver::Iterative => {
            // nonzero spectra of Zc'Zc and ZcZc' coincide
            let a = if n >= d {
                covariance(&zc, n)
            } else {
                &zc * zc.transpose() / (n - 1) as f64
            };
            subspace_top(&a, l).unwrap_or_else(|| {
                log::debug!("subspace iteration stalled on {n}x{d}; using dense solver");
                dense_top(&covariance(&zc, n), l)
            })
        }
    };
    Ok(finish(top, l, magnitude))
}

fn centered(data: &[f64], n: usize, d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_row_slice(n, d, data);
    for mut col in m.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n as f64;
        col.add_scalar_mut(-mean);
    }
    m
}

fn covariance(zc: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    zc.transpose() * zc / (n - 1) as f64
}

fn sorted_desc(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn dense_top(a: &DMatrix<f64>, l: usize) -> Vec<f64> {
    let mut v = sorted_desc(SymmetricEigen::new(a.clone()).eigenvalues.iter().copied());
    v.truncate(l);
    v
}

/// Clamps roundoff negatives and near-zero values to exact zero, pads to `l`.
fn finish(mut top: Vec<f64>, l: usize, magnitude: f64) -> Vec<f64> {
    let lead = top.first().copied().unwrap_or(0.0).max(magnitude);
    for v in &mut top {
        if *v <= ZERO_SNAP * lead {
            *v = 0.0;
        }
    }
    top.resize(l, 0.0);
    top
}

fn orthonormal(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn subspace_top(a: &DMatrix<f64>, l: usize) -> Option<Vec<f64>> {
    let m = a.nrows();
    let k = l.min(m);
    let b = m.min((2 * l).max(l + 10));
    if b == m {
        return Some(dense_top(a, k));
    }
    let scale = a.diagonal().iter().sum::<f64>();
    if scale <= 0.0 {
        return Some(vec![0.0; k]);
    }
    let mut rng = seed::stream(0, &[m as u64, b as u64]);
    let mut q = orthonormal(DMatrix::from_fn(m, b, |_, _| rng.gen_range(-1.0..1.0)));
    for _ in 0..MAX_ITERS {
        let w = a * &q;
        let h = q.transpose() * &w;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let v = DMatrix::from_fn(b, b, |r, c| eig.eigenvectors[(r, order[c])]);
        let theta: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let wv = &w * &v;
        let qv = &q * &v;
        let converged = (0..k).all(|j| {
            let r = wv.column(j) - qv.column(j) * theta[j];
            r.norm() <= RESIDUAL_TOL * scale
        });
        if converged {
            return Some(theta[..k].to_vec());
        }
        q = orthonormal(wv);
    }
    None
}
