//! Dimension reduction from the relative score `∇ log(p/q)` with
//! `q = N(0, I)`.
//!
//! The matrix `Ĥ = (1/M) Σ g_i g_iᵀ` of relative scores at reference draws
//! is eigendecomposed; the leading `r` eigenvectors explaining a given
//! fraction of the trace span the informed subspace.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{ShapeGrid, Structure, TransportMap};
use crate::linalg::{gram_schmidt_complete, sym_eigen, Matrix, SymmetricMatrix};
use crate::lowdisc::{self, PointKind};
use crate::specfun::norm_icdf;
use crate::sum::pairwise_sum_vecs;
use crate::targets::Target;
use crate::train::FitConfig;

/// Eigenvalues below this (relative to nothing) mean `Ĥ` carries no signal.
pub const DEGENERATE_LEVEL: f64 = 1e-14;

/// `score(x) + x`.
pub fn relative_score(target: &dyn Target, x: &[f64]) -> Vec<f64> {
    target.score(x).iter().zip(x).map(|(s, xi)| s + xi).collect()
}

#[derive(Debug, Clone)]
pub struct SubspaceResult {
    /// `λ_1 ≥ … ≥ λ_d` of `Ĥ/M`.
    pub eigenvalues: Vec<f64>,
    /// Orthogonal `V = [V_r | V⊥]`, one direction per column.
    pub basis: Matrix,
    pub r: usize,
    pub m: usize,
    pub threshold: f64,
    /// Set when every eigenvalue is below [`DEGENERATE_LEVEL`]; then `r = 0`
    /// and `basis = I`.
    pub degenerate: bool,
    /// The symmetrized `Ĥ/M`.
    pub h: SymmetricMatrix,
}

impl SubspaceResult {
    /// The leading `r` columns.
    pub fn v_r(&self) -> Matrix {
        let d = self.basis.rows();
        let mut m = Matrix::zeros(d, self.r);
        for i in 0..d {
            for j in 0..self.r {
                m[(i, j)] = self.basis[(i, j)];
            }
        }
        m
    }

    /// Fraction of the trace carried by the leading `k` eigenvalues.
    pub fn mass(&self, k: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().map(|l| l.max(0.0)).sum();
        if total <= 0.0 {
            return 0.0;
        }
        self.eigenvalues.iter().take(k).map(|l| l.max(0.0)).sum::<f64>() / total
    }
}

/// Smallest `k` whose leading eigenvalues reach `threshold` of the total.
pub fn choose_rank(eigenvalues: &[f64], threshold: f64) -> usize {
    let total: f64 = eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let mut acc = 0.0;
    for (k, l) in eigenvalues.iter().enumerate() {
        acc += l.max(0.0);
        if acc >= threshold * total {
            return k + 1;
        }
    }
    eigenvalues.len()
}

pub fn estimate_subspace(target: &dyn Target, m: usize, seed: u64, kind: PointKind, threshold: f64) -> Result<SubspaceResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} not in (0, 1]")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let d = target.dim();
    let ps = lowdisc::generate_any(kind, m, d, seed)?;
    let outer: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let z: Vec<f64> = ps.point(i).iter().map(|&u| norm_icdf(u)).collect::<Result<_>>()?;
            let g = relative_score(target, &z);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Subspace(format!("non-finite relative score at sample {i}")));
            }
            let mut o = vec![0.0; d * d];
            for a in 0..d {
                for b in 0..d {
                    o[a * d + b] = g[a] * g[b];
                }
            }
            Ok(o)
        })
        .collect::<Result<_>>()?;
    let mut sum = pairwise_sum_vecs(&outer, d * d);
    sum.iter_mut().for_each(|v| *v /= m as f64);
    let h = SymmetricMatrix::new(Matrix::from_row_major(d, d, sum)?)?;
    let eig = sym_eigen(&h)?;
    if eig.values.iter().all(|&l| l < DEGENERATE_LEVEL) {
        return Ok(SubspaceResult {
            eigenvalues: eig.values,
            basis: Matrix::identity(d),
            r: 0,
            m,
            threshold,
            degenerate: true,
            h,
        });
    }
    let r = choose_rank(&eig.values, threshold);
    let cols: Vec<Vec<f64>> = (0..d).map(|j| eig.vectors.column(j)).collect();
    let full = gram_schmidt_complete(&cols[..r], &cols[r..], d)?;
    let mut basis = Matrix::zeros(d, d);
    for (j, c) in full.iter().enumerate() {
        for i in 0..d {
            basis[(i, j)] = c[i];
        }
    }
    Ok(SubspaceResult { eigenvalues: eig.values, basis, r, m, threshold, degenerate: false, h })
}

/// Initial subspace-mode map: a dense `r × r` block and a diagonal trailing
/// block in every layer, followed by the rotation `V`.
pub fn split_map_config(sub: &SubspaceResult, config: &FitConfig) -> Result<TransportMap> {
    if sub.r == 0 {
        return Err(Error::Subspace("rank 0 subspace: use full mode instead".into()));
    }
    let d = sub.basis.rows();
    let map = TransportMap::initial(
        d,
        config.base,
        config.layers,
        ShapeGrid::with_bound(config.shape_bound)?,
        Structure::Subspace { r: sub.r },
    )?;
    map.with_rotation(sub.basis.clone(), Some(sub.eigenvalues.clone()))
}
