//! Small dense matrix kernels.
//!
//! Everything here is row-major `Vec<f64>` storage sized for the moderate
//! dimensions of the flow (a few hundred at most).

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::dim(c, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim(self.cols, x.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `Aᵀx`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::dim(self.rows, x.len()));
        }
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (yj, aij) in y.iter_mut().zip(self.row(i)) {
                *yj += aij * xi;
            }
        }
        Ok(y)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::dim(self.cols, other.rows));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `max |A - B|` over entries.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Square lower-triangular matrix; entries above the diagonal are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular(Matrix);

impl LowerTriangular {
    /// Takes the lower triangle of `m`; the strict upper part must be zero.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::dim(m.rows, m.cols));
        }
        for i in 0..m.rows {
            for j in i + 1..m.cols {
                if m[(i, j)] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({i},{j}) above the diagonal is nonzero"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// True when every diagonal entry is strictly positive.
    pub fn is_unit_feasible(&self) -> bool {
        (0..self.dim()).all(|i| self.0[(i, i)] > 0.0)
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].ln()).sum()
    }
}

/// `y = Lx`.
pub fn tri_matvec(l: &LowerTriangular, x: &[f64]) -> Result<Vec<f64>> {
    let n = l.dim();
    if x.len() != n {
        return Err(Error::dim(n, x.len()));
    }
    Ok((0..n)
        .map(|i| dot(&l.0.row(i)[..=i], &x[..=i]))
        .collect())
}

/// Solve `Lx = y` by forward substitution.
pub fn tri_solve(l: &LowerTriangular, y: &[f64]) -> Result<Vec<f64>> {
    let n = l.dim();
    if y.len() != n {
        return Err(Error::dim(n, y.len()));
    }
    let mut x = vec![0.0; n];
    for i in 0..n {
        let row = l.0.row(i);
        let s = dot(&row[..i], &x[..i]);
        let d = row[i];
        if d == 0.0 {
            return Err(Error::Decomposition(format!("zero pivot at row {i}")));
        }
        x[i] = (y[i] - s) / d;
    }
    Ok(x)
}

/// Solve `Lᵀx = y` by back substitution.
pub fn tri_solve_transpose(l: &LowerTriangular, y: &[f64]) -> Result<Vec<f64>> {
    let n = l.dim();
    if y.len() != n {
        return Err(Error::dim(n, y.len()));
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.0[(k, i)] * x[k];
        }
        let d = l.0[(i, i)];
        if d == 0.0 {
            return Err(Error::Decomposition(format!("zero pivot at row {i}")));
        }
        x[i] = s / d;
    }
    Ok(x)
}

/// Symmetric matrix, stored symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(Matrix);

impl SymmetricMatrix {
    /// Stores `(A + Aᵀ) / 2`.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::dim(m.rows, m.cols));
        }
        let n = m.rows;
        let mut s = m;
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        Ok(Self(s))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)]).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut m = self.0.clone();
        m.data.iter_mut().for_each(|v| *v *= c);
        Self(m)
    }
}

/// Cholesky factor `L` with `LLᵀ = A`.
pub fn cholesky(a: &SymmetricMatrix) -> Result<LowerTriangular> {
    let n = a.dim();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.0[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Decomposition(format!(
                "matrix is not positive definite (pivot {j} = {d})"
            )));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a.0[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(LowerTriangular(l))
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let l = cholesky(a)?;
    let n = a.dim();
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = tri_solve_transpose(&l, &tri_solve(&l, &e)?)?;
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    SymmetricMatrix::new(inv)
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Sorted in descending order.
    pub values: Vec<f64>,
    /// Column `k` is the eigenvector for `values[k]`.
    pub vectors: Matrix,
}

const MAX_EIGEN_DIM: usize = 2000;

/// Cyclic Jacobi eigendecomposition.
///
/// Eigenvalues come out in descending order; every eigenvector is signed so
/// that its largest-magnitude component (first one on ties) is positive.
pub fn sym_eigen(a: &SymmetricMatrix) -> Result<SymEigen> {
    let n = a.dim();
    if n > MAX_EIGEN_DIM {
        return Err(Error::Capability(format!(
            "sym_eigen supports d <= {MAX_EIGEN_DIM}, got {n}"
        )));
    }
    let mut m = a.0.clone();
    let mut v = Matrix::identity(n);
    let norm = m.frobenius();
    if norm > 0.0 {
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)] * m[(i, j)])
                .sum::<f64>()
                .sqrt();
            if off <= 1e-15 * norm {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = m[(p, p)];
                    let aqq = m[(q, q)];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut best = 0;
        for i in 0..n {
            if v[(i, src)].abs() > v[(best, src)].abs() {
                best = i;
            }
        }
        let sign = if v[(best, src)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, col)] = sign * v[(i, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// Orthonormal completion by modified Gram–Schmidt.
///
/// `basis` holds orthonormal columns; `candidates` are orthogonalized against
/// the basis (and each other) in order, and the first `target - basis.len()`
/// that survive are appended. Returns the columns of the completed basis.
pub fn gram_schmidt_complete(
    basis: &[Vec<f64>],
    candidates: &[Vec<f64>],
    target: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = basis.to_vec();
    let dim = basis
        .first()
        .or(candidates.first())
        .map_or(0, Vec::len);
    let unit = (0..dim).map(|k| {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        e
    });
    for cand in candidates.iter().cloned().chain(unit) {
        if out.len() >= target {
            break;
        }
        let mut w = cand;
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for q in &out {
                let c = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let nrm = dot(&w, &w).sqrt();
        if nrm > 1e-8 {
            w.iter_mut().for_each(|v| *v /= nrm);
            out.push(w);
        }
    }
    if out.len() < target {
        return Err(Error::Decomposition(
            "could not complete orthonormal basis".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_spd(n: usize, g: &mut SplitMix64) -> SymmetricMatrix {
        let a = Matrix::from_row_major(n, n, (0..n * n).map(|_| g.normal()).collect()).unwrap();
        let mut ata = a.transpose().matmul(&a).unwrap();
        for i in 0..n {
            ata[(i, i)] += 1.0;
        }
        SymmetricMatrix::new(ata).unwrap()
    }

    #[test]
    fn tri_matvec_examples() {
        let l = LowerTriangular::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 3.0]]).unwrap())
            .unwrap();
        assert_eq!(tri_matvec(&l, &[1.0, 1.0]).unwrap(), vec![1.0, 5.0]);
        assert_eq!(tri_matvec(&l, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let id = LowerTriangular::identity(3);
        assert_eq!(tri_matvec(&id, &[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
        assert!(tri_matvec(&l, &[1.0]).is_err());
        assert!(LowerTriangular::new(Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap()).is_err());
    }

    #[test]
    fn tri_solve_roundtrip() {
        let mut g = SplitMix64::new(3);
        for n in [1, 4, 12] {
            let mut m = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..i {
                    m[(i, j)] = g.normal();
                }
                m[(i, i)] = 1e-6 + g.next_open01();
            }
            let l = LowerTriangular::new(m).unwrap();
            let x: Vec<f64> = (0..n).map(|_| g.normal()).collect();
            let y = tri_matvec(&l, &x).unwrap();
            let back = tri_solve(&l, &y).unwrap();
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn cholesky_examples() {
        let id = cholesky(&SymmetricMatrix::identity(3)).unwrap();
        assert_eq!(id.matrix(), &Matrix::identity(3));
        let a = SymmetricMatrix::new(Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 5.0]]).unwrap())
            .unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l.matrix().to_rows(), vec![vec![2.0, 0.0], vec![1.0, 2.0]]);
        let bad = SymmetricMatrix::new(Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap())
            .unwrap();
        assert!(matches!(cholesky(&bad), Err(Error::Decomposition(_))));
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let mut g = SplitMix64::new(11);
        for k in 0..10 {
            let a = random_spd(2 + k, &mut g);
            let l = cholesky(&a).unwrap();
            let llt = l.matrix().matmul(&l.matrix().transpose()).unwrap();
            assert!(llt.max_abs_diff(a.matrix()) <= 1e-10 * a.matrix().max_abs());
        }
    }

    #[test]
    fn spd_inverse_is_inverse() {
        let mut g = SplitMix64::new(5);
        let a = random_spd(6, &mut g);
        let inv = spd_inverse(&a).unwrap();
        let prod = a.matrix().matmul(inv.matrix()).unwrap();
        assert!(prod.max_abs_diff(&Matrix::identity(6)) < 1e-10);
    }

    #[test]
    fn eigen_diagonal_and_2x2() {
        let e = sym_eigen(&SymmetricMatrix::new(Matrix::diag(&[1.0, 3.0, 2.0])).unwrap()).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        assert_eq!(e.vectors.column(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(e.vectors.column(1), vec![0.0, 0.0, 1.0]);

        let a = SymmetricMatrix::new(Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap())
            .unwrap();
        let e = sym_eigen(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12 && (e.values[1] - 1.0).abs() < 1e-12);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vectors.column(0);
        let v1 = e.vectors.column(1);
        assert!((v0[0].abs() - s).abs() < 1e-12 && (v0[0] - v0[1]).abs() < 1e-12);
        assert!((v1[0] + v1[1]).abs() < 1e-12 && (v1[0].abs() - s).abs() < 1e-12);
    }

    #[test]
    fn eigen_rank_one() {
        let v = [1.0, -2.0, 0.5, 3.0];
        let n = v.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = v[i] * v[j];
            }
        }
        let e = sym_eigen(&SymmetricMatrix::new(m).unwrap()).unwrap();
        let nrm2: f64 = v.iter().map(|x| x * x).sum();
        assert!((e.values[0] - nrm2).abs() < 1e-10);
        for &l in &e.values[1..] {
            assert!(l.abs() < 1e-10);
        }
    }

    #[test]
    fn eigen_random_residual_and_orthogonality() {
        let mut g = SplitMix64::new(21);
        for n in [3, 8, 30] {
            let a = random_spd(n, &mut g);
            let e = sym_eigen(&a).unwrap();
            let u = &e.vectors;
            let utu = u.transpose().matmul(u).unwrap();
            assert!(utu.max_abs_diff(&Matrix::identity(n)) <= 1e-10);
            let au = a.matrix().matmul(u).unwrap();
            let ul = u.matmul(&Matrix::diag(&e.values)).unwrap();
            assert!(au.max_abs_diff(&ul) <= 1e-8 * a.matrix().max_abs());
            for w in e.values.windows(2) {
                assert!(w[0] >= w[1]);
            }
            for k in 0..n {
                let col = u.column(k);
                let big = col.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                assert!(big > 0.0);
            }
        }
    }

    #[test]
    fn gram_schmidt_completes_basis() {
        let basis = vec![vec![1.0, 0.0, 0.0]];
        let cands = vec![vec![1.0, 1.0, 0.0]];
        let full = gram_schmidt_complete(&basis, &cands, 3).unwrap();
        assert_eq!(full.len(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(&full[i], &full[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-12);
            }
        }
    }
}
