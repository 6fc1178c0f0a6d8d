//! Dense matrix numerics behind every certificate check.
//!
//! Two types live here: [`Matrix`], a plain row-major rectangular matrix used
//! for dynamics, output maps and coupling, and [`SymMatrix`], a symmetric
//! matrix with a cyclic Jacobi eigensolver. Semidefiniteness is always tested
//! against an explicit tolerance on the smallest eigenvalue.

use crate::error::{Error, Result};

/// Row-major dense matrix. Zero rows or columns are allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Input(format!(
                "matrix data has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("matrix has non-finite entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from nested rows; `cols_hint` fixes the column count
    /// when there are no rows.
    pub fn from_rows(rows: &[Vec<f64>], cols_hint: usize) -> Result<Self> {
        let cols = rows.first().map_or(cols_hint, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("ragged matrix rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].to_vec())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Input(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Input(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self.mul_vec_unchecked(x))
    }

    /// `mul_vec` for callers that already validated dimensions.
    pub(crate) fn mul_vec_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Input(format!(
                "shape mismatch {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Maximum absolute row sum, the operator norm induced by the sup norm.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Assembles a block matrix from a grid of blocks with consistent shapes.
    pub fn from_blocks(blocks: &[Vec<&Matrix>]) -> Result<Matrix> {
        let row_heights: Vec<usize> = blocks
            .iter()
            .map(|r| r.first().map_or(0, |b| b.rows))
            .collect();
        let col_widths: Vec<usize> = blocks
            .first()
            .map(|r| r.iter().map(|b| b.cols).collect())
            .unwrap_or_default();
        let mut out = Matrix::zeros(row_heights.iter().sum(), col_widths.iter().sum());
        let mut r0 = 0;
        for (bi, row) in blocks.iter().enumerate() {
            if row.len() != col_widths.len() {
                return Err(Error::Input("block row length mismatch".into()));
            }
            let mut c0 = 0;
            for (bj, b) in row.iter().enumerate() {
                if b.rows != row_heights[bi] || b.cols != col_widths[bj] {
                    return Err(Error::Input("block shape mismatch".into()));
                }
                for i in 0..b.rows {
                    for j in 0..b.cols {
                        out.set(r0 + i, c0 + j, b.get(i, j));
                    }
                }
                c0 += col_widths[bj];
            }
            r0 += row_heights[bi];
        }
        Ok(out)
    }

    pub fn block_diag(blocks: &[Matrix]) -> Matrix {
        let rows = blocks.iter().map(|b| b.rows).sum();
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            for i in 0..b.rows {
                for j in 0..b.cols {
                    out.set(r0 + i, c0 + j, b.get(i, j));
                }
            }
            r0 += b.rows;
            c0 += b.cols;
        }
        out
    }

    /// Copies rows `r0..r1` and columns `c0..c1`.
    pub fn submatrix(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Matrix {
        let mut out = Matrix::zeros(r1 - r0, c1 - c0);
        for i in r0..r1 {
            for j in c0..c1 {
                out.set(i - r0, j - c0, self.get(i, j));
            }
        }
        out
    }
}

/// Symmetric matrix, symmetrized as `(A + Aᵀ)/2` on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::Input(format!(
                "symmetric matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        if m.rows == 0 {
            return Err(Error::Input("symmetric matrix must have dim >= 1".into()));
        }
        if m.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("symmetric matrix has non-finite entries".into()));
        }
        let n = m.rows;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = 0.5 * (m.get(i, j) + m.get(j, i));
            }
        }
        Ok(Self { dim: n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::from_matrix(&Matrix::from_rows(rows, 0)?)
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            data[i * n + i] = *v;
        }
        Self { dim: n, data }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            dim: n,
            data: vec![0.0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: self.data.clone(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.to_matrix().to_rows()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn neg(&self) -> SymMatrix {
        self.scale(-1.0)
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(other)?;
        Ok(SymMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        self.check_dim(other)?;
        Ok(SymMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    fn check_dim(&self, other: &SymMatrix) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Input(format!(
                "dimension mismatch {} vs {}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }

    /// Quadratic form `vᵀ A v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let dot: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            acc += v[i] * dot;
        }
        acc
    }

    /// Congruence `Tᵀ A T` for a rectangular `T` with `dim` rows.
    pub fn congruence(&self, t: &Matrix) -> Result<SymMatrix> {
        let inner = self.to_matrix().mul(t)?;
        SymMatrix::from_matrix(&t.transpose().mul(&inner)?)
    }

    /// Copies the principal block `r0..r1 × c0..c1` as a plain matrix.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Matrix {
        self.to_matrix().submatrix(r0, r1, c0, c1)
    }
}

/// Default semidefiniteness tolerance: `1e-9` scaled by `max(1, ‖A‖_F)`.
pub fn default_tol(a: &SymMatrix) -> f64 {
    1e-9 * a.norm().max(1.0)
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition via cyclic Jacobi rotations. Returns eigenvalues in
/// ascending order and the matching orthonormal eigenvectors as columns.
pub fn sym_eigen(a: &SymMatrix) -> (Vec<f64>, Matrix) {
    let n = a.dim;
    let mut m = a.data.clone();
    let mut v = Matrix::identity(n).data;
    let scale = a.norm().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vecs.set(k, new_col, v[k * n + old_col]);
        }
    }
    (values, vecs)
}

/// All eigenvalues, ascending.
pub fn sym_eigvals(a: &SymMatrix) -> Vec<f64> {
    sym_eigen(a).0
}

pub fn min_eigval(a: &SymMatrix) -> f64 {
    sym_eigvals(a)[0]
}

pub fn max_eigval(a: &SymMatrix) -> f64 {
    *sym_eigvals(a).last().expect("dim >= 1")
}

/// `A ⪰ 0` up to `tol` on the smallest eigenvalue. Test `A ⪯ 0` as
/// `is_psd(&a.neg(), tol)`.
pub fn is_psd(a: &SymMatrix, tol: f64) -> bool {
    min_eigval(a) >= -tol
}

/// Rebuilds `V diag(f(λ)) Vᵀ` from an eigen-decomposition.
fn spectral_map(values: &[f64], vecs: &Matrix, f: impl Fn(f64) -> f64) -> SymMatrix {
    let n = values.len();
    let mut out = Matrix::zeros(n, n);
    for (k, &lam) in values.iter().enumerate() {
        let w = f(lam);
        if w == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = vecs.get(i, k) * w;
            for j in 0..n {
                out.data[i * n + j] += vik * vecs.get(j, k);
            }
        }
    }
    SymMatrix::from_matrix(&out).expect("square and finite")
}

/// Spectral split `A = A₊ + A₋` with `A₊ ⪰ 0`, `A₋ ⪯ 0`.
pub fn pos_neg_split(a: &SymMatrix) -> (SymMatrix, SymMatrix) {
    let (values, vecs) = sym_eigen(a);
    let plus = spectral_map(&values, &vecs, |l| l.max(0.0));
    let minus = spectral_map(&values, &vecs, |l| l.min(0.0));
    (plus, minus)
}

/// Smallest `c` with `A ⪯ c·B`, i.e. `λ_max(B^{-1/2} A B^{-1/2})`.
pub fn min_dominance_scale(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Input(format!(
            "dimension mismatch {} vs {}",
            a.dim, b.dim
        )));
    }
    let (values, vecs) = sym_eigen(b);
    let margin = 1e-12 * b.norm().max(1.0);
    if values[0] <= margin {
        return Err(Error::Certificate(format!(
            "matrix is not positive definite (min eigenvalue {:.3e})",
            values[0]
        )));
    }
    let inv_sqrt = spectral_map(&values, &vecs, |l| 1.0 / l.sqrt());
    let c = a.congruence(&inv_sqrt.to_matrix())?;
    Ok(max_eigval(&c))
}
