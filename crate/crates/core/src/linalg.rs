//! Dense symmetric operators, vectors, norms and the effective rank.
//!
//! Everything is stored densely. The symmetric eigendecomposition is the only
//! route to spectral quantities, so the operator norm, the effective rank and
//! the spectral projectors built on top of it always agree with each other.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check of raw input.
pub const SYM_TOL: f64 = 1e-12;

/// Iteration cap handed to the implicit QR sweep.
const EIGEN_MAX_ITER: usize = 100_000;

/// Real symmetric operator on `R^p`.
///
/// Construction symmetrizes its input as `(A + A^T) / 2`, so the stored
/// matrix is exactly symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricOperator {
    matrix: DMatrix<f64>,
}

/// Vector in `R^p` with finite coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorH {
    coords: DVector<f64>,
}

/// Eigenvalues in descending order with the matching orthonormal eigenvectors
/// stored as columns.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymmetricOperator {
    /// Builds an operator from a square finite matrix, symmetrizing it.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::Empty("operator of dimension 0"));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self::symmetrized(matrix))
    }

    /// Builds an operator, rejecting input whose asymmetry exceeds
    /// `SYM_TOL * max(1, max|a_ij|)`.
    pub fn new_checked(matrix: DMatrix<f64>) -> Result<Self> {
        let op = Self::new(matrix.clone())?;
        let scale = matrix.amax().max(1.0);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > SYM_TOL * scale {
            return Err(Error::InvalidArgument(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(op)
    }

    pub(crate) fn symmetrized(matrix: DMatrix<f64>) -> Self {
        let sym = (&matrix + matrix.transpose()) * 0.5;
        Self { matrix: sym }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if p == 0 {
            return Err(Error::Empty("no rows"));
        }
        for row in rows {
            if row.len() != p {
                return Err(Error::NotSquare {
                    rows: p,
                    cols: row.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(dim, dim),
        }
    }

    /// The rank-one projector-shaped operator `u ⊗ u`.
    pub fn rank_one(u: &VectorH) -> Self {
        Self {
            matrix: &u.coords * u.coords.transpose(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn apply(&self, u: &VectorH) -> Result<VectorH> {
        check_dim(self.dim(), u.dim())?;
        Ok(VectorH {
            coords: &self.matrix * &u.coords,
        })
    }

    /// `<A u, v>`.
    pub fn bilinear(&self, u: &VectorH, v: &VectorH) -> Result<f64> {
        check_dim(self.dim(), u.dim())?;
        check_dim(self.dim(), v.dim())?;
        Ok(bilinear_raw(&self.matrix, &u.coords, &v.coords))
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Hilbert–Schmidt (Frobenius) norm.
    pub fn hs_norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// Largest absolute eigenvalue.
    pub fn operator_norm(&self) -> Result<f64> {
        let values = self.eigenvalues()?;
        Ok(values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.matrix.amax()
    }

    pub fn eigen(&self) -> Result<SymEigen> {
        sym_eigendecomposition(self)
    }

    /// Eigenvalues only, in descending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let values = self.matrix.symmetric_eigenvalues();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::EigenNoConvergence);
        }
        let mut values: Vec<f64> = values.iter().copied().collect();
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(values)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            matrix: &self.matrix * c,
        }
    }

    /// `A B A` for symmetric `A`, `B`.
    pub fn sandwich(&self, inner: &SymmetricOperator) -> Result<Self> {
        check_dim(self.dim(), inner.dim())?;
        Ok(Self::symmetrized(&self.matrix * &inner.matrix * &self.matrix))
    }

    /// Sub-block on the leading `q` coordinates.
    pub fn leading_block(&self, q: usize) -> Result<Self> {
        if q == 0 || q > self.dim() {
            return Err(Error::InvalidArgument(format!(
                "block size {q} outside 1..={}",
                self.dim()
            )));
        }
        Ok(Self {
            matrix: self.matrix.view((0, 0), (q, q)).into_owned(),
        })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.matrix.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

impl Add for &SymmetricOperator {
    type Output = SymmetricOperator;
    fn add(self, rhs: Self) -> SymmetricOperator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimensions differ");
        SymmetricOperator {
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl Sub for &SymmetricOperator {
    type Output = SymmetricOperator;
    fn sub(self, rhs: Self) -> SymmetricOperator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimensions differ");
        SymmetricOperator {
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

impl Neg for &SymmetricOperator {
    type Output = SymmetricOperator;
    fn neg(self) -> SymmetricOperator {
        SymmetricOperator { matrix: -&self.matrix }
    }
}

impl Mul<f64> for &SymmetricOperator {
    type Output = SymmetricOperator;
    fn mul(self, rhs: f64) -> SymmetricOperator {
        self.scale(rhs)
    }
}

impl serde::Serialize for VectorH {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.coords.iter())
    }
}

impl VectorH {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("vector of dimension 0"));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            coords: DVector::from_vec(coords),
        })
    }

    pub(crate) fn from_dvector(coords: DVector<f64>) -> Self {
        Self { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coords: DVector::zeros(dim),
        }
    }

    /// Standard basis vector `e_k` (0-based `k`).
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::InvalidArgument(format!("basis index {k} outside 0..{dim}")));
        }
        let mut coords = DVector::zeros(dim);
        coords[k] = 1.0;
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coords.as_slice()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.coords.iter().copied().collect()
    }

    pub fn dot(&self, other: &VectorH) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.coords.dot(&other.coords))
    }

    pub fn norm(&self) -> f64 {
        self.coords.norm()
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(Error::Degenerate("cannot normalize the zero vector".into()));
        }
        Ok(Self {
            coords: &self.coords / norm,
        })
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            coords: &self.coords * c,
        }
    }

    pub fn sub(&self, other: &VectorH) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self {
            coords: &self.coords - &other.coords,
        })
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub(crate) fn bilinear_raw(a: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    (a * u).dot(v)
}

pub fn operator_norm(a: &SymmetricOperator) -> Result<f64> {
    a.operator_norm()
}

pub fn trace(a: &SymmetricOperator) -> f64 {
    a.trace()
}

pub fn hs_norm(a: &SymmetricOperator) -> f64 {
    a.hs_norm()
}

/// Effective rank `tr(Σ) / ‖Σ‖∞` of a positive semi-definite operator.
pub fn effective_rank(sigma: &SymmetricOperator) -> Result<f64> {
    let norm = sigma.operator_norm()?;
    if norm == 0.0 {
        return Err(Error::ZeroOperator);
    }
    Ok(sigma.trace() / norm)
}

/// General (unsymmetrized) tensor product `u ⊗ v`, acting as `x ↦ <v, x> u`.
pub fn tensor_product(u: &VectorH, v: &VectorH) -> Result<DMatrix<f64>> {
    check_dim(u.dim(), v.dim())?;
    Ok(&u.coords * v.coords.transpose())
}

/// `max_j |u_j|`.
pub fn sup_coordinate_norm(u: &VectorH) -> f64 {
    u.coords.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Full symmetric eigendecomposition with eigenvalues sorted in descending
/// order. Ties keep the solver's relative order.
pub fn sym_eigendecomposition(a: &SymmetricOperator) -> Result<SymEigen> {
    let eig = nalgebra::SymmetricEigen::try_new(a.matrix.clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or(Error::EigenNoConvergence)?;
    let p = a.dim();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(p, p, |row, col| eig.eigenvectors[(row, order[col])]);
    Ok(SymEigen { values, vectors })
}

impl SymEigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Eigenvector at sorted position `j` (0-based).
    pub fn vector(&self, j: usize) -> VectorH {
        VectorH::from_dvector(self.vectors.column(j).into_owned())
    }

    /// `Q diag(values) Q^T`.
    pub fn reconstruct(&self) -> SymmetricOperator {
        self.weighted(|_, value| value)
    }

    /// `Σ_j w(j, σ_j) q_j ⊗ q_j`.
    pub fn weighted(&self, weight: impl Fn(usize, f64) -> f64) -> SymmetricOperator {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= weight(j, self.values[j]);
        }
        SymmetricOperator::symmetrized(&scaled * self.vectors.transpose())
    }

    /// Sum of eigenprojectors over the sorted positions in `range`.
    pub fn projector(&self, range: std::ops::Range<usize>) -> SymmetricOperator {
        let cols = self.vectors.columns(range.start, range.len());
        SymmetricOperator::symmetrized(cols * cols.transpose())
    }
}
