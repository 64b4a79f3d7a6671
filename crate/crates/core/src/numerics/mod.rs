//! Complex dense linear algebra used by every other module.
//!
//! All norms and the polar factor go through one SVD code path. Hermitian
//! matrices get a dedicated eigen-decomposition, which is both faster and
//! more accurate for the trace norm of a difference of density matrices.

pub mod optim;
pub mod random;
pub mod state;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub use random::{haar_sample, haar_state, haar_unitary, HaarKind, HaarSample, RandomSeed};
pub use state::PureState;

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

/// Tolerance for validating user-supplied objects (normalization, unitarity, probabilities).
pub const VALIDATION_TOL: f64 = 1e-9;
/// Tolerance for decomposition residuals.
pub const RESIDUAL_TOL: f64 = 1e-10;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Builds a matrix from real row-major entries.
pub fn real_matrix(rows: usize, cols: usize, entries: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_row_iterator(rows, cols, entries.iter().map(|&x| c(x, 0.0)))
}

pub fn diag(entries: &[Complex64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&ComplexVector::from_column_slice(entries))
}

pub fn identity(dim: usize) -> ComplexMatrix {
    ComplexMatrix::identity(dim, dim)
}

pub fn pauli_x() -> ComplexMatrix {
    real_matrix(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> ComplexMatrix {
    real_matrix(2, 2, &[1.0, 0.0, 0.0, -1.0])
}

pub fn hadamard() -> ComplexMatrix {
    real_matrix(2, 2, &[1.0, 1.0, 1.0, -1.0]) * c(std::f64::consts::FRAC_1_SQRT_2, 0.0)
}

/// `|i><j|` of the given dimension.
pub fn matrix_unit(dim: usize, i: usize, j: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(dim, dim);
    m[(i, j)] = ONE;
    m
}

pub fn is_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn ensure_finite(m: &ComplexMatrix, what: &'static str) -> Result<()> {
    if is_finite(m) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn trace(m: &ComplexMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Kronecker product `a ⊗ b`, with the index of `a` outermost.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Hilbert-Schmidt inner product `Tr[a† b]`.
pub fn hs_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Largest entry modulus of `m† m − I`.
pub fn unitarity_residual(m: &ComplexMatrix) -> f64 {
    let g = m.adjoint() * m;
    let n = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..g.ncols() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

/// Largest entry modulus of `a − b`.
pub fn max_abs_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in max_abs_diff");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Traces out the second tensor factor of an operator on `outer ⊗ inner`.
pub fn partial_trace_inner(m: &ComplexMatrix, outer: usize, inner: usize) -> ComplexMatrix {
    assert_eq!(m.nrows(), outer * inner);
    assert_eq!(m.ncols(), outer * inner);
    ComplexMatrix::from_fn(outer, outer, |a, b| {
        (0..inner).map(|k| m[(a * inner + k, b * inner + k)]).sum()
    })
}

/// Traces out the first tensor factor of an operator on `outer ⊗ inner`.
pub fn partial_trace_outer(m: &ComplexMatrix, outer: usize, inner: usize) -> ComplexMatrix {
    assert_eq!(m.nrows(), outer * inner);
    assert_eq!(m.ncols(), outer * inner);
    ComplexMatrix::from_fn(inner, inner, |a, b| {
        (0..outer).map(|k| m[(k * inner + a, k * inner + b)]).sum()
    })
}

/// Hermitian part `(m + m†)/2`.
pub fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

pub fn singular_values(m: &ComplexMatrix) -> Result<DVector<f64>> {
    ensure_finite(m, "matrix")?;
    if m.is_empty() {
        return Ok(DVector::zeros(0));
    }
    Ok(m.clone().svd(false, false).singular_values)
}

/// Sum of singular values.
pub fn trace_norm(m: &ComplexMatrix) -> Result<f64> {
    Ok(singular_values(m)?.sum())
}

/// Largest singular value.
pub fn spectral_norm(m: &ComplexMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().copied().fold(0.0, f64::max))
}

pub fn frobenius_norm(m: &ComplexMatrix) -> Result<f64> {
    ensure_finite(m, "matrix")?;
    Ok(m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
}

/// The unitary maximizing `Re Tr[U† m]`, from the SVD of `m`.
#[derive(Debug, Clone)]
pub struct PolarFactor {
    pub unitary: ComplexMatrix,
    /// `Tr[U† m]`, equal to the trace norm of `m`.
    pub trace_norm: f64,
    /// False when `m` is rank deficient and the maximizer is not unique.
    pub unique: bool,
}

pub fn polar_unitary(m: &ComplexMatrix) -> Result<PolarFactor> {
    ensure_finite(m, "matrix")?;
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "polar factor needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let sigma = &svd.singular_values;
    let largest = sigma.iter().copied().fold(0.0, f64::max);
    let smallest = sigma.iter().copied().fold(f64::INFINITY, f64::min);
    let unique = largest > 0.0 && smallest > RESIDUAL_TOL * largest.max(1.0);
    Ok(PolarFactor {
        unitary: u * v_t,
        trace_norm: sigma.sum(),
        unique,
    })
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, ordered like `values`.
    pub vectors: ComplexMatrix,
}

pub fn hermitian_eigen(m: &ComplexMatrix) -> HermitianEigen {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = ComplexMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    HermitianEigen { values, vectors }
}

/// Trace norm of a Hermitian matrix as the sum of absolute eigenvalues.
pub fn hermitian_trace_norm(h: &ComplexMatrix) -> f64 {
    hermitian_eigen(h).values.iter().map(|v| v.abs()).sum()
}

/// `exp(i h)` for Hermitian `h`; exactly unitary up to rounding.
pub fn expi_hermitian(h: &ComplexMatrix) -> ComplexMatrix {
    let eig = hermitian_eigen(h);
    let phases = diag(
        &eig.values
            .iter()
            .map(|&v| Complex64::from_polar(1.0, v))
            .collect::<Vec<_>>(),
    );
    &eig.vectors * phases * eig.vectors.adjoint()
}

/// Hermitian matrix from `n²` real coordinates: diagonal first, then
/// `(re, im)` pairs for the strict upper triangle in row order.
pub fn hermitian_from_params(n: usize, params: &[f64]) -> ComplexMatrix {
    assert_eq!(params.len(), n * n, "expected n^2 generator coordinates");
    let mut h = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = c(params[i], 0.0);
    }
    let mut k = n;
    for i in 0..n {
        for j in (i + 1)..n {
            let z = c(params[k], params[k + 1]);
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
            k += 2;
        }
    }
    h
}
