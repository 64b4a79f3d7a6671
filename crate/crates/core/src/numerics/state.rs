use num_complex::Complex64;

use super::{ComplexMatrix, ComplexVector, VALIDATION_TOL};
use crate::error::{Error, Result};

/// Unit vector in a finite-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: ComplexVector,
}

impl PureState {
    /// Wraps `amplitudes`, rejecting vectors whose norm is off by more than
    /// the validation tolerance.
    pub fn new(amplitudes: ComplexVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidInput("state must have dimension >= 1".into()));
        }
        if !amplitudes.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { amplitudes })
    }

    /// Rescales any nonzero finite vector to unit norm.
    pub fn normalize(amplitudes: ComplexVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::InvalidInput("cannot normalize a zero or non-finite vector".into()));
        }
        Self::new(amplitudes / Complex64::new(norm, 0.0))
    }

    pub(crate) fn from_normalized_unchecked(amplitudes: ComplexVector) -> Self {
        Self { amplitudes }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = ComplexVector::zeros(dim);
        v[index] = Complex64::new(1.0, 0.0);
        Self { amplitudes: v }
    }

    /// `cos(θ/2)|0> + e^{iφ} sin(θ/2)|1>`.
    pub fn bloch(theta: f64, phi: f64) -> Self {
        let v = ComplexVector::from_column_slice(&[
            Complex64::new((theta / 2.0).cos(), 0.0),
            Complex64::from_polar((theta / 2.0).sin(), phi),
        ]);
        Self { amplitudes: v }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &ComplexVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> ComplexVector {
        self.amplitudes
    }

    /// `|φ><φ|`.
    pub fn density(&self) -> ComplexMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }

    /// `<φ|m|φ>`.
    pub fn expectation(&self, m: &ComplexMatrix) -> Complex64 {
        self.amplitudes.dotc(&(m * &self.amplitudes))
    }

    /// `φ ⊗ ψ`.
    pub fn tensor(&self, other: &PureState) -> PureState {
        Self {
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
        }
    }
}
