//! Bob's side: how well can he tell the two bit modulations apart before
//! the opening, using an entangled probe.

use rayon::prelude::*;

use crate::alice::{kraus_gap, procrustes_cheat, CheatUnitary};
use crate::channel::KrausFamily;
use crate::error::{Error, Result};
use crate::numerics::{
    haar_state, hermitian_eigen, identity, kron, ComplexMatrix, ComplexVector, PureState,
    RandomSeed, ZERO,
};
use crate::protocol::CommitmentProtocol;

#[derive(Debug, Clone, Copy)]
pub struct CbConfig {
    pub restarts: usize,
    pub seed: RandomSeed,
    /// Relative change below which one ascent stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Ancilla dimension; `None` means equal to the input dimension.
    pub ancilla_dim: Option<usize>,
}

impl Default for CbConfig {
    fn default() -> Self {
        Self { restarts: 32, seed: RandomSeed(7), tol: 1e-7, max_iter: 500, ancilla_dim: None }
    }
}

#[derive(Debug, Clone)]
pub struct BobReport {
    /// Best trace distance found between the two outputs; a lower bound on
    /// the CB distance.
    pub cb_lower: f64,
    /// Probe state on system ⊗ ancilla (system index outer).
    pub witness_state: PureState,
    pub ancilla_dim: usize,
    /// `1/2 + cb_lower/4`.
    pub p_opt_lower: f64,
    /// Best value with no ancilla.
    pub product_lower: f64,
    pub restarts: usize,
    pub seed: RandomSeed,
    pub iterations: usize,
    /// `½·√gap` at the Procrustes cheat, which bounds `p_opt − ½` from above.
    pub gap_upper_bound: Option<f64>,
}

/// Output difference `(M1 ⊗ Id − M0 ⊗ Id)` restricted to pure inputs, with
/// its adjoint, for a fixed ancilla size.
struct Difference {
    ops0: Vec<ComplexMatrix>,
    ops1: Vec<ComplexMatrix>,
    dim: usize,
}

impl Difference {
    fn new(ch0: &KrausFamily, ch1: &KrausFamily, ancilla: usize) -> Self {
        let lift = |f: &KrausFamily| {
            let id = identity(ancilla);
            f.effective_operators().iter().map(|e| kron(e, &id)).collect()
        };
        Self { ops0: lift(ch0), ops1: lift(ch1), dim: ch0.dim_in() * ancilla }
    }

    fn output(&self, phi: &ComplexVector) -> ComplexMatrix {
        let rows = self.ops0[0].nrows();
        let mut x = ComplexMatrix::zeros(rows, rows);
        for e in &self.ops1 {
            let v = e * phi;
            x += &v * v.adjoint();
        }
        for e in &self.ops0 {
            let v = e * phi;
            x -= &v * v.adjoint();
        }
        x
    }

    /// `Σ E1† S E1 − Σ E0† S E0`.
    fn adjoint(&self, s: &ComplexMatrix) -> ComplexMatrix {
        let mut y = ComplexMatrix::zeros(self.dim, self.dim);
        for e in &self.ops1 {
            y += e.adjoint() * s * e;
        }
        for e in &self.ops0 {
            y -= e.adjoint() * s * e;
        }
        y
    }

    /// Trace norm of the output difference and its sign operator.
    fn evaluate(&self, phi: &ComplexVector) -> (f64, ComplexMatrix) {
        let eig = hermitian_eigen(&self.output(phi));
        let n = eig.values.len();
        let mut s = ComplexMatrix::zeros(n, n);
        let mut norm = 0.0;
        for (k, &lambda) in eig.values.iter().enumerate() {
            norm += lambda.abs();
            if lambda == 0.0 {
                continue;
            }
            let col = eig.vectors.column(k);
            let w = if lambda > 0.0 { 1.0 } else { -1.0 };
            s += (&col * col.adjoint()) * crate::numerics::c(w, 0.0);
        }
        (norm, s)
    }

    /// Eigenvector iteration: `φ ← top eigenvector of Δ*(sign Δ(φ))`.
    /// Each step cannot decrease the trace norm.
    fn ascend(&self, start: ComplexVector, tol: f64, max_iter: usize) -> (f64, ComplexVector, usize) {
        let mut phi = start;
        let (mut value, mut sign) = self.evaluate(&phi);
        for iter in 0..max_iter {
            let eig = hermitian_eigen(&self.adjoint(&sign));
            let next: ComplexVector = eig.vectors.column(self.dim - 1).into_owned();
            let (v, s) = self.evaluate(&next);
            if v <= value {
                return (value, phi, iter + 1);
            }
            let change = v - value;
            phi = next;
            value = v;
            sign = s;
            if change <= tol * value.max(1e-12) {
                return (value, phi, iter + 1);
            }
        }
        (value, phi, max_iter)
    }
}

fn check_channels(ch0: &KrausFamily, ch1: &KrausFamily) -> Result<()> {
    if ch0.dim_in() != ch1.dim_in() || ch0.dim_out() != ch1.dim_out() {
        return Err(Error::DimensionMismatch(format!(
            "channels map {}→{} and {}→{}",
            ch0.dim_in(),
            ch0.dim_out(),
            ch1.dim_in(),
            ch1.dim_out()
        )));
    }
    Ok(())
}

/// Searches for `max_φ ‖((M1 − M0) ⊗ Id)(|φ⟩⟨φ|)‖₁` from Haar-random starts.
/// Also runs the same ascent without ancilla and keeps the larger value.
pub fn cb_distance(ch0: &KrausFamily, ch1: &KrausFamily, cfg: &CbConfig) -> Result<BobReport> {
    check_channels(ch0, ch1)?;
    if cfg.restarts == 0 {
        return Err(Error::InvalidInput("restarts must be at least 1".into()));
    }
    let d = ch0.dim_in();
    let r = cfg.ancilla_dim.unwrap_or(d);
    if r == 0 {
        return Err(Error::InvalidInput("ancilla dimension must be positive".into()));
    }
    let entangled = Difference::new(ch0, ch1, r);
    let product = Difference::new(ch0, ch1, 1);

    // restart k: entangled start from seed.derive(2k), product start from seed.derive(2k+1)
    let runs: Vec<((f64, ComplexVector, usize), (f64, ComplexVector, usize))> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| {
            let k = k as u64;
            let start = haar_state(d * r, &mut cfg.seed.derive(2 * k).rng()).into_amplitudes();
            let e = entangled.ascend(start, cfg.tol, cfg.max_iter);
            let start = haar_state(d, &mut cfg.seed.derive(2 * k + 1).rng()).into_amplitudes();
            let p = product.ascend(start, cfg.tol, cfg.max_iter);
            (e, p)
        })
        .collect();

    let mut best: Option<(f64, ComplexVector)> = None;
    let mut best_product: Option<(f64, ComplexVector)> = None;
    let mut iterations = 0;
    for (e, p) in runs {
        iterations += e.2 + p.2;
        if best.as_ref().is_none_or(|b| e.0 > b.0) {
            best = Some((e.0, e.1));
        }
        if best_product.as_ref().is_none_or(|b| p.0 > b.0) {
            best_product = Some((p.0, p.1));
        }
    }
    let (mut value, mut witness) = best.expect("at least one restart");
    let (product_value, product_state) = best_product.expect("at least one restart");
    if product_value > value {
        // embed the product witness as φ ⊗ |0⟩
        value = product_value;
        witness = ComplexVector::from_fn(d * r, |i, _| if i % r == 0 { product_state[i / r] } else { ZERO });
    }
    let cb_lower = value.clamp(0.0, 2.0);
    Ok(BobReport {
        cb_lower,
        witness_state: PureState::normalize(witness)?,
        ancilla_dim: r,
        p_opt_lower: 0.5 + cb_lower / 4.0,
        product_lower: product_value.clamp(0.0, 2.0),
        restarts: cfg.restarts,
        seed: cfg.seed,
        iterations,
        gap_upper_bound: None,
    })
}

/// Bob's best guessing probability before the opening, for equal priors.
pub fn bob_optimal_probability(protocol: &CommitmentProtocol, cfg: &CbConfig) -> Result<BobReport> {
    let [p0, p1] = protocol.priors();
    if p0 != 0.5 || p1 != 0.5 {
        return Err(Error::UnsupportedPriors(p0, p1));
    }
    let mut report = cb_distance(protocol.family(0), protocol.family(1), cfg)?;
    if protocol.is_trace_preserving() {
        let v = procrustes_cheat(protocol.family(0), protocol.family(1))?.v;
        report.gap_upper_bound = Some(bob_gap_upper_bound(protocol, &v)?);
    }
    Ok(report)
}

/// `½·√gap(V)`: no strategy of Bob's beats `½` by more than this.
pub fn bob_gap_upper_bound(protocol: &CommitmentProtocol, v: &CheatUnitary) -> Result<f64> {
    protocol.require_trace_preserving()?;
    Ok(0.5 * kraus_gap(protocol.family(0), protocol.family(1), v)?.sqrt())
}
