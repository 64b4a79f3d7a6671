//! Alice's post-commitment (EPR) attack.
//!
//! After committing, Alice may apply a unitary `V` on the spaces she keeps
//! (measurement ancilla and secret parameter). This leaves both channels
//! untouched but replaces the Kraus family she will disclose at opening by
//! `E_J(V) = Σ_L V_JL E_L`. Everything here quantifies how well that works
//! against an anonymous input state she does not know.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::KrausFamily;
use crate::error::{Error, Result};
use crate::numerics::optim::{maximize_over_unitaries, UnitaryAscent};
use crate::numerics::{
    self, c, haar_state, hermitian_eigen, hs_inner, polar_unitary, trace, trace_norm,
    unitarity_residual, ComplexMatrix, ComplexVector, PureState, RandomSeed, RESIDUAL_TOL,
    VALIDATION_TOL, ZERO,
};
use crate::protocol::CommitmentProtocol;

/// Opening outcomes whose squared norm falls below this never occur and are skipped.
pub const NEGLIGIBLE_OUTCOME: f64 = 1e-14;

/// Samples per Monte Carlo work unit. Each chunk has its own derived seed.
const MC_CHUNK: usize = 4096;

/// Unitary `V` on the Kraus index space, `V_JL = <J|V|L>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheatUnitary {
    matrix: ComplexMatrix,
}

impl CheatUnitary {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "cheat unitary must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        numerics::ensure_finite(&matrix, "cheat unitary")?;
        let residual = unitarity_residual(&matrix);
        if residual > RESIDUAL_TOL {
            return Err(Error::NotUnitary(residual));
        }
        Ok(Self { matrix })
    }

    pub fn identity(n: usize) -> Self {
        Self { matrix: numerics::identity(n) }
    }

    /// Declaring `perm[J]` instead of `J`: `E_J(V) = E_{perm[J]}`.
    pub fn permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        let mut m = ComplexMatrix::zeros(n, n);
        for (j, &l) in perm.iter().enumerate() {
            if l >= n {
                return Err(Error::InvalidInput(format!("permutation entry {l} out of range")));
            }
            m[(j, l)] = c(1.0, 0.0);
        }
        Self::new(m)
    }

    pub fn haar(n: usize, rng: &mut impl Rng) -> Self {
        Self { matrix: numerics::haar_unitary(n, rng) }
    }

    pub(crate) fn from_unitary_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }
}

/// `E_J(V) = Σ_L V_JL E_L`. Leaves the channel unchanged.
pub fn apply_cheat(f: &KrausFamily, v: &CheatUnitary) -> Result<KrausFamily> {
    if v.n() != f.cardinality() {
        return Err(Error::DimensionMismatch(format!(
            "cheat unitary acts on {} outcomes, family has {}",
            v.n(),
            f.cardinality()
        )));
    }
    let ops = f.effective_operators();
    let mixed = (0..v.n())
        .map(|j| {
            let mut acc = ComplexMatrix::zeros(f.dim_out(), f.dim_in());
            for (l, op) in ops.iter().enumerate() {
                let w = v.matrix[(j, l)];
                if w != ZERO {
                    acc += op * w;
                }
            }
            acc
        })
        .collect();
    Ok(f.with_operators(mixed))
}

fn check_bit(bit: usize) -> Result<()> {
    if bit > 1 {
        return Err(Error::InvalidInput(format!("bit must be 0 or 1, got {bit}")));
    }
    Ok(())
}

/// Opening overlaps of one anonymous state: `g_JL = <E^from_L φ, E^to_J φ>`
/// and `b_J = ‖E^to_J φ‖²`. With these, the cheating probability for any `V`
/// is `Σ_J |Σ_L conj(V_JL) g_JL|² / b_J`.
#[derive(Debug, Clone)]
pub struct StateOverlaps {
    pub g: ComplexMatrix,
    pub b: Vec<f64>,
}

impl StateOverlaps {
    pub fn probability(&self, v: &ComplexMatrix) -> f64 {
        let n = self.b.len();
        let mut total = 0.0;
        for j in 0..n {
            if self.b[j] < NEGLIGIBLE_OUTCOME {
                continue;
            }
            let mut a = ZERO;
            for l in 0..n {
                a += v[(j, l)].conj() * self.g[(j, l)];
            }
            total += a.norm_sqr() / self.b[j];
        }
        total
    }
}

/// Cheating payoff `P(V, φ)` for a fixed protocol and forgery direction,
/// with the padded families cached.
#[derive(Debug, Clone)]
pub struct CheatGame {
    from: Vec<ComplexMatrix>,
    to: Vec<ComplexMatrix>,
    dim: usize,
}

impl CheatGame {
    /// Payoff for having committed `from_bit` and opening as `to_bit`.
    pub fn new(protocol: &CommitmentProtocol, from_bit: usize, to_bit: usize) -> Result<Self> {
        check_bit(from_bit)?;
        check_bit(to_bit)?;
        protocol.require_trace_preserving()?;
        let (f0, f1) = protocol.padded_families();
        let pick = |bit: usize| if bit == 0 { f0.raw_operators().to_vec() } else { f1.raw_operators().to_vec() };
        Ok(Self { from: pick(from_bit), to: pick(to_bit), dim: protocol.dim_in() })
    }

    pub fn cardinality(&self) -> usize {
        self.from.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn overlaps(&self, phi: &ComplexVector) -> StateOverlaps {
        let n = self.cardinality();
        let xs: Vec<ComplexVector> = self.from.iter().map(|e| e * phi).collect();
        let ys: Vec<ComplexVector> = self.to.iter().map(|e| e * phi).collect();
        let g = ComplexMatrix::from_fn(n, n, |j, l| xs[l].dotc(&ys[j]));
        let b = ys.iter().map(|y| y.norm_squared()).collect();
        StateOverlaps { g, b }
    }

    pub fn probability(&self, v: &CheatUnitary, phi: &PureState) -> Result<f64> {
        self.check(v, phi)?;
        Ok(self.overlaps(phi.amplitudes()).probability(v.matrix()))
    }

    fn check(&self, v: &CheatUnitary, phi: &PureState) -> Result<()> {
        if v.n() != self.cardinality() {
            return Err(Error::DimensionMismatch(format!(
                "cheat unitary acts on {} outcomes, padded cardinality is {}",
                v.n(),
                self.cardinality()
            )));
        }
        if phi.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "state has dimension {}, protocol input is {}",
                phi.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Operators `A_J = F_J† E_J` and `B_J = E_J† E_J` for a fixed `V`, the
    /// quadratic forms behind the state optimization.
    pub(crate) fn state_forms(&self, v: &ComplexMatrix) -> StateForms {
        let n = self.cardinality();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for j in 0..n {
            let mut fj = ComplexMatrix::zeros(self.from[0].nrows(), self.dim);
            for l in 0..n {
                fj += &self.from[l] * v[(j, l)];
            }
            a.push(fj.adjoint() * &self.to[j]);
            b.push(self.to[j].adjoint() * &self.to[j]);
        }
        StateForms { a, b }
    }
}

/// `P(φ) = Σ_J |<φ|A_J|φ>|² / <φ|B_J|φ>` for a fixed cheat unitary.
#[derive(Debug, Clone)]
pub(crate) struct StateForms {
    a: Vec<ComplexMatrix>,
    b: Vec<ComplexMatrix>,
}

impl StateForms {
    /// Value and real gradient (w.r.t. `(Re φ, Im φ)`) of the payoff at the
    /// unnormalized vector `φ`, which is rescaled implicitly.
    pub(crate) fn value_and_gradient(&self, phi: &ComplexVector) -> (f64, ComplexVector) {
        let norm2 = phi.norm_squared();
        let mut value = 0.0;
        let mut grad = ComplexVector::zeros(phi.len());
        for (a, b) in self.a.iter().zip(&self.b) {
            let bphi = b * phi;
            let bj = phi.dotc(&bphi).re;
            if bj < NEGLIGIBLE_OUTCOME * norm2 {
                continue;
            }
            let aphi = a * phi;
            let ahphi = a.adjoint() * phi;
            let aj = phi.dotc(&aphi);
            let denom = bj * norm2;
            let term = aj.norm_sqr() / denom;
            value += term;
            // Wirtinger derivative w.r.t. conj(φ)
            grad += (aphi * aj.conj() + ahphi * aj) / c(denom, 0.0)
                - (bphi * c(norm2, 0.0) + phi * c(bj, 0.0)) * c(term / denom, 0.0);
        }
        (value, grad * c(2.0, 0.0))
    }

    #[cfg(test)]
    pub(crate) fn value(&self, phi: &ComplexVector) -> f64 {
        self.value_and_gradient(phi).0
    }

    pub(crate) fn pairs(&self) -> impl Iterator<Item = (&ComplexMatrix, &ComplexMatrix)> {
        self.a.iter().zip(&self.b)
    }
}

/// Probability that Alice, having committed `from_bit`, opens as `to_bit`
/// and passes Bob's verification:
/// `Σ_J |<φ|F_J† E_J|φ>|² / ‖E_J φ‖²` with `F = apply_cheat(family_from, V)`
/// and `E = family_to`.
pub fn alice_cheat_probability(
    protocol: &CommitmentProtocol,
    v: &CheatUnitary,
    phi: &PureState,
    from_bit: usize,
    to_bit: usize,
) -> Result<f64> {
    CheatGame::new(protocol, from_bit, to_bit)?.probability(v, phi)
}

/// Solution of the Frobenius Procrustes problem between two families.
#[derive(Debug, Clone)]
pub struct ProcrustesCheat {
    pub v: CheatUnitary,
    /// `min_V Σ_J ‖E^(0)_J(V) − E^(1)_J‖_F²`.
    pub residual: f64,
    /// `C_JL = Tr[E^(1)_J† E^(0)_L]`.
    pub cross_gram: ComplexMatrix,
    pub cross_gram_trace_norm: f64,
    /// False when the cross-Gram matrix is rank deficient (ties).
    pub unique: bool,
}

/// Unitary `V` bringing family `f0` closest to `f1` in summed Frobenius
/// distance. Families are zero-padded to a common cardinality first.
pub fn procrustes_cheat(f0: &KrausFamily, f1: &KrausFamily) -> Result<ProcrustesCheat> {
    if f0.dim_in() != f1.dim_in() || f0.dim_out() != f1.dim_out() {
        return Err(Error::DimensionMismatch("families act on different spaces".into()));
    }
    let n = f0.cardinality().max(f1.cardinality());
    let (e0, e1) = (f0.padded(n), f1.padded(n));
    let (e0, e1) = (e0.raw_operators(), e1.raw_operators());
    let cross = ComplexMatrix::from_fn(n, n, |j, l| hs_inner(&e1[j], &e0[l]));
    let polar = polar_unitary(&cross)?;
    // Re Σ V_JL C_JL = Re Tr[Vᵀ C] is maximized by Vᵀ = W† with W the polar factor
    let v = polar.unitary.map(|z| z.conj());
    let norm_sq = |ops: &[ComplexMatrix]| ops.iter().map(|m| m.norm_squared()).sum::<f64>();
    let residual = (norm_sq(e0) + norm_sq(e1) - 2.0 * polar.trace_norm).max(0.0);
    Ok(ProcrustesCheat {
        v: CheatUnitary::from_unitary_unchecked(v),
        residual,
        cross_gram_trace_norm: polar.trace_norm,
        cross_gram: cross,
        unique: polar.unique,
    })
}

/// Summed Frobenius distance `Σ_J ‖E^(0)_J(V) − E^(1)_J‖_F²` evaluated directly.
pub fn frobenius_gap(f0: &KrausFamily, f1: &KrausFamily, v: &CheatUnitary) -> Result<f64> {
    let (a, b) = padded_pair(f0, f1, v)?;
    let cheated = apply_cheat(&a, v)?;
    Ok(cheated
        .raw_operators()
        .iter()
        .zip(b.raw_operators())
        .map(|(x, y)| (x - y).norm_squared())
        .sum())
}

fn padded_pair(f0: &KrausFamily, f1: &KrausFamily, v: &CheatUnitary) -> Result<(KrausFamily, KrausFamily)> {
    if f0.dim_in() != f1.dim_in() || f0.dim_out() != f1.dim_out() {
        return Err(Error::DimensionMismatch("families act on different spaces".into()));
    }
    let n = f0.cardinality().max(f1.cardinality());
    if v.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "cheat unitary acts on {} outcomes, padded cardinality is {n}",
            v.n()
        )));
    }
    Ok((f0.padded(n), f1.padded(n)))
}

/// `Σ_J (E^(0)_J(V) − E^(1)_J)† (E^(0)_J(V) − E^(1)_J)`.
pub fn gap_operator(f0: &KrausFamily, f1: &KrausFamily, v: &CheatUnitary) -> Result<ComplexMatrix> {
    let (a, b) = padded_pair(f0, f1, v)?;
    let cheated = apply_cheat(&a, v)?;
    let mut acc = ComplexMatrix::zeros(f0.dim_in(), f0.dim_in());
    for (x, y) in cheated.raw_operators().iter().zip(b.raw_operators()) {
        let d = x - y;
        acc += d.adjoint() * d;
    }
    Ok(acc)
}

/// Spectral norm of the gap operator; zero iff the cheat turns `f0`'s
/// decomposition into `f1`'s exactly.
pub fn kraus_gap(f0: &KrausFamily, f1: &KrausFamily, v: &CheatUnitary) -> Result<f64> {
    let g = gap_operator(f0, f1, v)?;
    Ok(hermitian_eigen(&g).values.last().copied().unwrap_or(0.0).max(0.0))
}

/// Guaranteed cheating probability for any anonymous state:
/// `max(0, 1 − gap/2)²`.
pub fn alice_lower_bound(protocol: &CommitmentProtocol, v: &CheatUnitary) -> Result<f64> {
    protocol.require_trace_preserving()?;
    let gap = kraus_gap(protocol.family(0), protocol.family(1), v)?;
    Ok((1.0 - gap / 2.0).max(0.0).powi(2))
}

/// Every intermediate quantity in the derivation of the lower bound, for
/// one `(V, φ)`. For a trace-preserving protocol:
/// `probability ≥ jensen ≥ modulus ≥ real_part = expectation_form ≥ clamped`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundChain {
    pub probability: f64,
    /// `(Σ_J |<φ|F_J† E_J|φ>|)²`.
    pub jensen: f64,
    /// `|Σ_J <φ|F_J† E_J|φ>|²`.
    pub modulus: f64,
    /// `(Re Σ_J <φ|F_J† E_J|φ>)²`.
    pub real_part: f64,
    /// `(1 − <φ|G|φ>/2)²` with `G` the gap operator.
    pub expectation_form: f64,
    /// `max(0, 1 − ‖G‖/2)²`, the state-independent bound.
    pub clamped: f64,
}

impl BoundChain {
    /// Largest violation among the chain's inequalities and its one identity.
    pub fn worst_violation(&self) -> f64 {
        [
            self.jensen - self.probability,
            self.modulus - self.jensen,
            self.real_part - self.modulus,
            (self.real_part - self.expectation_form).abs(),
            self.clamped - self.expectation_form,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn bound_chain(protocol: &CommitmentProtocol, v: &CheatUnitary, phi: &PureState) -> Result<BoundChain> {
    let game = CheatGame::new(protocol, 0, 1)?;
    let probability = game.probability(v, phi)?;
    let (f0, f1) = protocol.padded_families();
    let cheated = apply_cheat(&f0, v)?;
    let overlaps: Vec<Complex64> = cheated
        .raw_operators()
        .iter()
        .zip(f1.raw_operators())
        .map(|(f, e)| phi.expectation(&(f.adjoint() * e)))
        .collect();
    let sum: Complex64 = overlaps.iter().sum();
    let g = gap_operator(&f0, &f1, v)?;
    let gap = hermitian_eigen(&g).values.last().copied().unwrap_or(0.0);
    Ok(BoundChain {
        probability,
        jensen: overlaps.iter().map(|z| z.norm()).sum::<f64>().powi(2),
        modulus: sum.norm_sqr(),
        real_part: sum.re.powi(2),
        expectation_form: (1.0 - phi.expectation(&g).re / 2.0).powi(2),
        clamped: (1.0 - gap / 2.0).max(0.0).powi(2),
    })
}

/// `∫ dμ(φ) <φ|a|φ><φ|b|φ> = [Tr a Tr b + Tr(ab)] / (d(d+1))`.
pub fn haar_pair_integral(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<Complex64> {
    let d = a.nrows();
    if a.ncols() != d || b.shape() != (d, d) || d == 0 {
        return Err(Error::DimensionMismatch(format!(
            "need two square matrices of one dimension, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let df = d as f64;
    Ok((trace(a) * trace(b) + trace(&(a * b))) / (df * (df + 1.0)))
}

/// Monte Carlo estimate of the same integral: `(mean, standard error)` of
/// the real and imaginary parts.
pub fn haar_pair_monte_carlo(
    a: &ComplexMatrix,
    b: &ComplexMatrix,
    samples: usize,
    seed: RandomSeed,
) -> Result<(Complex64, Complex64)> {
    haar_pair_integral(a, b)?;
    let d = a.nrows();
    let stats = chunked_mean(samples, seed, |rng| {
        let phi = haar_state(d, rng);
        phi.expectation(a) * phi.expectation(b)
    });
    Ok(stats)
}

/// Mean and standard error of a complex sampler over Haar-seeded chunks;
/// deterministic for a given seed regardless of scheduling.
fn chunked_mean<F>(samples: usize, seed: RandomSeed, draw: F) -> (Complex64, Complex64)
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Complex64 + Sync,
{
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed.derive(k as u64).rng();
            let count = MC_CHUNK.min(samples - k * MC_CHUNK);
            let mut acc = [0.0; 4];
            for _ in 0..count {
                let z = draw(&mut rng);
                acc[0] += z.re;
                acc[1] += z.re * z.re;
                acc[2] += z.im;
                acc[3] += z.im * z.im;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for p in &partial {
        for i in 0..4 {
            tot[i] += p[i];
        }
    }
    let n = samples.max(1) as f64;
    let se = |s: f64, s2: f64| {
        let mean = s / n;
        let var = ((s2 / n - mean * mean) * n / (n - 1.0).max(1.0)).max(0.0);
        (var / n).sqrt()
    };
    (
        c(tot[0] / n, tot[2] / n),
        c(se(tot[0], tot[1]), se(tot[2], tot[3])),
    )
}

/// `{(p_J, U_J)}` with `E_J = √p_J U_J`, if every operator is a nonzero
/// multiple of a unitary (checked as `‖E†E − (Tr E†E / d) I‖ ≤ 1e-9`).
pub fn random_unitary_decomposition(f: &KrausFamily) -> Option<Vec<(f64, ComplexMatrix)>> {
    if f.dim_in() != f.dim_out() {
        return None;
    }
    let d = f.dim_in() as f64;
    f.effective_operators()
        .into_iter()
        .map(|e| {
            let gram = e.adjoint() * &e;
            let p = trace(&gram).re / d;
            if p <= NEGLIGIBLE_OUTCOME {
                return None;
            }
            let off = &gram - numerics::identity(f.dim_in()) * c(p, 0.0);
            if numerics::spectral_norm(&off).ok()? > VALIDATION_TOL {
                return None;
            }
            Some((p, e / c(p.sqrt(), 0.0)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AverageMode {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AliceStrategy {
    FixedV,
    Procrustes,
    Minimax,
    HaarAverage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub restarts: usize,
    pub iterations: usize,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct AliceReport {
    pub strategy: AliceStrategy,
    pub mode: Option<AverageMode>,
    pub value: f64,
    /// Monte Carlo standard error, when sampled.
    pub standard_error: Option<f64>,
    pub v: CheatUnitary,
    pub worst_state: Option<PureState>,
    pub bound_lower: Option<f64>,
    pub bound_upper: Option<f64>,
    pub provenance: Provenance,
}

/// Closed-form ingredients for a random-unitary bit-1 family.
struct AverageKernel {
    /// `a_JL = Tr(U_J† E^(0)_L)`.
    overlaps: ComplexMatrix,
    dim: f64,
}

impl AverageKernel {
    fn new(protocol: &CommitmentProtocol) -> Result<Self> {
        protocol.require_trace_preserving()?;
        let (f0, f1) = protocol.padded_families();
        let units = random_unitary_decomposition(&f1).ok_or_else(|| {
            Error::ModeUnsupported(
                "closed form needs a random-unitary bit-1 family (E_J = √p_J U_J, all p_J > 0)".into(),
            )
        })?;
        let n = units.len();
        let e0 = f0.raw_operators();
        let overlaps = ComplexMatrix::from_fn(n, n, |j, l| hs_inner(&units[j].1, &e0[l]));
        Ok(Self { overlaps, dim: protocol.dim_in() as f64 })
    }

    /// `1/(d+1) + Σ_J |Σ_L V_JL a_JL|² / (d(d+1))`.
    fn value(&self, v: &ComplexMatrix) -> f64 {
        let n = self.overlaps.nrows();
        let d = self.dim;
        let s: f64 = (0..n)
            .map(|j| {
                (0..n)
                    .map(|l| v[(j, l)] * self.overlaps[(j, l)])
                    .sum::<Complex64>()
                    .norm_sqr()
            })
            .sum();
        1.0 / (d + 1.0) + s / (d * (d + 1.0))
    }
}

/// Haar-averaged cheating probability (0 → 1) at a fixed `V`.
pub fn haar_average_cheat(
    protocol: &CommitmentProtocol,
    v: &CheatUnitary,
    mode: AverageMode,
    samples: usize,
    seed: RandomSeed,
) -> Result<AliceReport> {
    let game = CheatGame::new(protocol, 0, 1)?;
    if v.n() != game.cardinality() {
        return Err(Error::DimensionMismatch(format!(
            "cheat unitary acts on {} outcomes, padded cardinality is {}",
            v.n(),
            game.cardinality()
        )));
    }
    let bounds = z_matrix_bounds(protocol).ok();
    let (value, standard_error, provenance) = match mode {
        AverageMode::ClosedForm => {
            let kernel = AverageKernel::new(protocol)?;
            (kernel.value(v.matrix()), None, Provenance::default())
        }
        AverageMode::MonteCarlo => {
            if samples < 2 {
                return Err(Error::InvalidInput("Monte Carlo needs at least 2 samples".into()));
            }
            let d = game.dim();
            let (mean, se) = chunked_mean(samples, seed, |rng| {
                let phi = haar_state(d, rng);
                c(game.overlaps(phi.amplitudes()).probability(v.matrix()), 0.0)
            });
            let prov = Provenance { seed: Some(seed.0), samples, ..Default::default() };
            (mean.re, Some(se.re), prov)
        }
    };
    Ok(AliceReport {
        strategy: AliceStrategy::HaarAverage,
        mode: Some(mode),
        value,
        standard_error,
        v: v.clone(),
        worst_state: None,
        bound_lower: bounds.map(|b| b.lower),
        bound_upper: bounds.map(|b| b.upper),
        provenance,
    })
}

/// Maximizes the closed-form Haar average over `V` (random-unitary bit-1
/// family only). Restart 0 starts at the Procrustes solution, the rest at
/// Haar-random unitaries; ties go to the lowest restart index.
pub fn optimize_haar_average(
    protocol: &CommitmentProtocol,
    restarts: usize,
    seed: RandomSeed,
) -> Result<AliceReport> {
    let kernel = AverageKernel::new(protocol)?;
    let bounds = z_matrix_bounds(protocol)?;
    let n = protocol.padded_cardinality();
    let start = procrustes_cheat(protocol.family(0), protocol.family(1))?.v;
    let runs: Vec<(ComplexMatrix, f64, usize)> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let v0 = if r == 0 {
                start.matrix().clone()
            } else {
                numerics::haar_unitary(n, &mut seed.derive(r as u64).rng())
            };
            maximize_over_unitaries(&v0, |v| kernel.value(v), UnitaryAscent::default())
        })
        .collect();
    let mut best = 0;
    for (k, run) in runs.iter().enumerate() {
        if run.1 > runs[best].1 {
            best = k;
        }
    }
    let iterations = runs.iter().map(|r| r.2).sum();
    let (v, value, _) = runs.into_iter().nth(best).expect("at least one restart");
    Ok(AliceReport {
        strategy: AliceStrategy::HaarAverage,
        mode: Some(AverageMode::ClosedForm),
        value,
        standard_error: None,
        v: CheatUnitary::from_unitary_unchecked(v),
        worst_state: None,
        bound_lower: Some(bounds.lower),
        bound_upper: Some(bounds.upper),
        provenance: Provenance { seed: Some(seed.0), restarts: restarts.max(1), iterations, samples: 0 },
    })
}

#[derive(Debug, Clone, Copy)]
pub struct AverageConfig {
    /// `None` picks the closed form when available, Monte Carlo otherwise.
    pub mode: Option<AverageMode>,
    pub samples: usize,
    pub seed: RandomSeed,
    pub restarts: usize,
}

impl Default for AverageConfig {
    fn default() -> Self {
        Self { mode: None, samples: 100_000, seed: RandomSeed(7), restarts: 4 }
    }
}

/// Alice's average-case figure. The closed form is maximized over `V`;
/// Monte Carlo is evaluated at `fallback`, so it is an estimate of a lower
/// bound on that maximum.
pub fn alice_average(
    protocol: &CommitmentProtocol,
    fallback: &CheatUnitary,
    cfg: &AverageConfig,
) -> Result<AliceReport> {
    let closed = match cfg.mode {
        Some(AverageMode::ClosedForm) => true,
        Some(AverageMode::MonteCarlo) => false,
        None => {
            protocol.require_trace_preserving()?;
            random_unitary_decomposition(&protocol.padded_families().1).is_some()
        }
    };
    if closed {
        optimize_haar_average(protocol, cfg.restarts, cfg.seed)
    } else {
        haar_average_cheat(protocol, fallback, AverageMode::MonteCarlo, cfg.samples, cfg.seed)
    }
}

/// Rectangular matrix with rows `(J, L)` and columns `K`:
/// `Z_(JL)K = Tr[U_K† E^(0)_J] · Tr[U_K E^(0)_L†]`.
#[derive(Debug, Clone)]
pub struct ZMatrix {
    pub n: usize,
    /// `n² × n`, row index `J·n + L`.
    pub entries: ComplexMatrix,
}

pub fn z_matrix(protocol: &CommitmentProtocol) -> Result<ZMatrix> {
    let kernel = AverageKernel::new(protocol)?;
    let a = &kernel.overlaps;
    let n = a.nrows();
    let entries = ComplexMatrix::from_fn(n * n, n, |row, k| {
        let (j, l) = (row / n, row % n);
        a[(k, j)] * a[(k, l)].conj()
    });
    Ok(ZMatrix { n, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZBounds {
    pub lower: f64,
    pub upper: f64,
    pub z_trace_norm: f64,
}

/// `1/(d+1) ≤ max_V average ≤ 1/(d+1) + ‖Z‖₁ / (d(d+1))`.
pub fn z_matrix_bounds(protocol: &CommitmentProtocol) -> Result<ZBounds> {
    let z = z_matrix(protocol)?;
    let d = protocol.dim_in() as f64;
    let z_trace_norm = trace_norm(&z.entries)?;
    Ok(ZBounds {
        lower: 1.0 / (d + 1.0),
        upper: 1.0 / (d + 1.0) + z_trace_norm / (d * (d + 1.0)),
        z_trace_norm,
    })
}

/// Closed-form Haar average without building a report.
pub fn closed_form_average(protocol: &CommitmentProtocol, v: &CheatUnitary) -> Result<f64> {
    Ok(AverageKernel::new(protocol)?.value(v.matrix()))
}

#[doc(hidden)]
pub fn state_payoff_gradient_check(
    protocol: &CommitmentProtocol,
    v: &CheatUnitary,
    phi: &ComplexVector,
) -> Result<(f64, DVector<f64>)> {
    let game = CheatGame::new(protocol, 0, 1)?;
    let forms = game.state_forms(v.matrix());
    let (val, g) = forms.value_and_gradient(phi);
    let real = DVector::from_iterator(2 * g.len(), g.iter().map(|z| z.re).chain(g.iter().map(|z| z.im)));
    Ok((val, real))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::choi_matrix;
    use crate::numerics::{
        diag, frobenius_norm, hadamard, identity, max_abs_diff, pauli_z, real_matrix, ONE,
    };
    use crate::protocol::{self, dephasing_pair, identity_vs_z};

    fn hadamard_v() -> CheatUnitary {
        CheatUnitary::new(hadamard()).unwrap()
    }

    #[test]
    fn cheat_unitary_validation() {
        assert!(CheatUnitary::new(real_matrix(2, 2, &[1.0, 1.0, 0.0, 1.0])).is_err());
        assert!(CheatUnitary::new(ComplexMatrix::zeros(2, 3)).is_err());
        assert!(CheatUnitary::permutation(&[1, 0]).is_ok());
        assert!(CheatUnitary::permutation(&[0, 0]).is_err());
        assert!(CheatUnitary::permutation(&[2, 0]).is_err());
    }

    #[test]
    fn apply_cheat_examples() {
        let f = dephasing_pair().family(0).clone();
        let same = apply_cheat(&f, &CheatUnitary::identity(2)).unwrap();
        assert_eq!(same.raw_operators(), f.raw_operators());

        let swapped = apply_cheat(&f, &CheatUnitary::permutation(&[1, 0]).unwrap()).unwrap();
        assert_eq!(swapped.raw_operators()[0], f.raw_operators()[1]);
        assert_eq!(swapped.raw_operators()[1], f.raw_operators()[0]);

        let h = apply_cheat(&f, &hadamard_v()).unwrap();
        let s = c(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        assert!(max_abs_diff(&h.raw_operators()[0], &(identity(2) * s)) < 1e-15);
        assert!(max_abs_diff(&h.raw_operators()[1], &(pauli_z() * s)) < 1e-15);

        assert!(apply_cheat(&f, &CheatUnitary::identity(3)).is_err());
    }

    #[test]
    fn apply_cheat_keeps_channel() {
        let mut rng = RandomSeed(2).rng();
        for _ in 0..20 {
            let f = protocol::random_tp_family(3, 2, 4, &mut rng);
            let v = CheatUnitary::haar(4, &mut rng);
            let g = apply_cheat(&f, &v).unwrap();
            let diff = choi_matrix(&g) - choi_matrix(&f);
            assert!(frobenius_norm(&diff).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn cheat_probability_examples() {
        let mut rng = RandomSeed(3).rng();
        let p = protocol::random_protocol(3, 3, [2, 3], RandomSeed(8));
        let n = p.padded_cardinality();
        for bit in 0..2 {
            let phi = haar_state(3, &mut rng);
            let val = alice_cheat_probability(&p, &CheatUnitary::identity(n), &phi, bit, bit).unwrap();
            assert!((val - 1.0).abs() < 1e-12);
        }

        let deph = dephasing_pair();
        for _ in 0..10 {
            let phi = haar_state(2, &mut rng);
            let val = alice_cheat_probability(&deph, &hadamard_v(), &phi, 0, 1).unwrap();
            assert!((val - 1.0).abs() < 1e-12);
        }

        let plus = PureState::bloch(std::f64::consts::FRAC_PI_2, 0.0);
        let phase = CheatUnitary::new(diag(&[Complex64::from_polar(1.0, 0.7)])).unwrap();
        let val = alice_cheat_probability(&identity_vs_z(), &phase, &plus, 0, 1).unwrap();
        assert!(val.abs() < 1e-15);
    }

    #[test]
    fn cheat_probability_errors() {
        let p = identity_vs_z();
        let phi = PureState::basis(3, 0);
        assert!(alice_cheat_probability(&p, &CheatUnitary::identity(1), &phi, 0, 1).is_err());
        let phi = PureState::basis(2, 0);
        assert!(alice_cheat_probability(&p, &CheatUnitary::identity(2), &phi, 0, 1).is_err());
        assert!(alice_cheat_probability(&p, &CheatUnitary::identity(1), &phi, 0, 2).is_err());
        let f0 = KrausFamily::square(vec![diag(&[ONE, ZERO])]).unwrap();
        let dec = CommitmentProtocol::new("abort", f0.clone(), f0).unwrap();
        assert!(matches!(
            alice_cheat_probability(&dec, &CheatUnitary::identity(1), &phi, 0, 1),
            Err(Error::NotTracePreserving { .. })
        ));
    }

    #[test]
    fn procrustes_examples() {
        let p = protocol::random_protocol(2, 2, [3, 3], RandomSeed(5));
        let same = procrustes_cheat(p.family(0), p.family(0)).unwrap();
        assert!(same.residual < 1e-9);
        assert!(max_abs_diff(same.v.matrix(), &identity(3)) < 1e-9);

        let deph = dephasing_pair();
        let sol = procrustes_cheat(deph.family(0), deph.family(1)).unwrap();
        assert!(sol.residual < 1e-12);
        assert!((sol.cross_gram_trace_norm - 2.0).abs() < 1e-12);
        assert!(max_abs_diff(&sol.cross_gram, &hadamard()) < 1e-15);

        let iz = identity_vs_z();
        let sol = procrustes_cheat(iz.family(0), iz.family(1)).unwrap();
        assert!(sol.cross_gram[(0, 0)].norm() < 1e-15);
        assert!((sol.residual - 4.0).abs() < 1e-12);
        assert!(!sol.unique);
    }

    #[test]
    fn procrustes_residual_matches_direct_and_beats_random() {
        let mut rng = RandomSeed(17).rng();
        for seed in 0..5 {
            let p = protocol::random_protocol(2, 3, [2, 3], RandomSeed(100 + seed));
            let sol = procrustes_cheat(p.family(0), p.family(1)).unwrap();
            let direct = frobenius_gap(p.family(0), p.family(1), &sol.v).unwrap();
            assert!((direct - sol.residual).abs() < 1e-9);
            for _ in 0..200 {
                let v = CheatUnitary::haar(3, &mut rng);
                let other = frobenius_gap(p.family(0), p.family(1), &v).unwrap();
                assert!(other >= sol.residual - 1e-9);
            }
        }
    }

    #[test]
    fn kraus_gap_examples() {
        let p = protocol::random_protocol(2, 2, [2, 2], RandomSeed(1));
        assert!(kraus_gap(p.family(0), p.family(0), &CheatUnitary::identity(2)).unwrap() < 1e-14);
        let deph = dephasing_pair();
        assert!(kraus_gap(deph.family(0), deph.family(1), &hadamard_v()).unwrap() < 1e-14);
        let iz = identity_vs_z();
        let gap = kraus_gap(iz.family(0), iz.family(1), &CheatUnitary::identity(1)).unwrap();
        assert!((gap - 4.0).abs() < 1e-14);
    }

    #[test]
    fn lower_bound_examples() {
        let deph = dephasing_pair();
        assert!((alice_lower_bound(&deph, &hadamard_v()).unwrap() - 1.0).abs() < 1e-14);
        let iz = identity_vs_z();
        assert_eq!(alice_lower_bound(&iz, &CheatUnitary::identity(1)).unwrap(), 0.0);
    }

    #[test]
    fn bound_chain_holds_on_random_inputs() {
        let mut rng = RandomSeed(4).rng();
        for seed in 0..30 {
            let p = protocol::random_protocol(2, 2, [2, 2], RandomSeed(200 + seed));
            // mix Procrustes with random unitaries to cover small and large gaps
            let v = if seed % 2 == 0 {
                procrustes_cheat(p.family(0), p.family(1)).unwrap().v
            } else {
                CheatUnitary::haar(2, &mut rng)
            };
            let phi = haar_state(2, &mut rng);
            let chain = bound_chain(&p, &v, &phi).unwrap();
            assert!(chain.worst_violation() <= 1e-10, "{chain:?}");
            assert!(chain.probability <= 1.0 + 1e-12 && chain.probability >= 0.0);
        }
    }

    #[test]
    fn haar_pair_examples() {
        for d in 1..5 {
            let v = haar_pair_integral(&identity(d), &identity(d)).unwrap();
            assert!((v - ONE).norm() < 1e-15);
        }
        let z = haar_pair_integral(&pauli_z(), &pauli_z()).unwrap();
        assert!((z.re - 1.0 / 3.0).abs() < 1e-15 && z.im == 0.0);
        assert!(haar_pair_integral(&identity(2), &identity(3)).is_err());
    }

    #[test]
    fn haar_pair_monte_carlo_agrees() {
        let mut rng = RandomSeed(9).rng();
        let a = numerics::random::ginibre(3, 3, &mut rng);
        let b = numerics::random::ginibre(3, 3, &mut rng);
        let exact = haar_pair_integral(&a, &b).unwrap();
        let (mean, se) = haar_pair_monte_carlo(&a, &b, 100_000, RandomSeed(10)).unwrap();
        assert!((mean.re - exact.re).abs() <= 5.0 * se.re, "{mean} {exact} {se}");
        assert!((mean.im - exact.im).abs() <= 5.0 * se.im, "{mean} {exact} {se}");
    }

    #[test]
    fn random_unitary_detection() {
        assert!(random_unitary_decomposition(identity_vs_z().family(1)).is_some());
        assert!(random_unitary_decomposition(dephasing_pair().family(1)).is_some());
        assert!(random_unitary_decomposition(dephasing_pair().family(0)).is_none());
        let padded = dephasing_pair().family(1).padded(3);
        assert!(random_unitary_decomposition(&padded).is_none());
    }

    #[test]
    fn haar_average_examples() {
        let iz = identity_vs_z();
        let r = haar_average_cheat(&iz, &CheatUnitary::identity(1), AverageMode::ClosedForm, 0, RandomSeed(0)).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-15);

        let deph = dephasing_pair();
        let v = procrustes_cheat(deph.family(0), deph.family(1)).unwrap().v;
        let r = haar_average_cheat(&deph, &v, AverageMode::ClosedForm, 0, RandomSeed(0)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        let r = haar_average_cheat(&deph, &v, AverageMode::MonteCarlo, 1000, RandomSeed(0)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);

        let swap = protocol::random_protocol(2, 2, [2, 2], RandomSeed(0));
        assert!(matches!(
            haar_average_cheat(&swap, &CheatUnitary::identity(2), AverageMode::ClosedForm, 0, RandomSeed(0)),
            Err(Error::ModeUnsupported(_))
        ));
    }

    #[test]
    fn haar_average_modes_agree_on_random_unitary_protocols() {
        let mut rng = RandomSeed(31).rng();
        for seed in 0..3 {
            let p = protocol::random_unitary_protocol(2, 2, RandomSeed(300 + seed));
            let v = CheatUnitary::haar(2, &mut rng);
            let exact = haar_average_cheat(&p, &v, AverageMode::ClosedForm, 0, RandomSeed(0)).unwrap();
            let mc = haar_average_cheat(&p, &v, AverageMode::MonteCarlo, 100_000, RandomSeed(seed)).unwrap();
            let se = mc.standard_error.unwrap();
            assert!((exact.value - mc.value).abs() <= 5.0 * se, "{} {} {se}", exact.value, mc.value);
        }
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let p = protocol::random_unitary_protocol(3, 2, RandomSeed(1));
        let v = CheatUnitary::identity(2);
        let a = haar_average_cheat(&p, &v, AverageMode::MonteCarlo, 10_000, RandomSeed(4)).unwrap();
        let b = haar_average_cheat(&p, &v, AverageMode::MonteCarlo, 10_000, RandomSeed(4)).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn z_matrix_examples() {
        let deph = dephasing_pair();
        let b = z_matrix_bounds(&deph).unwrap();
        assert!((b.z_trace_norm - 4.0).abs() < 1e-12);
        assert!((b.upper - 1.0).abs() < 1e-12);

        let iz = identity_vs_z();
        let z = z_matrix(&iz).unwrap();
        assert!(z.entries[(0, 0)].norm() < 1e-15);
        let b = z_matrix_bounds(&iz).unwrap();
        assert!((b.lower - 1.0 / 3.0).abs() < 1e-15 && (b.upper - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn optimized_average_within_z_bounds() {
        for seed in 0..5 {
            let p = protocol::random_unitary_protocol(2, 2, RandomSeed(400 + seed));
            let r = optimize_haar_average(&p, 4, RandomSeed(seed)).unwrap();
            assert!(r.value >= r.bound_lower.unwrap() - 1e-9);
            assert!(r.value <= r.bound_upper.unwrap() + 1e-9);
        }
        let deph = dephasing_pair();
        let r = optimize_haar_average(&deph, 2, RandomSeed(0)).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn state_gradient_matches_finite_differences() {
        let p = protocol::random_protocol(3, 2, [2, 3], RandomSeed(12));
        let mut rng = RandomSeed(13).rng();
        let v = CheatUnitary::haar(3, &mut rng);
        let phi = haar_state(3, &mut rng).into_amplitudes() * c(1.3, 0.0);
        let (_, grad) = state_payoff_gradient_check(&p, &v, &phi).unwrap();
        let forms = CheatGame::new(&p, 0, 1).unwrap().state_forms(v.matrix());
        let h = 1e-6;
        for k in 0..6 {
            let mut up = phi.clone();
            let mut down = phi.clone();
            let delta = if k < 3 { c(h, 0.0) } else { c(0.0, h) };
            up[k % 3] += delta;
            down[k % 3] -= delta;
            let fd = (forms.value(&up) - forms.value(&down)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-7, "coordinate {k}: {fd} vs {}", grad[k]);
        }
        // state-form value agrees with the overlap route
        let game = CheatGame::new(&p, 0, 1).unwrap();
        let unit = PureState::normalize(phi.clone()).unwrap();
        assert!((forms.value(&phi) - game.probability(&v, &unit).unwrap()).abs() < 1e-12);
    }
}
