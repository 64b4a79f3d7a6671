//! The binding game: Alice picks a cheat unitary `V`, Bob's anonymous state
//! `φ` is the worst case for her. Solved numerically by alternating best
//! responses with a growing set of Bob's states.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alice::{
    alice_average, kraus_gap, procrustes_cheat, AverageConfig, AverageMode, CheatGame,
    CheatUnitary, StateForms, StateOverlaps,
};
use crate::bob::{cb_distance, CbConfig};
use crate::channel::KrausFamily;
use crate::error::{Error, Result};
use crate::numerics::optim::{bfgs, maximize_over_unitaries, BfgsOptions, UnitaryAscent};
use crate::numerics::{
    c, haar_state, haar_unitary, hs_inner, pauli_x, pauli_y, pauli_z, trace, ComplexMatrix, ComplexVector,
    PureState, RandomSeed,
};
use crate::protocol::{CommitmentProtocol, ProtocolFamily};

/// Soft-min temperatures for the outer ascent, coarse to fine.
const SOFTMIN_SCHEDULE: [f64; 3] = [1e-2, 1e-3, 1e-4];

#[derive(Debug, Clone, Copy)]
pub struct MinimaxConfig {
    pub outer_restarts: usize,
    pub inner_restarts: usize,
    pub max_rounds: usize,
    pub seed: RandomSeed,
    pub tol: f64,
    /// Committed bit.
    pub from_bit: usize,
    /// Bit Alice pretends to have committed.
    pub to_bit: usize,
}

impl Default for MinimaxConfig {
    fn default() -> Self {
        Self {
            outer_restarts: 4,
            inner_restarts: 8,
            max_rounds: 25,
            seed: RandomSeed(7),
            tol: 1e-9,
            from_bit: 0,
            to_bit: 1,
        }
    }
}

impl MinimaxConfig {
    pub fn reversed(mut self) -> Self {
        std::mem::swap(&mut self.from_bit, &mut self.to_bit);
        self
    }
}

#[derive(Debug, Clone)]
pub struct GameResult {
    /// Alice's worst-case cheating probability at `v_star`, attained at `phi_star`.
    pub alice_value: f64,
    pub v_star: CheatUnitary,
    pub phi_star: PureState,
    /// `max(0, 1 − gap/2)²` at `v_star`.
    pub lower_bound: f64,
    /// Minimum of the payoff at `v_star` over every state Bob's side found.
    pub set_upper: f64,
    pub worst_states: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub seed: RandomSeed,
    pub converged: bool,
}

fn descend(forms: &StateForms, start: &ComplexVector) -> (f64, ComplexVector, usize) {
    let d = start.len();
    let to_complex = |x: &DVector<f64>| ComplexVector::from_fn(d, |i, _| c(x[i], x[d + i]));
    let x0 = DVector::from_iterator(2 * d, start.iter().map(|z| z.re).chain(start.iter().map(|z| z.im)));
    let m = bfgs(
        |x| {
            let (v, g) = forms.value_and_gradient(&to_complex(x));
            let grad = DVector::from_iterator(2 * d, g.iter().map(|z| z.re).chain(g.iter().map(|z| z.im)));
            (v, grad)
        },
        x0,
        BfgsOptions { max_iter: 300, grad_tol: 1e-12, value_tol: 1e-15 },
    );
    let phi = to_complex(&m.x);
    let norm = phi.norm();
    (m.value, phi / c(norm, 0.0), m.iterations)
}

/// Multi-start descent over states: `restarts` Haar-random starts plus
/// every warm start. Returns the best unit vector, its payoff and the
/// iteration count.
fn best_response_inner(
    game: &CheatGame,
    v: &ComplexMatrix,
    restarts: usize,
    seed: RandomSeed,
    warm: &[ComplexVector],
) -> (ComplexVector, f64, usize) {
    let forms = game.state_forms(v);
    let starts: Vec<ComplexVector> = warm
        .iter()
        .cloned()
        .chain((0..restarts).map(|k| haar_state(game.dim(), &mut seed.derive(k as u64).rng()).into_amplitudes()))
        .collect();
    let runs: Vec<(f64, ComplexVector, usize)> =
        starts.par_iter().map(|s| descend(&forms, s)).collect();
    let mut iterations = 0;
    let mut best: Option<(f64, ComplexVector)> = None;
    for (_, phi, it) in runs {
        iterations += it;
        // score on the overlap route so the reported value is the payoff itself
        let value = game.overlaps(&phi).probability(v);
        if best.as_ref().is_none_or(|b| value < b.0) {
            best = Some((value, phi));
        }
    }
    let (value, phi) = best.expect("at least one start");
    (phi, value, iterations)
}

/// Bob's best reply to a fixed cheat: the anonymous state minimizing
/// Alice's 0 → 1 cheating probability. Any state gives an upper bound on
/// the true minimum.
pub fn best_response_state(
    protocol: &CommitmentProtocol,
    v: &CheatUnitary,
    restarts: usize,
    seed: RandomSeed,
) -> Result<(PureState, f64)> {
    let game = CheatGame::new(protocol, 0, 1)?;
    if v.n() != game.cardinality() {
        return Err(Error::DimensionMismatch(format!(
            "cheat unitary acts on {} outcomes, padded cardinality is {}",
            v.n(),
            game.cardinality()
        )));
    }
    let (phi, value, _) = best_response_inner(&game, v.matrix(), restarts.max(1), seed, &[]);
    Ok((PureState::normalize(phi)?, value))
}

fn soft_min(values: impl Iterator<Item = f64> + Clone, tau: f64) -> f64 {
    let m = values.clone().fold(f64::INFINITY, f64::min);
    let s: f64 = values.map(|x| (-(x - m) / tau).exp()).sum();
    m - tau * s.ln()
}

fn hard_min(set: &[StateOverlaps], v: &ComplexMatrix) -> f64 {
    set.iter().map(|o| o.probability(v)).fold(f64::INFINITY, f64::min)
}

struct Run {
    value: f64,
    v: ComplexMatrix,
    phi: ComplexVector,
    set_upper: f64,
    states: usize,
    iterations: usize,
    converged: bool,
}

fn solve_from(game: &CheatGame, v0: ComplexMatrix, cfg: &MinimaxConfig, seed: RandomSeed) -> Run {
    let mut v = v0;
    let mut states: Vec<ComplexVector> = Vec::new();
    let mut set: Vec<StateOverlaps> = Vec::new();
    let mut iterations = 0;
    let mut previous: Option<f64> = None;
    let mut last: Option<(ComplexVector, f64)> = None;
    let mut converged = false;

    for round in 0..cfg.max_rounds.max(1) {
        let (phi, value, it) = best_response_inner(game, &v, cfg.inner_restarts, seed.derive(round as u64), &states);
        iterations += it;
        set.push(game.overlaps(&phi));
        states.push(phi.clone());
        last = Some((phi, value));
        if previous.is_some_and(|p| (value - p).abs() < cfg.tol) {
            converged = true;
            break;
        }
        previous = Some(value);

        let mut candidate = v.clone();
        for tau in SOFTMIN_SCHEDULE {
            let objective = |m: &ComplexMatrix| soft_min(set.iter().map(|o| o.probability(m)), tau);
            let (next, _, it) = maximize_over_unitaries(&candidate, objective, UnitaryAscent::default());
            iterations += it;
            candidate = next;
        }
        if hard_min(&set, &candidate) >= hard_min(&set, &v) {
            v = candidate;
        }
        last = None;
    }

    let (phi, value) = match last {
        Some(found) => found,
        None => {
            let (phi, value, it) = best_response_inner(game, &v, cfg.inner_restarts, seed.derive(u64::MAX), &states);
            iterations += it;
            set.push(game.overlaps(&phi));
            states.push(phi.clone());
            (phi, value)
        }
    };
    Run { value, set_upper: hard_min(&set, &v), v, phi, states: states.len(), iterations, converged }
}

/// Approximate max over `V` of min over `φ` of the cheating payoff in the
/// configured direction. Restart 0 starts from the Procrustes cheat, the
/// others from Haar-random unitaries.
pub fn minimax_solve(protocol: &CommitmentProtocol, cfg: &MinimaxConfig) -> Result<GameResult> {
    let game = CheatGame::new(protocol, cfg.from_bit, cfg.to_bit)?;
    let (from, to) = (protocol.family(cfg.from_bit), protocol.family(cfg.to_bit));
    let start = procrustes_cheat(from, to)?.v;
    let n = game.cardinality();
    let restarts = cfg.outer_restarts.max(1);

    let runs: Vec<Run> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let stream = cfg.seed.derive(r as u64);
            let v0 = if r == 0 {
                start.matrix().clone()
            } else {
                haar_unitary(n, &mut stream.derive(u64::MAX).rng())
            };
            solve_from(&game, v0, cfg, stream)
        })
        .collect();

    let iterations = runs.iter().map(|r| r.iterations).sum();
    let converged = runs.iter().all(|r| r.converged);
    let mut best = 0;
    for (k, run) in runs.iter().enumerate() {
        if run.value > runs[best].value {
            best = k;
        }
    }
    let run = runs.into_iter().nth(best).expect("at least one restart");
    let v_star = CheatUnitary::from_unitary_unchecked(fix_row_phases(&run.v, from, to));
    let gap = kraus_gap(from, to, &v_star)?;
    Ok(GameResult {
        alice_value: run.value.clamp(0.0, 1.0),
        phi_star: PureState::normalize(run.phi)?,
        v_star,
        lower_bound: (1.0 - gap / 2.0).max(0.0).powi(2),
        set_upper: run.set_upper,
        worst_states: run.states,
        iterations,
        restarts,
        seed: cfg.seed,
        converged,
    })
}

/// Row phases of `V` do not change the payoff but do change the Kraus gap.
/// Picks them so that every `Tr(F_J† E_J)` is real and nonnegative.
fn fix_row_phases(v: &ComplexMatrix, from: &KrausFamily, to: &KrausFamily) -> ComplexMatrix {
    let n = v.nrows();
    let (f, e) = (from.padded(n), to.padded(n));
    let (f, e) = (f.raw_operators(), e.raw_operators());
    let mut out = v.clone();
    for j in 0..n {
        let t: num_complex::Complex64 = (0..n).map(|l| v[(j, l)].conj() * hs_inner(&f[l], &e[j])).sum();
        if t.norm() > 1e-300 {
            let phase = t / t.norm();
            for l in 0..n {
                out[(j, l)] *= phase;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub alice_value: f64,
    pub v: CheatUnitary,
    pub phi: PureState,
    pub grid_points: (usize, usize),
}

/// Pauli coefficients `(m0, m)` with `<φ|M|φ> = m0 + m·r` for Bloch vector `r`.
fn bloch_linear(m: &ComplexMatrix) -> [num_complex::Complex64; 4] {
    let half = c(0.5, 0.0);
    [
        trace(m) * half,
        trace(&(m * pauli_x())) * half,
        trace(&(m * pauli_y())) * half,
        trace(&(m * pauli_z())) * half,
    ]
}

/// `U(2)` up to row phases, which never change the payoff.
fn qubit_unitary(t: f64, beta: f64) -> ComplexMatrix {
    let e = num_complex::Complex64::from_polar(1.0, beta);
    let (ct, st) = (c(t.cos(), 0.0), c(t.sin(), 0.0));
    ComplexMatrix::from_row_slice(2, 2, &[ct, st * e, -st * e.conj(), ct])
}

/// Exhaustive max-min over a grid of cheat unitaries and Bloch-sphere
/// states, for qubit inputs and at most two Kraus operators. Accuracy is of
/// the order of the grid step.
pub fn brute_force_oracle(protocol: &CommitmentProtocol, step: f64) -> Result<OracleResult> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("grid step must be positive, got {step}")));
    }
    let game = CheatGame::new(protocol, 0, 1)?;
    let n = game.cardinality();
    if protocol.dim_in() != 2 || n > 2 {
        return Err(Error::Unsupported(format!(
            "grid oracle needs a qubit input and at most 2 Kraus operators, got dimension {} and {n}",
            protocol.dim_in()
        )));
    }
    use std::f64::consts::{FRAC_PI_2, PI};
    let n_theta = (PI / step).ceil() as usize;
    let n_phi = (2.0 * PI / step).ceil() as usize;
    let mut bloch = Vec::with_capacity((n_theta + 1) * n_phi);
    for i in 0..=n_theta {
        let theta = PI * i as f64 / n_theta as f64;
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            bloch.push((theta, phi, [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]));
        }
    }

    let mut unitaries = Vec::new();
    if n == 1 {
        unitaries.push(crate::numerics::identity(1));
    } else {
        let n_t = (FRAC_PI_2 / step).ceil() as usize;
        let n_b = (2.0 * PI / step).ceil() as usize;
        for i in 0..=n_t {
            for j in 0..n_b {
                unitaries.push(qubit_unitary(FRAC_PI_2 * i as f64 / n_t as f64, 2.0 * PI * j as f64 / n_b as f64));
            }
        }
    }

    let payoff = |coeffs: &[([num_complex::Complex64; 4], [f64; 4])], r: &[f64; 3]| -> f64 {
        coeffs
            .iter()
            .map(|(a, b)| {
                let den = b[0] + b[1] * r[0] + b[2] * r[1] + b[3] * r[2];
                if den < crate::alice::NEGLIGIBLE_OUTCOME {
                    return 0.0;
                }
                (a[0] + a[1] * r[0] + a[2] * r[1] + a[3] * r[2]).norm_sqr() / den
            })
            .sum()
    };

    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    let mut hint = 0usize;
    for (vi, v) in unitaries.iter().enumerate() {
        let forms = game.state_forms(v);
        let coeffs: Vec<([num_complex::Complex64; 4], [f64; 4])> = forms
            .pairs()
            .map(|(a, b)| {
                let bl = bloch_linear(b);
                (bloch_linear(a), [bl[0].re, bl[1].re, bl[2].re, bl[3].re])
            })
            .collect();
        // the previous minimizer usually prunes this V immediately
        let mut min = payoff(&coeffs, &bloch[hint].2);
        let mut arg = hint;
        if min <= best.0 {
            continue;
        }
        for (k, point) in bloch.iter().enumerate() {
            let val = payoff(&coeffs, &point.2);
            if val < min {
                min = val;
                arg = k;
                if min <= best.0 {
                    break;
                }
            }
        }
        hint = arg;
        if min > best.0 {
            best = (min, vi, arg);
        }
    }
    let (theta, phi, _) = bloch[best.2];
    Ok(OracleResult {
        alice_value: best.0,
        v: CheatUnitary::new(unitaries[best.1].clone())?,
        phi: PureState::bloch(theta, phi),
        grid_points: (unitaries.len(), bloch.len()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub parameter: f64,
    pub epsilon: f64,
    pub alice_minimax: f64,
    pub alice_average: f64,
    pub average_mode: AverageMode,
    /// `alice_average / alice_minimax`, absent when the minimax value is 0.
    pub ratio: Option<f64>,
    /// Set when `1 − alice_minimax` exceeds the supplied ω-candidate at `epsilon`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub parameter: f64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub points: Vec<TradeoffPoint>,
    pub skipped: Vec<SkippedPoint>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScanConfig {
    pub cb: CbConfig,
    pub game: MinimaxConfig,
    pub average: AverageConfig,
}

/// Concealment (`epsilon`) against binding (`alice_minimax`) along a
/// protocol family. Parameters the generator rejects are skipped with a
/// reason.
pub fn tradeoff_scan(
    family: &dyn ProtocolFamily,
    params: &[f64],
    cfg: &ScanConfig,
    omega: Option<&dyn Fn(f64) -> f64>,
) -> ScanResult {
    let mut out = ScanResult::default();
    for &parameter in params {
        match scan_point(family, parameter, cfg, omega) {
            Ok(point) => out.points.push(point),
            Err(e) => out.skipped.push(SkippedPoint { parameter, reason: e.to_string() }),
        }
    }
    out
}

fn scan_point(
    family: &dyn ProtocolFamily,
    parameter: f64,
    cfg: &ScanConfig,
    omega: Option<&dyn Fn(f64) -> f64>,
) -> Result<TradeoffPoint> {
    let protocol = family.generate(parameter)?;
    let epsilon = cb_distance(protocol.family(0), protocol.family(1), &cfg.cb)?.cb_lower;
    let game = minimax_solve(&protocol, &cfg.game)?;
    let average = alice_average(&protocol, &game.v_star, &cfg.average)?;
    let alice_minimax = game.alice_value;
    Ok(TradeoffPoint {
        parameter,
        epsilon,
        alice_minimax,
        alice_average: average.value,
        average_mode: average.mode.unwrap_or(AverageMode::MonteCarlo),
        ratio: (alice_minimax > 0.0).then(|| average.value / alice_minimax),
        flagged: omega.is_some_and(|w| 1.0 - alice_minimax > w(epsilon)),
    })
}
