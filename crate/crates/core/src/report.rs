//! One-shot analysis of a protocol: concealment, binding and the bounds
//! that tie them together.

use serde::{Deserialize, Serialize};

use crate::alice::{alice_average, procrustes_cheat, z_matrix_bounds, AverageConfig, AverageMode};
use crate::bob::{bob_optimal_probability, CbConfig};
use crate::error::Result;
use crate::game::{minimax_solve, MinimaxConfig};
use crate::numerics::{RandomSeed, VALIDATION_TOL};
use crate::protocol::CommitmentProtocol;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy)]
pub struct AnalysisConfig {
    pub seed: RandomSeed,
    /// Restarts for the CB-distance search.
    pub restarts: usize,
    pub tol: f64,
    pub samples: usize,
    /// `None`: closed form when available, Monte Carlo otherwise.
    pub mode: Option<AverageMode>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { seed: RandomSeed(7), restarts: 32, tol: 1e-7, samples: 100_000, mode: None }
    }
}

impl AnalysisConfig {
    pub fn cb(&self) -> CbConfig {
        CbConfig { restarts: self.restarts, seed: self.seed, tol: self.tol, ..Default::default() }
    }

    pub fn game(&self) -> MinimaxConfig {
        MinimaxConfig { seed: self.seed, ..Default::default() }
    }

    pub fn average(&self) -> AverageConfig {
        AverageConfig { mode: self.mode, samples: self.samples, seed: self.seed, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageFigure {
    pub value: f64,
    pub mode: AverageMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standard_error: Option<f64>,
}

/// Each bound is paired with a reported value it must not contradict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    /// `1/(d+1)`, below `alice_average` (random-unitary bit 1 only).
    pub average_lower: Option<f64>,
    /// `1/(d+1) + ‖Z‖₁/(d(d+1))`, above `alice_average` (random-unitary bit 1 only).
    pub average_upper: Option<f64>,
    pub z_trace_norm: Option<f64>,
    /// `½·√gap` at the Procrustes cheat, above `bob_p_opt_lower − ½`.
    pub bob_advantage_upper: f64,
    /// `max(0, 1 − gap/2)²` at Alice's minimax cheat, below `alice_minimax`.
    pub alice_minimax_lower: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    pub perfectly_concealing: bool,
    pub aborting: bool,
    pub rank_depends_on_b: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub seed: u64,
    pub restarts: usize,
    pub samples: usize,
    pub version: String,
}

/// Field order here is the JSON field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub protocol: String,
    pub dim_in: usize,
    pub dim_out: usize,
    pub epsilon_lower: f64,
    pub bob_p_opt_lower: f64,
    /// Committed 0, opening as 1.
    pub alice_minimax: f64,
    /// Committed 1, opening as 0.
    pub alice_minimax_reverse: f64,
    pub alice_average: AverageFigure,
    /// `alice_average / alice_minimax`, absent when the minimax value is 0.
    pub average_to_minimax: Option<f64>,
    pub bounds: Bounds,
    pub flags: Flags,
    pub provenance: ReportProvenance,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Largest amount by which a reported value contradicts its bound.
    pub fn worst_bound_violation(&self) -> f64 {
        let b = &self.bounds;
        let mut worst: f64 = 0.0;
        if let Some(lo) = b.average_lower {
            worst = worst.max(lo - self.alice_average.value);
        }
        if let Some(hi) = b.average_upper {
            worst = worst.max(self.alice_average.value - hi);
        }
        worst = worst.max(self.bob_p_opt_lower - 0.5 - b.bob_advantage_upper);
        worst.max(b.alice_minimax_lower - self.alice_minimax)
    }
}

/// Runs every analysis on a trace-preserving protocol with equal priors.
pub fn analyze(protocol: &CommitmentProtocol, cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    protocol.require_trace_preserving()?;
    let bob = bob_optimal_probability(protocol, &cfg.cb())?;
    let forward = minimax_solve(protocol, &cfg.game())?;
    let reverse = minimax_solve(protocol, &cfg.game().reversed())?;
    let average = alice_average(protocol, &forward.v_star, &cfg.average())?;
    let procrustes = procrustes_cheat(protocol.family(0), protocol.family(1))?;
    let z = z_matrix_bounds(protocol).ok();
    let closed = average.mode == Some(AverageMode::ClosedForm);

    let bob_advantage_upper = match bob.gap_upper_bound {
        Some(b) => b,
        None => crate::bob::bob_gap_upper_bound(protocol, &procrustes.v)?,
    };
    Ok(AnalysisReport {
        protocol: protocol.name().to_string(),
        dim_in: protocol.dim_in(),
        dim_out: protocol.dim_out(),
        epsilon_lower: bob.cb_lower,
        bob_p_opt_lower: bob.p_opt_lower,
        alice_minimax: forward.alice_value,
        alice_minimax_reverse: reverse.alice_value,
        average_to_minimax: (forward.alice_value > 0.0).then(|| average.value / forward.alice_value),
        alice_average: AverageFigure {
            value: average.value,
            mode: average.mode.unwrap_or(AverageMode::MonteCarlo),
            standard_error: average.standard_error,
        },
        bounds: Bounds {
            average_lower: z.filter(|_| closed).map(|z| z.lower),
            average_upper: z.filter(|_| closed).map(|z| z.upper),
            z_trace_norm: z.map(|z| z.z_trace_norm),
            bob_advantage_upper,
            alice_minimax_lower: forward.lower_bound,
        },
        flags: Flags {
            perfectly_concealing: protocol.is_perfectly_concealing(VALIDATION_TOL),
            aborting: protocol.is_aborting(),
            rank_depends_on_b: protocol.rank_depends_on_bit(),
        },
        provenance: ReportProvenance {
            seed: cfg.seed.0,
            restarts: cfg.restarts,
            samples: if closed { 0 } else { cfg.samples },
            version: VERSION.to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{dephasing_pair, identity_vs_z, random_protocol};

    #[test]
    fn dephasing_pair_report() {
        let r = analyze(&dephasing_pair(), &AnalysisConfig::default()).unwrap();
        assert!(r.epsilon_lower <= 1e-6);
        assert!(r.alice_minimax >= 1.0 - 1e-6);
        assert!(r.alice_minimax_reverse >= 1.0 - 1e-6);
        assert!(r.flags.perfectly_concealing && !r.flags.aborting);
        assert_eq!(r.alice_average.mode, AverageMode::ClosedForm);
        assert!((r.bounds.z_trace_norm.unwrap() - 4.0).abs() < 1e-8);
        assert!(r.worst_bound_violation() <= 1e-8);
    }

    #[test]
    fn identity_vs_z_report() {
        let r = analyze(&identity_vs_z(), &AnalysisConfig::default()).unwrap();
        assert!((r.epsilon_lower - 2.0).abs() < 1e-4);
        assert!(r.alice_minimax < 1e-4);
        assert!(r.average_to_minimax.is_none_or(f64::is_finite));
        assert!((r.alice_average.value - 1.0 / 3.0).abs() < 1e-9);
        assert!(!r.flags.perfectly_concealing);
        assert!(r.worst_bound_violation() <= 1e-8);
    }

    #[test]
    fn general_protocol_uses_monte_carlo_and_is_deterministic() {
        let p = random_protocol(2, 2, [2, 2], RandomSeed(4));
        let cfg = AnalysisConfig { samples: 5_000, restarts: 8, ..Default::default() };
        let a = analyze(&p, &cfg).unwrap();
        assert_eq!(a.alice_average.mode, AverageMode::MonteCarlo);
        assert!(a.alice_average.standard_error.is_some());
        assert!(a.bounds.average_upper.is_none());
        assert!(a.worst_bound_violation() <= 1e-8);
        let b = analyze(&p, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        for v in [a.bob_p_opt_lower, a.alice_minimax, a.alice_minimax_reverse, a.alice_average.value] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn field_order_is_fixed() {
        let r = analyze(&identity_vs_z(), &AnalysisConfig { restarts: 4, ..Default::default() }).unwrap();
        let json = r.to_json();
        let keys = ["\"protocol\"", "\"epsilon_lower\"", "\"bob_p_opt_lower\"", "\"alice_minimax\"", "\"alice_average\"", "\"bounds\"", "\"flags\"", "\"provenance\""];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }
}
