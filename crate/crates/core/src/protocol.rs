//! A single-step commitment protocol: the pair of bit modulations.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;

use crate::channel::{self, choi_matrix, complete_to_tp, validate_family, KrausFamily};
use crate::error::{Error, Result};
use crate::numerics::{
    self, c, diag, identity, max_abs_diff, pauli_z, ComplexMatrix, RandomSeed, VALIDATION_TOL,
    ONE, ZERO,
};

/// The two modulations `M^(0)`, `M^(1)` over shared dimensions.
#[derive(Debug, Clone)]
pub struct CommitmentProtocol {
    name: String,
    families: [KrausFamily; 2],
    priors: [f64; 2],
    abort_deficit: [ComplexMatrix; 2],
    deficit_rank: [usize; 2],
    completed: bool,
    trace_preserving: bool,
}

impl CommitmentProtocol {
    /// Validates both families. Trace-decreasing families are accepted and
    /// recorded; call [`CommitmentProtocol::completed`] to turn aborts into
    /// explicit outcomes.
    pub fn new(name: impl Into<String>, family0: KrausFamily, family1: KrausFamily) -> Result<Self> {
        if family0.dim_in() != family1.dim_in() || family0.dim_out() != family1.dim_out() {
            return Err(Error::DimensionMismatch(format!(
                "bit 0 maps {}->{}, bit 1 maps {}->{}",
                family0.dim_in(),
                family0.dim_out(),
                family1.dim_in(),
                family1.dim_out()
            )));
        }
        let r0 = validate_family(&family0, VALIDATION_TOL)
            .map_err(|e| Error::Validation { bit: 0, source: Box::new(e) })?;
        let r1 = validate_family(&family1, VALIDATION_TOL)
            .map_err(|e| Error::Validation { bit: 1, source: Box::new(e) })?;
        let trace_preserving = r0.tp && r1.tp;
        Ok(Self {
            name: name.into(),
            deficit_rank: [r0.deficit_rank(), r1.deficit_rank()],
            abort_deficit: [r0.deficit, r1.deficit],
            families: [family0, family1],
            priors: [0.5, 0.5],
            completed: false,
            trace_preserving,
        })
    }

    pub fn with_priors(mut self, priors: [f64; 2]) -> Result<Self> {
        channel::check_probabilities(&priors)?;
        self.priors = priors;
        Ok(self)
    }

    /// Completes trace-decreasing families with abort outcomes. When either
    /// bit needs an abort flag, both outputs are embedded in the extended space.
    pub fn completed(mut self) -> Result<Self> {
        if self.trace_preserving {
            return Ok(self);
        }
        let mut done = Vec::with_capacity(2);
        for (bit, fam) in self.families.iter().enumerate() {
            done.push(
                complete_to_tp(fam).map_err(|e| Error::Validation { bit, source: Box::new(e) })?,
            );
        }
        let dim_out = done.iter().map(KrausFamily::dim_out).max().unwrap_or(0);
        let f1 = done.pop().unwrap().embed_output(dim_out)?;
        let f0 = done.pop().unwrap().embed_output(dim_out)?;
        self.families = [f0, f1];
        self.completed = true;
        self.trace_preserving = true;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_in(&self) -> usize {
        self.families[0].dim_in()
    }

    pub fn dim_out(&self) -> usize {
        self.families[0].dim_out()
    }

    pub fn family(&self, bit: usize) -> &KrausFamily {
        &self.families[bit]
    }

    pub fn priors(&self) -> [f64; 2] {
        self.priors
    }

    /// `I − Σ E†E` of the families as supplied (before completion).
    pub fn abort_deficit(&self, bit: usize) -> &ComplexMatrix {
        &self.abort_deficit[bit]
    }

    /// The supplied families were strictly trace decreasing for some bit.
    pub fn is_aborting(&self) -> bool {
        self.deficit_rank.iter().any(|&r| r > 0)
    }

    /// Whether abort outcomes were added by completion.
    pub fn is_completed(&self) -> bool {
        self.completed
    }

    /// The abort subspace has different rank for the two bits. Such protocols
    /// are flagged but analyzed like any other.
    pub fn rank_depends_on_bit(&self) -> bool {
        self.deficit_rank[0] != self.deficit_rank[1]
    }

    pub fn is_trace_preserving(&self) -> bool {
        self.trace_preserving
    }

    pub fn require_trace_preserving(&self) -> Result<()> {
        if self.trace_preserving {
            return Ok(());
        }
        let deficit_norm = self
            .abort_deficit
            .iter()
            .map(|d| numerics::spectral_norm(d).unwrap_or(f64::NAN))
            .fold(0.0, f64::max);
        Err(Error::NotTracePreserving { deficit_norm })
    }

    /// Both families with weights absorbed, zero-padded to a common cardinality.
    pub fn padded_families(&self) -> (KrausFamily, KrausFamily) {
        let n = self.padded_cardinality();
        (self.families[0].padded(n), self.families[1].padded(n))
    }

    pub fn padded_cardinality(&self) -> usize {
        self.families[0].cardinality().max(self.families[1].cardinality())
    }

    /// The two channels coincide (equal Choi matrices within `tol`).
    pub fn is_perfectly_concealing(&self, tol: f64) -> bool {
        max_abs_diff(&choi_matrix(&self.families[0]), &choi_matrix(&self.families[1])) <= tol
    }
}

/// A one-parameter family of protocols, e.g. for tradeoff scans.
pub trait ProtocolFamily: Sync {
    fn name(&self) -> &str;
    fn generate(&self, parameter: f64) -> Result<CommitmentProtocol>;
}

/// `{I}` against `{exp(−iθZ/2)}` on a qubit.
#[derive(Debug, Clone, Copy, Default)]
pub struct RotationFamily;

impl ProtocolFamily for RotationFamily {
    fn name(&self) -> &str {
        "rotation"
    }
    fn generate(&self, theta: f64) -> Result<CommitmentProtocol> {
        rotation(theta)
    }
}

/// Full dephasing measurement `{P0, P1}` against partial dephasing of
/// strength `λ`: `{√(1−λ/2) I, √(λ/2) Z}`. Perfectly concealing at `λ = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DephasingFamily;

impl ProtocolFamily for DephasingFamily {
    fn name(&self) -> &str {
        "dephasing"
    }
    fn generate(&self, strength: f64) -> Result<CommitmentProtocol> {
        partial_dephasing(strength)
    }
}

pub fn family_by_name(name: &str) -> Option<Box<dyn ProtocolFamily>> {
    match name {
        "rotation" => Some(Box::new(RotationFamily)),
        "dephasing" => Some(Box::new(DephasingFamily)),
        _ => None,
    }
}

/// `{P0, P1}` against `{I/√2, Z/√2}`: one channel, two decompositions.
pub fn dephasing_pair() -> CommitmentProtocol {
    let h = c(FRAC_1_SQRT_2, 0.0);
    let f0 = KrausFamily::square(vec![diag(&[ONE, ZERO]), diag(&[ZERO, ONE])]).unwrap();
    let f1 = KrausFamily::square(vec![identity(2) * h, pauli_z() * h]).unwrap();
    CommitmentProtocol::new("dephasing-pair", f0, f1).unwrap()
}

pub fn identity_vs_z() -> CommitmentProtocol {
    let f0 = KrausFamily::square(vec![identity(2)]).unwrap();
    let f1 = KrausFamily::square(vec![pauli_z()]).unwrap();
    CommitmentProtocol::new("identity-vs-z", f0, f1).unwrap()
}

pub fn rotation_unitary(theta: f64) -> ComplexMatrix {
    diag(&[
        num_complex::Complex64::from_polar(1.0, -theta / 2.0),
        num_complex::Complex64::from_polar(1.0, theta / 2.0),
    ])
}

pub fn rotation(theta: f64) -> Result<CommitmentProtocol> {
    if !theta.is_finite() {
        return Err(Error::InvalidInput("rotation angle must be finite".into()));
    }
    let f0 = KrausFamily::square(vec![identity(2)])?;
    let f1 = KrausFamily::square(vec![rotation_unitary(theta)])?;
    CommitmentProtocol::new(format!("rotation({theta})"), f0, f1)
}

pub fn partial_dephasing(strength: f64) -> Result<CommitmentProtocol> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidInput(format!("dephasing strength {strength} outside [0, 1]")));
    }
    let f0 = KrausFamily::square(vec![diag(&[ONE, ZERO]), diag(&[ZERO, ONE])])?;
    let f1 = KrausFamily::square(vec![
        identity(2) * c((1.0 - strength / 2.0).sqrt(), 0.0),
        pauli_z() * c((strength / 2.0).sqrt(), 0.0),
    ])?;
    CommitmentProtocol::new(format!("dephasing({strength})"), f0, f1)
}

/// Random trace-preserving family: row blocks of a Haar unitary.
pub fn random_tp_family(
    dim_in: usize,
    dim_out: usize,
    cardinality: usize,
    rng: &mut impl Rng,
) -> KrausFamily {
    let big = dim_out * cardinality;
    assert!(big >= dim_in, "dim_out * cardinality must be at least dim_in");
    let u = numerics::haar_unitary(big, rng);
    let ops = (0..cardinality)
        .map(|i| ComplexMatrix::from_fn(dim_out, dim_in, |k, h| u[(k * cardinality + i, h)]))
        .collect();
    KrausFamily::new(dim_in, dim_out, ops).expect("dimensions are consistent")
}

/// Random mixture of Haar unitaries `{√p_J U_J}` with all `p_J > 0`.
pub fn random_unitary_family(dim: usize, cardinality: usize, rng: &mut impl Rng) -> KrausFamily {
    let p = numerics::random::simplex_point(cardinality, rng);
    let ops = p
        .iter()
        .map(|&pj| numerics::haar_unitary(dim, rng) * c(pj.sqrt(), 0.0))
        .collect();
    KrausFamily::square(ops).expect("dimensions are consistent")
}

/// Random trace-preserving protocol with the given cardinalities.
pub fn random_protocol(
    dim_in: usize,
    dim_out: usize,
    cardinalities: [usize; 2],
    seed: RandomSeed,
) -> CommitmentProtocol {
    let mut rng = seed.rng();
    let f0 = random_tp_family(dim_in, dim_out, cardinalities[0], &mut rng);
    let f1 = random_tp_family(dim_in, dim_out, cardinalities[1], &mut rng);
    CommitmentProtocol::new(format!("random-{}", seed.0), f0, f1).expect("valid by construction")
}

/// Random protocol whose bit-1 family is random-unitary.
pub fn random_unitary_protocol(dim: usize, cardinality: usize, seed: RandomSeed) -> CommitmentProtocol {
    let mut rng = seed.rng();
    let f0 = random_tp_family(dim, dim, cardinality, &mut rng);
    let f1 = random_unitary_family(dim, cardinality, &mut rng);
    CommitmentProtocol::new(format!("random-unitary-{}", seed.0), f0, f1)
        .expect("valid by construction")
}
