//! Quantum operations in Kraus form.
//!
//! A [`KrausFamily`] is an ordered list of contractions `E_J : H -> K`. The
//! order is meaningful: at the opening of a commitment the index `J` is
//! disclosed, so two families describing the same channel are still
//! different protocol objects. Operators are never pruned, even when they
//! vanish numerically.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{
    self, c, hermitian_eigen, kron, matrix_unit, partial_trace_inner, spectral_norm, ComplexMatrix,
    VALIDATION_TOL, ZERO,
};

/// Upper bound on any single Hilbert-space dimension accepted by the library.
pub const MAX_DIM: usize = 512;

/// Eigenvalues of the deficit below this are not turned into abort operators.
const COMPLETION_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KrausFamily {
    dim_in: usize,
    dim_out: usize,
    operators: Vec<ComplexMatrix>,
    weights: Option<Vec<f64>>,
    abort: Vec<bool>,
}

impl KrausFamily {
    pub fn new(dim_in: usize, dim_out: usize, operators: Vec<ComplexMatrix>) -> Result<Self> {
        if dim_in == 0 || dim_out == 0 {
            return Err(Error::InvalidInput("dimensions must be positive".into()));
        }
        if dim_in > MAX_DIM || dim_out > MAX_DIM {
            return Err(Error::InvalidInput(format!("dimensions above {MAX_DIM} are not supported")));
        }
        if operators.is_empty() {
            return Err(Error::InvalidInput("a Kraus family needs at least one operator".into()));
        }
        for (k, op) in operators.iter().enumerate() {
            if op.shape() != (dim_out, dim_in) {
                return Err(Error::DimensionMismatch(format!(
                    "operator {k} is {}x{}, expected {dim_out}x{dim_in}",
                    op.nrows(),
                    op.ncols()
                )));
            }
            numerics::ensure_finite(op, "Kraus operator")?;
        }
        let abort = vec![false; operators.len()];
        Ok(Self { dim_in, dim_out, operators, weights: None, abort })
    }

    /// Square family on `dim`, inferred from the first operator.
    pub fn square(operators: Vec<ComplexMatrix>) -> Result<Self> {
        let dim = operators.first().map(|m| m.nrows()).unwrap_or(0);
        Self::new(dim, dim, operators)
    }

    /// Attaches secret-parameter probabilities, one per operator. They are
    /// absorbed as `√p` factors by [`KrausFamily::effective_operators`].
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.operators.len() {
            return Err(Error::InvalidProbabilities(format!(
                "{} weights for {} operators",
                weights.len(),
                self.operators.len()
            )));
        }
        check_probabilities(&weights)?;
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn cardinality(&self) -> usize {
        self.operators.len()
    }

    /// Operators as supplied, without weights applied.
    pub fn raw_operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// True for operators appended by [`complete_to_tp`].
    pub fn is_abort(&self, index: usize) -> bool {
        self.abort[index]
    }

    pub fn abort_count(&self) -> usize {
        self.abort.iter().filter(|&&a| a).count()
    }

    /// Operators with weights folded in: `√p_J E_J`.
    pub fn effective_operators(&self) -> Vec<ComplexMatrix> {
        match &self.weights {
            None => self.operators.clone(),
            Some(w) => self
                .operators
                .iter()
                .zip(w)
                .map(|(op, &p)| op * c(p.sqrt(), 0.0))
                .collect(),
        }
    }

    /// Same family with weights folded into the operators.
    pub fn absorb_weights(&self) -> Self {
        Self {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            operators: self.effective_operators(),
            weights: None,
            abort: self.abort.clone(),
        }
    }

    /// `Σ_J E_J† E_J` with weights applied.
    pub fn kraus_sum(&self) -> ComplexMatrix {
        let mut acc = ComplexMatrix::zeros(self.dim_in, self.dim_in);
        for (k, op) in self.operators.iter().enumerate() {
            let p = self.weights.as_ref().map_or(1.0, |w| w[k]);
            acc += op.adjoint() * op * c(p, 0.0);
        }
        acc
    }

    /// Appends zero operators up to `cardinality`; the channel is unchanged.
    pub fn padded(&self, cardinality: usize) -> Self {
        let mut out = self.absorb_weights();
        while out.operators.len() < cardinality {
            out.operators.push(ComplexMatrix::zeros(self.dim_out, self.dim_in));
            out.abort.push(false);
        }
        out
    }

    /// Embeds the output space into a larger one by appending zero rows.
    pub fn embed_output(&self, dim_out: usize) -> Result<Self> {
        if dim_out < self.dim_out {
            return Err(Error::DimensionMismatch(format!(
                "cannot embed output dimension {} into {dim_out}",
                self.dim_out
            )));
        }
        let mut out = self.clone();
        out.dim_out = dim_out;
        out.operators = self
            .operators
            .iter()
            .map(|op| {
                let mut big = ComplexMatrix::zeros(dim_out, self.dim_in);
                big.view_mut((0, 0), (self.dim_out, self.dim_in)).copy_from(op);
                big
            })
            .collect();
        Ok(out)
    }

    /// Replaces operators while keeping dims; used by cheat transformations.
    pub(crate) fn with_operators(&self, operators: Vec<ComplexMatrix>) -> Self {
        let n = operators.len();
        Self {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            operators,
            weights: None,
            abort: vec![false; n],
        }
    }
}

pub(crate) fn check_probabilities(p: &[f64]) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidProbabilities("entries must be finite and nonnegative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > VALIDATION_TOL {
        return Err(Error::InvalidProbabilities(format!("sum is {total}, expected 1")));
    }
    Ok(())
}

/// Result of [`validate_family`].
#[derive(Debug, Clone)]
pub struct ValidityReport {
    /// Whether `Σ E†E = I` within tolerance.
    pub tp: bool,
    /// `I − Σ E†E`, positive semidefinite for a valid operation.
    pub deficit: ComplexMatrix,
    /// Spectral norm of the deficit.
    pub deficit_norm: f64,
    /// Ascending eigenvalues of the deficit.
    pub deficit_eigenvalues: Vec<f64>,
    /// How far the family exceeds the identity: `max(0, −λ_min(deficit))`.
    pub max_violation: f64,
}

impl ValidityReport {
    /// Number of eigenvalues of the deficit above the completion cutoff.
    pub fn deficit_rank(&self) -> usize {
        self.deficit_eigenvalues
            .iter()
            .filter(|&&v| v > COMPLETION_CUTOFF)
            .count()
    }
}

/// Checks `Σ E†E ≤ I` and reports whether equality holds.
pub fn validate_family(f: &KrausFamily, tol: f64) -> Result<ValidityReport> {
    let deficit = numerics::identity(f.dim_in) - f.kraus_sum();
    let eig = hermitian_eigen(&deficit);
    let min = eig.values.first().copied().unwrap_or(0.0);
    if min < -tol {
        return Err(Error::InvalidQuantumOperation { min_eigenvalue: min });
    }
    let deficit_norm = spectral_norm(&deficit)?;
    Ok(ValidityReport {
        tp: deficit_norm <= tol,
        deficit,
        deficit_norm,
        max_violation: (-min).max(0.0),
        deficit_eigenvalues: eig.values,
    })
}

/// Completes a trace-decreasing family to a trace-preserving one.
///
/// Each positive eigenpair `(λ_k, v_k)` of the deficit becomes an abort
/// operator `√λ_k |flag><v_k|`, where `flag` is a new basis vector appended
/// to the output space. Original operators keep their order and are
/// embedded unchanged. Trace-preserving input is returned as is.
pub fn complete_to_tp(f: &KrausFamily) -> Result<KrausFamily> {
    let report = validate_family(f, VALIDATION_TOL)?;
    if report.tp {
        return Ok(f.clone());
    }
    let flag = f.dim_out;
    let mut out = f.absorb_weights().embed_output(f.dim_out + 1)?;
    let eig = hermitian_eigen(&report.deficit);
    for (k, &lambda) in eig.values.iter().enumerate() {
        if lambda <= COMPLETION_CUTOFF {
            continue;
        }
        let v = eig.vectors.column(k);
        let mut op = ComplexMatrix::zeros(f.dim_out + 1, f.dim_in);
        for j in 0..f.dim_in {
            op[(flag, j)] = v[j].conj() * lambda.sqrt();
        }
        out.operators.push(op);
        out.abort.push(true);
    }
    Ok(out)
}

fn check_square_input(f: &KrausFamily, rho: &ComplexMatrix) -> Result<()> {
    if rho.shape() != (f.dim_in, f.dim_in) {
        return Err(Error::DimensionMismatch(format!(
            "state is {}x{}, channel input dimension is {}",
            rho.nrows(),
            rho.ncols(),
            f.dim_in
        )));
    }
    Ok(())
}

/// `Σ_J E_J ρ E_J†`; the trace of the result is the success probability.
pub fn apply_channel(f: &KrausFamily, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_square_input(f, rho)?;
    numerics::ensure_finite(rho, "state")?;
    let mut out = ComplexMatrix::zeros(f.dim_out, f.dim_out);
    for op in f.effective_operators() {
        out += &op * rho * op.adjoint();
    }
    Ok(out)
}

/// Choi matrix `Σ_{kl} M(|k><l|) ⊗ |k><l|` (output factor outer), i.e.
/// `(M ⊗ Id)(|Ω><Ω|)` with the unnormalized `|Ω> = Σ_k |k>|k>`.
pub fn choi_matrix(f: &KrausFamily) -> ComplexMatrix {
    let (din, dout) = (f.dim_in, f.dim_out);
    let n = din * dout;
    let mut choi = ComplexMatrix::zeros(n, n);
    for op in f.effective_operators() {
        // vec(E) with row index (a, k) = a*din + k
        let v = nalgebra::DVector::from_iterator(
            n,
            (0..dout).flat_map(|a| (0..din).map(move |k| (a, k))).map(|(a, k)| op[(a, k)]),
        );
        choi += &v * v.adjoint();
    }
    choi
}

/// Merges families used with probabilities `p_j` into one family with
/// operators `√p_j E_{ji}`, ordered with `j` outer and `i` inner.
pub fn mix_families(parts: &[(f64, KrausFamily)]) -> Result<KrausFamily> {
    let Some((_, first)) = parts.first() else {
        return Err(Error::InvalidInput("nothing to mix".into()));
    };
    let probs: Vec<f64> = parts.iter().map(|(p, _)| *p).collect();
    check_probabilities(&probs)?;
    let (din, dout) = (first.dim_in, first.dim_out);
    let mut operators = Vec::new();
    let mut abort = Vec::new();
    for (j, (p, fam)) in parts.iter().enumerate() {
        if fam.dim_in != din || fam.dim_out != dout {
            return Err(Error::DimensionMismatch(format!(
                "part {j} maps {}->{}, expected {din}->{dout}",
                fam.dim_in, fam.dim_out
            )));
        }
        let scale = c(p.sqrt(), 0.0);
        for (i, op) in fam.effective_operators().into_iter().enumerate() {
            operators.push(op * scale);
            abort.push(fam.abort[i]);
        }
    }
    let mut out = KrausFamily::new(din, dout, operators)?;
    out.abort = abort;
    Ok(out)
}

/// Isometric realization `E = Σ_i E_i ⊗ |i>_F` of a trace-preserving family.
#[derive(Debug, Clone)]
pub struct DilationResult {
    /// `(dim_out · dim_f) × dim_in`, row index `k · dim_f + i`.
    pub isometry: ComplexMatrix,
    pub dim_in: usize,
    pub dim_out: usize,
    pub dim_f: usize,
    /// Projector onto the non-abort outcomes of F, when the family has any abort outcome.
    pub abort_projector: Option<ComplexMatrix>,
}

impl DilationResult {
    /// `Tr_F[E ρ E†]`.
    pub fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let big = &self.isometry * rho * self.isometry.adjoint();
        partial_trace_inner(&big, self.dim_out, self.dim_f)
    }

    /// `Tr_F[(I ⊗ Σ_F) E ρ E†]`: the original trace-decreasing map.
    pub fn apply_accepted(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        match &self.abort_projector {
            None => self.apply(rho),
            Some(sigma) => {
                let proj = kron(&numerics::identity(self.dim_out), sigma);
                let big = &proj * &self.isometry * rho * self.isometry.adjoint() * &proj;
                partial_trace_inner(&big, self.dim_out, self.dim_f)
            }
        }
    }

    /// Largest entry of `E†E − I`.
    pub fn isometry_residual(&self) -> f64 {
        numerics::unitarity_residual(&self.isometry)
    }

    /// Unitary `U` on `H ⊗ A ≅ K ⊗ F'` with `E = U (I ⊗ |0>_A)`.
    ///
    /// F is padded with never-occurring outcomes until `dim_out · dim_f'` is
    /// a multiple of `dim_in`. Returns `(U, dim_a, dim_f')`.
    pub fn unitary_extension(&self) -> (ComplexMatrix, usize, usize) {
        let mut dim_f = self.dim_f;
        while (self.dim_out * dim_f) % self.dim_in != 0 {
            dim_f += 1;
        }
        let total = self.dim_out * dim_f;
        let dim_a = total / self.dim_in;
        let mut e = ComplexMatrix::zeros(total, self.dim_in);
        for k in 0..self.dim_out {
            for i in 0..self.dim_f {
                for h in 0..self.dim_in {
                    e[(k * dim_f + i, h)] = self.isometry[(k * self.dim_f + i, h)];
                }
            }
        }
        let complement = numerics::identity(total) - &e * e.adjoint();
        let eig = hermitian_eigen(&complement);
        let mut u = ComplexMatrix::zeros(total, total);
        let mut spare = (0..total).rev().map(|k| eig.vectors.column(k).into_owned());
        for h in 0..self.dim_in {
            for a in 0..dim_a {
                let col = if a == 0 {
                    e.column(h).into_owned()
                } else {
                    spare.next().expect("complement has the right dimension")
                };
                u.set_column(h * dim_a + a, &col);
            }
        }
        (u, dim_a, dim_f)
    }
}

/// Builds the isometry of a trace-preserving family (`dim_f` = cardinality).
pub fn dilate(f: &KrausFamily) -> Result<DilationResult> {
    let report = validate_family(f, VALIDATION_TOL)?;
    if !report.tp {
        return Err(Error::NotTracePreserving { deficit_norm: report.deficit_norm });
    }
    let ops = f.effective_operators();
    let n = ops.len();
    let mut iso = ComplexMatrix::zeros(f.dim_out * n, f.dim_in);
    for (i, op) in ops.iter().enumerate() {
        for k in 0..f.dim_out {
            for h in 0..f.dim_in {
                iso[(k * n + i, h)] = op[(k, h)];
            }
        }
    }
    let abort_projector = if f.abort.iter().any(|&a| a) {
        let d: Vec<Complex64> = f.abort.iter().map(|&a| if a { ZERO } else { c(1.0, 0.0) }).collect();
        Some(numerics::diag(&d))
    } else {
        None
    };
    Ok(DilationResult {
        isometry: iso,
        dim_in: f.dim_in,
        dim_out: f.dim_out,
        dim_f: n,
        abort_projector,
    })
}

/// Unconditioned form `Σ_x N^(x) ⊗ P_x` of a branch-conditioned operation.
///
/// Branch `x` is selected by notepad state `|x>`; the notepad is the inner
/// tensor factor. Operators are `E_{xi} ⊗ |x><x|`, branch-major.
pub fn lift_conditioned(branches: &[KrausFamily]) -> Result<KrausFamily> {
    let Some(first) = branches.first() else {
        return Err(Error::InvalidInput("need at least one branch".into()));
    };
    let n = branches.len();
    let (din, dout) = (first.dim_in, first.dim_out);
    if din * n > MAX_DIM || dout * n > MAX_DIM {
        return Err(Error::InvalidInput("lifted dimension too large".into()));
    }
    let mut operators = Vec::new();
    let mut abort = Vec::new();
    for (x, branch) in branches.iter().enumerate() {
        if branch.dim_in != din || branch.dim_out != dout {
            return Err(Error::DimensionMismatch(format!(
                "branch {x} maps {}->{}, expected {din}->{dout}",
                branch.dim_in, branch.dim_out
            )));
        }
        let flag = matrix_unit(n, x, x);
        for (i, op) in branch.effective_operators().iter().enumerate() {
            operators.push(kron(op, &flag));
            abort.push(branch.abort[i]);
        }
    }
    let mut out = KrausFamily::new(din * n, dout * n, operators)?;
    out.abort = abort;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{
        diag, hadamard, identity, max_abs_diff, pauli_x, pauli_z, real_matrix, RandomSeed, ONE,
    };
    use rand::Rng;

    fn p0() -> ComplexMatrix {
        diag(&[ONE, ZERO])
    }
    fn p1() -> ComplexMatrix {
        diag(&[ZERO, ONE])
    }
    fn half() -> Complex64 {
        c(std::f64::consts::FRAC_1_SQRT_2, 0.0)
    }

    /// Random trace-preserving family: blocks of a Haar isometry.
    pub(crate) fn random_tp_family(din: usize, dout: usize, n: usize, seed: u64) -> KrausFamily {
        let mut rng = RandomSeed(seed).rng();
        let u = numerics::haar_unitary(dout * n, &mut rng);
        let ops = (0..n)
            .map(|i| ComplexMatrix::from_fn(dout, din, |k, h| u[(k * n + i, h)]))
            .collect();
        KrausFamily::new(din, dout, ops).unwrap()
    }

    fn random_density(d: usize, seed: u64) -> ComplexMatrix {
        let mut rng = RandomSeed(seed).rng();
        let g = numerics::random::ginibre(d, d, &mut rng);
        let rho = &g * g.adjoint();
        let t = numerics::trace(&rho);
        rho / t
    }

    #[test]
    fn validate_examples() {
        let proj = KrausFamily::square(vec![p0(), p1()]).unwrap();
        let r = validate_family(&proj, 1e-9).unwrap();
        assert!(r.tp);
        assert!(r.deficit_norm < 1e-15);

        let single = KrausFamily::square(vec![p0()]).unwrap();
        let r = validate_family(&single, 1e-9).unwrap();
        assert!(!r.tp);
        assert!(max_abs_diff(&r.deficit, &p1()) < 1e-15);

        let big = KrausFamily::square(vec![identity(2) * c(2f64.sqrt(), 0.0)]).unwrap();
        assert!(matches!(
            validate_family(&big, 1e-9),
            Err(Error::InvalidQuantumOperation { min_eigenvalue }) if (min_eigenvalue + 1.0).abs() < 1e-12
        ));
    }

    #[test]
    fn construction_errors() {
        assert!(KrausFamily::new(2, 2, vec![]).is_err());
        assert!(KrausFamily::new(2, 3, vec![identity(2)]).is_err());
        let mut bad = identity(2);
        bad[(0, 0)] = c(f64::NAN, 0.0);
        assert!(KrausFamily::square(vec![bad]).is_err());
        let fam = KrausFamily::square(vec![identity(2), pauli_z()]).unwrap();
        assert!(fam.clone().with_weights(vec![0.5]).is_err());
        assert!(fam.clone().with_weights(vec![0.7, 0.7]).is_err());
        assert!(fam.with_weights(vec![-0.5, 1.5]).is_err());
    }

    #[test]
    fn tiny_operators_are_kept() {
        let fam = KrausFamily::square(vec![identity(2), ComplexMatrix::zeros(2, 2)]).unwrap();
        assert_eq!(complete_to_tp(&fam).unwrap().cardinality(), 2);
        assert_eq!(dilate(&fam).unwrap().dim_f, 2);
    }

    #[test]
    fn completion_examples() {
        let proj = KrausFamily::square(vec![p0(), p1()]).unwrap();
        assert_eq!(complete_to_tp(&proj).unwrap(), proj);

        let single = KrausFamily::square(vec![p0()]).unwrap();
        let done = complete_to_tp(&single).unwrap();
        assert_eq!(done.cardinality(), 2);
        assert_eq!(done.dim_out(), 3);
        assert!(done.is_abort(1) && !done.is_abort(0));
        let f = &done.raw_operators()[1];
        assert!(max_abs_diff(&(f.adjoint() * f), &p1()) < 1e-14);
        assert!(validate_family(&done, 1e-9).unwrap().tp);
        // original operator is embedded unchanged
        assert!(max_abs_diff(&done.raw_operators()[0].view((0, 0), (2, 2)).into_owned(), &p0()) == 0.0);
    }

    #[test]
    fn completion_of_random_decreasing_families() {
        for seed in 0..25 {
            let base = random_tp_family(3, 2, 3, seed);
            let mut rng = RandomSeed(seed + 1000).rng();
            let ops = base
                .raw_operators()
                .iter()
                .map(|op| op * c(rng.random_range(0.2..0.95), 0.0))
                .collect();
            let dec = KrausFamily::new(3, 2, ops).unwrap();
            assert!(!validate_family(&dec, 1e-9).unwrap().tp);
            let done = complete_to_tp(&dec).unwrap();
            assert!(validate_family(&done, 1e-9).unwrap().tp, "seed {seed}");
        }
    }

    #[test]
    fn apply_examples() {
        let id = KrausFamily::square(vec![identity(2)]).unwrap();
        let rho = random_density(2, 1);
        assert!(max_abs_diff(&apply_channel(&id, &rho).unwrap(), &rho) < 1e-15);

        let deph = KrausFamily::square(vec![p0(), p1()]).unwrap();
        let plus = real_matrix(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let out = apply_channel(&deph, &plus).unwrap();
        assert!(max_abs_diff(&out, &(identity(2) * c(0.5, 0.0))) < 1e-15);

        let single = KrausFamily::square(vec![p0()]).unwrap();
        let out = apply_channel(&single, &(identity(2) * c(0.5, 0.0))).unwrap();
        assert!(max_abs_diff(&out, &diag(&[c(0.5, 0.0), ZERO])) < 1e-15);
        assert!((numerics::trace(&out).re - 0.5).abs() < 1e-15);

        assert!(apply_channel(&single, &identity(3)).is_err());
    }

    #[test]
    fn choi_examples() {
        let id = KrausFamily::square(vec![identity(2)]).unwrap();
        let choi = choi_matrix(&id);
        let omega = nalgebra::DVector::from_column_slice(&[ONE, ZERO, ZERO, ONE]);
        assert!(max_abs_diff(&choi, &(&omega * omega.adjoint())) < 1e-15);
        assert!((numerics::trace(&choi).re - 2.0).abs() < 1e-15);

        let a = KrausFamily::square(vec![p0(), p1()]).unwrap();
        let b = KrausFamily::square(vec![identity(2) * half(), pauli_z() * half()]).unwrap();
        assert!(max_abs_diff(&choi_matrix(&a), &choi_matrix(&b)) < 1e-10);

        // completely depolarizing channel: Choi = I/d ⊗ I, trace d
        let d = 3;
        let ops = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| matrix_unit(d, i, j) * c(1.0 / (d as f64).sqrt(), 0.0))
            .collect();
        let dep = KrausFamily::square(ops).unwrap();
        let expected = identity(d * d) * c(1.0 / d as f64, 0.0);
        assert!(max_abs_diff(&choi_matrix(&dep), &expected) < 1e-15);
    }

    #[test]
    fn choi_partial_trace_is_identity_for_tp() {
        let f = random_tp_family(3, 2, 4, 9);
        let choi = choi_matrix(&f);
        let reduced = numerics::partial_trace_outer(&choi, 2, 3);
        assert!(max_abs_diff(&reduced, &identity(3)) < 1e-12);
    }

    #[test]
    fn mix_examples() {
        let f = KrausFamily::square(vec![p0(), p1()]).unwrap();
        let single = mix_families(&[(1.0, f.clone())]).unwrap();
        assert_eq!(single.raw_operators(), f.raw_operators());

        let deph = mix_families(&[
            (0.5, KrausFamily::square(vec![identity(2)]).unwrap()),
            (0.5, KrausFamily::square(vec![pauli_z()]).unwrap()),
        ])
        .unwrap();
        assert!(max_abs_diff(&deph.raw_operators()[0], &(identity(2) * half())) < 1e-15);
        assert!(max_abs_diff(&deph.raw_operators()[1], &(pauli_z() * half())) < 1e-15);

        let parts = [
            (0.2, random_tp_family(2, 3, 2, 1)),
            (0.3, random_tp_family(2, 3, 1, 2)),
            (0.5, random_tp_family(2, 3, 3, 3)),
        ];
        let mixed = mix_families(&parts).unwrap();
        assert_eq!(mixed.cardinality(), 6);
        assert!(validate_family(&mixed, 1e-9).unwrap().tp);
        let rho = random_density(2, 4);
        let mut expected = ComplexMatrix::zeros(3, 3);
        for (p, fam) in &parts {
            expected += apply_channel(fam, &rho).unwrap() * c(*p, 0.0);
        }
        assert!(max_abs_diff(&apply_channel(&mixed, &rho).unwrap(), &expected) < 1e-12);

        assert!(mix_families(&[(0.5, f.clone()), (0.6, f.clone())]).is_err());
        assert!(mix_families(&[(0.5, f), (0.5, random_tp_family(3, 3, 1, 0))]).is_err());
    }

    #[test]
    fn weights_match_mixing() {
        let fam = KrausFamily::square(vec![identity(2), pauli_x()])
            .unwrap()
            .with_weights(vec![0.25, 0.75])
            .unwrap();
        let mixed = mix_families(&[
            (0.25, KrausFamily::square(vec![identity(2)]).unwrap()),
            (0.75, KrausFamily::square(vec![pauli_x()]).unwrap()),
        ])
        .unwrap();
        assert!(max_abs_diff(&choi_matrix(&fam), &choi_matrix(&mixed)) < 1e-15);
        assert!(validate_family(&fam, 1e-9).unwrap().tp);
    }

    #[test]
    fn dilation_examples() {
        let id = KrausFamily::square(vec![identity(2)]).unwrap();
        let d = dilate(&id).unwrap();
        assert_eq!(d.dim_f, 1);
        assert!(max_abs_diff(&d.isometry, &identity(2)) == 0.0);

        let deph = KrausFamily::square(vec![p0(), p1()]).unwrap();
        let d = dilate(&deph).unwrap();
        assert_eq!(d.isometry.shape(), (4, 2));
        for seed in 0..5 {
            let rho = random_density(2, seed);
            let lhs = d.apply(&rho);
            assert!(max_abs_diff(&lhs, &apply_channel(&deph, &rho).unwrap()) <= 1e-12);
        }

        let q = random_tp_family(3, 3, 3, 77);
        assert!(dilate(&q).unwrap().isometry_residual() < 1e-10);

        let single = KrausFamily::square(vec![p0()]).unwrap();
        assert!(matches!(dilate(&single), Err(Error::NotTracePreserving { .. })));
    }

    #[test]
    fn dilation_of_completed_family_recovers_abort_map() {
        let single = KrausFamily::square(vec![p0() * c(0.8, 0.0), p1() * c(0.6, 0.0)]).unwrap();
        let done = complete_to_tp(&single).unwrap();
        let d = dilate(&done).unwrap();
        assert!(d.abort_projector.is_some());
        let rho = random_density(2, 3);
        let accepted = d.apply_accepted(&rho);
        let original = done.embed_output(3).unwrap();
        let expected = apply_channel(
            &KrausFamily::new(2, 3, original.raw_operators()[..2].to_vec()).unwrap(),
            &rho,
        )
        .unwrap();
        assert!(max_abs_diff(&accepted, &expected) < 1e-12);
    }

    #[test]
    fn unitary_extension_contains_isometry() {
        for (din, dout, n) in [(2, 2, 2), (3, 2, 2), (2, 3, 3), (2, 2, 1)] {
            let f = random_tp_family(din, dout, n, (din * 100 + dout * 10 + n) as u64);
            let d = dilate(&f).unwrap();
            let (u, dim_a, dim_f) = d.unitary_extension();
            assert_eq!(din * dim_a, dout * dim_f);
            assert!(numerics::unitarity_residual(&u) < 1e-10);
            for h in 0..din {
                for k in 0..dout {
                    for i in 0..n {
                        let got = u[(k * dim_f + i, h * dim_a)];
                        assert!((got - d.isometry[(k * n + i, h)]).norm() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn lift_examples() {
        let f = random_tp_family(2, 2, 2, 5);
        let lifted = lift_conditioned(std::slice::from_ref(&f)).unwrap();
        assert!(max_abs_diff(&choi_matrix(&lifted), &choi_matrix(&f)) < 1e-15);

        let u0 = hadamard();
        let u1 = pauli_x();
        let lifted = lift_conditioned(&[
            KrausFamily::square(vec![u0.clone()]).unwrap(),
            KrausFamily::square(vec![u1.clone()]).unwrap(),
        ])
        .unwrap();
        let controlled: ComplexMatrix = lifted.raw_operators().iter().sum();
        let expected = kron(&u0, &matrix_unit(2, 0, 0)) + kron(&u1, &matrix_unit(2, 1, 1));
        assert!(max_abs_diff(&controlled, &expected) == 0.0);
        assert!(numerics::unitarity_residual(&controlled) < 1e-14);

        let b0 = random_tp_family(2, 3, 2, 11);
        let b1 = random_tp_family(2, 3, 3, 12);
        let lifted = lift_conditioned(&[b0, b1.clone()]).unwrap();
        let rho = random_density(2, 13);
        let input = kron(&rho, &matrix_unit(2, 1, 1));
        let out = apply_channel(&lifted, &input).unwrap();
        let reduced = partial_trace_inner(&out, 3, 2);
        assert!(max_abs_diff(&reduced, &apply_channel(&b1, &rho).unwrap()) < 1e-12);
    }

    #[test]
    fn lift_preserves_tp_iff_branches_do() {
        let tp = random_tp_family(2, 2, 2, 1);
        let dec = KrausFamily::square(vec![p0()]).unwrap();
        assert!(validate_family(&lift_conditioned(&[tp.clone(), tp.clone()]).unwrap(), 1e-9).unwrap().tp);
        assert!(!validate_family(&lift_conditioned(&[tp, dec]).unwrap(), 1e-9).unwrap().tp);
        assert!(lift_conditioned(&[random_tp_family(2, 2, 1, 0), random_tp_family(3, 3, 1, 0)]).is_err());
    }

    #[test]
    fn dilation_roundtrip_many_states() {
        let f = random_tp_family(3, 2, 4, 21);
        let d = dilate(&f).unwrap();
        let worst = (0..100)
            .map(|s| {
                let rho = random_density(3, 500 + s);
                max_abs_diff(&d.apply(&rho), &apply_channel(&f, &rho).unwrap())
            })
            .fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst}");
    }
}
