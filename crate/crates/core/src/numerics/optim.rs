//! Small dense quasi-Newton minimizer for the local searches in the
//! cheating games. Problem sizes are tens of variables at most.

use nalgebra::{DMatrix, DVector};

use super::{expi_hermitian, hermitian_from_params, ComplexMatrix};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the largest gradient component falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step changes the value by less than this (relative).
    pub value_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-10,
            value_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes `f`, which returns the value and gradient at a point.
///
/// Backtracking Armijo line search; the inverse-Hessian estimate is reset to
/// the identity whenever the curvature condition fails.
pub fn bfgs<F>(mut f: F, x0: DVector<f64>, opts: BfgsOptions) -> Minimum
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;

    for iter in 0..opts.max_iter {
        if g.amax() < opts.grad_tol {
            return Minimum { x, value: fx, iterations: iter, converged: true };
        }
        let mut p = -(&h * &g);
        let mut slope = p.dot(&g);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            p = -g.clone();
            slope = p.dot(&g);
        }
        // keep the first trial step of unit length in the steepest-descent case
        let mut alpha = if first { 1.0 / g.norm().max(1.0) } else { 1.0 };
        first = false;

        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + alpha * &p;
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return Minimum { x, value: fx, iterations: iter, converged: true };
        };

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H' = H + (1 + ρ yᵀHy) ρ s sᵀ − ρ (H y sᵀ + s yᵀ H)
            h += (rho * rho * yhy + rho) * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
        } else {
            h = DMatrix::identity(n, n);
        }

        let change = (fx - f_new).abs();
        x = x_new;
        g = g_new;
        let prev = fx;
        fx = f_new;
        if change <= opts.value_tol * prev.abs().max(1.0) {
            return Minimum { x, value: fx, iterations: iter + 1, converged: true };
        }
    }
    Minimum { x, value: fx, iterations: opts.max_iter, converged: false }
}

/// Central finite-difference gradient.
pub fn central_gradient<F>(f: &mut F, x: &DVector<f64>, step: f64) -> DVector<f64>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + step;
        let up = f(&probe);
        probe[k] = orig - step;
        let down = f(&probe);
        probe[k] = orig;
        g[k] = (up - down) / (2.0 * step);
    }
    g
}

/// Settings for [`maximize_over_unitaries`].
#[derive(Debug, Clone, Copy)]
pub struct UnitaryAscent {
    /// Number of re-centred quasi-Newton passes.
    pub passes: usize,
    pub bfgs: BfgsOptions,
    /// Finite-difference step in generator coordinates.
    pub fd_step: f64,
}

impl Default for UnitaryAscent {
    fn default() -> Self {
        Self {
            passes: 4,
            bfgs: BfgsOptions { max_iter: 150, grad_tol: 1e-9, value_tol: 1e-13 },
            fd_step: 1e-6,
        }
    }
}

/// Local maximization of `objective` over `U(n)` starting at `start`.
///
/// Iterates are `base · exp(i H(θ))` with `H` spanned by the `n²` Hermitian
/// generators, so every candidate is unitary to rounding. Returns the best
/// unitary, its value and the total number of quasi-Newton iterations.
pub fn maximize_over_unitaries<F>(
    start: &ComplexMatrix,
    objective: F,
    opts: UnitaryAscent,
) -> (ComplexMatrix, f64, usize)
where
    F: Fn(&ComplexMatrix) -> f64,
{
    let n = start.nrows();
    let mut base = start.clone();
    let mut best = objective(&base);
    let mut iterations = 0;
    for _ in 0..opts.passes {
        let at = |theta: &DVector<f64>| -> ComplexMatrix {
            &base * expi_hermitian(&hermitian_from_params(n, theta.as_slice()))
        };
        let mut value = |theta: &DVector<f64>| -objective(&at(theta));
        let m = bfgs(
            |theta| {
                let v = value(theta);
                let g = central_gradient(&mut value, theta, opts.fd_step);
                (v, g)
            },
            DVector::zeros(n * n),
            opts.bfgs,
        );
        iterations += m.iterations;
        let candidate = at(&m.x);
        let cand_value = objective(&candidate);
        if cand_value > best + 1e-15 {
            base = candidate;
            best = cand_value;
        } else {
            break;
        }
    }
    (base, best, iterations)
}
