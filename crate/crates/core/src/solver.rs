//! Fixed-point solvers for the kernel inclusion `0 ∈ H z + ψ(z) + B u`.
//!
//! Two operator splittings over the same fixed-point set:
//!
//! * `forward_backward`: `z ← resolvent_ψ(z − α(Hz + Bu))`. One matrix-vector
//!   product per step; converges for PSD H with a small enough step, but can
//!   cycle when H has a large eigenvalue spread and α is forced too big.
//! * `peaceman_rachford`: the 1/2-averaged reflection composition of the
//!   linear resolvent `(I + αH)^{-1}` and the device resolvent. Needs one LU
//!   factorization per solve, and converges for merely monotone problems
//!   where the forward step has no contraction to offer.
//!
//! Both report the final iterate, the output `y = -Cz - Du`, and step-size
//! diagnostics. `infer` chains them: forward-backward first, reflections as
//! the fallback.

use nalgebra::{DMatrix, DVector, LU};

use crate::activation::{network_resolvent, ActivationKind};
use crate::error::{Error, Result};
use crate::kernel::KernelBehavior;
use crate::tol;

/// Default ∞-norm step tolerance.
pub const DEFAULT_TOL: f64 = tol::SOLVER_STEP;
/// Default iteration budget.
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Outcome of one equilibrium solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Final internal state (mixed amperes/volts, one entry per diode).
    pub z_star: DVector<f64>,
    /// Output map evaluated at the final state.
    pub y: DVector<f64>,
    pub iterations: usize,
    /// ‖z_{k+1} − z_k‖∞ at exit.
    pub residual: f64,
    pub converged: bool,
    /// Step size actually used (after auto-selection).
    pub alpha: f64,
}

/// Solver knobs. `alpha: None` selects `1 / (1 + λ_max(H_sym))` by power
/// iteration; `z0` warm-starts the iteration.
#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub alpha: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub z0: Option<DVector<f64>>,
}

impl SolveOptions {
    fn resolve(&self, kernel: &KernelBehavior) -> Result<(f64, f64, usize, DVector<f64>)> {
        let alpha = match self.alpha {
            Some(a) if a > 0.0 && a.is_finite() => a,
            Some(a) => {
                return Err(Error::InvalidParameter(format!("step size must be positive, got {a}")))
            }
            None => 1.0 / (1.0 + largest_symmetric_eigenvalue(&kernel.h)),
        };
        let tol = self.tol.unwrap_or(DEFAULT_TOL);
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
        }
        let max_iter = self.max_iter.unwrap_or(DEFAULT_MAX_ITER);
        let z0 = match &self.z0 {
            Some(z) => {
                if z.len() != kernel.n_state() {
                    return Err(Error::DimensionMismatch {
                        expected: kernel.n_state(),
                        got: z.len(),
                    });
                }
                z.clone()
            }
            None => DVector::zeros(kernel.n_state()),
        };
        Ok((alpha, tol, max_iter, z0))
    }
}

/// λ_max of (H + Hᵀ)/2 by power iteration. H is PSD for every extracted
/// kernel, so no shift is needed.
fn largest_symmetric_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    if n == 0 {
        return 0.0;
    }
    let sym = (h + h.transpose()) * 0.5;
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64) * 0.01);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..200 {
        let w = &sym * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        v = w / norm;
        if (next - lambda).abs() <= 1e-12 * next.max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

fn apply_resolvent(
    activations: &[ActivationKind],
    x: &DVector<f64>,
    alpha: f64,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(x.len());
    for (k, kind) in activations.iter().enumerate() {
        out[k] = network_resolvent(kind, x[k], alpha)?;
    }
    Ok(out)
}

fn check_input(kernel: &KernelBehavior, u: &DVector<f64>) -> Result<()> {
    if u.len() != kernel.n_inputs() {
        return Err(Error::DimensionMismatch { expected: kernel.n_inputs(), got: u.len() });
    }
    Ok(())
}

/// ‖z − resolvent_ψ(z − α(Hz + Bu))‖∞: zero exactly at solutions of the
/// inclusion, for any α > 0.
pub fn inclusion_residual(
    kernel: &KernelBehavior,
    z: &DVector<f64>,
    u: &DVector<f64>,
    alpha: f64,
) -> Result<f64> {
    let inner = z - (&kernel.h * z + &kernel.b * u) * alpha;
    let back = apply_resolvent(&kernel.activations, &inner, alpha)?;
    Ok((z - back).amax())
}

/// Forward-backward iteration `z ← resolvent_ψ(z − α(Hz + Bu))`.
pub fn forward_backward(
    kernel: &KernelBehavior,
    u: &DVector<f64>,
    options: &SolveOptions,
) -> Result<SolveReport> {
    check_input(kernel, u)?;
    let (alpha, tol, max_iter, mut z) = options.resolve(kernel)?;
    let bu = &kernel.b * u;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    if kernel.n_state() == 0 {
        residual = 0.0;
    }
    while iterations < max_iter && residual > tol {
        let inner = &z - (&kernel.h * &z + &bu) * alpha;
        let next = apply_resolvent(&kernel.activations, &inner, alpha)?;
        residual = (&next - &z).amax();
        z = next;
        iterations += 1;
    }
    let converged = residual <= tol;
    let y = kernel.output(&z, u);
    Ok(SolveReport { z_star: z, y, iterations, residual, converged, alpha })
}

/// Averaged reflection splitting. The governing sequence s follows
/// `s ← s + J_ψ(2 J_H(s) − s) − J_H(s)` with `J_H = (I + αH)^{-1}(· − αBu)`;
/// the reported state is the device-resolvent output, which always satisfies
/// the activations' range constraints.
pub fn peaceman_rachford(
    kernel: &KernelBehavior,
    u: &DVector<f64>,
    options: &SolveOptions,
) -> Result<SolveReport> {
    check_input(kernel, u)?;
    let (alpha, tol, max_iter, z0) = options.resolve(kernel)?;
    let n = kernel.n_state();
    let bu = &kernel.b * u;
    if n == 0 {
        let y = kernel.output(&z0, u);
        return Ok(SolveReport { z_star: z0, y, iterations: 0, residual: 0.0, converged: true, alpha });
    }
    let linear: LU<f64, nalgebra::Dyn, nalgebra::Dyn> =
        (DMatrix::identity(n, n) + &kernel.h * alpha).lu();
    // Start the governing sequence where a fixed point would put it.
    let mut s = &z0 + (&kernel.h * &z0 + &bu) * alpha;
    let mut z = z0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter && residual > tol {
        let zh = linear
            .solve(&(&s - &bu * alpha))
            .ok_or_else(|| Error::SingularSystem("I + αH".into()))?;
        let reflected = &zh * 2.0 - &s;
        let zp = apply_resolvent(&kernel.activations, &reflected, alpha)?;
        let shift = &zp - &zh;
        residual = shift.amax().max((&zp - &z).amax());
        s += shift;
        z = zp;
        iterations += 1;
    }
    let converged = residual <= tol;
    let y = kernel.output(&z, u);
    Ok(SolveReport { z_star: z, y, iterations, residual, converged, alpha })
}

/// Solve with defaults and return the output, falling back to the reflection
/// solver when forward-backward stalls.
pub fn infer(kernel: &KernelBehavior, u: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(infer_report(kernel, u)?.y)
}

/// As [`infer`], returning the full report.
pub fn infer_report(kernel: &KernelBehavior, u: &DVector<f64>) -> Result<SolveReport> {
    solve_with_fallback(kernel, u, &SolveOptions::default())
}

/// Forward-backward under the given options, rescued by Peaceman-Rachford
/// when it stalls; an error only if both fail.
pub fn solve_with_fallback(
    kernel: &KernelBehavior,
    u: &DVector<f64>,
    options: &SolveOptions,
) -> Result<SolveReport> {
    let report = forward_backward(kernel, u, options)?;
    if report.converged {
        return Ok(report);
    }
    let report = peaceman_rachford(kernel, u, options)?;
    if !report.converged {
        return Err(Error::NonConvergence {
            iterations: report.iterations,
            residual: report.residual,
        });
    }
    Ok(report)
}
