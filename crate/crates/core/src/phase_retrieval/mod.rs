//! Iterative phase retrieval from intensity transport.
//!
//! The continuity half of the Madelung-transformed evolution reads, for
//! the scaled phase `pt = 2 phi / alpha`,
//!
//! ```text
//! lap(pt) + (grad I / I) . grad pt = -G - (eta alpha / 2) |grad pt|^2
//! G = (1/I) dI/dz + 2 g(I)/alpha - (2 eta / alpha) lap(sqrt I)/sqrt(I)
//! ```
//!
//! The quadratic term on the right is second order in the phase gradient,
//! so it is lagged: each iteration solves the linear elliptic problem
//! with `|grad pt|^2` taken from the previous iterate (zero at first).
//! Iteration stops when the L2 norm of the phase gradient changes by less
//! than `grad_norm_tol` between successive iterates.
//!
//! Retrieval fixes the additive gauge by returning zero-mean fields; the
//! intensity cannot determine the constant.

mod elliptic;

pub use elliptic::{solve_elliptic, EllipticSolution, EllipticSolver};

use crate::error::{Error, Result};
use crate::field_grid::{check_same_spec, gradient, laplacian, ScalarField2D};
use crate::forward_sim::NonlinearFn;

/// Consecutive iterations with a growing norm change before the
/// divergence detector trips.
const DIVERGENCE_STREAK: usize = 20;

#[derive(Clone, Debug)]
pub struct PhaseRetrievalConfig {
    /// Current estimate of eta/alpha.
    pub eta_over_alpha: f64,
    /// Current estimate of eta*alpha; scales the lagged quadratic term.
    /// Zero on the first outer iteration (phase starts from zero anyway).
    pub eta_alpha_product: f64,
    /// Dissipation per alpha, `g(I)/alpha`; zero if not yet measured.
    pub g_over_alpha: NonlinearFn,
    pub max_iters: usize,
    pub grad_norm_tol: f64,
}

impl PhaseRetrievalConfig {
    pub fn new(eta_over_alpha: f64) -> Self {
        Self {
            eta_over_alpha,
            eta_alpha_product: 0.0,
            g_over_alpha: NonlinearFn::Zero,
            max_iters: 400,
            grad_norm_tol: 1e-6,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter {
                what: "max_iters",
                why: "must be at least 1".into(),
            });
        }
        if !(self.grad_norm_tol > 0.0) {
            return Err(Error::InvalidParameter {
                what: "grad_norm_tol",
                why: format!("must be positive, got {}", self.grad_norm_tol),
            });
        }
        Ok(())
    }
}

/// Result of a retrieval run. `phi_tilde` is the scaled phase in the
/// zero-mean gauge; the history holds the gradient L2 norm after each
/// iteration.
#[derive(Clone, Debug)]
pub struct RetrievedPhase {
    pub phi_tilde: ScalarField2D,
    pub iterations_used: usize,
    pub grad_norm_history: Vec<f64>,
    pub converged: bool,
}

/// Right side of the lagged linear problem:
/// `-G - (eta alpha / 2) |grad phi_prev|^2`.
pub fn continuity_rhs(
    intensity: &ScalarField2D,
    didz: &ScalarField2D,
    cfg: &PhaseRetrievalConfig,
    phi_prev: &ScalarField2D,
) -> Result<ScalarField2D> {
    check_same_spec(intensity, didz, "continuity_rhs")?;
    check_same_spec(intensity, phi_prev, "continuity_rhs")?;
    let min = intensity.min();
    if !(min > 0.0) {
        return Err(Error::NonpositiveIntensity { min });
    }
    let g_field = transport_term(intensity, didz, cfg)?;
    let (px, py) = gradient(phi_prev)?;
    let half_ea = 0.5 * cfg.eta_alpha_product;
    let spec = intensity.spec();
    let mut out = Vec::with_capacity(spec.len());
    for k in 0..spec.len() {
        let grad2 = px.values()[k] * px.values()[k] + py.values()[k] * py.values()[k];
        out.push(-g_field.values()[k] - half_ea * grad2);
    }
    ScalarField2D::from_values(spec, out)
}

/// The phase-independent part `G` of the continuity equation.
fn transport_term(
    intensity: &ScalarField2D,
    didz: &ScalarField2D,
    cfg: &PhaseRetrievalConfig,
) -> Result<ScalarField2D> {
    let sqrt_i = intensity.map(f64::sqrt);
    let lap_sqrt = laplacian(&sqrt_i)?;
    let spec = intensity.spec();
    let two_eoa = 2.0 * cfg.eta_over_alpha;
    let mut out = Vec::with_capacity(spec.len());
    for k in 0..spec.len() {
        let i = intensity.values()[k];
        out.push(
            didz.values()[k] / i + 2.0 * cfg.g_over_alpha.eval(i)
                - two_eoa * lap_sqrt.values()[k] / sqrt_i.values()[k],
        );
    }
    ScalarField2D::from_values(spec, out)
}

/// L2 norm of the phase gradient over the grid, `sqrt(sum |grad|^2 h^2)`.
fn grad_l2(gx: &ScalarField2D, gy: &ScalarField2D) -> f64 {
    let h2 = gx.spec().h() * gx.spec().h();
    let s: f64 = gx
        .values()
        .iter()
        .zip(gy.values())
        .map(|(&a, &b)| a * a + b * b)
        .sum();
    (s * h2).sqrt()
}

/// Retrieve the scaled phase starting from zero.
pub fn retrieve_phase(
    i_mid: &ScalarField2D,
    didz: &ScalarField2D,
    cfg: &PhaseRetrievalConfig,
) -> Result<RetrievedPhase> {
    retrieve_phase_warm(i_mid, didz, cfg, &ScalarField2D::zeros(i_mid.spec()))
}

/// Retrieve the scaled phase starting from `phi0` (used by the outer
/// relaxation loop to carry the previous iterate across parameter
/// updates).
pub fn retrieve_phase_warm(
    i_mid: &ScalarField2D,
    didz: &ScalarField2D,
    cfg: &PhaseRetrievalConfig,
    phi0: &ScalarField2D,
) -> Result<RetrievedPhase> {
    cfg.validate()?;
    check_same_spec(i_mid, didz, "retrieve_phase")?;
    check_same_spec(i_mid, phi0, "retrieve_phase")?;
    let min = i_mid.min();
    if !(min > 0.0) {
        return Err(Error::NonpositiveIntensity { min });
    }

    let solver = EllipticSolver::new(i_mid)?;
    let g_field = transport_term(i_mid, didz, cfg)?;
    let half_ea = 0.5 * cfg.eta_alpha_product;
    let spec = i_mid.spec();

    let mut phi = phi0.clone();
    phi.remove_mean();
    let (mut gx, mut gy) = gradient(&phi)?;
    let mut prev_norm = grad_l2(&gx, &gy);

    let mut history = Vec::new();
    let mut prev_delta = f64::INFINITY;
    let mut growth_streak = 0usize;
    let mut converged = false;

    for iter in 1..=cfg.max_iters {
        let mut rhs = Vec::with_capacity(spec.len());
        for k in 0..spec.len() {
            let grad2 = gx.values()[k] * gx.values()[k] + gy.values()[k] * gy.values()[k];
            rhs.push(-g_field.values()[k] - half_ea * grad2);
        }
        let rhs = ScalarField2D::from_values(spec, rhs)
            .map_err(|_| Error::RetrievalDiverged { iterations: iter })?;
        phi = solver.solve(&rhs)?;
        let grads = gradient(&phi)?;
        gx = grads.0;
        gy = grads.1;
        let norm = grad_l2(&gx, &gy);
        history.push(norm);
        if !norm.is_finite() {
            return Err(Error::RetrievalDiverged { iterations: iter });
        }
        let delta = (norm - prev_norm).abs();
        if delta < cfg.grad_norm_tol {
            converged = true;
            break;
        }
        if delta > prev_delta {
            growth_streak += 1;
            if growth_streak >= DIVERGENCE_STREAK {
                return Err(Error::RetrievalDiverged { iterations: iter });
            }
        } else {
            growth_streak = 0;
        }
        prev_delta = delta;
        prev_norm = norm;
    }

    Ok(RetrievedPhase {
        iterations_used: history.len(),
        grad_norm_history: history,
        converged,
        phi_tilde: phi,
    })
}

/// Fractional RMS error of the phase gradient magnitude:
/// `sigma^2 = int (|grad a| - |grad b|)^2 / int |grad a|^2`.
pub fn rms_phase_gradient_error(
    phi_exact: &ScalarField2D,
    phi_retrieved: &ScalarField2D,
) -> Result<f64> {
    check_same_spec(phi_exact, phi_retrieved, "rms_phase_gradient_error")?;
    let (ex, ey) = gradient(phi_exact)?;
    let (rx, ry) = gradient(phi_retrieved)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..phi_exact.spec().len() {
        let ge = (ex.values()[k].powi(2) + ey.values()[k].powi(2)).sqrt();
        let gr = (rx.values()[k].powi(2) + ry.values()[k].powi(2)).sqrt();
        num += (ge - gr) * (ge - gr);
        den += ge * ge;
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator("rms_phase_gradient_error"));
    }
    Ok((num / den).sqrt())
}

/// Fractional RMS error of the phase itself, after aligning both fields
/// to zero mean (the gauge constant is not observable).
pub fn rms_phase_error(phi_exact: &ScalarField2D, phi_retrieved: &ScalarField2D) -> Result<f64> {
    check_same_spec(phi_exact, phi_retrieved, "rms_phase_error")?;
    let me = phi_exact.mean();
    let mr = phi_retrieved.mean();
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..phi_exact.spec().len() {
        let e = phi_exact.values()[k] - me;
        let r = phi_retrieved.values()[k] - mr;
        num += (e - r) * (e - r);
        den += e * e;
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator("rms_phase_error"));
    }
    Ok((num / den).sqrt())
}
