//! Inference of eta, alpha, the phase and f(I) from an intensity triple.
//!
//! The outer "diffusion relaxation" loop adjusts eta/alpha until the net
//! phase-gradient flux N through the inscribed circle vanishes: an
//! underestimated eta makes the retrieved phase look like density leaving
//! the system (N > 0), an overestimated eta like density entering
//! (N < 0). Each outer iteration retrieves the scaled phase at the two
//! midplanes, estimates alpha on iso-intensity pairs (where the unknown
//! f(I) cancels), computes N, and updates eta/alpha with a
//! Newton-Raphson-style rule on the fractional step X:
//!
//! ```text
//! if N_new * N_old < 0:  X <- -N_new / (N_new - N_old) * X
//! elif |N_new| > |N_old|: X <- -(N_new / N_old) * X
//! else:                   X <-  (N_new / N_old) * X
//! ```
//!
//! The loop converges when |X| drops below epsilon. A second run from the
//! seed reflected through the first asymptote approaches from the other
//! side; the final eta is the average of the two.

mod histogram;
mod iso_pairs;

pub use histogram::HistogramEstimate;
pub use iso_pairs::{find_iso_pairs, IsoIntensityPair, IsoPairSet};

use crate::error::{Error, Result};
use crate::field_grid::{
    boundary_flux, central_dz, gradient, laplacian, BoundaryContour, ScalarField2D,
};
use crate::forward_sim::{IntensityTriple, NonlinearFn};
use crate::phase_retrieval::{retrieve_phase_warm, PhaseRetrievalConfig, RetrievedPhase};

/// Fluxes below this are treated as exactly zero by the update rule.
const N_FLOOR: f64 = 1e-12;

/// Relative floor for pair-difference denominators.
const DENOM_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct RelaxationConfig {
    /// Convergence tolerance on |X|.
    pub epsilon: f64,
    /// Fractional increase of eta/alpha at the second iteration.
    pub initial_bump: f64,
    pub max_outer_iters: usize,
    /// Iso-intensity levels for the alpha histogram and the seed.
    pub n_iso_levels: usize,
    /// Bin width of the alpha histogram.
    pub histogram_bin_width: f64,
    pub retrieval_max_iters: usize,
    pub retrieval_grad_norm_tol: f64,
    /// Intensity bins of the extracted f table.
    pub f_bins: usize,
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-7,
            initial_bump: 0.01,
            max_outer_iters: 200,
            n_iso_levels: 100,
            histogram_bin_width: 1e-3,
            retrieval_max_iters: 400,
            retrieval_grad_norm_tol: 1e-6,
            f_bins: 100,
        }
    }
}

impl RelaxationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter {
                what: "epsilon",
                why: format!("must be positive, got {}", self.epsilon),
            });
        }
        if !(self.initial_bump > 0.0 && self.initial_bump < 1.0) {
            return Err(Error::InvalidParameter {
                what: "initial_bump",
                why: format!("must be in (0, 1), got {}", self.initial_bump),
            });
        }
        if self.max_outer_iters == 0 || self.n_iso_levels == 0 || self.f_bins == 0 {
            return Err(Error::InvalidParameter {
                what: "relaxation config",
                why: "iteration and bin counts must be at least 1".into(),
            });
        }
        if !(self.histogram_bin_width > 0.0) {
            return Err(Error::InvalidParameter {
                what: "histogram_bin_width",
                why: format!("must be positive, got {}", self.histogram_bin_width),
            });
        }
        Ok(())
    }

    fn retrieval_config(&self, eta_over_alpha: f64, eta_alpha: f64, g: &NonlinearFn) -> PhaseRetrievalConfig {
        PhaseRetrievalConfig {
            eta_over_alpha,
            eta_alpha_product: eta_alpha,
            g_over_alpha: g.clone(),
            max_iters: self.retrieval_max_iters,
            grad_norm_tol: self.retrieval_grad_norm_tol,
        }
    }
}

/// One row of the relaxation history.
#[derive(Clone, Copy, Debug)]
pub struct RelaxationRecord {
    pub k: usize,
    pub eta_over_alpha: f64,
    pub eta: f64,
    pub alpha: f64,
    pub n_flux: f64,
    /// Fractional step applied at the end of iteration k.
    pub x: f64,
}

/// Full history of one relaxation run.
#[derive(Clone, Debug, Default)]
pub struct RelaxationTrace {
    pub records: Vec<RelaxationRecord>,
    /// eta/alpha after the last applied update.
    pub final_eta_over_alpha: f64,
    pub converged: bool,
}

impl RelaxationTrace {
    pub fn final_eta(&self) -> Option<f64> {
        self.records.last().map(|r| r.eta)
    }

    pub fn final_alpha(&self) -> Option<f64> {
        self.records.last().map(|r| r.alpha)
    }
}

/// Everything inference produces.
#[derive(Clone, Debug)]
pub struct InferenceResult {
    pub eta_hat: f64,
    pub alpha_hat: f64,
    pub alpha_fwhm: f64,
    pub alpha_histogram: HistogramEstimate,
    /// Unscaled phase `phi = alpha * phi_tilde / 2` at the two midplanes,
    /// zero-mean gauge.
    pub phi_z1: ScalarField2D,
    pub phi_z3: ScalarField2D,
    /// Scaled phases, kept for diagnostics and f extraction.
    pub phi_tilde_z1: ScalarField2D,
    pub phi_tilde_z3: ScalarField2D,
    /// Median f per intensity bin, `(I, f)` sorted by I.
    pub f_table: Vec<(f64, f64)>,
    pub trace_up: RelaxationTrace,
    pub trace_down: RelaxationTrace,
    pub n_final: f64,
    pub seed: HistogramEstimate,
}

/// Midplane data derived from a triple: intensity averaged onto the
/// midplane and the centered z-derivative across the bracketing planes.
pub(crate) struct MidplaneData {
    pub i_mid1: ScalarField2D,
    pub didz1: ScalarField2D,
    pub i_mid3: ScalarField2D,
    pub didz3: ScalarField2D,
}

pub(crate) fn midplane_data(triple: &IntensityTriple) -> Result<MidplaneData> {
    let half = triple.dz_plane / 2.0;
    Ok(MidplaneData {
        i_mid1: triple.i0.zip_with(&triple.i2, |a, b| 0.5 * (a + b))?,
        didz1: central_dz(&triple.i0, &triple.i2, half)?,
        i_mid3: triple.i2.zip_with(&triple.i4, |a, b| 0.5 * (a + b))?,
        didz3: central_dz(&triple.i2, &triple.i4, half)?,
    })
}

/// Initial eta/alpha from iso-intensity pairs at the first midplane,
/// assuming zero phase: pairing the continuity equation at two points of
/// equal intensity cancels g(I) and leaves
///
/// ```text
/// eta/alpha = (dI1/dz - dI2/dz) / (2 sqrt(I1) lap sqrt(I1) - 2 sqrt(I2) lap sqrt(I2))
/// ```
pub fn seed_eta_over_alpha(
    triple: &IntensityTriple,
    cfg: &RelaxationConfig,
) -> Result<HistogramEstimate> {
    cfg.validate()?;
    let mid = midplane_data(triple)?;
    let sqrt_i = mid.i_mid1.map(f64::sqrt);
    let lap_sqrt = laplacian(&sqrt_i)?;
    let denom_field = sqrt_i.zip_with(&lap_sqrt, |s, l| 2.0 * s * l)?;
    let set = find_iso_pairs(&mid.i_mid1, cfg.n_iso_levels)?;
    let floor = DENOM_FLOOR * denom_field.max_abs();
    let mut samples = Vec::with_capacity(set.pairs.len());
    for p in &set.pairs {
        let num = mid.didz1.get(p.p1.0, p.p1.1) - mid.didz1.get(p.p2.0, p.p2.1);
        let den = denom_field.get(p.p1.0, p.p1.1) - denom_field.get(p.p2.0, p.p2.1);
        if den.abs() >= floor {
            samples.push(num / den);
        }
    }
    if samples.is_empty() {
        return Err(Error::NoValidPairs("all seed denominators degenerate"));
    }
    HistogramEstimate::from_samples(&samples, None)
}

/// The two point fields entering the alpha formula: the diffraction term
/// `D = lap(sqrt I)/sqrt(I)` and the phase-side combination
/// `K = d(pt)/dz - (eta/alpha)(1/I) div(I grad pt) + |grad pt|^2 / 2`.
pub(crate) fn hydrodynamic_terms(
    phi_tilde: &ScalarField2D,
    dphi_tilde_dz: &ScalarField2D,
    intensity: &ScalarField2D,
    eta_over_alpha: f64,
) -> Result<(ScalarField2D, ScalarField2D)> {
    let sqrt_i = intensity.map(f64::sqrt);
    let lap_sqrt = laplacian(&sqrt_i)?;
    let d_field = lap_sqrt.zip_with(&sqrt_i, |l, s| l / s)?;

    let (px, py) = gradient(phi_tilde)?;
    let (ix, iy) = gradient(intensity)?;
    let lap_p = laplacian(phi_tilde)?;
    let spec = intensity.spec();
    let mut k_vals = Vec::with_capacity(spec.len());
    for k in 0..spec.len() {
        let i = intensity.values()[k];
        let div_term = lap_p.values()[k]
            + (ix.values()[k] * px.values()[k] + iy.values()[k] * py.values()[k]) / i;
        let grad2 = px.values()[k] * px.values()[k] + py.values()[k] * py.values()[k];
        k_vals.push(dphi_tilde_dz.values()[k] - eta_over_alpha * div_term + 0.5 * grad2);
    }
    Ok((d_field, ScalarField2D::from_values(spec, k_vals)?))
}

/// Alpha from one equal-intensity pair: subtracting the phase-evolution
/// equation at the two points cancels f(I) and leaves
/// `alpha^2 = 2 (D1 - D2) / (K1 - K2)`. Returns `None` when the pair is
/// degenerate (tiny denominator or a nonpositive square).
pub fn alpha_from_pair(
    pair: &IsoIntensityPair,
    phi_tilde: &ScalarField2D,
    dphi_tilde_dz: &ScalarField2D,
    intensity: &ScalarField2D,
    eta_over_alpha: f64,
) -> Result<Option<f64>> {
    let (d_field, k_field) =
        hydrodynamic_terms(phi_tilde, dphi_tilde_dz, intensity, eta_over_alpha)?;
    Ok(alpha_from_pair_fields(pair, &d_field, &k_field))
}

fn alpha_from_pair_fields(
    pair: &IsoIntensityPair,
    d_field: &ScalarField2D,
    k_field: &ScalarField2D,
) -> Option<f64> {
    let floor = DENOM_FLOOR * k_field.max_abs();
    let dd = d_field.get(pair.p1.0, pair.p1.1) - d_field.get(pair.p2.0, pair.p2.1);
    let dk = k_field.get(pair.p1.0, pair.p1.1) - k_field.get(pair.p2.0, pair.p2.1);
    if !(dk.abs() > floor) {
        return None;
    }
    let alpha2 = 2.0 * dd / dk;
    if !(alpha2 > 0.0 && alpha2.is_finite()) {
        return None;
    }
    Some(alpha2.sqrt())
}

fn alpha_histogram(
    pairs: &IsoPairSet,
    phi_tilde: &ScalarField2D,
    dphi_tilde_dz: &ScalarField2D,
    intensity: &ScalarField2D,
    eta_over_alpha: f64,
    cfg: &RelaxationConfig,
) -> Result<HistogramEstimate> {
    let (d_field, k_field) =
        hydrodynamic_terms(phi_tilde, dphi_tilde_dz, intensity, eta_over_alpha)?;
    let samples: Vec<f64> = pairs
        .pairs
        .iter()
        .filter_map(|p| alpha_from_pair_fields(p, &d_field, &k_field))
        .collect();
    if samples.is_empty() {
        return Err(Error::NoValidPairs("all alpha pairs degenerate"));
    }
    HistogramEstimate::from_samples(&samples, Some(cfg.histogram_bin_width))
}

/// Newton-Raphson-style update of the fractional step. See the module
/// docs for the three branches.
pub fn diffusion_update(n_k: f64, n_k1: f64, x: f64) -> f64 {
    if n_k1 * n_k < 0.0 {
        -n_k1 / (n_k1 - n_k) * x
    } else if n_k == 0.0 {
        0.0
    } else if n_k1.abs() > n_k.abs() {
        -(n_k1 / n_k) * x
    } else {
        (n_k1 / n_k) * x
    }
}

struct OuterIteration {
    phi1: RetrievedPhase,
    phi3: RetrievedPhase,
    alpha_hist: HistogramEstimate,
    n_flux: f64,
}

/// One outer iteration: retrieve both midplane phases, estimate alpha,
/// evaluate the boundary flux at z1.
#[allow(clippy::too_many_arguments)]
fn outer_iteration(
    mid: &MidplaneData,
    pairs: &IsoPairSet,
    contour: &BoundaryContour,
    g_over_alpha: &NonlinearFn,
    eta_over_alpha: f64,
    alpha_prev: Option<f64>,
    i2: &ScalarField2D,
    dz_plane: f64,
    warm1: &ScalarField2D,
    warm3: &ScalarField2D,
    cfg: &RelaxationConfig,
) -> Result<OuterIteration> {
    let eta_alpha = alpha_prev.map_or(0.0, |a| eta_over_alpha * a * a);
    let pr_cfg = cfg.retrieval_config(eta_over_alpha, eta_alpha, g_over_alpha);
    let phi1 = retrieve_phase_warm(&mid.i_mid1, &mid.didz1, &pr_cfg, warm1)?;
    let phi3 = retrieve_phase_warm(&mid.i_mid3, &mid.didz3, &pr_cfg, warm3)?;

    let phi_mid = phi1
        .phi_tilde
        .zip_with(&phi3.phi_tilde, |a, b| 0.5 * (a + b))?;
    let dphidz = central_dz(&phi1.phi_tilde, &phi3.phi_tilde, dz_plane / 2.0)?;
    let alpha_hist = alpha_histogram(pairs, &phi_mid, &dphidz, i2, eta_over_alpha, cfg)?;

    // N drives only through sign and trend; positive scaling is free.
    let scale = alpha_prev.map_or(1.0, |a| 0.5 * a);
    let n_raw = boundary_flux(&phi1.phi_tilde.scaled(scale), contour)?;
    let n_flux = if n_raw.abs() < N_FLOOR { 0.0 } else { n_raw };

    Ok(OuterIteration {
        phi1,
        phi3,
        alpha_hist,
        n_flux,
    })
}

/// Run the diffusion relaxation from one starting guess of eta/alpha.
pub fn relaxation_run(
    triple: &IntensityTriple,
    g_over_alpha: &NonlinearFn,
    eta_over_alpha_0: f64,
    cfg: &RelaxationConfig,
) -> Result<RelaxationTrace> {
    cfg.validate()?;
    if !(eta_over_alpha_0 > 0.0 && eta_over_alpha_0.is_finite()) {
        return Err(Error::InvalidParameter {
            what: "eta_over_alpha seed",
            why: format!("must be positive, got {eta_over_alpha_0}"),
        });
    }
    let mid = midplane_data(triple)?;
    let pairs = find_iso_pairs(&triple.i2, cfg.n_iso_levels)?;
    let contour = BoundaryContour::inscribed_circle(triple.spec());

    let mut trace = RelaxationTrace::default();
    let mut eoa = eta_over_alpha_0;
    let mut x = 0.0f64;
    let mut n_prev = 0.0f64;
    let mut alpha_prev: Option<f64> = None;
    let mut warm1 = ScalarField2D::zeros(triple.spec());
    let mut warm3 = ScalarField2D::zeros(triple.spec());

    for k in 1..=cfg.max_outer_iters {
        let it = outer_iteration(
            &mid,
            &pairs,
            &contour,
            g_over_alpha,
            eoa,
            alpha_prev,
            &triple.i2,
            triple.dz_plane,
            &warm1,
            &warm3,
            cfg,
        )
        .map_err(|e| Error::RelaxationAborted {
            iteration: k,
            reason: e.to_string(),
            trace: Box::new(trace.clone()),
        })?;
        warm1 = it.phi1.phi_tilde.clone();
        warm3 = it.phi3.phi_tilde.clone();
        let alpha_k = it.alpha_hist.peak;

        // update rule: bootstrap bump at k = 1, Newton-style afterwards
        let x_applied = if k == 1 {
            cfg.initial_bump
        } else {
            diffusion_update(n_prev, it.n_flux, x)
        };
        trace.records.push(RelaxationRecord {
            k,
            eta_over_alpha: eoa,
            eta: eoa * alpha_k,
            alpha: alpha_k,
            n_flux: it.n_flux,
            x: x_applied,
        });
        eoa *= 1.0 + x_applied;
        x = x_applied;
        n_prev = it.n_flux;
        alpha_prev = Some(alpha_k);
        if k > 1 && x.abs() < cfg.epsilon {
            trace.converged = true;
            break;
        }
    }
    trace.final_eta_over_alpha = eoa;
    Ok(trace)
}

/// Full inference: seed, two reflected relaxation runs, final retrieval,
/// alpha histogram and f extraction.
pub fn infer(
    triple: &IntensityTriple,
    g_over_alpha: &NonlinearFn,
    cfg: &RelaxationConfig,
) -> Result<InferenceResult> {
    cfg.validate()?;
    let seed_hist = seed_eta_over_alpha(triple, cfg)?;
    let seed = seed_hist.peak;

    let trace_up = relaxation_run(triple, g_over_alpha, seed, cfg).map_err(|e| wrap_infer(e, None, None))?;
    let asymptote = trace_up.final_eta_over_alpha;
    let mut seed_down = 2.0 * asymptote - seed;
    if seed_down <= 0.0 {
        // keep the reflected guess positive for extreme seeds
        seed_down = asymptote * asymptote / seed;
    }
    let trace_down = relaxation_run(triple, g_over_alpha, seed_down, cfg)
        .map_err(|e| wrap_infer(e, Some(trace_up.clone()), None))?;

    let (eta_up, eta_down) = match (trace_up.final_eta(), trace_down.final_eta()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(wrap_infer(
                Error::NoValidPairs("relaxation produced no iterations"),
                Some(trace_up),
                Some(trace_down),
            ))
        }
    };
    let eta_hat = 0.5 * (eta_up + eta_down);
    let eoa_final = 0.5 * (trace_up.final_eta_over_alpha + trace_down.final_eta_over_alpha);
    let alpha_guess = 0.5
        * (trace_up.final_alpha().unwrap_or(1.0) + trace_down.final_alpha().unwrap_or(1.0));

    // final pass at the averaged diffusion ratio
    let mid = midplane_data(triple)?;
    let pr_cfg = cfg.retrieval_config(eoa_final, eoa_final * alpha_guess * alpha_guess, g_over_alpha);
    let zero = ScalarField2D::zeros(triple.spec());
    let phi1 = retrieve_phase_warm(&mid.i_mid1, &mid.didz1, &pr_cfg, &zero)
        .map_err(|e| wrap_infer(e, Some(trace_up.clone()), Some(trace_down.clone())))?;
    let phi3 = retrieve_phase_warm(&mid.i_mid3, &mid.didz3, &pr_cfg, &zero)
        .map_err(|e| wrap_infer(e, Some(trace_up.clone()), Some(trace_down.clone())))?;

    let pairs = find_iso_pairs(&triple.i2, cfg.n_iso_levels)?;
    let phi_mid = phi1
        .phi_tilde
        .zip_with(&phi3.phi_tilde, |a, b| 0.5 * (a + b))?;
    let dphidz = central_dz(&phi1.phi_tilde, &phi3.phi_tilde, triple.dz_plane / 2.0)?;
    let alpha_hist = alpha_histogram(&pairs, &phi_mid, &dphidz, &triple.i2, eoa_final, cfg)?;
    let alpha_hat = alpha_hist.peak;

    let f_table = extract_f(
        &phi1.phi_tilde,
        &phi3.phi_tilde,
        &triple.i2,
        eta_hat,
        alpha_hat,
        triple.dz_plane,
        cfg.f_bins,
    )?;

    let contour = BoundaryContour::inscribed_circle(triple.spec());
    let n_final = boundary_flux(&phi1.phi_tilde.scaled(0.5 * alpha_hat), &contour)?;

    let mut phi_z1 = phi1.phi_tilde.scaled(0.5 * alpha_hat);
    let mut phi_z3 = phi3.phi_tilde.scaled(0.5 * alpha_hat);
    phi_z1.remove_mean();
    phi_z3.remove_mean();

    Ok(InferenceResult {
        eta_hat,
        alpha_hat,
        alpha_fwhm: alpha_hist.fwhm,
        alpha_histogram: alpha_hist,
        phi_z1,
        phi_z3,
        phi_tilde_z1: phi1.phi_tilde,
        phi_tilde_z3: phi3.phi_tilde,
        f_table,
        trace_up,
        trace_down,
        n_final,
        seed: seed_hist,
    })
}

fn wrap_infer(e: Error, up: Option<RelaxationTrace>, down: Option<RelaxationTrace>) -> Error {
    match e {
        Error::RelaxationAborted { iteration, reason, trace } => {
            let (up2, down2) = if up.is_none() {
                (Some(*trace), down)
            } else {
                (up, Some(*trace))
            };
            Error::InferenceAborted {
                reason: format!("relaxation aborted at outer iteration {iteration}: {reason}"),
                trace_up: Box::new(up2),
                trace_down: Box::new(down2),
            }
        }
        other => Error::InferenceAborted {
            reason: other.to_string(),
            trace_up: Box::new(up),
            trace_down: Box::new(down),
        },
    }
}

/// Solve the phase-evolution equation for f at every interior point,
/// `f = (alpha^2 / 2) K - lap(sqrt I)/sqrt(I)`, then bin the `(I, f)`
/// cloud by intensity and keep the median of each nonempty bin. The
/// result carries the usual additive gauge ambiguity.
pub fn extract_f(
    phi_tilde_z1: &ScalarField2D,
    phi_tilde_z3: &ScalarField2D,
    i_z2: &ScalarField2D,
    eta_hat: f64,
    alpha_hat: f64,
    dz_plane: f64,
    n_bins: usize,
) -> Result<Vec<(f64, f64)>> {
    if !(alpha_hat != 0.0 && alpha_hat.is_finite() && eta_hat.is_finite()) {
        return Err(Error::InvalidParameter {
            what: "extract_f parameters",
            why: format!("eta_hat {eta_hat}, alpha_hat {alpha_hat}"),
        });
    }
    if n_bins == 0 {
        return Err(Error::InvalidParameter {
            what: "n_bins",
            why: "must be at least 1".into(),
        });
    }
    let phi_mid = phi_tilde_z1.zip_with(phi_tilde_z3, |a, b| 0.5 * (a + b))?;
    let dphidz = central_dz(phi_tilde_z1, phi_tilde_z3, dz_plane / 2.0)?;
    let (d_field, k_field) =
        hydrodynamic_terms(&phi_mid, &dphidz, i_z2, eta_hat / alpha_hat)?;

    let n = i_z2.spec().nx();
    let mut cloud: Vec<(f64, f64)> = Vec::with_capacity((n - 2) * (n - 2));
    let half_a2 = 0.5 * alpha_hat * alpha_hat;
    for iy in 1..n - 1 {
        for ix in 1..n - 1 {
            let f = half_a2 * k_field.get(ix, iy) - d_field.get(ix, iy);
            cloud.push((i_z2.get(ix, iy), f));
        }
    }
    let lo = cloud.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = cloud.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::ConstantField("f extraction"));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for (i, f) in cloud {
        let b = (((i - lo) / width) as usize).min(n_bins - 1);
        bins[b].push(f);
    }
    let mut table = Vec::new();
    for (b, mut vals) in bins.into_iter().enumerate() {
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(f64::total_cmp);
        let median = if vals.len() % 2 == 1 {
            vals[vals.len() / 2]
        } else {
            0.5 * (vals[vals.len() / 2 - 1] + vals[vals.len() / 2])
        };
        table.push((lo + (b as f64 + 0.5) * width, median));
    }
    Ok(table)
}
