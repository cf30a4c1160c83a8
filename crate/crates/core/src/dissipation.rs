//! Dissipation estimation, separated from phase retrieval.
//!
//! Inside the continuity equation the dissipation g(I) is exactly
//! absorbed by a phase shift (it only enters through `div(I grad H) =
//! 2 I g / alpha` for some potential H), so modulus data alone cannot
//! distinguish the two. g is therefore measured from purpose-built data:
//!
//! * plane-wave preparation: for a spatially uniform state every spatial
//!   term vanishes and `g(I)/alpha = -(1/2I) dI/dz` directly;
//! * low-fluctuation averaging: with `|grad phase|` small,
//!   `g(I)/alpha = (eta/alpha) lap(sqrt I)/sqrt(I) - (1/2I) dI/dz`,
//!   averaged over many measurements and binned by intensity.
//!
//! Both estimators return `(I, g/alpha)` tables consumable as a
//! tabulated nonlinearity by the inference stage; no knowledge of alpha
//! itself is needed.

use crate::error::{Error, Result};
use crate::field_grid::{check_same_spec, laplacian, ComplexField2D, GridSpec, ScalarField2D};
use crate::forward_sim::{rk4_step, ModelSpec, NonlinearFn};

/// Relative spatial standard deviation above which a plane is rejected
/// as non-uniform.
pub const UNIFORMITY_TOL: f64 = 1e-6;

/// Bins of the (I, g/alpha) tables.
const TABLE_BINS: usize = 64;

/// Spatially uniform intensities along increasing plane positions.
#[derive(Clone, Debug)]
pub struct DecaySeries {
    z_values: Vec<f64>,
    intensities: Vec<f64>,
}

impl DecaySeries {
    pub fn new(z_values: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        if z_values.len() != intensities.len() {
            return Err(Error::InvalidParameter {
                what: "decay series",
                why: format!(
                    "{} plane positions but {} intensities",
                    z_values.len(),
                    intensities.len()
                ),
            });
        }
        if z_values.len() < 3 {
            return Err(Error::InvalidParameter {
                what: "decay series",
                why: "centered differencing needs at least 3 planes".into(),
            });
        }
        if !z_values.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter {
                what: "decay series",
                why: "plane positions must be strictly increasing".into(),
            });
        }
        if let Some(&bad) = intensities.iter().find(|&&i| !(i > 0.0 && i.is_finite())) {
            return Err(Error::NonpositiveIntensity { min: bad });
        }
        Ok(Self {
            z_values,
            intensities,
        })
    }

    /// Collapse uniform planes to scalars, rejecting any plane whose
    /// relative spatial std exceeds [`UNIFORMITY_TOL`].
    pub fn from_uniform_fields(planes: &[(f64, ScalarField2D)]) -> Result<Self> {
        let mut z_values = Vec::with_capacity(planes.len());
        let mut intensities = Vec::with_capacity(planes.len());
        for (z, field) in planes {
            let mean = field.mean();
            let var = field
                .values()
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / field.values().len() as f64;
            let rel_std = var.sqrt() / mean.abs().max(f64::MIN_POSITIVE);
            if rel_std > UNIFORMITY_TOL {
                return Err(Error::NonUniformPlane(rel_std, UNIFORMITY_TOL));
            }
            z_values.push(*z);
            intensities.push(mean);
        }
        Self::new(z_values, intensities)
    }

    pub fn z_values(&self) -> &[f64] {
        &self.z_values
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }
}

/// Independent `(I, dI/dz)` plane measurements.
#[derive(Clone, Debug)]
pub struct MeasurementSet {
    entries: Vec<(ScalarField2D, ScalarField2D)>,
}

impl MeasurementSet {
    pub fn new(entries: Vec<(ScalarField2D, ScalarField2D)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyMeasurementSet);
        }
        for (i, didz) in &entries {
            check_same_spec(i, didz, "measurement")?;
            let min = i.min();
            if !(min > 0.0) {
                return Err(Error::NonpositiveIntensity { min });
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Plane-wave estimator: `g(I)/alpha = -(1/2I) dI/dz` with the
/// z-derivative centered on interior samples. With `alpha` supplied the
/// table is scaled to g(I) itself.
pub fn g_plane_wave(series: &DecaySeries, alpha: Option<f64>) -> Result<Vec<(f64, f64)>> {
    let z = &series.z_values;
    let i = &series.intensities;
    let scale = match alpha {
        Some(a) if a != 0.0 && a.is_finite() => a,
        Some(a) => {
            return Err(Error::InvalidParameter {
                what: "alpha",
                why: format!("must be finite and nonzero, got {a}"),
            })
        }
        None => 1.0,
    };
    let mut rows = Vec::with_capacity(i.len().saturating_sub(2));
    for k in 1..i.len() - 1 {
        let didz = (i[k + 1] - i[k - 1]) / (z[k + 1] - z[k - 1]);
        rows.push((i[k], -didz / (2.0 * i[k]) * scale));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows.dedup_by(|a, b| a.0 == b.0);
    if rows.len() < 2 {
        return Err(Error::InvalidParameter {
            what: "decay series",
            why: "needs at least two distinct interior intensities".into(),
        });
    }
    Ok(rows)
}

/// Averaging estimator for low-fluctuation fields:
/// `g(I)/alpha = (eta/alpha) lap(sqrt I)/sqrt(I) - (1/2I) dI/dz`
/// evaluated pointwise per measurement, binned by intensity across the
/// whole set and averaged per bin.
pub fn g_averaged(ms: &MeasurementSet, eta_over_alpha: f64) -> Result<Vec<(f64, f64)>> {
    if !eta_over_alpha.is_finite() {
        return Err(Error::NonFinite("eta_over_alpha"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, _) in &ms.entries {
        lo = lo.min(i.min());
        hi = hi.max(i.max());
    }
    if !(hi > lo) {
        // degenerate but valid: all measurements share one intensity
        hi = lo * (1.0 + 1e-9) + 1e-300;
    }
    let width = (hi - lo) / TABLE_BINS as f64;
    let mut sums = vec![0.0f64; TABLE_BINS];
    let mut counts = vec![0usize; TABLE_BINS];
    for (i, didz) in &ms.entries {
        let sqrt_i = i.map(f64::sqrt);
        let lap_sqrt = laplacian(&sqrt_i)?;
        for k in 0..i.spec().len() {
            let iv = i.values()[k];
            let sample = eta_over_alpha * lap_sqrt.values()[k] / sqrt_i.values()[k]
                - didz.values()[k] / (2.0 * iv);
            let b = (((iv - lo) / width) as usize).min(TABLE_BINS - 1);
            sums[b] += sample;
            counts[b] += 1;
        }
    }
    let mut rows = Vec::new();
    for b in 0..TABLE_BINS {
        if counts[b] > 0 {
            rows.push((lo + (b as f64 + 0.5) * width, sums[b] / counts[b] as f64));
        }
    }
    if rows.len() < 2 {
        // single populated bin: duplicate it so the table is usable
        if let Some(&(iv, gv)) = rows.first() {
            rows.push((iv * (1.0 + 1e-9) + 1e-300, gv));
        }
    }
    Ok(rows)
}

/// Measure g(I)/alpha over (0, i_max] by repeated plane-wave
/// preparations: each uniform state is evolved with the model's true
/// dynamics on a tiny grid (a uniform field stays uniform under any
/// stencil), decayed, converted to a [`DecaySeries`] and fed through
/// [`g_plane_wave`]. Rows from all preparations are merged into one
/// sorted table usable as a tabulated nonlinearity.
pub fn measure_g_table(
    model: &ModelSpec,
    i_max: f64,
    n_preparations: usize,
    steps: usize,
    snapshot_every: usize,
    dz: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(i_max > 0.0 && i_max.is_finite()) || n_preparations == 0 {
        return Err(Error::InvalidParameter {
            what: "g-table protocol",
            why: format!("i_max {i_max}, n_preparations {n_preparations}"),
        });
    }
    if snapshot_every == 0 || steps / snapshot_every < 3 {
        return Err(Error::InvalidParameter {
            what: "g-table protocol",
            why: "need at least 3 stored planes per preparation".into(),
        });
    }
    let spec = GridSpec::new(5)?;
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for prep in 0..n_preparations {
        let i0 = i_max * (prep + 1) as f64 / n_preparations as f64;
        let mut psi = ComplexField2D::from_intensity_phase(
            &ScalarField2D::constant(spec, i0),
            &ScalarField2D::zeros(spec),
        )?;
        let mut planes = vec![(0.0, psi.intensity())];
        for step in 1..=steps {
            psi = rk4_step(&psi, model, dz)?;
            if step % snapshot_every == 0 {
                planes.push((step as f64 * dz, psi.intensity()));
            }
        }
        let series = DecaySeries::from_uniform_fields(&planes)?;
        rows.extend(g_plane_wave(&series, None)?);
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-12 * b.0.abs().max(1e-300));
    if rows.len() < 2 {
        return Err(Error::InvalidParameter {
            what: "g-table protocol",
            why: "merged table has fewer than 2 rows".into(),
        });
    }
    Ok(rows)
}

/// Convenience: the measured table as a tabulated [`NonlinearFn`].
pub fn measured_g_over_alpha(table: Vec<(f64, f64)>) -> Result<NonlinearFn> {
    NonlinearFn::tabulated(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_sim::{evolve, EvolutionPlan};
    use approx::assert_relative_eq;

    fn spec(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    #[test]
    fn decay_series_validation() {
        assert!(DecaySeries::new(vec![0.0, 1.0], vec![1.0, 0.5]).is_err());
        assert!(DecaySeries::new(vec![0.0, 1.0, 0.5], vec![1.0, 0.5, 0.2]).is_err());
        assert!(DecaySeries::new(vec![0.0, 1.0, 2.0], vec![1.0, -0.5, 0.2]).is_err());
        assert!(DecaySeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.2]).is_ok());
    }

    #[test]
    fn non_uniform_plane_rejected() {
        let s = spec(17);
        let ramp = ScalarField2D::from_fn(s, |x, _| 1.0 + 0.1 * x);
        let planes = vec![(0.0, ramp.clone()), (1.0, ramp.clone()), (2.0, ramp)];
        assert!(matches!(
            DecaySeries::from_uniform_fields(&planes),
            Err(Error::NonUniformPlane(..))
        ));
    }

    #[test]
    fn constant_series_gives_zero_dissipation() {
        let series =
            DecaySeries::new(vec![0.0, 1.0, 2.0, 3.0], vec![2.0, 2.0, 2.0, 2.0]).unwrap();
        let table = g_plane_wave(&series, None).unwrap();
        for (_, g) in table {
            assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn exponential_decay_recovers_constant_g() {
        // I(z) = I0 exp(-2 g0 z / alpha) sampled finely
        let (i0, g0, alpha) = (4.0, 3.0, 2.0);
        let zs: Vec<f64> = (0..50).map(|k| k as f64 * 1e-3).collect();
        let is: Vec<f64> = zs
            .iter()
            .map(|z| i0 * (-2.0 * g0 * z / alpha).exp())
            .collect();
        let series = DecaySeries::new(zs, is).unwrap();
        let table = g_plane_wave(&series, None).unwrap();
        for (_, g_over_a) in &table {
            assert_relative_eq!(*g_over_a, g0 / alpha, max_relative = 2e-5);
        }
        // with alpha supplied the table is g itself
        let scaled = g_plane_wave(&series, Some(alpha)).unwrap();
        for ((_, ga), (_, g)) in table.iter().zip(&scaled) {
            assert_relative_eq!(*g, ga * alpha, epsilon = 1e-12);
        }
    }

    #[test]
    fn plane_wave_round_trip_through_simulator() {
        // Uniform field decaying under g = 3 I^2: recovered table matches
        // 3 I^2 / alpha over the decayed range.
        let s = spec(9);
        let alpha = 1.0;
        let model = ModelSpec {
            alpha,
            eta: 2.0,
            f: NonlinearFn::SineScaled { amplitude: 100.0 },
            g: NonlinearFn::Power {
                coefficient: 3.0,
                exponent: 2.0,
            },
        };
        let mut psi = ComplexField2D::from_intensity_phase(
            &ScalarField2D::constant(s, 10.0),
            &ScalarField2D::zeros(s),
        )
        .unwrap();
        let dz = 1e-6;
        let mut planes = vec![(0.0, psi.intensity())];
        for k in 1..=300 {
            psi = rk4_step(&psi, &model, dz).unwrap();
            if k % 10 == 0 {
                planes.push((k as f64 * dz, psi.intensity()));
            }
        }
        let series = DecaySeries::from_uniform_fields(&planes).unwrap();
        let table = g_plane_wave(&series, None).unwrap();
        for (i, g_over_a) in &table {
            let want = 3.0 * i * i / alpha;
            assert_relative_eq!(*g_over_a, want, max_relative = 5e-3);
        }
    }

    #[test]
    fn decay_law_round_trip() {
        // I(z) = I0 exp(-2 g0 z / alpha) holds to 1e-6 for constant g.
        let s = spec(9);
        let (g0, alpha) = (3.0, 1.0);
        let model = ModelSpec {
            alpha,
            eta: 0.5,
            f: NonlinearFn::Zero,
            g: NonlinearFn::Power {
                coefficient: g0,
                exponent: 0.0,
            },
        };
        let i0 = 5.0;
        let psi0 = ComplexField2D::from_intensity_phase(
            &ScalarField2D::constant(s, i0),
            &ScalarField2D::zeros(s),
        )
        .unwrap();
        let plan = EvolutionPlan {
            dz: 1e-6,
            n_steps: 300,
            snapshot_every: 100,
        };
        let out = evolve(&psi0, &model, &plan).unwrap();
        for (k, z) in out.z_positions.iter().enumerate() {
            let want = i0 * (-2.0 * g0 * z / alpha).exp();
            assert_relative_eq!(out.intensities[k].get(4, 4), want, max_relative = 1e-6);
        }
    }

    #[test]
    fn eta_independence_of_plane_wave_estimator() {
        let series = DecaySeries::new(
            vec![0.0, 1e-3, 2e-3, 3e-3],
            vec![2.0, 1.9, 1.81, 1.72],
        )
        .unwrap();
        // the estimator has no eta anywhere; same call, same answer
        let a = g_plane_wave(&series, None).unwrap();
        let b = g_plane_wave(&series, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn averaged_estimator_reduces_to_plane_wave_on_uniform_data() {
        let s = spec(17);
        let i_val = 3.0;
        let didz_val = -0.6;
        let i = ScalarField2D::constant(s, i_val);
        let didz = ScalarField2D::constant(s, didz_val);
        let ms = MeasurementSet::new(vec![(i, didz)]).unwrap();
        let table = g_averaged(&ms, 2.0).unwrap();
        let want = -didz_val / (2.0 * i_val);
        for (_, g) in &table {
            assert_relative_eq!(*g, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn averaged_estimator_matches_symbolic_construction() {
        // Manufacture dI/dz from a chosen constant g0 so every pointwise
        // sample equals g0 exactly.
        let s = spec(65);
        let eoa = 2.0;
        let g0 = 0.7;
        let i = ScalarField2D::from_fn(s, |x, y| {
            2.0 + (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / 0.08).exp()
        });
        let sqrt_i = i.map(f64::sqrt);
        let lap_sqrt = laplacian(&sqrt_i).unwrap();
        let didz = ScalarField2D::from_values(
            s,
            (0..s.len())
                .map(|k| {
                    let iv = i.values()[k];
                    2.0 * iv * (eoa * lap_sqrt.values()[k] / sqrt_i.values()[k] - g0)
                })
                .collect(),
        )
        .unwrap();
        let ms = MeasurementSet::new(vec![(i, didz)]).unwrap();
        let table = g_averaged(&ms, eoa).unwrap();
        for (_, g) in &table {
            assert!((g - g0).abs() < 1e-8, "sample {g} vs {g0}");
        }
    }

    #[test]
    fn averaging_identical_measurements_is_idempotent() {
        let s = spec(33);
        let i = ScalarField2D::from_fn(s, |x, y| 1.5 + 0.5 * ((3.0 * x).sin() + y));
        let didz = ScalarField2D::from_fn(s, |x, y| -0.2 * (1.0 + x * y));
        let one = MeasurementSet::new(vec![(i.clone(), didz.clone())]).unwrap();
        let many =
            MeasurementSet::new(vec![(i.clone(), didz.clone()); 7]).unwrap();
        let ta = g_averaged(&one, 1.3).unwrap();
        let tb = g_averaged(&many, 1.3).unwrap();
        assert_eq!(ta.len(), tb.len());
        for (a, b) in ta.iter().zip(&tb) {
            assert_relative_eq!(a.0, b.0, epsilon = 1e-12);
            assert_relative_eq!(a.1, b.1, epsilon = 1e-10);
        }
    }

    #[test]
    fn empty_measurement_set_rejected() {
        assert!(matches!(
            MeasurementSet::new(vec![]),
            Err(Error::EmptyMeasurementSet)
        ));
    }

    #[test]
    fn ladder_covers_the_requested_range() {
        let model = ModelSpec {
            alpha: 1.0,
            eta: 2.0,
            f: NonlinearFn::SineScaled { amplitude: 100.0 },
            g: NonlinearFn::Power {
                coefficient: 3.0,
                exponent: 2.0,
            },
        };
        let table = measure_g_table(&model, 10.5, 16, 100, 20, 1e-6).unwrap();
        assert!(table.first().unwrap().0 < 1.0);
        assert!(table.last().unwrap().0 > 10.0);
        for (i, g_over_a) in &table {
            let want = 3.0 * i * i;
            assert!(
                (g_over_a - want).abs() <= 5e-3 * want.max(0.1),
                "I = {i}: {g_over_a} vs {want}"
            );
        }
        // usable as a tabulated nonlinearity
        let f = measured_g_over_alpha(table).unwrap();
        assert!((f.eval(5.0) - 75.0).abs() < 1.0);
    }
}
