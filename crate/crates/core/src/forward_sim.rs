//! Forward evolution of the TDCGL equation with classical RK4.
//!
//! The evolution equation, written as an explicit z-derivative, is
//!
//! ```text
//! d psi / dz = (i/alpha) [ (1 - i eta) lap(psi) + (f(I) + i g(I)) psi ]
//! ```
//!
//! with `I = |psi|^2`. The initial field is a ring-shaped Gaussian
//! intensity with sinusoidal modulation and a Gaussian phase profile;
//! intensity and exact phase are stored every `snapshot_every` steps.

use crate::error::{Error, Result};
use crate::field_grid::{check_same_spec, laplacian, ComplexField2D, GridSpec, ScalarField2D};

/// Single-step growth beyond this factor aborts the run.
const BLOWUP_FACTOR: f64 = 1e6;

/// Real-valued nonlinearity of the intensity.
#[derive(Clone, Debug, PartialEq)]
pub enum NonlinearFn {
    Zero,
    /// `amplitude * sin(pi * I)`
    SineScaled { amplitude: f64 },
    /// `coefficient * I^exponent`
    Power { coefficient: f64, exponent: f64 },
    /// Piecewise-linear table over strictly increasing abscissae;
    /// extrapolates linearly from the end segments.
    Tabulated { points: Vec<(f64, f64)> },
}

impl NonlinearFn {
    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidParameter {
                what: "tabulated nonlinearity",
                why: format!("needs at least 2 points, got {}", points.len()),
            });
        }
        if !points
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].0.is_finite())
        {
            return Err(Error::InvalidParameter {
                what: "tabulated nonlinearity",
                why: "abscissae must be finite and strictly increasing".into(),
            });
        }
        if !points.iter().all(|p| p.1.is_finite()) {
            return Err(Error::NonFinite("tabulated nonlinearity values"));
        }
        Ok(NonlinearFn::Tabulated { points })
    }

    /// Same function with its values scaled by `s` (e.g. g -> g/alpha).
    pub fn scaled(&self, s: f64) -> NonlinearFn {
        match self {
            NonlinearFn::Zero => NonlinearFn::Zero,
            NonlinearFn::SineScaled { amplitude } => NonlinearFn::SineScaled {
                amplitude: amplitude * s,
            },
            NonlinearFn::Power {
                coefficient,
                exponent,
            } => NonlinearFn::Power {
                coefficient: coefficient * s,
                exponent: *exponent,
            },
            NonlinearFn::Tabulated { points } => NonlinearFn::Tabulated {
                points: points.iter().map(|(i, v)| (*i, v * s)).collect(),
            },
        }
    }

    pub fn eval(&self, i: f64) -> f64 {
        match self {
            NonlinearFn::Zero => 0.0,
            NonlinearFn::SineScaled { amplitude } => {
                amplitude * (std::f64::consts::PI * i).sin()
            }
            NonlinearFn::Power {
                coefficient,
                exponent,
            } => coefficient * i.powf(*exponent),
            NonlinearFn::Tabulated { points } => {
                let n = points.len();
                let seg = match points.binary_search_by(|p| p.0.total_cmp(&i)) {
                    Ok(k) => return points[k].1,
                    Err(0) => 0,
                    Err(k) if k >= n => n - 2,
                    Err(k) => k - 1,
                };
                let (x0, y0) = points[seg];
                let (x1, y1) = points[seg + 1];
                y0 + (y1 - y0) * (i - x0) / (x1 - x0)
            }
        }
    }
}

/// Ground-truth parameters and nonlinear functions of the evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub alpha: f64,
    pub eta: f64,
    pub f: NonlinearFn,
    pub g: NonlinearFn,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter {
                what: "alpha",
                why: format!("must be finite and nonzero, got {}", self.alpha),
            });
        }
        if !self.eta.is_finite() {
            return Err(Error::NonFinite("eta"));
        }
        Ok(())
    }
}

/// Parameters of the initial intensity and phase profiles.
///
/// With `r = sqrt(x^2 + y^2)` and envelope
/// `E = exp(-((r - r0)/w)^2 / 2)`:
///
/// ```text
/// I(x,y)   = a * [1 + delta E cos(2 pi n (x - x0))]
///              * [1 + delta E sin(2 pi n (y - y0))] * E
/// phi(x,y) = a_phi * E
/// ```
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialConditionSpec {
    pub a: f64,
    pub w: f64,
    pub delta: f64,
    pub r0: f64,
    pub n: u32,
    pub x0: f64,
    pub y0: f64,
    pub a_phi: f64,
}

impl InitialConditionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidParameter {
                what: "initial condition a",
                why: format!("peak amplitude must be positive, got {}", self.a),
            });
        }
        if !(self.w > 0.0 && self.w.is_finite()) {
            return Err(Error::InvalidParameter {
                what: "initial condition w",
                why: format!("width must be positive, got {}", self.w),
            });
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidParameter {
                what: "initial condition delta",
                why: format!("modulation depth must be in [0, 1), got {}", self.delta),
            });
        }
        for (name, v) in [
            ("r0", self.r0),
            ("x0", self.x0),
            ("y0", self.y0),
            ("a_phi", self.a_phi),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    what: "initial condition",
                    why: format!("{name} is not finite"),
                });
            }
        }
        Ok(())
    }

    fn envelope(&self, x: f64, y: f64) -> f64 {
        let r = (x * x + y * y).sqrt();
        (-((r - self.r0).powi(2)) / (2.0 * self.w * self.w)).exp()
    }
}

/// z-stepping plan: step size, total steps and snapshot cadence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvolutionPlan {
    pub dz: f64,
    pub n_steps: usize,
    pub snapshot_every: usize,
}

impl EvolutionPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.dz > 0.0 && self.dz.is_finite()) {
            return Err(Error::InvalidParameter {
                what: "dz",
                why: format!("must be positive, got {}", self.dz),
            });
        }
        if self.snapshot_every == 0 || self.n_steps % self.snapshot_every != 0 {
            return Err(Error::InvalidParameter {
                what: "snapshot_every",
                why: format!(
                    "{} must divide n_steps = {}",
                    self.snapshot_every, self.n_steps
                ),
            });
        }
        Ok(())
    }

    pub fn n_snapshots(&self) -> usize {
        self.n_steps / self.snapshot_every
    }

    /// Spacing between adjacent stored planes.
    pub fn dz_plane(&self) -> f64 {
        self.snapshot_every as f64 * self.dz
    }
}

/// Intensity on three stored planes; the sole input to inference.
#[derive(Clone, Debug)]
pub struct IntensityTriple {
    pub i0: ScalarField2D,
    pub i2: ScalarField2D,
    pub i4: ScalarField2D,
    pub dz_plane: f64,
}

impl IntensityTriple {
    pub fn new(
        i0: ScalarField2D,
        i2: ScalarField2D,
        i4: ScalarField2D,
        dz_plane: f64,
    ) -> Result<Self> {
        check_same_spec(&i0, &i2, "intensity triple")?;
        check_same_spec(&i0, &i4, "intensity triple")?;
        if !(dz_plane > 0.0 && dz_plane.is_finite()) {
            return Err(Error::InvalidParameter {
                what: "dz_plane",
                why: format!("must be positive, got {dz_plane}"),
            });
        }
        for f in [&i0, &i2, &i4] {
            let min = f.min();
            if !(min > 0.0) {
                return Err(Error::NonpositiveIntensity { min });
            }
        }
        Ok(Self {
            i0,
            i2,
            i4,
            dz_plane,
        })
    }

    pub fn spec(&self) -> GridSpec {
        self.i0.spec()
    }
}

/// Evaluate the modulated ring-Gaussian intensity profile.
pub fn init_intensity(ic: &InitialConditionSpec, grid: GridSpec) -> Result<ScalarField2D> {
    ic.validate()?;
    let tau = 2.0 * std::f64::consts::PI * ic.n as f64;
    let field = ScalarField2D::from_fn(grid, |x, y| {
        let e = ic.envelope(x, y);
        ic.a * (1.0 + ic.delta * e * (tau * (x - ic.x0)).cos())
            * (1.0 + ic.delta * e * (tau * (y - ic.y0)).sin())
            * e
    });
    let min = field.min();
    if !(min > 0.0) {
        return Err(Error::NonpositiveIntensity { min });
    }
    Ok(field)
}

/// Evaluate the Gaussian phase profile `a_phi * E`.
pub fn init_phase(ic: &InitialConditionSpec, grid: GridSpec) -> ScalarField2D {
    ScalarField2D::from_fn(grid, |x, y| ic.a_phi * ic.envelope(x, y))
}

/// Right-hand side of the explicit evolution equation,
/// `d psi / dz = (i/alpha) [ (1 - i eta) lap(psi) + (f + i g) psi ]`.
pub fn tdcgl_rhs(psi: &ComplexField2D, model: &ModelSpec) -> Result<ComplexField2D> {
    model.validate()?;
    if !psi.is_finite() {
        return Err(Error::NonFinite("psi"));
    }
    let lap_re = laplacian(psi.re())?;
    let lap_im = laplacian(psi.im())?;
    let spec = psi.spec();
    let n = spec.len();
    let (a, b) = (psi.re().values(), psi.im().values());
    let (lr, li) = (lap_re.values(), lap_im.values());
    let mut out_re = Vec::with_capacity(n);
    let mut out_im = Vec::with_capacity(n);
    let inv_alpha = 1.0 / model.alpha;
    for k in 0..n {
        let intensity = a[k] * a[k] + b[k] * b[k];
        let f = model.f.eval(intensity);
        let g = model.g.eval(intensity);
        // s = (1 - i eta) lap(psi) + (f + i g) psi, rhs = i s / alpha
        let s_re = lr[k] + model.eta * li[k] + f * a[k] - g * b[k];
        let s_im = li[k] - model.eta * lr[k] + f * b[k] + g * a[k];
        out_re.push(-s_im * inv_alpha);
        out_im.push(s_re * inv_alpha);
    }
    let re = ScalarField2D::from_values(spec, out_re).map_err(|_| Error::NonFinite("tdcgl rhs"))?;
    let im = ScalarField2D::from_values(spec, out_im).map_err(|_| Error::NonFinite("tdcgl rhs"))?;
    ComplexField2D::new(re, im)
}

fn axpy(psi: &ComplexField2D, k: &ComplexField2D, scale: f64) -> ComplexField2D {
    let re = psi
        .re()
        .zip_with(k.re(), |p, d| p + scale * d)
        .expect("spec");
    let im = psi
        .im()
        .zip_with(k.im(), |p, d| p + scale * d)
        .expect("spec");
    ComplexField2D::new(re, im).expect("spec")
}

/// One classical RK4 step of size `dz`.
pub fn rk4_step(psi: &ComplexField2D, model: &ModelSpec, dz: f64) -> Result<ComplexField2D> {
    if !(dz > 0.0 && dz.is_finite()) {
        return Err(Error::InvalidParameter {
            what: "dz",
            why: format!("must be positive, got {dz}"),
        });
    }
    let max_in = psi.max_abs();
    let k1 = tdcgl_rhs(psi, model)?;
    let k2 = tdcgl_rhs(&axpy(psi, &k1, 0.5 * dz), model)?;
    let k3 = tdcgl_rhs(&axpy(psi, &k2, 0.5 * dz), model)?;
    let k4 = tdcgl_rhs(&axpy(psi, &k3, dz), model)?;
    let c = dz / 6.0;
    let re = ScalarField2D::from_values(
        psi.spec(),
        (0..psi.spec().len())
            .map(|i| {
                psi.re().values()[i]
                    + c * (k1.re().values()[i]
                        + 2.0 * k2.re().values()[i]
                        + 2.0 * k3.re().values()[i]
                        + k4.re().values()[i])
            })
            .collect(),
    )
    .map_err(|_| Error::NonFinite("rk4 step"))?;
    let im = ScalarField2D::from_values(
        psi.spec(),
        (0..psi.spec().len())
            .map(|i| {
                psi.im().values()[i]
                    + c * (k1.im().values()[i]
                        + 2.0 * k2.im().values()[i]
                        + 2.0 * k3.im().values()[i]
                        + k4.im().values()[i])
            })
            .collect(),
    )
    .map_err(|_| Error::NonFinite("rk4 step"))?;
    let next = ComplexField2D::new(re, im)?;
    if max_in > 0.0 && next.max_abs() > BLOWUP_FACTOR * max_in {
        return Err(Error::Blowup {
            step: 0,
            max_abs: next.max_abs(),
        });
    }
    Ok(next)
}

/// Everything the forward run stores: the intensity triple used by
/// inference plus per-snapshot intensity, exact phase and z positions
/// (ground truth, for diagnostics only).
#[derive(Clone, Debug)]
pub struct EvolutionOutput {
    pub triple: IntensityTriple,
    pub intensities: Vec<ScalarField2D>,
    pub phases: Vec<ScalarField2D>,
    pub z_positions: Vec<f64>,
}

/// Run `n_steps` RK4 steps, storing intensity and exact phase at every
/// snapshot plane. The triple is built from the first three snapshots.
pub fn evolve(
    psi0: &ComplexField2D,
    model: &ModelSpec,
    plan: &EvolutionPlan,
) -> Result<EvolutionOutput> {
    plan.validate()?;
    model.validate()?;
    if plan.n_snapshots() < 3 {
        return Err(Error::InvalidParameter {
            what: "evolution plan",
            why: format!(
                "need at least 3 snapshots for an intensity triple, got {}",
                plan.n_snapshots()
            ),
        });
    }
    let initial_max = psi0.max_abs();
    let mut psi = psi0.clone();
    let mut intensities = Vec::with_capacity(plan.n_snapshots());
    let mut phases = Vec::with_capacity(plan.n_snapshots());
    let mut z_positions = Vec::with_capacity(plan.n_snapshots());
    for step in 1..=plan.n_steps {
        psi = rk4_step(&psi, model, plan.dz).map_err(|e| match e {
            Error::Blowup { max_abs, .. } => Error::Blowup { step, max_abs },
            other => other,
        })?;
        if psi.max_abs() > BLOWUP_FACTOR * initial_max {
            return Err(Error::Blowup {
                step,
                max_abs: psi.max_abs(),
            });
        }
        if step % plan.snapshot_every == 0 {
            intensities.push(psi.intensity());
            phases.push(psi.phase());
            z_positions.push(step as f64 * plan.dz);
        }
    }
    let triple = IntensityTriple::new(
        intensities[0].clone(),
        intensities[1].clone(),
        intensities[2].clone(),
        plan.dz_plane(),
    )?;
    Ok(EvolutionOutput {
        triple,
        intensities,
        phases,
        z_positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_grid::{central_dz, gradient};
    use approx::assert_relative_eq;

    fn spec(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    fn paper_ic(a_phi: f64) -> InitialConditionSpec {
        InitialConditionSpec {
            a: 10.0,
            w: 0.15,
            delta: 0.01,
            r0: 0.5,
            n: 20,
            x0: 0.5,
            y0: 0.5,
            a_phi,
        }
    }

    fn paper_model() -> ModelSpec {
        ModelSpec {
            alpha: 1.0,
            eta: 2.0,
            f: NonlinearFn::SineScaled { amplitude: 100.0 },
            g: NonlinearFn::Power {
                coefficient: 3.0,
                exponent: 2.0,
            },
        }
    }

    #[test]
    fn nonlinear_fn_shapes() {
        let f = NonlinearFn::SineScaled { amplitude: 100.0 };
        assert_relative_eq!(f.eval(0.5), 100.0, epsilon = 1e-12);
        let g = NonlinearFn::Power {
            coefficient: 3.0,
            exponent: 2.0,
        };
        assert_relative_eq!(g.eval(2.0), 12.0, epsilon = 1e-12);
        assert_eq!(NonlinearFn::Zero.eval(7.0), 0.0);

        let t = NonlinearFn::tabulated(vec![(0.0, 0.0), (1.0, 2.0), (2.0, 2.0)]).unwrap();
        assert_relative_eq!(t.eval(0.5), 1.0, epsilon = 1e-12);
        assert_relative_eq!(t.eval(1.5), 2.0, epsilon = 1e-12);
        // linear extrapolation off both ends
        assert_relative_eq!(t.eval(-0.5), -1.0, epsilon = 1e-12);
        assert_relative_eq!(t.eval(3.0), 2.0, epsilon = 1e-12);
        assert!(NonlinearFn::tabulated(vec![(0.0, 0.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn init_intensity_flat_limit() {
        // delta = 0 and an enormous width leave I == a everywhere.
        let ic = InitialConditionSpec {
            delta: 0.0,
            w: 1e6,
            ..paper_ic(0.0)
        };
        let i = init_intensity(&ic, spec(33)).unwrap();
        for &v in i.values() {
            assert!((v - ic.a).abs() / ic.a < 1e-9);
        }
    }

    #[test]
    fn init_intensity_single_point_oracle() {
        // Independent single-point evaluation at (1/2, 1/2).
        let ic = paper_ic(1.0);
        let s = spec(257);
        let i = init_intensity(&ic, s).unwrap();
        let (x, y) = (0.5, 0.5);
        let r = (x * x + y * y + 0.0f64).sqrt();
        let e = (-0.5 * ((r - ic.r0) / ic.w).powi(2)).exp();
        let tau = 2.0 * std::f64::consts::PI * ic.n as f64;
        let expected = ic.a
            * (1.0 + ic.delta * e * (tau * (x - ic.x0)).cos())
            * (1.0 + ic.delta * e * (tau * (y - ic.y0)).sin())
            * e;
        assert_relative_eq!(i.get(128, 128), expected, epsilon = 1e-12);
    }

    #[test]
    fn init_intensity_ring_maximum_without_modulation() {
        let ic = InitialConditionSpec {
            delta: 0.0,
            ..paper_ic(0.0)
        };
        let s = spec(257);
        let i = init_intensity(&ic, s).unwrap();
        // peak on the ring r = r0; check along the x-axis row y = 0
        let mut best_ix = 0;
        let mut best = f64::NEG_INFINITY;
        for ix in 0..s.nx() {
            if i.get(ix, 0) > best {
                best = i.get(ix, 0);
                best_ix = ix;
            }
        }
        assert_relative_eq!(s.x(best_ix), ic.r0, epsilon = 2.0 * s.h());
        assert_relative_eq!(best, ic.a, max_relative = 1e-4);
    }

    #[test]
    fn init_phase_zero_amplitude() {
        let ic = paper_ic(0.0);
        let p = init_phase(&ic, spec(65));
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn init_phase_mean_gradient_scales_linearly() {
        // The mean |grad phi| is proportional to a_phi.
        let s = spec(257);
        let mean_grad = |a_phi: f64| {
            let p = init_phase(&paper_ic(a_phi), s);
            let (gx, gy) = gradient(&p).unwrap();
            let mut acc = 0.0;
            for k in 0..s.len() {
                acc += (gx.values()[k].powi(2) + gy.values()[k].powi(2)).sqrt();
            }
            acc / s.len() as f64
        };
        let m1 = mean_grad(1.0);
        let m2 = mean_grad(2.0);
        assert_relative_eq!(m2 / m1, 2.0, epsilon = 1e-9);
        // the mean phase gradient tracks a_phi to within tens of percent
        assert!(m1 > 0.5 && m1 < 3.0, "mean grad at a_phi=1: {m1}");
    }

    #[test]
    fn rhs_zero_field() {
        let psi = ComplexField2D::zeros(spec(17));
        let rhs = tdcgl_rhs(&psi, &paper_model()).unwrap();
        assert_eq!(rhs.re().max_abs(), 0.0);
        assert_eq!(rhs.im().max_abs(), 0.0);
    }

    #[test]
    fn rhs_uniform_decay_limit() {
        // Uniform field, f = 0, g = g0: d psi/dz = -(g0/alpha) psi.
        let s = spec(17);
        let i0 = 4.0;
        let g0 = 3.0;
        let alpha = 2.0;
        let model = ModelSpec {
            alpha,
            eta: 0.7,
            f: NonlinearFn::Zero,
            g: NonlinearFn::Power {
                coefficient: g0,
                exponent: 0.0,
            },
        };
        let psi = ComplexField2D::from_intensity_phase(
            &ScalarField2D::constant(s, i0),
            &ScalarField2D::zeros(s),
        )
        .unwrap();
        let rhs = tdcgl_rhs(&psi, &model).unwrap();
        let expect = -(g0 / alpha) * i0.sqrt();
        for k in 0..s.len() {
            assert_relative_eq!(rhs.re().values()[k], expect, epsilon = 1e-12);
            assert_relative_eq!(rhs.im().values()[k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rhs_matches_complex_arithmetic_oracle() {
        // Independent evaluation with explicit complex arithmetic at
        // random points.
        use rand::{rngs::StdRng, Rng, SeedableRng};
        let s = spec(33);
        let model = paper_model();
        let psi_re = ScalarField2D::from_fn(s, |x, y| (2.0 * x).sin() * (3.0 * y).cos() + 1.2);
        let psi_im = ScalarField2D::from_fn(s, |x, y| (x * y * 5.0).cos() * 0.7);
        let psi = ComplexField2D::new(psi_re, psi_im).unwrap();
        let rhs = tdcgl_rhs(&psi, &model).unwrap();

        let lap_re = laplacian(psi.re()).unwrap();
        let lap_im = laplacian(psi.im()).unwrap();
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..10 {
            let ix = rng.gen_range(0..s.nx());
            let iy = rng.gen_range(0..s.nx());
            let a = psi.re().get(ix, iy);
            let b = psi.im().get(ix, iy);
            let intensity = a * a + b * b;
            // (i/alpha) * ((1 - i eta)(lr + i li) + (f + i g)(a + i b))
            let (lr, li) = (lap_re.get(ix, iy), lap_im.get(ix, iy));
            let f = model.f.eval(intensity);
            let g = model.g.eval(intensity);
            let t_re = lr + model.eta * li + f * a - g * b;
            let t_im = li - model.eta * lr + f * b + g * a;
            let want_re = -t_im / model.alpha;
            let want_im = t_re / model.alpha;
            assert_relative_eq!(rhs.re().get(ix, iy), want_re, epsilon = 1e-12);
            assert_relative_eq!(rhs.im().get(ix, iy), want_im, epsilon = 1e-12);
        }
    }

    #[test]
    fn rk4_stationary_state() {
        // f = g = 0, eta = 0, uniform psi: nothing moves.
        let s = spec(17);
        let model = ModelSpec {
            alpha: 1.0,
            eta: 0.0,
            f: NonlinearFn::Zero,
            g: NonlinearFn::Zero,
        };
        let psi = ComplexField2D::from_intensity_phase(
            &ScalarField2D::constant(s, 2.0),
            &ScalarField2D::constant(s, 0.4),
        )
        .unwrap();
        let next = rk4_step(&psi, &model, 1e-3).unwrap();
        for k in 0..s.len() {
            assert_relative_eq!(next.re().values()[k], psi.re().values()[k], epsilon = 1e-14);
            assert_relative_eq!(next.im().values()[k], psi.im().values()[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn rk4_uniform_exponential_decay() {
        // I(z) = I0 exp(-2 g0 z / alpha) for constant dissipation.
        let s = spec(9);
        let (i0, g0, alpha) = (5.0, 3.0, 1.0);
        let model = ModelSpec {
            alpha,
            eta: 2.0,
            f: NonlinearFn::SineScaled { amplitude: 100.0 },
            g: NonlinearFn::Power {
                coefficient: g0,
                exponent: 0.0,
            },
        };
        let mut psi = ComplexField2D::from_intensity_phase(
            &ScalarField2D::constant(s, i0),
            &ScalarField2D::zeros(s),
        )
        .unwrap();
        let dz = 1e-4;
        let m = 300;
        for _ in 0..m {
            psi = rk4_step(&psi, &model, dz).unwrap();
        }
        let want = i0 * (-2.0 * g0 * (m as f64) * dz / alpha).exp();
        assert_relative_eq!(psi.intensity().get(4, 4), want, max_relative = 1e-8);
    }

    #[test]
    fn rk4_step_halving_is_fourth_order() {
        let s = spec(65);
        let model = paper_model();
        let ic = paper_ic(0.5);
        let psi0 = ComplexField2D::from_intensity_phase(
            &init_intensity(&ic, s).unwrap(),
            &init_phase(&ic, s),
        )
        .unwrap();
        let dz = 2e-6;

        // reference: 4 steps at dz/4
        let mut fine = psi0.clone();
        for _ in 0..4 {
            fine = rk4_step(&fine, &model, dz / 4.0).unwrap();
        }
        let coarse = rk4_step(&psi0, &model, dz).unwrap();
        let mut two_half = rk4_step(&psi0, &model, dz / 2.0).unwrap();
        two_half = rk4_step(&two_half, &model, dz / 2.0).unwrap();

        let err = |a: &ComplexField2D, b: &ComplexField2D| {
            let mut e = 0.0f64;
            for k in 0..s.len() {
                e = e.max((a.re().values()[k] - b.re().values()[k]).abs());
                e = e.max((a.im().values()[k] - b.im().values()[k]).abs());
            }
            e
        };
        let e_coarse = err(&coarse, &fine);
        let e_half = err(&two_half, &fine);
        let ratio = e_coarse / e_half;
        // fourth order: halving dz cuts the error ~16x (jitter allowed)
        assert!(
            ratio > 16.0 * 0.8 && ratio < 16.0 * 1.25,
            "expected ~16, got {ratio} (errors {e_coarse:e}, {e_half:e})"
        );
    }

    #[test]
    fn evolve_paper_plan_stores_three_planes() {
        let s = spec(65);
        let ic = paper_ic(0.5);
        let psi0 = ComplexField2D::from_intensity_phase(
            &init_intensity(&ic, s).unwrap(),
            &init_phase(&ic, s),
        )
        .unwrap();
        let plan = EvolutionPlan {
            dz: 1e-6,
            n_steps: 300,
            snapshot_every: 100,
        };
        let out = evolve(&psi0, &paper_model(), &plan).unwrap();
        assert_eq!(out.intensities.len(), 3);
        assert_eq!(out.phases.len(), 3);
        assert_relative_eq!(out.triple.dz_plane, 1e-4, epsilon = 1e-18);
        assert_eq!(out.z_positions.len(), 3);
        assert_relative_eq!(out.z_positions[0], 100.0 * 1e-6, epsilon = 1e-15);
        // positivity of all stored planes
        assert!(out.triple.i0.min() > 0.0);
        assert!(out.triple.i2.min() > 0.0);
        assert!(out.triple.i4.min() > 0.0);
    }

    #[test]
    fn evolve_stationary_model_keeps_planes_equal_to_initial() {
        // Zero-dynamics run: uniform field with f = g = 0, eta = 0.
        let s = spec(17);
        let model = ModelSpec {
            alpha: 1.0,
            eta: 0.0,
            f: NonlinearFn::Zero,
            g: NonlinearFn::Zero,
        };
        let i0 = ScalarField2D::constant(s, 2.0);
        let psi0 =
            ComplexField2D::from_intensity_phase(&i0, &ScalarField2D::zeros(s)).unwrap();
        let plan = EvolutionPlan {
            dz: 1e-4,
            n_steps: 30,
            snapshot_every: 10,
        };
        let out = evolve(&psi0, &model, &plan).unwrap();
        for plane in [&out.triple.i0, &out.triple.i2, &out.triple.i4] {
            for k in 0..s.len() {
                assert_relative_eq!(plane.values()[k], 2.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn evolve_norm_decreases_under_dissipation() {
        let s = spec(65);
        let ic = paper_ic(0.5);
        let psi0 = ComplexField2D::from_intensity_phase(
            &init_intensity(&ic, s).unwrap(),
            &init_phase(&ic, s),
        )
        .unwrap();
        let plan = EvolutionPlan {
            dz: 1e-6,
            n_steps: 300,
            snapshot_every: 100,
        };
        let out = evolve(&psi0, &paper_model(), &plan).unwrap();
        let norms: Vec<f64> = out.intensities.iter().map(|i| i.integral()).collect();
        assert!(
            norms[0] > norms[1] && norms[1] > norms[2],
            "norms not monotone: {norms:?}"
        );
    }

    #[test]
    fn evolve_conserves_norm_in_nls_limit() {
        // g = 0, eta = 0 is the pure nonlinear Schroedinger limit: the
        // total intensity is conserved. Use a blob away from the edges.
        let s = spec(65);
        let model = ModelSpec {
            alpha: 1.0,
            eta: 0.0,
            f: NonlinearFn::SineScaled { amplitude: 100.0 },
            g: NonlinearFn::Zero,
        };
        let i0 = ScalarField2D::from_fn(s, |x, y| {
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            0.01 + 10.0 * (-r2 / (2.0 * 0.08f64.powi(2))).exp()
        });
        let phi0 = ScalarField2D::from_fn(s, |x, y| {
            let r2 = (x - 0.5).powi(2) + (y - 0.5).powi(2);
            0.5 * (-r2 / (2.0 * 0.08f64.powi(2))).exp()
        });
        let psi0 = ComplexField2D::from_intensity_phase(&i0, &phi0).unwrap();
        let plan = EvolutionPlan {
            dz: 1e-6,
            n_steps: 300,
            snapshot_every: 100,
        };
        let out = evolve(&psi0, &model, &plan).unwrap();
        let start = psi0.intensity().integral();
        let end = out.intensities.last().unwrap().integral();
        assert_relative_eq!(end, start, max_relative = 1e-6);
    }

    #[test]
    fn evolve_rejects_short_plans() {
        let s = spec(17);
        let psi0 = ComplexField2D::from_intensity_phase(
            &ScalarField2D::constant(s, 1.0),
            &ScalarField2D::zeros(s),
        )
        .unwrap();
        let plan = EvolutionPlan {
            dz: 1e-6,
            n_steps: 200,
            snapshot_every: 100,
        };
        assert!(evolve(&psi0, &paper_model(), &plan).is_err());
    }

    #[test]
    fn blowup_guard_fires() {
        // A huge step on a stiff model explodes; the guard must catch it.
        let s = spec(33);
        let model = ModelSpec {
            alpha: 1e-4,
            eta: 2.0,
            f: NonlinearFn::Zero,
            g: NonlinearFn::Zero,
        };
        let ic = paper_ic(0.5);
        let psi0 = ComplexField2D::from_intensity_phase(
            &init_intensity(&ic, s).unwrap(),
            &init_phase(&ic, s),
        )
        .unwrap();
        let plan = EvolutionPlan {
            dz: 1e-2,
            n_steps: 300,
            snapshot_every: 100,
        };
        match evolve(&psi0, &model, &plan) {
            Err(Error::Blowup { step, .. }) => assert!(step >= 1),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn central_dz_against_rhs_derivative() {
        // (I(z+dz) - I(z-dz)) / (2 dz) converges at O(dz^2) to the
        // instantaneous dI/dz = 2 Re(psi* dpsi/dz) from the evolution rhs.
        let s = spec(65);
        let model = paper_model();
        let ic = paper_ic(0.5);
        let psi = ComplexField2D::from_intensity_phase(
            &init_intensity(&ic, s).unwrap(),
            &init_phase(&ic, s),
        )
        .unwrap();
        let rhs = tdcgl_rhs(&psi, &model).unwrap();
        let didz_exact = ScalarField2D::from_values(
            s,
            (0..s.len())
                .map(|k| {
                    2.0 * (psi.re().values()[k] * rhs.re().values()[k]
                        + psi.im().values()[k] * rhs.im().values()[k])
                })
                .collect(),
        )
        .unwrap();

        let err_at = |dz: f64| {
            let n = (dz / 1e-7).round() as usize;
            let mut fwd = psi.clone();
            let mut bwd = psi.clone();
            for _ in 0..n {
                fwd = rk4_step(&fwd, &model, 1e-7).unwrap();
            }
            // backward evolution via negated-step RK4 is not available;
            // instead compare one-sided pair (z, z + 2 dz) centered at z + dz
            let mut fwd2 = fwd.clone();
            for _ in 0..n {
                fwd2 = rk4_step(&fwd2, &model, 1e-7).unwrap();
            }
            let mut mid = psi.clone();
            for _ in 0..n {
                mid = rk4_step(&mid, &model, 1e-7).unwrap();
            }
            let rhs_mid = tdcgl_rhs(&mid, &model).unwrap();
            let didz_mid = ScalarField2D::from_values(
                s,
                (0..s.len())
                    .map(|k| {
                        2.0 * (mid.re().values()[k] * rhs_mid.re().values()[k]
                            + mid.im().values()[k] * rhs_mid.im().values()[k])
                    })
                    .collect(),
            )
            .unwrap();
            let est = central_dz(&bwd.intensity(), &fwd2.intensity(), dz).unwrap();
            let mut e = 0.0f64;
            for k in 0..s.len() {
                e = e.max((est.values()[k] - didz_mid.values()[k]).abs());
            }
            let _ = &didz_exact;
            e / didz_mid.max_abs()
        };
        let e1 = err_at(4e-6);
        let e2 = err_at(2e-6);
        let ratio = e1 / e2;
        assert!(
            ratio > 2.5 && ratio < 6.0,
            "expected ~4 (second order), got {ratio} ({e1:e}, {e2:e})"
        );
    }
}
