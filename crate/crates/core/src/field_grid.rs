//! Uniform-grid fields and finite-difference operators shared by all
//! other modules.
//!
//! Fields live on the unit square `[0,1] x [0,1]` sampled on an `nx` by
//! `nx` vertex grid with spacing `h = 1/(nx-1)`. Storage is row-major:
//! index `(ix, iy)` maps to `x = ix*h`, `y = iy*h` and flat index
//! `iy*nx + ix`.
//!
//! All derivative operators are second order in the interior (central
//! differences, 5-point Laplacian) and use one-sided second-order
//! stencils on the edges so every operator is defined on the full grid.

use crate::error::{Error, Result};

/// Square uniform grid over the unit square.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct GridSpec {
    nx: usize,
}

impl GridSpec {
    /// One-sided second-derivative stencils need four points per side.
    pub const MIN_POINTS: usize = 5;

    pub fn new(nx: usize) -> Result<Self> {
        if nx < Self::MIN_POINTS {
            return Err(Error::GridTooSmall {
                nx,
                min: Self::MIN_POINTS,
            });
        }
        Ok(Self { nx })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.nx
    }

    /// Grid spacing; `h * (nx - 1) = 1` exactly.
    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / (self.nx - 1) as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.nx
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.nx);
        iy * self.nx + ix
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 * self.h()
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        iy as f64 * self.h()
    }
}

/// Real-valued samples on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField2D {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
        }
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        Self {
            spec,
            values: vec![c; spec.len()],
        }
    }

    /// Sample `f(x, y)` at every grid point.
    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = spec.nx();
        let mut values = Vec::with_capacity(spec.len());
        for iy in 0..n {
            let y = spec.y(iy);
            for ix in 0..n {
                values.push(f(spec.x(ix), y));
            }
        }
        Self { spec, values }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::SpecMismatch(format!(
                "expected {} values for a {0}x{0} grid, got {1}",
                spec.nx(),
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("scalar field values"));
        }
        Ok(Self { spec, values })
    }

    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.spec.idx(ix, iy)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, v: f64) {
        let i = self.spec.idx(ix, iy);
        self.values[i] = v;
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            spec: self.spec,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two same-spec fields.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_same_spec(self, other, "zip_with")?;
        Ok(Self {
            spec: self.spec,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Subtract the mean in place (zero-mean gauge).
    pub fn remove_mean(&mut self) {
        let m = self.mean();
        for v in &mut self.values {
            *v -= m;
        }
    }

    /// Grid-sum quadrature of the field: `sum(v) * h^2`.
    pub fn integral(&self) -> f64 {
        let h = self.spec.h();
        self.values.iter().sum::<f64>() * h * h
    }

    /// Bilinear interpolation at `(x, y)`; both must lie in `[0, 1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Result<f64> {
        let eps = 1e-12;
        if !(-eps..=1.0 + eps).contains(&x) || !(-eps..=1.0 + eps).contains(&y) {
            return Err(Error::InvalidParameter {
                what: "sample point",
                why: format!("({x}, {y}) outside the unit square"),
            });
        }
        let n = self.spec.nx();
        let h = self.spec.h();
        let fx = (x / h).clamp(0.0, (n - 1) as f64);
        let fy = (y / h).clamp(0.0, (n - 1) as f64);
        let ix = (fx as usize).min(n - 2);
        let iy = (fy as usize).min(n - 2);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let f00 = self.get(ix, iy);
        let f10 = self.get(ix + 1, iy);
        let f01 = self.get(ix, iy + 1);
        let f11 = self.get(ix + 1, iy + 1);
        Ok(f00 * (1.0 - tx) * (1.0 - ty)
            + f10 * tx * (1.0 - ty)
            + f01 * (1.0 - tx) * ty
            + f11 * tx * ty)
    }
}

pub(crate) fn check_same_spec(a: &ScalarField2D, b: &ScalarField2D, op: &str) -> Result<()> {
    if a.spec() != b.spec() {
        return Err(Error::SpecMismatch(format!(
            "{op}: {} vs {} points per side",
            a.spec().nx(),
            b.spec().nx()
        )));
    }
    Ok(())
}

/// Complex wavefield as paired real/imaginary scalar fields.
#[derive(Clone, Debug)]
pub struct ComplexField2D {
    re: ScalarField2D,
    im: ScalarField2D,
}

impl ComplexField2D {
    pub fn new(re: ScalarField2D, im: ScalarField2D) -> Result<Self> {
        check_same_spec(&re, &im, "complex field")?;
        Ok(Self { re, im })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            re: ScalarField2D::zeros(spec),
            im: ScalarField2D::zeros(spec),
        }
    }

    /// Build `sqrt(I) * exp(i*phi)` from intensity and phase.
    pub fn from_intensity_phase(intensity: &ScalarField2D, phase: &ScalarField2D) -> Result<Self> {
        check_same_spec(intensity, phase, "from_intensity_phase")?;
        if intensity.min() < 0.0 {
            return Err(Error::NonpositiveIntensity {
                min: intensity.min(),
            });
        }
        let re = intensity.zip_with(phase, |i, p| i.sqrt() * p.cos())?;
        let im = intensity.zip_with(phase, |i, p| i.sqrt() * p.sin())?;
        Ok(Self { re, im })
    }

    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.re.spec()
    }

    #[inline]
    pub fn re(&self) -> &ScalarField2D {
        &self.re
    }

    #[inline]
    pub fn im(&self) -> &ScalarField2D {
        &self.im
    }

    /// `I = |psi|^2`.
    pub fn intensity(&self) -> ScalarField2D {
        self.re
            .zip_with(&self.im, |a, b| a * a + b * b)
            .expect("re/im share a spec")
    }

    /// Principal-value phase `atan2(im, re)`.
    pub fn phase(&self) -> ScalarField2D {
        self.im.zip_with(&self.re, |b, a| b.atan2(a)).expect("spec")
    }

    pub fn max_abs(&self) -> f64 {
        self.re
            .values()
            .iter()
            .zip(self.im.values())
            .fold(0.0f64, |m, (&a, &b)| m.max((a * a + b * b).sqrt()))
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// 5-point Laplacian, one-sided second-order stencils on the edges.
pub fn laplacian(f: &ScalarField2D) -> Result<ScalarField2D> {
    let spec = f.spec();
    let n = spec.nx();
    let h2 = spec.h() * spec.h();
    let v = f.values();
    let mut out = vec![0.0; spec.len()];

    // Second derivative along one axis at position i of a line of length n.
    // One-sided 4-point stencils at the ends are O(h^2) accurate. Written
    // in difference form so constants give exact zeros.
    #[inline]
    fn d2(line: impl Fn(usize) -> f64, i: usize, n: usize) -> f64 {
        if i == 0 {
            2.0 * (line(0) - line(1)) - 3.0 * (line(1) - line(2)) + (line(2) - line(3))
        } else if i == n - 1 {
            2.0 * (line(n - 1) - line(n - 2)) - 3.0 * (line(n - 2) - line(n - 3))
                + (line(n - 3) - line(n - 4))
        } else {
            (line(i - 1) - line(i)) + (line(i + 1) - line(i))
        }
    }

    for iy in 0..n {
        for ix in 0..n {
            let dxx = d2(|i| v[spec.idx(i, iy)], ix, n);
            let dyy = d2(|j| v[spec.idx(ix, j)], iy, n);
            out[spec.idx(ix, iy)] = (dxx + dyy) / h2;
        }
    }
    ScalarField2D::from_values(spec, out)
}

// First derivative in difference form (exact zero on constants).
#[inline]
fn d1(line: impl Fn(usize) -> f64, i: usize, n: usize, h: f64) -> f64 {
    if i == 0 {
        (3.0 * (line(1) - line(0)) + (line(1) - line(2))) / (2.0 * h)
    } else if i == n - 1 {
        (3.0 * (line(n - 1) - line(n - 2)) + (line(n - 3) - line(n - 2))) / (2.0 * h)
    } else {
        (line(i + 1) - line(i - 1)) / (2.0 * h)
    }
}

/// Central-difference gradient `(df/dx, df/dy)`, one-sided at the edges.
pub fn gradient(f: &ScalarField2D) -> Result<(ScalarField2D, ScalarField2D)> {
    let spec = f.spec();
    let n = spec.nx();
    let h = spec.h();
    let v = f.values();
    let mut gx = vec![0.0; spec.len()];
    let mut gy = vec![0.0; spec.len()];
    for iy in 0..n {
        for ix in 0..n {
            let k = spec.idx(ix, iy);
            gx[k] = d1(|i| v[spec.idx(i, iy)], ix, n, h);
            gy[k] = d1(|j| v[spec.idx(ix, j)], iy, n, h);
        }
    }
    Ok((
        ScalarField2D::from_values(spec, gx)?,
        ScalarField2D::from_values(spec, gy)?,
    ))
}

/// Divergence of a vector field, using the same first-derivative stencils
/// as [`gradient`] so the pair is adjoint-consistent in the interior.
pub fn divergence(vx: &ScalarField2D, vy: &ScalarField2D) -> Result<ScalarField2D> {
    check_same_spec(vx, vy, "divergence")?;
    let spec = vx.spec();
    let n = spec.nx();
    let h = spec.h();
    let (ax, ay) = (vx.values(), vy.values());
    let mut out = vec![0.0; spec.len()];
    for iy in 0..n {
        for ix in 0..n {
            let k = spec.idx(ix, iy);
            out[k] = d1(|i| ax[spec.idx(i, iy)], ix, n, h) + d1(|j| ay[spec.idx(ix, j)], iy, n, h);
        }
    }
    ScalarField2D::from_values(spec, out)
}

/// `(f_plus - f_minus) / (2 dz)`: centered z-derivative between two planes
/// a distance `2 dz` apart.
pub fn central_dz(
    f_minus: &ScalarField2D,
    f_plus: &ScalarField2D,
    dz: f64,
) -> Result<ScalarField2D> {
    if dz <= 0.0 || !dz.is_finite() {
        return Err(Error::InvalidParameter {
            what: "dz",
            why: format!("must be positive, got {dz}"),
        });
    }
    f_plus.zip_with(f_minus, |p, m| (p - m) / (2.0 * dz))
}

/// Closed sampling contour on the circle of radius 1/2 inscribed in the
/// unit square, with uniform arc-length weights.
#[derive(Clone, Debug)]
pub struct BoundaryContour {
    spec: GridSpec,
    points: Vec<(f64, f64)>,
    normals: Vec<(f64, f64)>,
    dl: f64,
}

impl BoundaryContour {
    /// Standard resolution: `4 * (nx - 1)` equally spaced points.
    pub fn inscribed_circle(spec: GridSpec) -> Self {
        Self::inscribed_circle_with_points(spec, 4 * (spec.nx() - 1))
    }

    pub fn inscribed_circle_with_points(spec: GridSpec, n_points: usize) -> Self {
        let n_points = n_points.max(8);
        let r = 0.5;
        let mut points = Vec::with_capacity(n_points);
        let mut normals = Vec::with_capacity(n_points);
        for k in 0..n_points {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n_points as f64;
            let (s, c) = theta.sin_cos();
            points.push((0.5 + r * c, 0.5 + r * s));
            normals.push((c, s));
        }
        // total arc length = 2*pi*r = pi
        let dl = std::f64::consts::PI / n_points as f64;
        Self {
            spec,
            points,
            normals,
            dl,
        }
    }

    #[inline]
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    #[inline]
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    #[inline]
    pub fn dl(&self) -> f64 {
        self.dl
    }

    pub fn arc_length(&self) -> f64 {
        self.dl * self.points.len() as f64
    }
}

/// Net outward flux of the phase gradient through the contour:
/// `N = sum grad(phase) . n dl`, the gradient sampled by bilinear
/// interpolation of the finite-difference gradient fields.
pub fn boundary_flux(phase: &ScalarField2D, contour: &BoundaryContour) -> Result<f64> {
    if phase.spec() != contour.spec() {
        return Err(Error::SpecMismatch(format!(
            "boundary_flux: field {} vs contour {}",
            phase.spec().nx(),
            contour.spec().nx()
        )));
    }
    if !phase.is_finite() {
        return Err(Error::NonFinite("phase field"));
    }
    let (gx, gy) = gradient(phase)?;
    let mut acc = 0.0;
    for ((x, y), (nx, ny)) in contour.points.iter().zip(&contour.normals) {
        let gxs = gx.sample_bilinear(*x, *y)?;
        let gys = gy.sample_bilinear(*x, *y)?;
        acc += (gxs * nx + gys * ny) * contour.dl;
    }
    Ok(acc)
}
