//! Variable-coefficient elliptic solver for the continuity equation.
//!
//! Solves `lap(u) + (grad I / I) . grad u = rhs` with homogeneous Neumann
//! boundary conditions by rewriting it in self-adjoint flux form,
//! `div(I grad u) = I * rhs`. The discrete operator uses face-averaged
//! coefficients and zero-flux boundary faces, which makes it symmetric
//! negative-semidefinite with the constants as its null space.
//!
//! The pure-Neumann problem is solvable only if the right side is
//! orthogonal to constants; the required shift (the I-weighted mean of
//! `rhs`) is subtracted and reported. Solutions carry the zero-mean gauge.
//!
//! The solve itself is conjugate gradient preconditioned by one geometric
//! multigrid V-cycle (red-black Gauss-Seidel smoothing, full-weighting
//! restriction, bilinear prolongation). Plain V-cycles already converge
//! fast for smooth coefficients; the CG wrapper keeps convergence robust
//! when the coefficient spans many orders of magnitude.

use crate::error::{Error, Result};
use crate::field_grid::{GridSpec, ScalarField2D};

const MAX_CG_ITERS: usize = 200;
const RELATIVE_RESIDUAL_TARGET: f64 = 1e-8;
const ABSOLUTE_RESIDUAL_FLOOR: f64 = 1e-12;

struct Level {
    n: usize,
    /// Face coefficient between (i,j) and (i+1,j); (n-1) x n, row-major in j.
    face_x: Vec<f64>,
    /// Face coefficient between (i,j) and (i,j+1); n x (n-1).
    face_y: Vec<f64>,
    /// Sum of adjacent face coefficients per cell.
    diag: Vec<f64>,
}

impl Level {
    fn from_coeff(n: usize, coeff: &[f64]) -> Self {
        let idx = |i: usize, j: usize| j * n + i;
        let mut face_x = vec![0.0; (n - 1) * n];
        let mut face_y = vec![0.0; n * (n - 1)];
        for j in 0..n {
            for i in 0..n - 1 {
                face_x[j * (n - 1) + i] = 0.5 * (coeff[idx(i, j)] + coeff[idx(i + 1, j)]);
            }
        }
        for j in 0..n - 1 {
            for i in 0..n {
                face_y[j * n + i] = 0.5 * (coeff[idx(i, j)] + coeff[idx(i, j + 1)]);
            }
        }
        let mut diag = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let mut d = 0.0;
                if i > 0 {
                    d += face_x[j * (n - 1) + i - 1];
                }
                if i < n - 1 {
                    d += face_x[j * (n - 1) + i];
                }
                if j > 0 {
                    d += face_y[(j - 1) * n + i];
                }
                if j < n - 1 {
                    d += face_y[j * n + i];
                }
                diag[j * n + i] = d;
            }
        }
        Self {
            n,
            face_x,
            face_y,
            diag,
        }
    }

    /// out = -div(I grad u) * h^2 (positive-semidefinite convention).
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let mut flux = 0.0;
                if i > 0 {
                    flux += self.face_x[j * (n - 1) + i - 1] * (u[k - 1] - u[k]);
                }
                if i < n - 1 {
                    flux += self.face_x[j * (n - 1) + i] * (u[k + 1] - u[k]);
                }
                if j > 0 {
                    flux += self.face_y[(j - 1) * n + i] * (u[k - n] - u[k]);
                }
                if j < n - 1 {
                    flux += self.face_y[j * n + i] * (u[k + n] - u[k]);
                }
                out[k] = -flux;
            }
        }
    }

    /// One red-black Gauss-Seidel sweep on A u = b (A from `apply`).
    fn smooth(&self, u: &mut [f64], b: &[f64], reverse_colors: bool) {
        let n = self.n;
        let colors: [usize; 2] = if reverse_colors { [1, 0] } else { [0, 1] };
        for color in colors {
            for j in 0..n {
                let start = (color + j) % 2;
                let mut i = start;
                while i < n {
                    let k = j * n + i;
                    let d = self.diag[k];
                    if d > 0.0 {
                        let mut nb = 0.0;
                        if i > 0 {
                            nb += self.face_x[j * (n - 1) + i - 1] * u[k - 1];
                        }
                        if i < n - 1 {
                            nb += self.face_x[j * (n - 1) + i] * u[k + 1];
                        }
                        if j > 0 {
                            nb += self.face_y[(j - 1) * n + i] * u[k - n];
                        }
                        if j < n - 1 {
                            nb += self.face_y[j * n + i] * u[k + n];
                        }
                        // A u = b with (A u)_k = d u_k - nb
                        u[k] = (nb + b[k]) / d;
                    }
                    i += 2;
                }
            }
        }
    }

    fn residual(&self, u: &[f64], b: &[f64], r: &mut [f64]) {
        self.apply(u, r);
        for k in 0..r.len() {
            r[k] = b[k] - r[k];
        }
    }
}

/// Reusable solver for a fixed coefficient field.
pub struct EllipticSolver {
    spec: GridSpec,
    levels: Vec<Level>,
    coeff: Vec<f64>,
    coeff_sum: f64,
}

/// Solution plus the compatibility shift that was subtracted from `rhs`.
pub struct EllipticSolution {
    pub u: ScalarField2D,
    /// I-weighted mean of the raw right side (the solvability correction).
    pub compatibility_shift: f64,
    pub cycles: usize,
}

impl EllipticSolver {
    pub fn new(intensity: &ScalarField2D) -> Result<Self> {
        let min = intensity.min();
        if !(min > 0.0) {
            return Err(Error::NonpositiveIntensity { min });
        }
        if !intensity.is_finite() {
            return Err(Error::NonFinite("elliptic coefficient"));
        }
        let spec = intensity.spec();
        let mut levels = Vec::new();
        let mut n = spec.nx();
        let mut coeff = intensity.values().to_vec();
        loop {
            levels.push(Level::from_coeff(n, &coeff));
            if (n - 1) % 2 != 0 || (n - 1) / 2 + 1 < 5 {
                break;
            }
            // coarsen coefficient by injection (it is smooth)
            let nc = (n - 1) / 2 + 1;
            let mut coarse = vec![0.0; nc * nc];
            for j in 0..nc {
                for i in 0..nc {
                    coarse[j * nc + i] = coeff[(2 * j) * n + 2 * i];
                }
            }
            coeff = coarse;
            n = nc;
        }
        Ok(Self {
            spec,
            levels,
            coeff: intensity.values().to_vec(),
            coeff_sum: intensity.values().iter().sum(),
        })
    }

    /// Residual restriction as the exact transpose of the bilinear
    /// prolongation. Interior coarse rows collect total weight 4, which
    /// matches the h -> 2h residual scaling of the h^2-folded operator;
    /// boundary rows automatically collect the half/quarter weights their
    /// Neumann cell volumes require. Keeping R = P^T keeps the V-cycle
    /// symmetric so it can precondition CG.
    fn restrict(fine: &[f64], nf: usize, coarse: &mut [f64], nc: usize) {
        coarse.iter_mut().for_each(|v| *v = 0.0);
        for jf in 0..nf {
            for if_ in 0..nf {
                let ic = if_ / 2;
                let jc = jf / 2;
                let fx = (if_ % 2) as f64 * 0.5;
                let fy = (jf % 2) as f64 * 0.5;
                let i1 = (ic + 1).min(nc - 1);
                let j1 = (jc + 1).min(nc - 1);
                let v = fine[jf * nf + if_];
                coarse[jc * nc + ic] += v * (1.0 - fx) * (1.0 - fy);
                coarse[jc * nc + i1] += v * fx * (1.0 - fy);
                coarse[j1 * nc + ic] += v * (1.0 - fx) * fy;
                coarse[j1 * nc + i1] += v * fx * fy;
            }
        }
    }

    /// Bilinear prolongation, adding into `fine`.
    fn prolong_add(coarse: &[f64], nc: usize, fine: &mut [f64], nf: usize) {
        for jf in 0..nf {
            for if_ in 0..nf {
                let ic = if_ / 2;
                let jc = jf / 2;
                let fx = (if_ % 2) as f64 * 0.5;
                let fy = (jf % 2) as f64 * 0.5;
                let i1 = (ic + 1).min(nc - 1);
                let j1 = (jc + 1).min(nc - 1);
                let v = coarse[jc * nc + ic] * (1.0 - fx) * (1.0 - fy)
                    + coarse[jc * nc + i1] * fx * (1.0 - fy)
                    + coarse[j1 * nc + ic] * (1.0 - fx) * fy
                    + coarse[j1 * nc + i1] * fx * fy;
                fine[jf * nf + if_] += v;
            }
        }
    }

    fn v_cycle(&self, level: usize, u: &mut [f64], b: &[f64]) {
        let lv = &self.levels[level];
        if level == self.levels.len() - 1 {
            // coarsest: relax hard, then remove the null-space component
            for _ in 0..60 {
                lv.smooth(u, b, false);
                lv.smooth(u, b, true);
            }
            remove_mean(u);
            return;
        }
        for _ in 0..2 {
            lv.smooth(u, b, false);
        }
        let mut r = vec![0.0; u.len()];
        lv.residual(u, b, &mut r);
        let nc = self.levels[level + 1].n;
        let mut bc = vec![0.0; nc * nc];
        Self::restrict(&r, lv.n, &mut bc, nc);
        remove_mean(&mut bc);
        let mut ec = vec![0.0; nc * nc];
        self.v_cycle(level + 1, &mut ec, &bc);
        Self::prolong_add(&ec, nc, u, lv.n);
        for _ in 0..2 {
            lv.smooth(u, b, true);
        }
    }

    /// Solve for `u` with `rhs` in operator units (`lap u + (grad I/I).grad u`).
    pub fn solve(&self, rhs: &ScalarField2D) -> Result<ScalarField2D> {
        Ok(self.solve_with_diagnostics(rhs)?.u)
    }

    pub fn solve_with_diagnostics(&self, rhs: &ScalarField2D) -> Result<EllipticSolution> {
        if rhs.spec() != self.spec {
            return Err(Error::SpecMismatch(format!(
                "elliptic rhs {} vs coefficient {}",
                rhs.spec().nx(),
                self.spec.nx()
            )));
        }
        if !rhs.is_finite() {
            return Err(Error::NonFinite("elliptic rhs"));
        }
        let n = self.spec.nx();
        let len = n * n;
        let h2 = self.spec.h() * self.spec.h();

        // compatibility: subtract the I-weighted mean of rhs
        let weighted: f64 = rhs
            .values()
            .iter()
            .zip(&self.coeff)
            .map(|(&r, &c)| r * c)
            .sum();
        let shift = weighted / self.coeff_sum;
        let max_rhs = rhs
            .values()
            .iter()
            .map(|r| (r - shift).abs())
            .fold(0.0f64, f64::max);
        let target = (RELATIVE_RESIDUAL_TARGET * max_rhs).max(ABSOLUTE_RESIDUAL_FLOOR);
        if max_rhs == 0.0 {
            return Ok(EllipticSolution {
                u: ScalarField2D::zeros(self.spec),
                compatibility_shift: shift,
                cycles: 0,
            });
        }

        // b = -I (rhs - shift) h^2 matches the positive-semidefinite apply()
        let mut b: Vec<f64> = rhs
            .values()
            .iter()
            .zip(&self.coeff)
            .map(|(&r, &c)| -(r - shift) * c * h2)
            .collect();
        remove_mean(&mut b);

        // Flexible CG preconditioned by one V-cycle. The flexible beta
        // (Polak-Ribiere form) tolerates the slight asymmetries the
        // coarse-level projections introduce; a stalled search direction
        // triggers a restart from the current iterate.
        let lv0 = &self.levels[0];
        let mut u = vec![0.0; len];
        let mut r = b.clone();
        let mut z = vec![0.0; len];
        let mut ap = vec![0.0; len];
        let mut cycles = 0usize;
        let residual_ok = |r: &[f64]| -> (bool, f64) {
            // residual in rhs units: (b - A u) / (I h^2)
            let mut worst = 0.0f64;
            for k in 0..len {
                worst = worst.max((r[k] / (self.coeff[k] * h2)).abs());
            }
            (worst <= target, worst)
        };

        let mut converged = false;
        let mut worst = f64::INFINITY;
        let mut best = f64::INFINITY;
        let mut since_best = 0usize;
        self.precondition(&r, &mut z);
        cycles += 1;
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while cycles < MAX_CG_ITERS {
            let (ok, w) = residual_ok(&r);
            worst = w;
            if ok {
                converged = true;
                break;
            }
            if w < 0.9 * best {
                best = w;
                since_best = 0;
            } else {
                since_best += 1;
            }
            lv0.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) || since_best >= 12 || !rz.is_finite() {
                // restart the Krylov space from the current iterate
                self.precondition(&r, &mut z);
                cycles += 1;
                p.copy_from_slice(&z);
                rz = dot(&r, &z);
                since_best = 0;
                lv0.apply(&p, &mut ap);
                if !(dot(&p, &ap) > 0.0) {
                    break;
                }
            }
            let alpha = rz / dot(&p, &ap);
            for k in 0..len {
                u[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            remove_mean(&mut r);
            self.precondition(&r, &mut z);
            cycles += 1;
            let rz_new = dot(&r, &z);
            // flexible (Polak-Ribiere) beta: z.(r_new - r_old)/rz_old
            // with r_new - r_old = -alpha * ap
            let beta = -alpha * dot(&z, &ap) / rz;
            rz = rz_new;
            let beta = if beta.is_finite() { beta.max(0.0) } else { 0.0 };
            for k in 0..len {
                p[k] = z[k] + beta * p[k];
            }
        }
        if !converged {
            let (ok, w) = residual_ok(&r);
            if !ok {
                return Err(Error::SolverStalled {
                    cycles,
                    residual: w,
                    target,
                });
            }
            worst = w;
        }
        let _ = worst;
        remove_mean(&mut u);
        Ok(EllipticSolution {
            u: ScalarField2D::from_values(self.spec, u)?,
            compatibility_shift: shift,
            cycles,
        })
    }

    /// One symmetric V-cycle from a zero initial guess, mean-projected.
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.iter_mut().for_each(|v| *v = 0.0);
        self.v_cycle(0, z, r);
        remove_mean(z);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// One-shot convenience wrapper: build the hierarchy and solve.
pub fn solve_elliptic(intensity: &ScalarField2D, rhs: &ScalarField2D) -> Result<ScalarField2D> {
    EllipticSolver::new(intensity)?.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_grid::GridSpec;
    use std::f64::consts::PI;

    fn spec(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    // Manufactured solution satisfying zero Neumann on the unit square.
    fn u_star(x: f64, y: f64) -> f64 {
        (PI * x).cos() * (PI * y).cos()
    }
    fn u_star_grad(x: f64, y: f64) -> (f64, f64) {
        (
            -PI * (PI * x).sin() * (PI * y).cos(),
            -PI * (PI * x).cos() * (PI * y).sin(),
        )
    }
    fn u_star_lap(x: f64, y: f64) -> f64 {
        -2.0 * PI * PI * u_star(x, y)
    }

    fn max_err_vs_star(u: &ScalarField2D) -> f64 {
        let s = u.spec();
        // compare after aligning means (gauge freedom)
        let star = ScalarField2D::from_fn(s, u_star);
        let offset = star.mean();
        let mut e = 0.0f64;
        for iy in 0..s.ny() {
            for ix in 0..s.nx() {
                let want = star.get(ix, iy) - offset;
                e = e.max((u.get(ix, iy) - want).abs());
            }
        }
        e
    }

    #[test]
    fn zero_rhs_gives_zero_solution() {
        let s = spec(65);
        let i = ScalarField2D::constant(s, 2.0);
        let u = solve_elliptic(&i, &ScalarField2D::zeros(s)).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn constant_coefficient_poisson_manufactured_solution() {
        let err = |n: usize| {
            let s = spec(n);
            let i = ScalarField2D::constant(s, 1.0);
            let rhs = ScalarField2D::from_fn(s, u_star_lap);
            let sol = solve_elliptic(&i, &rhs).unwrap();
            assert!(sol.mean().abs() < 1e-12, "zero-mean gauge violated");
            max_err_vs_star(&sol)
        };
        let e1 = err(33);
        let e2 = err(65);
        let ratio = e1 / e2;
        assert!(
            (ratio - 4.0).abs() < 0.6,
            "expected O(h^2): ratio {ratio} ({e1:e}, {e2:e})"
        );
    }

    #[test]
    fn variable_coefficient_manufactured_solution() {
        // I = 1 + 2*gaussian; rhs = lap u* + (grad I / I) . grad u* analytic.
        let w = 0.2f64;
        let gauss =
            move |x: f64, y: f64| (-((x - 0.4).powi(2) + (y - 0.6).powi(2)) / (2.0 * w * w)).exp();
        let i_fn = move |x: f64, y: f64| 1.0 + 2.0 * gauss(x, y);
        let gi = move |x: f64, y: f64| {
            let g = gauss(x, y);
            (
                -2.0 * (x - 0.4) / (w * w) * g,
                -2.0 * (y - 0.6) / (w * w) * g,
            )
        };
        let err = |n: usize| {
            let s = spec(n);
            let i = ScalarField2D::from_fn(s, i_fn);
            let rhs = ScalarField2D::from_fn(s, |x, y| {
                let (gx, gy) = gi(x, y);
                let (ux, uy) = u_star_grad(x, y);
                u_star_lap(x, y) + (gx * ux + gy * uy) / i_fn(x, y)
            });
            let sol = solve_elliptic(&i, &rhs).unwrap();
            max_err_vs_star(&sol)
        };
        let e1 = err(33);
        let e2 = err(65);
        let ratio = e1 / e2;
        assert!(
            (ratio - 4.0).abs() < 0.8,
            "expected O(h^2): ratio {ratio} ({e1:e}, {e2:e})"
        );
    }

    #[test]
    fn residual_contract_is_met() {
        // discrete residual of the flux-form system, in rhs units
        let s = spec(129);
        let i = ScalarField2D::from_fn(s, |x, y| {
            1.0 + 10.0 * (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / 0.02).exp()
        });
        let rhs = ScalarField2D::from_fn(s, |x, y| (3.0 * x).sin() * (2.0 * y).cos());
        let solver = EllipticSolver::new(&i).unwrap();
        let sol = solver.solve_with_diagnostics(&rhs).unwrap();

        let lv = &solver.levels[0];
        let h2 = s.h() * s.h();
        let shifted: Vec<f64> = rhs
            .values()
            .iter()
            .zip(i.values())
            .map(|(&r, &c)| -(r - sol.compatibility_shift) * c * h2)
            .collect();
        let mut au = vec![0.0; s.len()];
        lv.apply(sol.u.values(), &mut au);
        let mut worst = 0.0f64;
        let max_rhs = rhs
            .values()
            .iter()
            .map(|r| (r - sol.compatibility_shift).abs())
            .fold(0.0f64, f64::max);
        for k in 0..s.len() {
            let res = (shifted[k] - au[k] - (shifted.iter().sum::<f64>() / s.len() as f64))
                / (i.values()[k] * h2);
            worst = worst.max(res.abs());
        }
        assert!(
            worst <= 1.1e-8 * max_rhs,
            "residual {worst:e} vs bound {:e}",
            1e-8 * max_rhs
        );
    }

    #[test]
    fn huge_coefficient_ratio_still_converges() {
        // ring coefficient decaying to ~1e-8 of its peak in the corners
        let s = spec(129);
        let i = ScalarField2D::from_fn(s, |x, y| {
            let r = (x * x + y * y).sqrt();
            10.0 * (-((r - 0.5) / 0.12f64).powi(2) / 2.0).exp() + 1e-7
        });
        let rhs = ScalarField2D::from_fn(s, |x, y| (2.0 * PI * x).cos() + y);
        let sol = solve_elliptic(&i, &rhs);
        assert!(sol.is_ok(), "solver failed: {:?}", sol.err());
    }

    #[test]
    fn rejects_nonpositive_coefficient() {
        let s = spec(17);
        let mut i = ScalarField2D::constant(s, 1.0);
        i.set(3, 3, 0.0);
        assert!(matches!(
            EllipticSolver::new(&i),
            Err(Error::NonpositiveIntensity { .. })
        ));
    }

    #[test]
    fn compatibility_shift_reported() {
        // rhs with a nonzero I-weighted mean must report that mean
        let s = spec(33);
        let i = ScalarField2D::constant(s, 2.0);
        let rhs = ScalarField2D::constant(s, 5.0);
        let solver = EllipticSolver::new(&i).unwrap();
        let sol = solver.solve_with_diagnostics(&rhs).unwrap();
        assert!((sol.compatibility_shift - 5.0).abs() < 1e-12);
        // the projected problem is the zero problem
        assert!(sol.u.max_abs() < 1e-12);
    }
}
