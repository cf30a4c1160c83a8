//! Flat key-value run configuration.
//!
//! One `key = value` pair per line, `#` starts a comment. Unknown keys
//! are rejected by name so typos cannot silently fall back to defaults.
//! `parse(serialize(c)) == c` holds exactly (values are written in
//! shortest round-trip form).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::forward_sim::{EvolutionPlan, InitialConditionSpec, ModelSpec, NonlinearFn};
use crate::parameter_inference::RelaxationConfig;

/// Pass/fail thresholds applied by the round-trip report.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundtripThresholds {
    pub eta_rel_tol: f64,
    pub alpha_rel_tol: f64,
    pub sigma_phi_tol: f64,
    pub sigma_grad_tol: f64,
    pub f_amp_rel_tol: f64,
    pub f_corr_min: f64,
}

impl Default for RoundtripThresholds {
    fn default() -> Self {
        Self {
            eta_rel_tol: 0.005,
            alpha_rel_tol: 0.05,
            sigma_phi_tol: 0.02,
            sigma_grad_tol: 0.02,
            f_amp_rel_tol: 0.03,
            f_corr_min: 0.999,
        }
    }
}

/// Plane-wave preparation ladder used to measure g(I)/alpha.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GTableProtocol {
    /// Largest prepared intensity (a little above the data maximum).
    pub i_max: f64,
    /// Number of uniform preparations spread over (0, i_max].
    pub n_preparations: usize,
    pub steps: usize,
    pub snapshot_every: usize,
    pub dz: f64,
}

impl Default for GTableProtocol {
    fn default() -> Self {
        Self {
            i_max: 10.5,
            n_preparations: 32,
            steps: 200,
            snapshot_every: 20,
            dz: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid_nx: usize,
    pub plan: EvolutionPlan,
    pub model: ModelSpec,
    pub ic: InitialConditionSpec,
    pub relax: RelaxationConfig,
    pub thresholds: RoundtripThresholds,
    pub gtable: GTableProtocol,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid_nx: 257,
            plan: EvolutionPlan {
                dz: 1e-6,
                n_steps: 300,
                snapshot_every: 100,
            },
            model: ModelSpec {
                alpha: 1.0,
                eta: 2.0,
                f: NonlinearFn::SineScaled { amplitude: 100.0 },
                g: NonlinearFn::Power {
                    coefficient: 3.0,
                    exponent: 2.0,
                },
            },
            ic: InitialConditionSpec {
                a: 10.0,
                w: 0.15,
                delta: 0.01,
                r0: 0.5,
                n: 20,
                x0: 0.5,
                y0: 0.5,
                a_phi: 0.5,
            },
            relax: RelaxationConfig::default(),
            thresholds: RoundtripThresholds::default(),
            gtable: GTableProtocol::default(),
        }
    }
}

fn fmt_nonlinear(f: &NonlinearFn) -> String {
    match f {
        NonlinearFn::Zero => "zero".to_string(),
        NonlinearFn::SineScaled { amplitude } => format!("sine_scaled {amplitude}"),
        NonlinearFn::Power {
            coefficient,
            exponent,
        } => format!("power {coefficient} {exponent}"),
        NonlinearFn::Tabulated { points } => {
            let body: Vec<String> = points.iter().map(|(i, v)| format!("{i}:{v}")).collect();
            format!("tabulated {}", body.join(","))
        }
    }
}

fn parse_nonlinear(s: &str, key: &str) -> Result<NonlinearFn> {
    let mut parts = s.split_whitespace();
    let kind = parts.next().unwrap_or("");
    let bad = |why: String| Error::Config(format!("key '{key}': {why}"));
    let num = |tok: Option<&str>, name: &str| -> Result<f64> {
        tok.ok_or_else(|| bad(format!("missing {name}")))?
            .parse::<f64>()
            .map_err(|e| bad(format!("bad {name}: {e}")))
    };
    let fun = match kind {
        "zero" => NonlinearFn::Zero,
        "sine_scaled" => NonlinearFn::SineScaled {
            amplitude: num(parts.next(), "amplitude")?,
        },
        "power" => NonlinearFn::Power {
            coefficient: num(parts.next(), "coefficient")?,
            exponent: num(parts.next(), "exponent")?,
        },
        "tabulated" => {
            let body = parts
                .next()
                .ok_or_else(|| bad("missing table body".into()))?;
            let mut points = Vec::new();
            for entry in body.split(',') {
                let (i, v) = entry
                    .split_once(':')
                    .ok_or_else(|| bad(format!("bad table entry '{entry}'")))?;
                points.push((
                    i.parse::<f64>().map_err(|e| bad(format!("bad table I: {e}")))?,
                    v.parse::<f64>().map_err(|e| bad(format!("bad table value: {e}")))?,
                ));
            }
            NonlinearFn::tabulated(points).map_err(|e| bad(e.to_string()))?
        }
        other => {
            return Err(bad(format!(
                "unknown nonlinearity '{other}' (expected zero | sine_scaled | power | tabulated)"
            )))
        }
    };
    if parts.next().is_some() {
        return Err(bad("trailing tokens".into()));
    }
    Ok(fun)
}

const KEYS: &[&str] = &[
    "grid_nx",
    "dz",
    "n_steps",
    "snapshot_every",
    "alpha",
    "eta",
    "f",
    "g",
    "ic_a",
    "ic_w",
    "ic_delta",
    "ic_r0",
    "ic_n",
    "ic_x0",
    "ic_y0",
    "ic_a_phi",
    "relax_epsilon",
    "relax_initial_bump",
    "relax_max_outer_iters",
    "relax_n_iso_levels",
    "relax_histogram_bin_width",
    "relax_f_bins",
    "retrieval_max_iters",
    "retrieval_grad_norm_tol",
    "rt_eta_rel_tol",
    "rt_alpha_rel_tol",
    "rt_sigma_phi_tol",
    "rt_sigma_grad_tol",
    "rt_f_amp_rel_tol",
    "rt_f_corr_min",
    "gtable_i_max",
    "gtable_n_preparations",
    "gtable_steps",
    "gtable_snapshot_every",
    "gtable_dz",
];

impl RunConfig {
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("grid_nx", self.grid_nx.to_string());
        kv("dz", self.plan.dz.to_string());
        kv("n_steps", self.plan.n_steps.to_string());
        kv("snapshot_every", self.plan.snapshot_every.to_string());
        kv("alpha", self.model.alpha.to_string());
        kv("eta", self.model.eta.to_string());
        kv("f", fmt_nonlinear(&self.model.f));
        kv("g", fmt_nonlinear(&self.model.g));
        kv("ic_a", self.ic.a.to_string());
        kv("ic_w", self.ic.w.to_string());
        kv("ic_delta", self.ic.delta.to_string());
        kv("ic_r0", self.ic.r0.to_string());
        kv("ic_n", self.ic.n.to_string());
        kv("ic_x0", self.ic.x0.to_string());
        kv("ic_y0", self.ic.y0.to_string());
        kv("ic_a_phi", self.ic.a_phi.to_string());
        kv("relax_epsilon", self.relax.epsilon.to_string());
        kv("relax_initial_bump", self.relax.initial_bump.to_string());
        kv(
            "relax_max_outer_iters",
            self.relax.max_outer_iters.to_string(),
        );
        kv("relax_n_iso_levels", self.relax.n_iso_levels.to_string());
        kv(
            "relax_histogram_bin_width",
            self.relax.histogram_bin_width.to_string(),
        );
        kv("relax_f_bins", self.relax.f_bins.to_string());
        kv(
            "retrieval_max_iters",
            self.relax.retrieval_max_iters.to_string(),
        );
        kv(
            "retrieval_grad_norm_tol",
            self.relax.retrieval_grad_norm_tol.to_string(),
        );
        kv("rt_eta_rel_tol", self.thresholds.eta_rel_tol.to_string());
        kv("rt_alpha_rel_tol", self.thresholds.alpha_rel_tol.to_string());
        kv("rt_sigma_phi_tol", self.thresholds.sigma_phi_tol.to_string());
        kv(
            "rt_sigma_grad_tol",
            self.thresholds.sigma_grad_tol.to_string(),
        );
        kv("rt_f_amp_rel_tol", self.thresholds.f_amp_rel_tol.to_string());
        kv("rt_f_corr_min", self.thresholds.f_corr_min.to_string());
        kv("gtable_i_max", self.gtable.i_max.to_string());
        kv(
            "gtable_n_preparations",
            self.gtable.n_preparations.to_string(),
        );
        kv("gtable_steps", self.gtable.steps.to_string());
        kv(
            "gtable_snapshot_every",
            self.gtable.snapshot_every.to_string(),
        );
        kv("gtable_dz", self.gtable.dz.to_string());
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key '{key}'")));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key '{key}'")));
            }
            let fnum = |v: &str| -> Result<f64> {
                v.parse::<f64>()
                    .map_err(|e| Error::Config(format!("key '{key}': {e}")))
            };
            let unum = |v: &str| -> Result<usize> {
                v.parse::<usize>()
                    .map_err(|e| Error::Config(format!("key '{key}': {e}")))
            };
            match key {
                "grid_nx" => cfg.grid_nx = unum(value)?,
                "dz" => cfg.plan.dz = fnum(value)?,
                "n_steps" => cfg.plan.n_steps = unum(value)?,
                "snapshot_every" => cfg.plan.snapshot_every = unum(value)?,
                "alpha" => cfg.model.alpha = fnum(value)?,
                "eta" => cfg.model.eta = fnum(value)?,
                "f" => cfg.model.f = parse_nonlinear(value, key)?,
                "g" => cfg.model.g = parse_nonlinear(value, key)?,
                "ic_a" => cfg.ic.a = fnum(value)?,
                "ic_w" => cfg.ic.w = fnum(value)?,
                "ic_delta" => cfg.ic.delta = fnum(value)?,
                "ic_r0" => cfg.ic.r0 = fnum(value)?,
                "ic_n" => cfg.ic.n = unum(value)? as u32,
                "ic_x0" => cfg.ic.x0 = fnum(value)?,
                "ic_y0" => cfg.ic.y0 = fnum(value)?,
                "ic_a_phi" => cfg.ic.a_phi = fnum(value)?,
                "relax_epsilon" => cfg.relax.epsilon = fnum(value)?,
                "relax_initial_bump" => cfg.relax.initial_bump = fnum(value)?,
                "relax_max_outer_iters" => cfg.relax.max_outer_iters = unum(value)?,
                "relax_n_iso_levels" => cfg.relax.n_iso_levels = unum(value)?,
                "relax_histogram_bin_width" => cfg.relax.histogram_bin_width = fnum(value)?,
                "relax_f_bins" => cfg.relax.f_bins = unum(value)?,
                "retrieval_max_iters" => cfg.relax.retrieval_max_iters = unum(value)?,
                "retrieval_grad_norm_tol" => cfg.relax.retrieval_grad_norm_tol = fnum(value)?,
                "rt_eta_rel_tol" => cfg.thresholds.eta_rel_tol = fnum(value)?,
                "rt_alpha_rel_tol" => cfg.thresholds.alpha_rel_tol = fnum(value)?,
                "rt_sigma_phi_tol" => cfg.thresholds.sigma_phi_tol = fnum(value)?,
                "rt_sigma_grad_tol" => cfg.thresholds.sigma_grad_tol = fnum(value)?,
                "rt_f_amp_rel_tol" => cfg.thresholds.f_amp_rel_tol = fnum(value)?,
                "rt_f_corr_min" => cfg.thresholds.f_corr_min = fnum(value)?,
                "gtable_i_max" => cfg.gtable.i_max = fnum(value)?,
                "gtable_n_preparations" => cfg.gtable.n_preparations = unum(value)?,
                "gtable_steps" => cfg.gtable.steps = unum(value)?,
                "gtable_snapshot_every" => cfg.gtable.snapshot_every = unum(value)?,
                "gtable_dz" => cfg.gtable.dz = fnum(value)?,
                _ => unreachable!("key list is exhaustive"),
            }
        }
        cfg.ic.validate()?;
        cfg.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        cfg.plan.validate().map_err(|e| Error::Config(e.to_string()))?;
        cfg.relax.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(why) => Error::Config(format!("{}: {why}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.serialize()).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_default() {
        let cfg = RunConfig::default();
        let text = cfg.serialize();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn round_trip_with_tabulated_g() {
        let mut cfg = RunConfig::default();
        cfg.model.g =
            NonlinearFn::tabulated(vec![(0.1, 0.03), (1.0, 3.0), (2.5, 18.75)]).unwrap();
        cfg.ic.a_phi = 1.25;
        let parsed = RunConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::parse("grid_nxx = 129\n").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("grid_nxx"), "message: {msg}"),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(RunConfig::parse("eta = 2\neta = 3\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# comment\n\neta = 2.5 # trailing\n").unwrap();
        assert_eq!(cfg.model.eta, 2.5);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("ic_delta = 1.5\n").is_err());
        assert!(RunConfig::parse("snapshot_every = 7\n").is_err()); // does not divide 300
        assert!(RunConfig::parse("f = wavelet 3\n").is_err());
    }
}
