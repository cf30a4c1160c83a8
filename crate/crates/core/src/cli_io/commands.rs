//! The simulate / infer / roundtrip / sweep pipeline stages.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::dissipation::measure_g_table;
use crate::error::{Error, Result};
use crate::field_grid::{ComplexField2D, GridSpec};
use crate::forward_sim::{evolve, init_intensity, init_phase, IntensityTriple, NonlinearFn};
use crate::parameter_inference::{infer, InferenceResult, RelaxationTrace};
use crate::phase_retrieval::{
    retrieve_phase, rms_phase_error, rms_phase_gradient_error, PhaseRetrievalConfig,
};

use super::config::RunConfig;
use super::snapshot::{read_snapshot, write_snapshot, Snapshot, SnapshotKind};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[derive(Debug)]
pub struct SimulateReport {
    pub intensity_files: Vec<PathBuf>,
    pub phase_files: Vec<PathBuf>,
    pub manifest_path: PathBuf,
    pub dz_plane: f64,
}

/// Forward-evolve the configured model and write intensity + exact-phase
/// snapshots plus a manifest. Plane labels follow the storage convention:
/// stored planes are z0, z2, z4, ...; the odd midplanes are where the
/// phase is later retrieved.
pub fn cmd_simulate(config_path: &Path, out_dir: &Path) -> Result<SimulateReport> {
    let cfg = RunConfig::load(config_path)?;
    ensure_dir(out_dir)?;
    let grid = GridSpec::new(cfg.grid_nx)?;
    let intensity = init_intensity(&cfg.ic, grid)?;
    let phase = init_phase(&cfg.ic, grid);
    let psi0 = ComplexField2D::from_intensity_phase(&intensity, &phase)?;
    let out = evolve(&psi0, &cfg.model, &cfg.plan)?;

    let mut intensity_files = Vec::new();
    let mut phase_files = Vec::new();
    for (k, z) in out.z_positions.iter().enumerate() {
        let label = 2 * k;
        let ipath = out_dir.join(format!("intensity_z{label}.snap"));
        write_snapshot(
            &ipath,
            &Snapshot::scalar(SnapshotKind::Intensity, *z, out.intensities[k].clone()),
        )?;
        intensity_files.push(ipath);
        let ppath = out_dir.join(format!("phase_z{label}.snap"));
        write_snapshot(
            &ppath,
            &Snapshot::scalar(SnapshotKind::Phase, *z, out.phases[k].clone()),
        )?;
        phase_files.push(ppath);
    }

    let manifest_path = out_dir.join("manifest.txt");
    let mut manifest = String::new();
    manifest.push_str("# simulation manifest (ground truth; not read by inference)\n");
    manifest.push_str(&format!("dz_plane = {}\n", cfg.plan.dz_plane()));
    manifest.push_str(&format!("grid_nx = {}\n", cfg.grid_nx));
    manifest.push_str(&format!("alpha = {}\n", cfg.model.alpha));
    manifest.push_str(&format!("eta = {}\n", cfg.model.eta));
    for (k, path) in intensity_files.iter().enumerate() {
        manifest.push_str(&format!(
            "intensity_z{} = {}\n",
            2 * k,
            path.file_name().unwrap().to_string_lossy()
        ));
    }
    for (k, path) in phase_files.iter().enumerate() {
        manifest.push_str(&format!(
            "phase_z{} = {}\n",
            2 * k,
            path.file_name().unwrap().to_string_lossy()
        ));
    }
    manifest.push_str("# config echo\n");
    manifest.push_str(&cfg.serialize());
    write_text(&manifest_path, &manifest)?;

    Ok(SimulateReport {
        intensity_files,
        phase_files,
        manifest_path,
        dz_plane: cfg.plan.dz_plane(),
    })
}

/// Load three intensity snapshots into a triple, validating grids and
/// plane spacing. Never touches phase files.
pub fn load_triple(i0: &Path, i2: &Path, i4: &Path) -> Result<IntensityTriple> {
    let s0 = read_snapshot(i0)?;
    let s2 = read_snapshot(i2)?;
    let s4 = read_snapshot(i4)?;
    for (path, s) in [(i0, &s0), (i2, &s2), (i4, &s4)] {
        if s.kind != SnapshotKind::Intensity {
            return Err(Error::Format {
                path: path.display().to_string(),
                why: format!("expected an intensity snapshot, found {:?}", s.kind),
            });
        }
    }
    if s0.spec() != s2.spec() || s0.spec() != s4.spec() {
        return Err(Error::SpecMismatch(format!(
            "snapshot grids differ: {} is {}, {} is {}, {} is {}",
            i0.display(),
            s0.spec().nx(),
            i2.display(),
            s2.spec().nx(),
            i4.display(),
            s4.spec().nx()
        )));
    }
    let d1 = s2.z_position - s0.z_position;
    let d2 = s4.z_position - s2.z_position;
    if !(d1 > 0.0) || (d1 - d2).abs() > 1e-9 * d1.abs() {
        return Err(Error::Format {
            path: i2.display().to_string(),
            why: format!("plane spacing not uniform: {d1} vs {d2}"),
        });
    }
    let f0 = s0.scalar_field().unwrap().clone();
    let f2 = s2.scalar_field().unwrap().clone();
    let f4 = s4.scalar_field().unwrap().clone();
    IntensityTriple::new(f0, f2, f4, d1)
}

fn load_g_table(path: &Path) -> Result<NonlinearFn> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut points = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("i,") {
            continue;
        }
        let mut cols = line.split(',');
        let parse = |tok: Option<&str>| -> Result<f64> {
            tok.and_then(|t| t.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Format {
                    path: path.display().to_string(),
                    why: format!("line {}: expected 'I,g_over_alpha'", lineno + 1),
                })
        };
        let i = parse(cols.next())?;
        let g = parse(cols.next())?;
        points.push((i, g));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points.dedup_by(|a, b| a.0 == b.0);
    NonlinearFn::tabulated(points).map_err(|e| Error::Format {
        path: path.display().to_string(),
        why: e.to_string(),
    })
}

fn write_table_csv(path: &Path, header: &str, rows: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from(header);
    out.push('\n');
    for (a, b) in rows {
        out.push_str(&format!("{a},{b}\n"));
    }
    write_text(path, &out)
}

fn write_trace_csv(path: &Path, trace: &RelaxationTrace) -> Result<()> {
    let mut out = String::from("k,eta_over_alpha,eta,alpha,N,X\n");
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.k, r.eta_over_alpha, r.eta, r.alpha, r.n_flux, r.x
        ));
    }
    write_text(path, &out)
}

#[derive(Debug)]
pub struct InferReport {
    pub eta_hat: f64,
    pub alpha_hat: f64,
    pub alpha_fwhm: f64,
    pub n_final: f64,
    pub seed: f64,
    pub files: Vec<PathBuf>,
}

/// Infer the evolution equation from three intensity snapshots. The
/// ground-truth phase snapshots are never opened.
pub fn cmd_infer(
    i0: &Path,
    i2: &Path,
    i4: &Path,
    g_table: Option<&Path>,
    config_path: &Path,
    out_dir: &Path,
) -> Result<InferReport> {
    let cfg = RunConfig::load(config_path)?;
    ensure_dir(out_dir)?;
    let triple = load_triple(i0, i2, i4)?;
    let g_over_alpha = match g_table {
        Some(path) => load_g_table(path)?,
        None => NonlinearFn::Zero,
    };
    let result = infer(&triple, &g_over_alpha, &cfg.relax)?;
    let files = write_inference_outputs(out_dir, &triple, &result)?;
    Ok(InferReport {
        eta_hat: result.eta_hat,
        alpha_hat: result.alpha_hat,
        alpha_fwhm: result.alpha_fwhm,
        n_final: result.n_final,
        seed: result.seed.peak,
        files,
    })
}

fn write_inference_outputs(
    out_dir: &Path,
    triple: &IntensityTriple,
    result: &InferenceResult,
) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let z1 = triple.dz_plane * 1.5; // informational only
    let z3 = triple.dz_plane * 2.5;

    let estimates = out_dir.join("estimates.txt");
    write_text(
        &estimates,
        &format!(
            "eta_hat = {}\nalpha_hat = {}\nalpha_fwhm = {}\nN_final = {}\nseed_eta_over_alpha = {}\n",
            result.eta_hat, result.alpha_hat, result.alpha_fwhm, result.n_final, result.seed.peak
        ),
    )?;
    files.push(estimates);

    for (name, z, field) in [
        ("phase_z1.snap", z1, &result.phi_z1),
        ("phase_z3.snap", z3, &result.phi_z3),
    ] {
        let path = out_dir.join(name);
        write_snapshot(&path, &Snapshot::scalar(SnapshotKind::Phase, z, field.clone()))?;
        files.push(path);
    }

    let f_path = out_dir.join("f_table.csv");
    write_table_csv(&f_path, "i,f", &result.f_table)?;
    files.push(f_path);

    for (name, trace) in [
        ("trace_up.csv", &result.trace_up),
        ("trace_down.csv", &result.trace_down),
    ] {
        let path = out_dir.join(name);
        write_trace_csv(&path, trace)?;
        files.push(path);
    }

    let hist_path = out_dir.join("alpha_histogram.csv");
    let rows: Vec<(f64, f64)> = result
        .alpha_histogram
        .rows()
        .map(|(a, c)| (a, c as f64))
        .collect();
    write_table_csv(&hist_path, "alpha,count", &rows)?;
    files.push(hist_path);
    Ok(files)
}

/// Linear least-squares fit of `f ~ offset + amplitude * sin(pi I)`,
/// plus the Pearson correlation between f and sin(pi I).
pub fn fit_sine(table: &[(f64, f64)]) -> Option<SineFit> {
    if table.len() < 3 {
        return None;
    }
    let n = table.len() as f64;
    let (mut ss, mut sf, mut ssf, mut sss, mut sff) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, f) in table {
        let s = (std::f64::consts::PI * i).sin();
        ss += s;
        sf += f;
        ssf += s * f;
        sss += s * s;
        sff += f * f;
    }
    let det = n * sss - ss * ss;
    if det.abs() < 1e-12 {
        return None;
    }
    let amplitude = (n * ssf - ss * sf) / det;
    let offset = (sf - amplitude * ss) / n;
    let cov = ssf - ss * sf / n;
    let var_s = sss - ss * ss / n;
    let var_f = sff - sf * sf / n;
    let correlation = if var_s > 0.0 && var_f > 0.0 {
        cov / (var_s * var_f).sqrt()
    } else {
        0.0
    };
    Some(SineFit {
        offset,
        amplitude,
        correlation,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct SineFit {
    pub offset: f64,
    pub amplitude: f64,
    pub correlation: f64,
}

#[derive(Clone, Debug)]
pub struct CheckLine {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    /// true when the check is "value >= threshold" instead of "<=".
    pub lower_bound: bool,
    pub passed: bool,
}

#[derive(Debug)]
pub enum RoundtripOutcome {
    Converged {
        checks: Vec<CheckLine>,
        all_passed: bool,
    },
    NonConverged {
        reason: String,
    },
}

#[derive(Debug)]
pub struct RoundtripReport {
    pub outcome: RoundtripOutcome,
    pub report_path: PathBuf,
    pub eta_hat: Option<f64>,
    pub alpha_hat: Option<f64>,
}

/// Simulate, measure the dissipation table from plane-wave preparations,
/// infer, and compare against the stored ground truth.
pub fn cmd_roundtrip(config_path: &Path, out_dir: &Path) -> Result<RoundtripReport> {
    let cfg = RunConfig::load(config_path)?;
    ensure_dir(out_dir)?;
    let sim_dir = out_dir.join("sim");
    let infer_dir = out_dir.join("infer");
    ensure_dir(&infer_dir)?;
    let sim = cmd_simulate(config_path, &sim_dir)?;

    // dissipation measured from separately prepared plane waves
    let g_rows = measure_g_table(
        &cfg.model,
        cfg.gtable.i_max,
        cfg.gtable.n_preparations,
        cfg.gtable.steps,
        cfg.gtable.snapshot_every,
        cfg.gtable.dz,
    )?;
    let g_path = out_dir.join("g_table.csv");
    write_table_csv(&g_path, "i,g_over_alpha", &g_rows)?;
    let g_over_alpha = NonlinearFn::tabulated(g_rows)?;

    let triple = load_triple(
        &sim.intensity_files[0],
        &sim.intensity_files[1],
        &sim.intensity_files[2],
    )?;
    let report_path = out_dir.join("report.txt");
    let result = match infer(&triple, &g_over_alpha, &cfg.relax) {
        Ok(r) => r,
        Err(e) if e.exit_code() == 2 => {
            let reason = e.to_string();
            write_text(
                &report_path,
                &format!("status = non-converged\nreason = {reason}\n"),
            )?;
            return Ok(RoundtripReport {
                outcome: RoundtripOutcome::NonConverged { reason },
                report_path,
                eta_hat: None,
                alpha_hat: None,
            });
        }
        Err(e) => return Err(e),
    };
    write_inference_outputs(&infer_dir, &triple, &result)?;

    // ground-truth comparison
    let exact_phase_z1 = {
        let p0 = read_snapshot(&sim.phase_files[0])?;
        let p2 = read_snapshot(&sim.phase_files[1])?;
        p0.scalar_field()
            .unwrap()
            .zip_with(p2.scalar_field().unwrap(), |a, b| 0.5 * (a + b))?
    };
    let sigma_phi = rms_phase_error(&exact_phase_z1, &result.phi_z1)?;
    let sigma_grad = rms_phase_gradient_error(&exact_phase_z1, &result.phi_z1)?;
    let eta_err = (result.eta_hat - cfg.model.eta).abs() / cfg.model.eta.abs();
    let alpha_err = (result.alpha_hat - cfg.model.alpha).abs() / cfg.model.alpha.abs();
    let two_run = {
        let (a, b) = (
            result.trace_up.final_eta().unwrap_or(f64::NAN),
            result.trace_down.final_eta().unwrap_or(f64::NAN),
        );
        (a - b).abs() / result.eta_hat.abs()
    };

    let t = &cfg.thresholds;
    let mut checks = vec![
        CheckLine {
            name: "eta_rel_err",
            value: eta_err,
            threshold: t.eta_rel_tol,
            lower_bound: false,
            passed: eta_err <= t.eta_rel_tol,
        },
        CheckLine {
            name: "two_run_eta_consistency",
            value: two_run,
            threshold: 1e-3,
            lower_bound: false,
            passed: two_run <= 1e-3,
        },
        CheckLine {
            name: "alpha_rel_err",
            value: alpha_err,
            threshold: t.alpha_rel_tol,
            lower_bound: false,
            passed: alpha_err <= t.alpha_rel_tol,
        },
        CheckLine {
            name: "sigma_phi",
            value: sigma_phi,
            threshold: t.sigma_phi_tol,
            lower_bound: false,
            passed: sigma_phi <= t.sigma_phi_tol,
        },
        CheckLine {
            name: "sigma_grad_phi",
            value: sigma_grad,
            threshold: t.sigma_grad_tol,
            lower_bound: false,
            passed: sigma_grad <= t.sigma_grad_tol,
        },
    ];
    let mut fit_lines = String::new();
    if let NonlinearFn::SineScaled { amplitude } = cfg.model.f {
        if let Some(fit) = fit_sine(&result.f_table) {
            let amp_err = (fit.amplitude - amplitude).abs() / amplitude.abs();
            checks.push(CheckLine {
                name: "f_amplitude_rel_err",
                value: amp_err,
                threshold: t.f_amp_rel_tol,
                lower_bound: false,
                passed: amp_err <= t.f_amp_rel_tol,
            });
            checks.push(CheckLine {
                name: "f_shape_correlation",
                value: fit.correlation,
                threshold: t.f_corr_min,
                lower_bound: true,
                passed: fit.correlation >= t.f_corr_min,
            });
            fit_lines = format!(
                "f_fit_offset = {}\nf_fit_amplitude = {}\nf_fit_correlation = {}\n",
                fit.offset, fit.amplitude, fit.correlation
            );
        }
    }
    let all_passed = checks.iter().all(|c| c.passed);

    let mut report = String::new();
    report.push_str("status = converged\n");
    report.push_str(&format!(
        "eta_hat = {}\nalpha_hat = {}\nalpha_fwhm = {}\nN_final = {}\n",
        result.eta_hat, result.alpha_hat, result.alpha_fwhm, result.n_final
    ));
    report.push_str(&fit_lines);
    for c in &checks {
        let rel = if c.lower_bound { ">=" } else { "<=" };
        report.push_str(&format!(
            "{} = {:.6e} ({} {:.3e}) : {}\n",
            c.name,
            c.value,
            rel,
            c.threshold,
            if c.passed { "PASS" } else { "FAIL" }
        ));
    }
    report.push_str(&format!(
        "overall = {}\n",
        if all_passed { "PASS" } else { "FAIL" }
    ));
    write_text(&report_path, &report)?;

    Ok(RoundtripReport {
        outcome: RoundtripOutcome::Converged { checks, all_passed },
        report_path,
        eta_hat: Some(result.eta_hat),
        alpha_hat: Some(result.alpha_hat),
    })
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub a_phi: f64,
    pub converged: bool,
    pub iterations: usize,
    pub sigma_grad: Option<f64>,
}

#[derive(Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
}

/// Convergence map of the phase retrieval over initial phase amplitudes:
/// for each value, simulate and run the retrieval at the true parameters,
/// recording convergence and the gradient error against the exact phase.
pub fn cmd_sweep(config_path: &Path, out_dir: &Path, a_phi_values: &[f64]) -> Result<SweepReport> {
    let base = RunConfig::load(config_path)?;
    ensure_dir(out_dir)?;
    if a_phi_values.is_empty() {
        return Err(Error::InvalidParameter {
            what: "sweep values",
            why: "need at least one a_phi".into(),
        });
    }
    let mut rows = Vec::new();
    for &a_phi in a_phi_values {
        let mut cfg = base.clone();
        cfg.ic.a_phi = a_phi;
        let grid = GridSpec::new(cfg.grid_nx)?;
        let intensity = init_intensity(&cfg.ic, grid)?;
        let phase = init_phase(&cfg.ic, grid);
        let psi0 = ComplexField2D::from_intensity_phase(&intensity, &phase)?;
        let out = evolve(&psi0, &cfg.model, &cfg.plan)?;

        let i_mid = out.triple.i0.zip_with(&out.triple.i2, |a, b| 0.5 * (a + b))?;
        let didz = crate::field_grid::central_dz(
            &out.triple.i0,
            &out.triple.i2,
            out.triple.dz_plane / 2.0,
        )?;
        let pr_cfg = PhaseRetrievalConfig {
            eta_over_alpha: cfg.model.eta / cfg.model.alpha,
            eta_alpha_product: cfg.model.eta * cfg.model.alpha,
            g_over_alpha: cfg.model.g.scaled(1.0 / cfg.model.alpha),
            max_iters: cfg.relax.retrieval_max_iters,
            grad_norm_tol: cfg.relax.retrieval_grad_norm_tol,
        };
        let row = match retrieve_phase(&i_mid, &didz, &pr_cfg) {
            Ok(r) if r.converged => {
                let exact = out.phases[0].zip_with(&out.phases[1], |a, b| 0.5 * (a + b))?;
                let retrieved = r.phi_tilde.scaled(0.5 * cfg.model.alpha);
                let sigma = rms_phase_gradient_error(&exact, &retrieved)?;
                SweepRow {
                    a_phi,
                    converged: true,
                    iterations: r.iterations_used,
                    sigma_grad: Some(sigma),
                }
            }
            Ok(r) => SweepRow {
                a_phi,
                converged: false,
                iterations: r.iterations_used,
                sigma_grad: None,
            },
            Err(Error::RetrievalDiverged { iterations }) => SweepRow {
                a_phi,
                converged: false,
                iterations,
                sigma_grad: None,
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    let csv_path = out_dir.join("convergence_map.csv");
    let mut csv = String::from("a_phi,converged,iterations,sigma_grad_phi\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.a_phi,
            r.converged,
            r.iterations,
            r.sigma_grad.map_or(String::from("nan"), |s| s.to_string())
        ));
    }
    write_text(&csv_path, &csv)?;
    // flush a human-oriented summary too
    let mut summary = fs::File::create(out_dir.join("sweep_summary.txt"))
        .map_err(|e| io_err(out_dir, e))?;
    for r in &rows {
        writeln!(
            summary,
            "a_phi = {:>5}: {} after {} iterations",
            r.a_phi,
            if r.converged { "converged" } else { "non-converged" },
            r.iterations
        )
        .map_err(|e| io_err(out_dir, e))?;
    }
    Ok(SweepReport { rows, csv_path })
}
