//! One pipeline per experiment kind.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use kfl_core::analysis::{
    compare_to_vapp, estimate_alpha, fit_expansion, probe_rate, w_diagnostics, Comparison, ExpansionFit,
};
use kfl_core::model::{Frame, THREE_SQRT_PI};
use kfl_core::probe::run_linear_probe;
use kfl_core::solver::{Checkpoint, Snapshot, Solver, TraceRow};
use kfl_core::spectral::identity_report;
use kfl_core::stats::{line_fit, log_space, loglog_fit};
use kfl_core::vapp::{residual_study, VappModel};
use kfl_core::wave::{solve_wave, WaveProfile};

use crate::config::{ConfigError, ExperimentConfig, Kind};
use crate::output::{
    read_snapshot, read_trace, write_json, write_table, FileSink, Manifest, SnapshotEntry, Status, CONFIG_COPY, TRACE,
};

/// Failure of a run after its directory exists.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl From<kfl_core::Error> for RunError {
    fn from(e: kfl_core::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

/// Where a `simulate` run picks up from.
pub struct ResumePoint {
    pub checkpoint: Checkpoint,
    pub path: PathBuf,
    /// Trace rows and snapshots of the original run up to the checkpoint time.
    pub trace: Vec<TraceRow>,
    pub snapshots: Vec<(SnapshotEntry, Snapshot)>,
}

impl ResumePoint {
    /// Reads a checkpoint file inside `<run>/checkpoints/`.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let run_dir = path
            .parent()
            .and_then(Path::parent)
            .ok_or_else(|| format!("{} is not inside a run directory", path.display()))?
            .to_path_buf();
        let t = checkpoint.state.t;
        let trace = match read_trace(&run_dir.join(TRACE)) {
            Ok(rows) => rows.into_iter().filter(|r| r.t <= t).collect(),
            Err(_) => Vec::new(),
        };
        let snapshots = match Manifest::load(&run_dir) {
            Ok(m) => m
                .snapshots
                .into_iter()
                .filter(|e| e.t <= t)
                .map(|e| read_snapshot(&run_dir, &e).map(|s| (e, s)))
                .collect::<Result<_, _>>()?,
            Err(_) => Vec::new(),
        };
        Ok((Self { checkpoint, path: path.to_path_buf(), trace, snapshots }, run_dir))
    }
}

/// Runs the pipeline for `config.kind()` inside `dir`, filling in the manifest.
pub fn execute(
    config: &ExperimentConfig,
    dir: &Path,
    manifest: &mut Manifest,
    resume: Option<ResumePoint>,
) -> RunResult<()> {
    match config.kind() {
        Kind::Wave => wave(config, dir, manifest),
        Kind::SpectralCheck => spectral_check(config, dir, manifest),
        Kind::Vapp => vapp(config, dir, manifest),
        Kind::Simulate => simulate(config, dir, manifest, resume),
        Kind::Probe => probe(config, dir, manifest),
        Kind::Fit => fit(config, dir, manifest),
        Kind::Compare => compare(config, dir, manifest),
        Kind::Report => report(config, dir, manifest),
    }
}

fn solve_configured_wave(config: &ExperimentConfig) -> RunResult<WaveProfile> {
    Ok(solve_wave(&config.nonlinearity()?, config.wave_half_width, config.wave_h, config.wave_tol)?)
}

#[derive(Serialize)]
struct WaveSummary<'a> {
    nonlinearity: &'a str,
    speed: f64,
    k: f64,
    omega0: f64,
    phi_at_origin: f64,
    half_level_position: f64,
    mu_minus: f64,
    left_amplitude: f64,
    newton_residual: f64,
    newton_iterations: usize,
    consistency_residual: f64,
    tail: &'a kfl_core::wave::TailFit,
}

fn wave(config: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> RunResult<()> {
    let nl = config.nonlinearity()?;
    let w = solve_configured_wave(config)?;
    let summary = WaveSummary {
        nonlinearity: nl.name(),
        speed: w.speed(),
        k: w.k(),
        omega0: w.omega0(),
        phi_at_origin: w.eval(0.0),
        half_level_position: w.inverse(0.5)?,
        mu_minus: w.mu_minus(),
        left_amplitude: w.left_amplitude(),
        newton_residual: w.residual(),
        newton_iterations: w.newton_iterations(),
        consistency_residual: w.consistency_residual(&nl),
        tail: w.tail(),
    };
    write_json(&dir.join("fits/wave.json"), &summary)?;
    let grid = w.xi_grid();
    write_table(&dir.join("wave.csv"), &["xi", "phi"], grid.nodes().zip(w.phi_values()).map(|(x, p)| vec![x, *p]))?;
    manifest.metric("speed", summary.speed);
    manifest.metric("k", summary.k);
    manifest.metric("omega0", summary.omega0);
    manifest.metric("newton_residual", summary.newton_residual);
    Ok(())
}

/// `(sigma, q0)` pairs drawn uniformly from `[-10, 10] x [0.1, 3]`.
pub fn adjoint_pairs(seed: u64, count: usize) -> Vec<(f64, f64)> {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    (0..count).map(|_| (rng.gen_range(-10.0..10.0), rng.gen_range(0.1..3.0))).collect()
}

fn spectral_check(config: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> RunResult<()> {
    let pairs = adjoint_pairs(config.seed, config.adjoint_pairs);
    let report = identity_report(config.spectral_spacing, config.spectral_eta_max, &pairs, config.v1_spacing)?;
    write_json(&dir.join("fits/spectral.json"), &report)?;
    manifest.metric("m_e0_residual", report.m_e0_residual);
    manifest.metric("m_e1_residual", report.m_e1_residual);
    manifest.metric("e0_e1_inner", report.e0_e1_inner);
    manifest.metric("l_v0_residual", report.l_v0_residual);
    manifest.metric("adjoint_max_error", report.adjoint_max_error);
    manifest.metric("v1_slope_max_error", report.v1_slope_max_error);
    Ok(())
}

fn vapp(config: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> RunResult<()> {
    let wave = Arc::new(solve_configured_wave(config)?);
    let (lo, hi) = (config.residual_t_min.log10(), config.residual_t_max.log10());
    let count = ((hi - lo) * config.residual_per_decade as f64).round() as usize + 1;
    let times = log_space(lo, hi, count.max(2));
    for &gamma in &config.gamma {
        let model =
            VappModel::new(wave.clone(), config.nonlinearity()?, config.vapp_settings(gamma, config.seam_scale))?;
        let study = residual_study(&model, &times, config.residual_lambda)?;
        write_json(&dir.join(format!("fits/residuals_gamma{gamma}.json")), &study)?;
        write_table(
            &dir.join(format!("residuals_gamma{gamma}.csv")),
            &[
                "t",
                "seam",
                "zeta",
                "sup_inner",
                "sup_outer_weighted",
                "sup_outer_linear_weighted",
                "jump",
                "left_constant",
            ],
            study.rows.iter().map(|r| {
                vec![
                    r.t,
                    r.seam,
                    r.zeta,
                    r.sup_inner,
                    r.sup_outer_weighted,
                    r.sup_outer_linear_weighted,
                    r.jump,
                    r.left_constant,
                ]
            }),
        )?;
        manifest.metric(format!("inner_slope[gamma={gamma}]"), study.inner_slope);
        manifest.metric(format!("jump_slope[gamma={gamma}]"), study.jump_slope);
        manifest.metric(format!("outer_slope[gamma={gamma}]"), study.outer_slope);
    }
    Ok(())
}

fn simulate(
    config: &ExperimentConfig,
    dir: &Path,
    manifest: &mut Manifest,
    resume: Option<ResumePoint>,
) -> RunResult<()> {
    let solver_config = config.solver_config()?;
    let nl = config.nonlinearity()?;
    let tag = config.numerics_hash();
    let (mut solver, carried, snapshots) = match resume {
        Some(point) => {
            manifest.resumed_from = Some(point.path.display().to_string());
            let solver = Solver::from_checkpoint(solver_config.clone(), nl, point.checkpoint, tag)
                .map_err(|e| ConfigError::Field { field: "resume", message: e.to_string() })?;
            (solver, point.trace, point.snapshots)
        }
        None => (Solver::new(solver_config.clone(), nl, &config.initial_condition()?, tag)?, Vec::new(), Vec::new()),
    };
    let mut sink = FileSink::new(dir, manifest.clone(), config.dx, &carried)?;
    for (entry, snap) in &snapshots {
        kfl_core::solver::RunSink::snapshot(&mut sink, snap)?;
        debug_assert_eq!(entry.t, snap.t);
    }
    let outcome = solver.run(&mut sink);
    if outcome.is_ok()
        && config.checkpoint_period.is_some()
        && sink.manifest.checkpoint.as_deref().is_none_or(|c| !c.ends_with(&format!("ckpt_t{}.json", solver.state().t)))
    {
        kfl_core::solver::RunSink::checkpoint(&mut sink, &solver.checkpoint())?;
    }
    *manifest = sink.finish()?;
    let summary = outcome?;
    manifest.metric("t_final", summary.t_final);
    manifest.metric("steps", summary.steps as f64);
    manifest.metric("nodes", summary.nodes as f64);

    let trace = read_trace(&dir.join(TRACE)).map_err(RunError::Runtime)?;
    for &level in &config.levels {
        let (t, s): (Vec<f64>, Vec<f64>) =
            trace.iter().filter(|r| r.level == level).map(|r| (r.t, r.position_lab)).unzip();
        if let Some(&last) = s.last() {
            manifest.metric(format!("sigma[s={level}]"), last);
        }
        let window = default_window(config, &t);
        if let Some(window) = window {
            if let Ok(fit) = fit_expansion(&t, &s, window, config.basis()) {
                write_json(&dir.join(format!("fits/expansion_s{level}.json")), &fit)?;
                record_fit(manifest, &fit, &format!("[s={level}]"));
            }
        }
    }
    Ok(())
}

fn default_window(config: &ExperimentConfig, t: &[f64]) -> Option<(f64, f64)> {
    let t_max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let start = config.fit_window_start.unwrap_or(t_max / 100.0);
    let end = config.fit_window_end.unwrap_or(t_max);
    (start >= 50.0 && end > start).then_some((start, end))
}

fn record_fit(manifest: &mut Manifest, fit: &ExpansionFit, suffix: &str) {
    manifest.metric(format!("a{suffix}"), fit.a);
    manifest.metric(format!("b{suffix}"), fit.b);
    manifest.metric(format!("c{suffix}"), fit.c);
    manifest.metric(format!("b_uncertainty{suffix}"), fit.b_uncertainty);
    manifest.metric(format!("a_se{suffix}"), fit.standard_errors[0]);
    if let Some(st) = &fit.stability {
        manifest.metric(format!("b_spread{suffix}"), st.spread);
    }
}

fn probe(config: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> RunResult<()> {
    let mut fits = Vec::new();
    for &c in &config.probe_c {
        let trace = run_linear_probe(&config.probe_config(c))?;
        write_table(
            &dir.join(format!("probe_c{c}.csv")),
            &["t", "mass"],
            trace.times.iter().zip(&trace.mass).map(|(t, m)| vec![*t, *m]),
        )?;
        let rate = probe_rate(&trace, (config.rate_window_start, config.rate_window_end))?;
        manifest.metric(format!("p[c={c}]"), rate.p);
        fits.push(rate);
    }
    write_json(&dir.join("fits/probe.json"), &fits)?;
    Ok(())
}

fn source_dir(config: &ExperimentConfig) -> RunResult<(PathBuf, Manifest)> {
    let dir = config.source.clone().expect("validated");
    let manifest = Manifest::load(&dir)
        .map_err(|e| ConfigError::Field { field: "source", message: format!("{}: {e}", dir.display()) })?;
    if manifest.kind != Kind::Simulate.name() {
        return Err(ConfigError::Field {
            field: "source",
            message: format!("{} is a {} run", dir.display(), manifest.kind),
        }
        .into());
    }
    let bad = manifest.verify(&dir);
    if !bad.is_empty() {
        return Err(RunError::Runtime(format!("digest mismatch in {}: {}", dir.display(), bad.join(", "))));
    }
    Ok((dir, manifest))
}

fn fit(config: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> RunResult<()> {
    let (src, _) = source_dir(config)?;
    let trace = read_trace(&src.join(TRACE)).map_err(RunError::Runtime)?;
    let (t, s): (Vec<f64>, Vec<f64>) =
        trace.iter().filter(|r| r.level == config.fit_level).map(|r| (r.t, r.position_lab)).unzip();
    if t.is_empty() {
        return Err(ConfigError::Field {
            field: "fit_level",
            message: format!("no trace rows at level {}", config.fit_level),
        }
        .into());
    }
    let window = default_window(config, &t).ok_or_else(|| ConfigError::Field {
        field: "fit_window_start",
        message: "the fit window must start at t >= 50".into(),
    })?;
    let plain = fit_expansion(&t, &s, window, config.basis())?;
    let with_log = fit_expansion(&t, &s, window, kfl_core::analysis::Basis { with_log: true })?;
    write_json(&dir.join("fits/expansion.json"), &plain)?;
    write_json(&dir.join("fits/expansion_log.json"), &with_log)?;
    record_fit(manifest, &plain, "");
    manifest.metric("b_with_log", with_log.b);
    manifest.metric("b_reference", -THREE_SQRT_PI);
    let d: Vec<Vec<f64>> = t
        .iter()
        .zip(&s)
        .map(|(t, s)| {
            let model = plain.a + plain.b / t.sqrt() + plain.c / t;
            let d = s - 2.0 * t + 1.5 * t.ln();
            vec![*t, d, model, plain.a - THREE_SQRT_PI / t.sqrt()]
        })
        .collect();
    write_table(&dir.join("fit_curve.csv"), &["t", "d", "fit", "reference"], d)?;
    Ok(())
}

#[derive(Serialize)]
struct CompareSummary {
    gamma: f64,
    seam_scale: f64,
    alpha: kfl_core::analysis::AlphaEstimate,
    comparisons: Vec<Comparison>,
    comparison_slope: Option<f64>,
    w: Vec<kfl_core::analysis::WDiagnostic>,
    w_slope: Option<f64>,
}

fn compare(config: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> RunResult<()> {
    let (src, src_manifest) = source_dir(config)?;
    let snaps: Vec<Snapshot> = src_manifest
        .snapshots
        .iter()
        .filter(|e| e.t >= 100.0)
        .map(|e| read_snapshot(&src, e))
        .collect::<Result<_, _>>()
        .map_err(RunError::Runtime)?;
    if snaps.is_empty() {
        return Err(ConfigError::Field {
            field: "source",
            message: "the source run has no snapshots at t >= 100".into(),
        }
        .into());
    }
    let wave = Arc::new(solve_configured_wave(config)?);
    let model = VappModel::new(
        wave,
        config.nonlinearity()?,
        config.vapp_settings(config.compare_gamma, config.compare_seam_scale),
    )?;
    let alpha = estimate_alpha(&snaps, config.alpha_method, Some(&model))?;
    let refined: Vec<Snapshot> = snaps.iter().map(|s| s.reframed(Frame::Refined)).collect::<Result<_, _>>()?;
    let comparisons: Vec<Comparison> =
        refined.iter().map(|s| compare_to_vapp(s, &model, alpha.x_inf)).collect::<Result<_, _>>()?;
    let in_window: Vec<&Comparison> =
        comparisons.iter().filter(|c| c.t >= 100.0 && c.t <= 1e4 * (1.0 + 1e-12)).collect();
    let comparison_slope = (in_window.len() >= 2)
        .then(|| {
            loglog_fit(
                &in_window.iter().map(|c| c.t).collect::<Vec<_>>(),
                &in_window.iter().map(|c| c.error).collect::<Vec<_>>(),
            )
        })
        .transpose()?
        .map(|f| f.slope);
    let w = w_diagnostics(&refined, &model, alpha.x_inf, config.w_eta_max)?;
    let w_slope = (w.len() >= 2)
        .then(|| {
            line_fit(
                &w.iter().map(|d| d.tau).collect::<Vec<_>>(),
                &w.iter().map(|d| (d.coefficient.abs() + d.orthogonal_norm).ln()).collect::<Vec<_>>(),
            )
        })
        .transpose()?
        .map(|f| f.slope);
    write_table(
        &dir.join("compare.csv"),
        &["t", "error", "argsup"],
        comparisons.iter().map(|c| vec![c.t, c.error, c.argsup]),
    )?;
    write_table(
        &dir.join("w_diagnostics.csv"),
        &["tau", "coefficient", "orthogonal_norm"],
        w.iter().map(|d| vec![d.tau, d.coefficient, d.orthogonal_norm]),
    )?;
    manifest.metric("x_inf", alpha.x_inf);
    manifest.metric("alpha_drift", alpha.drift);
    if let Some(s) = comparison_slope {
        manifest.metric("comparison_slope", s);
    }
    if let Some(s) = w_slope {
        manifest.metric("w_slope", s);
    }
    let summary = CompareSummary {
        gamma: config.compare_gamma,
        seam_scale: config.compare_seam_scale,
        alpha,
        comparisons,
        comparison_slope,
        w,
        w_slope,
    };
    write_json(&dir.join("fits/compare.json"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct ReportRun {
    dir: String,
    kind: String,
    config_hash: String,
    status: Status,
    headline: std::collections::BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Report {
    reference_b: f64,
    runs: Vec<ReportRun>,
}

fn report(config: &ExperimentConfig, dir: &Path, manifest: &mut Manifest) -> RunResult<()> {
    let mut runs = Vec::new();
    let mut loaded = Vec::new();
    for run in &config.runs {
        let m = Manifest::load(run)
            .map_err(|e| ConfigError::Field { field: "runs", message: format!("{}: {e}", run.display()) })?;
        let bad = m.verify(run);
        if !bad.is_empty() {
            return Err(RunError::Runtime(format!("digest mismatch in {}: {}", run.display(), bad.join(", "))));
        }
        loaded.push((run.clone(), m));
    }
    let mut b_rows = Vec::new();
    let mut residual_rows = Vec::new();
    let mut probe_rows = Vec::new();
    let mut compare_rows = Vec::new();
    for (i, (run, m)) in loaded.iter().enumerate() {
        let idx = i as f64;
        for (key, value) in &m.headline {
            if let Some(suffix) = key.strip_prefix('b').filter(|s| s.is_empty() || s.starts_with('[')) {
                let unc = m.headline.get(&format!("b_uncertainty{suffix}")).copied().unwrap_or(f64::NAN);
                let spread = m.headline.get(&format!("b_spread{suffix}")).copied().unwrap_or(f64::NAN);
                let a = m.headline.get(&format!("a{suffix}")).copied().unwrap_or(f64::NAN);
                b_rows.push(vec![idx, a, *value, unc, spread, -THREE_SQRT_PI, (value + THREE_SQRT_PI) / THREE_SQRT_PI]);
            }
            if let Some(rest) = key.strip_prefix("p[c=").and_then(|r| r.strip_suffix(']')) {
                if let Ok(c) = rest.parse::<f64>() {
                    probe_rows.push(vec![idx, c, *value]);
                }
            }
            if key == "comparison_slope" {
                compare_rows.push(vec![idx, *value, m.headline.get("w_slope").copied().unwrap_or(f64::NAN)]);
            }
            if let Some(rest) = key.strip_prefix("inner_slope[gamma=").and_then(|r| r.strip_suffix(']')) {
                if let Ok(g) = rest.parse::<f64>() {
                    let get =
                        |name: &str| m.headline.get(&format!("{name}[gamma={rest}]")).copied().unwrap_or(f64::NAN);
                    residual_rows.push(vec![idx, g, *value, get("jump_slope"), get("outer_slope")]);
                }
            }
        }
        runs.push(ReportRun {
            dir: run.display().to_string(),
            kind: m.kind.clone(),
            config_hash: m.config_hash.clone(),
            status: m.status,
            headline: m.headline.clone(),
        });
    }
    write_table(
        &dir.join("b_vs_reference.csv"),
        &["run", "a", "b", "b_uncertainty", "b_spread", "reference", "relative_error"],
        b_rows.clone(),
    )?;
    write_table(&dir.join("residual_exponents.csv"), &["run", "gamma", "inner", "jump", "outer"], residual_rows)?;
    write_table(&dir.join("probe_rates.csv"), &["run", "c", "p"], probe_rows)?;
    write_table(&dir.join("comparison_slopes.csv"), &["run", "comparison_slope", "w_slope"], compare_rows)?;
    let out = Report { reference_b: -THREE_SQRT_PI, runs };
    write_json(&dir.join("report.json"), &out)?;
    manifest.metric("runs", out.runs.len() as f64);
    if b_rows.len() >= 2 {
        let bs: Vec<f64> = b_rows.iter().map(|r| r[2]).collect();
        let spread =
            bs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - bs.iter().cloned().fold(f64::INFINITY, f64::min);
        manifest.metric("b_range", spread);
    }
    Ok(())
}

/// Writes the resolved configuration next to the results.
pub fn copy_config(config: &ExperimentConfig, dir: &Path) -> std::io::Result<()> {
    fs::write(dir.join(CONFIG_COPY), toml::to_string(config).map_err(std::io::Error::other)?)
}
