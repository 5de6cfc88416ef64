//! Post-processing of snapshots: level crossings, diffusive amplitudes, expansion fits,
//! comparison with the approximate solution and self-similar decay diagnostics.

use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::interp::{monotone_segment, CubicSpline};
use crate::model::{bramson_shift, Frame};
use crate::probe::MassTrace;
use crate::solver::{Formulation, Snapshot, TraceRow};
use crate::spectral::{eigenpair, project_onto, DecayClass, HalfLineField};
use crate::stats::loglog_fit;
use crate::vapp::VappModel;

/// Rightmost crossing of a sampled profile with a level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCrossing {
    pub position: f64,
    /// More than one sign change was found; the rightmost one is reported.
    pub multiple: bool,
}

/// `max{x : u(x) = s}` refined by monotone cubic Hermite interpolation.
pub fn level_position(grid: &Grid1D, values: &[f64], level: f64) -> Result<LevelCrossing> {
    if values.len() != grid.len() || values.len() < 2 {
        return Err(Error::InvalidInput("values do not match the grid".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} outside (0, 1)")));
    }
    let side = |v: f64| (v - level).signum();
    let mut crossings = 0usize;
    let mut rightmost = None;
    for i in 0..values.len() - 1 {
        let (a, b) = (values[i] - level, values[i + 1] - level);
        if b == 0.0 && i + 2 < values.len() {
            continue;
        }
        if a == 0.0 || side(values[i]) != side(values[i + 1]) {
            crossings += 1;
            rightmost = Some(i);
        }
    }
    let i = rightmost.ok_or(Error::NoCrossing { level })?;
    let position = if values[i] == level {
        grid.x(i)
    } else if values[i + 1] == level {
        grid.x(i + 1)
    } else {
        monotone_segment(grid, values, i).solve(level)
    };
    Ok(LevelCrossing { position, multiple: crossings > 1 })
}

/// Least-squares amplitude of `v ~ alpha (x - c) e^(-(x-c)^2/(4t))` on `x - c in [0.5 sqrt t, 2 sqrt t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusiveAmplitude {
    pub t: f64,
    pub alpha: f64,
    /// Fit window in `eta = (x - c)/sqrt t`.
    pub window: (f64, f64),
    /// RMS misfit relative to the largest model value on the window.
    pub residual: f64,
}

pub const DIFFUSIVE_WINDOW: (f64, f64) = (0.5, 2.0);

pub fn diffusive_amplitude(grid: &Grid1D, v: &[f64], t: f64, center: f64) -> Result<DiffusiveAmplitude> {
    let sqrt_t = t.sqrt();
    let (lo, hi) = (center + DIFFUSIVE_WINDOW.0 * sqrt_t, center + DIFFUSIVE_WINDOW.1 * sqrt_t);
    if grid.left() > lo || grid.right() < hi {
        return Err(Error::Domain(format!("snapshot does not cover the diffusive window [{lo}, {hi}]")));
    }
    let (mut sgv, mut sgg) = (0.0, 0.0);
    let mut samples = Vec::new();
    for (i, x) in grid.nodes().enumerate() {
        if x < lo || x > hi {
            continue;
        }
        let y = x - center;
        let g = y * (-y * y / (4.0 * t)).exp();
        sgv += g * v[i];
        sgg += g * g;
        samples.push((g, v[i]));
    }
    if samples.len() < 3 || sgg == 0.0 {
        return Err(Error::Domain("diffusive window holds fewer than three nodes".into()));
    }
    let alpha = sgv / sgg;
    let scale = samples.iter().fold(0.0f64, |m, (g, _)| m.max(g.abs())) * alpha.abs();
    let rss: f64 = samples.iter().map(|(g, y)| (y - alpha * g).powi(2)).sum();
    let residual = (rss / samples.len() as f64).sqrt() / scale.max(f64::MIN_POSITIVE);
    Ok(DiffusiveAmplitude { t, alpha, window: DIFFUSIVE_WINDOW, residual })
}

impl Snapshot {
    /// The same solution labelled in another frame; the grid shifts by `s_old(t) - s_new(t)`.
    pub fn reframed(&self, frame: Frame) -> Result<Snapshot> {
        let delta = self.frame.shift(self.t) - frame.shift(self.t);
        let grid = Grid1D::from_len(self.grid.left() + delta, self.grid.spacing(), self.grid.len())?;
        let values = match self.formulation {
            Formulation::UForm => self.values.clone(),
            Formulation::VForm => {
                let factor = delta.exp();
                self.values.iter().map(|v| v * factor).collect()
            }
        };
        Ok(Snapshot { t: self.t, frame, formulation: self.formulation, grid, values })
    }
}

/// `e^(x - c) u` on the snapshot grid with `c` the Bramson position, zero outside `[lo, hi]`.
fn bramson_weighted(snapshot: &Snapshot, lo: f64, hi: f64) -> Vec<f64> {
    let c = bramson_shift(snapshot.t) - snapshot.frame.shift(snapshot.t);
    let u = snapshot.u_values();
    snapshot
        .grid
        .nodes()
        .zip(&u)
        .map(|(x, u)| if x >= c + lo && x <= c + hi && *u != 0.0 { (x - c).exp() * u } else { 0.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMethod {
    /// `v ~ alpha y e^(-y^2/(4t))` in Bramson coordinates.
    #[default]
    Leading,
    /// `v ~ e^(x_inf) V+(t, y - x_inf)` in refined coordinates, solved for `x_inf` by fixed point.
    Matched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub method: AlphaMethod,
    pub series: Vec<DiffusiveAmplitude>,
    /// `log alpha` at the latest time.
    pub x_inf: f64,
    /// Range of `log alpha` over the series.
    pub drift: f64,
}

fn leading_amplitude(snapshot: &Snapshot) -> Result<DiffusiveAmplitude> {
    let (lo, hi) = (DIFFUSIVE_WINDOW.0 * snapshot.t.sqrt(), DIFFUSIVE_WINDOW.1 * snapshot.t.sqrt());
    let vb = bramson_weighted(snapshot, lo, hi);
    let c = bramson_shift(snapshot.t) - snapshot.frame.shift(snapshot.t);
    diffusive_amplitude(&snapshot.grid, &vb, snapshot.t, c)
}

fn matched_amplitude(snapshot: &Snapshot, model: &VappModel) -> Result<DiffusiveAmplitude> {
    let t = snapshot.t;
    let refined = snapshot.reframed(Frame::Refined)?;
    let c = bramson_shift(t) - Frame::Refined.shift(t);
    let sqrt_t = t.sqrt();
    let (lo, hi) = (c + DIFFUSIVE_WINDOW.0 * sqrt_t, c + DIFFUSIVE_WINDOW.1 * sqrt_t);
    let g = refined.grid;
    if g.left() > lo || g.right() < hi {
        return Err(Error::Domain("snapshot does not cover the diffusive window".into()));
    }
    let u = refined.u_values();
    let nodes: Vec<(f64, f64)> =
        g.nodes().zip(&u).filter(|(x, _)| *x >= lo && *x <= hi).map(|(x, u)| (x, x.exp() * u)).collect();
    let slice = model.slice(t)?;
    let fit = |x_inf: f64| -> Result<(f64, f64, f64)> {
        let (mut sgv, mut sgg, mut scale) = (0.0, 0.0, 0.0f64);
        for &(x, v) in &nodes {
            let m = model.vplus(&slice, x - x_inf)?;
            sgv += m * v;
            sgg += m * m;
            scale = scale.max(m.abs());
        }
        let alpha = sgv / sgg;
        let rss: f64 =
            nodes.iter().map(|&(x, v)| (v - alpha * model.vplus(&slice, x - x_inf).unwrap_or(0.0)).powi(2)).sum();
        Ok((alpha, (rss / nodes.len() as f64).sqrt() / (scale * alpha.abs()), sgg))
    };
    let (alpha, _, _) = fit(0.0)?;
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("negative diffusive amplitude {alpha} (frame misalignment)")));
    }
    let mut x_inf = alpha.ln();
    let mut residual = f64::NAN;
    for _ in 0..100 {
        let (a, r, _) = fit(x_inf)?;
        if !(a > 0.0) {
            return Err(Error::Domain(format!("negative diffusive amplitude {a} (frame misalignment)")));
        }
        let next = a.ln();
        residual = r;
        if (next - x_inf).abs() < 1e-14 {
            x_inf = next;
            break;
        }
        x_inf = next;
    }
    Ok(DiffusiveAmplitude { t, alpha: x_inf.exp(), window: DIFFUSIVE_WINDOW, residual })
}

/// Diffusive amplitudes at each snapshot time (`t >= 100`) and `x_inf = log alpha` at the latest one.
pub fn estimate_alpha(snapshots: &[Snapshot], method: AlphaMethod, model: Option<&VappModel>) -> Result<AlphaEstimate> {
    if snapshots.is_empty() {
        return Err(Error::InvalidInput("no snapshots".into()));
    }
    let mut series = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        if snap.t < 100.0 {
            return Err(Error::InvalidInput(format!("snapshot at t = {} precedes t = 100", snap.t)));
        }
        let amp = match method {
            AlphaMethod::Leading => leading_amplitude(snap)?,
            AlphaMethod::Matched => {
                let model = model.ok_or_else(|| Error::InvalidInput("matched estimate needs a model".into()))?;
                matched_amplitude(snap, model)?
            }
        };
        if !(amp.alpha > 0.0) {
            return Err(Error::Domain(format!("negative diffusive amplitude {} at t = {}", amp.alpha, snap.t)));
        }
        series.push(amp);
    }
    let latest = series.iter().max_by(|a, b| a.t.total_cmp(&b.t)).expect("nonempty");
    let logs: Vec<f64> = series.iter().map(|a| a.alpha.ln()).collect();
    let drift =
        logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - logs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(AlphaEstimate { method, x_inf: latest.alpha.ln(), drift, series: series.clone() })
}

/// Trace rows of one run together with the numerics that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontTrace {
    pub dx: f64,
    pub frame: Frame,
    pub formulation: Formulation,
    pub rows: Vec<TraceRow>,
}

impl FrontTrace {
    /// `(t, sigma_s)` in lab coordinates.
    pub fn series(&self, level: f64) -> (Vec<f64>, Vec<f64>) {
        self.rows.iter().filter(|r| r.level == level).map(|r| (r.t, r.position_lab)).unzip()
    }

    /// Checks that positions decrease strictly with the level at every time.
    pub fn check_level_order(&self) -> Result<()> {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.level.total_cmp(&b.level)));
        for w in rows.windows(2) {
            if w[0].t == w[1].t && !(w[1].position_frame < w[0].position_frame) {
                return Err(Error::InvariantViolation {
                    t: w[0].t,
                    detail: format!("sigma_{} <= sigma_{}", w[0].level, w[1].level),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Basis {
    /// Adds `t^-1 log t` to `{1, t^-1/2, t^-1}`.
    pub with_log: bool,
}

impl Basis {
    pub fn tags(&self) -> Vec<String> {
        let mut tags = vec!["1".to_string(), "t^-1/2".to_string(), "t^-1".to_string()];
        if self.with_log {
            tags.push("t^-1 log t".to_string());
        }
        tags
    }

    fn row(&self, t: f64) -> Vec<f64> {
        let mut row = vec![1.0, t.powf(-0.5), 1.0 / t];
        if self.with_log {
            row.push(t.ln() / t);
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stability {
    pub windows: Vec<(f64, f64)>,
    pub b_values: Vec<f64>,
    /// `max b - min b` over the shifted windows.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub window: (f64, f64),
    pub basis: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Standard error of `b` combined with half the window spread.
    pub b_uncertainty: f64,
    pub rms: f64,
    pub condition: f64,
    pub samples: usize,
    pub stability: Option<Stability>,
}

pub const MAX_CONDITION: f64 = 1e10;
pub const STABILITY_WINDOWS: usize = 5;

struct LeastSquares {
    coef: Vec<f64>,
    cov: Vec<Vec<f64>>,
    rms: f64,
    condition: f64,
}

fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<LeastSquares> {
    let (n, p) = (rows.len(), rows.first().map_or(0, |r| r.len()));
    if n <= p {
        return Err(Error::InvalidInput(format!("{n} samples cannot determine {p} coefficients")));
    }
    let a = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    // Column scaling keeps the condition estimate about the basis, not its units.
    let scale: Vec<f64> = (0..p).map(|j| a.column(j).norm().max(f64::MIN_POSITIVE)).collect();
    let scaled = DMatrix::from_fn(n, p, |i, j| a[(i, j)] / scale[j]);
    let svd = scaled.clone().svd(true, true);
    let (smax, smin) = svd.singular_values.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), s| (hi.max(*s), lo.min(*s)));
    let condition = smax / smin;
    if !(condition < MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let b = DVector::from_column_slice(y);
    let sol = svd.solve(&b, 0.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let resid = &b - &scaled * &sol;
    let rss = resid.norm_squared();
    let sigma2 = rss / (n - p) as f64;
    let gram_inv = (scaled.transpose() * &scaled).try_inverse().ok_or(Error::IllConditioned { condition })?;
    let coef: Vec<f64> = (0..p).map(|j| sol[j] / scale[j]).collect();
    let cov = (0..p).map(|i| (0..p).map(|j| sigma2 * gram_inv[(i, j)] / (scale[i] * scale[j])).collect()).collect();
    Ok(LeastSquares { coef, cov, rms: (rss / n as f64).sqrt(), condition })
}

fn fit_window(t: &[f64], sigma: &[f64], window: (f64, f64), basis: Basis) -> Result<(LeastSquares, usize)> {
    let (rows, y): (Vec<Vec<f64>>, Vec<f64>) = t
        .iter()
        .zip(sigma)
        .filter(|(t, _)| **t >= window.0 * (1.0 - 1e-12) && **t <= window.1 * (1.0 + 1e-12))
        .map(|(t, s)| (basis.row(*t), s - 2.0 * t + 1.5 * t.ln()))
        .unzip();
    let n = rows.len();
    Ok((least_squares(&rows, &y)?, n))
}

/// Least squares of `d(t) = sigma(t) - 2t + (3/2) log t` on the basis, with a stability scan over
/// five sub-windows half a decade shorter than `window`, shifted evenly across it.
pub fn fit_expansion(t: &[f64], sigma_lab: &[f64], window: (f64, f64), basis: Basis) -> Result<ExpansionFit> {
    if t.len() != sigma_lab.len() {
        return Err(Error::InvalidInput("times and positions differ in length".into()));
    }
    if !(window.0 >= 50.0 && window.1 > window.0) {
        return Err(Error::InvalidInput(format!("fit window {window:?} must satisfy 50 <= t0 < t1")));
    }
    let (t_min, t_max) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if window.0 < t_min * (1.0 - 1e-12) || window.1 > t_max * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!("fit window {window:?} exceeds the data range [{t_min}, {t_max}]")));
    }
    let (main, samples) = fit_window(t, sigma_lab, window, basis)?;
    let decades = (window.1 / window.0).log10();
    let stability = if decades > 1.0 {
        let width = decades - 0.5;
        let mut windows = Vec::with_capacity(STABILITY_WINDOWS);
        let mut b_values = Vec::with_capacity(STABILITY_WINDOWS);
        for k in 0..STABILITY_WINDOWS {
            let start = window.0 * 10f64.powf(0.5 * k as f64 / (STABILITY_WINDOWS - 1) as f64);
            let w = (start, start * 10f64.powf(width));
            let (fit, _) = fit_window(t, sigma_lab, w, basis)?;
            windows.push(w);
            b_values.push(fit.coef[1]);
        }
        let spread = b_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - b_values.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(Stability { windows, b_values, spread })
    } else {
        None
    };
    let se: Vec<f64> = (0..main.coef.len()).map(|j| main.cov[j][j].sqrt()).collect();
    let half_spread = stability.as_ref().map_or(0.0, |s| 0.5 * s.spread);
    Ok(ExpansionFit {
        window,
        basis: basis.tags(),
        a: main.coef[0],
        b: main.coef[1],
        c: main.coef[2],
        b_uncertainty: se[1].hypot(half_spread),
        standard_errors: se,
        covariance: main.cov,
        coefficients: main.coef,
        rms: main.rms,
        condition: main.condition,
        samples,
        stability,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub t: f64,
    pub error: f64,
    /// Frame coordinate of the supremum.
    pub argsup: f64,
}

/// `E(t) = sup_{x in [-20, 3 sqrt t]} |e^(-x_inf) v(t, x) - V_app(t, x - x_inf)| / (1 + |x - x_inf|)`.
pub fn compare_to_vapp(snapshot: &Snapshot, model: &VappModel, x_inf: f64) -> Result<Comparison> {
    if snapshot.frame != model.frame() {
        return Err(Error::InvalidInput(format!(
            "snapshot frame {} differs from the model frame {}",
            snapshot.frame.tag(),
            model.frame().tag()
        )));
    }
    let t = snapshot.t;
    let hi = 3.0 * t.sqrt();
    if snapshot.grid.left() > -20.0 || snapshot.grid.right() < hi {
        return Err(Error::Domain(format!("snapshot does not cover [-20, {hi}]")));
    }
    let slice = model.slice(t)?;
    let v = snapshot.v_values();
    let scale = (-x_inf).exp();
    let mut best = Comparison { t, error: 0.0, argsup: f64::NAN };
    for (x, v) in snapshot.grid.nodes().zip(&v) {
        if x < -20.0 || x > hi {
            continue;
        }
        let y = x - x_inf;
        let e = (scale * v - model.vapp(&slice, y)).abs() / (1.0 + y.abs());
        if e > best.error || best.argsup.is_nan() {
            best = Comparison { t, error: e, argsup: x };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WDiagnostic {
    pub tau: f64,
    /// `<e0, w>` with `e0` normalized on the window.
    pub coefficient: f64,
    /// `||w - <e0, w> e0||` on the window.
    pub orthogonal_norm: f64,
}

pub const W_WINDOW_MAX: f64 = 4.0;

/// Self-similar diagnostic of a difference field `W(t, y)` sampled on `eta = y / sqrt t in [0, eta_max]`.
pub fn w_diagnostic(t: f64, difference: impl Fn(f64) -> f64, eta_max: f64, spacing: f64) -> Result<WDiagnostic> {
    if !(eta_max > 0.0 && eta_max <= W_WINDOW_MAX) {
        return Err(Error::InvalidInput(format!("eta_max must lie in (0, {W_WINDOW_MAX}], got {eta_max}")));
    }
    let sqrt_t = t.sqrt();
    let grid = Grid1D::new(0.0, eta_max, spacing)?;
    let values: Vec<f64> = grid.nodes().map(|eta| (eta * eta / 8.0).exp() * difference(eta * sqrt_t)).collect();
    let field = HalfLineField::new(grid, values, DecayClass::None, false)?;
    let e0 = eigenpair(0, eta_max, spacing)?.function;
    let proj = project_onto(&field, &e0)?;
    let orth = crate::spectral::inner(&proj.orthogonal, &proj.orthogonal)?.max(0.0).sqrt();
    Ok(WDiagnostic { tau: t.ln(), coefficient: proj.coefficient, orthogonal_norm: orth })
}

/// Applies [`w_diagnostic`] to `e^(-x_inf) v - V_app` of refined-frame snapshots.
pub fn w_diagnostics(snapshots: &[Snapshot], model: &VappModel, x_inf: f64, eta_max: f64) -> Result<Vec<WDiagnostic>> {
    snapshots
        .iter()
        .map(|snap| {
            if snap.frame != model.frame() {
                return Err(Error::InvalidInput("snapshot frame differs from the model frame".into()));
            }
            let t = snap.t;
            let lo = -model.seam(t) + x_inf;
            let hi = eta_max * t.sqrt() + x_inf;
            if snap.grid.left() > lo || snap.grid.right() < hi {
                return Err(Error::Domain(format!("window [{lo}, {hi}] extends beyond the snapshot")));
            }
            let spline = CubicSpline::new(snap.grid, snap.v_values());
            let slice = model.slice(t)?;
            let scale = (-x_inf).exp();
            let spacing = (snap.grid.spacing() / t.sqrt()).clamp(1e-4, 0.01);
            w_diagnostic(t, |y| scale * spline.eval(y + x_inf) - model.vapp(&slice, y), eta_max, spacing)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub c: f64,
    pub window: (f64, f64),
    /// Decay exponent of `|mass(t) - mass(t_end)| ~ A t^-p`.
    pub p: f64,
    pub p_se: f64,
    /// `p -/+ 2 standard errors`.
    pub band: (f64, f64),
    pub amplitude: f64,
    /// RMS of `log remainder` about the power law.
    pub power_rms: f64,
    /// RMS of `log remainder` about the best `A log t / t`.
    pub log_model_rms: f64,
    pub samples: usize,
    /// The window ends within a decade of `t_end` or the remainder reaches the noise floor.
    pub flagged: bool,
}

pub fn probe_rate(trace: &MassTrace, window: (f64, f64)) -> Result<RateFit> {
    let n = trace.times.len();
    if n < 2 || trace.mass.len() != n {
        return Err(Error::InvalidInput("mass trace is empty or inconsistent".into()));
    }
    let t_end = trace.times[n - 1];
    let m_end = trace.mass[n - 1];
    let (ts, rem): (Vec<f64>, Vec<f64>) = trace
        .times
        .iter()
        .zip(&trace.mass)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, m)| (*t, (m - m_end).abs()))
        .unzip();
    if ts.len() < 30 || ts[ts.len() - 1] / ts[0] < 10.0 * (1.0 - 1e-12) {
        return Err(Error::InvalidInput(format!(
            "need at least 30 samples spanning a decade, got {} on {:?}",
            ts.len(),
            window
        )));
    }
    let floor = 1e-12 * m_end.abs().max(f64::MIN_POSITIVE);
    let flagged = window.1 > t_end / 10.0 || rem.iter().any(|r| *r <= floor);
    let fit = loglog_fit(&ts, &rem)?;
    let power_rms =
        (ts.iter().zip(&rem).map(|(t, r)| (r.ln() - fit.intercept - fit.slope * t.ln()).powi(2)).sum::<f64>()
            / ts.len() as f64)
            .sqrt();
    let shifts: Vec<f64> = ts.iter().zip(&rem).map(|(t, r)| r.ln() - (t.ln() / t).ln()).collect();
    let mean = shifts.iter().sum::<f64>() / shifts.len() as f64;
    let log_model_rms = (shifts.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / shifts.len() as f64).sqrt();
    let p = -fit.slope;
    Ok(RateFit {
        c: trace.c,
        window,
        p,
        p_se: fit.slope_se,
        band: (p - 2.0 * fit.slope_se, p + 2.0 * fit.slope_se),
        amplitude: fit.intercept.exp(),
        power_rms,
        log_model_rms,
        samples: ts.len(),
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Nonlinearity;

    use crate::model::THREE_SQRT_PI;
    use crate::vapp::VappSettings;
    use crate::wave::solve_wave;
    use std::sync::Arc;

    fn model() -> VappModel {
        let wave = Arc::new(solve_wave(&Nonlinearity::fisher(), 30.0, 0.0125, 1e-10).unwrap());
        VappModel::new(wave, Nonlinearity::fisher(), VappSettings::default()).unwrap()
    }

    fn synthetic_snapshot(t: f64, frame: Frame, v: impl Fn(f64) -> f64) -> Snapshot {
        let grid = Grid1D::new(-40.0, 8.0 * t.sqrt(), 0.02).unwrap();
        let values = grid.nodes().map(v).collect();
        Snapshot { t, frame, formulation: Formulation::VForm, grid, values }
    }

    #[test]
    fn expansion_fit_recovers_model_data() {
        let t = crate::stats::log_space(2.0, 4.0, 101);
        let sigma: Vec<f64> =
            t.iter().map(|t| 2.0 * t - 1.5 * t.ln() + 1.3 - THREE_SQRT_PI / t.sqrt() + 2.0 / t).collect();
        let fit = fit_expansion(&t, &sigma, (100.0, 1e4), Basis::default()).unwrap();
        assert!((fit.a - 1.3).abs() < 1e-6);
        assert!((fit.b + THREE_SQRT_PI).abs() < 1e-6);
        assert!((fit.c - 2.0).abs() < 1e-6);
        assert!(fit.stability.unwrap().spread < 1e-6);
    }

    proptest::proptest! {
        #[test]
        fn expansion_fit_recovers_arbitrary_coefficients(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -50.0f64..50.0) {
            let t = crate::stats::log_space(2.0, 4.0, 61);
            let sigma: Vec<f64> = t.iter().map(|t| 2.0 * t - 1.5 * t.ln() + a + b / t.sqrt() + c / t).collect();
            let fit = fit_expansion(&t, &sigma, (100.0, 1e4), Basis::default()).unwrap();
            proptest::prop_assert!((fit.a - a).abs() < 1e-7 && (fit.b - b).abs() < 1e-6 && (fit.c - c).abs() < 1e-4);
        }

        #[test]
        fn level_position_moves_with_the_grid(origin in -50.0f64..50.0, center in 2.0f64..8.0, level in 0.05f64..0.95) {
            let profile = |x: f64| 1.0 / (1.0 + (x - center).exp());
            let base = Grid1D::from_len(-10.0, 0.05, 601).unwrap();
            let moved = Grid1D::from_len(origin - 10.0, 0.05, 601).unwrap();
            let u: Vec<f64> = base.nodes().map(profile).collect();
            let p0 = level_position(&base, &u, level).unwrap().position;
            let p1 = level_position(&moved, &u, level).unwrap().position;
            proptest::prop_assert!((p1 - p0 - origin).abs() < 1e-9);
        }
    }

    #[test]
    fn expansion_fit_is_translation_equivariant() {
        let t = crate::stats::log_space(2.0, 4.0, 81);
        let sigma: Vec<f64> = t.iter().map(|t| 2.0 * t - 1.5 * t.ln() - 0.7 - 5.0 / t.sqrt() + (t.ln() / t)).collect();
        let shifted: Vec<f64> = sigma.iter().map(|s| s + 0.375).collect();
        let a = fit_expansion(&t, &sigma, (100.0, 1e4), Basis::default()).unwrap();
        let b = fit_expansion(&t, &shifted, (100.0, 1e4), Basis::default()).unwrap();
        assert!((b.a - a.a - 0.375).abs() < 1e-10);
        assert!((b.b - a.b).abs() < 1e-10 && (b.c - a.c).abs() < 1e-10);
    }

    #[test]
    fn narrow_window_is_ill_conditioned() {
        let t: Vec<f64> = (0..50).map(|j| 1000.0 + j as f64 * 1e-9).collect();
        let sigma: Vec<f64> = t.iter().map(|t| 2.0 * t).collect();
        let err = fit_expansion(&t, &sigma, (1000.0, 1000.0 + 49e-9), Basis::default()).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }), "{err:?}");
    }

    #[test]
    fn alpha_of_exact_diffusive_data() {
        let t = 1e3;
        let snap = synthetic_snapshot(t, Frame::Bramson, |x| 2.0 * x * (-x * x / (4.0 * t)).exp());
        let est = estimate_alpha(&[snap], AlphaMethod::Leading, None).unwrap();
        assert!((est.x_inf - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn alpha_contamination_fades() {
        let errors: Vec<f64> = [1e2, 1e3, 1e4]
            .iter()
            .map(|&t| {
                let snap =
                    synthetic_snapshot(t, Frame::Bramson, |x| x * (-x * x / (4.0 * t)).exp() + 50.0 * x * (-x).exp());
                (estimate_alpha(&[snap], AlphaMethod::Leading, None).unwrap().series[0].alpha - 1.0).abs()
            })
            .collect();
        assert!(errors[1] < errors[0] && errors[2] < errors[1] && errors[2] < 1e-10, "{errors:?}");
    }

    #[test]
    fn matched_alpha_inverts_the_outer_branch() {
        let m = model();
        let t = 1e3;
        let x_inf: f64 = 0.4;
        let slice = m.slice(t).unwrap();
        let snap = synthetic_snapshot(t, Frame::Refined, |x| x_inf.exp() * m.vapp(&slice, x - x_inf));
        let est = estimate_alpha(&[snap], AlphaMethod::Matched, Some(&m)).unwrap();
        assert!((est.x_inf - x_inf).abs() < 1e-9, "{}", est.x_inf);
    }

    #[test]
    fn comparison_of_the_model_with_itself() {
        let m = model();
        let t = 1e3;
        let slice = m.slice(t).unwrap();
        let snap = synthetic_snapshot(t, Frame::Refined, |x| m.vapp(&slice, x));
        assert_eq!(compare_to_vapp(&snap, &m, 0.0).unwrap().error, 0.0);
        let shifted = compare_to_vapp(&snap, &m, 0.1).unwrap();
        assert!(shifted.error > 0.01 && shifted.error < 0.2, "{shifted:?}");
        let wrong = Snapshot { frame: Frame::Bramson, ..snap };
        assert!(compare_to_vapp(&wrong, &m, 0.0).is_err());
    }

    #[test]
    fn w_diagnostic_of_a_pure_mode() {
        let c = eigenpair(0, 4.0, 0.005).unwrap().normalization;
        for &t in &[1e2, 1e4] {
            let d = w_diagnostic(
                t,
                |y| {
                    let eta = y / t.sqrt();
                    c * eta * (-eta * eta / 4.0).exp() / t.sqrt()
                },
                4.0,
                0.005,
            )
            .unwrap();
            assert!((d.coefficient - 1.0 / t.sqrt()).abs() < 1e-9 / t.sqrt(), "{d:?}");
            assert!(d.orthogonal_norm < 1e-8);
        }
        let zero = w_diagnostic(100.0, |_| 0.0, 4.0, 0.01).unwrap();
        assert_eq!((zero.coefficient, zero.orthogonal_norm), (0.0, 0.0));
        assert!(w_diagnostic(100.0, |_| 0.0, 5.0, 0.01).is_err());
    }

    #[test]
    fn probe_rate_of_model_data() {
        let times = crate::stats::log_space(0.0, 6.0, 400);
        let mass = times.iter().map(|t| 5.0 - t.powf(-0.5)).collect();
        let trace = MassTrace { c: 0.0, times, mass };
        let fit = probe_rate(&trace, (100.0, 1e4)).unwrap();
        // The finite t_end leaves a t_end^-1/2 offset in the remainder.
        assert!(fit.p > 0.5 && fit.p < 0.53, "{fit:?}");
        assert!(!fit.flagged);
        let pure = MassTrace {
            c: 0.0,
            times: trace.times.clone(),
            mass: trace.times.iter().map(|t| 5.0 - t.powf(-0.5)).collect(),
        };
        let mut exact = pure.clone();
        exact.times.push(f64::INFINITY);
        exact.mass.push(5.0);
        assert!((probe_rate(&exact, (100.0, 1e4)).unwrap().p - 0.5).abs() < 1e-12);
        assert!(probe_rate(&trace, (100.0, 200.0)).is_err());
    }

    #[test]
    fn reframing_is_a_relabeling() {
        let t = 400.0;
        let snap = synthetic_snapshot(t, Frame::Bramson, |x| x.max(0.0) * (-x * x / (4.0 * t)).exp());
        let r = snap.reframed(Frame::Refined).unwrap();
        let (ub, ur) = (snap.u_values(), r.u_values());
        for i in (0..ub.len()).step_by(97) {
            assert!((ub[i] - ur[i]).abs() <= 1e-12 * ub[i].abs().max(1e-300));
        }
        let delta = THREE_SQRT_PI / t.sqrt();
        assert!((r.grid.left() - snap.grid.left() - delta).abs() < 1e-12);
    }
    use crate::wave::{solve_wave_normalized, Normalization};

    #[test]
    fn half_level_of_the_wave_is_the_origin() {
        let w =
            solve_wave_normalized(&Nonlinearity::fisher(), 30.0, 0.0125, 1e-10, Normalization::HalfAtOrigin).unwrap();
        let grid = Grid1D::new(-20.0, 20.0, 0.05).unwrap();
        for shift in [0.0, 7.0] {
            let values: Vec<f64> = grid.nodes().map(|x| w.eval(x - shift)).collect();
            let c = level_position(&grid, &values, 0.5).unwrap();
            assert!((c.position - shift).abs() < 1e-6, "{c:?}");
            assert!(!c.multiple);
        }
    }

    #[test]
    fn linear_ramp() {
        let grid = Grid1D::new(0.0, 10.0, 0.5).unwrap();
        let values: Vec<f64> = grid.nodes().map(|x| 1.0 - x / 10.0).collect();
        let c = level_position(&grid, &values, 0.25).unwrap();
        assert!((c.position - 7.5).abs() < 1e-12);
    }

    #[test]
    fn rightmost_crossing_is_flagged() {
        let grid = Grid1D::new(0.0, 4.0, 1.0).unwrap();
        let c = level_position(&grid, &[1.0, 0.0, 1.0, 1.0, 0.0], 0.5).unwrap();
        assert!(c.multiple);
        assert!(c.position > 3.0 && c.position < 4.0);
        assert!(matches!(level_position(&grid, &[1.0; 5], 0.5), Err(Error::NoCrossing { .. })));
    }

    #[test]
    fn diffusive_amplitude_is_exact_and_scale_equivariant() {
        let t = 400.0;
        let grid = Grid1D::new(-10.0, 80.0, 0.02).unwrap();
        let v: Vec<f64> = grid.nodes().map(|x| 2.0 * x * (-x * x / (4.0 * t)).exp()).collect();
        let a = diffusive_amplitude(&grid, &v, t, 0.0).unwrap();
        assert!((a.alpha - 2.0).abs() < 1e-12 && a.residual < 1e-12);
        let scaled: Vec<f64> = v.iter().map(|x| 3.5 * x).collect();
        let b = diffusive_amplitude(&grid, &scaled, t, 0.0).unwrap();
        assert!((b.alpha / (3.5 * a.alpha) - 1.0).abs() < 1e-14);
    }
}
