//! Two-zone approximate solution of the weighted equation in the refined frame.
//!
//! Inner zone (`x < x_s(t)`): `V-(t, x) = V0(x + zeta(t))` with `V0 = e^xi phi*`.
//! Outer zone (`x >= x_s(t)`): `V+(t, x) = (x + k) e^(-(x+k)^2/(4t)) + V1((x + k)/sqrt t)`.
//! The seam sits at `x_s(t) = seam_scale * t^gamma`. With `seam_scale = 1` and small `gamma`
//! the seam lies left of `-k`, where `V+` is undefined, so the scale is a parameter.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::interp::CubicSpline;
use crate::model::{Frame, Nonlinearity, THREE_SQRT_PI};
use crate::spectral::{solve_v1_plus, DEFAULT_ETA_MAX};
use crate::wave::{Normalization, WaveProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZetaRule {
    /// Root of `V0(x_s + zeta) = V+(t, x_s)`: the two branches agree exactly at the seam.
    #[default]
    ValueMatch,
    /// `zeta = V+(t, x_s) - x_s - k`, exact only up to the wave-tail remainder.
    TailFormula,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VappSettings {
    pub gamma: f64,
    pub seam_scale: f64,
    pub zeta_rule: ZetaRule,
    pub sigma: f64,
    pub eta_max: f64,
    pub v1_spacing: f64,
    /// Drops `V1` from the outer branch (diagnostic only).
    pub include_v1: bool,
    /// Replaces the Gaussian factor of the outer branch by one (diagnostic only).
    pub include_gaussian: bool,
}

impl Default for VappSettings {
    fn default() -> Self {
        Self {
            gamma: 0.05,
            seam_scale: 8.0,
            zeta_rule: ZetaRule::ValueMatch,
            sigma: -THREE_SQRT_PI,
            eta_max: DEFAULT_ETA_MAX,
            v1_spacing: 0.002,
            include_v1: true,
            include_gaussian: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VappModel {
    settings: VappSettings,
    wave: Arc<WaveProfile>,
    nonlinearity: Nonlinearity,
    q0: f64,
    k: f64,
    v1: CubicSpline,
    v1_slope_at_zero: f64,
}

/// Model quantities frozen at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slice {
    pub t: f64,
    pub seam: f64,
    pub zeta: f64,
    sqrt_t: f64,
}

impl VappModel {
    pub fn new(wave: Arc<WaveProfile>, nonlinearity: Nonlinearity, settings: VappSettings) -> Result<Self> {
        if !(settings.gamma > 0.0 && settings.gamma < 0.1) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0, 1/10), got {}", settings.gamma)));
        }
        if !(settings.seam_scale > 0.0) {
            return Err(Error::InvalidInput("seam scale must be positive".into()));
        }
        if wave.linear_rate() != 1.0 || nonlinearity.derivative_at_zero() != 1.0 {
            return Err(Error::InvalidInput("the approximate solution assumes f'(0) = 1".into()));
        }
        if wave.normalization() != Normalization::UnitTail {
            return Err(Error::InvalidInput("the approximate solution needs the unit-tail profile".into()));
        }
        let q0 = 1.0;
        let v1 = solve_v1_plus(settings.sigma, q0, settings.eta_max, settings.v1_spacing)?;
        let v1_slope_at_zero = crate::spectral::slope_at_origin(&v1.field);
        let mut values = v1.field.values;
        if !settings.include_v1 {
            values.iter_mut().for_each(|v| *v = 0.0);
        }
        let k = wave.k();
        Ok(Self { settings, wave, nonlinearity, q0, k, v1: CubicSpline::new(v1.field.grid, values), v1_slope_at_zero })
    }

    pub fn settings(&self) -> &VappSettings {
        &self.settings
    }

    pub fn gamma(&self) -> f64 {
        self.settings.gamma
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn x0(&self) -> f64 {
        self.k
    }

    pub fn q0(&self) -> f64 {
        self.q0
    }

    pub fn sigma(&self) -> f64 {
        self.settings.sigma
    }

    pub fn wave(&self) -> &WaveProfile {
        &self.wave
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    /// `V1'(0)` of the tabulated outer correction.
    pub fn v1_slope_at_zero(&self) -> f64 {
        self.v1_slope_at_zero
    }

    pub fn frame(&self) -> Frame {
        Frame::Refined
    }

    pub fn seam(&self, t: f64) -> f64 {
        self.settings.seam_scale * t.powf(self.settings.gamma)
    }

    fn v1(&self, eta: f64) -> f64 {
        if eta >= self.settings.eta_max {
            0.0
        } else {
            self.v1.eval(eta.max(0.0))
        }
    }

    fn v1_derivative(&self, eta: f64) -> f64 {
        if eta >= self.settings.eta_max {
            0.0
        } else {
            self.v1.derivative(eta.max(0.0))
        }
    }

    fn outer(&self, t: f64, sqrt_t: f64, x: f64) -> f64 {
        let s = x + self.k;
        let gauss = if self.settings.include_gaussian { (-s * s / (4.0 * t)).exp() } else { 1.0 };
        s * gauss + self.v1(s / sqrt_t)
    }

    fn outer_derivative(&self, t: f64, sqrt_t: f64, x: f64) -> f64 {
        let s = x + self.k;
        let main =
            if self.settings.include_gaussian { (-s * s / (4.0 * t)).exp() * (1.0 - s * s / (2.0 * t)) } else { 1.0 };
        main + self.v1_derivative(s / sqrt_t) / sqrt_t
    }

    pub fn slice(&self, t: f64) -> Result<Slice> {
        if !(t >= 1.0) {
            return Err(Error::Domain(format!("time {t} precedes t = 1")));
        }
        let seam = self.seam(t);
        if seam < -self.k {
            return Err(Error::Domain(format!("seam {seam} lies left of -k = {}; increase the seam scale", -self.k)));
        }
        let sqrt_t = t.sqrt();
        let target = self.outer(t, sqrt_t, seam);
        let zeta = match self.settings.zeta_rule {
            ZetaRule::TailFormula => {
                let s = seam + self.k;
                let gauss = if self.settings.include_gaussian { (-s * s / (4.0 * t)).exp() } else { 1.0 };
                s * (gauss - 1.0) + self.v1(s / sqrt_t)
            }
            ZetaRule::ValueMatch => self.match_value(seam, target)?,
        };
        Ok(Slice { t, seam, zeta, sqrt_t })
    }

    /// Solves `V0(seam + z) = target`; `V0` is increasing.
    fn match_value(&self, seam: f64, target: f64) -> Result<f64> {
        let f = |z: f64| self.wave.weighted(seam + z) - target;
        let (mut lo, mut hi) = (-seam - 40.0, 40.0);
        if f(lo) > 0.0 || f(hi) < 0.0 {
            return Err(Error::Domain(format!("cannot match V0 to {target} near the seam {seam}")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn zeta_of_t(&self, t: f64) -> Result<f64> {
        Ok(self.slice(t)?.zeta)
    }

    pub fn vminus(&self, s: &Slice, x: f64) -> f64 {
        self.wave.weighted(x + s.zeta)
    }

    pub fn vminus_derivative(&self, s: &Slice, x: f64) -> f64 {
        self.wave.weighted_derivative(x + s.zeta)
    }

    pub fn vplus(&self, s: &Slice, x: f64) -> Result<f64> {
        if x < -self.k {
            return Err(Error::Domain(format!("V+ needs x >= -k = {}, got {x}", -self.k)));
        }
        Ok(self.outer(s.t, s.sqrt_t, x))
    }

    pub fn vplus_derivative(&self, s: &Slice, x: f64) -> Result<f64> {
        if x < -self.k {
            return Err(Error::Domain(format!("V+ needs x >= -k = {}, got {x}", -self.k)));
        }
        Ok(self.outer_derivative(s.t, s.sqrt_t, x))
    }

    pub fn vapp(&self, s: &Slice, x: f64) -> f64 {
        if x < s.seam {
            self.vminus(s, x)
        } else {
            self.outer(s.t, s.sqrt_t, x)
        }
    }

    /// `e^(-y) V_app(t, y)` at frame coordinate `y`, evaluated without overflow for `y << 0`.
    pub fn uapp_frame(&self, s: &Slice, y: f64) -> f64 {
        if y < s.seam {
            s.zeta.exp() * self.wave.eval(y + s.zeta)
        } else {
            (-y).exp() * self.outer(s.t, s.sqrt_t, y)
        }
    }

    pub fn eval_vminus(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.vminus(&self.slice(t)?, x))
    }

    pub fn eval_vplus(&self, t: f64, x: f64) -> Result<f64> {
        self.vplus(&self.slice(t)?, x)
    }

    pub fn eval_vapp(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.vapp(&self.slice(t)?, x))
    }

    /// `u_app` at lab coordinate `x_lab`, using the refined frame.
    pub fn eval_uapp(&self, t: f64, x_lab: f64) -> Result<f64> {
        let y = x_lab - Frame::Refined.shift(t);
        Ok(self.uapp_frame(&self.slice(t)?, y))
    }

    /// Grid `[-30, lambda sqrt t]` with the seam on a node and spacing `min(0.01, x_s / 100)`.
    pub fn residual_grid(&self, t: f64, lambda: f64) -> Result<Grid1D> {
        let seam = self.seam(t);
        let h = 0.01f64.min(seam / 100.0);
        let left_nodes = ((seam + 30.0) / h).ceil() as usize;
        let right_nodes = ((lambda * t.sqrt() - seam) / h).ceil().max(1.0) as usize;
        Grid1D::from_len(seam - left_nodes as f64 * h, h, left_nodes + right_nodes + 1)
    }

    /// Residual of `v_t - v_xx - a(t)(v - v_x) - e^x (f(e^-x v) - e^-x v)` applied to `V_app`,
    /// with `a(t) = 3/(2t) + sigma/(2 t^(3/2))`.
    pub fn residual_nl(&self, t: f64, grid: &Grid1D) -> Result<NlResidual> {
        if t < 10.0 {
            return Err(Error::Domain(format!("residual study needs t >= 10, got {t}")));
        }
        let seam = self.seam(t);
        let max_spacing = 0.01f64.min(seam / 100.0) * (1.0 + 1e-9);
        if grid.spacing() > max_spacing {
            return Err(Error::InvalidInput(format!(
                "residual grid spacing {} exceeds {}",
                grid.spacing(),
                max_spacing
            )));
        }
        let seam_index = grid
            .nearest(seam)
            .filter(|&i| (grid.x(i) - seam).abs() <= 1e-9 * grid.spacing().max(seam.abs()))
            .ok_or_else(|| Error::InvalidInput(format!("seam {seam} is not a grid node")))?;
        if grid.x(0) < -self.k.abs() - 1e3 || seam_index == 0 || seam_index + 1 >= grid.len() {
            return Err(Error::InvalidInput("residual grid must extend on both sides of the seam".into()));
        }

        let dt = 1e-4 * t;
        let now = self.slice(t)?;
        let before = self.slice(t - dt)?;
        let after = self.slice(t + dt)?;
        let a = 1.5 / t + self.settings.sigma / (2.0 * t.powf(1.5));
        let h = grid.spacing();
        let nl = &self.nonlinearity;

        let nodes = |branch: &dyn Fn(&Slice, f64) -> f64, range: std::ops::Range<usize>| {
            let mut total = Vec::with_capacity(range.len());
            let mut absorption = Vec::with_capacity(range.len());
            for i in range {
                let x = grid.x(i);
                let v = branch(&now, x);
                let vt = (branch(&after, x) - branch(&before, x)) / (2.0 * dt);
                let vp = branch(&now, x + h);
                let vm = branch(&now, x - h);
                let vxx = (vp - 2.0 * v + vm) / (h * h);
                let vx = (vp - vm) / (2.0 * h);
                let u = (-x).exp() * v;
                let abs_term = -x.exp() * (nl.eval(u) - u);
                absorption.push(abs_term);
                total.push(vt - vxx - a * (v - vx) + abs_term);
            }
            (total, absorption)
        };
        let inner_branch = |s: &Slice, x: f64| self.vminus(s, x);
        let outer_branch = |s: &Slice, x: f64| self.outer(s.t, s.sqrt_t, x);
        let (inner, inner_abs) = nodes(&inner_branch, 0..seam_index + 1);
        let (outer, outer_abs) = nodes(&outer_branch, seam_index..grid.len());

        let jump = self.outer_derivative(t, now.sqrt_t, seam) - self.vminus_derivative(&now, seam);
        Ok(NlResidual {
            t,
            grid: *grid,
            seam_index,
            zeta: now.zeta,
            inner,
            inner_absorption: inner_abs,
            outer,
            outer_absorption: outer_abs,
            jump,
        })
    }
}

/// Residual split at the seam; the seam node appears in both halves.
#[derive(Debug, Clone)]
pub struct NlResidual {
    pub t: f64,
    pub grid: Grid1D,
    pub seam_index: usize,
    pub zeta: f64,
    /// Residual of `V-` on nodes `0..=seam_index`.
    pub inner: Vec<f64>,
    pub inner_absorption: Vec<f64>,
    /// Residual of `V+` on nodes `seam_index..len`.
    pub outer: Vec<f64>,
    pub outer_absorption: Vec<f64>,
    /// `dV+/dx - dV-/dx` at the seam.
    pub jump: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub t: f64,
    pub seam: f64,
    pub zeta: f64,
    /// `sup |NL|` over `0 < x <= x_s`.
    pub sup_inner: f64,
    /// `sup |NL| e^((x+k)^2/((4+gamma) t))` over `x_s < x <= lambda sqrt t`.
    pub sup_outer_weighted: f64,
    /// Same weighted sup with the absorption term left out.
    pub sup_outer_linear_weighted: f64,
    pub jump: f64,
    /// `sup_{x<0} |NL| e^-x t^(1-3 gamma)`.
    pub left_constant: f64,
}

impl NlResidual {
    pub fn row(&self, model: &VappModel) -> ResidualRow {
        let g = &self.grid;
        let gamma = model.gamma();
        let k = model.k();
        let mut sup_inner = 0.0f64;
        let mut left = 0.0f64;
        for (i, r) in self.inner.iter().enumerate() {
            let x = g.x(i);
            if x > 0.0 {
                sup_inner = sup_inner.max(r.abs());
            } else if x < 0.0 {
                left = left.max(r.abs() * (-x).exp());
            }
        }
        let (mut outer, mut outer_linear) = (0.0f64, 0.0f64);
        for (j, (r, ab)) in self.outer.iter().zip(&self.outer_absorption).enumerate().skip(1) {
            let x = g.x(self.seam_index + j);
            let w = ((x + k).powi(2) / ((4.0 + gamma) * self.t)).exp();
            outer = outer.max(r.abs() * w);
            outer_linear = outer_linear.max((r - ab).abs() * w);
        }
        ResidualRow {
            t: self.t,
            seam: g.x(self.seam_index),
            zeta: self.zeta,
            sup_inner,
            sup_outer_weighted: outer,
            sup_outer_linear_weighted: outer_linear,
            jump: self.jump,
            left_constant: left * self.t.powf(1.0 - 3.0 * gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStudy {
    pub rows: Vec<ResidualRow>,
    pub inner_slope: f64,
    pub jump_slope: f64,
    pub outer_slope: f64,
    pub outer_linear_slope: f64,
}

/// Residual rows at each time and log-log slopes of the three scalings.
pub fn residual_study(model: &VappModel, times: &[f64], lambda: f64) -> Result<ResidualStudy> {
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let grid = model.residual_grid(t, lambda)?;
        rows.push(model.residual_nl(t, &grid)?.row(model));
    }
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let slope = |f: &dyn Fn(&ResidualRow) -> f64| -> Result<f64> {
        let ys: Vec<f64> = rows.iter().map(f).collect();
        Ok(crate::stats::loglog_fit(&ts, &ys)?.slope)
    };
    Ok(ResidualStudy {
        inner_slope: slope(&|r| r.sup_inner)?,
        jump_slope: slope(&|r| r.jump)?,
        outer_slope: slope(&|r| r.sup_outer_weighted)?,
        outer_linear_slope: slope(&|r| r.sup_outer_linear_weighted)?,
        rows,
    })
}
