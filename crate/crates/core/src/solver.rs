//! Long-horizon integration of the front problem in a moving frame.
//!
//! The frame coordinate is `x = x_lab - s(t)`. The u-form solves
//! `u_t = u_xx + s'(t) u_x + f(u)`, the v-form solves the same problem for `v = e^x u`:
//! `v_t = v_xx - a v_x + a v + e^x (f(e^-x v) - e^-x v)` with `a = 2 - s'(t)`.
//!
//! Each step is Crank-Nicolson on the linear part (diffusion, drift and the linear reaction
//! `f'(0) u`) with the nonlinear remainder treated explicitly by a predictor-corrector pair
//! that reuses one factorization. Steady states of the scheme are exact discrete steady states.

use serde::{Deserialize, Serialize};

use crate::analysis::{diffusive_amplitude, level_position, DIFFUSIVE_WINDOW};
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::model::{bramson_shift, Frame, InitialCondition, Nonlinearity};
use crate::tridiag::{Tridiag, TridiagLu};

pub const CHECKPOINT_VERSION: u32 = 1;
const ROUNDOFF_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    UForm,
    VForm,
}

impl Formulation {
    pub fn tag(&self) -> &'static str {
        match self {
            Formulation::UForm => "u_form",
            Formulation::VForm => "v_form",
        }
    }
}

/// `dt(t) = min(dt_max, courant dx^2 (1 + t / ramp_time))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtSchedule {
    pub courant: f64,
    pub ramp_time: f64,
    pub dt_max: f64,
}

impl Default for DtSchedule {
    fn default() -> Self {
        Self { courant: 0.25, ramp_time: 1.0, dt_max: 0.05 }
    }
}

impl DtSchedule {
    pub fn dt(&self, t: f64, dx: f64) -> f64 {
        self.dt_max.min(self.courant * dx * dx * (1.0 + t / self.ramp_time))
    }
}

/// Domain edges follow the Bramson position `c(t)` expressed in the frame:
/// left edge near `c - (left_margin + 2 log t)`, right edge at least `c + lambda sqrt t + right_margin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainPolicy {
    pub left_margin: f64,
    pub lambda: f64,
    pub right_margin: f64,
    pub block_nodes: usize,
}

impl Default for DomainPolicy {
    fn default() -> Self {
        Self { left_margin: 40.0, lambda: 6.0, right_margin: 20.0, block_nodes: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub frame: Frame,
    pub formulation: Formulation,
    pub dx: f64,
    pub dt: DtSchedule,
    pub domain: DomainPolicy,
    pub t_start: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub checkpoint_period: Option<f64>,
    pub levels: Vec<f64>,
    /// Trace rows are written at `t = 10^(j / trace_per_decade)`.
    pub trace_per_decade: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            frame: Frame::Bramson,
            formulation: Formulation::VForm,
            dx: 0.02,
            dt: DtSchedule::default(),
            domain: DomainPolicy::default(),
            t_start: 1.0,
            t_end: 1e3,
            snapshot_times: Vec::new(),
            checkpoint_period: None,
            levels: vec![0.5],
            trace_per_decade: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return bad(format!("dx must be positive, got {}", self.dx));
        }
        let dt = &self.dt;
        if !(dt.courant > 0.0 && dt.ramp_time > 0.0 && dt.dt_max > 0.0) {
            return bad("dt schedule entries must be positive".into());
        }
        let d = &self.domain;
        if !(d.lambda >= 6.0) {
            return bad(format!("lambda must be at least 6, got {}", d.lambda));
        }
        if !(d.left_margin > 0.0 && d.right_margin >= 0.0) || d.block_nodes == 0 {
            return bad("domain margins must be positive and the block size nonzero".into());
        }
        if !(self.t_start >= 1.0 && self.t_end > self.t_start && self.t_end.is_finite()) {
            return bad(format!("need 1 <= t_start < t_end, got {} and {}", self.t_start, self.t_end));
        }
        if let Some(t) = self.snapshot_times.iter().find(|t| !(**t >= self.t_start)) {
            return bad(format!("snapshot time {t} precedes t_start"));
        }
        if self.snapshot_times.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("snapshot times must increase".into());
        }
        if let Some(p) = self.checkpoint_period {
            if !(p > 0.0) {
                return bad("checkpoint period must be positive".into());
            }
        }
        if let Some(s) = self.levels.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
            return bad(format!("level {s} outside (0, 1)"));
        }
        if self.trace_per_decade == 0 {
            return bad("trace_per_decade must be positive".into());
        }
        if self.formulation == Formulation::VForm {
            let pulled_frame = match self.frame {
                Frame::Bramson | Frame::Refined => true,
                Frame::Linear { speed } => speed == 2.0,
                Frame::Rest => false,
            };
            if !pulled_frame {
                return bad("the v-form needs a frame moving at speed 2 (bramson, refined or linear(2))".into());
            }
        }
        Ok(())
    }

    /// Bramson position `2t - (3/2) log t` in frame coordinates.
    pub fn center(&self, t: f64) -> f64 {
        bramson_shift(t) - self.frame.shift(t)
    }
}

/// Integrator state; `left_value`/`right_value` are the frozen boundary values of `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub steps: u64,
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub left_value: f64,
    pub right_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub frame: Frame,
    pub formulation: Formulation,
    /// Frame coordinates.
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn u_values(&self) -> Vec<f64> {
        match self.formulation {
            Formulation::UForm => self.values.clone(),
            Formulation::VForm => self.grid.nodes().zip(&self.values).map(|(x, v)| weight_out(x, *v)).collect(),
        }
    }

    /// `e^x u` in frame coordinates.
    pub fn v_values(&self) -> Vec<f64> {
        match self.formulation {
            Formulation::VForm => self.values.clone(),
            Formulation::UForm => self.grid.nodes().zip(&self.values).map(|(x, u)| weight_in(x, *u)).collect(),
        }
    }
}

fn weight_in(x: f64, u: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        x.exp() * u
    }
}

fn weight_out(x: f64, v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        (-x).exp() * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub level: f64,
    pub position_frame: f64,
    pub position_lab: f64,
    /// Diffusive-window amplitude of `e^(x - c) u`.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Caller-supplied fingerprint of everything that determines the trajectory.
    pub tag: String,
    pub frame: Frame,
    pub formulation: Formulation,
    pub state: State,
}

/// Receives run output as it is produced.
pub trait RunSink {
    fn trace(&mut self, _row: &TraceRow) -> Result<()> {
        Ok(())
    }
    fn snapshot(&mut self, _snapshot: &Snapshot) -> Result<()> {
        Ok(())
    }
    fn checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub trace: Vec<TraceRow>,
    pub snapshots: Vec<Snapshot>,
    pub checkpoints: Vec<Checkpoint>,
}

impl RunSink for MemorySink {
    fn trace(&mut self, row: &TraceRow) -> Result<()> {
        self.trace.push(*row);
        Ok(())
    }
    fn snapshot(&mut self, snapshot: &Snapshot) -> Result<()> {
        self.snapshots.push(snapshot.clone());
        Ok(())
    }
    fn checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        self.checkpoints.push(checkpoint.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub t_final: f64,
    pub steps: u64,
    pub nodes: usize,
    pub trace_rows: usize,
    pub snapshots: usize,
    pub checkpoints: usize,
}

#[derive(Debug, Default, Clone)]
struct Workspace {
    matrix: Tridiag,
    lu: TridiagLu,
    base: Vec<f64>,
    rhs: Vec<f64>,
    n0: Vec<f64>,
    n1: Vec<f64>,
    exp_x: Vec<f64>,
    exp_minus_x: Vec<f64>,
}

pub struct Solver {
    config: SolverConfig,
    nl: Nonlinearity,
    tag: String,
    state: State,
    ws: Workspace,
}

impl Solver {
    pub fn new(config: SolverConfig, nl: Nonlinearity, initial: &InitialCondition, tag: String) -> Result<Self> {
        config.validate()?;
        initial.validate()?;
        check_formulation(&config, &nl)?;
        let t0 = config.t_start;
        let h = config.dx;
        let s0 = config.frame.shift(t0);
        let radius = initial.effective_radius();
        let c = config.center(t0);
        let d = &config.domain;
        let left = (c - d.left_margin - 2.0 * t0.ln()).min(-radius - 1.0 - s0);
        let right = (c + d.lambda * t0.sqrt() + d.right_margin).max(radius + 1.0 - s0);
        let left = (left / h).floor() * h;
        let len = ((right - left) / h).ceil() as usize + 1;
        let grid = Grid1D::from_len(left, h, len)?;
        let u: Vec<f64> = grid.nodes().map(|x| initial.eval(x + s0)).collect();
        let (left_value, right_value) = (u[0], u[len - 1]);
        let values = match config.formulation {
            Formulation::UForm => u,
            Formulation::VForm => grid.nodes().zip(&u).map(|(x, u)| weight_in(x, *u)).collect(),
        };
        let state = State { t: t0, steps: 0, grid, values, left_value, right_value };
        let mut solver = Self { config, nl, tag, state, ws: Workspace::default() };
        solver.refresh_weights();
        Ok(solver)
    }

    pub fn from_checkpoint(
        config: SolverConfig,
        nl: Nonlinearity,
        checkpoint: Checkpoint,
        tag: String,
    ) -> Result<Self> {
        config.validate()?;
        check_formulation(&config, &nl)?;
        if checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", checkpoint.version)));
        }
        if checkpoint.tag != tag {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written by a different configuration ({} vs {tag})",
                checkpoint.tag
            )));
        }
        if checkpoint.frame != config.frame || checkpoint.formulation != config.formulation {
            return Err(Error::Checkpoint("checkpoint frame or formulation differs from the configuration".into()));
        }
        let state = checkpoint.state;
        if state.values.len() != state.grid.len() || (state.grid.spacing() - config.dx).abs() > 1e-15 * config.dx {
            return Err(Error::Checkpoint("checkpoint grid is inconsistent with the configuration".into()));
        }
        if !(state.t < config.t_end) {
            return Err(Error::Checkpoint(format!("checkpoint time {} is not before t_end {}", state.t, config.t_end)));
        }
        let mut solver = Self { config, nl, tag, state, ws: Workspace::default() };
        solver.refresh_weights();
        Ok(solver)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            t: self.state.t,
            frame: self.config.frame,
            formulation: self.config.formulation,
            grid: self.state.grid,
            values: self.state.values.clone(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            tag: self.tag.clone(),
            frame: self.config.frame,
            formulation: self.config.formulation,
            state: self.state.clone(),
        }
    }

    fn refresh_weights(&mut self) {
        if self.config.formulation == Formulation::VForm {
            let g = self.state.grid;
            self.ws.exp_x = g.nodes().map(f64::exp).collect();
            self.ws.exp_minus_x = g.nodes().map(|x| (-x).exp()).collect();
        }
    }

    fn nonlinear(&self, w: &[f64], out: &mut [f64]) {
        let nl = &self.nl;
        match self.config.formulation {
            Formulation::UForm => {
                let r = nl.derivative_at_zero();
                for (o, u) in out.iter_mut().zip(w) {
                    *o = nl.eval(*u) - r * u;
                }
            }
            Formulation::VForm => {
                let (ex, emx) = (&self.ws.exp_x, &self.ws.exp_minus_x);
                for i in 0..w.len() {
                    let u = emx[i] * w[i];
                    let term = ex[i] * (nl.eval(u) - u);
                    out[i] = if term.is_finite() { term } else { 0.0 };
                }
            }
        }
    }

    /// One step of length `dt`; the domain is left unchanged.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let n = self.state.grid.len();
        let h = self.config.dx;
        let t = self.state.t;
        let tm = t + 0.5 * dt;
        let rate = self.config.frame.shift_rate(tm);
        let v_form = self.config.formulation == Formulation::VForm;
        let (drift, reaction) = if v_form {
            let a = 2.0 - rate;
            (-a, a)
        } else {
            (rate, self.nl.derivative_at_zero())
        };
        let ih2 = 1.0 / (h * h);
        let lo = ih2 - drift / (2.0 * h);
        let di = -2.0 * ih2 + reaction;
        let up = ih2 + drift / (2.0 * h);
        // Robin closure v_x = rho v from the diffusive tail y e^(-y^2/(4t)).
        let (edge_lo, edge_di) = if v_form {
            let y = self.state.grid.x(n - 1) - self.config.center(tm);
            let rho = 1.0 / y - y / (2.0 * tm);
            let a = reaction;
            (2.0 * ih2, (-2.0 + 2.0 * h * rho) * ih2 - a * rho + a)
        } else {
            (0.0, 0.0)
        };
        let half = 0.5 * dt;

        let ws = &mut self.ws;
        ws.matrix.resize(n);
        for i in 1..n - 1 {
            ws.matrix.lower[i] = -half * lo;
            ws.matrix.diag[i] = 1.0 - half * di;
            ws.matrix.upper[i] = -half * up;
        }
        ws.matrix.diag[0] = 1.0;
        ws.matrix.upper[0] = 0.0;
        if v_form {
            ws.matrix.lower[n - 1] = -half * edge_lo;
            ws.matrix.diag[n - 1] = 1.0 - half * edge_di;
        } else {
            ws.matrix.lower[n - 1] = 0.0;
            ws.matrix.diag[n - 1] = 1.0;
        }
        ws.lu.refactor(&ws.matrix)?;

        let w = &self.state.values;
        ws.base.resize(n, 0.0);
        for i in 1..n - 1 {
            ws.base[i] = w[i] + half * (lo * w[i - 1] + di * w[i] + up * w[i + 1]);
        }
        let left_bc = if v_form { self.state.grid.x(0).exp() * self.state.left_value } else { self.state.left_value };
        ws.base[0] = left_bc;
        ws.base[n - 1] =
            if v_form { w[n - 1] + half * (edge_lo * w[n - 2] + edge_di * w[n - 1]) } else { self.state.right_value };

        let mut n0 = std::mem::take(&mut self.ws.n0);
        let mut n1 = std::mem::take(&mut self.ws.n1);
        let mut rhs = std::mem::take(&mut self.ws.rhs);
        n0.resize(n, 0.0);
        n1.resize(n, 0.0);
        rhs.resize(n, 0.0);
        self.nonlinear(&self.state.values, &mut n0);
        let last = if v_form { n } else { n - 1 };
        rhs.copy_from_slice(&self.ws.base);
        for i in 1..last {
            rhs[i] += dt * n0[i];
        }
        self.ws.lu.solve(&mut rhs);
        self.nonlinear(&rhs, &mut n1);
        rhs.copy_from_slice(&self.ws.base);
        for i in 1..last {
            rhs[i] += half * (n0[i] + n1[i]);
        }
        self.ws.lu.solve(&mut rhs);

        let t_new = t + dt;
        self.check(&rhs, t_new)?;
        std::mem::swap(&mut self.state.values, &mut rhs);
        self.ws.n0 = n0;
        self.ws.n1 = n1;
        self.ws.rhs = rhs;
        self.state.t = t_new;
        self.state.steps += 1;
        Ok(())
    }

    fn check(&self, w: &[f64], t: f64) -> Result<()> {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NanDetected { t });
        }
        let violation = |detail: String| Err(Error::InvariantViolation { t, detail });
        match self.config.formulation {
            Formulation::UForm => {
                let (min, max) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
                if min < -ROUNDOFF_SLACK || max > 1.0 + ROUNDOFF_SLACK {
                    return violation(format!("u left [0, 1]: min {min:e}, max {max}"));
                }
            }
            Formulation::VForm => {
                // The bulk of e^-x v settles at 1 + dx^2/12 (the discrete Laplacian of e^x), so only
                // the sign is checked here.
                if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| **v < -ROUNDOFF_SLACK) {
                    return violation(format!("v = {v:e} at node {i}"));
                }
            }
        }
        Ok(())
    }

    /// Extends or truncates the domain so it follows the policy at the current time.
    pub fn maintain_domain(&mut self) -> Result<()> {
        let t = self.state.t;
        let c = self.config.center(t);
        let d = self.config.domain;
        let h = self.config.dx;
        let block = d.block_nodes;
        let target_left = c - d.left_margin - 2.0 * t.ln();
        let target_right = c + d.lambda * t.sqrt() + d.right_margin;
        let v_form = self.config.formulation == Formulation::VForm;
        let mut changed = false;

        while self.state.grid.right() < target_right {
            let g = self.state.grid;
            let grown = g.extended(0, block);
            let n = g.len();
            let (x_last, w_last) = (g.x(n - 1), self.state.values[n - 1]);
            let y_last = x_last - c;
            for i in n..grown.len() {
                let value = if v_form {
                    let y = grown.x(i) - c;
                    if y_last > 0.0 && w_last > 0.0 {
                        w_last * (y / y_last) * (-(y * y - y_last * y_last) / (4.0 * t)).exp()
                    } else {
                        0.0
                    }
                } else {
                    self.state.right_value
                };
                self.state.values.push(value);
            }
            self.state.grid = grown;
            changed = true;
        }
        while self.state.grid.left() > target_left {
            let g = self.state.grid;
            let grown = g.extended(block, 0);
            let fill: Vec<f64> = (0..block)
                .map(|i| if v_form { weight_in(grown.x(i), self.state.left_value) } else { self.state.left_value })
                .collect();
            self.state.values.splice(0..0, fill);
            self.state.grid = grown;
            changed = true;
        }
        while self.state.grid.left() + block as f64 * h <= target_left {
            self.state.grid = self.state.grid.truncated_left(block)?;
            self.state.values.drain(0..block);
            let (x0, w0) = (self.state.grid.x(0), self.state.values[0]);
            self.state.left_value = if v_form { weight_out(x0, w0) } else { w0 };
            changed = true;
        }
        if changed {
            self.refresh_weights();
        }
        Ok(())
    }

    /// Trace rows at the current time.
    pub fn trace_rows(&self) -> Result<Vec<TraceRow>> {
        if self.config.levels.is_empty() {
            return Ok(Vec::new());
        }
        let snap = self.snapshot();
        let u = snap.u_values();
        let t = snap.t;
        let c = self.config.center(t);
        let sqrt_t = t.sqrt();
        let (lo, hi) = (c + DIFFUSIVE_WINDOW.0 * sqrt_t, c + DIFFUSIVE_WINDOW.1 * sqrt_t);
        let vb: Vec<f64> = snap
            .grid
            .nodes()
            .zip(&u)
            .map(|(x, u)| if x >= lo && x <= hi { weight_in(x - c, *u) } else { 0.0 })
            .collect();
        let amplitude = diffusive_amplitude(&snap.grid, &vb, t, c).map(|a| a.alpha).unwrap_or(f64::NAN);
        let shift = self.config.frame.shift(t);
        self.config
            .levels
            .iter()
            .map(|&level| {
                let p = level_position(&snap.grid, &u, level)?.position;
                Ok(TraceRow { t, level, position_frame: p, position_lab: p + shift, amplitude })
            })
            .collect()
    }

    /// Integrates to `t_end`, reporting through `sink`. A fresh solver also reports its initial time.
    pub fn run(&mut self, sink: &mut dyn RunSink) -> Result<RunSummary> {
        let mut summary = RunSummary {
            t_final: self.state.t,
            steps: self.state.steps,
            nodes: self.state.grid.len(),
            trace_rows: 0,
            snapshots: 0,
            checkpoints: 0,
        };
        let fresh = self.state.steps == 0;
        if fresh {
            self.maintain_domain()?;
            if is_trace_time(self.state.t, self.config.trace_per_decade) {
                for row in self.trace_rows()? {
                    sink.trace(&row)?;
                    summary.trace_rows += 1;
                }
            }
            if self.config.snapshot_times.contains(&self.state.t) {
                sink.snapshot(&self.snapshot())?;
                summary.snapshots += 1;
            }
        }
        let t_end = self.config.t_end;
        while self.state.t < t_end {
            let t = self.state.t;
            let next_trace = next_trace_time(t, self.config.trace_per_decade);
            let next_snapshot = self.config.snapshot_times.iter().copied().find(|s| *s > t).unwrap_or(f64::INFINITY);
            let next_checkpoint = self.config.checkpoint_period.map(|p| next_multiple(t, p)).unwrap_or(f64::INFINITY);
            let landing = next_trace.min(next_snapshot).min(next_checkpoint).min(t_end);
            let dt = self.config.dt.dt(t, self.config.dx);
            if t + dt >= landing {
                self.step(landing - t)?;
                self.state.t = landing;
            } else {
                self.step(dt)?;
            }
            self.maintain_domain()?;
            let now = self.state.t;
            if now == landing {
                if now == next_trace {
                    for row in self.trace_rows()? {
                        sink.trace(&row)?;
                        summary.trace_rows += 1;
                    }
                }
                if now == next_snapshot {
                    sink.snapshot(&self.snapshot())?;
                    summary.snapshots += 1;
                }
                if now == next_checkpoint {
                    sink.checkpoint(&self.checkpoint())?;
                    summary.checkpoints += 1;
                }
            }
        }
        summary.t_final = self.state.t;
        summary.steps = self.state.steps;
        summary.nodes = self.state.grid.len();
        Ok(summary)
    }
}

fn check_formulation(config: &SolverConfig, nl: &Nonlinearity) -> Result<()> {
    if config.formulation == Formulation::VForm && nl.derivative_at_zero() != 1.0 {
        return Err(Error::InvalidInput("the v-form weight e^x assumes f'(0) = 1".into()));
    }
    Ok(())
}

fn trace_time(j: i64, per_decade: u32) -> f64 {
    10f64.powf(j as f64 / per_decade as f64)
}

fn is_trace_time(t: f64, per_decade: u32) -> bool {
    let j = (t.log10() * per_decade as f64).round() as i64;
    trace_time(j, per_decade) == t
}

/// Smallest lattice time strictly after `t`.
fn next_trace_time(t: f64, per_decade: u32) -> f64 {
    let mut j = (t.log10() * per_decade as f64).floor() as i64 - 1;
    while trace_time(j, per_decade) <= t {
        j += 1;
    }
    trace_time(j, per_decade)
}

fn next_multiple(t: f64, period: f64) -> f64 {
    let mut k = (t / period).floor();
    while k * period <= t {
        k += 1.0;
    }
    k * period
}

/// Runs a fresh integration.
pub fn run(
    config: SolverConfig,
    nl: Nonlinearity,
    initial: &InitialCondition,
    sink: &mut dyn RunSink,
) -> Result<RunSummary> {
    Solver::new(config, nl, initial, String::new())?.run(sink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wave::{solve_wave_normalized, Normalization};

    fn short(formulation: Formulation, frame: Frame) -> SolverConfig {
        SolverConfig { frame, formulation, dx: 0.05, t_end: 3.0, ..SolverConfig::default() }
    }

    #[test]
    fn trace_lattice_is_independent_of_history() {
        assert_eq!(next_trace_time(1.0, 10), 10f64.powf(0.1));
        let t = trace_time(37, 10);
        assert_eq!(next_trace_time(t, 10), trace_time(38, 10));
        assert!(is_trace_time(t, 10));
        assert_eq!(next_multiple(500.0, 250.0), 750.0);
        assert_eq!(next_multiple(499.9, 250.0), 500.0);
    }

    #[test]
    fn constant_states_are_preserved() {
        for (value, frame) in [(0.0, Frame::Bramson), (1.0, Frame::Linear { speed: 2.0 }), (1.0, Frame::Rest)] {
            let cfg = short(Formulation::UForm, frame);
            let ic = InitialCondition::custom_table(vec![-1.0, 1.0], vec![value, value]);
            let mut s = Solver::new(cfg, Nonlinearity::fisher(), &ic, String::new()).unwrap();
            let n = s.state.values.len();
            s.state.values = vec![value; n];
            s.state.left_value = value;
            s.state.right_value = value;
            for _ in 0..50 {
                s.step(0.01).unwrap();
            }
            assert!(s.state.values.iter().all(|u| (u - value).abs() < 1e-14), "value {value}");
        }
    }

    #[test]
    fn travelling_wave_is_steady_in_the_linear_frame() {
        let wave =
            solve_wave_normalized(&Nonlinearity::fisher(), 30.0, 0.0125, 1e-10, Normalization::HalfAtOrigin).unwrap();
        let dx = 0.05;
        let cfg = SolverConfig {
            frame: Frame::Linear { speed: 2.0 },
            formulation: Formulation::UForm,
            dx,
            ..SolverConfig::default()
        };
        let ic = InitialCondition::step();
        let mut s = Solver::new(cfg, Nonlinearity::fisher(), &ic, String::new()).unwrap();
        let g = s.state.grid;
        s.state.values = g.nodes().map(|x| wave.eval(x)).collect();
        s.state.left_value = s.state.values[0];
        s.state.right_value = 0.0;
        s.state.values[g.len() - 1] = 0.0;
        let before = level_position(&g, &s.state.values, 0.5).unwrap().position;
        let dt = s.config.dt.dt(1.0, dx);
        while s.state.t < 2.0 - 1e-12 {
            s.step(dt.min(2.0 - s.state.t)).unwrap();
        }
        let after = level_position(&g, &s.state.values, 0.5).unwrap().position;
        assert!((after - before).abs() < 5.0 * dx * dx, "drift {}", after - before);
    }

    #[test]
    fn v_form_needs_a_pulled_frame() {
        let cfg = short(Formulation::VForm, Frame::Rest);
        assert!(cfg.validate().is_err());
        let cfg = short(Formulation::VForm, Frame::Bramson);
        assert!(Solver::new(
            cfg,
            Nonlinearity::by_name("fisher", None).unwrap(),
            &InitialCondition::step(),
            String::new()
        )
        .is_ok());
    }

    #[test]
    fn step_data_trace_is_monotone_and_increasing() {
        let cfg = SolverConfig {
            frame: Frame::Bramson,
            formulation: Formulation::UForm,
            dx: 0.1,
            t_end: 60.0,
            levels: vec![0.1, 0.5, 0.9],
            snapshot_times: vec![10.0, 60.0],
            ..SolverConfig::default()
        };
        let mut sink = MemorySink::default();
        let summary = run(cfg.clone(), Nonlinearity::fisher(), &InitialCondition::step(), &mut sink).unwrap();
        assert_eq!(summary.t_final, 60.0);
        assert_eq!(sink.snapshots.len(), 2);
        for snap in &sink.snapshots {
            assert!(snap.values.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        }
        let halves: Vec<&TraceRow> = sink.trace.iter().filter(|r| r.level == 0.5 && r.t >= 10.0).collect();
        assert!(halves.len() > 20);
        assert!(halves.windows(2).all(|w| w[1].position_lab > w[0].position_lab));
        for chunk in sink.trace.chunks(3) {
            assert!(chunk[0].position_frame > chunk[1].position_frame);
            assert!(chunk[1].position_frame > chunk[2].position_frame);
        }
    }

    #[test]
    fn empty_level_list_gives_no_trace() {
        let cfg =
            SolverConfig { levels: vec![], snapshot_times: vec![2.0], ..short(Formulation::UForm, Frame::Bramson) };
        let mut sink = MemorySink::default();
        run(cfg, Nonlinearity::fisher(), &InitialCondition::step(), &mut sink).unwrap();
        assert!(sink.trace.is_empty());
        assert_eq!(sink.snapshots.len(), 1);
    }

    #[test]
    fn resume_is_bitwise_equivalent() {
        let cfg = SolverConfig { t_end: 8.0, checkpoint_period: Some(4.0), dx: 0.05, ..SolverConfig::default() };
        let mut straight = MemorySink::default();
        run(cfg.clone(), Nonlinearity::fisher(), &InitialCondition::step(), &mut straight).unwrap();
        let ck = straight.checkpoints[0].clone();
        assert_eq!(ck.state.t, 4.0);
        let json = serde_json::to_string(&ck).unwrap();
        let ck: Checkpoint = serde_json::from_str(&json).unwrap();
        let mut resumed = MemorySink::default();
        Solver::from_checkpoint(cfg, Nonlinearity::fisher(), ck, String::new()).unwrap().run(&mut resumed).unwrap();
        let last = |s: &MemorySink| *s.trace.last().unwrap();
        assert_eq!(last(&straight), last(&resumed));
    }

    #[test]
    fn checkpoint_tag_mismatch_is_rejected() {
        let cfg = short(Formulation::VForm, Frame::Bramson);
        let s = Solver::new(cfg.clone(), Nonlinearity::fisher(), &InitialCondition::step(), "a".into()).unwrap();
        let ck = s.checkpoint();
        assert!(Solver::from_checkpoint(cfg, Nonlinearity::fisher(), ck, "b".into()).is_err());
    }

    #[test]
    fn domain_follows_the_front() {
        let cfg = SolverConfig {
            frame: Frame::Rest,
            formulation: Formulation::UForm,
            dx: 0.1,
            t_end: 40.0,
            ..SolverConfig::default()
        };
        let mut s = Solver::new(cfg.clone(), Nonlinearity::fisher(), &InitialCondition::step(), String::new()).unwrap();
        s.run(&mut MemorySink::default()).unwrap();
        let c = cfg.center(40.0);
        let g = s.state.grid;
        assert!(g.right() >= c + 6.0 * 40f64.sqrt() + 20.0);
        assert!(g.left() <= c - 40.0 - 2.0 * 40f64.ln());
        assert!(g.left() > c - 40.0 - 2.0 * 40f64.ln() - 200.0 * 0.1 - 1e-9);
    }
}
