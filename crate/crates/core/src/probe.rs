//! Linear heat equation with growth on a half-line behind a moving Dirichlet boundary.
//!
//! `U_t = U_yy + U` for `y > sigma(t)`, `U(t, sigma(t)) = 0`, with
//! `sigma(t) = 2t - (3/2) log t - c / sqrt t`. Writing `U = e^-(y - sigma) W` and using
//! `tau = log t`, `eta = (y - sigma)/sqrt t` gives a fixed half-line problem
//!
//! `W_tau = W_eta_eta + (eta/2 - b e^(-tau/2)) W_eta + b W`, `b = 3/2 - c e^(-tau/2) / 2`,
//!
//! with the boundary pinned at `eta = 0`. The mass is
//! `int U dy = sqrt t int e^(-sqrt t eta) W d eta`, integrated exactly for the piecewise-linear
//! interpolant of `W`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::tridiag::{Tridiag, TridiagLu};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeInitial {
    /// `sin^2(pi y / width)` on `(0, width)`.
    Bump {
        width: f64,
    },
    /// Piecewise-linear `U(1, y)` on `y >= 0`, zero outside the table.
    Table {
        y: Vec<f64>,
        values: Vec<f64>,
    },
    Zero,
}

impl ProbeInitial {
    fn eval(&self, y: f64) -> f64 {
        match self {
            ProbeInitial::Zero => 0.0,
            ProbeInitial::Bump { width } => {
                if y > 0.0 && y < *width {
                    (std::f64::consts::PI * y / width).sin().powi(2)
                } else {
                    0.0
                }
            }
            ProbeInitial::Table { y: ys, values } => {
                if y < ys[0] || y > ys[ys.len() - 1] {
                    return 0.0;
                }
                let j = ys.partition_point(|v| *v <= y).clamp(1, ys.len() - 1);
                let w = (y - ys[j - 1]) / (ys[j] - ys[j - 1]);
                values[j - 1] * (1.0 - w) + values[j] * w
            }
        }
    }

    fn validate(&self, eta_max: f64) -> Result<()> {
        match self {
            ProbeInitial::Zero => Ok(()),
            ProbeInitial::Bump { width } => {
                if *width > 0.0 && *width < eta_max {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!("bump width {width} must lie in (0, eta_max)")))
                }
            }
            ProbeInitial::Table { y, values } => {
                if y.len() != values.len() || y.len() < 2 || y.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidInput("probe table needs increasing abscissae".into()));
                }
                if y[0] < 0.0 || y[y.len() - 1] >= eta_max {
                    return Err(Error::InvalidInput("probe table must sit inside [0, eta_max)".into()));
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidInput("probe data must be nonnegative".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Coefficient of the `-c / sqrt t` term in the boundary path.
    pub c: f64,
    pub eta_max: f64,
    pub d_eta: f64,
    pub d_tau: f64,
    pub t_end: f64,
    /// Number of log-spaced mass samples on `[1, t_end]`.
    pub samples: usize,
    pub initial: ProbeInitial,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            c: crate::model::THREE_SQRT_PI,
            eta_max: 14.0,
            d_eta: 0.01,
            d_tau: 2e-3,
            t_end: 1e6,
            samples: 400,
            initial: ProbeInitial::Bump { width: 3.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassTrace {
    pub c: f64,
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
}

/// `sqrt t int e^(-sqrt t eta) W d eta` for piecewise-linear `W`.
fn mass(grid: &Grid1D, w: &[f64], t: f64) -> f64 {
    let s = t.sqrt();
    let h = grid.spacing();
    let mut total = 0.0;
    for i in 0..w.len() - 1 {
        let a = grid.x(i);
        let ea = (-s * a).exp();
        if ea == 0.0 {
            break;
        }
        let eb = (-s * (a + h)).exp();
        let i0 = (ea - eb) / s;
        let i1 = -h * eb / s - eb / (s * s) + ea / (s * s);
        total += w[i] * i0 + (w[i + 1] - w[i]) / h * i1;
    }
    s * total
}

pub fn run_linear_probe(config: &ProbeConfig) -> Result<MassTrace> {
    let ProbeConfig { c, eta_max, d_eta, d_tau, t_end, samples, .. } = *config;
    if !(d_eta > 0.0 && d_tau > 0.0 && eta_max >= 8.0) {
        return Err(Error::InvalidInput("probe needs positive steps and eta_max >= 8".into()));
    }
    if !(t_end > 10.0 && samples >= 2) || !c.is_finite() {
        return Err(Error::InvalidInput("probe needs t_end > 10, finite c and at least two samples".into()));
    }
    config.initial.validate(eta_max)?;
    let grid = Grid1D::new(0.0, eta_max, d_eta)?;
    let n = grid.len();
    // At t = 1 the self-similar and frame coordinates coincide.
    let mut w: Vec<f64> = grid.nodes().map(|e| e.exp() * config.initial.eval(e)).collect();
    w[0] = 0.0;
    w[n - 1] = 0.0;

    let tau_end = t_end.ln();
    let sample_taus: Vec<f64> = (0..samples).map(|j| tau_end * j as f64 / (samples - 1) as f64).collect();
    let mut trace = MassTrace { c, times: vec![1.0], mass: vec![mass(&grid, &w, 1.0)] };

    let ih2 = 1.0 / (d_eta * d_eta);
    let operator = |tau: f64, i: usize| -> (f64, f64, f64) {
        let s = (-0.5 * tau).exp();
        let b = 1.5 - 0.5 * c * s;
        let adv = 0.5 * grid.x(i) - b * s;
        (ih2 - adv / (2.0 * d_eta), -2.0 * ih2 + b, ih2 + adv / (2.0 * d_eta))
    };
    let mut m = Tridiag::zeros(n);
    let mut lu = TridiagLu::default();
    let mut rhs = vec![0.0; n];
    let mut tau = 0.0;
    for &target in &sample_taus[1..] {
        while tau < target {
            let dt = d_tau.min(target - tau);
            let (t0, t1) = (tau, tau + dt);
            m.diag[0] = 1.0;
            m.upper[0] = 0.0;
            m.diag[n - 1] = 1.0;
            m.lower[n - 1] = 0.0;
            rhs[0] = 0.0;
            rhs[n - 1] = 0.0;
            for i in 1..n - 1 {
                let (l0, d0, u0) = operator(t0, i);
                let (l1, d1, u1) = operator(t1, i);
                rhs[i] = w[i] + 0.5 * dt * (l0 * w[i - 1] + d0 * w[i] + u0 * w[i + 1]);
                m.lower[i] = -0.5 * dt * l1;
                m.diag[i] = 1.0 - 0.5 * dt * d1;
                m.upper[i] = -0.5 * dt * u1;
            }
            lu.refactor(&m)?;
            lu.solve(&mut rhs);
            std::mem::swap(&mut w, &mut rhs);
            tau = if dt == target - tau { target } else { t1 };
            if let Some(v) = w.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvariantViolation { t: tau.exp(), detail: format!("non-finite value {v}") });
            }
            if let Some(v) = w.iter().find(|v| **v < -1e-8) {
                return Err(Error::InvariantViolation { t: tau.exp(), detail: format!("negative value {v:e}") });
            }
        }
        let t = target.exp();
        trace.times.push(t);
        trace.mass.push(mass(&grid, &w, t));
    }
    Ok(trace)
}
