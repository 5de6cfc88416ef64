//! Minimal-speed travelling wave `-phi'' - c* phi' = f(phi)`, `phi(-inf) = 1`, `phi(+inf) = 0`.
//!
//! The boundary value problem is solved for `V = e^z phi` in the rescaled variable
//! `z = sqrt(f'(0)) xi`, where it reads `V'' = e^z (phi - g(phi))` with `g = f / f'(0)`.
//! The discretization is the Numerov scheme (tridiagonal, fourth order), solved by damped
//! Newton. The right ghost node encodes `V' = 1`, which fixes the translation so that the tail
//! is `(z + k) e^(-z)` with unit amplitude; the left ghost node follows the decaying family
//! `e^z - A e^((1 + mu) z)` through the boundary node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::interp::CubicSpline;
use crate::model::{check_kpp, Nonlinearity};
use crate::tridiag::{Tridiag, TridiagLu};

const MAX_NEWTON_ITERATIONS: usize = 60;
/// The left end is placed where `1 - phi` has decayed to about `e^-23`.
const LEFT_DECAY_EXPONENT: f64 = 23.0;

/// Translation convention fixing the profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Tail `(xi + k) e^(-xi)` with coefficient exactly one.
    #[default]
    UnitTail,
    /// `phi(0) = 1/2`; the tail then reads `A (xi + k) e^(-xi)` with `A != 1`.
    HalfAtOrigin,
}

/// Result of fitting `e^xi phi(xi) = A (xi + k) + B e^(-omega xi)` on a tail window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub k: f64,
    pub k_se: f64,
    pub amplitude: f64,
    /// Effective decay rate of the remainder; `inf` when the remainder is at roundoff.
    pub omega0: f64,
    pub omega0_se: f64,
    /// Degree `p` of the prefactor in the remainder model `B z^p e^(-omega z)`.
    pub prefactor_degree: u32,
    pub window: (f64, f64),
    pub samples: usize,
    pub rms_residual: f64,
    /// Correlation of `log|remainder|` against `xi`; `None` at roundoff.
    pub log_linear_correlation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct WaveProfile {
    speed: f64,
    rate: f64,
    /// Nodes in the solver's coordinate; the profile coordinate is `xi_solve - offset`.
    solve_grid: Grid1D,
    phi: Vec<f64>,
    spline: CubicSpline,
    offset: f64,
    mu_minus: f64,
    left_amplitude: f64,
    tail: TailFit,
    normalization: Normalization,
    residual: f64,
    newton_iterations: usize,
}

impl WaveProfile {
    pub fn speed(&self) -> f64 {
        self.speed
    }

    /// `f'(0)` of the generating nonlinearity.
    pub fn linear_rate(&self) -> f64 {
        self.rate
    }

    pub fn k(&self) -> f64 {
        self.tail.k
    }

    pub fn omega0(&self) -> f64 {
        self.tail.omega0
    }

    pub fn tail(&self) -> &TailFit {
        &self.tail
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Stable exponent `mu` of `1 - phi ~ A e^(mu xi)` at `-inf`.
    pub fn mu_minus(&self) -> f64 {
        self.mu_minus
    }

    pub fn left_amplitude(&self) -> f64 {
        self.left_amplitude
    }

    /// Max-norm residual of the discrete wave equation on interior nodes.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn newton_iterations(&self) -> usize {
        self.newton_iterations
    }

    /// Grid in profile coordinates.
    pub fn xi_grid(&self) -> Grid1D {
        Grid1D::from_len(self.solve_grid.left() - self.offset, self.solve_grid.spacing(), self.solve_grid.len())
            .expect("profile grid is valid")
    }

    pub fn phi_values(&self) -> &[f64] {
        &self.phi
    }

    /// `phi(xi)`: spline inside the table, asymptotic formulas outside.
    pub fn eval(&self, xi: f64) -> f64 {
        let s = xi + self.offset;
        let z_rate = self.rate.sqrt();
        if s < self.solve_grid.left() {
            1.0 - self.left_amplitude * (self.mu_minus * xi).exp()
        } else if s > self.solve_grid.right() {
            let z = z_rate * xi;
            self.tail.amplitude * (z + self.tail.k) * (-z).exp()
        } else {
            self.spline.eval(s)
        }
    }

    /// `phi'(xi)`.
    pub fn derivative(&self, xi: f64) -> f64 {
        let s = xi + self.offset;
        let r = self.rate.sqrt();
        if s < self.solve_grid.left() {
            -self.left_amplitude * self.mu_minus * (self.mu_minus * xi).exp()
        } else if s > self.solve_grid.right() {
            let z = r * xi;
            self.tail.amplitude * r * (1.0 - z - self.tail.k) * (-z).exp()
        } else {
            self.spline.derivative(s)
        }
    }

    /// `e^xi phi(xi)` for unit `f'(0)`; computed without overflow far left.
    pub fn weighted(&self, xi: f64) -> f64 {
        let z = self.rate.sqrt() * xi;
        if xi + self.offset < self.solve_grid.left() {
            z.exp() - self.left_amplitude * (z + self.mu_minus * xi).exp()
        } else if xi + self.offset > self.solve_grid.right() {
            self.tail.amplitude * (z + self.tail.k)
        } else {
            z.exp() * self.spline.eval(xi + self.offset)
        }
    }

    /// Derivative of [`Self::weighted`].
    pub fn weighted_derivative(&self, xi: f64) -> f64 {
        let r = self.rate.sqrt();
        let z = r * xi;
        if xi + self.offset > self.solve_grid.right() {
            self.tail.amplitude * r
        } else {
            z.exp() * (r * self.eval(xi) + self.derivative(xi))
        }
    }

    /// Position where `phi = level`, found by bisection on the evaluator.
    pub fn inverse(&self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Domain(format!("level {level} outside (0, 1)")));
        }
        let g = self.xi_grid();
        let (mut lo, mut hi) = (g.left(), g.right());
        if self.eval(lo) < level || self.eval(hi) > level {
            return Err(Error::Domain(format!("level {level} not attained on the table")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Re-expresses the same solution with another translation convention.
    pub fn renormalized(&self, normalization: Normalization) -> Result<Self> {
        let mut out = self.clone();
        out.offset = 0.0;
        out.normalization = Normalization::UnitTail;
        out.tail = self.unit_tail();
        out.left_amplitude = self.left_amplitude * (self.mu_minus * self.offset).exp();
        if normalization == Normalization::HalfAtOrigin {
            let shift = out.inverse(0.5)?;
            out = out.shifted(shift);
            out.normalization = Normalization::HalfAtOrigin;
        }
        Ok(out)
    }

    /// Profile `phi(xi + shift)`: tail constants follow `k -> k + sqrt(f'(0)) shift`, `A -> A e^(-sqrt(f'(0)) shift)`.
    pub fn shifted(&self, shift: f64) -> Self {
        let r = self.rate.sqrt();
        let mut out = self.clone();
        out.offset += shift;
        out.tail.k += r * shift;
        out.tail.amplitude *= (-r * shift).exp();
        out.tail.window = (self.tail.window.0 - shift, self.tail.window.1 - shift);
        out.left_amplitude *= (self.mu_minus * shift).exp();
        out
    }

    fn unit_tail(&self) -> TailFit {
        let r = self.rate.sqrt();
        let mut t = self.tail.clone();
        t.k -= r * self.offset;
        t.amplitude *= (r * self.offset).exp();
        t.window = (t.window.0 + self.offset, t.window.1 + self.offset);
        t
    }

    /// Max residual of the five-point discretization of `phi'' + c* phi' + f(phi)` applied to
    /// the table; tracks the discretization error of the tabulated solution.
    pub fn consistency_residual(&self, nl: &Nonlinearity) -> f64 {
        let c = self.speed;
        let h = self.solve_grid.spacing();
        let p = &self.phi;
        let mut worst = 0.0f64;
        for i in 2..p.len() - 2 {
            let d2 = (-p[i + 2] + 16.0 * p[i + 1] - 30.0 * p[i] + 16.0 * p[i - 1] - p[i - 2]) / (12.0 * h * h);
            let d1 = (-p[i + 2] + 8.0 * p[i + 1] - 8.0 * p[i - 1] + p[i - 2]) / (12.0 * h);
            let res = d2 + c * d1 + nl.eval(p[i]);
            worst = worst.max(res.abs());
        }
        worst
    }
}

/// Solves the wave problem on `[-X_left, X]` with spacing `h` under the unit-tail convention.
pub fn solve_wave(nl: &Nonlinearity, half_width: f64, h: f64, tol: f64) -> Result<WaveProfile> {
    solve_wave_normalized(nl, half_width, h, tol, Normalization::UnitTail)
}

pub fn solve_wave_normalized(
    nl: &Nonlinearity,
    half_width: f64,
    h: f64,
    tol: f64,
    normalization: Normalization,
) -> Result<WaveProfile> {
    if half_width < 30.0 {
        return Err(Error::InvalidInput(format!("wave half-width must be at least 30, got {half_width}")));
    }
    if !(h > 0.0 && h <= 0.05) {
        return Err(Error::InvalidInput(format!("wave spacing must lie in (0, 0.05], got {h}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let report = check_kpp(nl)?;
    if !report.passes {
        return Err(Error::InvalidInput(format!(
            "nonlinearity {} fails the KPP scan (max violation {:e})",
            nl.name(),
            report.max_violation
        )));
    }

    let rate = nl.derivative_at_zero();
    let sr = rate.sqrt();
    // Internal problem: speed 2 and g = f / f'(0).
    let g = |u: f64| nl.eval(u) / rate;
    let gp1 = nl.derivative_at_one() / rate;
    if !(gp1 < 0.0) {
        return Err(Error::InvalidInput("f'(1) must be negative for a stable rest state".into()));
    }
    let mu = -1.0 + (1.0 - gp1).sqrt();

    let hz = sr * h;
    let z_right = sr * half_width;
    let z_left = z_right.max(LEFT_DECAY_EXPONENT / mu);
    let n = ((z_left + z_right) / hz).round() as usize + 1;
    let zgrid = Grid1D::from_len(-z_left, hz, n)?;
    let z: Vec<f64> = zgrid.nodes().collect();
    let ez: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let emz: Vec<f64> = z.iter().map(|v| (-v).exp()).collect();

    let absorption = |phi: f64| phi - g(phi);
    let absorption_slope = |phi: f64| {
        let d = 1e-6;
        1.0 - (g(phi + d) - g(phi - d)) / (2.0 * d)
    };

    let h2 = hz * hz;
    // Left ghost value from the asymptotic family e^z - A e^((1+mu) z) through node 0;
    // right ghost value from the affine tail V' = 1.
    let decay = (-(1.0 + mu) * hz).exp();
    let z_ghost_left = z[0] - hz;
    let z_ghost_right = z[n - 1] + hz;
    let ghost_left = |v0: f64| (z[0] - hz).exp() - (ez[0] - v0) * decay;
    let ghost_right = |v: &[f64]| v[n - 2] + 2.0 * hz;
    let forcing = |zz: f64, vv: f64| zz.exp() * absorption((-zz).exp() * vv);
    // Numerov: (V[i+1] - 2V[i] + V[i-1]) / h^2 = (F[i+1] + 10 F[i] + F[i-1]) / 12.
    let residual = |v: &[f64], out: &mut [f64]| {
        let f: Vec<f64> = (0..n).map(|i| ez[i] * absorption(emz[i] * v[i])).collect();
        for i in 0..n {
            let (vl, fl) = if i == 0 {
                let g = ghost_left(v[0]);
                (g, forcing(z_ghost_left, g))
            } else {
                (v[i - 1], f[i - 1])
            };
            let (vr, fr) = if i == n - 1 {
                let g = ghost_right(v);
                (g, forcing(z_ghost_right, g))
            } else {
                (v[i + 1], f[i + 1])
            };
            out[i] = (vr - 2.0 * v[i] + vl) / h2 - (fr + 10.0 * f[i] + fl) / 12.0;
        }
    };
    let scaled_norm = |r: &[f64], interior: bool| {
        let range = if interior { 1..n - 1 } else { 0..n };
        range.map(|i| (emz[i] * r[i]).abs()).fold(0.0f64, f64::max)
    };

    let mut v: Vec<f64> = z.iter().map(|zz| zz.exp() / (1.0 + zz.exp())).collect();
    for (vi, zz) in v.iter_mut().zip(&z) {
        if *zz > 30.0 {
            *vi = 1.0;
        }
    }
    let mut r = vec![0.0; n];
    residual(&v, &mut r);
    let mut norm = scaled_norm(&r, false);
    let mut jac = Tridiag::zeros(n);
    let mut lu = TridiagLu::default();
    let mut trial = vec![0.0; n];
    let mut trial_r = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let mut iterations = 0;
    // Once below tolerance, a couple of extra steps push the iterate to the roundoff floor.
    let mut polish = 2;
    loop {
        if norm <= tol {
            if polish == 0 {
                break;
            }
            polish -= 1;
        }
        if iterations == MAX_NEWTON_ITERATIONS {
            if norm <= tol {
                break;
            }
            return Err(Error::NoConvergence { iterations, residual: norm });
        }
        iterations += 1;
        let slope: Vec<f64> = (0..n).map(|i| absorption_slope(emz[i] * v[i])).collect();
        for i in 0..n {
            jac.diag[i] = -2.0 / h2 - 10.0 * slope[i] / 12.0;
            jac.lower[i] = if i > 0 { 1.0 / h2 - slope[i - 1] / 12.0 } else { 0.0 };
            jac.upper[i] = if i + 1 < n { 1.0 / h2 - slope[i + 1] / 12.0 } else { 0.0 };
        }
        let gl = ghost_left(v[0]);
        let slope_gl = absorption_slope((-z_ghost_left).exp() * gl);
        jac.diag[0] += decay / h2 - slope_gl * decay / 12.0;
        let gr = ghost_right(&v);
        let slope_gr = absorption_slope((-z_ghost_right).exp() * gr);
        jac.lower[n - 1] += 1.0 / h2 - slope_gr / 12.0;
        lu.refactor(&jac)?;
        for i in 0..n {
            delta[i] = -r[i];
        }
        lu.solve(&mut delta);
        let mut step = 1.0;
        let accepted = loop {
            for i in 0..n {
                trial[i] = v[i] + step * delta[i];
            }
            residual(&trial, &mut trial_r);
            let trial_norm = scaled_norm(&trial_r, false);
            if trial_norm < norm {
                break Some(trial_norm);
            }
            step *= 0.5;
            if step < 1e-4 {
                break None;
            }
        };
        match accepted {
            Some(new_norm) => {
                std::mem::swap(&mut v, &mut trial);
                std::mem::swap(&mut r, &mut trial_r);
                norm = new_norm;
            }
            None if norm <= tol => break,
            None => return Err(Error::NoConvergence { iterations, residual: norm }),
        }
    }
    let interior_residual = rate * scaled_norm(&r, true);
    if interior_residual > tol {
        return Err(Error::NoConvergence { iterations, residual: interior_residual });
    }

    let phi: Vec<f64> = (0..n).map(|i| emz[i] * v[i]).collect();
    if let Some(i) = (1..n).find(|&i| !(phi[i] < phi[i - 1])) {
        return Err(Error::NotMonotone { at: z[i] / sr });
    }
    let solve_grid = Grid1D::from_len(-z_left / sr, h, n)?;
    let spline = CubicSpline::new(solve_grid, phi.clone());
    let mu_phys = sr * mu;
    // Far-left nodes carry 1 - phi below the solver tolerance; read the amplitude where
    // 1 - phi is still around 1e-4 but the next asymptotic term is negligible.
    let anchor = solve_grid.nearest(-9.0 / mu_phys).unwrap_or(0);
    let left_amplitude = (1.0 - phi[anchor]) * (-mu_phys * solve_grid.x(anchor)).exp();
    let tail = extract_tail_scaled(&solve_grid, &phi, sr, half_width)?;

    let profile = WaveProfile {
        speed: nl.minimal_speed(),
        rate,
        solve_grid,
        phi,
        spline,
        offset: 0.0,
        mu_minus: mu_phys,
        left_amplitude,
        tail,
        normalization: Normalization::UnitTail,
        residual: interior_residual,
        newton_iterations: iterations,
    };
    profile.renormalized(normalization)
}

/// Fits `e^xi phi(xi) = A (xi + k) + B e^(-omega xi)` on `[X/3, 2X/3]`, `X` the right end of the table.
pub fn extract_tail(xi: &Grid1D, phi: &[f64]) -> Result<TailFit> {
    extract_tail_scaled(xi, phi, 1.0, xi.right())
}

/// Tail fit of a solved profile, expressed in the profile's own normalization.
pub fn extract_profile_tail(profile: &WaveProfile) -> Result<TailFit> {
    let sr = profile.rate.sqrt();
    let g = profile.solve_grid;
    let mut fit = extract_tail_scaled(&g, &profile.phi, sr, g.right())?;
    let shift = profile.offset;
    fit.k += sr * shift;
    fit.amplitude = (-sr * shift).exp();
    fit.window = (fit.window.0 - shift, fit.window.1 - shift);
    Ok(fit)
}

fn extract_tail_scaled(grid: &Grid1D, phi: &[f64], sr: f64, right: f64) -> Result<TailFit> {
    if grid.len() != phi.len() {
        return Err(Error::InvalidInput("table and grid lengths differ".into()));
    }
    let (w0, w1) = (right / 3.0, 2.0 * right / 3.0);
    let idx: Vec<usize> = (0..grid.len()).filter(|&i| grid.x(i) >= w0 && grid.x(i) <= w1).collect();
    if idx.len() < 8 {
        return Err(Error::InvalidInput(format!("tail window [{w0}, {w1}] holds too few nodes")));
    }
    let zs: Vec<f64> = idx.iter().map(|&i| sr * grid.x(i)).collect();
    // y = e^z phi - z = k + remainder.
    let ys: Vec<f64> = idx.iter().map(|&i| (sr * grid.x(i)).exp() * phi[i] - sr * grid.x(i)).collect();
    // Roundoff in e^z phi scales with |z + k|, hence relative weights.
    let ws: Vec<f64> = zs.iter().zip(&ys).map(|(z, y)| 1.0 / (z + y).abs().max(1.0)).collect();
    let window = (w0, w1);

    let constant = weighted_lsq(&zs, &ys, &ws, None)?;
    let scale = zs.iter().zip(&ys).fold(0.0f64, |a, (z, y)| a.max((z + y).abs()));
    if constant.rms <= 64.0 * f64::EPSILON * scale {
        return Ok(TailFit {
            k: constant.coef[0],
            k_se: constant.cov[0][0].max(0.0).sqrt(),
            amplitude: 1.0,
            omega0: f64::INFINITY,
            omega0_se: 0.0,
            prefactor_degree: 0,
            window,
            samples: idx.len(),
            rms_residual: constant.rms,
            log_linear_correlation: None,
        });
    }

    // Variable projection: for fixed omega and degree p the model k + B z^p e^(-omega z) is
    // linear. Nonlinear wave tails carry polynomial prefactors, so p in {0, 1, 2} is selected
    // by the residual sum of squares.
    let (lo_bound, hi_bound) = (0.05, 4.0);
    let mut best: Option<(f64, u32, LsqFit)> = None;
    for degree in 0..=2u32 {
        let rss = |omega: f64| -> f64 {
            weighted_lsq(&zs, &ys, &ws, Some((omega, degree))).map(|f| f.rss).unwrap_or(f64::INFINITY)
        };
        let omega = golden_minimum(&rss, lo_bound, hi_bound);
        let fit = weighted_lsq(&zs, &ys, &ws, Some((omega, degree)))?;
        if best.as_ref().is_none_or(|(_, _, b)| fit.rss < b.rss) {
            best = Some((omega, degree, fit));
        }
    }
    let (omega, degree, fit) = best.expect("at least one degree was fitted");
    let (z0, z1) = (zs[0], zs[zs.len() - 1]);
    let net_decay = (z1 / z0).powi(degree as i32) * (-omega * (z1 - z0)).exp();
    let spread = (ys.iter().map(|y| (y - constant.coef[0]).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
    if omega <= lo_bound + 1e-3 || net_decay > 0.5 || fit.rms > 0.1 * spread {
        return Err(Error::TailNotDecaying(format!(
            "remainder model (rate {omega:.4}, degree {degree}) decays by only {net_decay:.3e} and leaves \
             {:.3e} of {spread:.3e} unexplained on window [{w0}, {w1}]",
            fit.rms
        )));
    }
    let rss = |omega: f64| -> f64 {
        weighted_lsq(&zs, &ys, &ws, Some((omega, degree))).map(|f| f.rss).unwrap_or(f64::INFINITY)
    };
    let dw = 1e-3 * omega.max(0.1);
    let curvature = (rss(omega + dw) - 2.0 * fit.rss + rss(omega - dw)) / (dw * dw);
    let sigma2 = fit.rss / (idx.len() as f64 - 3.0).max(1.0);
    let omega_se = if curvature > 0.0 { (2.0 * sigma2 / curvature).sqrt() } else { f64::INFINITY };

    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for (z, y) in zs.iter().zip(&ys) {
        let rem = y - fit.coef[0];
        if rem != 0.0 {
            lx.push(*z);
            ly.push(rem.abs().ln());
        }
    }
    let correlation = crate::stats::line_fit(&lx, &ly).ok().map(|f| f.correlation.abs());

    Ok(TailFit {
        k: fit.coef[0],
        k_se: fit.cov[0][0].max(0.0).sqrt(),
        amplitude: 1.0,
        omega0: omega,
        omega0_se: omega_se,
        prefactor_degree: degree,
        window,
        samples: idx.len(),
        rms_residual: fit.rms,
        log_linear_correlation: correlation,
    })
}

struct LsqFit {
    coef: Vec<f64>,
    cov: Vec<Vec<f64>>,
    rss: f64,
    rms: f64,
}

/// Minimizer of `f` on `[lo, hi]`: coarse scan, then golden-section refinement.
fn golden_minimum(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let count = 80;
    let scan: Vec<f64> = (0..count).map(|j| lo + (hi - lo) * j as f64 / (count - 1) as f64).collect();
    let best = scan.iter().map(|&w| f(w)).enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).map(|(i, _)| i).unwrap();
    let (mut a, mut b) = (scan[best.saturating_sub(1)], scan[(best + 1).min(count - 1)]);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - gr * (b - a);
    let mut d = a + gr * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Weighted least squares with basis `{1}` and optionally `z^p e^(-omega (z - z0))`.
fn weighted_lsq(z: &[f64], y: &[f64], w: &[f64], remainder: Option<(f64, u32)>) -> Result<LsqFit> {
    let p = if remainder.is_some() { 2 } else { 1 };
    let m = z.len();
    let basis = |i: usize, j: usize| -> f64 {
        match (j, remainder) {
            (0, _) => 1.0,
            (_, Some((omega, degree))) => (z[i] / z[0]).powi(degree as i32) * (-omega * (z[i] - z[0])).exp(),
            (_, None) => 0.0,
        }
    };
    let mut a = nalgebra::DMatrix::<f64>::zeros(m, p);
    let mut b = nalgebra::DVector::<f64>::zeros(m);
    for i in 0..m {
        for j in 0..p {
            a[(i, j)] = w[i] * basis(i, j);
        }
        b[i] = w[i] * y[i];
    }
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&b, 1e-14).map_err(|e| Error::InvalidInput(format!("tail regression failed: {e}")))?;
    let resid = &a * &coef - &b;
    let rss = resid.norm_squared();
    let sigma2 = rss / (m as f64 - p as f64).max(1.0);
    let inv = (a.transpose() * &a).try_inverse().unwrap_or_else(|| nalgebra::DMatrix::from_element(p, p, f64::NAN));
    let cov = (0..p).map(|i| (0..p).map(|j| sigma2 * inv[(i, j)]).collect()).collect();
    let mean_sq =
        (0..m).map(|i| ((0..p).map(|j| coef[j] * basis(i, j)).sum::<f64>() - y[i]).powi(2)).sum::<f64>() / m as f64;
    Ok(LsqFit { coef: coef.iter().copied().collect(), cov, rss, rms: mean_sq.sqrt() })
}
