//! Half-line operators in self-similar variables.
//!
//! `L v = -v'' - (eta/2) v' - v` acts on Gaussian-decaying fields; its symmetrization
//! `M w = -w'' + (eta^2/16 - 5/4) w` (with `w = e^(eta^2/8) v`) has eigenvalues `-1/2, 1/2, ...`.
//! Both carry a Dirichlet condition at `eta = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::interp::CubicSpline;
use crate::model::THREE_SQRT_PI;
use crate::tridiag::{Tridiag, TridiagLu};

pub const DEFAULT_ETA_MAX: f64 = 16.0;
const COARSE_SPACING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayClass {
    /// `e^(-eta^2/4)` decay, as for `V0+` and `V1+`.
    GaussianQuarter,
    /// `e^(-eta^2/8)` decay, as for the eigenfunctions of `M`.
    GaussianEighth,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfLineField {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub decay: DecayClass,
    pub dirichlet: bool,
}

impl HalfLineField {
    pub fn new(grid: Grid1D, values: Vec<f64>, decay: DecayClass, dirichlet: bool) -> Result<Self> {
        if grid.left() != 0.0 {
            return Err(Error::InvalidInput("half-line grids start at eta = 0".into()));
        }
        if grid.len() != values.len() {
            return Err(Error::InvalidInput("field length differs from its grid".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("half-line field has non-finite values".into()));
        }
        if dirichlet && values[0] != 0.0 {
            return Err(Error::InvalidInput(format!("Dirichlet field has value {} at eta = 0", values[0])));
        }
        Ok(Self { grid, values, decay, dirichlet })
    }

    /// Samples `f` on `[0, eta_max]`; the Dirichlet node is set to exactly zero.
    pub fn sample(eta_max: f64, spacing: f64, decay: DecayClass, f: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = Grid1D::new(0.0, eta_max, spacing)?;
        let mut values: Vec<f64> = grid.nodes().map(&f).collect();
        values[0] = 0.0;
        Self::new(grid, values, decay, true)
    }

    pub fn interpolant(&self) -> CubicSpline {
        CubicSpline::new(self.grid, self.values.clone())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Simpson's rule on uniform samples (trapezoid on a trailing odd interval).
pub fn integrate(grid: &Grid1D, values: &[f64]) -> f64 {
    let n = values.len();
    let h = grid.spacing();
    if n < 3 {
        return 0.5 * h * values.iter().sum::<f64>();
    }
    let intervals = n - 1;
    let even = intervals - intervals % 2;
    let mut acc = values[0] + values[even];
    for (i, v) in values.iter().enumerate().take(even).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    let mut total = acc * h / 3.0;
    if even < intervals {
        total += 0.5 * h * (values[n - 2] + values[n - 1]);
    }
    total
}

pub fn inner(a: &HalfLineField, b: &HalfLineField) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::InvalidInput("inner product of fields on different grids".into()));
    }
    let prod: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
    Ok(integrate(&a.grid, &prod))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    /// Set when the spacing exceeds the accuracy threshold.
    pub coarse_grid_warning: bool,
    /// Boundary outputs come from one-sided stencils and are advisory only.
    pub boundary_nodes_advisory: bool,
}

fn report_for(grid: &Grid1D) -> OperatorReport {
    OperatorReport { coarse_grid_warning: grid.spacing() > COARSE_SPACING, boundary_nodes_advisory: true }
}

/// Second and first derivative by central differences inside, one-sided second order at the ends.
fn derivatives(grid: &Grid1D, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let h = grid.spacing();
    let mut d2 = vec![0.0; n];
    let mut d1 = vec![0.0; n];
    for i in 1..n - 1 {
        d2[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
        d1[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
    }
    if n >= 4 {
        d2[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h);
        d1[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
        let m = n - 1;
        d2[m] = (2.0 * v[m] - 5.0 * v[m - 1] + 4.0 * v[m - 2] - v[m - 3]) / (h * h);
        d1[m] = (3.0 * v[m] - 4.0 * v[m - 1] + v[m - 2]) / (2.0 * h);
    }
    (d2, d1)
}

fn operator_image(field: &HalfLineField, values: Vec<f64>) -> HalfLineField {
    HalfLineField { grid: field.grid, values, decay: field.decay, dirichlet: false }
}

pub fn apply_l(field: &HalfLineField) -> (HalfLineField, OperatorReport) {
    let (d2, d1) = derivatives(&field.grid, &field.values);
    let out = (0..field.values.len()).map(|i| -d2[i] - 0.5 * field.grid.x(i) * d1[i] - field.values[i]).collect();
    (operator_image(field, out), report_for(&field.grid))
}

pub fn apply_m(field: &HalfLineField) -> (HalfLineField, OperatorReport) {
    let (d2, _) = derivatives(&field.grid, &field.values);
    let out = (0..field.values.len())
        .map(|i| {
            let eta = field.grid.x(i);
            -d2[i] + (eta * eta / 16.0 - 1.25) * field.values[i]
        })
        .collect();
    (operator_image(field, out), report_for(&field.grid))
}

/// Closed-form `c0 = (2 sqrt(pi))^(-1/2)`.
pub fn c0_closed_form() -> f64 {
    (2.0 * std::f64::consts::PI.sqrt()).powf(-0.5)
}

/// Closed-form `|c1| = (3 sqrt(pi))^(-1/2)`.
pub fn c1_closed_form() -> f64 {
    THREE_SQRT_PI.powf(-0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub index: usize,
    /// Eigenvalue of `M`.
    pub eigenvalue: f64,
    pub function: HalfLineField,
    /// Normalization constant determined by quadrature on the grid.
    pub normalization: f64,
}

/// Unnormalized eigenfunction shapes: `eta e^(-eta^2/8)` and `(3eta/2 - eta^3/4) e^(-eta^2/8)`.
fn eigen_shape(index: usize, eta: f64) -> f64 {
    let g = (-eta * eta / 8.0).exp();
    match index {
        0 => eta * g,
        _ => (1.5 * eta - 0.25 * eta.powi(3)) * g,
    }
}

/// Eigenpair of `M` with index 0 or 1, normalized in `L^2(0, eta_max)` by quadrature.
pub fn eigenpair(index: usize, eta_max: f64, spacing: f64) -> Result<EigenPair> {
    if index > 1 {
        return Err(Error::InvalidInput(format!("eigenpair index {index} unsupported (only 0 and 1)")));
    }
    let raw = HalfLineField::sample(eta_max, spacing, DecayClass::GaussianEighth, |e| eigen_shape(index, e))?;
    let norm2 = inner(&raw, &raw)?;
    let c = norm2.sqrt().recip();
    let values = raw.values.iter().map(|v| c * v).collect();
    Ok(EigenPair {
        index,
        eigenvalue: if index == 0 { -0.5 } else { 0.5 },
        function: HalfLineField { values, ..raw },
        normalization: c,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub coefficient: f64,
    pub orthogonal: HalfLineField,
}

/// `<e0, f> e0 + f_perp`; the field must decay within its grid.
pub fn project_e0(field: &HalfLineField) -> Result<Projection> {
    let e0 = eigenpair(0, field.grid.right(), field.grid.spacing())?;
    // Tail beyond the window, estimated from the last node and the Gaussian weight of e0.
    let eta = field.grid.right();
    let tail = (field.values[field.values.len() - 1] * e0.function.values[field.values.len() - 1]).abs()
        * (2.0 / eta).min(1.0);
    let total = inner(&e0.function, &e0.function)?.max(f64::MIN_POSITIVE) * field.max_abs().max(f64::MIN_POSITIVE);
    if tail > 1e-10 * total {
        return Err(Error::InvalidInput(format!(
            "field does not decay on [0, {eta}]: tail estimate {tail:e} relative to {total:e}"
        )));
    }
    project_onto(field, &e0.function)
}

/// Projection onto `e0` normalized on the field's own (possibly truncated) window.
pub fn project_onto(field: &HalfLineField, e0: &HalfLineField) -> Result<Projection> {
    let norm2 = inner(e0, e0)?;
    let coefficient = inner(e0, field)? / norm2;
    let values = field.values.iter().zip(&e0.values).map(|(f, e)| f - coefficient * e).collect();
    Ok(Projection { coefficient, orthogonal: HalfLineField { values, ..field.clone() } })
}

/// `V0+ = q0 eta e^(-eta^2/4)` and its derivative.
pub fn v0_plus(q0: f64, eta: f64) -> (f64, f64) {
    let g = (-eta * eta / 4.0).exp();
    (q0 * eta * g, q0 * (1.0 - 0.5 * eta * eta) * g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct V1Solution {
    pub field: HalfLineField,
    /// `||e^(eta^2/(4 + gamma)) V1||_2` on the grid, with `gamma = 0.05`.
    pub weighted_norm: f64,
}

/// Solves `-V1'' - (eta/2) V1' - (3/2) V1 = (sigma/2) V0+ - (3/2) V0+'` with `V1(0) = V1(eta_max) = 0`.
pub fn solve_v1_plus(sigma: f64, q0: f64, eta_max: f64, spacing: f64) -> Result<V1Solution> {
    if eta_max < 12.0 {
        return Err(Error::InvalidInput(format!("eta_max must be at least 12, got {eta_max}")));
    }
    if !(spacing > 0.0 && spacing <= 0.005) {
        return Err(Error::InvalidInput(format!("spacing must lie in (0, 0.005], got {spacing}")));
    }
    let grid = Grid1D::new(0.0, eta_max, spacing)?;
    let n = grid.len();
    let h = grid.spacing();
    let m = n - 2;
    let mut a = Tridiag::zeros(m);
    let mut rhs = vec![0.0; m];
    for (j, r) in rhs.iter_mut().enumerate() {
        let eta = grid.x(j + 1);
        a.lower[j] = -1.0 / (h * h) + eta / (4.0 * h);
        a.diag[j] = 2.0 / (h * h) - 1.5;
        a.upper[j] = -1.0 / (h * h) - eta / (4.0 * h);
        let (v0, dv0) = v0_plus(q0, eta);
        *r = 0.5 * sigma * v0 - 1.5 * dv0;
    }
    let lu = TridiagLu::factor(&a)?;
    lu.solve(&mut rhs);
    let mut values = vec![0.0; n];
    values[1..n - 1].copy_from_slice(&rhs);
    let gamma = 0.05;
    let weighted: Vec<f64> =
        grid.nodes().zip(&values).map(|(eta, v)| ((eta * eta / (4.0 + gamma)).exp() * v).powi(2)).collect();
    let weighted_norm = integrate(&grid, &weighted).sqrt();
    if !weighted_norm.is_finite() {
        return Err(Error::InvalidInput("V1 weighted norm is not finite".into()));
    }
    Ok(V1Solution { field: HalfLineField::new(grid, values, DecayClass::GaussianQuarter, true)?, weighted_norm })
}

/// One-sided three-point slope at `eta = 0`, Richardson-extrapolated from spacings `h` and `2h`.
pub fn slope_at_origin(field: &HalfLineField) -> f64 {
    let v = &field.values;
    let h = field.grid.spacing();
    let fine = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    let coarse = (-3.0 * v[0] + 4.0 * v[2] - v[4]) / (4.0 * h);
    (4.0 * fine - coarse) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjointSlope {
    pub quadrature: f64,
    pub closed_form: f64,
}

/// `int_0^inf (1 - eta^2/2) ((sigma/2) V0+ - (3/2) V0+') d eta`, which equals `V1+'(0)`.
pub fn adjoint_slope(sigma: f64, q0: f64) -> AdjointSlope {
    let grid = Grid1D::new(0.0, 40.0, 1e-3).expect("fixed quadrature grid");
    let integrand: Vec<f64> = grid
        .nodes()
        .map(|eta| {
            let (v0, dv0) = v0_plus(q0, eta);
            (1.0 - 0.5 * eta * eta) * (0.5 * sigma * v0 - 1.5 * dv0)
        })
        .collect();
    AdjointSlope { quadrature: integrate(&grid, &integrand), closed_form: -(sigma + THREE_SQRT_PI) * q0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjointCheck {
    pub sigma: f64,
    pub q0: f64,
    pub quadrature: f64,
    pub closed_form: f64,
    /// `V1+'(0)` from the boundary value solve.
    pub v1_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub spacing: f64,
    pub eta_max: f64,
    /// Interior sup of `|M e0 + e0/2|`.
    pub m_e0_residual: f64,
    /// Interior sup of `|M e1 - e1/2|`.
    pub m_e1_residual: f64,
    pub e0_e1_inner: f64,
    /// Interior sup of `|L V0+|`.
    pub l_v0_residual: f64,
    pub adjoint: Vec<AdjointCheck>,
    pub adjoint_max_error: f64,
    pub v1_slope_max_error: f64,
    pub v1_spacing: f64,
}

fn interior_sup(f: &HalfLineField) -> f64 {
    f.values[1..f.values.len() - 1].iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Operator identities on the grid and the adjoint slope formula at each `(sigma, q0)` pair.
pub fn identity_report(spacing: f64, eta_max: f64, pairs: &[(f64, f64)], v1_spacing: f64) -> Result<IdentityReport> {
    let e0 = eigenpair(0, eta_max, spacing)?.function;
    let e1 = eigenpair(1, eta_max, spacing)?.function;
    let shifted = |f: &HalfLineField, lambda: f64| {
        let (mf, _) = apply_m(f);
        let values = mf.values.iter().zip(&f.values).map(|(m, v)| m - lambda * v).collect();
        HalfLineField { values, ..mf }
    };
    let v0 = HalfLineField::sample(eta_max, spacing, DecayClass::GaussianQuarter, |e| v0_plus(1.0, e).0)?;
    let mut adjoint = Vec::with_capacity(pairs.len());
    for &(sigma, q0) in pairs {
        let a = adjoint_slope(sigma, q0);
        let v1 = solve_v1_plus(sigma, q0, DEFAULT_ETA_MAX, v1_spacing)?;
        adjoint.push(AdjointCheck {
            sigma,
            q0,
            quadrature: a.quadrature,
            closed_form: a.closed_form,
            v1_slope: slope_at_origin(&v1.field),
        });
    }
    let adjoint_max_error = adjoint.iter().fold(0.0f64, |m, a| m.max((a.quadrature - a.closed_form).abs()));
    let v1_slope_max_error = adjoint.iter().fold(0.0f64, |m, a| m.max((a.v1_slope - a.closed_form).abs()));
    Ok(IdentityReport {
        spacing,
        eta_max,
        m_e0_residual: interior_sup(&shifted(&e0, -0.5)),
        m_e1_residual: interior_sup(&shifted(&e1, 0.5)),
        e0_e1_inner: inner(&e0, &e1)?,
        l_v0_residual: interior_sup(&apply_l(&v0).0),
        adjoint,
        adjoint_max_error,
        v1_slope_max_error,
        v1_spacing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interior_max(f: &HalfLineField) -> f64 {
        f.values[1..f.values.len() - 1].iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn l_annihilates_v0() {
        let f = HalfLineField::sample(16.0, 0.005, DecayClass::GaussianQuarter, |e| e * (-e * e / 4.0).exp()).unwrap();
        let (lf, rep) = apply_l(&f);
        assert!(interior_max(&lf) < 1e-5);
        assert!(!rep.coarse_grid_warning);
    }

    #[test]
    fn identity_report_is_tight() {
        let r = identity_report(0.005, DEFAULT_ETA_MAX, &[(0.0, 1.0), (-THREE_SQRT_PI, 2.0)], 0.002).unwrap();
        assert!(r.m_e0_residual < 1e-5 && r.m_e1_residual < 1e-5, "{r:?}");
        assert!(r.e0_e1_inner.abs() < 1e-8);
        assert!(r.adjoint_max_error < 1e-8 && r.v1_slope_max_error < 5e-3, "{r:?}");
        assert_eq!(r.adjoint[1].closed_form, 0.0);
    }

    #[test]
    fn operators_are_linear_at_zero() {
        let f = HalfLineField::sample(16.0, 0.01, DecayClass::None, |_| 0.0).unwrap();
        assert_eq!(apply_l(&f).0.max_abs(), 0.0);
        assert_eq!(apply_m(&f).0.max_abs(), 0.0);
    }

    #[test]
    fn coarse_grid_is_flagged() {
        let f = HalfLineField::sample(16.0, 0.2, DecayClass::None, |e| e * (-e * e).exp()).unwrap();
        assert!(apply_m(&f).1.coarse_grid_warning);
    }

    #[test]
    fn l_matches_dense_matrix_oracle() {
        let f = HalfLineField::new(
            Grid1D::new(0.0, 12.0, 0.05).unwrap(),
            Grid1D::new(0.0, 12.0, 0.05).unwrap().nodes().map(|e| (-e * e / 4.0).exp()).collect(),
            DecayClass::GaussianQuarter,
            false,
        )
        .unwrap();
        let n = f.values.len();
        let h = f.grid.spacing();
        let mut d2 = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut d1 = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 1..n - 1 {
            d2[(i, i - 1)] = 1.0 / (h * h);
            d2[(i, i)] = -2.0 / (h * h);
            d2[(i, i + 1)] = 1.0 / (h * h);
            d1[(i, i - 1)] = -0.5 / h;
            d1[(i, i + 1)] = 0.5 / h;
        }
        for (row, sign, step) in [(0usize, 1.0, 1isize), (n - 1, -1.0, -1isize)] {
            let at = |k: isize| (row as isize + k * step) as usize;
            d2[(row, at(0))] = 2.0 / (h * h);
            d2[(row, at(1))] = -5.0 / (h * h);
            d2[(row, at(2))] = 4.0 / (h * h);
            d2[(row, at(3))] = -1.0 / (h * h);
            d1[(row, at(0))] = sign * -1.5 / h;
            d1[(row, at(1))] = sign * 2.0 / h;
            d1[(row, at(2))] = sign * -0.5 / h;
        }
        let eta = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, f.grid.nodes()));
        let op = -&d2 - 0.5 * &eta * &d1 - nalgebra::DMatrix::<f64>::identity(n, n);
        let expected = op * nalgebra::DVector::from_vec(f.values.clone());
        let (lf, _) = apply_l(&f);
        for i in 0..n {
            assert!((lf.values[i] - expected[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn eigenfunctions_satisfy_m_equation() {
        for (index, lambda) in [(0usize, -0.5), (1usize, 0.5)] {
            let e = eigenpair(index, 16.0, 0.005).unwrap();
            let (me, _) = apply_m(&e.function);
            let res: Vec<f64> = me.values.iter().zip(&e.function.values).map(|(m, v)| m - lambda * v).collect();
            let worst = res[1..res.len() - 1].iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(worst < 1e-5, "index {index}: {worst}");
        }
    }

    #[test]
    fn normalization_constants_match_closed_forms() {
        let e0 = eigenpair(0, 40.0, 0.001).unwrap();
        let e1 = eigenpair(1, 40.0, 0.001).unwrap();
        assert!((e0.normalization - c0_closed_form()).abs() < 1e-10);
        assert!((e0.normalization - 0.531_125_966).abs() < 1e-9);
        assert!((e1.normalization - c1_closed_form()).abs() < 1e-10);
        assert!((inner(&e0.function, &e0.function).unwrap() - 1.0).abs() < 1e-12);
        assert!(inner(&e0.function, &e1.function).unwrap().abs() < 1e-8);
        assert!(e1.function.values[10] > 0.0);
    }

    #[test]
    fn index_two_is_unsupported() {
        assert!(eigenpair(2, 16.0, 0.01).is_err());
    }

    #[test]
    fn projection_examples() {
        let e0 = eigenpair(0, 20.0, 0.005).unwrap().function;
        let e1 = eigenpair(1, 20.0, 0.005).unwrap().function;
        let scaled = HalfLineField { values: e0.values.iter().map(|v| 3.0 * v).collect(), ..e0.clone() };
        let p = project_e0(&scaled).unwrap();
        assert!((p.coefficient - 3.0).abs() < 1e-12);
        assert!(p.orthogonal.max_abs() < 1e-12);
        assert!(project_e0(&e1).unwrap().coefficient.abs() < 1e-8);
        let sum =
            HalfLineField { values: e0.values.iter().zip(&e1.values).map(|(a, b)| a + b).collect(), ..e0.clone() };
        let p = project_e0(&sum).unwrap();
        assert!((p.coefficient - 1.0).abs() < 1e-8);
        let diff = p.orthogonal.values.iter().zip(&e1.values).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(diff < 1e-8);
        assert!(project_e0(&p.orthogonal).unwrap().coefficient.abs() < 1e-10);
    }

    #[test]
    fn non_decaying_field_is_rejected() {
        let f = HalfLineField::sample(8.0, 0.01, DecayClass::None, |e| e).unwrap();
        assert!(project_e0(&f).is_err());
    }

    #[test]
    fn adjoint_slope_examples() {
        let a = adjoint_slope(-THREE_SQRT_PI, 1.0);
        assert!(a.quadrature.abs() < 1e-8 && a.closed_form.abs() < 1e-12);
        let b = adjoint_slope(0.0, 1.0);
        assert!((b.quadrature + THREE_SQRT_PI).abs() < 1e-8);
        let c = adjoint_slope(1.0, 2.0);
        assert!((c.quadrature + 2.0 * (1.0 + THREE_SQRT_PI)).abs() < 1e-8);
    }

    #[test]
    fn v1_slope_matches_adjoint_identity() {
        for sigma in [-THREE_SQRT_PI, 0.0] {
            let s = solve_v1_plus(sigma, 1.0, 16.0, 0.002).unwrap();
            let slope = slope_at_origin(&s.field);
            let expected = adjoint_slope(sigma, 1.0).closed_form;
            assert!((slope - expected).abs() < 2e-3, "sigma {sigma}: {slope} vs {expected}");
            assert!(s.weighted_norm.is_finite());
        }
    }

    #[test]
    fn zero_amplitude_gives_zero_v1() {
        let s = solve_v1_plus(-THREE_SQRT_PI, 0.0, 16.0, 0.005).unwrap();
        assert_eq!(s.field.max_abs(), 0.0);
    }

    #[test]
    fn shifted_adjoint_identity_converges_at_second_order() {
        // (L - 1/2)^* annihilates 1 - eta^2/2, so <(L - 1/2) u, 1 - eta^2/2> vanishes for
        // compactly supported u; the discrete value is a pure truncation error.
        let bump = |e: f64| {
            let z = (e - 4.0) / 2.5;
            if z.abs() < 1.0 {
                (1.0 - z * z).powi(4)
            } else {
                0.0
            }
        };
        let spacings = [0.02, 0.01, 0.005];
        let errors: Vec<f64> = spacings
            .iter()
            .map(|&h| {
                let u = HalfLineField::sample(10.0, h, DecayClass::None, bump).unwrap();
                let (lu, _) = apply_l(&u);
                let w: Vec<f64> = u
                    .grid
                    .nodes()
                    .zip(&lu.values)
                    .zip(&u.values)
                    .map(|((e, l), v)| (l - 0.5 * v) * (1.0 - 0.5 * e * e))
                    .collect();
                integrate(&u.grid, &w).abs()
            })
            .collect();
        let fit = crate::stats::loglog_fit(&spacings, &errors).unwrap();
        assert!(fit.slope >= 1.9, "{errors:?} slope {}", fit.slope);
    }

    proptest! {
        #[test]
        fn rayleigh_quotient_above_gap(coeffs in prop::collection::vec(-1.0f64..1.0, 4)) {
            let spacing = 0.01;
            let raw = HalfLineField::sample(20.0, spacing, DecayClass::GaussianEighth, |e| {
                let g = (-e * e / 8.0).exp();
                e * g * (coeffs[0] + coeffs[1] * e + coeffs[2] * e * e + coeffs[3] * e.powi(3))
            }).unwrap();
            let p = project_e0(&raw).unwrap();
            let f = p.orthogonal;
            let norm2 = inner(&f, &f).unwrap();
            prop_assume!(norm2 > 1e-6);
            let (mf, _) = apply_m(&f);
            let mut interior = mf.clone();
            let last = interior.values.len() - 1;
            interior.values[0] = 0.0;
            interior.values[last] = 0.0;
            let q = inner(&interior, &f).unwrap() / norm2;
            prop_assert!(q >= 0.5 - 5e-3, "Rayleigh quotient {}", q);
        }
    }
}
