//! Nonlinearities, admissibility scans, moving frames and initial data.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;

/// `3 * sqrt(pi)`, the coefficient of the universal `t^(-1/2)` front correction.
pub const THREE_SQRT_PI: f64 = 5.317_361_552_716_548;

pub const KPP_TOLERANCE: f64 = 1e-12;
const DERIVATIVE_CHECK_STEP: f64 = 1e-6;
const DERIVATIVE_CHECK_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SAMPLE_COUNT: usize = 4096;

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Reaction term `f` together with its user-supplied linearization at zero.
#[derive(Clone)]
pub struct Nonlinearity {
    name: String,
    f: ScalarMap,
    derivative_at_zero: f64,
    derivative_at_one: Option<f64>,
    sample_count: usize,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("derivative_at_zero", &self.derivative_at_zero)
            .field("sample_count", &self.sample_count)
            .finish()
    }
}

impl Nonlinearity {
    pub fn new(
        name: impl Into<String>,
        derivative_at_zero: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(derivative_at_zero > 0.0) || !derivative_at_zero.is_finite() {
            return Err(Error::InvalidInput(format!("f'(0) must be positive, got {derivative_at_zero}")));
        }
        Ok(Self {
            name: name.into(),
            f: Arc::new(f),
            derivative_at_zero,
            derivative_at_one: None,
            sample_count: DEFAULT_SAMPLE_COUNT,
        })
    }

    /// `f(u) = u - u^2`.
    pub fn fisher() -> Self {
        Self::new("fisher", 1.0, |u| u - u * u).unwrap().with_derivative_at_one(-1.0)
    }

    /// `f(u) = u - u^3`.
    pub fn cubic() -> Self {
        Self::new("cubic", 1.0, |u| u - u * u * u).unwrap().with_derivative_at_one(-2.0)
    }

    /// `f(u) = u (1 - u)(1 + b u)`; KPP exactly when `b <= 1`.
    pub fn fisher_b(b: f64) -> Self {
        Self::new(format!("fisher_b({b})"), 1.0, move |u| u * (1.0 - u) * (1.0 + b * u))
            .unwrap()
            .with_derivative_at_one(-(1.0 + b))
    }

    /// Built-in lookup used by configuration files.
    pub fn by_name(name: &str, parameter: Option<f64>) -> Result<Self> {
        match (name, parameter) {
            ("fisher", None) => Ok(Self::fisher()),
            ("cubic", None) => Ok(Self::cubic()),
            ("fisher_b", Some(b)) => Ok(Self::fisher_b(b)),
            ("fisher_b", None) => Err(Error::InvalidInput("fisher_b needs a parameter b".into())),
            (other, Some(_)) if other == "fisher" || other == "cubic" => {
                Err(Error::InvalidInput(format!("nonlinearity {other} takes no parameter")))
            }
            (other, _) => Err(Error::InvalidInput(format!("unknown nonlinearity {other:?}"))),
        }
    }

    pub fn with_derivative_at_one(mut self, value: f64) -> Self {
        self.derivative_at_one = Some(value);
        self
    }

    pub fn with_sample_count(mut self, count: usize) -> Self {
        self.sample_count = count.max(1);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        (self.f)(u)
    }

    pub fn derivative_at_zero(&self) -> f64 {
        self.derivative_at_zero
    }

    /// `f'(1)`, supplied or estimated by a one-sided second-order difference.
    pub fn derivative_at_one(&self) -> f64 {
        self.derivative_at_one.unwrap_or_else(|| {
            let h = 1e-4;
            (3.0 * self.eval(1.0) - 4.0 * self.eval(1.0 - h) + self.eval(1.0 - 2.0 * h)) / (2.0 * h)
        })
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Minimal front speed `2 sqrt(f'(0))`.
    pub fn minimal_speed(&self) -> f64 {
        2.0 * self.derivative_at_zero.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KppReport {
    pub name: String,
    pub passes: bool,
    pub scan_points: usize,
    /// Largest value of `f(u) - f'(0) u` over the scan.
    pub max_violation: f64,
    pub argmax_u: f64,
    pub f_at_zero: f64,
    pub f_at_one: f64,
    pub derivative_supplied: f64,
    pub derivative_difference_quotient: f64,
}

/// Dense scan of the KPP condition `f(u) <= f'(0) u` on `(0, 1)`.
pub fn check_kpp(nl: &Nonlinearity) -> Result<KppReport> {
    let finite = |u: f64| -> Result<f64> {
        let v = nl.eval(u);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { name: nl.name.clone(), u })
        }
    };
    let n = nl.sample_count;
    let r = nl.derivative_at_zero;
    let mut max_violation = f64::NEG_INFINITY;
    let mut argmax_u = f64::NAN;
    for j in 1..=n {
        let u = j as f64 / (n + 1) as f64;
        let excess = finite(u)? - r * u;
        if excess > max_violation {
            max_violation = excess;
            argmax_u = u;
        }
    }
    let f0 = finite(0.0)?;
    let f1 = finite(1.0)?;
    let quotient = (finite(DERIVATIVE_CHECK_STEP)? - f0) / DERIVATIVE_CHECK_STEP;
    let passes = max_violation <= KPP_TOLERANCE
        && f0.abs() <= KPP_TOLERANCE
        && f1.abs() <= KPP_TOLERANCE
        && (quotient - r).abs() <= DERIVATIVE_CHECK_TOLERANCE;
    Ok(KppReport {
        name: nl.name.clone(),
        passes,
        scan_points: n,
        max_violation,
        argmax_u,
        f_at_zero: f0,
        f_at_one: f1,
        derivative_supplied: r,
        derivative_difference_quotient: quotient,
    })
}

/// Moving frame `y = x - s(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Frame {
    Rest,
    Linear { speed: f64 },
    Bramson,
    Refined,
}

/// `2t - (3/2) log t`.
pub fn bramson_shift(t: f64) -> f64 {
    2.0 * t - 1.5 * t.ln()
}

impl Frame {
    pub fn shift(&self, t: f64) -> f64 {
        match *self {
            Frame::Rest => 0.0,
            Frame::Linear { speed } => speed * t,
            Frame::Bramson => bramson_shift(t),
            Frame::Refined => bramson_shift(t) - THREE_SQRT_PI / t.sqrt(),
        }
    }

    pub fn shift_rate(&self, t: f64) -> f64 {
        match *self {
            Frame::Rest => 0.0,
            Frame::Linear { speed } => speed,
            Frame::Bramson => 2.0 - 1.5 / t,
            Frame::Refined => 2.0 - 1.5 / t + 0.5 * THREE_SQRT_PI * t.powf(-1.5),
        }
    }

    pub fn tag(&self) -> String {
        match *self {
            Frame::Rest => "rest".into(),
            Frame::Linear { speed } => format!("linear({speed})"),
            Frame::Bramson => "bramson".into(),
            Frame::Refined => "refined".into(),
        }
    }
}

/// Shape of the initial datum `u_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialShape {
    Step,
    StepPlusBump {
        center: f64,
        width: f64,
        amplitude: f64,
    },
    /// Piecewise-linear table; outside the table the step values apply.
    CustomTable {
        x: Vec<f64>,
        values: Vec<f64>,
    },
}

/// Initial datum equal to 1 for `x < -L` and 0 for `x >= L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub shape: InitialShape,
    pub support_radius: f64,
}

impl InitialCondition {
    pub fn step() -> Self {
        Self { shape: InitialShape::Step, support_radius: 0.0 }
    }

    pub fn step_plus_bump(center: f64, width: f64, amplitude: f64) -> Self {
        Self { shape: InitialShape::StepPlusBump { center, width, amplitude }, support_radius: 0.0 }
    }

    pub fn custom_table(x: Vec<f64>, values: Vec<f64>) -> Self {
        Self { shape: InitialShape::CustomTable { x, values }, support_radius: 0.0 }
    }

    /// Radius outside which the datum is exactly the step.
    pub fn effective_radius(&self) -> f64 {
        let shape_radius = match &self.shape {
            InitialShape::Step => 0.0,
            InitialShape::StepPlusBump { center, width, .. } => center.abs() + width,
            InitialShape::CustomTable { x, .. } => x.iter().fold(0.0f64, |acc, v| acc.max(v.abs())),
        };
        self.support_radius.max(shape_radius)
    }

    /// Rejects data that leave `[0, 1]` or are malformed.
    pub fn validate(&self) -> Result<()> {
        if !(self.support_radius >= 0.0) || !self.support_radius.is_finite() {
            return Err(Error::InvalidInput("support radius must be finite and nonnegative".into()));
        }
        match &self.shape {
            InitialShape::Step => {}
            InitialShape::StepPlusBump { center, width, amplitude } => {
                if !(width > &0.0) || !center.is_finite() || !amplitude.is_finite() {
                    return Err(Error::InvalidInput("bump needs finite center/amplitude and positive width".into()));
                }
                // The bump is largest at its centre, so a dense sample of its support is exact enough.
                let samples = 4001;
                for j in 0..samples {
                    let x = center - width + 2.0 * width * j as f64 / (samples - 1) as f64;
                    let v = self.eval(x);
                    if !(-1e-15..=1.0 + 1e-15).contains(&v) {
                        return Err(Error::InvalidInput(format!(
                            "bump pushes the initial datum to {v} at x = {x}, outside [0, 1]"
                        )));
                    }
                }
            }
            InitialShape::CustomTable { x, values } => {
                if x.len() != values.len() || x.len() < 2 {
                    return Err(Error::InvalidInput("custom table needs matching x/value columns".into()));
                }
                if x.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidInput("custom table abscissae must increase".into()));
                }
                if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::InvalidInput(format!("custom table value {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// Value of `u_in` at lab coordinate `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let radius = self.effective_radius();
        if x < -radius {
            return 1.0;
        }
        if x >= radius && !matches!(self.shape, InitialShape::Step) {
            return 0.0;
        }
        let step = if x < 0.0 { 1.0 } else { 0.0 };
        match &self.shape {
            InitialShape::Step => step,
            InitialShape::StepPlusBump { center, width, amplitude } => {
                let z = (x - center) / width;
                if z.abs() < 1.0 {
                    step + amplitude * (0.5 * PI * z).cos().powi(2)
                } else {
                    step
                }
            }
            InitialShape::CustomTable { x: xs, values } => {
                if x < xs[0] {
                    return 1.0;
                }
                if x > xs[xs.len() - 1] {
                    return 0.0;
                }
                let j = xs.partition_point(|v| *v <= x).clamp(1, xs.len() - 1);
                let (x0, x1) = (xs[j - 1], xs[j]);
                let w = (x - x0) / (x1 - x0);
                values[j - 1] * (1.0 - w) + values[j] * w
            }
        }
    }
}

/// Samples the initial datum on `grid` (lab coordinates).
pub fn make_initial(ic: &InitialCondition, grid: &Grid1D) -> Result<Vec<f64>> {
    ic.validate()?;
    let radius = ic.effective_radius();
    if grid.left() > -radius - 1.0 || grid.right() < radius + 1.0 {
        return Err(Error::InvalidInput(format!(
            "grid [{}, {}] does not cover [{}, {}]",
            grid.left(),
            grid.right(),
            -radius - 1.0,
            radius + 1.0
        )));
    }
    let values: Vec<f64> = grid.nodes().map(|x| ic.eval(x)).collect();
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("initial value {v} at x = {} outside [0, 1]", grid.x(i))));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fisher_passes_with_zero_violation() {
        let r = check_kpp(&Nonlinearity::fisher()).unwrap();
        assert!(r.passes);
        assert!(r.max_violation <= 0.0);
        assert_eq!(r.derivative_supplied, 1.0);
    }

    #[test]
    fn cubic_passes() {
        assert!(check_kpp(&Nonlinearity::cubic()).unwrap().passes);
    }

    #[test]
    fn pushed_nonlinearity_fails_at_interior_maximum() {
        let r = check_kpp(&Nonlinearity::fisher_b(5.0).with_sample_count(512)).unwrap();
        assert!(!r.passes);
        // f(u) - u = u^2 (4 - 5u) peaks at u = 8/15.
        assert!(r.max_violation > 0.3);
        assert!((r.argmax_u - 8.0 / 15.0).abs() < 2.0 / 513.0);
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let nl = Nonlinearity::new("bad", 1.0, |u| if u > 0.5 { f64::NAN } else { u - u * u }).unwrap();
        assert!(matches!(check_kpp(&nl), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn wrong_supplied_derivative_fails() {
        let nl = Nonlinearity::new("mislabelled", 2.0, |u| u - u * u).unwrap();
        assert!(!check_kpp(&nl).unwrap().passes);
    }

    #[test]
    fn refined_rate_matches_difference_quotient() {
        for &t in &[1.0, 3.7, 100.0, 1e4, 1e6] {
            let h = 1e-4 * t;
            let fd = (Frame::Refined.shift(t + h) - Frame::Refined.shift(t - h)) / (2.0 * h);
            let rel = (fd - Frame::Refined.shift_rate(t)).abs() / Frame::Refined.shift_rate(t);
            assert!(rel < 1e-8, "t={t} rel={rel}");
        }
    }

    proptest! {
        #[test]
        fn refined_minus_bramson_is_the_universal_correction(logt in 0.0f64..(6.0 * std::f64::consts::LN_10)) {
            let t = logt.exp();
            let d = Frame::Refined.shift(t) - Frame::Bramson.shift(t);
            prop_assert!((d + THREE_SQRT_PI / t.sqrt()).abs() < 1e-12 * (1.0 + t));
        }

        #[test]
        fn kpp_pass_implies_scan_inequality(b in -1.0f64..1.0) {
            let nl = Nonlinearity::fisher_b(b);
            let r = check_kpp(&nl).unwrap();
            prop_assert!(r.passes);
            let n = nl.sample_count();
            for j in 1..=n {
                let u = j as f64 / (n + 1) as f64;
                prop_assert!(u - nl.eval(u) >= -1e-12);
            }
        }

        #[test]
        fn step_plus_bump_stays_in_unit_interval(c in 0.5f64..5.0, w in 0.1f64..0.5, a in 0.0f64..1.0) {
            let ic = InitialCondition::step_plus_bump(c, w, a);
            let grid = Grid1D::new(-10.0, 10.0, 0.01).unwrap();
            let u = make_initial(&ic, &grid).unwrap();
            prop_assert!(u.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn step_is_heaviside() {
        let grid = Grid1D::new(-50.0, 200.0, 0.02).unwrap();
        let u = make_initial(&InitialCondition::step(), &grid).unwrap();
        for (x, v) in grid.nodes().zip(&u) {
            assert_eq!(*v, if x < 0.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn bump_deviation_is_compact() {
        let grid = Grid1D::new(-50.0, 200.0, 0.02).unwrap();
        let ic = InitialCondition::step_plus_bump(2.0, 1.0, 0.5);
        let u = make_initial(&ic, &grid).unwrap();
        for (x, v) in grid.nodes().zip(&u) {
            assert!((0.0..=1.0).contains(v));
            let step = if x < 0.0 { 1.0 } else { 0.0 };
            if (x - 2.0).abs() >= 1.0 {
                assert_eq!(*v, step);
            }
        }
        assert!((u[grid.nearest(2.0).unwrap()] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oversized_bump_is_rejected() {
        let grid = Grid1D::new(-50.0, 200.0, 0.02).unwrap();
        let ic = InitialCondition::step_plus_bump(2.0, 1.0, 1.5);
        assert!(make_initial(&ic, &grid).is_err());
    }

    #[test]
    fn grid_must_cover_support() {
        let grid = Grid1D::new(-1.0, 1.0, 0.01).unwrap();
        assert!(make_initial(&InitialCondition::step_plus_bump(2.0, 1.0, 0.5), &grid).is_err());
    }
}
