//! Pinned acceptance tolerances and the verdict lines printed by the `acceptance` target.

use std::fmt;

pub mod tol {
    /// Largest wave residual and the relative spread of `k` over three refinements.
    pub const WAVE_RESIDUAL: f64 = 1e-10;
    pub const WAVE_K_RELATIVE: f64 = 5e-5;
    pub const WAVE_OMEGA0_MIN: f64 = 0.5;
    pub const WAVE_SECONDS: f64 = 10.0;

    pub const ADJOINT: f64 = 1e-8;
    pub const V1_SLOPE: f64 = 5e-3;
    pub const ADJOINT_SECONDS: f64 = 5.0;

    pub const EIGEN_RESIDUAL: f64 = 1e-5;
    pub const EIGEN_INNER: f64 = 1e-8;
    pub const SPECTRAL_SECONDS: f64 = 5.0;

    pub const INNER_SLOPE: (f64, f64) = (-1.0, -0.70);
    pub const JUMP_SLOPE_HALF_WIDTH: f64 = 0.15;
    pub const OUTER_SLOPE: f64 = -1.5;
    pub const OUTER_SLOPE_HALF_WIDTH: f64 = 0.15;
    pub const RESIDUAL_SECONDS: f64 = 120.0;

    pub const B_RELATIVE: f64 = 0.10;
    pub const B_SPREAD_RELATIVE: f64 = 0.05;
    pub const HEADLINE_SECONDS: f64 = 1800.0;

    pub const UNIVERSAL_B_RELATIVE: f64 = 0.05;
    pub const A_SEPARATION: f64 = 3.0;

    pub const COMPARISON_SLOPE_MAX: f64 = -0.85;

    pub const PROBE_MATCHED_MIN: f64 = 0.85;
    pub const PROBE_UNMATCHED: (f64, f64) = (0.4, 0.6);
    pub const PROBE_SECONDS: f64 = 300.0;

    pub const DETERMINISM_RELATIVE: f64 = 1e-12;
    pub const RESUME_POSITION: f64 = 1e-9;
    pub const FORM_CROSS_CHECK: f64 = 1e-5;
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(id: u32, name: &'static str, checks: &[(bool, String)]) -> Self {
        let pass = checks.iter().all(|(ok, _)| *ok);
        let detail = checks
            .iter()
            .map(|(ok, text)| if *ok { text.clone() } else { format!("{text} [miss]") })
            .collect::<Vec<_>>()
            .join("; ");
        Self { id, name, pass, detail }
    }

    pub fn failed(id: u32, name: &'static str, error: impl fmt::Display) -> Self {
        Self { id, name, pass: false, detail: format!("error: {error}") }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {} {status} {}: {}", self.id, self.name, self.detail)
    }
}

/// `lo <= x <= hi`, false for NaN.
pub fn within(x: f64, lo: f64, hi: f64) -> bool {
    x >= lo && x <= hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_fails_when_any_check_misses() {
        let v = Verdict::new(4, "residual scaling", &[(true, "inner -0.7".into()), (false, "outer -0.8".into())]);
        assert!(!v.pass);
        assert_eq!(v.to_string(), "criterion 4 FAIL residual scaling: inner -0.7; outer -0.8 [miss]");
    }

    #[test]
    fn nan_is_never_within_bounds() {
        assert!(!within(f64::NAN, -1.0, 1.0));
        assert!(within(-1.0, -1.0, 1.0));
    }
}
