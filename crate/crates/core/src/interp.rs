//! Interpolants on uniform grids.

use crate::grid::Grid1D;

/// Natural cubic spline through uniformly spaced samples.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    grid: Grid1D,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(grid: Grid1D, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "spline needs one value per node");
        let n = values.len();
        let h = grid.spacing();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Tridiagonal system (1, 4, 1) m = 6/h^2 * second differences, natural ends.
            let m = n - 2;
            let mut c = vec![0.0; m];
            let mut d = vec![0.0; m];
            for j in 0..m {
                let i = j + 1;
                let rhs = 6.0 * (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h);
                if j == 0 {
                    c[j] = 1.0 / 4.0;
                    d[j] = rhs / 4.0;
                } else {
                    let denom = 4.0 - c[j - 1];
                    c[j] = 1.0 / denom;
                    d[j] = (rhs - d[j - 1]) / denom;
                }
            }
            second[m] = d[m - 1];
            for j in (0..m - 1).rev() {
                second[j + 1] = d[j] - c[j] * second[j + 2];
            }
        }
        Self { grid, values, second }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn locate(&self, x: f64) -> (usize, f64, f64) {
        let i = self.grid.cell(x);
        let h = self.grid.spacing();
        let b = (x - self.grid.x(i)) / h;
        (i, 1.0 - b, b)
    }

    /// Value at `x`; extrapolates with the end cubic outside the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let (i, a, b) = self.locate(x);
        let h = self.grid.spacing();
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let (i, a, b) = self.locate(x);
        let h = self.grid.spacing();
        (self.values[i + 1] - self.values[i]) / h
            + ((1.0 - 3.0 * a * a) * self.second[i] + (3.0 * b * b - 1.0) * self.second[i + 1]) * h / 6.0
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let (i, a, b) = self.locate(x);
        a * self.second[i] + b * self.second[i + 1]
    }
}

/// Cubic Hermite segment on `[x0, x0 + h]` with endpoint values and slopes.
#[derive(Debug, Clone, Copy)]
pub struct HermiteSegment {
    pub x0: f64,
    pub h: f64,
    pub y0: f64,
    pub y1: f64,
    pub d0: f64,
    pub d1: f64,
}

impl HermiteSegment {
    pub fn eval(&self, x: f64) -> f64 {
        let s = (x - self.x0) / self.h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y0 + h10 * self.h * self.d0 + h01 * self.y1 + h11 * self.h * self.d1
    }

    /// Solves `eval(x) = level` inside the segment, assuming a sign change at the endpoints.
    pub fn solve(&self, level: f64) -> f64 {
        let (mut lo, mut hi) = (self.x0, self.x0 + self.h);
        let mut flo = self.y0 - level;
        if flo == 0.0 {
            return lo;
        }
        if self.y1 - level == 0.0 {
            return hi;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let fm = self.eval(mid) - level;
            if fm == 0.0 {
                return mid;
            }
            if (fm < 0.0) == (flo < 0.0) {
                lo = mid;
                flo = fm;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Monotone cubic Hermite segment for the cell `[i, i+1]` of uniformly spaced data.
///
/// Slopes are centred differences, limited so that monotone data stay monotone.
pub fn monotone_segment(grid: &Grid1D, values: &[f64], i: usize) -> HermiteSegment {
    let h = grid.spacing();
    let n = values.len();
    let delta = |j: usize| (values[j + 1] - values[j]) / h;
    let mid = delta(i);
    let slope_at = |j: usize| -> f64 {
        let left = if j > 0 { Some(delta(j - 1)) } else { None };
        let right = if j + 1 < n { Some(delta(j)) } else { None };
        match (left, right) {
            (Some(l), Some(r)) => {
                if l * r <= 0.0 {
                    0.0
                } else {
                    let c = 0.5 * (l + r);
                    let cap = 3.0 * l.abs().min(r.abs());
                    c.signum() * c.abs().min(cap)
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            (None, None) => 0.0,
        }
    };
    let (mut d0, mut d1) = (slope_at(i), slope_at(i + 1));
    if mid == 0.0 {
        d0 = 0.0;
        d1 = 0.0;
    } else {
        if d0 * mid < 0.0 {
            d0 = 0.0;
        }
        if d1 * mid < 0.0 {
            d1 = 0.0;
        }
    }
    HermiteSegment { x0: grid.x(i), h, y0: values[i], y1: values[i + 1], d0, d1 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_reproduces_nodes_and_smooth_functions() {
        let g = Grid1D::new(0.0, 3.0, 0.01).unwrap();
        let vals: Vec<f64> = g.nodes().map(f64::sin).collect();
        let s = CubicSpline::new(g, vals);
        assert!((s.eval(g.x(17)) - g.x(17).sin()).abs() < 1e-15);
        for &x in &[0.5, 1.234_567, 2.5] {
            assert!((s.eval(x) - f64::sin(x)).abs() < 1e-9);
            assert!((s.derivative(x) - f64::cos(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn monotone_segment_reproduces_linear_data() {
        let g = Grid1D::new(0.0, 10.0, 0.5).unwrap();
        let vals: Vec<f64> = g.nodes().map(|x| 1.0 - x / 10.0).collect();
        let seg = monotone_segment(&g, &vals, 15);
        assert!((seg.solve(0.25) - 7.5).abs() < 1e-13);
    }

    #[test]
    fn monotone_segment_stays_inside_data_range() {
        let g = Grid1D::new(0.0, 4.0, 1.0).unwrap();
        let vals = vec![1.0, 1.0, 0.9, 0.0, 0.0];
        for i in 0..4 {
            let seg = monotone_segment(&g, &vals, i);
            for k in 0..=20 {
                let y = seg.eval(g.x(i) + k as f64 * 0.05);
                let lo = vals[i].min(vals[i + 1]);
                let hi = vals[i].max(vals[i + 1]);
                assert!(y >= lo - 1e-15 && y <= hi + 1e-15);
            }
        }
    }
}
