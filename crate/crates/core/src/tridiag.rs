//! Thomas algorithm with a reusable factorization.

use crate::error::{Error, Result};

/// Tridiagonal matrix stored by diagonals; `lower[0]` and `upper[n-1]` are unused.
#[derive(Debug, Clone, Default)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Self { lower: vec![0.0; n], diag: vec![0.0; n], upper: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn resize(&mut self, n: usize) {
        self.lower.resize(n, 0.0);
        self.diag.resize(n, 0.0);
        self.upper.resize(n, 0.0);
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            out[i] = acc;
        }
    }
}

/// LU factors of a tridiagonal matrix without pivoting.
#[derive(Debug, Clone, Default)]
pub struct TridiagLu {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagLu {
    pub fn factor(m: &Tridiag) -> Result<Self> {
        let mut lu = Self::default();
        lu.refactor(m)?;
        Ok(lu)
    }

    /// Factors `m` into the existing buffers.
    pub fn refactor(&mut self, m: &Tridiag) -> Result<()> {
        let n = m.len();
        self.lower.clear();
        self.lower.extend_from_slice(&m.lower);
        self.upper.clear();
        self.upper.extend_from_slice(&m.upper);
        self.inv_pivot.resize(n, 0.0);
        let mut prev_ratio = 0.0;
        for i in 0..n {
            let pivot = if i == 0 { m.diag[0] } else { m.diag[i] - m.lower[i] * prev_ratio };
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Singular { row: i });
            }
            let inv = 1.0 / pivot;
            self.inv_pivot[i] = inv;
            prev_ratio = m.upper[i] * inv;
        }
        Ok(())
    }

    /// Solves in place.
    pub fn solve(&self, rhs: &mut [f64]) {
        let n = self.inv_pivot.len();
        debug_assert_eq!(rhs.len(), n);
        if n == 0 {
            return;
        }
        rhs[0] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.upper[i] * self.inv_pivot[i] * rhs[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn solve_inverts_diagonally_dominant_systems(
            entries in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 2..60)
        ) {
            let n = entries.len();
            let mut m = Tridiag::zeros(n);
            let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
            for (i, (l, d, u)) in entries.iter().enumerate() {
                m.lower[i] = *l;
                m.upper[i] = *u;
                m.diag[i] = 2.5 + d;
            }
            let mut b = vec![0.0; n];
            m.mul_vec(&x, &mut b);
            let lu = TridiagLu::factor(&m).unwrap();
            lu.solve(&mut b);
            for i in 0..n {
                prop_assert!((b[i] - x[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut m = Tridiag::zeros(3);
        m.diag = vec![0.0, 1.0, 1.0];
        assert!(matches!(TridiagLu::factor(&m), Err(Error::Singular { row: 0 })));
    }
}
