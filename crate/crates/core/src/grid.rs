use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform one-dimensional grid `left + i * spacing`, `i = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    left: f64,
    spacing: f64,
    len: usize,
}

impl Grid1D {
    /// Builds the grid covering `[left, right]`; the node count is
    /// `round((right - left) / spacing) + 1` and `right` is snapped onto the last node.
    pub fn new(left: f64, right: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidInput(format!("grid spacing must be positive, got {spacing}")));
        }
        if !(right > left) || !left.is_finite() || !right.is_finite() {
            return Err(Error::InvalidInput(format!("grid needs right > left, got [{left}, {right}]")));
        }
        let len = ((right - left) / spacing).round() as usize + 1;
        Self::from_len(left, spacing, len)
    }

    pub fn from_len(left: f64, spacing: f64, len: usize) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidInput(format!("grid spacing must be positive, got {spacing}")));
        }
        if len < 2 {
            return Err(Error::InvalidInput("grid needs at least two nodes".into()));
        }
        Ok(Self { left, spacing, len })
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.x(self.len - 1)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.left + i as f64 * self.spacing
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.x(i))
    }

    /// Index of the node nearest to `x`, if `x` lies within half a spacing of the grid.
    pub fn nearest(&self, x: f64) -> Option<usize> {
        let r = (x - self.left) / self.spacing;
        if r < -0.5 || r > self.len as f64 - 0.5 {
            return None;
        }
        Some((r.round().max(0.0) as usize).min(self.len - 1))
    }

    /// Index `i` with `x(i) <= x < x(i+1)`, clamped to the valid interval range.
    pub fn cell(&self, x: f64) -> usize {
        let r = ((x - self.left) / self.spacing).floor();
        if r <= 0.0 {
            0
        } else {
            (r as usize).min(self.len - 2)
        }
    }

    /// Same spacing, `extra_left` nodes prepended and `extra_right` appended.
    pub fn extended(&self, extra_left: usize, extra_right: usize) -> Self {
        Self {
            left: self.left - extra_left as f64 * self.spacing,
            spacing: self.spacing,
            len: self.len + extra_left + extra_right,
        }
    }

    /// Drops the first `count` nodes.
    pub fn truncated_left(&self, count: usize) -> Result<Self> {
        if count + 2 > self.len {
            return Err(Error::InvalidInput("truncation would leave fewer than two nodes".into()));
        }
        Ok(Self { left: self.x(count), spacing: self.spacing, len: self.len - count })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_count_matches_rounding_rule() {
        let g = Grid1D::new(-50.0, 200.0, 0.02).unwrap();
        assert_eq!(g.len(), 12501);
        assert!((g.right() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid1D::new(0.0, 1.0, 0.0).is_err());
        assert!(Grid1D::new(0.0, 1.0, -0.1).is_err());
        assert!(Grid1D::new(1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn extension_and_truncation_keep_alignment() {
        let g = Grid1D::new(-1.0, 1.0, 0.25).unwrap();
        let e = g.extended(2, 3);
        assert_eq!(e.len(), g.len() + 5);
        assert!((e.x(2) - g.x(0)).abs() < 1e-15);
        let t = e.truncated_left(4).unwrap();
        assert!((t.left() - e.x(4)).abs() < 1e-15);
        assert_eq!(t.right(), e.right());
    }

    #[test]
    fn nearest_and_cell() {
        let g = Grid1D::new(0.0, 10.0, 0.5).unwrap();
        assert_eq!(g.nearest(2.6), Some(5));
        assert_eq!(g.nearest(-1.0), None);
        assert_eq!(g.cell(2.6), 5);
        assert_eq!(g.cell(10.0), g.len() - 2);
        assert_eq!(g.cell(-3.0), 0);
    }
}
