use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Uniform periodic grid on `[-L, L)` with `nx` cells.
///
/// Cell `j` sits at `x_j = -L + j dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1d {
    pub half_width: f64,
    pub nx: usize,
}

impl Grid1d {
    pub fn new(half_width: f64, nx: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(LabError::Validation(format!(
                "grid half-width must be positive, got {half_width}"
            )));
        }
        if nx < 4 {
            return Err(LabError::Validation(format!(
                "grid needs at least 4 cells, got {nx}"
            )));
        }
        Ok(Self { half_width, nx })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.nx as f64
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx()
    }

    pub fn period(&self) -> f64 {
        2.0 * self.half_width
    }

    /// Index of the grid point closest to `y = 0`.
    pub fn origin_index(&self) -> usize {
        (self.half_width / self.dx()).round() as usize % self.nx
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.x(j)).collect()
    }

    /// Maps `y` into `[-L, L)`.
    pub fn wrap(&self, y: f64) -> f64 {
        let p = self.period();
        (y + self.half_width).rem_euclid(p) - self.half_width
    }

    /// Linear interpolation of periodic grid data at an arbitrary point.
    #[inline]
    pub fn interpolate(&self, values: &[f64], y: f64) -> f64 {
        let dx = self.dx();
        let s = (y + self.half_width) / dx;
        let fl = s.floor();
        let theta = s - fl;
        let n = self.nx as i64;
        let j = (fl as i64).rem_euclid(n) as usize;
        let k = if j + 1 == self.nx { 0 } else { j + 1 };
        (1.0 - theta) * values[j] + theta * values[k]
    }
}
