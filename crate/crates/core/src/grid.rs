//! Cell-centred uniform grids on origin-centred boxes `[-r, r]^d`.
//!
//! Cell centres sit half a cell away from every face, so with an even number
//! of cells per axis no centre lies on a coordinate hyperplane.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    dim: usize,
    half_width: f64,
    cells_per_axis: usize,
}

impl BoxGrid {
    pub fn new(dim: usize, half_width: f64, cells_per_axis: usize) -> Self {
        assert!(dim >= 1, "grid dimension must be positive");
        assert!(half_width > 0.0, "grid half width must be positive");
        assert!(cells_per_axis >= 1, "grid needs at least one cell per axis");
        Self {
            dim,
            half_width,
            cells_per_axis,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.cells_per_axis as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.cells_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate of the centre of cell `i` along one axis.
    #[inline]
    pub fn axis_center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    /// Writes the centre of cell `flat` into `out` (first axis varies slowest).
    pub fn center_into(&self, flat: usize, out: &mut [f64]) {
        let n = self.cells_per_axis;
        let mut rem = flat;
        for j in (0..self.dim).rev() {
            out[j] = self.axis_center(rem % n);
            rem /= n;
        }
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        self.center_into(flat, &mut x);
        x
    }

    /// All cell centres, flattened `len() × dim`.
    pub fn centers(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * self.dim];
        for (flat, chunk) in out.chunks_mut(self.dim).enumerate() {
            self.center_into(flat, chunk);
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .fold(0, |acc, &i| acc * self.cells_per_axis + i)
    }

    /// Cell containing `x`, or `None` if `x` is outside the closed box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let h = self.spacing();
        let n = self.cells_per_axis;
        let mut flat = 0usize;
        for &xj in x.iter().take(self.dim) {
            let s = (xj + self.half_width) / h;
            if !(s >= 0.0 && s <= n as f64) {
                return None;
            }
            let i = (s.floor() as usize).min(n - 1);
            flat = flat * n + i;
        }
        Some(flat)
    }

    /// Whether the box `[-r, r]^d` contains `x`.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.abs() <= self.half_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_avoid_axes_and_round_trip() {
        let g = BoxGrid::new(2, 1.0, 4);
        assert_eq!(g.len(), 16);
        for flat in 0..g.len() {
            let c = g.center(flat);
            assert!(c.iter().all(|v| v.abs() > 0.0));
            assert_eq!(g.locate(&c), Some(flat));
        }
        assert_eq!(g.locate(&[1.5, 0.0]), None);
        assert!((g.cell_volume() - 0.25).abs() < 1e-15);
    }
}
