//! Regular 1-D/2-D grids and fields sampled on them.

use crate::error::{Result, SobolevError};

/// A uniform rectangular grid in 1 or 2 dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    /// Monotone coordinate array per axis.
    pub axes: Vec<Vec<f64>>,
    /// Uniform step per axis.
    pub spacing: Vec<f64>,
}

impl Grid {
    pub fn new_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::from_box(&[lo], &[hi], &[n])
    }

    pub fn new_2d(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        Self::from_box(&lo, &hi, &n)
    }

    /// Grid over the box `[lo, hi]` with `n[i]` nodes along axis `i`.
    pub fn from_box(lo: &[f64], hi: &[f64], n: &[usize]) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != n.len() || lo.is_empty() || lo.len() > 2 {
            return Err(SobolevError::Dimension(format!(
                "grid dimension must be 1 or 2, got lo={} hi={} n={}",
                lo.len(),
                hi.len(),
                n.len()
            )));
        }
        let mut axes = Vec::new();
        let mut spacing = Vec::new();
        for d in 0..lo.len() {
            if n[d] < 2 || !(hi[d] > lo[d]) {
                return Err(SobolevError::Dimension(format!(
                    "axis {d}: need n >= 2 and hi > lo (n={}, lo={}, hi={})",
                    n[d], lo[d], hi[d]
                )));
            }
            let h = (hi[d] - lo[d]) / (n[d] - 1) as f64;
            axes.push((0..n[d]).map(|i| lo[d] + h * i as f64).collect());
            spacing.push(h);
        }
        Ok(Grid { axes, spacing })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, row-major over axis 0 then axis 1.
    pub fn index(&self, ij: &[usize]) -> usize {
        match self.dim() {
            1 => ij[0],
            _ => ij[0] * self.axes[1].len() + ij[1],
        }
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        match self.dim() {
            1 => vec![self.axes[0][flat]],
            _ => {
                let n1 = self.axes[1].len();
                vec![self.axes[0][flat / n1], self.axes[1][flat % n1]]
            }
        }
    }

    /// Evaluate `f` at every node.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> ScalarField {
        let values = (0..self.len()).map(|k| f(&self.node(k))).collect();
        ScalarField {
            grid: self.clone(),
            values,
        }
    }

    /// Trapezoid weight of node `flat` (includes the cell volume).
    pub fn trapezoid_weight(&self, flat: usize) -> f64 {
        let mut w = 1.0;
        let ij = self.multi_index(flat);
        for d in 0..self.dim() {
            let n = self.axes[d].len();
            let edge = ij[d] == 0 || ij[d] == n - 1;
            w *= self.spacing[d] * if edge { 0.5 } else { 1.0 };
        }
        w
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        match self.dim() {
            1 => vec![flat],
            _ => {
                let n1 = self.axes[1].len();
                vec![flat / n1, flat % n1]
            }
        }
    }

    /// True if the node lies on the boundary of the box.
    pub fn is_boundary(&self, flat: usize) -> bool {
        let ij = self.multi_index(flat);
        (0..self.dim()).any(|d| ij[d] == 0 || ij[d] == self.axes[d].len() - 1)
    }
}

/// A scalar field sampled on a grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    /// Trapezoid integral over the grid box.
    pub fn integrate(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.grid.trapezoid_weight(k))
            .sum()
    }

    /// Central-difference gradient (one-sided at the boundary).
    pub fn gradient(&self) -> VectorField {
        let dim = self.grid.dim();
        let shape = self.grid.shape();
        let mut comps = vec![vec![0.0; self.grid.len()]; dim];
        for k in 0..self.grid.len() {
            let ij = self.grid.multi_index(k);
            for (d, comp) in comps.iter_mut().enumerate() {
                let h = self.grid.spacing[d];
                let n = shape[d];
                let at = |i: usize| {
                    let mut m = ij.clone();
                    m[d] = i;
                    self.values[self.grid.index(&m)]
                };
                comp[k] = if ij[d] == 0 {
                    (at(1) - at(0)) / h
                } else if ij[d] == n - 1 {
                    (at(n - 1) - at(n - 2)) / h
                } else {
                    (at(ij[d] + 1) - at(ij[d] - 1)) / (2.0 * h)
                };
            }
        }
        VectorField {
            grid: self.grid.clone(),
            comps,
        }
    }

    /// Bilinear (linear in 1-D) interpolation; clamps to the box.
    pub fn interp(&self, x: &[f64]) -> f64 {
        let g = &self.grid;
        match g.dim() {
            1 => {
                let (i, t) = locate(&g.axes[0], g.spacing[0], x[0]);
                let a = self.values[i];
                let b = self.values[i + 1];
                a + t * (b - a)
            }
            _ => {
                let (i, t) = locate(&g.axes[0], g.spacing[0], x[0]);
                let (j, u) = locate(&g.axes[1], g.spacing[1], x[1]);
                let v = |a: usize, b: usize| self.values[g.index(&[a, b])];
                let top = v(i, j) + t * (v(i + 1, j) - v(i, j));
                let bot = v(i, j + 1) + t * (v(i + 1, j + 1) - v(i, j + 1));
                top + u * (bot - top)
            }
        }
    }
}

/// A d-vector field sampled on a grid, stored one component at a time.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub grid: Grid,
    pub comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        VectorField {
            comps: vec![vec![0.0; grid.len()]; grid.dim()],
            grid: grid.clone(),
        }
    }

    pub fn norm_sq_field(&self) -> ScalarField {
        let values = (0..self.grid.len())
            .map(|k| self.comps.iter().map(|c| c[k] * c[k]).sum())
            .collect();
        ScalarField {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn at(&self, flat: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c[flat]).collect()
    }

    pub fn interp(&self, x: &[f64]) -> Vec<f64> {
        self.comps
            .iter()
            .map(|c| {
                ScalarField {
                    grid: self.grid.clone(),
                    values: c.clone(),
                }
                .interp(x)
            })
            .collect()
    }
}

fn locate(axis: &[f64], h: f64, x: f64) -> (usize, f64) {
    let n = axis.len();
    let pos = (x - axis[0]) / h;
    let i = (pos.floor() as isize).clamp(0, n as isize - 2) as usize;
    let t = ((x - axis[i]) / h).clamp(0.0, 1.0);
    (i, t)
}
