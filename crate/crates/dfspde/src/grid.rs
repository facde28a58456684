//! Spatial and mass-level grids.
//!
//! The spatial grid discretizes a truncated interval of the real line into
//! `nx` cells with `nx + 1` node positions. The level grid discretizes the
//! mass axis `[0, u_max]` into `nu` bins; super-Brownian models truncate the
//! level domain at `u_max`, Fleming-Viot models live on the fixed level
//! domain `[0, 1]` with an `na x nb` rectangle of bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid of `nx + 1` nodes on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    x_min: f64,
    x_max: f64,
    nx: usize,
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, nx: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) {
            return Err(Error::domain("spatial grid bounds must be finite"));
        }
        if x_min >= x_max {
            return Err(Error::domain(format!(
                "x_min ({x_min}) must be < x_max ({x_max})"
            )));
        }
        if nx < 4 {
            return Err(Error::domain(format!("nx ({nx}) must be >= 4")));
        }
        Ok(SpatialGrid { x_min, x_max, nx })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Number of nodes, `nx + 1`.
    pub fn n_nodes(&self) -> usize {
        self.nx + 1
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    /// Position of node `i`, `0 <= i <= nx`.
    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    /// Midpoint of cell `i`, `1 <= i <= nx` (the cell between nodes `i-1` and `i`).
    pub fn cell_mid(&self, i: usize) -> f64 {
        self.x_min + (i as f64 - 0.5) * self.dx()
    }

    /// Sentinel position encoding "beyond the domain" (+infinity).
    pub fn sentinel(&self) -> f64 {
        self.x_max + self.dx()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.nx).map(|i| self.node(i))
    }

    /// Trapezoid rule over node samples.
    pub fn trapezoid(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.n_nodes() {
            return Err(Error::LengthMismatch {
                what: "node samples",
                expected: self.n_nodes(),
                got: values.len(),
            });
        }
        let inner: f64 = values[1..self.nx].iter().sum();
        Ok(self.dx() * (inner + 0.5 * (values[0] + values[self.nx])))
    }
}

/// Uniform grid of `nu` bins on the mass-level axis `[0, u_max]`.
///
/// Bin `k` (0-indexed) covers `[k*du, (k+1)*du]` with midpoint `(k+0.5)*du`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    u_max: f64,
    nu: usize,
}

impl LevelGrid {
    pub fn new(u_max: f64, nu: usize) -> Result<Self> {
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(Error::domain(format!("u_max ({u_max}) must be positive")));
        }
        if nu < 2 {
            return Err(Error::domain(format!("nu ({nu}) must be >= 2")));
        }
        Ok(LevelGrid { u_max, nu })
    }

    /// Level grid for Fleming-Viot models: the level domain is fixed to [0, 1].
    pub fn unit(nu: usize) -> Result<Self> {
        LevelGrid::new(1.0, nu)
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn du(&self) -> f64 {
        self.u_max / self.nu as f64
    }

    /// Midpoint of bin `k`, `0 <= k < nu`.
    pub fn midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.du()
    }

    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nu).map(|k| self.midpoint(k))
    }

    /// Bin index of a mass level, `floor(y / du)` clamped to `[0, nu]`.
    pub fn bin(&self, y: f64) -> usize {
        if y <= 0.0 {
            return 0;
        }
        let j = (y / self.du()).floor() as usize;
        j.min(self.nu)
    }
}

/// Rectangle of bins for the two-sided Fleming-Viot level domain `[0,1]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FvRect {
    na: usize,
    nb: usize,
}

impl FvRect {
    pub fn new(na: usize, nb: usize) -> Result<Self> {
        if na < 2 || nb < 2 {
            return Err(Error::domain(format!(
                "na ({na}) and nb ({nb}) must both be >= 2"
            )));
        }
        Ok(FvRect { na, nb })
    }

    pub fn na(&self) -> usize {
        self.na
    }

    pub fn nb(&self) -> usize {
        self.nb
    }

    pub fn da(&self) -> f64 {
        1.0 / self.na as f64
    }

    pub fn db(&self) -> f64 {
        1.0 / self.nb as f64
    }

    /// Midpoint of a-bin `p`.
    pub fn a_mid(&self, p: usize) -> f64 {
        (p as f64 + 0.5) * self.da()
    }

    /// Midpoint of b-bin `q`.
    pub fn b_mid(&self, q: usize) -> f64 {
        (q as f64 + 0.5) * self.db()
    }
}
