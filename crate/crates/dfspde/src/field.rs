//! Monotone field states: discretized distribution functions on a spatial grid.
//!
//! A `MonotoneField` holds node values `Y(x_0) .. Y(x_nx)` of a bounded
//! nondecreasing function with `Y(x_0) = 0` (the left boundary stands in for
//! the vanishing limit at -infinity). Node values are read as left limits;
//! no attempt is made to place jumps inside a cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;

/// Discretized distribution function together with its mass cap.
///
/// `mass_cap` is `1.0` for Fleming-Viot states and `f64::INFINITY` for
/// super-Brownian states (which are instead truncated at the level grid's
/// `u_max` by the integrator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneField {
    grid: SpatialGrid,
    values: Vec<f64>,
    mass_cap: f64,
}

impl MonotoneField {
    pub fn new(grid: SpatialGrid, values: Vec<f64>, mass_cap: f64) -> Result<Self> {
        let field = MonotoneField {
            grid,
            values,
            mass_cap,
        };
        field.validate()?;
        Ok(field)
    }

    /// Zero field.
    pub fn zero(grid: SpatialGrid, mass_cap: f64) -> Self {
        MonotoneField {
            grid,
            values: vec![0.0; grid.n_nodes()],
            mass_cap,
        }
    }

    /// Constructor for values the integrator has already normalized.
    pub(crate) fn from_parts_unchecked(grid: SpatialGrid, values: Vec<f64>, mass_cap: f64) -> Self {
        MonotoneField {
            grid,
            values,
            mass_cap,
        }
    }

    /// Reconstructs a field from atom weights (inverse of [`to_measure`]).
    ///
    /// [`to_measure`]: MonotoneField::to_measure
    pub fn from_measure(grid: SpatialGrid, weights: &[f64], mass_cap: f64) -> Result<Self> {
        if weights.len() != grid.nx() {
            return Err(Error::LengthMismatch {
                what: "atom weights",
                expected: grid.nx(),
                got: weights.len(),
            });
        }
        let mut values = Vec::with_capacity(grid.n_nodes());
        values.push(0.0);
        let mut acc = 0.0;
        for &w in weights {
            if w < 0.0 {
                return Err(Error::domain(format!("negative atom weight {w}")));
            }
            acc += w;
            values.push(acc);
        }
        MonotoneField::new(grid, values, mass_cap)
    }

    /// Checks all state invariants: pinned left boundary, monotone nodes,
    /// values within `[0, mass_cap]`, finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.grid.n_nodes() {
            return Err(Error::LengthMismatch {
                what: "field values",
                expected: self.grid.n_nodes(),
                got: self.values.len(),
            });
        }
        if self.values[0] != 0.0 {
            return Err(Error::domain(format!(
                "left boundary must be 0, got {}",
                self.values[0]
            )));
        }
        for (i, w) in self.values.windows(2).enumerate() {
            if !(w[0].is_finite() && w[1].is_finite()) {
                return Err(Error::NonFinite("field values"));
            }
            if w[0] > w[1] {
                return Err(Error::domain(format!(
                    "monotonicity violated at node {i}: {} > {}",
                    w[0],
                    w[1]
                )));
            }
        }
        let last = *self.values.last().unwrap();
        if self.values[0] < 0.0 || last > self.mass_cap {
            return Err(Error::domain(format!(
                "values must lie in [0, {}], got max {last}",
                self.mass_cap
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass_cap(&self) -> f64 {
        self.mass_cap
    }

    /// Total mass `Y(x_nx)`.
    pub fn total_mass(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Generalized inverse (quantile): the smallest grid node `x_i` with
    /// `Y(x_i) >= u`. Returns the sentinel `x_max + dx` when no node
    /// qualifies, and `x_min` for `u = 0`.
    pub fn generalized_inverse(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0) {
            return Err(Error::domain(format!("level u ({u}) must be >= 0")));
        }
        match self.generalized_inverse_node(u) {
            Some(i) => Ok(self.grid.node(i)),
            None => Ok(self.grid.sentinel()),
        }
    }

    /// Node-index version of the generalized inverse; `None` encodes the
    /// sentinel (no node reaches level `u`).
    pub fn generalized_inverse_node(&self, u: f64) -> Option<usize> {
        // First index with value >= u; node values are nondecreasing.
        let i = self.values.partition_point(|&v| v < u);
        if i == self.values.len() {
            None
        } else {
            Some(i)
        }
    }

    /// Atom weights of the associated measure: `w_i = Y(x_i) - Y(x_{i-1})`.
    pub fn to_measure(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Trapezoid-rule pairing against test-function samples on the same grid.
    pub fn pair(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                what: "test function samples",
                expected: self.values.len(),
                got: f.len(),
            });
        }
        let prod: Vec<f64> = self
            .values
            .iter()
            .zip(f.iter())
            .map(|(y, fi)| y * fi)
            .collect();
        self.grid.trapezoid(&prod)
    }
}

/// Exponentially weighted integral norm on node samples.
#[derive(Debug, Clone, Copy)]
pub struct WeightedNorm {
    grid: SpatialGrid,
}

impl WeightedNorm {
    pub fn new(grid: SpatialGrid) -> Self {
        WeightedNorm { grid }
    }

    /// Trapezoid rule of `|f(x)| e^{-|x|}` on the grid.
    pub fn norm(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.grid.n_nodes() {
            return Err(Error::LengthMismatch {
                what: "norm samples",
                expected: self.grid.n_nodes(),
                got: f.len(),
            });
        }
        let weighted: Vec<f64> = self
            .grid
            .nodes()
            .zip(f.iter())
            .map(|(x, fi)| fi.abs() * (-x.abs()).exp())
            .collect();
        self.grid.trapezoid(&weighted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn step_field() -> MonotoneField {
        // Step CDF with the jump at x = 0 on [-2, 2].
        let grid = SpatialGrid::new(-2.0, 2.0, 8).unwrap();
        let values: Vec<f64> = grid.nodes().map(|x| if x < 0.0 { 0.0 } else { 1.0 }).collect();
        MonotoneField::new(grid, values, f64::INFINITY).unwrap()
    }

    #[test]
    fn generalized_inverse_of_step() {
        let y = step_field();
        assert_eq!(y.generalized_inverse(0.7).unwrap(), 0.0);
        assert_eq!(y.generalized_inverse(0.0).unwrap(), -2.0);
        assert_eq!(y.generalized_inverse(1.0).unwrap(), 0.0);
        // No node reaches 1.5: sentinel encodes +infinity.
        assert_eq!(y.generalized_inverse(1.5).unwrap(), y.grid().sentinel());
        assert!(y.generalized_inverse(-0.1).is_err());
        assert!(y.generalized_inverse(f64::NAN).is_err());
    }

    fn random_monotone(rng: &mut ChaCha12Rng, grid: SpatialGrid) -> MonotoneField {
        let mut values = vec![0.0];
        let mut acc = 0.0;
        for _ in 0..grid.nx() {
            acc += rng.random_range(0.0..0.1);
            values.push(acc);
        }
        MonotoneField::new(grid, values, f64::INFINITY).unwrap()
    }

    #[test]
    fn generalized_inverse_matches_linear_scan() {
        let grid = SpatialGrid::new(-4.0, 4.0, 64).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..5 {
            let y = random_monotone(&mut rng, grid);
            for _ in 0..100 {
                let u = rng.random_range(0.0..y.total_mass() * 1.2);
                let got = y.generalized_inverse(u).unwrap();
                // O(nx) scan oracle.
                let want = y
                    .values()
                    .iter()
                    .position(|&v| v >= u)
                    .map(|i| grid.node(i))
                    .unwrap_or(grid.sentinel());
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn generalized_inverse_is_monotone_and_consistent() {
        let grid = SpatialGrid::new(-4.0, 4.0, 64).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let y = random_monotone(&mut rng, grid);
        let mut prev = f64::NEG_INFINITY;
        for k in 0..50 {
            let u = k as f64 / 49.0 * y.total_mass();
            let q = y.generalized_inverse(u).unwrap();
            assert!(q >= prev);
            prev = q;
        }
        // Y^{-1}(Y(x_i)) <= x_i at every node.
        for (i, &v) in y.values().iter().enumerate() {
            assert!(y.generalized_inverse(v).unwrap() <= grid.node(i));
        }
    }

    #[test]
    fn to_measure_of_linear_field_is_uniform() {
        let grid = SpatialGrid::new(0.0, 1.0, 16).unwrap();
        let values: Vec<f64> = (0..=16).map(|i| i as f64 / 16.0).collect();
        let y = MonotoneField::new(grid, values, f64::INFINITY).unwrap();
        for w in y.to_measure() {
            assert!((w - 1.0 / 16.0).abs() < 1e-15);
        }
        let zero = MonotoneField::zero(grid, f64::INFINITY);
        assert!(zero.to_measure().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn measure_round_trip() {
        let grid = SpatialGrid::new(-4.0, 4.0, 64).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let y = random_monotone(&mut rng, grid);
        let back = MonotoneField::from_measure(grid, &y.to_measure(), f64::INFINITY).unwrap();
        for (a, b) in y.values().iter().zip(back.values().iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn pair_zero_field_vanishes() {
        let grid = SpatialGrid::new(-2.0, 2.0, 8).unwrap();
        let y = MonotoneField::zero(grid, f64::INFINITY);
        let f: Vec<f64> = grid.nodes().map(|x| x.cos()).collect();
        assert_eq!(y.pair(&f).unwrap(), 0.0);
        assert!(y.pair(&f[1..]).is_err());
    }

    #[test]
    fn pair_constant_field_reduces_to_interior_trapezoid() {
        let grid = SpatialGrid::new(-2.0, 2.0, 8).unwrap();
        let c = 0.7;
        let mut values = vec![c; grid.n_nodes()];
        values[0] = 0.0;
        let y = MonotoneField::new(grid, values, f64::INFINITY).unwrap();
        let f: Vec<f64> = grid.nodes().map(|x| (1.0 + x.sin()).abs()).collect();
        let got = y.pair(&f).unwrap();
        let dx = grid.dx();
        let want = c * dx * (f[1..grid.nx()].iter().sum::<f64>() + 0.5 * f[grid.nx()]);
        assert!((got - want).abs() < 1e-13);
    }

    #[test]
    fn pair_gaussian_cdf_matches_fine_quadrature() {
        // Y = standard Gaussian CDF, f a Gaussian bump; oracle is the same
        // integrand on a 10x finer grid.
        let nx = 8192;
        let grid = SpatialGrid::new(-6.0, 6.0, nx).unwrap();
        let phi = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2));
        let bump = |x: f64| (-0.5 * x * x).exp();
        let mut values: Vec<f64> = grid.nodes().map(phi).collect();
        values[0] = 0.0; // pin the (negligible) left tail
        let y = MonotoneField::new(grid, values, f64::INFINITY).unwrap();
        let f: Vec<f64> = grid.nodes().map(bump).collect();
        let got = y.pair(&f).unwrap();

        let fine = SpatialGrid::new(-6.0, 6.0, nx * 10).unwrap();
        let prod: Vec<f64> = fine.nodes().map(|x| phi(x) * bump(x)).collect();
        let want = fine.trapezoid(&prod).unwrap();
        assert!((got - want).abs() < 1e-6, "got {got}, want {want}");
    }

    #[test]
    fn weighted_norm_basics() {
        let grid = SpatialGrid::new(-4.0, 4.0, 512).unwrap();
        let norm = WeightedNorm::new(grid);
        assert_eq!(norm.norm(&vec![0.0; grid.n_nodes()]).unwrap(), 0.0);
        // Analytic: integral of e^{-|x|} over [-L, L] is 2(1 - e^{-L}).
        let got = norm.norm(&vec![1.0; grid.n_nodes()]).unwrap();
        let want = 2.0 * (1.0 - (-4.0f64).exp());
        assert!((got - want).abs() < 1e-4);
    }

    #[test]
    fn weighted_norm_triangle_inequality() {
        let grid = SpatialGrid::new(-4.0, 4.0, 64).unwrap();
        let norm = WeightedNorm::new(grid);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let f: Vec<f64> = (0..grid.n_nodes()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g: Vec<f64> = (0..grid.n_nodes()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let sum: Vec<f64> = f.iter().zip(g.iter()).map(|(a, b)| a + b).collect();
            let lhs = norm.norm(&sum).unwrap();
            let rhs = norm.norm(&f).unwrap() + norm.norm(&g).unwrap();
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn invalid_fields_are_rejected() {
        let grid = SpatialGrid::new(0.0, 1.0, 4).unwrap();
        assert!(MonotoneField::new(grid, vec![0.1, 0.2, 0.3, 0.4, 0.5], f64::INFINITY).is_err());
        assert!(MonotoneField::new(grid, vec![0.0, 0.5, 0.4, 0.6, 0.7], f64::INFINITY).is_err());
        assert!(MonotoneField::new(grid, vec![0.0, 0.5, 0.6, 0.7, 1.2], 1.0).is_err());
        assert!(MonotoneField::new(grid, vec![0.0, 0.5, f64::NAN, 0.7, 0.8], 1.0).is_err());
    }
}
