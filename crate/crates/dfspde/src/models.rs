//! Coefficient families for the driving noise term.
//!
//! A super-Brownian model carries a nonnegative branching-rate function
//! `sigma` on the truncated level domain `[0, u_max]`; a Fleming-Viot model
//! carries a bounded nonnegative resampling rate `gamma` on `[0,1]^2`. Both
//! expose the variance rate of the noise coefficient at a mass level,
//!
//! * SBM: `sigma_0(v) = integral of sigma over [0, v]`,
//! * FV:  `integral of gamma over [0, v] x [v, 1]`,
//!
//! analytically where the family permits and by midpoint quadrature with
//! partial cells otherwise. Numeric certification probes the growth and
//! square-root-Lipschitz conditions the solution theory requires; failures
//! are recorded in the certificate rather than thrown.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FvRect, LevelGrid};
use crate::noise::{
    aggregate_fv, aggregate_sbm, sample_panel_1d, sample_panel_2d, LevelAggregate, NoisePanel,
    SeedSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Sbm,
    Fv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SigmaSpec {
    /// `sigma(u) = u^gamma_prime`, `gamma_prime >= 0`.
    Power { gamma_prime: f64 },
    /// Values at the level-bin midpoints.
    Table(Vec<f64>),
}

/// Interacting super-Brownian coefficient model on `[0, u_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmModel {
    sigma: SigmaSpec,
    levels: LevelGrid,
    sigma_mid: Vec<f64>,
}

impl SbmModel {
    pub fn power(gamma_prime: f64, levels: LevelGrid) -> Result<Self> {
        if !(gamma_prime.is_finite() && gamma_prime >= 0.0) {
            return Err(Error::domain(format!(
                "gamma_prime ({gamma_prime}) must be finite and >= 0"
            )));
        }
        let sigma_mid = levels.midpoints().map(|u| u.powf(gamma_prime)).collect();
        Ok(SbmModel {
            sigma: SigmaSpec::Power { gamma_prime },
            levels,
            sigma_mid,
        })
    }

    /// Constant branching rate `sigma = c`.
    pub fn constant(c: f64, levels: LevelGrid) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::domain(format!("sigma constant ({c}) must be >= 0")));
        }
        Ok(SbmModel {
            sigma: SigmaSpec::Table(vec![c; levels.nu()]),
            levels,
            sigma_mid: vec![c; levels.nu()],
        })
    }

    pub fn tabulated(values: Vec<f64>, levels: LevelGrid) -> Result<Self> {
        if values.len() != levels.nu() {
            return Err(Error::LengthMismatch {
                what: "sigma table",
                expected: levels.nu(),
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!("sigma entries must be >= 0, got {bad}")));
        }
        Ok(SbmModel {
            sigma_mid: values.clone(),
            sigma: SigmaSpec::Table(values),
            levels,
        })
    }

    pub fn levels(&self) -> &LevelGrid {
        &self.levels
    }

    pub fn sigma_spec(&self) -> &SigmaSpec {
        &self.sigma
    }

    /// Midpoint table used by the noise aggregation.
    pub fn sigma_mid(&self) -> &[f64] {
        &self.sigma_mid
    }

    /// Integrated rate `sigma_0(v)`, analytic for the power family.
    pub fn sigma0(&self, v: f64) -> Result<f64> {
        if !(v >= 0.0 && v <= self.levels.u_max()) {
            return Err(Error::domain(format!(
                "level v ({v}) outside [0, {}]",
                self.levels.u_max()
            )));
        }
        Ok(self.sigma0_unchecked(v))
    }

    /// `sigma_0` without the domain cap: the power family extends
    /// analytically to all of `[0, inf)`; tables saturate at `u_max`
    /// (rates above the truncation level are read as frozen there).
    pub fn sigma0_unbounded(&self, v: f64) -> f64 {
        match self.sigma {
            SigmaSpec::Power { gamma_prime } => {
                if v <= 0.0 {
                    0.0
                } else {
                    v.powf(gamma_prime + 1.0) / (gamma_prime + 1.0)
                }
            }
            SigmaSpec::Table(_) => self.sigma0_unchecked(v.min(self.levels.u_max())),
        }
    }

    fn sigma0_unchecked(&self, v: f64) -> f64 {
        match self.sigma {
            SigmaSpec::Power { gamma_prime } => {
                if v <= 0.0 {
                    0.0
                } else {
                    v.powf(gamma_prime + 1.0) / (gamma_prime + 1.0)
                }
            }
            SigmaSpec::Table(_) => self.sigma0_quadrature(v),
        }
    }

    /// Midpoint quadrature of `sigma` over `[0, v]` with a partial last bin.
    pub fn sigma0_quadrature(&self, v: f64) -> f64 {
        let du = self.levels.du();
        let v = v.clamp(0.0, self.levels.u_max());
        let full = ((v / du).floor() as usize).min(self.levels.nu());
        let mut acc = 0.0;
        for k in 0..full {
            acc += self.sigma_mid[k] * du;
        }
        if full < self.levels.nu() {
            acc += self.sigma_mid[full] * (v - full as f64 * du);
        }
        acc
    }

    /// Fraction of level bins where sigma vanishes.
    pub fn positivity_check(&self) -> f64 {
        match self.sigma {
            // Only the single point u = 0 can vanish; midpoints are positive.
            SigmaSpec::Power { .. } => 0.0,
            SigmaSpec::Table(ref t) => {
                t.iter().filter(|&&s| s == 0.0).count() as f64 / t.len() as f64
            }
        }
    }

    /// Supremum of sigma over `[0, k]` (the theoretical Lipschitz constant
    /// for the square of the indicator coefficient).
    fn sigma_sup(&self, k: f64) -> f64 {
        match self.sigma {
            SigmaSpec::Power { gamma_prime } => k.max(0.0).powf(gamma_prime),
            SigmaSpec::Table(ref t) => {
                let du = self.levels.du();
                t.iter()
                    .enumerate()
                    .filter(|(i, _)| (*i as f64) * du <= k)
                    .map(|(_, &s)| s)
                    .fold(0.0, f64::max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GammaSpec {
    Constant(f64),
    /// Row-major `na x nb` values at cell midpoints.
    Table(Vec<f64>),
}

/// Interacting Fleming-Viot coefficient model on `[0,1]^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FvModel {
    gamma: GammaSpec,
    rect: FvRect,
    gamma_mid: Vec<f64>,
}

impl FvModel {
    pub fn constant(c: f64, rect: FvRect) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::domain(format!("gamma constant ({c}) must be >= 0")));
        }
        Ok(FvModel {
            gamma: GammaSpec::Constant(c),
            rect,
            gamma_mid: vec![c; rect.na() * rect.nb()],
        })
    }

    pub fn tabulated(values: Vec<f64>, rect: FvRect) -> Result<Self> {
        if values.len() != rect.na() * rect.nb() {
            return Err(Error::LengthMismatch {
                what: "gamma table",
                expected: rect.na() * rect.nb(),
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!("gamma entries must be >= 0, got {bad}")));
        }
        Ok(FvModel {
            gamma_mid: values.clone(),
            gamma: GammaSpec::Table(values),
            rect,
        })
    }

    pub fn rect(&self) -> &FvRect {
        &self.rect
    }

    pub fn gamma_spec(&self) -> &GammaSpec {
        &self.gamma
    }

    pub fn gamma_mid(&self) -> &[f64] {
        &self.gamma_mid
    }

    pub fn gamma_sup(&self) -> f64 {
        match self.gamma {
            GammaSpec::Constant(c) => c,
            GammaSpec::Table(ref t) => t.iter().fold(0.0, |a, &b| a.max(b)),
        }
    }

    /// Midpoint quadrature of gamma over `[a_lo, a_hi] x [b_lo, b_hi]`
    /// with partial cells weighted by their overlap.
    pub fn rect_quadrature(&self, a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
        let (na, nb) = (self.rect.na(), self.rect.nb());
        let (da, db) = (self.rect.da(), self.rect.db());
        let overlap = |lo: f64, hi: f64, l: f64, r: f64| (hi.min(r) - lo.max(l)).max(0.0);
        let mut acc = 0.0;
        for p in 0..na {
            let wa = overlap(p as f64 * da, (p + 1) as f64 * da, a_lo, a_hi);
            if wa == 0.0 {
                continue;
            }
            for q in 0..nb {
                let wb = overlap(q as f64 * db, (q + 1) as f64 * db, b_lo, b_hi);
                if wb > 0.0 {
                    acc += self.gamma_mid[p * nb + q] * wa * wb;
                }
            }
        }
        acc
    }
}

/// Numeric description of the coefficient family `(E, pi, G)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoefficientModel {
    Sbm(SbmModel),
    Fv(FvModel),
}

impl CoefficientModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            CoefficientModel::Sbm(_) => ModelKind::Sbm,
            CoefficientModel::Fv(_) => ModelKind::Fv,
        }
    }

    /// Upper bound of the admissible level domain.
    pub fn u_max(&self) -> f64 {
        match self {
            CoefficientModel::Sbm(m) => m.levels.u_max(),
            CoefficientModel::Fv(_) => 1.0,
        }
    }

    /// Hard cap on field values: 1 for Fleming-Viot, unbounded for SBM
    /// (SBM states are truncated at `u_max` by the integrator instead).
    pub fn mass_cap(&self) -> f64 {
        match self {
            CoefficientModel::Sbm(_) => f64::INFINITY,
            CoefficientModel::Fv(_) => 1.0,
        }
    }

    /// Number of level-aggregate evaluation indices (aggregate length - 1).
    pub fn eval_levels(&self) -> usize {
        match self {
            CoefficientModel::Sbm(m) => m.levels.nu(),
            CoefficientModel::Fv(m) => m.rect.na(),
        }
    }

    /// Width of one evaluation level.
    pub fn du_eval(&self) -> f64 {
        match self {
            CoefficientModel::Sbm(m) => m.levels.du(),
            CoefficientModel::Fv(m) => m.rect.da(),
        }
    }

    /// Level bin of a field value: `floor(y / du)` clamped to `[0, n]`.
    pub fn bin(&self, y: f64) -> usize {
        if y <= 0.0 {
            return 0;
        }
        let j = (y / self.du_eval()).floor() as usize;
        j.min(self.eval_levels())
    }

    pub fn sample_panel(&self, rng: &mut ChaCha12Rng, dt: f64) -> Result<NoisePanel> {
        match self {
            CoefficientModel::Sbm(m) => Ok(NoisePanel::Sbm(sample_panel_1d(rng, &m.levels, dt)?)),
            CoefficientModel::Fv(m) => Ok(NoisePanel::Fv(sample_panel_2d(rng, &m.rect, dt)?)),
        }
    }

    pub fn aggregate(&self, panel: &NoisePanel) -> Result<LevelAggregate> {
        match (self, panel) {
            (CoefficientModel::Sbm(m), NoisePanel::Sbm(p)) => aggregate_sbm(p, &m.sigma_mid),
            (CoefficientModel::Fv(m), NoisePanel::Fv(p)) => aggregate_fv(p, &m.gamma_mid),
            _ => Err(Error::domain("panel kind does not match model kind")),
        }
    }

    /// Variance rate of the noise coefficient at mass level `v`,
    /// analytically where possible.
    pub fn variance_rate(&self, v: f64) -> Result<f64> {
        match self {
            CoefficientModel::Sbm(m) => m.sigma0(v),
            CoefficientModel::Fv(m) => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::domain(format!("level v ({v}) outside [0, 1]")));
                }
                match m.gamma {
                    GammaSpec::Constant(c) => Ok(c * v * (1.0 - v)),
                    GammaSpec::Table(_) => Ok(m.rect_quadrature(0.0, v, v, 1.0)),
                }
            }
        }
    }

    /// Variance rate by midpoint quadrature on the level grid, always.
    pub fn variance_rate_quadrature(&self, v: f64) -> Result<f64> {
        match self {
            CoefficientModel::Sbm(m) => {
                m.sigma0(v)?;
                Ok(m.sigma0_quadrature(v))
            }
            CoefficientModel::Fv(m) => {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::domain(format!("level v ({v}) outside [0, 1]")));
                }
                Ok(m.rect_quadrature(0.0, v, v, 1.0))
            }
        }
    }

    /// The squared-difference integral `int |G(u,x1) - G(u,x2)|^2 pi(du)`:
    /// the analytic identity `|sigma_0(x1) - sigma_0(x2)|` for SBM, and
    /// rectangle-difference quadrature for FV.
    pub fn diff_integral(&self, x1: f64, x2: f64) -> Result<f64> {
        let (lo, hi) = if x1 <= x2 { (x1, x2) } else { (x2, x1) };
        match self {
            CoefficientModel::Sbm(m) => Ok((m.sigma0(hi)? - m.sigma0(lo)?).abs()),
            CoefficientModel::Fv(m) => {
                if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) {
                    return Err(Error::domain(format!("levels ({x1}, {x2}) outside [0, 1]")));
                }
                // The symmetric difference of the two indicator rectangles.
                Ok(m.rect_quadrature(0.0, lo, lo, hi) + m.rect_quadrature(lo, hi, hi, 1.0))
            }
        }
    }

    /// Numeric value of `int |G(u, 0)| pi(du)`; zero at machine precision
    /// for both built-in families.
    pub fn origin_residual(&self) -> f64 {
        match self {
            CoefficientModel::Sbm(m) => {
                let du = m.levels.du();
                m.levels
                    .midpoints()
                    .zip(m.sigma_mid.iter())
                    .filter(|(u, _)| *u <= 0.0)
                    .map(|(_, s)| s.sqrt() * du)
                    .sum()
            }
            CoefficientModel::Fv(m) => {
                let (na, nb) = (m.rect.na(), m.rect.nb());
                let w = m.rect.da() * m.rect.db();
                let mut acc = 0.0;
                for p in 0..na {
                    for q in 0..nb {
                        if m.rect.a_mid(p) <= 0.0 && m.rect.b_mid(q) >= 0.0 {
                            acc += m.gamma_mid[p * nb + q].sqrt() * w;
                        }
                    }
                }
                acc
            }
        }
    }

    /// Randomized certification of the coefficient conditions on `[0, k]`.
    pub fn certify_conditions(&self, k: f64, probes: usize) -> Result<ConditionCertificate> {
        if probes < 100 {
            return Err(Error::precondition(format!(
                "probes ({probes}) must be >= 100"
            )));
        }
        if !(k > 0.0) {
            return Err(Error::domain(format!("level bound k ({k}) must be > 0")));
        }
        let k_eff = k.min(self.u_max());
        let mut rng = SeedSpec::new(SeedSpec::derive_master(0xC0FF_EE00, probes as u64), 0).stream();

        let origin_residual = self.origin_residual();

        // (2.1)-style growth constant: max variance rate over probed levels.
        let mut growth = 0.0f64;
        for i in 0..probes {
            let x = if i == 0 { k_eff } else { rng.random_range(0.0..=k_eff) };
            growth = growth.max(self.variance_rate(x)?);
        }

        // (2.2)-style Lipschitz-in-sqrt constant: max ratio over probe pairs.
        let mut lipschitz = 0.0f64;
        for _ in 0..probes {
            let x1: f64 = rng.random_range(0.0..=k_eff);
            let x2: f64 = rng.random_range(0.0..=k_eff);
            let gap = (x1 - x2).abs();
            let diff = self.diff_integral(x1, x2)?;
            if gap == 0.0 {
                // Coincident probes must give a vanishing difference integral.
                lipschitz = lipschitz.max(if diff == 0.0 { 0.0 } else { f64::INFINITY });
            } else {
                lipschitz = lipschitz.max(diff / gap);
            }
        }

        let reference_bound = match self {
            CoefficientModel::Sbm(m) => m.sigma_sup(k_eff),
            CoefficientModel::Fv(m) => m.gamma_sup(),
        };
        let max_violation = (lipschitz - reference_bound).max(0.0);

        Ok(ConditionCertificate {
            k,
            probes,
            origin_residual,
            growth_constant: growth,
            lipschitz_constant: lipschitz,
            reference_bound,
            max_violation,
            origin_ok: origin_residual == 0.0,
            bounded: growth.is_finite() && lipschitz.is_finite(),
        })
    }
}

/// Record of a randomized condition-certification run. Captures the probing
/// protocol (probe count, level bound) alongside the estimated constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCertificate {
    pub k: f64,
    pub probes: usize,
    /// Numeric `int |G(u,0)| pi(du)`; must vanish.
    pub origin_residual: f64,
    /// Estimated growth constant: max probed variance rate on `[0, k]`.
    pub growth_constant: f64,
    /// Estimated Lipschitz constant of the squared-difference integral.
    pub lipschitz_constant: f64,
    /// Theoretical bound the Lipschitz estimate is compared against.
    pub reference_bound: f64,
    /// Excess of the estimate over the theoretical bound (0 when inside).
    pub max_violation: f64,
    pub origin_ok: bool,
    pub bounded: bool,
}

/// Reads a coefficient table: header line `# dfspde-coeff v1`, then one
/// value per line (`sigma`) or `na * nb` row-major values (`gamma`).
pub fn load_coeff_csv(path: &str) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_string(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "# dfspde-coeff v1" => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_string(),
                line: 1,
                msg: "missing header `# dfspde-coeff v1`".to_string(),
            })
        }
    }
    let mut values = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|e| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            msg: format!("{e}"),
        })?;
        values.push(v);
    }
    Ok(values)
}
