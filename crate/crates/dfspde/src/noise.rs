//! Discretized space-time Gaussian white noise and level aggregates.
//!
//! One panel holds a single time-step's independent Gaussian increments over
//! the auxiliary level space: `nu` bins on `[0, u_max]` for super-Brownian
//! models (variance `dt * du` per bin), or an `na x nb` rectangle on `[0,1]^2`
//! for Fleming-Viot models (variance `dt * da * db` per cell).
//!
//! Aggregates turn a panel into prefix sums `S(j)` so that the noise
//! increment seen by a spatial node is a single lookup at the node's level
//! bin: `S(bin(Y(x)))`. A level cell contributes to `S(j)` exactly when the
//! cell lies entirely inside the indicator region for the level value
//! `v_j = j * du`; this makes `S(0) = 0` and, on the Fleming-Viot side,
//! `S(n) = 0` at full mass, so both the zero state and the flat unit state
//! receive no noise.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FvRect, LevelGrid};

/// Deterministic per-replica stream derivation.
///
/// ChaCha is a counter-based generator: every `(master_seed, replica_index)`
/// pair names an independent stream, so replicas can be generated on any
/// worker in any order and still reproduce bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub replica_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, replica_index: u64) -> Self {
        SeedSpec {
            master_seed,
            replica_index,
        }
    }

    /// The replica's RNG stream.
    pub fn stream(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.replica_index);
        rng
    }

    /// Derives an independent master seed for a sub-experiment (splitmix64).
    pub fn derive_master(master_seed: u64, tag: u64) -> u64 {
        let mut z = master_seed
            .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(tag.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
}

/// One time-step of white-noise increments over the 1D level grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePanel1D {
    pub increments: Vec<f64>,
    pub dt: f64,
}

/// One time-step of white-noise increments over the `[0,1]^2` rectangle,
/// row-major: entry `(p, q)` at index `p * nb + q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePanel2D {
    pub increments: Vec<f64>,
    pub na: usize,
    pub nb: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoisePanel {
    Sbm(NoisePanel1D),
    Fv(NoisePanel2D),
}

pub fn sample_panel_1d(rng: &mut ChaCha12Rng, levels: &LevelGrid, dt: f64) -> Result<NoisePanel1D> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt ({dt}) must be positive")));
    }
    let sd = (dt * levels.du()).sqrt();
    let normal = Normal::new(0.0, sd).expect("valid normal parameters");
    let increments = (0..levels.nu()).map(|_| normal.sample(rng)).collect();
    Ok(NoisePanel1D { increments, dt })
}

pub fn sample_panel_2d(rng: &mut ChaCha12Rng, rect: &FvRect, dt: f64) -> Result<NoisePanel2D> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt ({dt}) must be positive")));
    }
    let sd = (dt * rect.da() * rect.db()).sqrt();
    let normal = Normal::new(0.0, sd).expect("valid normal parameters");
    let increments = (0..rect.na() * rect.nb()).map(|_| normal.sample(rng)).collect();
    Ok(NoisePanel2D {
        increments,
        na: rect.na(),
        nb: rect.nb(),
        dt,
    })
}

/// Prefix-summed noise indexed by level bin: `S(j)` is the noise increment
/// applied to a node whose field value falls in level bin `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAggregate {
    s: Vec<f64>,
}

impl LevelAggregate {
    /// `S(j)` for `j` clamped into range.
    pub fn at(&self, j: usize) -> f64 {
        self.s[j.min(self.s.len() - 1)]
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// Super-Brownian aggregate: `S(j) = sum_{k < j} sqrt(sigma(u_k)) * dW_k`,
/// summing the bins that lie entirely below the level value `j * du`.
pub fn aggregate_sbm(panel: &NoisePanel1D, sigma_mid: &[f64]) -> Result<LevelAggregate> {
    let nu = panel.increments.len();
    if sigma_mid.len() != nu {
        return Err(Error::LengthMismatch {
            what: "sigma midpoint table",
            expected: nu,
            got: sigma_mid.len(),
        });
    }
    if let Some(bad) = sigma_mid.iter().find(|&&s| !(s >= 0.0)) {
        return Err(Error::domain(format!("sigma must be nonnegative, got {bad}")));
    }
    let mut s = Vec::with_capacity(nu + 1);
    s.push(0.0);
    let mut acc = 0.0;
    for (dw, sig) in panel.increments.iter().zip(sigma_mid.iter()) {
        acc += sig.sqrt() * dw;
        s.push(acc);
    }
    Ok(LevelAggregate { s })
}

/// Fleming-Viot aggregate on `n_eval = na` evaluation levels `v_j = j / na`:
/// cell `(p, q)` (0-indexed) contributes to `S(j)` when its a-range lies
/// entirely below `v_j` (`p + 1 <= j`) and its b-range entirely above
/// (`q * na >= j * nb`). Computed from one 2D cumulative-sum pass, O(1) per
/// level afterwards.
pub fn aggregate_fv(panel: &NoisePanel2D, gamma_mid: &[f64]) -> Result<LevelAggregate> {
    let (na, nb) = (panel.na, panel.nb);
    if panel.increments.len() != na * nb {
        return Err(Error::LengthMismatch {
            what: "fv panel increments",
            expected: na * nb,
            got: panel.increments.len(),
        });
    }
    if gamma_mid.len() != na * nb {
        return Err(Error::LengthMismatch {
            what: "gamma midpoint table",
            expected: na * nb,
            got: gamma_mid.len(),
        });
    }
    if let Some(bad) = gamma_mid.iter().find(|&&g| !(g >= 0.0)) {
        return Err(Error::domain(format!("gamma must be nonnegative, got {bad}")));
    }

    // Inclusive 2D prefix sums of sqrt(gamma) * dW, padded by one row/column.
    let w = nb + 1;
    let mut prefix = vec![0.0f64; (na + 1) * w];
    for p in 0..na {
        for q in 0..nb {
            let v = gamma_mid[p * nb + q].sqrt() * panel.increments[p * nb + q];
            prefix[(p + 1) * w + (q + 1)] =
                v + prefix[p * w + (q + 1)] + prefix[(p + 1) * w + q] - prefix[p * w + q];
        }
    }
    let rect_sum = |p_end: usize, q_lo: usize| -> f64 {
        // sum over p in [0, p_end), q in [q_lo, nb)
        prefix[p_end * w + nb] - prefix[p_end * w + q_lo]
    };

    let mut s = Vec::with_capacity(na + 1);
    for j in 0..=na {
        if j == 0 {
            s.push(0.0);
            continue;
        }
        // q * na >= j * nb  <=>  q >= ceil(j * nb / na)
        let q_lo = (j * nb).div_ceil(na);
        if q_lo >= nb {
            s.push(0.0);
        } else {
            s.push(rect_sum(j, q_lo));
        }
    }
    Ok(LevelAggregate { s })
}
