//! Independent 1D oracle for the total-mass process.
//!
//! The total mass of the interacting super-Brownian state is a nonnegative
//! continuous local martingale whose quadratic variation accumulates at rate
//! `sigma_0(mass)`, the integrated branching rate. Simulating
//! `dZ = sqrt(sigma_0(Z)) dB` with absorption at zero gives a cheap
//! cross-check for the full SPDE's mass series and drives the
//! extinction-versus-survival experiments: for `sigma(x) = x^g` the mass
//! dies out in finite time when `g < 1` and stays positive when `g >= 1`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::MASS_FLOOR_FRACTION;
use crate::models::SbmModel;
use crate::noise::SeedSpec;

/// One simulated total-mass path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassPath {
    pub times: Vec<f64>,
    pub z: Vec<f64>,
    /// First time the path reached the absorption floor, if it did.
    pub absorbed_at: Option<f64>,
    /// Total positive mass created by the `max(0, .)` clipping; the scheme's
    /// martingale bias is measured, not assumed away.
    pub clip_bias: f64,
    pub mass_floor: f64,
}

impl MassPath {
    pub fn terminal(&self) -> f64 {
        *self.z.last().unwrap()
    }
}

struct Terminal {
    z: f64,
    absorbed_at: Option<f64>,
    clip_bias: f64,
}

fn euler_core(
    z0: f64,
    model: &SbmModel,
    dt: f64,
    t_end: f64,
    seed: SeedSpec,
    mut record: Option<&mut Vec<f64>>,
) -> Result<Terminal> {
    if !(z0 >= 0.0 && z0.is_finite()) {
        return Err(Error::domain(format!("z0 ({z0}) must be >= 0")));
    }
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt ({dt}) must be positive")));
    }
    if !(t_end >= dt) {
        return Err(Error::precondition(format!(
            "t_end ({t_end}) must be >= dt ({dt})"
        )));
    }
    let steps = (t_end / dt).round().max(1.0) as usize;
    let floor = MASS_FLOOR_FRACTION * z0;
    let sqrt_dt = dt.sqrt();
    let mut rng = seed.stream();

    let mut z = z0;
    let mut absorbed_at = None;
    let mut clip_bias = 0.0;
    if z <= floor {
        absorbed_at = Some(0.0);
        z = 0.0;
    }
    if let Some(r) = record.as_mut() {
        r.push(z);
    }
    for n in 1..=steps {
        if absorbed_at.is_none() {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let vol = model.sigma0_unbounded(z).sqrt();
            let raw = z + vol * sqrt_dt * xi;
            if raw < 0.0 {
                clip_bias -= raw;
            }
            z = raw.max(0.0);
            if z <= floor {
                absorbed_at = Some(n as f64 * dt);
                z = 0.0;
            }
        }
        if let Some(r) = record.as_mut() {
            r.push(z);
        }
    }
    Ok(Terminal { z, absorbed_at, clip_bias })
}

/// Euler-Maruyama path of `dZ = sqrt(sigma_0(Z)) dB` with absorption at the
/// mass floor; zero is absorbing exactly.
pub fn simulate_mass(
    z0: f64,
    model: &SbmModel,
    dt: f64,
    t_end: f64,
    seed: SeedSpec,
) -> Result<MassPath> {
    let steps = (t_end / dt).round().max(1.0) as usize;
    let mut z = Vec::with_capacity(steps + 1);
    let terminal = euler_core(z0, model, dt, t_end, seed, Some(&mut z))?;
    let times = (0..=steps).map(|n| n as f64 * dt).collect();
    Ok(MassPath {
        times,
        z,
        absorbed_at: terminal.absorbed_at,
        clip_bias: terminal.clip_bias,
        mass_floor: MASS_FLOOR_FRACTION * z0,
    })
}

/// Terminal-only simulation (no path storage); used by replica sweeps.
pub fn simulate_mass_terminal(
    z0: f64,
    model: &SbmModel,
    dt: f64,
    t_end: f64,
    seed: SeedSpec,
) -> Result<(f64, Option<f64>, f64)> {
    let t = euler_core(z0, model, dt, t_end, seed, None)?;
    Ok((t.z, t.absorbed_at, t.clip_bias))
}

/// First time the path crosses `a` from above: the first index with
/// `Z <= a`. Returns `None` when the level is never reached in the horizon.
pub fn hitting_time(path: &MassPath, a: f64) -> Option<f64> {
    debug_assert!(a >= 0.0);
    path.z
        .iter()
        .position(|&z| z <= a)
        .map(|i| path.times[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Extinction,
    Survival,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Extinction => "extinct",
            Regime::Survival => "survive",
        }
    }
}

/// Finite-horizon extinction statistics for one branching exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionVerdict {
    pub gamma_prime: f64,
    pub horizon: f64,
    pub replicas: usize,
    pub extinct_fraction: f64,
    pub se: f64,
    pub mean_absorption_time: Option<f64>,
    /// 25%, 50%, 75% quantiles of the absorption times of extinct paths.
    pub absorption_time_quantiles: Option<[f64; 3]>,
    /// Regime the dichotomy predicts: extinction below exponent 1,
    /// survival at or above it.
    pub predicted: Regime,
}

/// Scans branching exponents `sigma(x) = x^g` and reports the extinct
/// fraction at the horizon for each.
pub fn classify_extinction(
    gamma_primes: &[f64],
    z0: f64,
    t_end: f64,
    dt: f64,
    replicas: usize,
    master_seed: u64,
) -> Result<Vec<ExtinctionVerdict>> {
    if replicas < 1 {
        return Err(Error::precondition("replicas must be >= 1"));
    }
    gamma_primes
        .iter()
        .enumerate()
        .map(|(gi, &gp)| {
            // The level grid is irrelevant for the analytic power family.
            let levels = crate::grid::LevelGrid::new((2.0 * z0).max(1.0), 2)?;
            let model = SbmModel::power(gp, levels)?;
            let sub_master = SeedSpec::derive_master(master_seed, gi as u64);
            let outcomes: Vec<Option<f64>> = (0..replicas)
                .into_par_iter()
                .map(|r| {
                    let seed = SeedSpec::new(sub_master, r as u64);
                    simulate_mass_terminal(z0, &model, dt, t_end, seed)
                        .map(|(_, absorbed, _)| absorbed)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut absorption: Vec<f64> = outcomes.iter().filter_map(|a| *a).collect();
            let extinct = absorption.len();
            let p = extinct as f64 / replicas as f64;
            let se = (p * (1.0 - p) / replicas as f64).sqrt();
            absorption.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean_absorption_time = if extinct > 0 {
                Some(absorption.iter().sum::<f64>() / extinct as f64)
            } else {
                None
            };
            let absorption_time_quantiles = if extinct > 0 {
                Some([
                    quantile_sorted(&absorption, 0.25),
                    quantile_sorted(&absorption, 0.5),
                    quantile_sorted(&absorption, 0.75),
                ])
            } else {
                None
            };
            Ok(ExtinctionVerdict {
                gamma_prime: gp,
                horizon: t_end,
                replicas,
                extinct_fraction: p,
                se,
                mean_absorption_time,
                absorption_time_quantiles,
                predicted: if gp < 1.0 { Regime::Extinction } else { Regime::Survival },
            })
        })
        .collect()
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::LevelGrid;

    fn feller() -> SbmModel {
        // sigma = 1 (power exponent 0): sigma_0(z) = z, the critical
        // Feller branching diffusion.
        SbmModel::power(0.0, LevelGrid::new(2.0, 2).unwrap()).unwrap()
    }

    #[test]
    fn zero_start_stays_zero() {
        let path = simulate_mass(0.0, &feller(), 1e-3, 0.1, SeedSpec::new(1, 0)).unwrap();
        assert!(path.z.iter().all(|&z| z == 0.0));
        assert_eq!(path.absorbed_at, Some(0.0));
    }

    #[test]
    fn zero_rate_keeps_mass_constant() {
        let levels = LevelGrid::new(2.0, 8).unwrap();
        let model = SbmModel::tabulated(vec![0.0; 8], levels).unwrap();
        let path = simulate_mass(1.0, &model, 1e-3, 0.1, SeedSpec::new(1, 0)).unwrap();
        assert!(path.z.iter().all(|&z| z == 1.0));
        assert_eq!(path.absorbed_at, None);
        assert_eq!(path.clip_bias, 0.0);
    }

    #[test]
    fn zero_is_absorbing_exactly() {
        let model = SbmModel::power(0.5, LevelGrid::new(2.0, 2).unwrap()).unwrap();
        for r in 0..20 {
            let path = simulate_mass(0.05, &model, 1e-3, 5.0, SeedSpec::new(5, r)).unwrap();
            if let Some(t) = path.absorbed_at {
                let idx = (t / 1e-3).round() as usize;
                assert!(path.z[idx..].iter().all(|&z| z == 0.0));
            }
        }
    }

    #[test]
    fn hitting_time_trivials() {
        let levels = LevelGrid::new(2.0, 8).unwrap();
        let model = SbmModel::tabulated(vec![0.0; 8], levels).unwrap();
        let path = simulate_mass(1.0, &model, 1e-3, 0.1, SeedSpec::new(1, 0)).unwrap();
        // a = z0: hit at time 0. a < z0 never hit by a constant path.
        assert_eq!(hitting_time(&path, 1.0), Some(0.0));
        assert_eq!(hitting_time(&path, 0.5), None);
    }

    #[test]
    fn feller_extinction_probability_smoke() {
        // P(absorbed by t) = exp(-2 z0 / t) for the critical Feller
        // diffusion; z0 = 1, t = 4 gives about 0.6065. Coarse-dt smoke
        // test at a wider tolerance; the acceptance suite runs the tight
        // version.
        let model = feller();
        let n = 2000usize;
        let extinct = (0..n)
            .into_par_iter()
            .filter(|&r| {
                let seed = SeedSpec::new(77, r as u64);
                simulate_mass_terminal(1.0, &model, 1e-3, 4.0, seed)
                    .unwrap()
                    .1
                    .is_some()
            })
            .count();
        let p = extinct as f64 / n as f64;
        let want = (-0.5f64).exp();
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert!((p - want).abs() <= 4.0 * se + 0.01, "p = {p}, want {want}");
    }

    #[test]
    fn martingale_mean_and_clip_bias() {
        let model = feller();
        let n = 2000usize;
        let results: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|r| {
                let seed = SeedSpec::new(31, r as u64);
                let (z, _, bias) = simulate_mass_terminal(1.0, &model, 1e-3, 1.0, seed).unwrap();
                (z, bias)
            })
            .collect();
        let mean = results.iter().map(|r| r.0).sum::<f64>() / n as f64;
        let var = results.iter().map(|r| (r.0 - mean) * (r.0 - mean)).sum::<f64>()
            / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
        let mean_bias = results.iter().map(|r| r.1).sum::<f64>() / n as f64;
        assert!(mean_bias <= se, "clip bias {mean_bias} exceeds se {se}");
    }

    #[test]
    fn realized_qv_matches_integrated_rate() {
        // Median relative error of sum (dZ)^2 against sum sigma_0(Z) dt
        // stays below 10% at dt = 1e-4.
        let model = feller();
        let dt = 1e-4;
        let mut errors: Vec<f64> = (0..50)
            .into_par_iter()
            .map(|r| {
                let path =
                    simulate_mass(1.0, &model, dt, 0.25, SeedSpec::new(13, r as u64)).unwrap();
                let realized: f64 = path.z.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
                let predicted: f64 = path.z[..path.z.len() - 1]
                    .iter()
                    .map(|&z| model.sigma0_unbounded(z) * dt)
                    .sum();
                (realized - predicted).abs() / predicted.max(1e-300)
            })
            .collect();
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errors[errors.len() / 2];
        assert!(median <= 0.10, "median relative qv error {median}");
    }

    #[test]
    fn extinct_fraction_decreases_with_exponent() {
        let gammas = [0.0, 0.5, 1.0, 1.5];
        let verdicts = classify_extinction(&gammas, 1.0, 5.0, 1e-3, 400, 2024).unwrap();
        assert_eq!(verdicts.len(), 4);
        for w in verdicts.windows(2) {
            let slack = 2.0 * (w[0].se + w[1].se);
            assert!(
                w[1].extinct_fraction <= w[0].extinct_fraction + slack,
                "fractions {} -> {}",
                w[0].extinct_fraction,
                w[1].extinct_fraction
            );
        }
        assert_eq!(verdicts[0].predicted, Regime::Extinction);
        assert_eq!(verdicts[3].predicted, Regime::Survival);
    }

    #[test]
    fn hitting_time_statistics() {
        // The mass tends to zero along almost every path, so any lower
        // level is reached with probability approaching 1 as the horizon
        // grows. For the critical Feller diffusion the approach is slow
        // (P(hit 0.5 by t=10) is only about 0.93); the horizon below is the
        // shortest round one where the hit probability clears 99%.
        let model = feller();
        let n = 2000usize;
        let hits = (0..n)
            .into_par_iter()
            .filter(|&r| {
                let path =
                    simulate_mass(1.0, &model, 1e-2, 200.0, SeedSpec::new(55, r as u64)).unwrap();
                hitting_time(&path, 0.5).is_some()
            })
            .count();
        let p = hits as f64 / n as f64;
        assert!(p >= 0.99, "hit probability {p}");
    }
}
