//! Explicit / semi-implicit time stepping of the discretized SPDE.
//!
//! One step applies half-Laplacian drift (ghost cells: left ghost 0, right
//! ghost equal to the boundary value), adds the level-aggregated noise
//! evaluated at the pre-step field (Ito point), projects back onto
//! nondecreasing states, clamps into `[0, mass_cap]`, and re-pins the
//! boundaries: `Y(x_0) = 0` always, and `Y(x_nx) = 1` for Fleming-Viot.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::MonotoneField;
use crate::grid::SpatialGrid;
use crate::isotonic::isotonic_project_inplace;
use crate::models::{CoefficientModel, ModelKind};
use crate::noise::{NoisePanel, SeedSpec};

/// Fraction of the initial mass below which a state counts as extinct.
/// The total-mass SDE oracle uses the same floor for comparability.
pub const MASS_FLOOR_FRACTION: f64 = 1e-4;

/// Total mass may not reach this fraction of the truncation level `u_max`;
/// the step aborts with a truncation-breach error if it does.
pub const TRUNCATION_BREACH_FRACTION: f64 = 0.95;

/// Relative level at which the left-boundary mass warning fires.
pub const LEFT_BOUNDARY_WARN_FRACTION: f64 = 1e-3;

const HIT_HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    Explicit,
    SemiImplicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub dt: f64,
    pub drift: DriftMode,
    /// Store per-step noise panels and fields for post-hoc residual checks.
    pub record_noise: bool,
    /// Keep a field snapshot every `snapshot_stride` steps (plus first/last).
    pub snapshot_stride: usize,
    /// Mass levels whose first hitting times are tracked.
    pub hit_levels: Vec<f64>,
}

impl SchemeConfig {
    pub fn new(dt: f64, drift: DriftMode) -> Self {
        SchemeConfig {
            dt,
            drift,
            record_noise: false,
            snapshot_stride: 1,
            hit_levels: Vec::new(),
        }
    }

    pub fn validate(&self, grid: &SpatialGrid) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain(format!("dt ({}) must be positive", self.dt)));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::domain("snapshot_stride must be >= 1"));
        }
        if matches!(self.drift, DriftMode::Explicit) {
            let bound = 0.5 * grid.dx() * grid.dx();
            if self.dt > bound {
                return Err(Error::domain(format!(
                    "dt ({}) violates the explicit CFL bound dt <= 0.5*dx^2 = {bound}",
                    self.dt
                )));
            }
        }
        Ok(())
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// L2-norm (dx-weighted) of the change made by the isotonic projection.
    pub projection_distance: f64,
    /// Nodes clamped back into `[0, mass_cap]`.
    pub clamp_count: usize,
    /// Total mass divided by the truncation level `u_max`.
    pub truncation_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub values: Vec<f64>,
}

/// Time series of one trajectory plus whatever was recorded along the way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub grid: SpatialGrid,
    pub model_kind: ModelKind,
    pub drift: DriftMode,
    pub dt: f64,
    pub mass_cap: f64,
    pub u_max: f64,
    /// `times[n] = n * dt`, length `steps + 1`.
    pub times: Vec<f64>,
    /// Total mass `Y(x_nx)` per time, length `steps + 1`.
    pub total_mass: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// Every step's field (index 0 = initial), present when `record_noise`.
    pub fields: Option<Vec<Vec<f64>>>,
    /// Every step's noise panel, present when `record_noise`.
    pub panels: Option<Vec<NoisePanel>>,
    pub step_reports: Vec<StepReport>,
    /// `(level, first time the mass reached <= level)` per configured level.
    pub hits: Vec<(f64, Option<f64>)>,
    pub mass_floor: f64,
    /// Steps on which `Y(x_1)` exceeded the warning share of the total mass
    /// (mass too close to the left boundary for the domain width).
    pub left_boundary_warnings: usize,
}

impl TrajectoryRecord {
    pub fn terminal_mass(&self) -> f64 {
        *self.total_mass.last().unwrap()
    }

    pub fn final_field(&self) -> &Snapshot {
        self.snapshots.last().unwrap()
    }

    pub fn mean_projection_distance(&self) -> f64 {
        if self.step_reports.is_empty() {
            return 0.0;
        }
        self.step_reports
            .iter()
            .map(|r| r.projection_distance)
            .sum::<f64>()
            / self.step_reports.len() as f64
    }
}

/// One Euler-Maruyama step. The noise enters through the level aggregate of
/// `panel` evaluated at the pre-step field.
pub fn step(
    y: &MonotoneField,
    model: &CoefficientModel,
    panel: &NoisePanel,
    cfg: &SchemeConfig,
) -> Result<(MonotoneField, StepReport)> {
    let grid = *y.grid();
    cfg.validate(&grid)?;
    let agg = model.aggregate(panel)?;
    let v = y.values();
    let n = v.len();
    let dx2 = grid.dx() * grid.dx();
    let dt = cfg.dt;

    let mut out = vec![0.0f64; n];
    match cfg.drift {
        DriftMode::Explicit => {
            for i in 0..n {
                let left = if i == 0 { 0.0 } else { v[i - 1] };
                let right = if i == n - 1 { v[n - 1] } else { v[i + 1] };
                let lap = (left - 2.0 * v[i] + right) / dx2;
                out[i] = v[i] + 0.5 * dt * lap + agg.at(model.bin(v[i]));
            }
        }
        DriftMode::SemiImplicit => {
            // (I - (dt/2) L) y* = y + noise, with the pin and ghost rules
            // folded into the boundary rows; Thomas elimination.
            let a = 0.5 * dt / dx2;
            let mut diag = vec![1.0 + 2.0 * a; n];
            let mut rhs = vec![0.0f64; n];
            diag[0] = 1.0;
            diag[n - 1] = 1.0 + a;
            rhs[0] = 0.0;
            for i in 1..n {
                rhs[i] = v[i] + agg.at(model.bin(v[i]));
            }
            // Forward sweep: sub/super-diagonals are -a except around row 0.
            let mut c_prime = vec![0.0f64; n];
            c_prime[0] = 0.0; // row 0 is the identity pin
            rhs[0] /= diag[0];
            for i in 1..n {
                let sub = -a;
                let m = diag[i] - sub * c_prime[i - 1];
                c_prime[i] = if i < n - 1 { -a / m } else { 0.0 };
                rhs[i] = (rhs[i] - sub * rhs[i - 1]) / m;
            }
            out[n - 1] = rhs[n - 1];
            for i in (0..n - 1).rev() {
                out[i] = rhs[i] - c_prime[i] * out[i + 1];
            }
        }
    }

    // Restore the state invariants: monotone, within [0, cap], pinned ends.
    let dist2 = isotonic_project_inplace(&mut out);
    let projection_distance = (grid.dx() * dist2).sqrt();

    let cap = y.mass_cap().min(model.u_max());
    let mut clamp_count = 0usize;
    for o in out.iter_mut() {
        let clamped = o.clamp(0.0, cap);
        if clamped != *o {
            clamp_count += 1;
        }
        *o = clamped;
    }
    out[0] = 0.0;
    if model.kind() == ModelKind::Fv {
        out[n - 1] = 1.0;
    }

    let total = out[n - 1];
    if !total.is_finite() || out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("field after step"));
    }
    if model.kind() == ModelKind::Sbm {
        let threshold = TRUNCATION_BREACH_FRACTION * model.u_max();
        if total >= threshold {
            return Err(Error::TruncationBreach {
                mass: total,
                threshold,
                u_max: model.u_max(),
            });
        }
    }

    let report = StepReport {
        projection_distance,
        clamp_count,
        truncation_margin: total / model.u_max(),
    };
    let next = MonotoneField::from_parts_unchecked(grid, out, y.mass_cap());
    debug_assert!(next.validate().is_ok());
    Ok((next, report))
}

fn prepare_initial(y0: &MonotoneField, model: &CoefficientModel) -> Result<MonotoneField> {
    let mut values = y0.values().to_vec();
    if model.kind() == ModelKind::Fv {
        let total = *values.last().unwrap();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::precondition(format!(
                "Fleming-Viot initial data must carry total mass 1, got {total}"
            )));
        }
        *values.last_mut().unwrap() = 1.0;
    }
    MonotoneField::new(*y0.grid(), values, model.mass_cap())
}

/// Runs one trajectory for `round(t_end / dt)` steps.
pub fn run(
    y0: &MonotoneField,
    model: &CoefficientModel,
    cfg: &SchemeConfig,
    seed: SeedSpec,
    t_end: f64,
) -> Result<TrajectoryRecord> {
    let grid = *y0.grid();
    cfg.validate(&grid)?;
    if !(t_end >= cfg.dt) {
        return Err(Error::precondition(format!(
            "t_end ({t_end}) must be >= dt ({})",
            cfg.dt
        )));
    }
    let steps = (t_end / cfg.dt).round().max(1.0) as usize;
    let mut y = prepare_initial(y0, model)?;
    y.validate()?;

    let mass_floor = MASS_FLOOR_FRACTION * y.total_mass();
    let mut rng = seed.stream();

    let mut times = Vec::with_capacity(steps + 1);
    let mut total_mass = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::new();
    let mut step_reports = Vec::with_capacity(steps);
    let mut fields = cfg.record_noise.then(|| Vec::with_capacity(steps + 1));
    let mut panels = cfg.record_noise.then(|| Vec::with_capacity(steps));
    let mut hits: Vec<(f64, Option<f64>)> =
        cfg.hit_levels.iter().map(|&l| (l, None)).collect();
    let mut left_boundary_warnings = 0usize;

    times.push(0.0);
    total_mass.push(y.total_mass());
    snapshots.push(Snapshot { step: 0, values: y.values().to_vec() });
    if let Some(f) = fields.as_mut() {
        f.push(y.values().to_vec());
    }
    for (level, hit) in hits.iter_mut() {
        if y.total_mass() <= *level {
            *hit = Some(0.0);
        }
    }

    for n in 1..=steps {
        let panel = model.sample_panel(&mut rng, cfg.dt)?;
        let (next, report) = step(&y, model, &panel, cfg)?;
        y = next;
        let t = n as f64 * cfg.dt;
        let mass = y.total_mass();
        times.push(t);
        total_mass.push(mass);
        step_reports.push(report);
        if let Some(p) = panels.as_mut() {
            p.push(panel);
        }
        if let Some(f) = fields.as_mut() {
            f.push(y.values().to_vec());
        }
        let snapshot_due = n % cfg.snapshot_stride == 0 || n == steps;
        if snapshot_due {
            // Full invariant check at every snapshot (every step in debug).
            y.validate()?;
            snapshots.push(Snapshot { step: n, values: y.values().to_vec() });
        }
        for (level, hit) in hits.iter_mut() {
            if hit.is_none() && mass <= *level {
                *hit = Some(t);
            }
        }
        if y.values()[1] > LEFT_BOUNDARY_WARN_FRACTION * mass && mass > 0.0 {
            left_boundary_warnings += 1;
        }
    }

    Ok(TrajectoryRecord {
        grid,
        model_kind: model.kind(),
        drift: cfg.drift,
        dt: cfg.dt,
        mass_cap: model.mass_cap(),
        u_max: model.u_max(),
        times,
        total_mass,
        snapshots,
        fields,
        panels,
        step_reports,
        hits,
        mass_floor,
        left_boundary_warnings,
    })
}

/// Per-replica terminal statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaStat {
    pub replica: usize,
    pub terminal_mass: f64,
    pub extinct: bool,
    pub aborted: bool,
    pub abort_msg: Option<String>,
    pub hit_times: Vec<Option<f64>>,
    pub mean_projection_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitHistogram {
    pub level: f64,
    pub t_end: f64,
    pub bins: Vec<usize>,
    pub never: usize,
}

/// Cross-replica statistics with an order-independent reduction: replicas
/// are reduced from an index-ordered table, so results do not depend on the
/// worker count or scheduling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub replicas: usize,
    pub master_seed: u64,
    pub t_end: f64,
    pub dt: f64,
    pub mass_floor: f64,
    pub mean_terminal_mass: f64,
    pub se_terminal_mass: f64,
    pub extinction_fraction: f64,
    pub abort_fraction: f64,
    pub mean_projection_distance: f64,
    pub hit_histograms: Vec<HitHistogram>,
    pub per_replica: Vec<ReplicaStat>,
}

/// Runs independent replicas (concurrently) and reduces their statistics.
/// Replica aborts are recorded, not fatal, unless more than 1% abort.
pub fn run_ensemble(
    y0: &MonotoneField,
    model: &CoefficientModel,
    cfg: &SchemeConfig,
    master_seed: u64,
    replicas: usize,
    t_end: f64,
) -> Result<EnsembleSummary> {
    if replicas < 1 {
        return Err(Error::precondition("replicas must be >= 1"));
    }
    // Replica records stay slim: no stored noise, only the final snapshot.
    let mut replica_cfg = cfg.clone();
    replica_cfg.record_noise = false;
    replica_cfg.snapshot_stride = usize::MAX;

    let stats: Vec<ReplicaStat> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let seed = SeedSpec::new(master_seed, r as u64);
            match run(y0, model, &replica_cfg, seed, t_end) {
                Ok(rec) => ReplicaStat {
                    replica: r,
                    terminal_mass: rec.terminal_mass(),
                    extinct: rec.terminal_mass() <= rec.mass_floor,
                    aborted: false,
                    abort_msg: None,
                    hit_times: rec.hits.iter().map(|(_, t)| *t).collect(),
                    mean_projection_distance: rec.mean_projection_distance(),
                },
                Err(e) => ReplicaStat {
                    replica: r,
                    terminal_mass: f64::NAN,
                    extinct: false,
                    aborted: true,
                    abort_msg: Some(e.to_string()),
                    hit_times: cfg.hit_levels.iter().map(|_| None).collect(),
                    mean_projection_distance: f64::NAN,
                },
            }
        })
        .collect();

    summarize(stats, model, cfg, master_seed, replicas, t_end, y0)
}

fn summarize(
    stats: Vec<ReplicaStat>,
    _model: &CoefficientModel,
    cfg: &SchemeConfig,
    master_seed: u64,
    replicas: usize,
    t_end: f64,
    y0: &MonotoneField,
) -> Result<EnsembleSummary> {
    let aborted = stats.iter().filter(|s| s.aborted).count();
    let abort_fraction = aborted as f64 / replicas as f64;
    if abort_fraction > 0.01 {
        let first = stats
            .iter()
            .find_map(|s| s.abort_msg.clone())
            .unwrap_or_default();
        return Err(Error::TooManyAborts {
            fraction: abort_fraction,
            first,
        });
    }

    let ok: Vec<&ReplicaStat> = stats.iter().filter(|s| !s.aborted).collect();
    let n = ok.len();
    let masses: Vec<f64> = ok.iter().map(|s| s.terminal_mass).collect();
    let mean = masses.iter().sum::<f64>() / n as f64;
    let all_equal = masses.windows(2).all(|w| w[0] == w[1]);
    let se = if n < 2 || all_equal {
        0.0
    } else {
        let var = masses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    let extinction_fraction = ok.iter().filter(|s| s.extinct).count() as f64 / n as f64;
    let mean_projection_distance =
        ok.iter().map(|s| s.mean_projection_distance).sum::<f64>() / n as f64;

    let hit_histograms = cfg
        .hit_levels
        .iter()
        .enumerate()
        .map(|(li, &level)| {
            let mut bins = vec![0usize; HIT_HISTOGRAM_BINS];
            let mut never = 0usize;
            for s in &ok {
                match s.hit_times[li] {
                    Some(t) => {
                        let b = ((t / t_end) * HIT_HISTOGRAM_BINS as f64) as usize;
                        bins[b.min(HIT_HISTOGRAM_BINS - 1)] += 1;
                    }
                    None => never += 1,
                }
            }
            HitHistogram { level, t_end, bins, never }
        })
        .collect();

    Ok(EnsembleSummary {
        replicas,
        master_seed,
        t_end,
        dt: cfg.dt,
        mass_floor: MASS_FLOOR_FRACTION * y0.total_mass(),
        mean_terminal_mass: mean,
        se_terminal_mass: se,
        extinction_fraction,
        abort_fraction,
        mean_projection_distance,
        hit_histograms,
        per_replica: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{FvRect, LevelGrid};
    use crate::models::{FvModel, SbmModel};
    use crate::noise::NoisePanel1D;

    fn sbm_zero_noise(u_max: f64, nu: usize) -> CoefficientModel {
        let levels = LevelGrid::new(u_max, nu).unwrap();
        CoefficientModel::Sbm(SbmModel::tabulated(vec![0.0; nu], levels).unwrap())
    }

    fn sbm_constant(c: f64, u_max: f64, nu: usize) -> CoefficientModel {
        let levels = LevelGrid::new(u_max, nu).unwrap();
        CoefficientModel::Sbm(SbmModel::constant(c, levels).unwrap())
    }

    fn gaussian_cdf_field(grid: SpatialGrid, mu: f64, s: f64, mass: f64) -> MonotoneField {
        let phi =
            |x: f64| 0.5 * (1.0 + statrs::function::erf::erf((x - mu) / (s * std::f64::consts::SQRT_2)));
        let mut values: Vec<f64> = grid.nodes().map(|x| mass * phi(x)).collect();
        values[0] = 0.0;
        MonotoneField::new(grid, values, f64::INFINITY).unwrap()
    }

    #[test]
    fn zero_field_is_invariant_for_any_panel() {
        let grid = SpatialGrid::new(-4.0, 4.0, 32).unwrap();
        let model = sbm_constant(1.0, 2.0, 64);
        let y = MonotoneField::zero(grid, model.mass_cap());
        let cfg = SchemeConfig::new(1e-3, DriftMode::Explicit);
        let mut rng = SeedSpec::new(1, 0).stream();
        for _ in 0..50 {
            let panel = model.sample_panel(&mut rng, cfg.dt).unwrap();
            let (next, report) = step(&y, &model, &panel, &cfg).unwrap();
            assert_eq!(next.values(), y.values());
            assert_eq!(report.projection_distance, 0.0);
        }
    }

    #[test]
    fn zero_noise_step_is_a_heat_step() {
        // With sigma = 0 the Gaussian CDF spreads as Phi(x / sqrt(s0^2 + t)).
        let grid = SpatialGrid::new(-8.0, 8.0, 128).unwrap();
        let model = sbm_zero_noise(2.0, 32);
        let y0 = gaussian_cdf_field(grid, 0.0, 0.5, 1.0);
        let cfg = SchemeConfig::new(1e-3, DriftMode::Explicit);
        let t_end = 0.25;
        let rec = run(&y0, &model, &cfg, SeedSpec::new(0, 0), t_end).unwrap();
        let want = gaussian_cdf_field(grid, 0.0, (0.25f64 + 0.5 * 0.5).sqrt(), 1.0);
        let got = &rec.final_field().values;
        let max_err = got
            .iter()
            .zip(want.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 2e-3, "max node error {max_err}");
    }

    #[test]
    fn fv_unit_plateau_is_invariant_and_boundary_pinned() {
        // A CDF that reaches 1 in the middle of the domain: every node on
        // the plateau keeps the exact value 1 through noisy steps.
        let grid = SpatialGrid::new(-4.0, 4.0, 64).unwrap();
        let rect = FvRect::new(32, 32).unwrap();
        let model = CoefficientModel::Fv(FvModel::constant(1.5, rect).unwrap());
        let jump = 24usize;
        let values: Vec<f64> = (0..=64).map(|i| if i >= jump { 1.0 } else { 0.0 }).collect();
        let y0 = MonotoneField::new(grid, values, 1.0).unwrap();
        let cfg = SchemeConfig::new(1e-3, DriftMode::Explicit);
        let rec = run(&y0, &model, &cfg, SeedSpec::new(7, 0), 0.05).unwrap();
        for snap in &rec.snapshots {
            assert_eq!(*snap.values.last().unwrap(), 1.0);
        }
        // Nodes comfortably inside the plateau never moved: the aggregate
        // vanishes at full mass and the drift of a flat segment is zero.
        let f = &rec.final_field().values;
        for &v in &f[jump + 10..] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn single_step_run_has_two_records() {
        let grid = SpatialGrid::new(-4.0, 4.0, 16).unwrap();
        let model = sbm_constant(1.0, 2.0, 32);
        let y0 = gaussian_cdf_field(grid, 0.0, 1.0, 0.5);
        let cfg = SchemeConfig::new(1e-3, DriftMode::Explicit);
        let rec = run(&y0, &model, &cfg, SeedSpec::new(3, 0), 1e-3).unwrap();
        assert_eq!(rec.times.len(), 2);
        assert_eq!(rec.total_mass.len(), 2);
    }

    #[test]
    fn identical_seeds_reproduce_bit_exactly() {
        let grid = SpatialGrid::new(-4.0, 4.0, 32).unwrap();
        let model = sbm_constant(1.0, 4.0, 64);
        let y0 = gaussian_cdf_field(grid, 0.0, 0.7, 1.0);
        let mut cfg = SchemeConfig::new(1e-3, DriftMode::Explicit);
        cfg.record_noise = true;
        let a = run(&y0, &model, &cfg, SeedSpec::new(99, 5), 0.1).unwrap();
        let b = run(&y0, &model, &cfg, SeedSpec::new(99, 5), 0.1).unwrap();
        assert_eq!(a, b);
        let c = run(&y0, &model, &cfg, SeedSpec::new(99, 6), 0.1).unwrap();
        assert_ne!(a.total_mass, c.total_mass);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let grid = SpatialGrid::new(-4.0, 4.0, 256).unwrap();
        let cfg = SchemeConfig::new(1e-2, DriftMode::Explicit);
        let err = cfg.validate(&grid).unwrap_err();
        assert!(err.to_string().contains("CFL"));
        // Semi-implicit mode has no CFL restriction.
        let cfg = SchemeConfig::new(1e-2, DriftMode::SemiImplicit);
        assert!(cfg.validate(&grid).is_ok());
    }

    #[test]
    fn semi_implicit_zero_noise_matches_tridiagonal_oracle() {
        let grid = SpatialGrid::new(-4.0, 4.0, 48).unwrap();
        let model = sbm_zero_noise(2.0, 16);
        let y0 = gaussian_cdf_field(grid, 0.0, 0.8, 1.0);
        let cfg = SchemeConfig::new(5e-3, DriftMode::SemiImplicit);
        let steps = 40;
        let rec = run(&y0, &model, &cfg, SeedSpec::new(0, 0), cfg.dt * steps as f64).unwrap();

        // Reference: plain tridiagonal heat solve with the same rows.
        let n = grid.n_nodes();
        let a = 0.5 * cfg.dt / (grid.dx() * grid.dx());
        let mut v = y0.values().to_vec();
        for _ in 0..steps {
            let mut diag = vec![1.0 + 2.0 * a; n];
            diag[0] = 1.0;
            diag[n - 1] = 1.0 + a;
            let mut rhs = v.clone();
            rhs[0] = 0.0;
            let mut c_prime = vec![0.0; n];
            rhs[0] /= diag[0];
            for i in 1..n {
                let m = diag[i] - (-a) * c_prime[i - 1];
                c_prime[i] = if i < n - 1 { -a / m } else { 0.0 };
                rhs[i] = (rhs[i] - (-a) * rhs[i - 1]) / m;
            }
            v[n - 1] = rhs[n - 1];
            for i in (0..n - 1).rev() {
                v[i] = rhs[i] - c_prime[i] * v[i + 1];
            }
            v[0] = 0.0;
        }
        for (got, want) in rec.final_field().values.iter().zip(v.iter()) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn truncation_breach_aborts() {
        let grid = SpatialGrid::new(-4.0, 4.0, 16).unwrap();
        let model = sbm_constant(1.0, 1.0, 16);
        // Initial mass already at 0.96 * u_max.
        let values: Vec<f64> = (0..=16).map(|i| if i >= 8 { 0.96 } else { 0.0 }).collect();
        let y0 = MonotoneField::new(grid, values, f64::INFINITY).unwrap();
        let cfg = SchemeConfig::new(1e-3, DriftMode::Explicit);
        let panel = NoisePanel::Sbm(NoisePanel1D { increments: vec![0.0; 16], dt: 1e-3 });
        let err = step(&y0, &model, &panel, &cfg).unwrap_err();
        assert!(matches!(err, Error::TruncationBreach { .. }), "{err}");
    }

    #[test]
    fn ensemble_of_deterministic_model_has_zero_se() {
        let grid = SpatialGrid::new(-4.0, 4.0, 32).unwrap();
        let model = sbm_zero_noise(2.0, 16);
        let y0 = gaussian_cdf_field(grid, 0.0, 0.8, 1.0);
        let cfg = SchemeConfig::new(1e-3, DriftMode::Explicit);
        let summary = run_ensemble(&y0, &model, &cfg, 42, 8, 0.05).unwrap();
        assert_eq!(summary.se_terminal_mass, 0.0);
        assert_eq!(summary.abort_fraction, 0.0);

        // A single replica reproduces the single-run statistic.
        let one = run_ensemble(&y0, &model, &cfg, 42, 1, 0.05).unwrap();
        let rec = run(&y0, &model, &cfg, SeedSpec::new(42, 0), 0.05).unwrap();
        assert_eq!(one.mean_terminal_mass, rec.terminal_mass());
        assert_eq!(one.se_terminal_mass, 0.0);
    }

    #[test]
    fn hit_levels_are_tracked() {
        let grid = SpatialGrid::new(-4.0, 4.0, 32).unwrap();
        let model = sbm_zero_noise(2.0, 16);
        let y0 = gaussian_cdf_field(grid, 0.0, 0.8, 1.0);
        let mut cfg = SchemeConfig::new(1e-3, DriftMode::Explicit);
        cfg.hit_levels = vec![2.0, 0.5];
        let rec = run(&y0, &model, &cfg, SeedSpec::new(0, 0), 0.02).unwrap();
        // Mass starts at 1 <= 2 (hit at t = 0) and never decays to 0.5
        // in a zero-noise run.
        assert_eq!(rec.hits[0], (2.0, Some(0.0)));
        assert_eq!(rec.hits[1], (0.5, None));
    }
}
