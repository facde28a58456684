//! Statistical verification of the model identities.
//!
//! Everything here consumes recorded trajectories or ensemble summaries and
//! checks an identity the dynamics should satisfy: the mass-expectation
//! martingale property, realized quadratic variation of the total mass,
//! per-step weak-form bookkeeping against stored noise, pathwise comparison
//! of coupled runs, boundary conservation for Fleming-Viot, and density
//! reconstruction through the heat-kernel mild form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::MonotoneField;
use crate::grid::SpatialGrid;
use crate::integrator::{run, DriftMode, EnsembleSummary, SchemeConfig, TrajectoryRecord};
use crate::models::{CoefficientModel, ModelKind, SbmModel};
use crate::noise::{NoisePanel, SeedSpec};

/// Relative ordering slack for the comparison diagnostic.
pub const ORDERING_EPSILON_FRACTION: f64 = 1e-6;

/// z-score test of an ensemble mean against a martingale target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTestResult {
    pub target: f64,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
    pub pass: bool,
}

/// Tests the terminal-mass mean against the conserved initial mass.
pub fn mass_martingale_test(
    summary: &EnsembleSummary,
    target: f64,
) -> Result<MartingaleTestResult> {
    let n = summary.per_replica.iter().filter(|s| !s.aborted).count();
    if n < 100 {
        return Err(Error::precondition(format!(
            "need >= 100 replicas for a meaningful z-score, got {n}"
        )));
    }
    let mean = summary.mean_terminal_mass;
    let se = summary.se_terminal_mass;
    let z = if se == 0.0 {
        if mean == target {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (mean - target) / se
    };
    Ok(MartingaleTestResult {
        target,
        mean,
        se,
        z,
        pass: z.abs() <= 3.0,
    })
}

/// Relative error between the realized quadratic variation of the recorded
/// total-mass series and the integrated rate `sum sigma_0(mass) dt`.
pub fn qv_test(record: &TrajectoryRecord, model: &SbmModel) -> f64 {
    let realized: f64 = record
        .total_mass
        .windows(2)
        .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
        .sum();
    let predicted: f64 = record.total_mass[..record.total_mass.len() - 1]
        .iter()
        .map(|&m| model.sigma0_unbounded(m) * record.dt)
        .sum();
    (realized - predicted).abs() / predicted.max(1e-300)
}

/// Per-step weak-form bookkeeping of a stored-noise record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFormReport {
    /// `R_n = <dY, f> - (dt/2) <Y_n, Lf> - <noise_n, f>` per step.
    pub residuals: Vec<f64>,
    /// `<correction_n, f>` per step (isotonic projection, clamping, pins).
    pub projection_pairings: Vec<f64>,
    /// `|R_n - <correction_n, f>|` per step; the scheme is exactly
    /// accounted for, so this is floating-point noise.
    pub unexplained: Vec<f64>,
    pub max_unexplained: f64,
}

/// Recomputes each step from the stored fields and panels and checks that
/// the paired weak form closes: the only unexplained residual is the
/// projection correction, which is returned alongside.
///
/// Requires an explicit-mode record with stored noise, and a test function
/// sampled on the grid that vanishes on the outermost two nodes of each
/// side (so that discrete summation by parts is exact).
pub fn weak_form_residual(
    record: &TrajectoryRecord,
    model: &CoefficientModel,
    f: &[f64],
) -> Result<WeakFormReport> {
    let fields = record
        .fields
        .as_ref()
        .ok_or_else(|| Error::precondition("record_noise was not enabled (no stored fields)"))?;
    let panels = record
        .panels
        .as_ref()
        .ok_or_else(|| Error::precondition("record_noise was not enabled (no stored panels)"))?;
    if record.drift != DriftMode::Explicit {
        return Err(Error::precondition(
            "weak-form bookkeeping is defined for explicit-mode records",
        ));
    }
    let grid = record.grid;
    let n = grid.n_nodes();
    if f.len() != n {
        return Err(Error::LengthMismatch {
            what: "test function samples",
            expected: n,
            got: f.len(),
        });
    }
    let edge_ok = f[0] == 0.0 && f[1] == 0.0 && f[n - 2] == 0.0 && f[n - 1] == 0.0;
    if !edge_ok {
        return Err(Error::precondition(
            "test function must vanish on the two outermost nodes of each side",
        ));
    }
    let dx = grid.dx();
    let dx2 = dx * dx;
    let dt = record.dt;

    // Discrete second derivative of f on interior nodes.
    let mut lf = vec![0.0f64; n];
    for i in 1..n - 1 {
        lf[i] = (f[i - 1] - 2.0 * f[i] + f[i + 1]) / dx2;
    }
    // Trapezoid pairing of two node-sampled functions.
    let pair = |g: &[f64], h: &[f64]| -> f64 {
        let inner: f64 = (1..n - 1).map(|i| g[i] * h[i]).sum();
        dx * (inner + 0.5 * (g[0] * h[0] + g[n - 1] * h[n - 1]))
    };

    let steps = panels.len();
    let mut residuals = Vec::with_capacity(steps);
    let mut projection_pairings = Vec::with_capacity(steps);
    let mut unexplained = Vec::with_capacity(steps);
    let mut max_unexplained = 0.0f64;
    for m in 0..steps {
        let y = &fields[m];
        let y1 = &fields[m + 1];
        let agg = model.aggregate(&panels[m])?;
        let mut noise = vec![0.0f64; n];
        let mut drift = vec![0.0f64; n];
        for i in 0..n {
            noise[i] = agg.at(model.bin(y[i]));
            let left = if i == 0 { 0.0 } else { y[i - 1] };
            let right = if i == n - 1 { y[n - 1] } else { y[i + 1] };
            drift[i] = 0.5 * dt * (left - 2.0 * y[i] + right) / dx2;
        }
        let dy: Vec<f64> = (0..n).map(|i| y1[i] - y[i]).collect();
        let corr: Vec<f64> = (0..n).map(|i| dy[i] - drift[i] - noise[i]).collect();
        let r = pair(&dy, f) - 0.5 * dt * pair(y, &lf) - pair(&noise, f);
        let p = pair(&corr, f);
        let u = (r - p).abs();
        residuals.push(r);
        projection_pairings.push(p);
        unexplained.push(u);
        max_unexplained = max_unexplained.max(u);
    }
    Ok(WeakFormReport {
        residuals,
        projection_pairings,
        unexplained,
        max_unexplained,
    })
}

/// Coupled-path ordering diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Share of sampled `(t, x)` where the lower path exceeded the upper
    /// one by more than the ordering slack.
    pub violation_fraction: f64,
    pub max_violation: f64,
    pub samples: usize,
    pub epsilon: f64,
    pub coupled_seed: bool,
}

/// Runs two trajectories on identical noise panels (same seed) from ordered
/// initial data and reports how often the ordering broke at snapshot times.
pub fn comparison_test(
    y0_low: &MonotoneField,
    y0_high: &MonotoneField,
    model: &CoefficientModel,
    cfg: &SchemeConfig,
    seed: SeedSpec,
    t_end: f64,
) -> Result<ComparisonReport> {
    if y0_low.grid() != y0_high.grid() {
        return Err(Error::precondition("both initial fields must share the grid"));
    }
    for (l, h) in y0_low.values().iter().zip(y0_high.values().iter()) {
        if l > h {
            return Err(Error::precondition(format!(
                "initial ordering violated: {l} > {h}"
            )));
        }
    }
    let low = run(y0_low, model, cfg, seed, t_end)?;
    let high = run(y0_high, model, cfg, seed, t_end)?;
    let epsilon = ORDERING_EPSILON_FRACTION * model.u_max();
    let mut samples = 0usize;
    let mut violations = 0usize;
    let mut max_violation = 0.0f64;
    for (sl, sh) in low.snapshots.iter().zip(high.snapshots.iter()) {
        debug_assert_eq!(sl.step, sh.step);
        for (l, h) in sl.values.iter().zip(sh.values.iter()) {
            samples += 1;
            let excess = l - h;
            if excess > epsilon {
                violations += 1;
            }
            max_violation = max_violation.max(excess);
        }
    }
    Ok(ComparisonReport {
        violation_fraction: violations as f64 / samples as f64,
        max_violation,
        samples,
        epsilon,
        coupled_seed: true,
    })
}

/// Brownian transition density and its discrete semigroup action.
#[derive(Debug, Clone, Copy)]
pub struct HeatKernel;

impl HeatKernel {
    /// `p_t(x) = (2 pi t)^{-1/2} exp(-x^2 / (2t))`.
    pub fn density(t: f64, x: f64) -> f64 {
        debug_assert!(t > 0.0);
        (-x * x / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt()
    }

    /// Discrete convolution `P_t f` on grid nodes (Riemann weights).
    pub fn apply(grid: &SpatialGrid, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != grid.n_nodes() {
            return Err(Error::LengthMismatch {
                what: "semigroup input",
                expected: grid.n_nodes(),
                got: f.len(),
            });
        }
        let dx = grid.dx();
        let n = grid.n_nodes();
        // One kernel row indexed by |i - j|.
        let row: Vec<f64> = (0..n).map(|d| Self::density(t, d as f64 * dx)).collect();
        Ok((0..n)
            .map(|i| {
                let mut acc = 0.0;
                for (j, fj) in f.iter().enumerate() {
                    let d = i.abs_diff(j);
                    acc += row[d] * fj;
                }
                acc * dx
            })
            .collect())
    }

    /// Kernel mass `dx * sum p_t(d * dx)` over the doubly-infinite lattice
    /// restricted to the grid span; close to 1 on adequate grids.
    pub fn lattice_mass(grid: &SpatialGrid, t: f64) -> f64 {
        let dx = grid.dx();
        let n = grid.n_nodes() as i64;
        let mut acc = 0.0;
        for d in -n..=n {
            acc += Self::density(t, d as f64 * dx);
        }
        acc * dx
    }
}

/// Gaussian mass of the cell of width `dx` centered at distance `d`,
/// divided by `dx`: the cell average of `p_t` around `d`. The
/// finite-difference estimator is a cell average by construction, so the
/// mild-form kernel is sampled at the same resolution.
fn cell_avg_kernel(t: f64, d: f64, dx: f64) -> f64 {
    let s = (2.0 * t).sqrt();
    let hi = libm::erf((d + 0.5 * dx) / s);
    let lo = libm::erf((d - 0.5 * dx) / s);
    0.5 * (hi - lo) / dx
}

/// Normalized kernel row on the integer lattice: entry `s` holds the
/// cell-averaged kernel at distance `(s - nx) * dx`, scaled so
/// `dx * sum = 1` (keeps each noise atom's mass exact even when `t` is
/// below the cell resolution scale).
fn kernel_row_int(nx: usize, dx: f64, t: f64) -> Vec<f64> {
    let mut row: Vec<f64> = (0..=2 * nx)
        .map(|s| cell_avg_kernel(t, (s as f64 - nx as f64) * dx, dx))
        .collect();
    let mass: f64 = row.iter().sum::<f64>() * dx;
    if mass > 0.0 {
        for r in row.iter_mut() {
            *r /= mass;
        }
    }
    row
}

/// Two density estimators on cell midpoints and their L1 gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub cell_mids: Vec<f64>,
    /// Finite difference of the field: `(Y(x_i) - Y(x_{i-1})) / dx`.
    pub finite_difference: Vec<f64>,
    /// Heat-kernel evolution of the initial atoms plus the discrete
    /// stochastic convolution of the stored noise.
    pub mild_form: Vec<f64>,
    pub l1_discrepancy: f64,
    pub total_mass: f64,
}

/// Reconstructs the density at time `t` two ways from a stored-noise record:
/// by finite differences of the field and through the mild form. The noise
/// convolution evaluates the generalized inverse on level-bin midpoints and
/// lags the kernel by half a step (`t - s >= dt/2`), which keeps the kernel
/// variance finite at the last step.
pub fn density_reconstruct(
    record: &TrajectoryRecord,
    model: &CoefficientModel,
    t: f64,
) -> Result<DensityEstimate> {
    let fields = record
        .fields
        .as_ref()
        .ok_or_else(|| Error::precondition("record_noise was not enabled (no stored fields)"))?;
    let panels = record
        .panels
        .as_ref()
        .ok_or_else(|| Error::precondition("record_noise was not enabled (no stored panels)"))?;
    let dt = record.dt;
    if !(t >= 10.0 * dt) {
        return Err(Error::precondition(format!(
            "t ({t}) must be at least 10 * dt ({dt})"
        )));
    }
    let n_t = (t / dt).round() as usize;
    if n_t >= fields.len() {
        return Err(Error::precondition(format!(
            "t ({t}) lies beyond the recorded horizon"
        )));
    }
    let grid = record.grid;
    let nx = grid.nx();
    let dx = grid.dx();

    let field_t = &fields[n_t];
    let finite_difference: Vec<f64> =
        field_t.windows(2).map(|w| (w[1] - w[0]) / dx).collect();
    let total_mass = *field_t.last().unwrap();

    // Initial term: atoms of Y_0 placed at cell midpoints, kernel time t.
    let mut mild = vec![0.0f64; nx];
    let atoms: Vec<f64> = fields[0].windows(2).map(|w| w[1] - w[0]).collect();
    let row0 = kernel_row_int(nx, dx, t);
    for (j, &w) in atoms.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (i, m) in mild.iter_mut().enumerate() {
            // distance between cell mids i+1 and j+1 is (i - j) * dx
            *m += w * row0[(nx + i) - j];
        }
    }

    // Stochastic convolution of the stored panels. A level-bin atom is
    // placed at the center of the cell where the field crosses the bin
    // midpoint (the generalized inverse resolves positions to grid nodes;
    // the crossing itself lies inside the cell ending at that node, which
    // is also where the aggregated noise lands in the scheme).
    for m_step in 0..n_t {
        let tau = (n_t - m_step) as f64 * dt - 0.5 * dt;
        let row = kernel_row_int(nx, dx, tau);
        let y = MonotoneField::from_parts_unchecked(
            grid,
            fields[m_step].clone(),
            record.mass_cap,
        );
        match (&panels[m_step], model) {
            (NoisePanel::Sbm(panel), CoefficientModel::Sbm(sbm)) => {
                // Group level bins by crossing cell; bins above the current
                // mass have no crossing and do not contribute.
                let mut cell_weight = vec![0.0f64; nx + 1];
                let levels = sbm.levels();
                let mut j = 0usize;
                for (k, &dw) in panel.increments.iter().enumerate() {
                    let u = levels.midpoint(k);
                    while j < y.values().len() && y.values()[j] < u {
                        j += 1;
                    }
                    if j == y.values().len() {
                        break;
                    }
                    cell_weight[j] += sbm.sigma_mid()[k].sqrt() * dw;
                }
                for (jc, &w) in cell_weight.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (i, m) in mild.iter_mut().enumerate() {
                        // distance between cell centers i+1 and jc: (i+1-jc) dx
                        *m += w * row[nx + i + 1 - jc];
                    }
                }
            }
            (NoisePanel::Fv(panel), CoefficientModel::Fv(fv)) => {
                let rect = fv.rect();
                let gamma = fv.gamma_mid();
                // Crossing cells of all a- and b-midlevels under Y_s^{-1}.
                let a_cells: Vec<Option<usize>> = (0..rect.na())
                    .map(|p| y.generalized_inverse_node(rect.a_mid(p)))
                    .collect();
                let b_cells: Vec<Option<usize>> = (0..rect.nb())
                    .map(|q| y.generalized_inverse_node(rect.b_mid(q)))
                    .collect();
                for p in 0..rect.na() {
                    let Some(ja) = a_cells[p] else { continue };
                    for q in 0..rect.nb() {
                        let Some(jb) = b_cells[q] else { continue };
                        let w = gamma[p * rect.nb() + q].sqrt()
                            * panel.increments[p * rect.nb() + q];
                        if w == 0.0 {
                            continue;
                        }
                        for (i, m) in mild.iter_mut().enumerate() {
                            *m += w * (row[nx + i + 1 - jb] - row[nx + i + 1 - ja]);
                        }
                    }
                }
            }
            _ => return Err(Error::domain("panel kind does not match model kind")),
        }
    }

    let l1_discrepancy: f64 = finite_difference
        .iter()
        .zip(mild.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        * dx;
    Ok(DensityEstimate {
        cell_mids: (1..=nx).map(|i| grid.cell_mid(i)).collect(),
        finite_difference,
        mild_form: mild,
        l1_discrepancy,
        total_mass,
    })
}

/// Verifies that a Fleming-Viot record conserved the unit boundary value at
/// every snapshot; bit-exact because the boundary is pinned.
pub fn fv_conservation_check(record: &TrajectoryRecord) -> Result<(bool, f64)> {
    if record.model_kind != ModelKind::Fv {
        return Err(Error::domain(
            "conservation check applies to Fleming-Viot records only",
        ));
    }
    let max_dev = record
        .snapshots
        .iter()
        .map(|s| (s.values.last().unwrap() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok((max_dev == 0.0, max_dev))
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).unwrap());
    ys.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = xs[i];
        let y = ys[j];
        let v = x.min(y);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
    }
    (d, p.clamp(0.0, 1.0))
}

/// One line of a verification report, emitted as JSONL by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportLine {
    pub test: String,
    pub params: serde_json::Value,
    pub statistic: f64,
    pub se: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
}

impl ReportLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report lines serialize")
    }
}
