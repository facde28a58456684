//! Run configuration: a flat TOML tree whose key names are the contract.
//!
//! Parse errors carry line/column anchors from the TOML parser; semantic
//! validation errors name the violated bound.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dfspde::field::MonotoneField;
use dfspde::grid::{FvRect, LevelGrid, SpatialGrid};
use dfspde::integrator::{DriftMode, SchemeConfig};
use dfspde::models::{load_coeff_csv, CoefficientModel, FvModel, SbmModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub domain: DomainBlock,
    pub levels: LevelsBlock,
    pub time: TimeBlock,
    pub ensemble: EnsembleBlock,
    pub initial: InitialBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindCfg {
    Sbm,
    Fv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: ModelKindCfg,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<SigmaCfg>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaCfg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaCfg {
    Power { gamma_prime: f64 },
    Table { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaCfg {
    Constant { c: f64 },
    Table { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelsBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub na: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nb: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    pub dt: f64,
    pub t_end: f64,
    pub drift_mode: DriftMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleBlock {
    pub replicas: usize,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hit_levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialBlock {
    GaussianCdf { mu: f64, s: f64, mass: f64 },
    Step { location: f64, mass: f64 },
    Table { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default)]
    pub record_noise: bool,
}

fn default_out_dir() -> String {
    "out".to_string()
}

fn default_stride() -> usize {
    1
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: default_out_dir(),
            snapshot_stride: default_stride(),
            record_noise: false,
        }
    }
}

/// Everything a command needs, built and validated from a `RunConfig`.
pub struct Built {
    pub grid: SpatialGrid,
    pub model: CoefficientModel,
    pub y0: MonotoneField,
    pub scheme: SchemeConfig,
    pub replicas: usize,
    pub master_seed: u64,
    pub t_end: f64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| anyhow!("{e}"))
    }

    pub fn parse_file(path: &Path) -> Result<(RunConfig, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg = RunConfig::parse_str(&text)
            .with_context(|| format!("in config file {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((cfg, base))
    }

    /// Canonical serialized form; the basis of the content hash.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Validates the full tree and builds the simulation objects. Table
    /// paths resolve relative to `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Built> {
        let grid = SpatialGrid::new(self.domain.x_min, self.domain.x_max, self.domain.nx)
            .map_err(|e| anyhow!("[domain] {e}"))?;

        let model = match self.model.kind {
            ModelKindCfg::Sbm => {
                let u_max = self
                    .levels
                    .u_max
                    .ok_or_else(|| anyhow!("[levels] u_max is required for sbm models"))?;
                let nu = self
                    .levels
                    .nu
                    .ok_or_else(|| anyhow!("[levels] nu is required for sbm models"))?;
                let levels = LevelGrid::new(u_max, nu).map_err(|e| anyhow!("[levels] {e}"))?;
                let sigma = self
                    .model
                    .sigma
                    .as_ref()
                    .ok_or_else(|| anyhow!("[model] sigma block is required for sbm models"))?;
                let sbm = match sigma {
                    SigmaCfg::Power { gamma_prime } => SbmModel::power(*gamma_prime, levels)
                        .map_err(|e| anyhow!("[model.sigma] {e}"))?,
                    SigmaCfg::Table { path } => {
                        let full = base_dir.join(path);
                        let values = load_coeff_csv(full.to_str().unwrap_or(path))
                            .map_err(|e| anyhow!("[model.sigma] {e}"))?;
                        if values.len() != nu {
                            bail!(
                                "[model.sigma] table {} has {} values, levels.nu = {nu}",
                                path,
                                values.len()
                            );
                        }
                        SbmModel::tabulated(values, levels)
                            .map_err(|e| anyhow!("[model.sigma] {e}"))?
                    }
                };
                CoefficientModel::Sbm(sbm)
            }
            ModelKindCfg::Fv => {
                if let Some(u_max) = self.levels.u_max {
                    if u_max != 1.0 {
                        bail!("[levels] u_max must be 1 for fv models (level domain is [0,1])");
                    }
                }
                let na = self
                    .levels
                    .na
                    .ok_or_else(|| anyhow!("[levels] na is required for fv models"))?;
                let nb = self
                    .levels
                    .nb
                    .ok_or_else(|| anyhow!("[levels] nb is required for fv models"))?;
                let rect = FvRect::new(na, nb).map_err(|e| anyhow!("[levels] {e}"))?;
                let gamma = self
                    .model
                    .gamma
                    .as_ref()
                    .ok_or_else(|| anyhow!("[model] gamma block is required for fv models"))?;
                let fv = match gamma {
                    GammaCfg::Constant { c } => {
                        FvModel::constant(*c, rect).map_err(|e| anyhow!("[model.gamma] {e}"))?
                    }
                    GammaCfg::Table { path } => {
                        let full = base_dir.join(path);
                        let values = load_coeff_csv(full.to_str().unwrap_or(path))
                            .map_err(|e| anyhow!("[model.gamma] {e}"))?;
                        if values.len() != na * nb {
                            bail!(
                                "[model.gamma] table {} has {} values, na*nb = {}",
                                path,
                                values.len(),
                                na * nb
                            );
                        }
                        FvModel::tabulated(values, rect).map_err(|e| anyhow!("[model.gamma] {e}"))?
                    }
                };
                CoefficientModel::Fv(fv)
            }
        };

        let scheme = SchemeConfig {
            dt: self.time.dt,
            drift: self.time.drift_mode,
            record_noise: self.output.record_noise,
            snapshot_stride: self.output.snapshot_stride,
            hit_levels: self.ensemble.hit_levels.clone(),
        };
        scheme.validate(&grid).map_err(|e| anyhow!("[time] {e}"))?;
        if self.time.t_end < self.time.dt {
            bail!(
                "[time] t_end ({}) must be >= dt ({})",
                self.time.t_end,
                self.time.dt
            );
        }
        if self.ensemble.replicas < 1 {
            bail!("[ensemble] replicas must be >= 1");
        }

        let y0 = self.build_initial(&grid, &model, base_dir)?;

        Ok(Built {
            grid,
            model,
            y0,
            scheme,
            replicas: self.ensemble.replicas,
            master_seed: self.ensemble.master_seed,
            t_end: self.time.t_end,
            out_dir: PathBuf::from(&self.output.dir),
        })
    }

    fn build_initial(
        &self,
        grid: &SpatialGrid,
        model: &CoefficientModel,
        base_dir: &Path,
    ) -> Result<MonotoneField> {
        let values: Vec<f64> = match &self.initial {
            InitialBlock::GaussianCdf { mu, s, mass } => {
                if !(*s > 0.0) {
                    bail!("[initial] s ({s}) must be positive");
                }
                if !(*mass >= 0.0) {
                    bail!("[initial] mass ({mass}) must be >= 0");
                }
                let mut v: Vec<f64> = grid
                    .nodes()
                    .map(|x| mass * normal_cdf((x - mu) / s))
                    .collect();
                v[0] = 0.0;
                v
            }
            InitialBlock::Step { location, mass } => {
                if !(*mass >= 0.0) {
                    bail!("[initial] mass ({mass}) must be >= 0");
                }
                let mut v: Vec<f64> = grid
                    .nodes()
                    .map(|x| if x >= *location { *mass } else { 0.0 })
                    .collect();
                v[0] = 0.0;
                v
            }
            InitialBlock::Table { path } => {
                let full = base_dir.join(path);
                let v = load_field_csv(&full)?;
                if v.len() != grid.n_nodes() {
                    bail!(
                        "[initial] table {} has {} values, grid has {} nodes",
                        path,
                        v.len(),
                        grid.n_nodes()
                    );
                }
                v
            }
        };
        MonotoneField::new(*grid, values, model.mass_cap()).map_err(|e| anyhow!("[initial] {e}"))
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(z / std::f64::consts::SQRT_2))
}

/// Reads an initial-field table: header `# dfspde-field v1`, one node value
/// per line.
pub fn load_field_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read field table {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "# dfspde-field v1" => {}
        _ => bail!("{}:1: missing header `# dfspde-field v1`", path.display()),
    }
    let mut values = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .with_context(|| format!("{}:{}: invalid value", path.display(), i + 1))?;
        values.push(v);
    }
    Ok(values)
}
