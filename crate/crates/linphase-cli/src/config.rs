//! Run configuration: one TOML document per experiment.
//!
//! Every field has a default except the network depth and the data
//! specification, of which exactly one (synthetic moments or a CSV of
//! samples) must be present. The resolved form — after command-line
//! overrides and seed derivation — is what lands in the output manifest, so
//! a rerun from the manifest reproduces the artifacts byte for byte.

use std::path::{Path, PathBuf};

use linphase::datastats::{self, MomentData};
use linphase::landscape::{Activation, NetConfig};
use linphase::sweep::Engine;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        eigvals: Vec<f64>,
        signal: Vec<f64>,
        y2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default = "default_grid_scale")]
    pub scale: GridScale,
}

fn default_grid_scale() -> GridScale {
    GridScale::Linear
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            min: 0.01,
            max: 1.0,
            count: 33,
            scale: GridScale::Linear,
        }
    }
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>, String> {
        if self.count < 2 {
            return Err("grid count must be at least 2".into());
        }
        if self.min >= self.max || self.min.is_nan() || self.max.is_nan() {
            return Err("grid min must be below max".into());
        }
        match self.scale {
            GridScale::Linear => Ok((0..self.count)
                .map(|i| {
                    self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64
                })
                .collect()),
            GridScale::Log => {
                if self.min <= 0.0 {
                    return Err("log grid requires min > 0".into());
                }
                let (lo, hi) = (self.min.ln(), self.max.ln());
                Ok((0..self.count)
                    .map(|i| (lo + (hi - lo) * i as f64 / (self.count - 1) as f64).exp())
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BGridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for BGridSpec {
    fn default() -> Self {
        BGridSpec {
            min: -1.0,
            max: 1.0,
            count: 101,
        }
    }
}

impl BGridSpec {
    pub fn values(&self) -> Result<Vec<f64>, String> {
        if self.count < 2 {
            return Err("b-grid count must be at least 2".into());
        }
        if self.min >= self.max || self.min.is_nan() || self.max.is_nan() {
            return Err("b-grid min must be below max".into());
        }
        Ok((0..self.count)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.count - 1) as f64)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSpec {
    pub step_size: f64,
    pub noise_temp: f64,
    pub steps: usize,
    pub init_scale: f64,
    pub seed: Option<u64>,
    pub sample_noise: bool,
    pub record_every: usize,
}

impl Default for TrainerSpec {
    fn default() -> Self {
        TrainerSpec {
            step_size: 1e-2,
            noise_temp: 0.0,
            steps: 10_000,
            init_scale: 0.0,
            seed: None,
            sample_noise: false,
            record_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[clap(rename_all = "lowercase")]
pub enum EngineSpec {
    Landscape,
    Oracle,
    Ridge,
}

impl From<EngineSpec> for Engine {
    fn from(e: EngineSpec) -> Engine {
        match e {
            EngineSpec::Landscape => Engine::Landscape,
            EngineSpec::Oracle => Engine::Oracle,
            EngineSpec::Ridge => Engine::Ridge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationSpec {
    Linear,
    Tanh,
}

fn default_width() -> usize {
    1
}

fn default_reg_exponent() -> u32 {
    2
}

fn default_n_starts() -> usize {
    20
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_gamma() -> f64 {
    0.1
}

fn default_depths() -> Vec<usize> {
    (1..=10).collect()
}

fn default_activation() -> ActivationSpec {
    ActivationSpec::Linear
}

/// The on-disk configuration document.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub depth: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub noise_var: f64,
    #[serde(default = "default_reg_exponent")]
    pub reg_exponent: u32,
    #[serde(default = "default_activation")]
    pub activation: ActivationSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub bgrid: BGridSpec,
    #[serde(default)]
    pub trainer: TrainerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_starts")]
    pub n_starts: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config parse error: {e}"))
    }

    /// Applies command-line overrides and derives the child seeds that were
    /// left unset, so the manifest carries fully concrete values.
    pub fn resolve(mut self, seed_override: Option<u64>, engine_override: Option<EngineSpec>) -> Self {
        if let Some(seed) = seed_override {
            self.seed = seed;
        }
        if let Some(engine) = engine_override {
            self.engine = Some(engine);
        }
        if self.engine.is_none() {
            self.engine = Some(if self.depth == 0 {
                EngineSpec::Ridge
            } else {
                EngineSpec::Landscape
            });
        }
        if let DataSpec::Synthetic { seed, .. } = &mut self.data {
            if seed.is_none() {
                *seed = Some(splitmix(self.seed, 1));
            }
        }
        if self.trainer.seed.is_none() {
            self.trainer.seed = Some(splitmix(self.seed, 2));
        }
        self
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            depth: self.depth,
            width: self.width,
            noise_var: self.noise_var,
            reg_exponent: self.reg_exponent,
            activation: match self.activation {
                ActivationSpec::Linear => Activation::Linear,
                ActivationSpec::Tanh => Activation::Tanh,
            },
        }
    }

    pub fn engine(&self) -> EngineSpec {
        self.engine.expect("resolved config carries an engine")
    }

    pub fn moment_data(&self) -> Result<MomentData, String> {
        match &self.data {
            DataSpec::Synthetic {
                eigvals,
                signal,
                y2,
                seed,
            } => datastats::make_synthetic(eigvals, signal, *y2, seed.unwrap_or(0))
                .map_err(|e| format!("synthetic data: {e}")),
            DataSpec::Csv { path } => {
                datastats::read_csv_path(path).map_err(|e| format!("csv data: {e}"))
            }
        }
    }

    pub fn trainer_config(&self) -> linphase::dynamics::TrainerConfig {
        linphase::dynamics::TrainerConfig {
            step_size: self.trainer.step_size,
            noise_temp: self.trainer.noise_temp,
            steps: self.trainer.steps,
            init_scale: self.trainer.init_scale,
            seed: self.trainer.seed.unwrap_or(0),
            sample_noise: self.trainer.sample_noise,
            record_every: self.trainer.record_every,
        }
    }
}

pub fn splitmix(seed: u64, salt: u64) -> u64 {
    let mut x = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
