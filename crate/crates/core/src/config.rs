//! TOML experiment configuration.
//!
//! ```toml
//! [model]
//! n = 1
//! A = [[1.2]]
//! B = [[1.0]]
//! Q = [[1.0]]
//! noise = { kind = "scaled_bg", scale = 4.0, delta = 2.0 }
//! init = { kind = "point", x = [0.0] }
//!
//! [scheme]
//! K = 2
//! g = "4/3"
//! p = 1
//! q_exp = 3
//! L = 9.0
//! delta0_exp = 0
//! beta = 3.95
//! eps = 0.95
//!
//! [run]
//! N_list = { start = 10, end = 1000, step = 2 }   # or a list, or N = 100
//! seeds = 1
//! seed = 1
//! stop_eps = 1e-4
//! settle_T = 10000
//! max_T = 50000000
//! burn_in = 0
//!
//! [output]
//! dir = "out"
//! trajectory_dump = false
//! ring_capacity = 0
//! ```

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InitSpec, Rational, SchemeParams, SystemModel};
use crate::noise::NoiseSpec;
use crate::sim::{StopRule, SweepConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Syntax(#[from] toml::de::Error),
    #[error("{key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("unknown preset {0:?} (expected reproduce-paper or smoke)")]
    UnknownPreset(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub scheme: SchemeConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub init: InitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Gaussian { covariance: Vec<Vec<f64>> },
    ScaledBg { scale: f64, delta: f64 },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    Point { x: Vec<f64> },
    Random { noise: NoiseConfig },
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig::Point { x: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    #[serde(rename = "K")]
    pub k: u32,
    pub g: Rational,
    pub p: u32,
    pub q_exp: u32,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(default)]
    pub delta0_exp: i32,
    pub beta: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NList {
    List(Vec<u32>),
    Range { start: u32, end: u32, step: u32 },
}

impl NList {
    pub fn values(&self) -> Vec<u32> {
        match self {
            NList::List(v) => v.clone(),
            NList::Range { start, end, step } => (*start..=*end).step_by((*step).max(1) as usize).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(rename = "N_list", default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<NList>,
    #[serde(default = "one")]
    pub seeds: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub stop_eps: f64,
    #[serde(rename = "settle_T", default = "default_settle")]
    pub settle_t: u64,
    #[serde(rename = "max_T", default = "default_max")]
    pub max_t: u64,
    #[serde(default)]
    pub burn_in: u64,
}

fn one() -> u32 {
    1
}
fn default_eps() -> f64 {
    StopRule::default().eps
}
fn default_settle() -> u64 {
    StopRule::default().settle
}
fn default_max() -> u64 {
    StopRule::default().max_steps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub trajectory_dump: bool,
    #[serde(default)]
    pub ring_capacity: usize,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            trajectory_dump: false,
            ring_capacity: 0,
        }
    }
}

pub const REPRODUCE_PAPER: &str = include_str!("../configs/reproduce-paper.toml");
pub const SMOKE: &str = include_str!("../configs/smoke.toml");

/// Everything a command needs, checked and converted to library types.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: SystemModel,
    /// Scheme with `N` set to the first entry of `n_list`.
    pub params: SchemeParams,
    pub n_list: Vec<u32>,
    pub seeds: u32,
    pub seed: u64,
    pub stop: StopRule,
    pub burn_in: u64,
    pub output: OutputConfig,
}

impl Experiment {
    pub fn sweep_config(&self, workers: usize) -> SweepConfig {
        SweepConfig {
            model: self.model.clone(),
            params: self.params,
            n_list: self.n_list.clone(),
            seeds: self.seeds,
            seed: self.seed,
            stop: self.stop,
            burn_in: self.burn_in,
            workers,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "reproduce-paper" => Self::parse(REPRODUCE_PAPER),
            "smoke" => Self::parse(SMOKE),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn n_values(&self) -> Result<Vec<u32>, ConfigError> {
        let v = match (&self.run.n, &self.run.n_list) {
            (Some(n), None) => vec![*n],
            (None, Some(list)) => list.values(),
            (Some(_), Some(_)) => return Err(invalid("run.N", "give either N or N_list, not both")),
            (None, None) => return Err(invalid("run.N_list", "one of N or N_list is required")),
        };
        if v.is_empty() {
            return Err(invalid("run.N_list", "no values"));
        }
        if let Some(bad) = v.iter().find(|&&n| n < 2 || n % 2 != 0) {
            return Err(invalid("run.N_list", format!("N = {bad} must be even and at least 2")));
        }
        Ok(v)
    }

    /// Checks structural constraints and builds the library types. Scheme
    /// inequalities against the plant are left to `validate_scheme`.
    pub fn build(&self) -> Result<Experiment, ConfigError> {
        let n = self.model.n;
        if n == 0 {
            return Err(invalid("model.n", "state dimension must be positive"));
        }
        let a = matrix("model.A", &self.model.a, n)?;
        let b = matrix("model.B", &self.model.b, n)?;
        let q = matrix("model.Q", &self.model.q, n)?;
        let noise = noise_spec("model.noise", &self.model.noise, n)?;
        let init = match &self.model.init {
            InitConfig::Point { x } if x.is_empty() => InitSpec::Point(vec![0.0; n]),
            InitConfig::Point { x } => {
                if x.len() != n {
                    return Err(invalid("model.init.x", format!("has {} entries, expected {n}", x.len())));
                }
                InitSpec::Point(x.clone())
            }
            InitConfig::Random { noise } => InitSpec::Random(noise_spec("model.init.noise", noise, n)?),
        };
        let model = SystemModel::new(a, b, q, noise, init).map_err(|e| invalid("model", e.to_string()))?;

        let s = &self.scheme;
        if s.k < 2 {
            return Err(invalid("scheme.K", "K must be at least 2"));
        }
        if !s.k.is_multiple_of(2) {
            return Err(invalid("scheme.K", "K must be even"));
        }
        if s.g.numer() <= s.g.denom() {
            return Err(invalid("scheme.g", "g must be greater than 1"));
        }
        if s.p == 0 {
            return Err(invalid("scheme.p", "p must be positive"));
        }
        if s.q_exp == 0 {
            return Err(invalid("scheme.q_exp", "q_exp must be positive"));
        }
        if !(s.l > 0.0 && s.l.is_finite()) {
            return Err(invalid("scheme.L", "L must be positive and finite"));
        }
        if !s.beta.is_finite() || !s.eps.is_finite() {
            return Err(invalid("scheme.beta", "beta and eps must be finite"));
        }
        let n_list = self.n_values()?;
        let params = SchemeParams {
            adaptive_bins: s.k,
            fixed_bins: n_list[0],
            zoom_base: s.g,
            contract_steps: s.p,
            expand_steps: s.q_exp,
            hold_threshold: s.l,
            initial_exponent: s.delta0_exp,
            moment_order: s.beta,
            moment_slack: s.eps,
        };

        let r = &self.run;
        if r.seeds == 0 {
            return Err(invalid("run.seeds", "must be positive"));
        }
        if !(r.stop_eps > 0.0) {
            return Err(invalid("run.stop_eps", "must be positive"));
        }
        if r.settle_t == 0 {
            return Err(invalid("run.settle_T", "must be positive"));
        }
        if r.max_t < r.settle_t {
            return Err(invalid("run.max_T", "must be at least settle_T"));
        }
        Ok(Experiment {
            model,
            params,
            n_list,
            seeds: r.seeds,
            seed: r.seed,
            stop: StopRule {
                eps: r.stop_eps,
                settle: r.settle_t,
                max_steps: r.max_t,
            },
            burn_in: r.burn_in,
            output: self.output.clone(),
        })
    }
}

fn matrix(key: &'static str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(key, format!("must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn noise_spec(key: &'static str, cfg: &NoiseConfig, n: usize) -> Result<NoiseSpec, ConfigError> {
    match cfg {
        NoiseConfig::Gaussian { covariance } => NoiseSpec::gaussian(matrix(key, covariance, n)?),
        NoiseConfig::ScaledBg { scale, delta } => NoiseSpec::scaled_bg(*scale, *delta, n),
        NoiseConfig::Zero => Ok(NoiseSpec::zero(n)),
    }
    .map_err(|e| invalid(key, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build() {
        let full = ExperimentConfig::preset("reproduce-paper").unwrap().build().unwrap();
        assert_eq!(full.n_list.len(), 496);
        assert_eq!((full.n_list[0], full.n_list[495]), (10, 1000));
        assert_eq!(full.params, SchemeParams::scalar_example(10));
        let smoke = ExperimentConfig::preset("smoke").unwrap().build().unwrap();
        assert_eq!(smoke.n_list, vec![4, 8]);
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn round_trip() {
        for text in [REPRODUCE_PAPER, SMOKE] {
            let cfg = ExperimentConfig::parse(text).unwrap();
            let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
            assert_eq!(cfg, again);
        }
    }

    #[test]
    fn odd_k_is_rejected() {
        let text = SMOKE.replace("K = 2", "K = 3");
        let err = ExperimentConfig::parse(&text).unwrap().build().unwrap_err();
        assert_eq!(err.to_string(), "scheme.K: K must be even");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SMOKE.replace("[scheme]", "[scheme]\nbogus = 1");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let text = SMOKE.replace("kind = \"scaled_bg\"", "kind = \"scaled_bg\", extra = 2");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn float_base_is_rejected() {
        let text = SMOKE.replace("g = \"4/3\"", "g = 1.3333");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn n_and_n_list_are_exclusive() {
        let text = SMOKE.replace("[run]", "[run]\nN = 100");
        let err = ExperimentConfig::parse(&text).unwrap().build().unwrap_err();
        assert!(err.to_string().starts_with("run.N:"), "{err}");
    }
}
