//! Declarative experiment configuration (flat JSON object).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::decoding::DEFAULT_ENUM_CAP;
use crate::eoful::BetaSchedule;
use crate::error::{Error, Result};
use crate::noise::NoiseKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Eoful,
    GreedyEtc,
    KLookaheadEoful,
    KLookaheadEtc,
    WrongTheta,
    MisalignedGreedy,
    Random,
    OracleGreedy,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Eoful => "eoful",
            Algo::GreedyEtc => "greedy_etc",
            Algo::KLookaheadEoful => "k_lookahead_eoful",
            Algo::KLookaheadEtc => "k_lookahead_etc",
            Algo::WrongTheta => "wrong_theta",
            Algo::MisalignedGreedy => "misaligned_greedy",
            Algo::Random => "random",
            Algo::OracleGreedy => "oracle_greedy",
        }
    }

    /// Needs a linear (contextual) environment.
    pub fn is_linear(self) -> bool {
        matches!(self, Algo::Eoful | Algo::KLookaheadEoful | Algo::WrongTheta | Algo::MisalignedGreedy)
    }

    /// Needs a fixed-query environment.
    pub fn is_fixed(self) -> bool {
        matches!(self, Algo::GreedyEtc | Algo::KLookaheadEtc)
    }

    pub fn is_lookahead(self) -> bool {
        matches!(self, Algo::KLookaheadEoful | Algo::KLookaheadEtc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Affine,
    Needle,
    KDdmc,
    Mixture,
    Mab,
    Bts,
}

impl Family {
    pub fn has_linear(self) -> bool {
        matches!(self, Family::Affine | Family::Needle | Family::KDdmc | Family::Mixture)
    }

    pub fn has_fixed(self) -> bool {
        matches!(self, Family::Affine | Family::KDdmc | Family::Mab | Family::Bts)
    }
}

fn d_n() -> usize {
    4
}
fn d_l() -> usize {
    4
}
fn d_d() -> usize {
    8
}
fn d_sigma() -> f64 {
    0.1
}
fn d_one() -> f64 {
    1.0
}
fn d_gamma() -> f64 {
    0.8
}
fn d_k() -> usize {
    2
}
fn d_t() -> usize {
    1000
}
fn d_seeds() -> Vec<u64> {
    vec![0]
}
fn d_out() -> PathBuf {
    PathBuf::from("out")
}
fn d_queries() -> u32 {
    1000
}
fn d_w_scale() -> f64 {
    0.5
}
fn d_bound_scale() -> f64 {
    0.1
}
fn d_enum_cap() -> u128 {
    DEFAULT_ENUM_CAP
}
fn d_arity() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algos: Vec<Algo>,
    pub family: Family,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(rename = "L", default = "d_l")]
    pub l: usize,
    #[serde(default = "d_d")]
    pub d: usize,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub noise: NoiseKind,
    /// Defaults to `c_ssld / sqrt(T)`.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "d_one")]
    pub c_ssld: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_k", alias = "lookahead_k")]
    pub k: usize,
    #[serde(rename = "T", default = "d_t")]
    pub t: usize,
    #[serde(rename = "N", default)]
    pub n_samples: Option<usize>,
    /// Defaults to `1 / T`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "d_one")]
    pub lambda: f64,
    #[serde(default)]
    pub topk: Option<usize>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d_out")]
    pub out_path: PathBuf,
    #[serde(default = "d_queries")]
    pub queries: u32,
    #[serde(default = "d_w_scale")]
    pub w_scale: f64,
    #[serde(default)]
    pub theta_wrong: Option<Vec<f64>>,
    #[serde(default = "d_bound_scale")]
    pub bound_scale: f64,
    #[serde(default)]
    pub beta_schedule: BetaSchedule,
    #[serde(default = "d_enum_cap")]
    pub enum_cap: u128,
    /// Arity of random trees for the `bts` family.
    #[serde(default = "d_arity")]
    pub arity: usize,
    /// Tree JSON for the `bts` family; a random tree is drawn when absent.
    #[serde(default)]
    pub bts_file: Option<PathBuf>,
    /// Writes per-cell diagnostics JSON next to the CSVs.
    #[serde(default)]
    pub diagnostics: bool,
}

fn config_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), msg: msg.into() }
}

impl RunConfig {
    /// Parses and validates; schema errors carry the offending field path.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| config_err(".", format!("{}: {e}", path.display())))?;
        Self::from_json_str(&s)
    }

    pub fn eps(&self) -> f64 {
        self.eps.unwrap_or(self.c_ssld / (self.t as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.algos.is_empty() {
            return Err(config_err("algos", "at least one algorithm is required"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        if self.t == 0 {
            return Err(config_err("T", "horizon must be >= 1"));
        }
        if self.n < 2 {
            return Err(config_err("n", "vocabulary needs at least 2 tokens"));
        }
        if self.l < 2 {
            return Err(config_err("L", "depth must be >= 2"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(config_err("sigma", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(config_err("gamma", "must be in [0, 1]"));
        }
        if self.lambda <= 0.0 {
            return Err(config_err("lambda", "must be > 0"));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d <= 1.0) {
                return Err(config_err("delta", "must be in (0, 1]"));
            }
        }
        if self.topk == Some(0) {
            return Err(config_err("topk", "must be >= 1"));
        }
        if self.n_samples == Some(0) {
            return Err(config_err("N", "must be >= 1"));
        }
        if self.queries == 0 {
            return Err(config_err("queries", "must be >= 1"));
        }
        if self.algos.iter().any(|a| a.is_lookahead()) && (self.k == 0 || self.k > self.l) {
            return Err(config_err("k", "lookahead depth must be in [1, L]"));
        }
        for (i, a) in self.algos.iter().enumerate() {
            let path = format!("algos[{i}]");
            if a.is_linear() && !self.family.has_linear() {
                return Err(config_err(&path, format!("{} needs a linear family, got {:?}", a.name(), self.family)));
            }
            if a.is_fixed() && !self.family.has_fixed() {
                return Err(config_err(&path, format!("{} needs a fixed-query family, got {:?}", a.name(), self.family)));
            }
            if *a == Algo::MisalignedGreedy && self.family != Family::Mixture {
                return Err(config_err(&path, "misaligned_greedy needs a base-model component (family mixture)"));
            }
        }
        Ok(())
    }
}
