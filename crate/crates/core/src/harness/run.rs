//! Environment construction, per-cell runs and experiment fan-out.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algo, Family, RunConfig};
use super::csv::{bound_csv, bound_series, trace_csv};
use super::diagnostics::{diagnose, DiagnosticsReport};
use crate::align::{gen_mixture_env, misaligned_theta};
use crate::bts::{bts_to_tmab, random_bts, BtsInstance};
use crate::decoding::{greedy_decode, PrefixScoring};
use crate::env::affine::gen_affine_ddmc_env_with;
use crate::env::{gen_needle_env, FixedUtilityEnv, LinearEnv, QuerySource};
use crate::eoful::{decode_per_token, random_sequence, run_linear, EofulConfig, LinearPolicy};
use crate::error::{Error, Result};
use crate::lookahead::{gen_k_ddmc_env, gen_k_ddmc_tmab_env, run_k_lookahead_eoful, run_k_lookahead_etc_with_state};
use crate::noise::Noise;
use crate::tmab::{gen_affine_tmab_env, gen_mab_env, run_greedy_etc_with_state, run_rng, submit, EtcState};
use crate::trace::{regret_of_trace, Benchmark, BenchmarkKind, RunTrace};
use crate::utility::SequenceUtility;

/// Which environment class a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvClass {
    /// Contextual linear environment with embeddings.
    Linear,
    /// Fixed-query environment with a utility oracle.
    Fixed,
}

impl EnvClass {
    /// Fixed when any explore-then-commit learner is present, otherwise
    /// linear when the family has a linear form.
    pub fn infer(cfg: &RunConfig) -> Self {
        if cfg.algos.iter().any(|a| a.is_fixed()) || !cfg.family.has_linear() {
            EnvClass::Fixed
        } else {
            EnvClass::Linear
        }
    }

    pub fn check(self, cfg: &RunConfig) -> Result<()> {
        let supported = match self {
            EnvClass::Linear => cfg.family.has_linear(),
            EnvClass::Fixed => cfg.family.has_fixed(),
        };
        if !supported {
            return Err(Error::Config { path: "family".into(), msg: format!("{:?} has no {self:?} form", cfg.family) });
        }
        for (i, a) in cfg.algos.iter().enumerate() {
            let bad = match self {
                EnvClass::Linear => a.is_fixed(),
                EnvClass::Fixed => a.is_linear(),
            };
            if bad {
                return Err(Error::Config {
                    path: format!("algos[{i}]"),
                    msg: format!("{} cannot run on a {self:?} environment", a.name()),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum BuiltEnv {
    Linear(LinearEnv),
    Fixed(FixedUtilityEnv),
}

impl BuiltEnv {
    pub fn utility(&self) -> &dyn SequenceUtility {
        match self {
            BuiltEnv::Linear(e) => e,
            BuiltEnv::Fixed(e) => e,
        }
    }
}

fn load_bts(cfg: &RunConfig, seed: u64) -> Result<BtsInstance> {
    match &cfg.bts_file {
        Some(p) => BtsInstance::from_json(&fs::read_to_string(p)?),
        None => random_bts(cfg.arity, cfg.l - 1, seed),
    }
}

/// Builds the instance for one seed. Every algorithm sharing a seed sees the
/// same instance.
pub fn build_env(cfg: &RunConfig, class: EnvClass, seed: u64) -> Result<BuiltEnv> {
    let noise = Noise::new(cfg.noise, cfg.sigma)?;
    let queries = QuerySource::Uniform { pool: cfg.queries };
    let eps = cfg.eps();
    Ok(match class {
        EnvClass::Linear => BuiltEnv::Linear(
            match cfg.family {
                Family::Affine => gen_affine_ddmc_env_with(cfg.n, cfg.l, cfg.d, eps, seed, cfg.w_scale)?.with_queries(queries),
                Family::Needle => gen_needle_env(cfg.l, cfg.t, eps, seed)?,
                Family::KDdmc => gen_k_ddmc_env(cfg.n, cfg.l, cfg.d, cfg.k, seed)?,
                Family::Mixture => gen_mixture_env(cfg.n, cfg.l, cfg.d, cfg.gamma, seed)?.with_queries(queries),
                Family::Mab | Family::Bts => unreachable!("checked by EnvClass::check"),
            }
            .with_noise(noise),
        ),
        EnvClass::Fixed => BuiltEnv::Fixed(match cfg.family {
            Family::Affine => gen_affine_tmab_env(cfg.n, cfg.l, eps, noise, seed)?,
            Family::KDdmc => gen_k_ddmc_tmab_env(cfg.n, cfg.l, cfg.k, noise, seed)?,
            Family::Mab => gen_mab_env(cfg.n, cfg.l, noise, seed)?,
            Family::Bts => bts_to_tmab(&load_bts(cfg, seed)?)?.with_noise(noise),
            Family::Needle | Family::Mixture => unreachable!("checked by EnvClass::check"),
        }),
    })
}

fn eoful_config(cfg: &RunConfig) -> EofulConfig {
    EofulConfig {
        delta: cfg.delta,
        lambda: cfg.lambda,
        topk: cfg.topk,
        schedule: cfg.beta_schedule,
        ..EofulConfig::default()
    }
}

/// Parameter used by the wrong-theta baseline.
pub fn wrong_theta(cfg: &RunConfig, env: &LinearEnv) -> Result<DVector<f64>> {
    match &cfg.theta_wrong {
        Some(v) if v.len() != env.dim() => Err(Error::Config {
            path: "theta_wrong".into(),
            msg: format!("expected {} entries, got {}", env.dim(), v.len()),
        }),
        Some(v) => Ok(DVector::from_vec(v.clone())),
        None if cfg.family == Family::Mixture => Ok(DVector::from_element(env.dim(), -0.5)),
        None => Ok(-env.theta()),
    }
}

fn run_linear_algo(cfg: &RunConfig, env: &LinearEnv, algo: Algo, seed: u64) -> Result<RunTrace> {
    let ecfg = eoful_config(cfg);
    let fixed = |theta: DVector<f64>| run_linear(env, cfg.t, &LinearPolicy::FixedTheta(theta), &ecfg, seed, algo.name());
    match algo {
        Algo::Eoful => run_linear(env, cfg.t, &LinearPolicy::Eoful, &ecfg, seed, algo.name()),
        Algo::KLookaheadEoful => run_k_lookahead_eoful(env, cfg.t, cfg.k, &ecfg, seed),
        Algo::WrongTheta => fixed(wrong_theta(cfg, env)?),
        Algo::MisalignedGreedy => {
            if env.base().is_none() {
                return Err(Error::InvalidParam("misaligned_greedy needs a base-model component".into()));
            }
            fixed(misaligned_theta(env.dim() - 1))
        }
        Algo::Random => run_linear(env, cfg.t, &LinearPolicy::Random, &ecfg, seed, algo.name()),
        Algo::OracleGreedy => fixed(env.theta().clone()),
        Algo::GreedyEtc | Algo::KLookaheadEtc => unreachable!("checked by EnvClass::check"),
    }
}

fn repeat_submissions(
    env: &FixedUtilityEnv,
    horizon: usize,
    seed: u64,
    algo: Algo,
    mut pick: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> Vec<crate::Token>,
) -> Result<RunTrace> {
    let mut rng = run_rng(seed);
    let mut trace = RunTrace::new(algo.name(), seed);
    let mut state = EtcState::new(1);
    for _ in 0..horizon {
        let y = pick(&mut rng);
        submit(env, &y, &mut rng, &mut state, &mut trace)?;
    }
    Ok(trace)
}

fn run_fixed_algo(cfg: &RunConfig, env: &FixedUtilityEnv, algo: Algo, seed: u64) -> Result<RunTrace> {
    match algo {
        Algo::GreedyEtc => Ok(run_greedy_etc_with_state(env, cfg.t, cfg.n_samples, seed)?.0),
        Algo::KLookaheadEtc => {
            Ok(run_k_lookahead_etc_with_state(env, cfg.t, cfg.k, cfg.n_samples, EofulConfig::default().block_cap, seed)?.0)
        }
        Algo::Random => {
            let (vocab, depth) = (env.vocab(), env.depth().get());
            repeat_submissions(env, cfg.t, seed, algo, |rng| random_sequence(vocab, depth, rng))
        }
        Algo::OracleGreedy => {
            let y = greedy_decode(env, FixedUtilityEnv::QUERY, PrefixScoring::EosTerminated).0.into_tokens();
            repeat_submissions(env, cfg.t, seed, algo, |_| y.clone())
        }
        _ => unreachable!("checked by EnvClass::check"),
    }
}

/// Result of one `(algo, seed)` cell.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub trace: RunTrace,
    pub benchmark: BenchmarkKind,
    pub env_dim: Option<usize>,
    pub diagnostics: Option<DiagnosticsReport>,
}

impl CellOutput {
    pub fn cumulative_regret(&self) -> Result<Vec<f64>> {
        Ok(regret_of_trace(&self.trace)?.1)
    }

    pub fn final_regret(&self) -> Result<f64> {
        Ok(self.cumulative_regret()?.last().copied().unwrap_or(0.0))
    }
}

/// Runs one cell and attaches the per-round optimum.
pub fn run_cell(cfg: &RunConfig, class: EnvClass, algo: Algo, seed: u64) -> Result<CellOutput> {
    let env = build_env(cfg, class, seed)?;
    let mut trace = match &env {
        BuiltEnv::Linear(e) => run_linear_algo(cfg, e, algo, seed)?,
        BuiltEnv::Fixed(e) => run_fixed_algo(cfg, e, algo, seed)?,
    };
    let scoring = match class {
        EnvClass::Linear => PrefixScoring::Raw,
        EnvClass::Fixed => PrefixScoring::EosTerminated,
    };
    let u = env.utility();
    let mut bench = Benchmark::new(u, cfg.enum_cap, scoring);
    if let BuiltEnv::Linear(e) = &env {
        // Same decoder as `oracle_greedy`, including the top-k restriction.
        let base = e.base().map(|b| b.as_ref());
        let (vocab, depth, theta) = (e.vocab(), e.depth().get(), e.theta());
        bench = bench.with_reference(move |q| {
            decode_per_token(vocab, depth, q, base, cfg.topk, |c| Ok(theta.dot(&e.embed(q, c))))
        });
    }
    bench.attach(&mut trace)?;
    let kind = bench.kind();
    let diagnostics = cfg.diagnostics.then(|| {
        diagnose(&trace, u, |q| match kind {
            BenchmarkKind::Exact => bench.optimum(q).ok().map(|(s, _)| s),
            BenchmarkKind::GreedyReference => None,
        })
    });
    let env_dim = match &env {
        BuiltEnv::Linear(e) => Some(e.dim()),
        BuiltEnv::Fixed(_) => None,
    };
    Ok(CellOutput { trace, benchmark: kind, env_dim, diagnostics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub algo: String,
    pub seed: u64,
    pub csv: String,
    pub rounds: usize,
    pub final_cum_regret: f64,
    pub total_reward: f64,
    pub benchmark: BenchmarkKind,
    pub truncated: bool,
    pub committed: Option<Vec<crate::Token>>,
    pub coverage_rate: Option<f64>,
    pub ratio_max: Option<f64>,
    pub det_relative_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoSummary {
    pub seeds: usize,
    pub mean_final_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub seed: u64,
    pub csv: String,
    /// Measured ratio constant `c`.
    pub c: f64,
    pub scale: f64,
    pub final_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: RunConfig,
    pub env_class: EnvClass,
    pub cells: Vec<CellSummary>,
    pub per_algo: BTreeMap<String, AlgoSummary>,
    pub bounds: Vec<BoundSummary>,
}

pub fn cell_csv_name(algo: Algo, seed: u64) -> String {
    format!("{}_seed{seed}.csv", algo.name())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Runs every `(algo, seed)` cell in parallel and writes one CSV per cell,
/// a bound CSV per seed when EOFUL runs, and `summary.json`.
pub fn run_experiment(cfg: &RunConfig, class: Option<EnvClass>) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let class = class.unwrap_or_else(|| EnvClass::infer(cfg));
    class.check(cfg)?;
    let out: PathBuf = cfg.out_path.clone();
    fs::create_dir_all(&out)?;

    let cells: Vec<(Algo, u64)> = cfg.algos.iter().flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let outputs: Vec<(Algo, CellOutput)> = cells
        .par_iter()
        .map(|&(algo, seed)| {
            let cell = run_cell(cfg, class, algo, seed)?;
            write(&out.join(cell_csv_name(algo, seed)), &trace_csv(&cell.trace))?;
            if let Some(d) = &cell.diagnostics {
                write(&out.join(format!("{}_seed{seed}.diag.json", algo.name())), &serde_json::to_string(d)?)?;
            }
            Ok((algo, cell))
        })
        .collect::<Result<_>>()?;

    let mut summaries = Vec::with_capacity(outputs.len());
    let mut per_algo: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    let mut bounds = Vec::new();
    for (algo, cell) in &outputs {
        let tr = &cell.trace;
        let final_regret = cell.final_regret()?;
        let acc = per_algo.entry(algo.name().to_string()).or_default();
        acc.0 += 1;
        acc.1 += final_regret;
        summaries.push(CellSummary {
            algo: tr.algo.clone(),
            seed: tr.seed,
            csv: cell_csv_name(*algo, tr.seed),
            rounds: tr.len(),
            final_cum_regret: final_regret,
            total_reward: tr.total_reward(),
            benchmark: cell.benchmark,
            truncated: tr.truncated,
            committed: tr.committed.clone(),
            coverage_rate: tr.coverage_rate(),
            ratio_max: tr.ratio_max(),
            det_relative_residual: tr.det.map(|d| d.relative_residual),
        });
        if *algo == Algo::Eoful {
            let c = tr.ratio_max().unwrap_or(1.0);
            let d = cell.env_dim.unwrap_or(cfg.d);
            let series = bound_series(cfg.t, cfg.bound_scale, c, cfg.l, d);
            let csv = format!("bound_seed{}.csv", tr.seed);
            write(&out.join(&csv), &bound_csv(&series))?;
            bounds.push(BoundSummary {
                seed: tr.seed,
                csv,
                c,
                scale: cfg.bound_scale,
                final_bound: series.last().copied().unwrap_or(0.0),
            });
        }
    }
    let summary = ExperimentSummary {
        config: cfg.clone(),
        env_class: class,
        cells: summaries,
        per_algo: per_algo
            .into_iter()
            .map(|(k, (n, s))| (k, AlgoSummary { seeds: n, mean_final_regret: s / n as f64 }))
            .collect(),
        bounds,
    };
    write(&out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}
