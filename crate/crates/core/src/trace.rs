//! Per-round run logs, the per-query optimum benchmark, and regret series.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::decoding::{brute_force_opt_supported, greedy_decode, PrefixScoring};
use crate::error::{Error, Result};
use crate::seq::Token;
use crate::utility::{Query, SequenceUtility};

/// Flag attached to rounds whose optimum comes from the greedy reference.
pub const FLAG_GREEDY_REFERENCE: &str = "opt=greedy_reference";
/// Flag attached to rounds after a truncated exploration phase.
pub const FLAG_TRUNCATED: &str = "truncated";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub t: usize,
    pub query: Query,
    pub seq: Vec<Token>,
    pub reward: f64,
    /// Expected utility of the submitted sequence.
    pub utility: f64,
    pub opt_value: Option<f64>,
    pub beta: Option<f64>,
    pub ratio_max: Option<f64>,
    pub ratio_mean: Option<f64>,
    /// Whether the true parameter lay in the confidence ellipsoid used this
    /// round.
    pub covered: Option<bool>,
    pub flags: Vec<String>,
}

impl Round {
    pub fn new(t: usize, query: Query, seq: Vec<Token>, reward: f64, utility: f64) -> Self {
        Self {
            t,
            query,
            seq,
            reward,
            utility,
            opt_value: None,
            beta: None,
            ratio_max: None,
            ratio_mean: None,
            covered: None,
            flags: Vec::new(),
        }
    }
}

/// Determinant bookkeeping for a run of a ridge learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetCheck {
    pub log_det_final: f64,
    pub log_det_initial: f64,
    /// `sum_t log(1 + w_t^2)` with `w_t = |e_t|_{Sigma_t^{-1}}`.
    pub log_potential: f64,
    /// `|det(Sigma_T) - det(Sigma_1) prod(1 + w_t^2)| / det(Sigma_T)`.
    pub relative_residual: f64,
    /// `d log(1 + T / (d lambda))`.
    pub log_det_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub algo: String,
    pub seed: u64,
    pub rounds: Vec<Round>,
    /// Final committed sequence for explore-then-commit learners.
    pub committed: Option<Vec<Token>>,
    pub truncated: bool,
    pub det: Option<DetCheck>,
}

impl RunTrace {
    pub fn new(algo: &str, seed: u64) -> Self {
        Self { algo: algo.to_string(), seed, rounds: Vec::new(), committed: None, truncated: false, det: None }
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn ratio_max(&self) -> Option<f64> {
        self.rounds.iter().filter_map(|r| r.ratio_max).reduce(f64::max)
    }

    pub fn coverage_rate(&self) -> Option<f64> {
        let flags: Vec<bool> = self.rounds.iter().filter_map(|r| r.covered).collect();
        if flags.is_empty() {
            None
        } else {
            Some(flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64)
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.rounds.iter().map(|r| r.reward).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    /// Exhaustive search; the optimum is certified.
    Exact,
    /// Greedy decoding on the true utility.
    GreedyReference,
}

/// Per-query optimum with caching.
pub struct Benchmark<'a> {
    utility: &'a dyn SequenceUtility,
    kind: BenchmarkKind,
    cap: u128,
    scoring: PrefixScoring,
    reference: Option<Box<ReferenceDecoder<'a>>>,
    cache: HashMap<Query, (Vec<Token>, f64)>,
}

/// Decoder used in place of plain greedy when the optimum is not enumerable.
pub type ReferenceDecoder<'a> = dyn Fn(Query) -> Result<Vec<Token>> + 'a;

impl<'a> Benchmark<'a> {
    /// Exact when the (support-restricted) enumeration fits under `cap`,
    /// otherwise greedy with the given prefix scoring.
    pub fn new(utility: &'a dyn SequenceUtility, cap: u128, scoring: PrefixScoring) -> Self {
        let kind = match brute_force_opt_supported(utility, Query(0), cap) {
            Ok(_) => BenchmarkKind::Exact,
            Err(_) => BenchmarkKind::GreedyReference,
        };
        Self { utility, kind, cap, scoring, reference: None, cache: HashMap::new() }
    }

    /// Replaces the greedy reference decoder, e.g. to apply the same top-k
    /// restriction as the baselines.
    pub fn with_reference(mut self, reference: impl Fn(Query) -> Result<Vec<Token>> + 'a) -> Self {
        self.reference = Some(Box::new(reference));
        self
    }

    pub fn kind(&self) -> BenchmarkKind {
        self.kind
    }

    pub fn optimum(&mut self, q: Query) -> Result<(Vec<Token>, f64)> {
        let key = if self.utility.query_invariant() { Query(0) } else { q };
        if let Some(v) = self.cache.get(&key) {
            return Ok(v.clone());
        }
        let v = match self.kind {
            BenchmarkKind::Exact => {
                let (s, v) = brute_force_opt_supported(self.utility, key, self.cap)?;
                (s.into_tokens(), v)
            }
            BenchmarkKind::GreedyReference => {
                let s = match &self.reference {
                    Some(f) => f(key)?,
                    None => greedy_decode(self.utility, key, self.scoring).0.into_tokens(),
                };
                let v = self.utility.utility(key, &s);
                (s, v)
            }
        };
        self.cache.insert(key, v.clone());
        Ok(v)
    }

    /// Fills `opt_value` on every round, flagging greedy references.
    pub fn attach(&mut self, trace: &mut RunTrace) -> Result<()> {
        for r in &mut trace.rounds {
            let (_, v) = self.optimum(r.query)?;
            r.opt_value = Some(v);
            if self.kind == BenchmarkKind::GreedyReference && !r.flags.iter().any(|f| f == FLAG_GREEDY_REFERENCE) {
                r.flags.push(FLAG_GREEDY_REFERENCE.to_string());
            }
        }
        Ok(())
    }
}

/// Per-round and cumulative regret `u(opt) - u(submitted)`.
pub fn regret_of_trace(trace: &RunTrace) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut inst = Vec::with_capacity(trace.rounds.len());
    let mut cum = Vec::with_capacity(trace.rounds.len());
    let mut total = 0.0;
    for r in &trace.rounds {
        let opt = r.opt_value.ok_or_else(|| Error::NoOptimum(format!("round {} has no optimum attached", r.t)))?;
        let x = opt - r.utility;
        total += x;
        inst.push(x);
        cum.push(total);
    }
    Ok((inst, cum))
}

/// Final cumulative regret.
pub fn total_regret(trace: &RunTrace) -> Result<f64> {
    Ok(regret_of_trace(trace)?.1.last().copied().unwrap_or(0.0))
}
