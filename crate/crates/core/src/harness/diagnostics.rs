//! White-box run diagnostics: level-k regrets after length equalization,
//! coverage, determinant bookkeeping and prefix-norm ratios.

use serde::{Deserialize, Serialize};

use crate::seq::Token;
use crate::trace::{DetCheck, RunTrace};
use crate::utility::SequenceUtility;

/// Flag set when level-k regrets are omitted because the optimum is not
/// certified by enumeration.
pub const FLAG_NO_LEVEL_REGRET: &str = "level_regret=unavailable";

/// Pads with eos up to length `l`.
pub fn equalize_length(seq: &[Token], eos: Token, l: usize) -> Vec<Token> {
    let mut v = seq.to_vec();
    v.resize(l.max(seq.len()), eos);
    v
}

/// `u(o^(1:k)) - u(y^(1:k))` for `k = 1..=L` with both sequences padded to
/// length `L`.
pub fn level_regrets<U: SequenceUtility + ?Sized>(u: &U, q: crate::Query, opt: &[Token], y: &[Token]) -> Vec<f64> {
    let l = u.depth().get();
    let eos = u.vocab().eos();
    let o = equalize_length(opt, eos, l);
    let y = equalize_length(y, eos, l);
    (1..=l).map(|k| u.utility(q, &o[..k]) - u.utility(q, &y[..k])).collect()
}

/// Levels `i + k` (`i` a multiple of `k`, level 0 has regret 0) whose regret
/// exceeds `|Reg^(i)| + tol`.
pub fn telescoping_violations(levels: &[f64], k: usize, tol: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = 0.0f64;
    let mut j = k;
    while j <= levels.len() {
        let cur = levels[j - 1];
        if cur > prev.abs() + tol {
            out.push(j);
        }
        prev = cur;
        j += k;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub algo: String,
    pub seed: u64,
    /// Per round, level-k regrets for `k = 1..=L`.
    pub level_regret: Option<Vec<Vec<f64>>>,
    pub coverage_rate: Option<f64>,
    pub det: Option<DetCheck>,
    /// Running maximum of the per-round maximal prefix ratio.
    pub ratio_running_max: Vec<Option<f64>>,
    pub flags: Vec<String>,
}

/// `optimum` returns the certified optimal sequence for a round's query, or
/// `None` when the environment is not enumerable.
pub fn diagnose<U: SequenceUtility + ?Sized>(
    trace: &RunTrace,
    u: &U,
    mut optimum: impl FnMut(crate::Query) -> Option<Vec<Token>>,
) -> DiagnosticsReport {
    let mut flags = Vec::new();
    let mut levels = Some(Vec::with_capacity(trace.rounds.len()));
    for r in &trace.rounds {
        match (optimum(r.query), levels.as_mut()) {
            (Some(o), Some(acc)) => acc.push(level_regrets(u, r.query, &o, &r.seq)),
            (None, Some(_)) => {
                levels = None;
                flags.push(FLAG_NO_LEVEL_REGRET.to_string());
            }
            _ => {}
        }
    }
    let mut running: Option<f64> = None;
    let ratio_running_max = trace
        .rounds
        .iter()
        .map(|r| {
            running = match (running, r.ratio_max) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
            running
        })
        .collect();
    DiagnosticsReport {
        algo: trace.algo.clone(),
        seed: trace.seed,
        level_regret: levels,
        coverage_rate: trace.coverage_rate(),
        det: trace.det,
        ratio_running_max,
        flags,
    }
}
