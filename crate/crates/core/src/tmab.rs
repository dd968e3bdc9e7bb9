//! Fixed-query environments and the level-wise explore-then-commit learner.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::affine::{AffineLevelRule, AffineUtility};
use crate::env::{ArmPerSequence, FixedUtilityEnv};
use crate::error::{Error, Result};
use crate::hash::{hash_str, mix};
use crate::noise::Noise;
use crate::seq::{canonical, DepthBound, Token, Vocab};
use crate::stats::Welford;
use crate::trace::{Round, RunTrace, FLAG_TRUNCATED};
use crate::utility::SequenceUtility;

/// `max(1, ceil(T^{2/3} (log T)^{1/3}))`.
pub fn default_exploration(horizon: usize) -> usize {
    let t = horizon as f64;
    ((t.powf(2.0 / 3.0) * t.ln().cbrt()).ceil() as usize).max(1)
}

/// Affine eos-identity utility as a fixed-query environment.
pub fn gen_affine_tmab_env(n: usize, l: usize, eps: f64, noise: Noise, seed: u64) -> Result<FixedUtilityEnv> {
    let depth = DepthBound::new(l)?;
    let rule = AffineLevelRule::generate(n, depth, eps, seed)?;
    Ok(FixedUtilityEnv::new(Arc::new(AffineUtility::new(rule, depth)), noise, "affine", true))
}

/// One independent arm per complete sequence.
pub fn gen_mab_env(n: usize, l: usize, noise: Noise, seed: u64) -> Result<FixedUtilityEnv> {
    let vocab = Vocab::with_trailing_eos(n)?;
    let depth = DepthBound::new(l)?;
    Ok(FixedUtilityEnv::new(Arc::new(ArmPerSequence::new(vocab, depth, seed)), noise, "mab", false))
}

/// Statistics gathered for one explored level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    /// Submitted candidates with their running reward averages.
    pub candidates: Vec<(Vec<Token>, Welford)>,
    /// Index into `candidates` of the committed one.
    pub chosen: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtcPhase {
    Exploring,
    Committed,
}

/// Learner state of a level-wise explore-then-commit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtcState {
    pub committed_prefix: Vec<Token>,
    pub phase: EtcPhase,
    pub levels: Vec<LevelStats>,
    pub n_samples: usize,
    pub rounds_used: usize,
    pub truncated: bool,
}

impl EtcState {
    pub fn new(n_samples: usize) -> Self {
        Self {
            committed_prefix: Vec::new(),
            phase: EtcPhase::Exploring,
            levels: Vec::new(),
            n_samples,
            rounds_used: 0,
            truncated: false,
        }
    }
}

pub(crate) fn submit(
    env: &FixedUtilityEnv,
    seq: &[Token],
    rng: &mut ChaCha8Rng,
    state: &mut EtcState,
    trace: &mut RunTrace,
) -> Result<f64> {
    let r = env.sample_reward(seq, rng)?;
    state.rounds_used += 1;
    let mut round = Round::new(state.rounds_used, FixedUtilityEnv::QUERY, seq.to_vec(), r, env.value(seq));
    if state.truncated {
        round.flags.push(FLAG_TRUNCATED.to_string());
    }
    trace.rounds.push(round);
    Ok(r)
}

pub(crate) fn run_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, hash_str("run")))
}

/// Finishes an ETC run by submitting the committed sequence until the
/// horizon.
pub(crate) fn exploit(
    env: &FixedUtilityEnv,
    horizon: usize,
    committed: Vec<Token>,
    rng: &mut ChaCha8Rng,
    mut state: EtcState,
    mut trace: RunTrace,
) -> Result<(RunTrace, EtcState)> {
    state.committed_prefix = committed.clone();
    state.phase = EtcPhase::Committed;
    while state.rounds_used < horizon {
        submit(env, &committed, rng, &mut state, &mut trace)?;
    }
    trace.committed = Some(committed);
    trace.truncated = state.truncated;
    Ok((trace, state))
}

/// GreedyETC with its learner state. At each level every token `tau` is
/// explored by submitting `y:tau:eos` for `N` rounds; the empirical argmax
/// (lowest index on ties) is appended. If the remaining budget cannot cover
/// a level, `y:eos` is committed and the run is flagged as truncated.
pub fn run_greedy_etc_with_state(
    env: &FixedUtilityEnv,
    horizon: usize,
    n_samples: Option<usize>,
    seed: u64,
) -> Result<(RunTrace, EtcState)> {
    if horizon == 0 {
        return Err(Error::InvalidParam("horizon must be >= 1".into()));
    }
    let n_samples = n_samples.unwrap_or_else(|| default_exploration(horizon));
    if n_samples == 0 {
        return Err(Error::InvalidParam("N must be >= 1".into()));
    }
    let vocab = env.vocab();
    let eos = vocab.eos();
    let l = env.depth().get();
    let mut rng = run_rng(seed);
    let mut trace = RunTrace::new("greedy_etc", seed);
    let mut state = EtcState::new(n_samples);
    let mut y: Vec<Token> = Vec::with_capacity(l);

    let committed = loop {
        if y.len() == l - 1 {
            y.push(eos);
            break y;
        }
        if horizon - state.rounds_used < vocab.n() * n_samples {
            state.truncated = true;
            y.push(eos);
            break y;
        }
        let mut level = LevelStats { candidates: Vec::with_capacity(vocab.n()), chosen: 0 };
        for tau in vocab.tokens() {
            let mut cand = y.clone();
            cand.push(tau);
            if tau != eos {
                cand.push(eos);
            }
            let mut mean = Welford::new();
            for _ in 0..n_samples {
                mean.push(submit(env, &cand, &mut rng, &mut state, &mut trace)?);
            }
            level.candidates.push((cand, mean));
        }
        let mut best = 0;
        for (i, (_, m)) in level.candidates.iter().enumerate() {
            if m.mean() > level.candidates[best].1.mean() {
                best = i;
            }
        }
        level.chosen = best;
        state.levels.push(level);
        let tau = best as Token;
        y.push(tau);
        state.committed_prefix = y.clone();
        if tau == eos {
            break y;
        }
    };
    exploit(env, horizon, canonical(&committed, eos).to_vec(), &mut rng, state, trace)
}

pub fn run_greedy_etc(env: &FixedUtilityEnv, horizon: usize, n_samples: Option<usize>, seed: u64) -> Result<RunTrace> {
    Ok(run_greedy_etc_with_state(env, horizon, n_samples, seed)?.0)
}

/// Gap bound `2 L sqrt(2 log T / N) + eps` on the committed utility.
pub fn etc_gap_bound(l: usize, horizon: usize, n_samples: usize, eps: f64) -> f64 {
    2.0 * l as f64 * (2.0 * (horizon as f64).ln() / n_samples as f64).sqrt() + eps
}
