//! k-lookahead decoding: EOFUL and explore-then-commit over length-k token
//! blocks, and an instance family that is k-DDMC but not 1-DDMC.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assumptions::{check_ddmc, CheckMode, DEFAULT_PAIR_CAP, DEFAULT_TOL};
use crate::decoding::{brute_force_opt, greedy_decode, PrefixScoring, DEFAULT_ENUM_CAP};
use crate::env::affine::random_unit_theta;
use crate::env::{embed_with_target, FixedUtilityEnv, LinearEnv, QuerySource, DEFAULT_QUERY_POOL};
use crate::eoful::{run_linear, EofulConfig, LinearPolicy};
use crate::error::{Error, Result};
use crate::hash::mix;
use crate::noise::Noise;
use crate::seq::{canonical, for_each_block, DepthBound, Token, Vocab};
use crate::stats::Welford;
use crate::tmab::{default_exploration, exploit, run_rng, submit, EtcState, LevelStats};
use crate::trace::RunTrace;
use crate::utility::{monotone_value, Query, SequenceUtility};

/// Default cap on `n^k` candidate blocks per decoding step.
pub const DEFAULT_BLOCK_CAP: u128 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LookaheadConfig {
    pub k: usize,
    pub cap: u128,
}

impl LookaheadConfig {
    pub fn new(k: usize, vocab: Vocab, depth: DepthBound, cap: u128) -> Result<Self> {
        if k == 0 || k > depth.get() {
            return Err(Error::InvalidParam(format!("lookahead k = {k} must be in [1, L]")));
        }
        block_count(vocab.n(), k, cap)?;
        Ok(Self { k, cap })
    }
}

fn block_count(n: usize, k: usize, cap: u128) -> Result<u128> {
    let needed = (n as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if needed > cap {
        return Err(Error::CapExceeded { needed, cap });
    }
    Ok(needed)
}

/// Distinct canonical forms of `prefix:b` (plus `suffix`) over all blocks `b`
/// of length `k`, in first-occurrence order.
fn block_candidates(vocab: Vocab, prefix: &[Token], k: usize, suffix: &[Token]) -> Vec<Vec<Token>> {
    let eos = vocab.eos();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut buf = Vec::with_capacity(prefix.len() + k + suffix.len());
    for_each_block(vocab, k, |b| {
        buf.clear();
        buf.extend_from_slice(prefix);
        buf.extend_from_slice(b);
        buf.extend_from_slice(suffix);
        let c = canonical(&buf, eos);
        if seen.insert(c.to_vec()) {
            out.push(c.to_vec());
        }
    });
    out
}

/// Block-wise argmax decoding. Each step scores the canonical form of every
/// `y:b` with `|b| = min(k, L - |y|)` and keeps the best (first on ties);
/// candidates that are still incomplete at length `L` are skipped, so eos is
/// forced at position `L`. Decoding stops once the sequence is complete.
pub fn decode_blocks(
    vocab: Vocab,
    depth: usize,
    k: usize,
    cap: u128,
    mut score: impl FnMut(&[Token]) -> Result<f64>,
) -> Result<Vec<Token>> {
    if k == 0 {
        return Err(Error::InvalidParam("lookahead k must be >= 1".into()));
    }
    let eos = vocab.eos();
    let mut y: Vec<Token> = Vec::new();
    while y.last() != Some(&eos) {
        let kk = k.min(depth - y.len());
        block_count(vocab.n(), kk, cap)?;
        let cands: Vec<Vec<Token>> = block_candidates(vocab, &y, kk, &[])
            .into_iter()
            .filter(|c| c.last() == Some(&eos) || c.len() < depth)
            .collect();
        if cands.len() == 1 {
            y = cands.into_iter().next().expect("one candidate");
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in cands.iter().enumerate() {
            let s = score(c)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, _) = best.expect("at least one candidate");
        y = cands[i].clone();
    }
    Ok(y)
}

/// EOFUL with k-token lookahead blocks.
pub fn run_k_lookahead_eoful(env: &LinearEnv, horizon: usize, k: usize, cfg: &EofulConfig, seed: u64) -> Result<RunTrace> {
    LookaheadConfig::new(k, env.vocab(), env.depth(), cfg.block_cap)?;
    run_linear(env, horizon, &LinearPolicy::LookaheadEoful(k), cfg, seed, "k_lookahead_eoful")
}

/// Explore-then-commit over blocks: each step submits `y:z:eos` for every
/// block `z` of length `min(k, L - 1 - |y|)` (`N` times per distinct
/// canonical candidate), commits the best block and stops once the
/// committed block contains eos. Truncates like GreedyETC.
pub fn run_k_lookahead_etc_with_state(
    env: &FixedUtilityEnv,
    horizon: usize,
    k: usize,
    n_samples: Option<usize>,
    cap: u128,
    seed: u64,
) -> Result<(RunTrace, EtcState)> {
    if horizon == 0 {
        return Err(Error::InvalidParam("horizon must be >= 1".into()));
    }
    LookaheadConfig::new(k, env.vocab(), env.depth(), cap)?;
    let n_samples = n_samples.unwrap_or_else(|| default_exploration(horizon));
    if n_samples == 0 {
        return Err(Error::InvalidParam("N must be >= 1".into()));
    }
    let vocab = env.vocab();
    let eos = vocab.eos();
    let l = env.depth().get();
    let mut rng = run_rng(seed);
    let mut trace = RunTrace::new("k_lookahead_etc", seed);
    let mut state = EtcState::new(n_samples);
    let mut y: Vec<Token> = Vec::new();

    let committed = loop {
        if y.len() == l - 1 {
            y.push(eos);
            break y;
        }
        let kk = k.min(l - 1 - y.len());
        let cands = block_candidates(vocab, &y, kk, &[eos]);
        if horizon - state.rounds_used < cands.len() * n_samples {
            state.truncated = true;
            y.push(eos);
            break y;
        }
        let mut level = LevelStats { candidates: Vec::with_capacity(cands.len()), chosen: 0 };
        for cand in cands {
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
        let chosen = level.candidates[best].0.clone();
        state.levels.push(level);
        // Blocks without eos come back as `y:z:eos`; drop that trailing eos.
        if chosen.len() <= y.len() + kk {
            state.committed_prefix = chosen.clone();
            break chosen;
        }
        y = chosen[..y.len() + kk].to_vec();
        state.committed_prefix = y.clone();
    };
    exploit(env, horizon, canonical(&committed, eos).to_vec(), &mut rng, state, trace)
}

pub fn run_k_lookahead_etc(env: &FixedUtilityEnv, horizon: usize, k: usize, n_samples: Option<usize>, seed: u64) -> Result<RunTrace> {
    Ok(run_k_lookahead_etc_with_state(env, horizon, k, n_samples, DEFAULT_BLOCK_CAP, seed)?.0)
}

/// Utility that contracts over whole blocks of `k` tokens but amplifies
/// gaps inside a block.
///
/// A block-aligned live prefix `Y` has value `V(Y)`, with
/// `V(Y:B) = c + s_B + alpha_B (V(Y) - c)` and every `V` inside an interval
/// of width `R`. A live sequence `Y:p` ending in a partial block `p` has
/// value `mu V(Y) + c_p` with `mu > 1` and offsets `c_p` separated by at
/// least `2.2 mu R` across distinct `p` of equal length. Completing at a
/// block boundary keeps `V(Y)`; completing mid-block is worth 0.
#[derive(Debug, Clone)]
pub struct KDdmcUtility {
    vocab: Vocab,
    depth: DepthBound,
    k: usize,
    mu: f64,
    v0: f64,
    center: f64,
    offset_step: f64,
    /// `rank[i][tau]`: offset digit of token `tau` at block position `i`.
    rank: Vec<Vec<u32>>,
    /// `(alpha, s)` per block, indexed by the base-`m` block number.
    blocks: Vec<(f64, f64)>,
}

impl KDdmcUtility {
    pub fn generate(n: usize, depth: DepthBound, k: usize, seed: u64) -> Result<Self> {
        if k < 2 || k > depth.get() {
            return Err(Error::InvalidParam(format!("block length k = {k} must be in [2, L]")));
        }
        let vocab = Vocab::with_trailing_eos(n)?;
        let m = n - 1;
        if m < 2 {
            return Err(Error::InvalidParam("need at least two non-eos tokens".into()));
        }
        let nblocks = block_count(m, k, DEFAULT_ENUM_CAP)? as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xB10C));
        let mu = rng.random_range(1.5..2.0);
        let spread = (m as f64).powi(k as i32 - 1) - 1.0;
        let r = 0.9 / (mu * (3.0 + 2.2 * spread));
        let v0 = 2.0 * r;
        let center = v0 + r / 2.0;
        let rank: Vec<Vec<u32>> = (0..k)
            .map(|_| {
                let mut p: Vec<u32> = (0..m as u32).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let trap = rank[0].iter().position(|&x| x == 0).expect("rank 0 present") as Token;
        let lure = rank[0].iter().position(|&x| x as usize == m - 1).expect("top rank present") as Token;
        let best_tail: Vec<Token> = (1..k).map(|_| rng.random_range(0..m as Token)).collect();
        let mut blocks = Vec::with_capacity(nblocks);
        for idx in 0..nblocks {
            let b = block_digits(idx, m, k);
            let alpha = rng.random_range(0.5..0.9);
            let half = (1.0 - alpha) * r / 2.0;
            let s = if b[0] == trap && b[1..] == best_tail[..] {
                half
            } else if b[0] == lure {
                -half
            } else {
                half * rng.random_range(-1.0..0.6)
            };
            blocks.push((alpha, s));
        }
        Ok(Self { vocab, depth, k, mu, v0, center, offset_step: 2.2 * mu * r, rank, blocks })
    }

    pub fn block_len(&self) -> usize {
        self.k
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn block_index(&self, b: &[Token]) -> usize {
        let m = self.vocab.n() - 1;
        b.iter().rev().fold(0, |acc, &t| acc * m + t as usize)
    }

    fn aligned_value(&self, tokens: &[Token]) -> f64 {
        tokens.chunks_exact(self.k).fold(self.v0, |v, b| {
            let (alpha, s) = self.blocks[self.block_index(b)];
            self.center + s + alpha * (v - self.center)
        })
    }

    fn offset(&self, partial: &[Token]) -> f64 {
        let m = self.vocab.n() as f64 - 1.0;
        partial.iter().enumerate().map(|(i, &t)| m.powi(i as i32) * self.rank[i][t as usize] as f64).sum::<f64>()
            * self.offset_step
    }

    /// Value of an eos-free sequence.
    pub fn live_value(&self, tokens: &[Token]) -> f64 {
        let cut = tokens.len() - tokens.len() % self.k;
        let v = self.aligned_value(&tokens[..cut]);
        if cut == tokens.len() {
            v
        } else {
            self.mu * v + self.offset(&tokens[cut..])
        }
    }

    fn canonical_value(&self, c: &[Token]) -> f64 {
        match c.split_last() {
            Some((&last, live)) if last == self.vocab.eos() => {
                if live.len() % self.k == 0 {
                    self.aligned_value(live)
                } else {
                    0.0
                }
            }
            _ => self.live_value(c),
        }
    }
}

fn block_digits(mut idx: usize, m: usize, k: usize) -> Vec<Token> {
    (0..k)
        .map(|_| {
            let d = (idx % m) as Token;
            idx /= m;
            d
        })
        .collect()
}

impl SequenceUtility for KDdmcUtility {
    fn vocab(&self) -> Vocab {
        self.vocab
    }
    fn depth(&self) -> DepthBound {
        self.depth
    }
    fn utility(&self, _q: Query, tokens: &[Token]) -> f64 {
        monotone_value(tokens, self.vocab.eos(), |c| self.canonical_value(c))
    }
    fn query_invariant(&self) -> bool {
        true
    }
}

/// Enumeration certificate for a generated block instance.
fn separates(u: &KDdmcUtility) -> Result<bool> {
    let q = Query(0);
    let k = u.block_len();
    let mode = CheckMode::Exhaustive { cap: DEFAULT_PAIR_CAP };
    if !check_ddmc(u, q, k, mode, DEFAULT_TOL)?.passed || check_ddmc(u, q, 1, mode, DEFAULT_TOL)?.passed {
        return Ok(false);
    }
    let (_, opt) = brute_force_opt(u, q, DEFAULT_ENUM_CAP)?;
    for scoring in [PrefixScoring::Raw, PrefixScoring::EosTerminated] {
        let (g, _) = greedy_decode(u, q, scoring);
        if u.utility(q, g.tokens()) >= opt - 1e-9 {
            return Ok(false);
        }
    }
    let y = decode_blocks(u.vocab(), u.depth().get(), k, DEFAULT_BLOCK_CAP, |c| Ok(u.utility(q, c)))?;
    Ok(u.utility(q, &y) >= opt - 1e-12)
}

/// Block utility whose separation properties are confirmed by enumeration
/// (k-DDMC holds, 1-DDMC fails, greedy is suboptimal under both prefix
/// scorings, k-lookahead decoding is optimal). Instances too large to
/// enumerate are returned unverified.
pub fn gen_k_ddmc_utility(n: usize, l: usize, k: usize, seed: u64) -> Result<KDdmcUtility> {
    let depth = DepthBound::new(l)?;
    if k < 2 || k >= l {
        return Err(Error::InvalidParam(format!("block length k = {k} must satisfy 2 <= k < L")));
    }
    for attempt in 0..64u64 {
        let u = KDdmcUtility::generate(n, depth, k, mix(seed, attempt))?;
        match separates(&u) {
            Ok(true) | Err(Error::CapExceeded { .. }) => return Ok(u),
            Ok(false) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::InvalidParam(format!("no separating block instance found for n = {n}, L = {l}, k = {k}")))
}

/// Linear environment over [`gen_k_ddmc_utility`].
pub fn gen_k_ddmc_env(n: usize, l: usize, d: usize, k: usize, seed: u64) -> Result<LinearEnv> {
    if d < 2 {
        return Err(Error::InvalidParam(format!("embedding dimension d = {d}, need d >= 2")));
    }
    let u = gen_k_ddmc_utility(n, l, k, seed)?;
    let vocab = u.vocab();
    let depth = u.depth();
    let utility: Arc<dyn SequenceUtility> = Arc::new(u);
    let theta = random_unit_theta(d, seed);
    let emb = embed_with_target(utility, theta.clone(), 1.0, 0.5, mix(seed, 0xE3B))?;
    Ok(LinearEnv::new(vocab, depth, theta, Arc::new(emb), Noise::none(), QuerySource::Uniform { pool: DEFAULT_QUERY_POOL })?
        .with_query_invariant(true)
        .with_family("k_ddmc"))
}

/// Fixed-query environment over [`gen_k_ddmc_utility`].
pub fn gen_k_ddmc_tmab_env(n: usize, l: usize, k: usize, noise: Noise, seed: u64) -> Result<FixedUtilityEnv> {
    Ok(FixedUtilityEnv::new(Arc::new(gen_k_ddmc_utility(n, l, k, seed)?), noise, "k_ddmc", false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assumptions::check_monotone;
    use crate::env::affine::gen_affine_ddmc_env;
    use crate::eoful::{decode_per_token, run_eoful};
    use crate::noise::NoiseKind;
    use crate::seq::for_each_complete;
    use crate::tmab::{gen_affine_tmab_env, run_greedy_etc};

    fn hashed_score(c: &[Token]) -> Result<f64> {
        Ok(crate::hash::unit(crate::hash::hash_tokens(17, c)))
    }

    #[test]
    fn k1_block_decode_matches_per_token_decode() {
        let v = Vocab::with_trailing_eos(4).unwrap();
        for l in 2..6 {
            let a = decode_blocks(v, l, 1, DEFAULT_BLOCK_CAP, hashed_score).unwrap();
            let b = decode_per_token(v, l, Query(0), None, None, hashed_score).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn full_lookahead_is_the_global_argmax() {
        let v = Vocab::with_trailing_eos(3).unwrap();
        let l = 4;
        let y = decode_blocks(v, l, l, DEFAULT_BLOCK_CAP, hashed_score).unwrap();
        let mut best: Option<(Vec<Token>, f64)> = None;
        for_each_complete(v, l, |s| {
            let x = hashed_score(s).unwrap();
            if best.as_ref().is_none_or(|(_, b)| x > *b) {
                best = Some((s.to_vec(), x));
            }
        });
        assert_eq!(y, best.unwrap().0);
    }

    #[test]
    fn early_eos_inside_a_block_ends_the_sequence() {
        let v = Vocab::with_trailing_eos(3).unwrap();
        let y = decode_blocks(v, 6, 3, DEFAULT_BLOCK_CAP, |c| Ok(if c == [1, 2] { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(y, vec![1, 2]);
    }

    #[test]
    fn block_cap_is_enforced() {
        let v = Vocab::with_trailing_eos(10).unwrap();
        assert!(matches!(decode_blocks(v, 8, 6, 1000, hashed_score), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn k1_lookahead_eoful_bit_matches_eoful() {
        let env = gen_affine_ddmc_env(3, 4, 5, 0.1, 3).unwrap().with_noise(Noise::new(NoiseKind::Uniform, 0.2).unwrap());
        let cfg = EofulConfig::default();
        let a = run_eoful(&env, 150, &cfg, 11).unwrap();
        let b = run_k_lookahead_eoful(&env, 150, 1, &cfg, 11).unwrap();
        assert_eq!(a.rounds, b.rounds);
    }

    #[test]
    fn k1_lookahead_etc_bit_matches_greedy_etc() {
        for seed in 0..5 {
            let env = gen_affine_tmab_env(3, 4, 0.1, Noise::new(NoiseKind::Uniform, 0.3).unwrap(), seed).unwrap();
            let a = run_greedy_etc(&env, 1500, Some(20), seed).unwrap();
            let b = run_k_lookahead_etc(&env, 1500, 1, Some(20), seed).unwrap();
            assert_eq!(a.rounds, b.rounds);
            assert_eq!(a.committed, b.committed);
        }
    }

    #[test]
    fn etc_budget_respects_block_bound() {
        let env = gen_affine_tmab_env(3, 5, 0.1, Noise::new(NoiseKind::Uniform, 0.1).unwrap(), 1).unwrap();
        let (_, st) = run_k_lookahead_etc_with_state(&env, 10_000, 2, Some(5), DEFAULT_BLOCK_CAP, 2).unwrap();
        let explored: usize = st.levels.iter().map(|l| l.candidates.len() * 5).sum();
        assert!(explored <= 9 * 5usize.div_ceil(2) * 5);
    }

    #[test]
    fn generated_instances_separate() {
        for seed in 0..5 {
            let u = gen_k_ddmc_utility(3, 4, 2, seed).unwrap();
            let mode = CheckMode::Exhaustive { cap: DEFAULT_PAIR_CAP };
            assert!(check_ddmc(&u, Query(0), 2, mode, DEFAULT_TOL).unwrap().passed);
            let one = check_ddmc(&u, Query(0), 1, mode, DEFAULT_TOL).unwrap();
            assert!(!one.passed && one.witness.is_some());
            assert!(check_monotone(&u, Query(0), mode, DEFAULT_TOL).unwrap().passed);
            let (_, opt) = brute_force_opt(&u, Query(0), DEFAULT_ENUM_CAP).unwrap();
            let (g, _) = greedy_decode(&u, Query(0), PrefixScoring::EosTerminated);
            assert!(u.utility(Query(0), g.tokens()) < opt);
        }
    }

    #[test]
    fn longer_instances_separate() {
        let u = gen_k_ddmc_utility(4, 6, 2, 7).unwrap();
        let mode = CheckMode::Exhaustive { cap: DEFAULT_PAIR_CAP };
        assert!(check_ddmc(&u, Query(0), 2, mode, DEFAULT_TOL).unwrap().passed);
        assert!(!check_ddmc(&u, Query(0), 1, mode, DEFAULT_TOL).unwrap().passed);
    }

    #[test]
    fn noiseless_block_etc_beats_greedy_etc() {
        for seed in 0..10 {
            let env = gen_k_ddmc_tmab_env(3, 4, 2, Noise::none(), seed).unwrap();
            let a = run_greedy_etc(&env, 200, Some(1), seed).unwrap();
            let b = run_k_lookahead_etc(&env, 200, 2, Some(1), seed).unwrap();
            assert!(env.value(&b.committed.unwrap()) >= env.value(&a.committed.unwrap()));
        }
    }

    #[test]
    fn invalid_k_rejected() {
        assert!(gen_k_ddmc_utility(3, 4, 1, 0).is_err());
        assert!(gen_k_ddmc_env(3, 4, 1, 2, 0).is_err());
    }
}
