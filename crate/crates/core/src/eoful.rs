//! EOFUL: per-token optimistic decoding against a confidence ellipsoid,
//! followed by a ridge update on the embedding of the submitted sequence.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::LinearEnv;
use crate::error::{Error, Result};
use crate::hash::{hash_str, mix};
use crate::seq::{Token, TokenSeq, Vocab};
use crate::trace::{DetCheck, Round, RunTrace};
use crate::utility::{BaseModel, Query, SequenceUtility};

/// Condition-number estimate above which the maintained factor is rebuilt
/// from the Gram matrix.
pub const REFACTOR_CONDITION: f64 = 1e12;

/// `sigma^2 (2 + 4 d log(1 + t L / d) + 8 log(4 / delta))`.
pub fn beta_value(sigma: f64, d: usize, t: usize, l: usize, delta: f64) -> f64 {
    let d = d as f64;
    sigma * sigma * (2.0 + 4.0 * d * (1.0 + t as f64 * l as f64 / d).ln() + 8.0 * (4.0 / delta).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    /// One confidence level for the whole run.
    #[default]
    Global,
    /// `delta_t = 6 delta / (pi^2 t^2)`, which sums to `delta` over rounds.
    PerRound,
}

/// Learner state: `Sigma_t = lambda I + sum e_i e_i^T`, `theta_hat = Sigma_t^{-1} sum r_i e_i`.
#[derive(Clone, Debug)]
pub struct ConfidenceState {
    lambda: f64,
    delta: f64,
    sigma_noise: f64,
    depth: usize,
    t: usize,
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    sum_ry: DVector<f64>,
    theta_hat: DVector<f64>,
    schedule: BetaSchedule,
    refactors: usize,
}

/// Serializable snapshot `(Sigma, theta_hat, t, lambda, delta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    pub t: u64,
    pub lambda: f64,
    pub delta: f64,
    /// Row-major `d x d`.
    pub sigma: Vec<f64>,
    pub theta_hat: Vec<f64>,
}

impl Checkpoint {
    /// Little-endian layout: `d: u64, t: u64, lambda: f64, delta: f64`, then
    /// `d * d` entries of Sigma (row-major) and `d` entries of theta_hat, all
    /// 64-bit.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * (self.sigma.len() + self.theta_hat.len()));
        out.extend_from_slice(&(self.d as u64).to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&self.lambda.to_le_bytes());
        out.extend_from_slice(&self.delta.to_le_bytes());
        for x in self.sigma.iter().chain(&self.theta_hat) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * i..8 * i + 8)
                .map(|s| s.try_into().expect("slice of 8"))
                .ok_or_else(|| Error::InvalidParam("checkpoint truncated".into()))
        };
        let d = u64::from_le_bytes(word(0)?) as usize;
        let t = u64::from_le_bytes(word(1)?);
        let lambda = f64::from_le_bytes(word(2)?);
        let delta = f64::from_le_bytes(word(3)?);
        if bytes.len() != 8 * (4 + d * d + d) {
            return Err(Error::InvalidParam(format!("checkpoint length {} does not match d = {d}", bytes.len())));
        }
        let sigma = (0..d * d).map(|i| word(4 + i).map(f64::from_le_bytes)).collect::<Result<_>>()?;
        let theta_hat = (0..d).map(|i| word(4 + d * d + i).map(f64::from_le_bytes)).collect::<Result<_>>()?;
        Ok(Self { d, t, lambda, delta, sigma, theta_hat })
    }
}

impl ConfidenceState {
    pub fn new(d: usize, lambda: f64, delta: f64, sigma_noise: f64, depth: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParam("dimension must be positive".into()));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidParam(format!("lambda must be > 0, got {lambda}")));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidParam(format!("delta must be in (0, 1], got {delta}")));
        }
        let gram = DMatrix::identity(d, d) * lambda;
        let chol = Cholesky::new(gram.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            lambda,
            delta,
            sigma_noise,
            depth,
            t: 1,
            gram,
            chol,
            sum_ry: DVector::zeros(d),
            theta_hat: DVector::zeros(d),
            schedule: BetaSchedule::Global,
            refactors: 0,
        })
    }

    pub fn with_schedule(mut self, schedule: BetaSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn from_checkpoint(cp: &Checkpoint, sigma_noise: f64, depth: usize) -> Result<Self> {
        let mut s = Self::new(cp.d, cp.lambda, cp.delta, sigma_noise, depth)?;
        if cp.sigma.len() != cp.d * cp.d || cp.theta_hat.len() != cp.d {
            return Err(Error::DimensionMismatch { expected: cp.d * cp.d + cp.d, got: cp.sigma.len() + cp.theta_hat.len() });
        }
        s.gram = DMatrix::from_row_slice(cp.d, cp.d, &cp.sigma);
        s.chol = Cholesky::new(s.gram.clone()).ok_or(Error::NotPositiveDefinite)?;
        s.theta_hat = DVector::from_column_slice(&cp.theta_hat);
        s.sum_ry = &s.gram * &s.theta_hat;
        s.t = cp.t as usize;
        Ok(s)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let d = self.dim();
        let mut sigma = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                sigma.push(self.gram[(i, j)]);
            }
        }
        Checkpoint {
            d,
            t: self.t as u64,
            lambda: self.lambda,
            delta: self.delta,
            sigma,
            theta_hat: self.theta_hat.iter().copied().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    /// Current round index (1 before any update).
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn refactor_count(&self) -> usize {
        self.refactors
    }

    pub fn beta(&self) -> f64 {
        let delta = match self.schedule {
            BetaSchedule::Global => self.delta,
            BetaSchedule::PerRound => 6.0 * self.delta / (PI * PI * (self.t as f64).powi(2)),
        };
        beta_value(self.sigma_noise, self.dim(), self.t, self.depth, delta)
    }

    /// `|x|_{Sigma^{-1}}`.
    pub fn inv_norm(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let z = self.chol.l_dirty().solve_lower_triangular(x).ok_or(Error::NotPositiveDefinite)?;
        Ok(z.norm())
    }

    /// `|x|_{Sigma}`.
    pub fn gram_norm(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.gram * x)).max(0.0).sqrt()
    }

    /// `max_{theta in C_t} <theta, x> = <theta_hat, x> + sqrt(beta) |x|_{Sigma^{-1}}`;
    /// zero before the first update, when `C_1 = {0}`.
    pub fn ucb_score(&self, x: &DVector<f64>) -> Result<f64> {
        self.ucb_score_with_beta(x, self.beta())
    }

    pub fn ucb_score_with_beta(&self, x: &DVector<f64>, beta: f64) -> Result<f64> {
        if self.t == 1 {
            return Ok(0.0);
        }
        let mean = self.theta_hat.dot(x);
        if beta == 0.0 {
            return Ok(mean);
        }
        Ok(mean + beta.sqrt() * self.inv_norm(x)?)
    }

    /// `(theta - theta_hat)^T Sigma (theta - theta_hat)`.
    pub fn ellipsoid_distance(&self, theta: &DVector<f64>) -> f64 {
        let diff = theta - &self.theta_hat;
        diff.dot(&(&self.gram * &diff))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
    }

    /// Rank-one update with the embedding of the submitted sequence.
    pub fn update(&mut self, e: &DVector<f64>, reward: f64) -> Result<()> {
        if e.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: e.len() });
        }
        self.gram.ger(1.0, e, e, 1.0);
        self.chol.rank_one_update(e, 1.0);
        self.sum_ry.axpy(reward, e, 1.0);
        let diag = self.chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let cond = (hi / lo).powi(2);
        if !(cond.is_finite() && cond <= REFACTOR_CONDITION && lo > 0.0) {
            self.chol = Cholesky::new(self.gram.clone()).ok_or(Error::NotPositiveDefinite)?;
            self.refactors += 1;
        }
        self.theta_hat = self.chol.solve(&self.sum_ry);
        self.t += 1;
        Ok(())
    }

    /// Update from the environment's embedding of `chosen`.
    pub fn update_from(&mut self, env: &LinearEnv, q: Query, chosen: &[Token], reward: f64) -> Result<()> {
        if !chosen.contains(&env.vocab().eos()) {
            return Err(Error::Incomplete);
        }
        self.update(&env.embed(q, chosen), reward)
    }
}

/// Top-`k` token mask at the current prefix, ranked by base-model
/// probability (ties to the lower index). `None` keeps every token.
pub fn topk_mask(base: Option<&dyn BaseModel>, q: Query, prefix: &[Token], n: usize, topk: Option<usize>) -> Option<Vec<bool>> {
    let k = topk?;
    let base = base?;
    if k >= n {
        return None;
    }
    let lp = base.log_probs(q, prefix);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &idx[..k] {
        mask[i] = true;
    }
    Some(mask)
}

/// Per-token argmax decoding with an arbitrary candidate score: levels
/// `1..L-1` pick the best `y:tau` (lowest index on ties) among the allowed
/// tokens, stop on eos, and eos is forced at position `L`.
pub fn decode_per_token(
    vocab: Vocab,
    depth: usize,
    q: Query,
    base: Option<&dyn BaseModel>,
    topk: Option<usize>,
    mut score: impl FnMut(&[Token]) -> Result<f64>,
) -> Result<Vec<Token>> {
    let eos = vocab.eos();
    let mut y: Vec<Token> = Vec::with_capacity(depth);
    let mut cand: Vec<Token> = Vec::with_capacity(depth);
    while y.len() < depth - 1 {
        let mask = topk_mask(base, q, &y, vocab.n(), topk);
        let mut best: Option<(Token, f64)> = None;
        for tau in vocab.tokens() {
            if mask.as_ref().is_some_and(|m| !m[tau as usize]) {
                continue;
            }
            cand.clear();
            cand.extend_from_slice(&y);
            cand.push(tau);
            let s = score(&cand)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((tau, s));
            }
        }
        let (tau, _) = best.expect("top-k keeps at least one token");
        y.push(tau);
        if tau == eos {
            return Ok(y);
        }
    }
    y.push(eos);
    Ok(y)
}

/// EOFUL's read-only decoding step.
pub fn decode(state: &ConfidenceState, env: &LinearEnv, q: Query, topk: Option<usize>) -> Result<TokenSeq> {
    let beta = state.beta();
    let tokens = decode_per_token(env.vocab(), env.depth().get(), q, env.base().map(|b| b.as_ref()), topk, |c| {
        state.ucb_score_with_beta(&env.embed(q, c), beta)
    })?;
    TokenSeq::from_tokens(env.vocab(), tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EofulConfig {
    /// Defaults to `1 / T`.
    pub delta: Option<f64>,
    pub lambda: f64,
    pub topk: Option<usize>,
    pub schedule: BetaSchedule,
    /// Cap on `n^k` candidate blocks for lookahead decoding.
    pub block_cap: u128,
}

impl Default for EofulConfig {
    fn default() -> Self {
        Self { delta: None, lambda: 1.0, topk: None, schedule: BetaSchedule::Global, block_cap: 100_000 }
    }
}

/// Decision rule used inside the shared linear-environment loop.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearPolicy {
    /// Per-token EOFUL.
    Eoful,
    /// EOFUL decoding over `k`-token blocks.
    LookaheadEoful(usize),
    /// Greedy decoding against a fixed parameter, no learning.
    FixedTheta(DVector<f64>),
    /// `L - 1` uniform non-eos tokens followed by eos.
    Random,
}

/// Runs `horizon` rounds of decode, submit, observe and (for EOFUL) update.
pub fn run_linear(
    env: &LinearEnv,
    horizon: usize,
    policy: &LinearPolicy,
    cfg: &EofulConfig,
    seed: u64,
    algo: &str,
) -> Result<RunTrace> {
    if horizon == 0 {
        return Err(Error::InvalidParam("horizon must be >= 1".into()));
    }
    let vocab = env.vocab();
    let depth = env.depth().get();
    let delta = cfg.delta.unwrap_or(1.0 / horizon as f64);
    let mut state = ConfidenceState::new(env.dim(), cfg.lambda, delta, env.noise().sigma, depth)?.with_schedule(cfg.schedule);
    let log_det_initial = state.log_det();
    let mut log_potential = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, hash_str("run")));
    let mut trace = RunTrace::new(algo, seed);
    let base = env.base().map(|b| b.as_ref());
    let learning = matches!(policy, LinearPolicy::Eoful | LinearPolicy::LookaheadEoful(_));

    for t in 1..=horizon {
        let q = env.queries().draw(t, &mut rng);
        let beta = state.beta();
        let y = match policy {
            LinearPolicy::Eoful => {
                decode_per_token(vocab, depth, q, base, cfg.topk, |c| state.ucb_score_with_beta(&env.embed(q, c), beta))?
            }
            LinearPolicy::LookaheadEoful(k) => crate::lookahead::decode_blocks(vocab, depth, *k, cfg.block_cap, |c| {
                state.ucb_score_with_beta(&env.embed(q, c), beta)
            })?,
            LinearPolicy::FixedTheta(theta) => {
                decode_per_token(vocab, depth, q, base, cfg.topk, |c| Ok(theta.dot(&env.embed(q, c))))?
            }
            LinearPolicy::Random => random_sequence(vocab, depth, &mut rng),
        };
        let reward = env.sample_reward(q, &y, &mut rng)?;
        let utility = env.utility(q, &y);
        let mut round = Round::new(t, q, y, reward, utility);
        if learning {
            round.beta = Some(beta);
            round.covered = Some(state.ellipsoid_distance(env.theta()) <= beta);
            let e = env.embed(q, &round.seq);
            let full = state.gram_norm(&e);
            if full > 0.0 {
                let ratios: Vec<f64> =
                    (1..=round.seq.len()).map(|l| state.gram_norm(&env.embed(q, &round.seq[..l])) / full).collect();
                round.ratio_max = ratios.iter().copied().reduce(f64::max);
                round.ratio_mean = Some(ratios.iter().sum::<f64>() / ratios.len() as f64);
            }
            let w = state.inv_norm(&e)?;
            log_potential += (w * w).ln_1p();
            state.update(&e, reward)?;
        }
        trace.rounds.push(round);
    }

    if learning {
        let log_det_final = state.log_det();
        let d = env.dim() as f64;
        trace.det = Some(DetCheck {
            log_det_final,
            log_det_initial,
            log_potential,
            relative_residual: (1.0 - (log_det_initial + log_potential - log_det_final).exp()).abs(),
            log_det_bound: d * (1.0 + horizon as f64 / (d * cfg.lambda)).ln(),
        });
    }
    Ok(trace)
}

pub fn random_sequence<R: Rng + ?Sized>(vocab: Vocab, depth: usize, rng: &mut R) -> Vec<Token> {
    let non_eos: Vec<Token> = vocab.non_eos().collect();
    let mut y: Vec<Token> = (0..depth - 1).map(|_| non_eos[rng.random_range(0..non_eos.len())]).collect();
    y.push(vocab.eos());
    y
}

/// EOFUL with the default `delta = 1/T`, `lambda = 1`.
pub fn run_eoful(env: &LinearEnv, horizon: usize, cfg: &EofulConfig, seed: u64) -> Result<RunTrace> {
    run_linear(env, horizon, &LinearPolicy::Eoful, cfg, seed, "eoful")
}
