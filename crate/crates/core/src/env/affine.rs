//! Affine level-rule utilities.
//!
//! Live (eos-free) sequences are valued recursively,
//! `u(y:tau) = alpha[k][tau] * u(y) + b[k][tau]` where `k = |y| + 1`, starting
//! from `u([]) = w0`. Eos acts as the identity, `u(y:eos) = u(y)`, so the value
//! of a complete sequence is the value of its live prefix. Since every alpha
//! lies in `[0, 1]`, two same-length sequences that receive a common token get
//! their gap multiplied by alpha, which is DDMC with an exact contraction.

use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::embedding::embed_with_target;
use crate::env::{LinearEnv, QuerySource, DEFAULT_QUERY_POOL};
use crate::error::{Error, Result};
use crate::hash::mix;
use crate::noise::Noise;
use crate::seq::{DepthBound, Token, Vocab};
use crate::utility::{monotone_value, Query, SequenceUtility};

/// Center of generated utilities.
const CENTER: f64 = 0.5;

/// Per-level, per-token affine maps. `alpha[k][tau]`, `b[k][tau]` act on the
/// token appended at position `k + 1`; eos entries are always `(1, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLevelRule {
    pub vocab: Vocab,
    pub w0: f64,
    pub alpha: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub sld_eps: f64,
}

impl AffineLevelRule {
    /// Builds a rule from raw tables without range checks, so invalid rules
    /// can be constructed for negative tests. Eos entries are overwritten with
    /// the identity.
    pub fn new(vocab: Vocab, w0: f64, mut alpha: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>, sld_eps: f64) -> Result<Self> {
        if alpha.len() != b.len() {
            return Err(Error::InvalidParam("alpha and b must have the same number of levels".into()));
        }
        for (a, bb) in alpha.iter_mut().zip(b.iter_mut()) {
            if a.len() != vocab.n() || bb.len() != vocab.n() {
                return Err(Error::DimensionMismatch { expected: vocab.n(), got: a.len().min(bb.len()) });
            }
            a[vocab.eos() as usize] = 1.0;
            bb[vocab.eos() as usize] = 0.0;
        }
        Ok(Self { vocab, w0, alpha, b, sld_eps })
    }

    /// Random rule on `L - 1` levels with single-level deviation at most
    /// `eps`.
    ///
    /// Each map has the form `f(w) = c + s + alpha (w - c)` with
    /// `|s| <= eps / 4` and `alpha in [1 - 1/(2L), 1]`. Values then stay within
    /// `(L - 1) eps / 4` of `c`, so `|f(w) - w| < eps / 2` and any two
    /// candidates at one level (eos included) differ by at most `eps`. One
    /// non-eos token per level is "safe" (`alpha = 1`, `s >= 0`): it never
    /// lowers the value, so stopping early is never strictly better than
    /// continuing.
    pub fn generate(n: usize, depth: DepthBound, eps: f64, seed: u64) -> Result<Self> {
        let l = depth.get();
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParam(format!("eps must be finite and >= 0, got {eps}")));
        }
        if eps * (l as f64 + 1.0) / 4.0 > 0.45 {
            return Err(Error::InvalidParam(format!(
                "eps = {eps} too large for L = {l}: need eps * (L + 1) / 4 <= 0.45 to keep utilities in (0, 1)"
            )));
        }
        let vocab = Vocab::with_trailing_eos(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xAFF1));
        let lf = l as f64;
        let quarter = eps / 4.0;
        let mut alpha = Vec::with_capacity(l - 1);
        let mut b = Vec::with_capacity(l - 1);
        for _ in 0..l - 1 {
            let safe = rng.random_range(0..(n - 1)) as Token;
            let mut a_row = vec![1.0; n];
            let mut b_row = vec![0.0; n];
            for tau in vocab.non_eos() {
                let (a, s) = if tau == safe {
                    (1.0, if quarter > 0.0 { rng.random_range(0.0..=quarter) } else { 0.0 })
                } else {
                    let a = rng.random_range((1.0 - 1.0 / (2.0 * lf))..=(1.0 - 1.0 / (8.0 * lf)));
                    let s = if quarter > 0.0 { rng.random_range(-quarter..=quarter) } else { 0.0 };
                    (a, s)
                };
                a_row[tau as usize] = a;
                b_row[tau as usize] = CENTER * (1.0 - a) + s;
            }
            alpha.push(a_row);
            b.push(b_row);
        }
        Self::new(vocab, CENTER, alpha, b, eps)
    }

    pub fn levels(&self) -> usize {
        self.alpha.len()
    }

    /// Level-1 values `u([tau])`, with `u([eos]) = w0`.
    pub fn u1(&self) -> Vec<f64> {
        (0..self.vocab.n()).map(|t| self.alpha[0][t] * self.w0 + self.b[0][t]).collect()
    }

    /// True when every alpha lies in `[0, 1]`.
    pub fn is_contraction(&self) -> bool {
        self.alpha.iter().flatten().all(|a| (0.0..=1.0).contains(a))
    }

    /// Value of an eos-free sequence. Positions past the stored levels use
    /// the identity map.
    pub fn live_value(&self, tokens: &[Token]) -> f64 {
        let mut w = self.w0;
        for (k, &t) in tokens.iter().enumerate() {
            if let (Some(a), Some(b)) = (self.alpha.get(k), self.b.get(k)) {
                w = a[t as usize] * w + b[t as usize];
            }
        }
        w
    }

    /// Value of a canonical sequence: trailing eos is dropped.
    pub fn canonical_value(&self, canon: &[Token]) -> f64 {
        match canon.last() {
            Some(&t) if t == self.vocab.eos() => self.live_value(&canon[..canon.len() - 1]),
            _ => self.live_value(canon),
        }
    }
}

/// Query-independent utility induced by an [`AffineLevelRule`], wrapped so
/// that trailing eos is free and post-eos tokens halve the value.
#[derive(Debug, Clone)]
pub struct AffineUtility {
    rule: AffineLevelRule,
    depth: DepthBound,
}

impl AffineUtility {
    pub fn new(rule: AffineLevelRule, depth: DepthBound) -> Self {
        Self { rule, depth }
    }

    pub fn rule(&self) -> &AffineLevelRule {
        &self.rule
    }
}

impl SequenceUtility for AffineUtility {
    fn vocab(&self) -> Vocab {
        self.rule.vocab
    }
    fn depth(&self) -> DepthBound {
        self.depth
    }
    fn utility(&self, _q: Query, tokens: &[Token]) -> f64 {
        monotone_value(tokens, self.rule.vocab.eos(), |c| self.rule.canonical_value(c))
    }
    fn query_invariant(&self) -> bool {
        true
    }
}

/// Random unit vector in `R^d`.
pub fn random_unit_theta(d: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x7E7A));
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Affine-DDMC linear environment with the default orthogonal scale (0.5),
/// no noise and a uniform pool of 1000 queries.
pub fn gen_affine_ddmc_env(n: usize, l: usize, d: usize, eps: f64, seed: u64) -> Result<LinearEnv> {
    gen_affine_ddmc_env_with(n, l, d, eps, seed, 0.5)
}

pub fn gen_affine_ddmc_env_with(n: usize, l: usize, d: usize, eps: f64, seed: u64, w_scale: f64) -> Result<LinearEnv> {
    if d < 2 {
        return Err(Error::InvalidParam(format!("embedding dimension d = {d}, need d >= 2")));
    }
    let depth = DepthBound::new(l)?;
    let rule = AffineLevelRule::generate(n, depth, eps, seed)?;
    let vocab = rule.vocab;
    let utility: Arc<dyn SequenceUtility> = Arc::new(AffineUtility::new(rule, depth));
    let theta = random_unit_theta(d, seed);
    let emb = embed_with_target(utility, theta.clone(), 1.0, w_scale, mix(seed, 0xE3B))?;
    Ok(LinearEnv::new(
        vocab,
        depth,
        theta,
        Arc::new(emb),
        Noise::none(),
        QuerySource::Uniform { pool: DEFAULT_QUERY_POOL },
    )?
    .with_query_invariant(true)
    .with_family("affine"))
}
