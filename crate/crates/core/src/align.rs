//! Alignment reduction: a frozen base model's value `v(p(x, y))` mixed with a
//! latent linear utility becomes a linear environment in one more dimension.

use std::sync::{Arc, Mutex};

use nalgebra::DVector;

use crate::env::{LinearEnv, QuerySource, DEFAULT_QUERY_POOL};
use crate::error::{Error, Result};
use crate::hash::{hash_tokens, mix, signed_unit};
use crate::noise::Noise;
use crate::seq::{canonical, DepthBound, Token, Vocab};
use crate::utility::{monotone_scale, monotone_value, BaseModel, Embedding, Query};

/// Scalar value of a sequence under the base model.
pub trait ValueOracle: Send + Sync {
    fn value(&self, q: Query, tokens: &[Token]) -> f64;
}

/// Seeded autoregressive table standing in for a frozen language model.
/// Logits are `a * s` with `s` uniform in `[-1, 1)`, hashed from the seed,
/// the query, the prefix and the candidate token.
#[derive(Debug)]
pub struct SyntheticLlm {
    vocab: Vocab,
    depth: DepthBound,
    scale: f64,
    seed: u64,
    cache: Mutex<PrefixSums>,
}

/// Running log-prob sums along the most recently scored path, so scoring
/// `y:tau` for every `tau` costs one step each.
#[derive(Debug, Default)]
struct PrefixSums {
    query: Option<Query>,
    path: Vec<Token>,
    /// `cum[i]` is the log-prob of `path[..i]`.
    cum: Vec<f64>,
}

impl Clone for SyntheticLlm {
    fn clone(&self) -> Self {
        Self { vocab: self.vocab, depth: self.depth, scale: self.scale, seed: self.seed, cache: Mutex::default() }
    }
}

impl SyntheticLlm {
    pub fn new(vocab: Vocab, depth: DepthBound, scale: f64, seed: u64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParam(format!("logit scale must be finite and >= 0, got {scale}")));
        }
        Ok(Self { vocab, depth, scale, seed, cache: Mutex::default() })
    }

    fn logits(&self, q: Query, prefix: &[Token]) -> Vec<f64> {
        let h = hash_tokens(mix(self.seed, q.0 as u64), prefix);
        self.vocab.tokens().map(|t| self.scale * signed_unit(mix(h, t as u64))).collect()
    }

    /// Lower bound on any single-token log-probability magnitude:
    /// `|log p| <= 2a + ln n`.
    pub fn log_prob_bound(&self) -> f64 {
        2.0 * self.scale + (self.vocab.n() as f64).ln()
    }

    /// `sum_i log p(y_i | x, y_{<i})` over the canonical form.
    pub fn sequence_log_prob(&self, q: Query, tokens: &[Token]) -> f64 {
        let c = canonical(tokens, self.vocab.eos());
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if cache.query != Some(q) || cache.cum.is_empty() {
            *cache = PrefixSums { query: Some(q), path: Vec::new(), cum: vec![0.0] };
        }
        let common = cache.path.iter().zip(c).take_while(|(a, b)| a == b).count();
        cache.path.truncate(common);
        cache.cum.truncate(common + 1);
        for i in common..c.len() {
            let lp = self.log_probs(q, &c[..i])[c[i] as usize];
            let next = cache.cum[i] + lp;
            cache.cum.push(next);
            cache.path.push(c[i]);
        }
        cache.cum[c.len()]
    }
}

impl BaseModel for SyntheticLlm {
    fn log_probs(&self, q: Query, prefix: &[Token]) -> Vec<f64> {
        let z = self.logits(q, prefix);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        z.into_iter().map(|x| x - lse).collect()
    }
}

/// `v = 1 + sum log p / (L (2a + ln n))`, in `[0, 1]` for `|y| <= L`, with
/// the post-eos penalty applied.
impl ValueOracle for SyntheticLlm {
    fn value(&self, q: Query, tokens: &[Token]) -> f64 {
        monotone_value(tokens, self.vocab.eos(), |c| {
            1.0 + self.sequence_log_prob(q, c) / (self.depth.get() as f64 * self.log_prob_bound())
        })
    }
}

/// Latent embedding `e(y) = (top / L) sum_i s(x, i, y_i)` with hashed signed
/// coordinates `s` in `[-1, 1)` and `top = min(2/d, 1/sqrt d)`, so that
/// `|e| <= 1` for `|y| <= L`. Each token adds its own term, so per-token
/// greedy sees the latent reward of its choice directly.
#[derive(Debug, Clone)]
pub struct PooledEmbedding {
    d: usize,
    depth: DepthBound,
    eos: Token,
    seed: u64,
}

impl PooledEmbedding {
    pub fn new(d: usize, depth: DepthBound, eos: Token, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParam("embedding dimension must be >= 1".into()));
        }
        Ok(Self { d, depth, eos, seed })
    }
}

impl Embedding for PooledEmbedding {
    fn dim(&self) -> usize {
        self.d
    }
    fn embed(&self, q: Query, tokens: &[Token]) -> DVector<f64> {
        let w = (2.0 / self.d as f64).min(1.0 / (self.d as f64).sqrt()) / self.depth.get() as f64;
        let mut e = DVector::zeros(self.d);
        let hq = mix(self.seed, q.0 as u64);
        for (pos, &t) in canonical(tokens, self.eos).iter().enumerate().take(self.depth.get()) {
            let ht = mix(mix(hq, pos as u64), t as u64);
            for i in 0..self.d {
                e[i] += w * signed_unit(mix(ht, i as u64));
            }
        }
        e * monotone_scale(tokens, self.eos)
    }
}

/// Feature `[e(x, y) : v(p(x, y))]`.
pub struct AlignEmbedding {
    latent: Arc<dyn Embedding>,
    value: Arc<dyn ValueOracle>,
}

impl AlignEmbedding {
    pub fn new(latent: Arc<dyn Embedding>, value: Arc<dyn ValueOracle>) -> Self {
        Self { latent, value }
    }
}

impl Embedding for AlignEmbedding {
    fn dim(&self) -> usize {
        self.latent.dim() + 1
    }
    fn embed(&self, q: Query, tokens: &[Token]) -> DVector<f64> {
        let e = self.latent.embed(q, tokens);
        let d = e.len();
        let mut out = e.resize_vertically(d + 1, 0.0);
        out[d] = self.value.value(q, tokens);
        out
    }
}

/// `theta' = [(1 - gamma) theta : gamma]`.
pub fn theta_prime(theta: &DVector<f64>, gamma: f64) -> DVector<f64> {
    let d = theta.len();
    let mut out = (theta * (1.0 - gamma)).resize_vertically(d + 1, 0.0);
    out[d] = gamma;
    out
}

/// Parameter that scores by the base-model value alone.
pub fn misaligned_theta(d: usize) -> DVector<f64> {
    let mut t = DVector::zeros(d + 1);
    t[d] = 1.0;
    t
}

/// Builds the `(d + 1)`-dimensional environment with feature `[e : v]` and
/// parameter `[(1 - gamma) theta : gamma]`, whose utility is
/// `gamma v + (1 - gamma) <theta, e>`.
pub fn align_reduce(
    vocab: Vocab,
    depth: DepthBound,
    value: Arc<dyn ValueOracle>,
    latent: Arc<dyn Embedding>,
    gamma: f64,
    theta: &DVector<f64>,
) -> Result<LinearEnv> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParam(format!("gamma must be in [0, 1], got {gamma}")));
    }
    if latent.dim() != theta.len() {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: latent.dim() });
    }
    LinearEnv::new(
        vocab,
        depth,
        theta_prime(theta, gamma),
        Arc::new(AlignEmbedding::new(latent, value)),
        Noise::none(),
        QuerySource::Uniform { pool: DEFAULT_QUERY_POOL },
    )
}

pub const DEFAULT_LOGIT_SCALE: f64 = 2.0;

/// Mixture environment over a synthetic base model with `theta = 0.5 * 1`.
pub fn gen_mixture_env(n: usize, l: usize, d: usize, gamma: f64, seed: u64) -> Result<LinearEnv> {
    let vocab = Vocab::with_trailing_eos(n)?;
    let depth = DepthBound::new(l)?;
    let llm = Arc::new(SyntheticLlm::new(vocab, depth, DEFAULT_LOGIT_SCALE, mix(seed, 0x11A))?);
    let latent = Arc::new(PooledEmbedding::new(d, depth, vocab.eos(), mix(seed, 0xE3A))?);
    let theta = DVector::from_element(d, 0.5);
    Ok(align_reduce(vocab, depth, llm.clone(), latent, gamma, &theta)?.with_base(llm).with_family("mixture"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::{greedy_decode, PrefixScoring};
    use crate::utility::SequenceUtility;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn theta_prime_example() {
        let t = theta_prime(&DVector::from_vec(vec![0.5, 0.5]), 0.8);
        assert!((t[0] - 0.1).abs() < 1e-15 && (t[1] - 0.1).abs() < 1e-15 && t[2] == 0.8);
    }

    #[test]
    fn endpoints() {
        let vocab = Vocab::with_trailing_eos(4).unwrap();
        let depth = DepthBound::new(4).unwrap();
        let llm = Arc::new(SyntheticLlm::new(vocab, depth, 2.0, 1).unwrap());
        let lat = Arc::new(PooledEmbedding::new(3, depth, 3, 2).unwrap());
        let theta = DVector::from_element(3, 0.5);
        let e0 = align_reduce(vocab, depth, llm.clone(), lat.clone(), 0.0, &theta).unwrap();
        let e1 = align_reduce(vocab, depth, llm.clone(), lat.clone(), 1.0, &theta).unwrap();
        for y in [vec![0, 1, 3], vec![3], vec![2, 2, 2, 3]] {
            let q = Query(5);
            assert!((e0.utility(q, &y) - theta.dot(&lat.embed(q, &y))).abs() < 1e-15);
            assert!((e1.utility(q, &y) - llm.value(q, &y)).abs() < 1e-15);
        }
    }

    #[test]
    fn log_probs_normalize_and_value_is_bounded() {
        let vocab = Vocab::with_trailing_eos(6).unwrap();
        let depth = DepthBound::new(5).unwrap();
        let llm = SyntheticLlm::new(vocab, depth, 3.0, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let len = rng.random_range(0..5);
            let mut y: Vec<Token> = (0..len).map(|_| rng.random_range(0..5)).collect();
            let lp = llm.log_probs(Query(3), &y);
            let total: f64 = lp.iter().map(|x| x.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(lp.iter().all(|&x| x >= -llm.log_prob_bound() - 1e-12));
            y.push(5);
            let v = llm.value(Query(3), &y);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn cached_log_prob_matches_a_fresh_sum() {
        let vocab = Vocab::with_trailing_eos(5).unwrap();
        let depth = DepthBound::new(8).unwrap();
        let llm = SyntheticLlm::new(vocab, depth, 2.0, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let q = Query(rng.random_range(0..3));
            let len = rng.random_range(0..8);
            let y: Vec<Token> = (0..len).map(|_| rng.random_range(0..4)).collect();
            let fresh: f64 = (0..y.len()).fold(0.0, |acc, i| acc + llm.log_probs(q, &y[..i])[y[i] as usize]);
            assert_eq!(llm.sequence_log_prob(q, &y).to_bits(), fresh.to_bits());
            assert_eq!(llm.clone().sequence_log_prob(q, &y).to_bits(), fresh.to_bits());
        }
    }

    #[test]
    fn pooled_embedding_norm_at_most_one() {
        let depth = DepthBound::new(7).unwrap();
        for d in [1, 2, 5, 40] {
            let e = PooledEmbedding::new(d, depth, 4, 1).unwrap();
            let x = e.embed(Query(2), &[0, 1, 2, 3, 0, 1, 4]);
            assert!(x.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn pooled_embedding_adds_one_term_per_token() {
        let depth = DepthBound::new(5).unwrap();
        let e = PooledEmbedding::new(3, depth, 4, 7).unwrap();
        let q = Query(1);
        let (a, b, c) = (e.embed(q, &[2]), e.embed(q, &[2, 0]), e.embed(q, &[2, 0, 1]));
        let (b2, c2) = (e.embed(q, &[3, 0]), e.embed(q, &[3, 0, 1]));
        // The increment of appending token 1 at position 2 is prefix-independent.
        assert!(((c - b) - (c2 - b2)).norm() < 1e-15);
        assert!(a.norm() > 0.0);
    }

    #[test]
    fn misaligned_greedy_is_optimal_without_latent_weight() {
        let env = gen_mixture_env(4, 4, 3, 1.0, 2).unwrap();
        let mis = misaligned_theta(3);
        assert_eq!(env.theta(), &mis);
        let (g, _) = greedy_decode(&env, Query(1), PrefixScoring::Raw);
        assert!(g.is_complete());
    }

    proptest! {
        #[test]
        fn reduction_identity(gamma in 0.0f64..=1.0, q in 0u32..50, toks in prop::collection::vec(0u32..5, 0..5), seed in 0u64..20) {
            let vocab = Vocab::with_trailing_eos(5).unwrap();
            let depth = DepthBound::new(6).unwrap();
            let llm = Arc::new(SyntheticLlm::new(vocab, depth, 2.0, seed).unwrap());
            let lat = Arc::new(PooledEmbedding::new(4, depth, 4, seed + 1).unwrap());
            let theta = DVector::from_vec(vec![0.5, -0.2, 0.3, 0.1]);
            let env = align_reduce(vocab, depth, llm.clone(), lat.clone(), gamma, &theta).unwrap();
            let mut y = toks;
            y.push(4);
            let lhs = env.utility(Query(q), &y);
            let rhs = gamma * llm.value(Query(q), &y) + (1.0 - gamma) * theta.dot(&lat.embed(Query(q), &y));
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
