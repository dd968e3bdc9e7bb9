//! Bandit environments: the contextual linear setting and the fixed-query
//! setting, plus the instance generators that build them.

pub mod affine;
pub mod embedding;
pub mod mab;
pub mod needle;

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::Noise;
use crate::seq::{DepthBound, Token, Vocab};
use crate::utility::{BaseModel, Embedding, Query, SequenceUtility};

pub use affine::{gen_affine_ddmc_env, AffineLevelRule, AffineUtility};
pub use embedding::{embed_with_target, TargetEmbedding};
pub use mab::ArmPerSequence;
pub use needle::gen_needle_env;

/// Default query pool size for synthetic runs.
pub const DEFAULT_QUERY_POOL: u32 = 1000;

/// How the per-round query is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    /// Uniform draw from a pool of `pool` query indices.
    Uniform { pool: u32 },
    /// Round `t` (1-based) receives query `t - 1`, a fresh query every round.
    Sequential,
}

impl QuerySource {
    pub fn draw<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Query {
        match *self {
            QuerySource::Uniform { pool } => Query(rng.random_range(0..pool.max(1))),
            QuerySource::Sequential => Query(t.saturating_sub(1) as u32),
        }
    }
}

fn check_submission(vocab: Vocab, depth: DepthBound, tokens: &[Token]) -> Result<()> {
    for &t in tokens {
        vocab.check(t)?;
    }
    if tokens.len() > depth.get() {
        return Err(Error::TooLong { len: tokens.len(), max: depth.get() });
    }
    if !tokens.contains(&vocab.eos()) {
        return Err(Error::Incomplete);
    }
    Ok(())
}

/// Tokenized linear bandit environment: `u(x, y) = <theta, e(x, y)>` with
/// bounded additive noise.
#[derive(Clone)]
pub struct LinearEnv {
    vocab: Vocab,
    depth: DepthBound,
    theta: DVector<f64>,
    embedding: Arc<dyn Embedding>,
    noise: Noise,
    queries: QuerySource,
    base: Option<Arc<dyn BaseModel>>,
    query_invariant: bool,
    family: String,
}

impl std::fmt::Debug for LinearEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearEnv")
            .field("family", &self.family)
            .field("vocab", &self.vocab)
            .field("depth", &self.depth)
            .field("d", &self.theta.len())
            .field("noise", &self.noise)
            .field("queries", &self.queries)
            .finish()
    }
}

impl LinearEnv {
    pub fn new(
        vocab: Vocab,
        depth: DepthBound,
        theta: DVector<f64>,
        embedding: Arc<dyn Embedding>,
        noise: Noise,
        queries: QuerySource,
    ) -> Result<Self> {
        if embedding.dim() != theta.len() {
            return Err(Error::DimensionMismatch { expected: theta.len(), got: embedding.dim() });
        }
        Ok(Self {
            vocab,
            depth,
            theta,
            embedding,
            noise,
            queries,
            base: None,
            query_invariant: false,
            family: "custom".into(),
        })
    }

    pub fn with_base(mut self, base: Arc<dyn BaseModel>) -> Self {
        self.base = Some(base);
        self
    }

    pub fn with_query_invariant(mut self, invariant: bool) -> Self {
        self.query_invariant = invariant;
        self
    }

    pub fn with_family(mut self, family: &str) -> Self {
        self.family = family.to_string();
        self
    }

    pub fn with_noise(mut self, noise: Noise) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_queries(mut self, queries: QuerySource) -> Self {
        self.queries = queries;
        self
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn embedding(&self) -> &Arc<dyn Embedding> {
        &self.embedding
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    pub fn queries(&self) -> QuerySource {
        self.queries
    }

    pub fn base(&self) -> Option<&Arc<dyn BaseModel>> {
        self.base.as_ref()
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn embed(&self, q: Query, tokens: &[Token]) -> DVector<f64> {
        self.embedding.embed(q, tokens)
    }

    /// Expected reward of a submitted sequence.
    pub fn expected_reward(&self, q: Query, tokens: &[Token]) -> Result<f64> {
        check_submission(self.vocab, self.depth, tokens)?;
        Ok(self.utility(q, tokens))
    }

    /// `u(x, y) + eta` with `|eta| <= sigma`.
    pub fn sample_reward<R: Rng + ?Sized>(&self, q: Query, tokens: &[Token], rng: &mut R) -> Result<f64> {
        Ok(self.expected_reward(q, tokens)? + self.noise.sample(rng))
    }
}

impl SequenceUtility for LinearEnv {
    fn vocab(&self) -> Vocab {
        self.vocab
    }
    fn depth(&self) -> DepthBound {
        self.depth
    }
    fn utility(&self, q: Query, tokens: &[Token]) -> f64 {
        self.theta.dot(&self.embedding.embed(q, tokens))
    }
    fn query_invariant(&self) -> bool {
        self.query_invariant
    }
}

/// Tokenized multi-armed bandit environment: one fixed query and an
/// arbitrary monotone utility.
#[derive(Clone)]
pub struct FixedUtilityEnv {
    utility: Arc<dyn SequenceUtility>,
    noise: Noise,
    family: String,
    ddmc: bool,
}

impl std::fmt::Debug for FixedUtilityEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FixedUtilityEnv")
            .field("family", &self.family)
            .field("vocab", &self.utility.vocab())
            .field("depth", &self.utility.depth())
            .field("noise", &self.noise)
            .field("ddmc", &self.ddmc)
            .finish()
    }
}

impl FixedUtilityEnv {
    pub const QUERY: Query = Query(0);

    /// `ddmc` tags whether the family is known to satisfy the eos-terminated
    /// DDMC property.
    pub fn new(utility: Arc<dyn SequenceUtility>, noise: Noise, family: &str, ddmc: bool) -> Self {
        Self { utility, noise, family: family.to_string(), ddmc }
    }

    pub fn utility_oracle(&self) -> &Arc<dyn SequenceUtility> {
        &self.utility
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn is_ddmc(&self) -> bool {
        self.ddmc
    }

    pub fn with_noise(mut self, noise: Noise) -> Self {
        self.noise = noise;
        self
    }

    pub fn value(&self, tokens: &[Token]) -> f64 {
        self.utility.utility(Self::QUERY, tokens)
    }

    pub fn expected_reward(&self, tokens: &[Token]) -> Result<f64> {
        check_submission(self.vocab(), self.depth(), tokens)?;
        Ok(self.value(tokens))
    }

    pub fn sample_reward<R: Rng + ?Sized>(&self, tokens: &[Token], rng: &mut R) -> Result<f64> {
        Ok(self.expected_reward(tokens)? + self.noise.sample(rng))
    }
}

impl SequenceUtility for FixedUtilityEnv {
    fn vocab(&self) -> Vocab {
        self.utility.vocab()
    }
    fn depth(&self) -> DepthBound {
        self.utility.depth()
    }
    fn utility(&self, _q: Query, tokens: &[Token]) -> f64 {
        self.value(tokens)
    }
    fn query_invariant(&self) -> bool {
        true
    }
    fn support(&self, pos: usize) -> Option<Vec<Token>> {
        self.utility.support(pos)
    }
}
