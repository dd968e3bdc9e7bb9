//! Oracle traits shared by environments, learners and diagnostics.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::seq::{canonical, illegal_suffix_len, DepthBound, Token, Vocab};

/// Index of a query in an environment's query pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Query(pub u32);

/// Multiplicative penalty applied per non-eos token appearing after the first
/// eos.
pub const ILLEGAL_DECAY: f64 = 0.5;

/// Expected utility of a token sequence given a query.
pub trait SequenceUtility: Send + Sync {
    fn vocab(&self) -> Vocab;

    fn depth(&self) -> DepthBound;

    /// Defined for every sequence. Values of incomplete sequences are only
    /// used by white-box diagnostics, never as rewards.
    fn utility(&self, q: Query, tokens: &[Token]) -> f64;

    /// True when the utility ignores the query, so a single optimum serves
    /// every round.
    fn query_invariant(&self) -> bool {
        false
    }

    /// Tokens that can carry nonzero utility at position `pos` (0-based) of a
    /// complete sequence, excluding eos. `None` means every token. Only sound
    /// for nonnegative utilities that vanish outside the support.
    fn support(&self, _pos: usize) -> Option<Vec<Token>> {
        None
    }
}

/// Embedding function `e(x, y)`.
pub trait Embedding: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, q: Query, tokens: &[Token]) -> DVector<f64>;
}

/// Frozen next-token distribution of a base model.
pub trait BaseModel: Send + Sync {
    /// Log-probabilities over the whole vocabulary for the next token.
    fn log_probs(&self, q: Query, prefix: &[Token]) -> Vec<f64>;
}

impl<T: SequenceUtility + ?Sized> SequenceUtility for Arc<T> {
    fn vocab(&self) -> Vocab {
        (**self).vocab()
    }
    fn depth(&self) -> DepthBound {
        (**self).depth()
    }
    fn utility(&self, q: Query, tokens: &[Token]) -> f64 {
        (**self).utility(q, tokens)
    }
    fn query_invariant(&self) -> bool {
        (**self).query_invariant()
    }
    fn support(&self, pos: usize) -> Option<Vec<Token>> {
        (**self).support(pos)
    }
}

impl<T: Embedding + ?Sized> Embedding for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed(&self, q: Query, tokens: &[Token]) -> DVector<f64> {
        (**self).embed(q, tokens)
    }
}

/// Evaluates `canonical_value` on the canonical form and applies the
/// post-eos penalty. Wrapping any utility this way makes appending eos a
/// no-op and appending a non-eos token after eos a strict decrease whenever
/// the canonical value is positive.
pub fn monotone_value(tokens: &[Token], eos: Token, canonical_value: impl FnOnce(&[Token]) -> f64) -> f64 {
    let m = illegal_suffix_len(tokens, eos);
    let v = canonical_value(canonical(tokens, eos));
    if m == 0 {
        v
    } else {
        v * ILLEGAL_DECAY.powi(m as i32)
    }
}

/// Scale applied to the embedding of a sequence with post-eos garbage so that
/// linear realizability matches [`monotone_value`].
pub fn monotone_scale(tokens: &[Token], eos: Token) -> f64 {
    ILLEGAL_DECAY.powi(illegal_suffix_len(tokens, eos) as i32)
}

type UtilityFn = dyn Fn(Query, &[Token]) -> f64 + Send + Sync;

/// Utility backed by a closure. The closure sees the raw sequence.
pub struct FnUtility {
    vocab: Vocab,
    depth: DepthBound,
    invariant: bool,
    f: Box<UtilityFn>,
}

impl FnUtility {
    pub fn new(vocab: Vocab, depth: DepthBound, f: impl Fn(Query, &[Token]) -> f64 + Send + Sync + 'static) -> Self {
        Self { vocab, depth, invariant: false, f: Box::new(f) }
    }

    /// Closure ignores the query.
    pub fn fixed(vocab: Vocab, depth: DepthBound, f: impl Fn(&[Token]) -> f64 + Send + Sync + 'static) -> Self {
        Self { vocab, depth, invariant: true, f: Box::new(move |_, t| f(t)) }
    }
}

impl SequenceUtility for FnUtility {
    fn vocab(&self) -> Vocab {
        self.vocab
    }
    fn depth(&self) -> DepthBound {
        self.depth
    }
    fn utility(&self, q: Query, tokens: &[Token]) -> f64 {
        (self.f)(q, tokens)
    }
    fn query_invariant(&self) -> bool {
        self.invariant
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_value_penalizes_garbage() {
        let f = |t: &[Token]| t.len() as f64;
        assert_eq!(monotone_value(&[0, 2], 2, f), 2.0);
        assert_eq!(monotone_value(&[0, 2, 2, 2], 2, f), 2.0);
        assert_eq!(monotone_value(&[0, 2, 1], 2, f), 1.0);
        assert_eq!(monotone_value(&[0, 2, 1, 2, 0], 2, f), 0.5);
        assert_eq!(monotone_scale(&[0, 2, 1, 1], 2), 0.25);
    }
}
