//! Arm-per-sequence hardness family: every complete sequence is an
//! independent arm with a hashed mean in `[0, 1)`, so no structure links
//! sequences sharing tokens.

use crate::hash::{hash_tokens, mix, unit};
use crate::seq::{DepthBound, Token, Vocab};
use crate::utility::{monotone_value, Query, SequenceUtility};

#[derive(Debug, Clone)]
pub struct ArmPerSequence {
    vocab: Vocab,
    depth: DepthBound,
    seed: u64,
}

impl ArmPerSequence {
    pub fn new(vocab: Vocab, depth: DepthBound, seed: u64) -> Self {
        Self { vocab, depth, seed }
    }
}

impl SequenceUtility for ArmPerSequence {
    fn vocab(&self) -> Vocab {
        self.vocab
    }
    fn depth(&self) -> DepthBound {
        self.depth
    }
    fn utility(&self, _q: Query, tokens: &[Token]) -> f64 {
        let eos = self.vocab.eos();
        monotone_value(tokens, eos, |c| {
            if c.last() == Some(&eos) {
                unit(hash_tokens(mix(self.seed, 0xA2B), c))
            } else {
                0.0
            }
        })
    }
    fn query_invariant(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::for_each_complete;

    #[test]
    fn arms_are_distinct_and_bounded() {
        let v = Vocab::with_trailing_eos(3).unwrap();
        let u = ArmPerSequence::new(v, DepthBound::new(3).unwrap(), 1);
        let mut vals = Vec::new();
        for_each_complete(v, 3, |s| vals.push(u.utility(Query(0), s)));
        assert!(vals.iter().all(|x| (0.0..1.0).contains(x)));
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        assert_eq!(vals.len(), 7);
        assert_eq!(u.utility(Query(0), &[0, 1]), 0.0);
    }
}
