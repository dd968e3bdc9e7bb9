//! Adversarial needle instance: every round hides one unit-value leaf among
//! the binary strings of length `L - 1` (terminated by eos). Its sibling,
//! which differs only in the last non-eos token, is worth `1 - eps`; every
//! other sequence is worth zero.

use std::sync::Arc;

use nalgebra::DVector;

use crate::env::{LinearEnv, QuerySource};
use crate::error::{Error, Result};
use crate::hash::mix;
use crate::noise::Noise;
use crate::seq::{canonical, DepthBound, Token, Vocab};
use crate::utility::{monotone_scale, Embedding, Query};

pub const NEEDLE_EOS: Token = 2;

#[derive(Debug, Clone)]
pub struct NeedleEmbedding {
    depth: usize,
    eps: f64,
    seed: u64,
}

impl NeedleEmbedding {
    /// Hidden leaf for query `q`: `L - 1` binary tokens followed by eos.
    pub fn hidden_leaf(&self, q: Query) -> Vec<Token> {
        let h = mix(self.seed, q.0 as u64);
        let mut leaf: Vec<Token> = (0..self.depth - 1).map(|i| ((mix(h, i as u64) >> 17) & 1) as Token).collect();
        leaf.push(NEEDLE_EOS);
        leaf
    }

    pub fn sibling(&self, q: Query) -> Vec<Token> {
        let mut s = self.hidden_leaf(q);
        let last = self.depth - 2;
        s[last] ^= 1;
        s
    }
}

impl Embedding for NeedleEmbedding {
    fn dim(&self) -> usize {
        2
    }

    fn embed(&self, q: Query, tokens: &[Token]) -> DVector<f64> {
        let c = canonical(tokens, NEEDLE_EOS);
        let scale = monotone_scale(tokens, NEEDLE_EOS);
        let mut e = DVector::zeros(2);
        if c.len() == self.depth && c.last() == Some(&NEEDLE_EOS) {
            if c == self.hidden_leaf(q).as_slice() {
                e[0] = scale;
            } else if c == self.sibling(q).as_slice() {
                e[0] = scale * (1.0 - self.eps);
            }
        }
        e
    }
}

/// Needle environment over tokens `{0, 1, eos = 2}` with `theta = o = e1`.
/// Every round draws a fresh query, so the hidden leaves are independent
/// across rounds. `horizon` is kept for interface symmetry: the query stream
/// is sequential and never repeats within it.
pub fn gen_needle_env(l: usize, horizon: usize, eps: f64, seed: u64) -> Result<LinearEnv> {
    if l < 3 {
        return Err(Error::InvalidParam(format!("needle instance needs L >= 3, got {l}")));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidParam(format!("needle eps must be in [0, 1], got {eps}")));
    }
    let _ = horizon;
    let vocab = Vocab::new(3, NEEDLE_EOS)?;
    let emb = NeedleEmbedding { depth: l, eps, seed };
    Ok(LinearEnv::new(
        vocab,
        DepthBound::new(l)?,
        DVector::from_vec(vec![1.0, 0.0]),
        Arc::new(emb),
        Noise::none(),
        QuerySource::Sequential,
    )?
    .with_family("needle"))
}

/// Prop.-style lower-bound factor `1 - 1/2^(L-2)`.
pub fn needle_regret_factor(l: usize) -> f64 {
    1.0 - 0.5f64.powi(l as i32 - 2)
}
