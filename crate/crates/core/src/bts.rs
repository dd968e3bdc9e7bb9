//! Bandit tree search instances, the static reductions between trees and
//! fixed-query token utilities, and the per-depth smoothness profile.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::FixedUtilityEnv;
use crate::error::{Error, Result};
use crate::hash::mix;
use crate::noise::Noise;
use crate::seq::{DepthBound, Token, Vocab};
use crate::utility::{Query, SequenceUtility};

/// A leaf value or an ordered list of children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BtsNode {
    Leaf(f64),
    Internal(Vec<BtsNode>),
}

impl BtsNode {
    fn depth(&self) -> usize {
        match self {
            BtsNode::Leaf(_) => 0,
            BtsNode::Internal(c) => 1 + c.iter().map(BtsNode::depth).max().unwrap_or(0),
        }
    }

    fn min_max(&self) -> (f64, f64) {
        match self {
            BtsNode::Leaf(v) => (*v, *v),
            BtsNode::Internal(c) => c.iter().map(BtsNode::min_max).fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| {
                (a.0.min(b.0), a.1.max(b.1))
            }),
        }
    }

    fn validate(&self, arity: usize) -> Result<()> {
        match self {
            BtsNode::Leaf(v) if v.is_finite() && *v >= 0.0 => Ok(()),
            BtsNode::Leaf(v) => Err(Error::InvalidParam(format!("leaf value {v} must be finite and >= 0"))),
            BtsNode::Internal(c) if c.is_empty() || c.len() > arity => {
                Err(Error::InvalidParam(format!("internal node with {} children, arity {arity}", c.len())))
            }
            BtsNode::Internal(c) => c.iter().try_for_each(|x| x.validate(arity)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum BtsJson {
    Complete { arity: usize, depth: usize, leaves: Vec<f64> },
    Nested { arity: usize, tree: BtsNode },
}

/// Rooted tree with nonnegative leaf values. Nodes of each level are
/// indexed left to right (level order).
#[derive(Debug, Clone, PartialEq)]
pub struct BtsInstance {
    arity: usize,
    root: BtsNode,
}

impl BtsInstance {
    pub fn new(arity: usize, root: BtsNode) -> Result<Self> {
        if arity == 0 {
            return Err(Error::InvalidParam("arity must be >= 1".into()));
        }
        if matches!(root, BtsNode::Leaf(_)) {
            return Err(Error::InvalidParam("root must be an internal node".into()));
        }
        root.validate(arity)?;
        Ok(Self { arity, root })
    }

    /// Full `arity`-ary tree of the given depth with leaves in left-to-right
    /// order.
    pub fn complete(arity: usize, depth: usize, leaves: &[f64]) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidParam("depth must be >= 1".into()));
        }
        let expected = arity.checked_pow(depth as u32).ok_or_else(|| Error::InvalidParam("tree too large".into()))?;
        if leaves.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: leaves.len() });
        }
        let mut level: Vec<BtsNode> = leaves.iter().map(|&v| BtsNode::Leaf(v)).collect();
        for _ in 0..depth {
            let mut up = Vec::with_capacity(level.len() / arity.max(1));
            let mut it = level.into_iter();
            loop {
                let group: Vec<BtsNode> = it.by_ref().take(arity).collect();
                if group.is_empty() {
                    break;
                }
                up.push(BtsNode::Internal(group));
            }
            level = up;
        }
        Self::new(arity, level.pop().expect("one root"))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        match serde_json::from_str::<BtsJson>(s)? {
            BtsJson::Complete { arity, depth, leaves } => Self::complete(arity, depth, &leaves),
            BtsJson::Nested { arity, tree } => Self::new(arity, tree),
        }
    }

    pub fn to_json(&self) -> String {
        let depth = self.depth();
        let leaves = self.leaf_values();
        let full = self.arity.checked_pow(depth as u32) == Some(leaves.len())
            && self.leaves_with_depth().iter().all(|&(d, _)| d == depth);
        let j = if full {
            BtsJson::Complete { arity: self.arity, depth, leaves }
        } else {
            BtsJson::Nested { arity: self.arity, tree: self.root.clone() }
        };
        serde_json::to_string(&j).expect("tree serializes")
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn root(&self) -> &BtsNode {
        &self.root
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Leaf values in left-to-right order.
    pub fn leaf_values(&self) -> Vec<f64> {
        self.leaves_with_depth().into_iter().map(|(_, v)| v).collect()
    }

    fn leaves_with_depth(&self) -> Vec<(usize, f64)> {
        fn walk(n: &BtsNode, d: usize, out: &mut Vec<(usize, f64)>) {
            match n {
                BtsNode::Leaf(v) => out.push((d, *v)),
                BtsNode::Internal(c) => c.iter().for_each(|x| walk(x, d + 1, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, 0, &mut out);
        out
    }

    /// Nodes per level (level 0 is the root) in level order; each entry is
    /// the leaf value or `None` for internal nodes.
    pub fn levels(&self) -> Vec<Vec<Option<f64>>> {
        let mut out = Vec::new();
        let mut frontier = vec![&self.root];
        while !frontier.is_empty() {
            out.push(
                frontier
                    .iter()
                    .map(|n| match n {
                        BtsNode::Leaf(v) => Some(*v),
                        BtsNode::Internal(_) => None,
                    })
                    .collect(),
            );
            frontier = frontier
                .iter()
                .flat_map(|n| match n {
                    BtsNode::Leaf(_) => [].iter(),
                    BtsNode::Internal(c) => c.iter(),
                })
                .collect();
        }
        out
    }

    pub fn max_leaf(&self) -> f64 {
        self.root.min_max().1
    }
}

/// Random tree: each internal node has between 1 and `arity` children, and a
/// child becomes a leaf with probability 0.3 or when `depth` is reached.
pub fn random_bts(arity: usize, depth: usize, seed: u64) -> Result<BtsInstance> {
    if arity == 0 || depth == 0 {
        return Err(Error::InvalidParam("arity and depth must be >= 1".into()));
    }
    fn grow(rng: &mut ChaCha8Rng, arity: usize, left: usize) -> BtsNode {
        let k = rng.random_range(1..=arity);
        BtsNode::Internal(
            (0..k)
                .map(|_| {
                    if left == 1 || rng.random_bool(0.3) {
                        BtsNode::Leaf(if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..1.0) })
                    } else {
                        grow(rng, arity, left - 1)
                    }
                })
                .collect(),
        )
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xB75));
    BtsInstance::new(arity, grow(&mut rng, arity, depth))
}

/// Token utility induced by a tree: one token per leaf plus a trailing eos.
/// A complete sequence `t_1 .. t_j eos` (trailing eos runs ignored) is worth
/// the value of node `t_j` at level `j` when every `t_i` indexes an existing
/// node of level `i` and node `t_j` is a leaf; everything else is worth 0.
#[derive(Debug, Clone)]
pub struct BtsUtility {
    vocab: Vocab,
    depth: DepthBound,
    levels: Vec<Vec<Option<f64>>>,
}

impl BtsUtility {
    pub fn levels(&self) -> &[Vec<Option<f64>>] {
        &self.levels
    }
}

impl SequenceUtility for BtsUtility {
    fn vocab(&self) -> Vocab {
        self.vocab
    }
    fn depth(&self) -> DepthBound {
        self.depth
    }
    fn utility(&self, _q: Query, tokens: &[Token]) -> f64 {
        let eos = self.vocab.eos();
        let mut end = tokens.len();
        while end > 1 && tokens[end - 1] == eos && tokens[end - 2] == eos {
            end -= 1;
        }
        let Some((&last, body)) = tokens[..end].split_last() else {
            return 0.0;
        };
        if last != eos || body.is_empty() || body.len() >= self.levels.len() {
            return 0.0;
        }
        for (i, &t) in body.iter().enumerate() {
            if t == eos || t as usize >= self.levels[i + 1].len() {
                return 0.0;
            }
        }
        let j = body.len();
        self.levels[j][body[j - 1] as usize].unwrap_or(0.0)
    }
    fn query_invariant(&self) -> bool {
        true
    }
    fn support(&self, pos: usize) -> Option<Vec<Token>> {
        Some((0..self.levels.get(pos + 1).map_or(0, Vec::len) as Token).collect())
    }
}

/// Tree to fixed-query token environment. `L` is the tree depth plus one.
pub fn bts_to_tmab(bts: &BtsInstance) -> Result<FixedUtilityEnv> {
    let levels = bts.levels();
    let n_leaves = levels.iter().flatten().filter(|x| x.is_some()).count();
    let vocab = Vocab::with_trailing_eos(n_leaves + 1)?;
    let depth = DepthBound::new(bts.depth() + 1)?;
    Ok(FixedUtilityEnv::new(Arc::new(BtsUtility { vocab, depth, levels }), Noise::none(), "bts", false))
}

/// Token utility to an `n`-ary tree: the node for live prefix `y` has one
/// child per non-eos token (while `|y| < L - 1`) followed by an END leaf
/// worth `u(y:eos)`.
pub fn tmab_to_bts<U: SequenceUtility + ?Sized>(u: &U, q: Query, cap: u128) -> Result<BtsInstance> {
    let vocab = u.vocab();
    let l = u.depth().get();
    let m = (vocab.n() - 1) as u128;
    let mut needed: u128 = 0;
    let mut w: u128 = 1;
    for _ in 0..l {
        needed = needed.saturating_add(w.saturating_mul(2));
        w = w.saturating_mul(m);
    }
    if needed > cap {
        return Err(Error::CapExceeded { needed, cap });
    }
    let eos = vocab.eos();
    fn build<U: SequenceUtility + ?Sized>(u: &U, q: Query, y: &mut Vec<Token>, l: usize, vocab: Vocab) -> BtsNode {
        let eos = vocab.eos();
        let mut children = Vec::with_capacity(vocab.n());
        if y.len() < l - 1 {
            for t in vocab.non_eos() {
                y.push(t);
                children.push(build(u, q, y, l, vocab));
                y.pop();
            }
        }
        y.push(eos);
        children.push(BtsNode::Leaf(u.utility(q, y)));
        y.pop();
        BtsNode::Internal(children)
    }
    debug_assert_eq!(eos as usize, vocab.n() - 1);
    let mut y = Vec::with_capacity(l);
    BtsInstance::new(vocab.n(), build(u, q, &mut y, l, vocab))
}

/// Per-depth smoothness bounds of a tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessProfile {
    pub delta: Vec<f64>,
}

/// `delta_d`: the smallest `v* - min(subtree)` over depth-`d` nodes whose
/// subtree contains an optimal leaf, for `d = 0..=depth`; 0 where no such
/// node exists.
pub fn smoothness_profile(bts: &BtsInstance) -> SmoothnessProfile {
    let best = bts.max_leaf();
    let mut delta = vec![f64::INFINITY; bts.depth() + 1];
    fn walk(n: &BtsNode, d: usize, best: f64, delta: &mut [f64]) {
        let (lo, hi) = n.min_max();
        if hi < best {
            return;
        }
        delta[d] = delta[d].min(best - lo);
        if let BtsNode::Internal(c) = n {
            c.iter().for_each(|x| walk(x, d + 1, best, delta));
        }
    }
    walk(bts.root(), 0, best, &mut delta);
    SmoothnessProfile { delta: delta.into_iter().map(|x| if x.is_finite() { x } else { 0.0 }).collect() }
}
