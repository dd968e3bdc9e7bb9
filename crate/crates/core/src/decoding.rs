//! Full-information decoding against a utility oracle: level-wise greedy and
//! exhaustive search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::{for_each_complete, Token, TokenSeq, Vocab};
use crate::utility::{Query, SequenceUtility};

/// Default cap on the number of complete sequences enumerated.
pub const DEFAULT_ENUM_CAP: u128 = 1_000_000;

/// How greedy scores a non-eos candidate `y:tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixScoring {
    /// `u(y:tau)` on the incomplete prefix.
    Raw,
    /// `u(y:tau:eos)`, the value of stopping right after `tau`.
    #[default]
    EosTerminated,
}

/// Level-wise greedy decoding. At each level picks the token with the highest
/// score (lowest index on ties), stops on eos and forces eos at position `L`.
/// Returns the sequence and the number of oracle queries, at most `n (L - 1)`.
pub fn greedy_decode<U: SequenceUtility + ?Sized>(u: &U, q: Query, scoring: PrefixScoring) -> (TokenSeq, usize) {
    let vocab = u.vocab();
    let l = u.depth().get();
    let eos = vocab.eos();
    let mut y: Vec<Token> = Vec::with_capacity(l);
    let mut queries = 0usize;
    let mut cand: Vec<Token> = Vec::with_capacity(l + 1);
    while y.len() < l - 1 {
        let mut best: Option<(Token, f64)> = None;
        for tau in vocab.tokens() {
            cand.clear();
            cand.extend_from_slice(&y);
            cand.push(tau);
            if scoring == PrefixScoring::EosTerminated && tau != eos {
                cand.push(eos);
            }
            let s = u.utility(q, &cand);
            queries += 1;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((tau, s));
            }
        }
        let (tau, _) = best.expect("vocabulary is nonempty");
        y.push(tau);
        if tau == eos {
            return (seq(vocab, y), queries);
        }
    }
    y.push(eos);
    (seq(vocab, y), queries)
}

fn seq(vocab: Vocab, tokens: Vec<Token>) -> TokenSeq {
    TokenSeq::from_tokens(vocab, tokens).expect("decoded tokens are in range")
}

/// Exhaustive search over complete canonical sequences of length at most
/// `L`. Ties go to the lexicographically smallest sequence.
pub fn brute_force_opt<U: SequenceUtility + ?Sized>(u: &U, q: Query, cap: u128) -> Result<(TokenSeq, f64)> {
    let vocab = u.vocab();
    let l = u.depth().get();
    let needed = vocab.complete_count(l);
    if needed > cap {
        return Err(Error::CapExceeded { needed, cap });
    }
    let mut best: Option<(Vec<Token>, f64)> = None;
    for_each_complete(vocab, l, |s| {
        let v = u.utility(q, s);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((s.to_vec(), v));
        }
    });
    let (tokens, v) = best.expect("at least [eos] is complete");
    Ok((seq(vocab, tokens), v))
}

/// Exhaustive search restricted to each position's declared support
/// ([`SequenceUtility::support`]). Agrees with [`brute_force_opt`] on the
/// optimal value for nonnegative utilities that vanish off the support, and
/// reaches much larger vocabularies when the support is sparse.
pub fn brute_force_opt_supported<U: SequenceUtility + ?Sized>(u: &U, q: Query, cap: u128) -> Result<(TokenSeq, f64)> {
    let vocab = u.vocab();
    let l = u.depth().get();
    let eos = vocab.eos();
    let levels: Vec<Vec<Token>> = (0..l.saturating_sub(1))
        .map(|pos| match u.support(pos) {
            Some(s) => {
                let mut s: Vec<Token> = s.into_iter().filter(|&t| t != eos && vocab.check(t).is_ok()).collect();
                s.sort_unstable();
                s.dedup();
                s
            }
            None => vocab.non_eos().collect(),
        })
        .collect();
    let mut needed: u128 = 0;
    let mut width: u128 = 1;
    for j in 0..l {
        needed = needed.saturating_add(width);
        if j < levels.len() {
            width = width.saturating_mul(levels[j].len() as u128);
        }
    }
    if needed > cap {
        return Err(Error::CapExceeded { needed, cap });
    }
    let mut best: Option<(Vec<Token>, f64)> = None;
    let mut buf = Vec::with_capacity(l);
    walk_supported(&levels, eos, &mut buf, &mut |s| {
        let v = u.utility(q, s);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((s.to_vec(), v));
        }
    });
    let (tokens, v) = best.expect("at least [eos] is complete");
    Ok((seq(vocab, tokens), v))
}

fn walk_supported(levels: &[Vec<Token>], eos: Token, buf: &mut Vec<Token>, f: &mut impl FnMut(&[Token])) {
    let pos = buf.len();
    if pos < levels.len() {
        for &t in &levels[pos] {
            if t < eos {
                buf.push(t);
                walk_supported(levels, eos, buf, f);
                buf.pop();
            }
        }
    }
    buf.push(eos);
    f(buf);
    buf.pop();
    if pos < levels.len() {
        for &t in &levels[pos] {
            if t > eos {
                buf.push(t);
                walk_supported(levels, eos, buf, f);
                buf.pop();
            }
        }
    }
}

/// Values of every complete canonical sequence, in lexicographic order.
pub fn enumerate_values<U: SequenceUtility + ?Sized>(u: &U, q: Query, cap: u128) -> Result<Vec<(Vec<Token>, f64)>> {
    let vocab = u.vocab();
    let l = u.depth().get();
    let needed = vocab.complete_count(l);
    if needed > cap {
        return Err(Error::CapExceeded { needed, cap });
    }
    let mut out = Vec::with_capacity(needed as usize);
    for_each_complete(vocab, l, |s| out.push((s.to_vec(), u.utility(q, s))));
    Ok(out)
}
