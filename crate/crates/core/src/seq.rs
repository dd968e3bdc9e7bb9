//! Vocabulary, token sequences and the eos conventions shared by every
//! environment and learner.
//!
//! Tokens are dense indices in `[0, n)`. One of them is the end-of-sequence
//! marker; a sequence is *complete* when its last token is eos. Utilities are
//! always evaluated on the canonical form of a sequence, i.e. the sequence cut
//! right after its first eos.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

/// A vocabulary of `n` dense token indices, one of which is eos.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocab {
    n: usize,
    eos: Token,
}

impl Vocab {
    pub fn new(n: usize, eos: Token) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidVocab(format!("n = {n}, need at least 2 tokens")));
        }
        if eos as usize >= n {
            return Err(Error::InvalidVocab(format!("eos id {eos} not below n = {n}")));
        }
        Ok(Self { n, eos })
    }

    /// Vocabulary whose eos is the highest index. This is the layout used by
    /// every generated environment, so ties under lowest-index tie breaking
    /// resolve towards non-eos tokens.
    pub fn with_trailing_eos(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidVocab(format!("n = {n}, need at least 2 tokens")));
        }
        Self::new(n, (n - 1) as Token)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eos(&self) -> Token {
        self.eos
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> {
        0..self.n as Token
    }

    pub fn non_eos(&self) -> impl Iterator<Item = Token> + '_ {
        self.tokens().filter(move |&t| t != self.eos)
    }

    pub fn check(&self, tok: Token) -> Result<()> {
        if (tok as usize) < self.n {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange { token: tok, n: self.n })
        }
    }

    /// Number of complete canonical sequences of length at most `max_len`:
    /// `sum_{k=0}^{max_len-1} (n-1)^k`.
    pub fn complete_count(&self, max_len: usize) -> u128 {
        let m = (self.n - 1) as u128;
        let mut total: u128 = 0;
        let mut pow: u128 = 1;
        for _ in 0..max_len {
            total = total.saturating_add(pow);
            pow = pow.saturating_mul(m);
        }
        total
    }
}

/// Maximum sequence length `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepthBound(usize);

impl DepthBound {
    pub fn new(l: usize) -> Result<Self> {
        if l < 2 {
            return Err(Error::InvalidParam(format!("depth bound L = {l}, need L >= 2")));
        }
        Ok(Self(l))
    }

    pub fn get(&self) -> usize {
        self.0
    }
}

/// A token sequence over a fixed vocabulary. Value semantics: every
/// operation returns a new sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    tokens: Vec<Token>,
    vocab: Vocab,
}

impl TokenSeq {
    pub fn empty(vocab: Vocab) -> Self {
        Self { tokens: Vec::new(), vocab }
    }

    pub fn from_tokens(vocab: Vocab, tokens: Vec<Token>) -> Result<Self> {
        for &t in &tokens {
            vocab.check(t)?;
        }
        Ok(Self { tokens, vocab })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.tokens
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.tokens.last() == Some(&self.vocab.eos)
    }

    /// `seq:tok`.
    pub fn concat(&self, tok: Token) -> Result<Self> {
        self.vocab.check(tok)?;
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        tokens.extend_from_slice(&self.tokens);
        tokens.push(tok);
        Ok(Self { tokens, vocab: self.vocab })
    }

    /// `seq:other`.
    pub fn concat_seq(&self, other: &TokenSeq) -> Result<Self> {
        for &t in &other.tokens {
            self.vocab.check(t)?;
        }
        let mut tokens = self.tokens.clone();
        tokens.extend_from_slice(&other.tokens);
        Ok(Self { tokens, vocab: self.vocab })
    }

    /// First `k` tokens (`seq^(1:k)`), saturating at the full length.
    pub fn prefix(&self, k: usize) -> Self {
        Self { tokens: self.tokens[..k.min(self.tokens.len())].to_vec(), vocab: self.vocab }
    }

    pub fn canonicalize(&self) -> Self {
        Self { tokens: canonical(&self.tokens, self.vocab.eos).to_vec(), vocab: self.vocab }
    }
}

/// Slice view of the canonical form: everything up to and including the
/// first eos.
pub fn canonical(tokens: &[Token], eos: Token) -> &[Token] {
    match tokens.iter().position(|&t| t == eos) {
        Some(p) => &tokens[..=p],
        None => tokens,
    }
}

/// Number of non-eos tokens that follow the first eos. These are the tokens
/// the monotone wrapper penalizes.
pub fn illegal_suffix_len(tokens: &[Token], eos: Token) -> usize {
    match tokens.iter().position(|&t| t == eos) {
        Some(p) => tokens[p + 1..].iter().filter(|&&t| t != eos).count(),
        None => 0,
    }
}

/// Pads two complete sequences with eos so both have length exactly `L`.
pub fn equalize_lengths(a: &TokenSeq, o: &TokenSeq, depth: DepthBound) -> Result<(TokenSeq, TokenSeq)> {
    let l = depth.get();
    for s in [a, o] {
        if !s.is_complete() {
            return Err(Error::Incomplete);
        }
        if s.len() > l {
            return Err(Error::TooLong { len: s.len(), max: l });
        }
    }
    Ok((pad_to(a, l), pad_to(o, l)))
}

fn pad_to(s: &TokenSeq, l: usize) -> TokenSeq {
    let mut tokens = s.tokens.clone();
    tokens.resize(l, s.vocab.eos);
    TokenSeq { tokens, vocab: s.vocab }
}

/// Calls `f` on every complete canonical sequence of length at most
/// `max_len`, in lexicographic token order.
pub fn for_each_complete(vocab: Vocab, max_len: usize, mut f: impl FnMut(&[Token])) {
    let mut buf = Vec::with_capacity(max_len);
    walk_complete(vocab, max_len, &mut buf, &mut f);
}

fn walk_complete(vocab: Vocab, max_len: usize, buf: &mut Vec<Token>, f: &mut impl FnMut(&[Token])) {
    for t in vocab.tokens() {
        if t == vocab.eos() {
            buf.push(t);
            f(buf);
            buf.pop();
        } else if buf.len() + 2 <= max_len {
            buf.push(t);
            walk_complete(vocab, max_len, buf, f);
            buf.pop();
        }
    }
}

/// Calls `f` on every eos-free sequence of length exactly `len`.
pub fn for_each_live(vocab: Vocab, len: usize, mut f: impl FnMut(&[Token])) {
    let mut buf = Vec::with_capacity(len);
    walk_live(vocab, len, &mut buf, &mut f);
}

fn walk_live(vocab: Vocab, len: usize, buf: &mut Vec<Token>, f: &mut impl FnMut(&[Token])) {
    if buf.len() == len {
        f(buf);
        return;
    }
    for t in vocab.non_eos() {
        buf.push(t);
        walk_live(vocab, len, buf, f);
        buf.pop();
    }
}

/// Calls `f` on every token block of length `len` (all tokens, eos included).
pub fn for_each_block(vocab: Vocab, len: usize, mut f: impl FnMut(&[Token])) {
    let mut buf = vec![0 as Token; len];
    let n = vocab.n() as Token;
    loop {
        f(&buf);
        let mut i = len;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            buf[i] += 1;
            if buf[i] < n {
                break;
            }
            buf[i] = 0;
        }
    }
}
