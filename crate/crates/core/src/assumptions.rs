//! Enumerative and sampled checks of the structural assumptions: monotone
//! eos handling, single-level deviation, and (k-)DDMC.
//!
//! DDMC pairs range over same-length live (eos-free) sequences `y != z`;
//! appended blocks may contain eos and are evaluated on the canonical form,
//! so `y:eos:b` is scored as `y:eos`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq::{canonical, for_each_block, for_each_complete, for_each_live, Token};
use crate::utility::{Query, SequenceUtility};

/// Default cap on the number of unordered sequence pairs in exhaustive mode.
pub const DEFAULT_PAIR_CAP: u128 = 1_000_000;

pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    Exhaustive { cap: u128 },
    Sampled { budget: usize, seed: u64 },
}

impl Default for CheckMode {
    fn default() -> Self {
        CheckMode::Exhaustive { cap: DEFAULT_PAIR_CAP }
    }
}

/// A concrete violation: `|u(y:tail) - u(z:tail)| = lhs > rhs = |u(y) - u(z)|`
/// for DDMC, or the offending sequence for the other checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub y: Vec<Token>,
    pub z: Vec<Token>,
    pub tail: Vec<Token>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    pub checked: u64,
    /// Smallest observed `rhs - lhs` (zero slack means equality somewhere).
    pub min_slack: f64,
    pub witness: Option<Witness>,
}

impl CheckResult {
    fn new() -> Self {
        Self { passed: true, checked: 0, min_slack: f64::INFINITY, witness: None }
    }

    fn record(&mut self, lhs: f64, rhs: f64, tol: f64, witness: impl FnOnce() -> Witness) {
        self.note(rhs - lhs, lhs > rhs + tol, witness);
    }

    fn note(&mut self, slack: f64, violated: bool, witness: impl FnOnce() -> Witness) {
        self.checked += 1;
        if slack < self.min_slack {
            self.min_slack = slack;
        }
        if violated && self.passed {
            self.passed = false;
            self.witness = Some(witness());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SldResult {
    pub passed: bool,
    /// Largest spread of `u(y:tau:eos)` over `tau` at any live prefix `y`.
    pub max_spread: f64,
    pub eps: Option<f64>,
    pub witness: Option<Vec<Token>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub monotonicity: CheckResult,
    pub sld: SldResult,
    pub ddmc: CheckResult,
    /// Present when a block length `k >= 2` was requested.
    pub k_ddmc: Option<(usize, CheckResult)>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.monotonicity.passed
            && self.sld.passed
            && self.ddmc.passed
            && self.k_ddmc.as_ref().is_none_or(|(_, r)| r.passed)
    }
}

/// Runs every check for query `q`. `eps` is the claimed SLD bound (the check
/// only reports the spread when absent); `k` adds a k-DDMC check.
pub fn check_assumptions<U: SequenceUtility + ?Sized>(
    u: &U,
    q: Query,
    mode: CheckMode,
    eps: Option<f64>,
    k: Option<usize>,
) -> Result<AssumptionReport> {
    let monotonicity = check_monotone(u, q, mode, DEFAULT_TOL)?;
    let sld = check_sld(u, q, mode, eps, DEFAULT_TOL)?;
    let ddmc = check_ddmc(u, q, 1, mode, DEFAULT_TOL)?;
    let k_ddmc = match k {
        Some(k) if k >= 2 => Some((k, check_ddmc(u, q, k, mode, DEFAULT_TOL)?)),
        _ => None,
    };
    Ok(AssumptionReport { monotonicity, sld, ddmc, k_ddmc })
}

fn eval<U: SequenceUtility + ?Sized>(u: &U, q: Query, y: &[Token], tail: &[Token], buf: &mut Vec<Token>) -> f64 {
    buf.clear();
    buf.extend_from_slice(y);
    buf.extend_from_slice(tail);
    let eos = u.vocab().eos();
    let c = canonical(buf, eos).len();
    u.utility(q, &buf[..c])
}

fn pair_count(m: u128, max_len: usize) -> u128 {
    let mut total: u128 = 0;
    let mut w: u128 = 1;
    for _ in 0..=max_len {
        total = total.saturating_add(w.saturating_mul(w.saturating_sub(1)) / 2);
        w = w.saturating_mul(m);
    }
    total
}

/// k-DDMC: `|u(y:a) - u(z:a)| <= |u(y) - u(z)| + tol` for same-length live
/// `y != z` with `|y| + k <= L` and every block `a` of length `k`.
pub fn check_ddmc<U: SequenceUtility + ?Sized>(u: &U, q: Query, k: usize, mode: CheckMode, tol: f64) -> Result<CheckResult> {
    let vocab = u.vocab();
    let l = u.depth().get();
    if k == 0 || k > l {
        return Err(Error::InvalidParam(format!("block length k = {k} must be in [1, L]")));
    }
    let max_len = l - k;
    let mut res = CheckResult::new();
    let mut buf = Vec::with_capacity(l + 1);
    match mode {
        CheckMode::Exhaustive { cap } => {
            let needed = pair_count((vocab.n() - 1) as u128, max_len);
            if needed > cap {
                return Err(Error::CapExceeded { needed, cap });
            }
            let mut blocks: Vec<Vec<Token>> = Vec::new();
            for_each_block(vocab, k, |b| blocks.push(b.to_vec()));
            for len in 0..=max_len {
                let mut seqs: Vec<(Vec<Token>, f64)> = Vec::new();
                for_each_live(vocab, len, |s| seqs.push((s.to_vec(), u.utility(q, s))));
                for i in 0..seqs.len() {
                    for j in i + 1..seqs.len() {
                        let (y, uy) = &seqs[i];
                        let (z, uz) = &seqs[j];
                        let rhs = (uy - uz).abs();
                        for a in &blocks {
                            let lhs = (eval(u, q, y, a, &mut buf) - eval(u, q, z, a, &mut buf)).abs();
                            res.record(lhs, rhs, tol, || Witness {
                                y: y.clone(),
                                z: z.clone(),
                                tail: a.clone(),
                                lhs,
                                rhs,
                            });
                        }
                    }
                }
            }
        }
        CheckMode::Sampled { budget, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = vocab.n() as Token - 1;
            let non_eos: Vec<Token> = vocab.non_eos().collect();
            if m < 2 && max_len == 0 {
                return Ok(res);
            }
            for _ in 0..budget {
                let len = rng.random_range(0..=max_len);
                let y: Vec<Token> = (0..len).map(|_| non_eos[rng.random_range(0..non_eos.len())]).collect();
                let z: Vec<Token> = (0..len).map(|_| non_eos[rng.random_range(0..non_eos.len())]).collect();
                if y == z {
                    continue;
                }
                let a: Vec<Token> = (0..k).map(|_| rng.random_range(0..vocab.n() as Token)).collect();
                let rhs = (u.utility(q, &y) - u.utility(q, &z)).abs();
                let lhs = (eval(u, q, &y, &a, &mut buf) - eval(u, q, &z, &a, &mut buf)).abs();
                res.record(lhs, rhs, tol, || Witness { y: y.clone(), z: z.clone(), tail: a.clone(), lhs, rhs });
            }
        }
    }
    Ok(res)
}

/// Eos handling: `u(y:eos) = u(y)` for complete `y`, and `u(y:tau) <= u(y)`
/// for non-eos `tau`, strictly whenever `u(y) > 0`.
pub fn check_monotone<U: SequenceUtility + ?Sized>(u: &U, q: Query, mode: CheckMode, tol: f64) -> Result<CheckResult> {
    let vocab = u.vocab();
    let l = u.depth().get();
    let eos = vocab.eos();
    let mut res = CheckResult::new();
    let check = |y: &[Token], res: &mut CheckResult| {
        let base = u.utility(q, y);
        let mut ext = y.to_vec();
        ext.push(eos);
        let same = u.utility(q, &ext);
        let diff = (same - base).abs();
        res.record(diff, 0.0, tol, || Witness { y: y.to_vec(), z: vec![], tail: vec![eos], lhs: same, rhs: base });
        for tau in vocab.non_eos() {
            *ext.last_mut().unwrap() = tau;
            let after = u.utility(q, &ext);
            let violated = if base > tol { after >= base } else { after > base + tol };
            res.note(base - after, violated, || Witness { y: y.to_vec(), z: vec![], tail: vec![tau], lhs: after, rhs: base });
        }
    };
    match mode {
        CheckMode::Exhaustive { cap } => {
            let needed = vocab.complete_count(l - 1);
            if needed > cap {
                return Err(Error::CapExceeded { needed, cap });
            }
            for_each_complete(vocab, l - 1, |y| check(y, &mut res));
        }
        CheckMode::Sampled { budget, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let non_eos: Vec<Token> = vocab.non_eos().collect();
            for _ in 0..budget {
                let len = rng.random_range(0..l - 1);
                let mut y: Vec<Token> = (0..len).map(|_| non_eos[rng.random_range(0..non_eos.len())]).collect();
                y.push(eos);
                check(&y, &mut res);
            }
        }
    }
    Ok(res)
}

/// Largest spread of eos-terminated candidate values at a single level.
pub fn check_sld<U: SequenceUtility + ?Sized>(
    u: &U,
    q: Query,
    mode: CheckMode,
    eps: Option<f64>,
    tol: f64,
) -> Result<SldResult> {
    let vocab = u.vocab();
    let l = u.depth().get();
    let eos = vocab.eos();
    let mut max_spread: f64 = 0.0;
    let mut witness: Option<Vec<Token>> = None;
    let mut buf = Vec::with_capacity(l + 1);
    let mut visit = |y: &[Token]| {
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for tau in vocab.tokens() {
            let v = if tau == eos { eval(u, q, y, &[eos], &mut buf) } else { eval(u, q, y, &[tau, eos], &mut buf) };
            hi = hi.max(v);
            lo = lo.min(v);
        }
        if hi - lo > max_spread {
            max_spread = hi - lo;
            witness = Some(y.to_vec());
        }
    };
    // Tail `tau:eos` must fit: |y| + 2 <= L.
    let max_len = l.saturating_sub(2);
    match mode {
        CheckMode::Exhaustive { cap } => {
            let m = (vocab.n() - 1) as u128;
            let needed: u128 = (0..=max_len).map(|j| m.saturating_pow(j as u32)).fold(0u128, |a, b| a.saturating_add(b));
            if needed > cap {
                return Err(Error::CapExceeded { needed, cap });
            }
            for len in 0..=max_len {
                for_each_live(vocab, len, &mut visit);
            }
        }
        CheckMode::Sampled { budget, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let non_eos: Vec<Token> = vocab.non_eos().collect();
            for _ in 0..budget {
                let len = rng.random_range(0..=max_len);
                let y: Vec<Token> = (0..len).map(|_| non_eos[rng.random_range(0..non_eos.len())]).collect();
                visit(&y);
            }
        }
    }
    let passed = eps.is_none_or(|e| max_spread <= e + tol);
    let witness = if passed { None } else { witness };
    Ok(SldResult { passed, max_spread, eps, witness })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::affine::{AffineLevelRule, AffineUtility};
    use crate::seq::{DepthBound, Vocab};
    use crate::utility::FnUtility;

    #[test]
    fn affine_env_passes_everything() {
        let depth = DepthBound::new(3).unwrap();
        let u = AffineUtility::new(AffineLevelRule::generate(3, depth, 0.1, 1).unwrap(), depth);
        let r = check_assumptions(&u, Query(0), CheckMode::default(), Some(0.1), None).unwrap();
        assert!(r.all_passed(), "{r:?}");
        assert!(r.ddmc.checked > 0);
    }

    #[test]
    fn expanding_alpha_is_caught_with_witness() {
        let v = Vocab::with_trailing_eos(3).unwrap();
        let rule = AffineLevelRule::new(
            v,
            0.5,
            vec![vec![0.8, 0.6, 1.0], vec![1.5, 0.5, 1.0]],
            vec![vec![0.0, 0.2, 0.0], vec![-0.2, 0.1, 0.0]],
            1.0,
        )
        .unwrap();
        let u = AffineUtility::new(rule.clone(), DepthBound::new(3).unwrap());
        let r = check_ddmc(&u, Query(0), 1, CheckMode::default(), DEFAULT_TOL).unwrap();
        assert!(!r.passed);
        let w = r.witness.unwrap();
        assert_eq!(w.tail, vec![0]);
        assert!(w.lhs > w.rhs);
        let direct = (rule.canonical_value(&[w.y[0], 0]) - rule.canonical_value(&[w.z[0], 0])).abs();
        assert!((direct - w.lhs).abs() < 1e-15);
    }

    #[test]
    fn constant_utility_has_zero_slack() {
        let v = Vocab::with_trailing_eos(3).unwrap();
        let u = FnUtility::fixed(v, DepthBound::new(3).unwrap(), |s| {
            let c = canonical(s, 2);
            if c.len() < s.len() && s[c.len()..].iter().any(|&t| t != 2) {
                0.1
            } else {
                0.4
            }
        });
        let d = check_ddmc(&u, Query(0), 1, CheckMode::default(), DEFAULT_TOL).unwrap();
        assert!(d.passed);
        assert_eq!(d.min_slack, 0.0);
        let m = check_monotone(&u, Query(0), CheckMode::default(), DEFAULT_TOL).unwrap();
        assert!(m.passed);
    }

    #[test]
    fn monotonicity_violation_is_reported() {
        let v = Vocab::with_trailing_eos(3).unwrap();
        // Appending a token after eos does not lower the value.
        let u = FnUtility::fixed(v, DepthBound::new(3).unwrap(), |_| 0.4);
        let m = check_monotone(&u, Query(0), CheckMode::default(), DEFAULT_TOL).unwrap();
        assert!(!m.passed);
        assert!(m.witness.is_some());
    }

    #[test]
    fn sampled_mode_agrees_on_violations() {
        let v = Vocab::with_trailing_eos(3).unwrap();
        let rule = AffineLevelRule::new(
            v,
            0.5,
            vec![vec![0.8, 0.6, 1.0], vec![1.5, 1.5, 1.0]],
            vec![vec![0.0, 0.2, 0.0], vec![-0.2, -0.2, 0.0]],
            1.0,
        )
        .unwrap();
        let u = AffineUtility::new(rule, DepthBound::new(3).unwrap());
        let r = check_ddmc(&u, Query(0), 1, CheckMode::Sampled { budget: 2000, seed: 3 }, DEFAULT_TOL).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn exhaustive_cap() {
        let v = Vocab::with_trailing_eos(8).unwrap();
        let u = FnUtility::fixed(v, DepthBound::new(8).unwrap(), |_| 0.0);
        let r = check_ddmc(&u, Query(0), 1, CheckMode::Exhaustive { cap: 1000 }, DEFAULT_TOL);
        assert!(matches!(r, Err(Error::CapExceeded { .. })));
    }
}
