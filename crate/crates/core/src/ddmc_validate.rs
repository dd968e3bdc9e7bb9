//! Empirical DDMC validation on paired prefix-embedding dumps: suffix
//! grouping, distance metrics, streaming bucket statistics, and a synthetic
//! dump generator.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::affine::{random_unit_theta, AffineLevelRule, AffineUtility};
use crate::env::embed_with_target;
use crate::error::{Error, Result};
use crate::hash::mix;
use crate::seq::{DepthBound, Token};
use crate::stats::Welford;
use crate::utility::{Embedding, Query, SequenceUtility};

/// One paired prefix row of a dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub pair_id: String,
    pub prefix_len: usize,
    pub common_suffix: usize,
    pub emb_x: Vec<f64>,
    pub emb_y: Vec<f64>,
}

/// `(k, common suffix length of x^(1:k) and y^(1:k))` for `k = 1..=|x|`.
pub fn group_by_common_suffix<T: PartialEq>(x: &[T], y: &[T]) -> Result<Vec<(usize, usize)>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    Ok((1..=x.len())
        .map(|k| (k, x[..k].iter().rev().zip(y[..k].iter().rev()).take_while(|(a, b)| a == b).count()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `<theta, x - y>`, with `theta = 1` when absent; absolute value unless
    /// `signed`.
    D1 { theta: Option<Vec<f64>>, signed: bool },
    L2,
    Lp(f64),
}

impl Metric {
    pub fn d1() -> Self {
        Metric::D1 { theta: None, signed: false }
    }

    pub fn name(&self) -> String {
        match self {
            Metric::D1 { signed: false, .. } => "d1".into(),
            Metric::D1 { signed: true, .. } => "d1_signed".into(),
            Metric::L2 => "l2".into(),
            Metric::Lp(p) => format!("l{p}"),
        }
    }

    /// Parses `d1`, `d1_signed`, `l2` or `l<p>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "d1" => Ok(Metric::d1()),
            "d1_signed" => Ok(Metric::D1 { theta: None, signed: true }),
            "l2" => Ok(Metric::L2),
            _ => s
                .strip_prefix('l')
                .and_then(|p| p.parse::<f64>().ok())
                .filter(|p| *p >= 1.0)
                .map(Metric::Lp)
                .ok_or_else(|| Error::InvalidParam(format!("unknown metric {s:?}"))),
        }
    }
}

pub fn distance(ex: &[f64], ey: &[f64], metric: &Metric) -> Result<f64> {
    if ex.len() != ey.len() {
        return Err(Error::DimensionMismatch { expected: ex.len(), got: ey.len() });
    }
    let diff = ex.iter().zip(ey).map(|(a, b)| a - b);
    Ok(match metric {
        Metric::D1 { theta, signed } => {
            let v = match theta {
                Some(t) if t.len() != ex.len() => return Err(Error::DimensionMismatch { expected: ex.len(), got: t.len() }),
                Some(t) => diff.zip(t).map(|(d, w)| d * w).sum(),
                None => diff.sum::<f64>(),
            };
            if *signed {
                v
            } else {
                v.abs()
            }
        }
        Metric::L2 => diff.map(|d| d * d).sum::<f64>().sqrt(),
        Metric::Lp(p) => diff.map(|d| d.abs().powf(*p)).sum::<f64>().powf(1.0 / p),
    })
}

/// Parses JSONL records; blank lines are skipped and errors carry 1-based
/// line numbers.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<EmbeddingRecord>> {
    let mut out = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: no, msg: e.to_string() })?;
        let bad = |msg: String| Error::Parse { line: no, msg };
        if rec.emb_x.len() != rec.emb_y.len() {
            return Err(bad(format!("emb_x has {} entries, emb_y has {}", rec.emb_x.len(), rec.emb_y.len())));
        }
        if let Some(d) = dim {
            if rec.emb_x.len() != d {
                return Err(bad(format!("embedding dimension {} differs from {d} earlier in the file", rec.emb_x.len())));
            }
        }
        if rec.prefix_len == 0 || rec.common_suffix > rec.prefix_len {
            return Err(bad(format!(
                "need prefix_len >= 1 and common_suffix <= prefix_len, got {} and {}",
                rec.prefix_len, rec.common_suffix
            )));
        }
        dim = Some(rec.emb_x.len());
        out.push(rec);
    }
    Ok(out)
}

pub fn ingest(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    parse_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_jsonl(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Per-bucket distance statistics, pooled and stratified by prefix length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuffixStats {
    pub metric: String,
    pub records: u64,
    pub buckets: BTreeMap<usize, Welford>,
    pub by_prefix_len: BTreeMap<usize, BTreeMap<usize, Welford>>,
}

/// Fraction of adjacent buckets `(s, s + 1)` with `mean(s + 1) <= mean(s)`;
/// 1 when no adjacent pair exists.
pub fn monotonicity_score(buckets: &BTreeMap<usize, Welford>) -> f64 {
    let mut pairs = 0usize;
    let mut good = 0usize;
    for (s, w) in buckets {
        if let Some(next) = buckets.get(&(s + 1)) {
            pairs += 1;
            if next.mean() <= w.mean() {
                good += 1;
            }
        }
    }
    if pairs == 0 {
        1.0
    } else {
        good as f64 / pairs as f64
    }
}

impl SuffixStats {
    pub fn monotonicity(&self) -> f64 {
        monotonicity_score(&self.buckets)
    }

    /// Merges another accumulator over the same metric.
    pub fn merge(&mut self, other: &SuffixStats) {
        self.records += other.records;
        for (b, w) in &other.buckets {
            self.buckets.entry(*b).or_default().merge(w);
        }
        for (k, m) in &other.by_prefix_len {
            let dst = self.by_prefix_len.entry(*k).or_default();
            for (b, w) in m {
                dst.entry(*b).or_default().merge(w);
            }
        }
    }
}

pub fn aggregate<'a>(records: impl IntoIterator<Item = &'a EmbeddingRecord>, metric: &Metric) -> Result<SuffixStats> {
    let mut stats =
        SuffixStats { metric: metric.name(), records: 0, buckets: BTreeMap::new(), by_prefix_len: BTreeMap::new() };
    for r in records {
        let x = distance(&r.emb_x, &r.emb_y, metric)?;
        stats.records += 1;
        stats.buckets.entry(r.common_suffix).or_default().push(x);
        stats.by_prefix_len.entry(r.prefix_len).or_default().entry(r.common_suffix).or_default().push(x);
    }
    if stats.records == 0 {
        return Err(Error::Empty("no embedding records".into()));
    }
    Ok(stats)
}

pub const STATS_HEADER: &str = "bucket,count,mean,variance,metric,dump_id";

/// Pooled rows in the documented column order.
pub fn stats_csv(stats: &SuffixStats, dump_id: &str) -> String {
    let mut s = String::from(STATS_HEADER);
    s.push('\n');
    for (b, w) in &stats.buckets {
        s.push_str(&format!("{b},{},{:.16e},{:.16e},{},{dump_id}\n", w.count(), w.mean(), w.variance(), stats.metric));
    }
    s
}

/// Stratified rows: the pooled columns plus `prefix_len`.
pub fn stratified_csv(stats: &SuffixStats, dump_id: &str) -> String {
    let mut s = format!("{STATS_HEADER},prefix_len\n");
    for (k, m) in &stats.by_prefix_len {
        for (b, w) in m {
            s.push_str(&format!(
                "{b},{},{:.16e},{:.16e},{},{dump_id},{k}\n",
                w.count(),
                w.mean(),
                w.variance(),
                stats.metric
            ));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub dump_id: String,
    pub metric: String,
    /// Whether d1 is reported as a signed inner product.
    pub d1_signed: bool,
    pub records: u64,
    pub monotonicity: f64,
    pub monotonicity_by_prefix_len: BTreeMap<usize, f64>,
}

pub fn summarize(stats: &SuffixStats, metric: &Metric, dump_id: &str) -> StatsSummary {
    StatsSummary {
        dump_id: dump_id.to_string(),
        metric: stats.metric.clone(),
        d1_signed: matches!(metric, Metric::D1 { signed: true, .. }),
        records: stats.records,
        monotonicity: stats.monotonicity(),
        monotonicity_by_prefix_len: stats.by_prefix_len.iter().map(|(k, m)| (*k, monotonicity_score(m))).collect(),
    }
}

/// Synthetic dump from an affine instance realized with no orthogonal
/// component. Each pair is `(a:s, b:s)` with distinct first tokens and a
/// shared suffix drawn from tokens that strictly contract the gap; its
/// length-`k` prefixes share `k - 1` trailing tokens.
pub fn gen_dump(n: usize, l: usize, d: usize, eps: f64, pairs: usize, seed: u64) -> Result<Vec<EmbeddingRecord>> {
    if n < 3 {
        return Err(Error::InvalidParam("need at least two non-eos tokens besides a safe one (n >= 3)".into()));
    }
    let depth = DepthBound::new(l)?;
    let rule = AffineLevelRule::generate(n, depth, eps, seed)?;
    let contracting: Vec<Vec<Token>> =
        rule.alpha.iter().map(|row| rule.vocab.non_eos().filter(|&t| row[t as usize] < 1.0).collect()).collect();
    let utility: Arc<dyn SequenceUtility> = Arc::new(AffineUtility::new(rule, depth));
    let theta = random_unit_theta(d, seed);
    let emb = embed_with_target(utility, theta, 1.0, 0.0, mix(seed, 0xD0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xD1));
    let m = n as Token - 1;
    let len = l - 1;
    let mut out = Vec::with_capacity(pairs * len);
    for p in 0..pairs {
        let a = rng.random_range(0..m);
        let b = (a + rng.random_range(1..m)) % m;
        let suffix: Vec<Token> = (1..len).map(|k| contracting[k][rng.random_range(0..contracting[k].len())]).collect();
        let x: Vec<Token> = std::iter::once(a).chain(suffix.iter().copied()).collect();
        let y: Vec<Token> = std::iter::once(b).chain(suffix.iter().copied()).collect();
        let q = Query(p as u32);
        for (k, common) in group_by_common_suffix(&x, &y)? {
            out.push(EmbeddingRecord {
                pair_id: format!("p{p}"),
                prefix_len: k,
                common_suffix: common,
                emb_x: to_vec(emb.embed(q, &x[..k])),
                emb_y: to_vec(emb.embed(q, &y[..k])),
            });
        }
    }
    Ok(out)
}

fn to_vec(v: DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}
