//! Trace CSV emission and parsing.
//!
//! Columns, in order: `t, algo, seed, reward, opt_value, inst_regret,
//! cum_regret, seq_len, ratio_max, ratio_mean, beta, flags`. Floats carry 17
//! significant digits, missing values are empty and flags are joined by `;`.

use crate::error::{Error, Result};
use crate::trace::RunTrace;

pub const TRACE_HEADER: &str = "t,algo,seed,reward,opt_value,inst_regret,cum_regret,seq_len,ratio_max,ratio_mean,beta,flags";
pub const BOUND_HEADER: &str = "t,bound";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Renders a trace; regret columns are empty for rounds without an optimum.
pub fn trace_csv(trace: &RunTrace) -> String {
    let mut s = String::with_capacity(64 * (trace.rounds.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    let mut cum = 0.0;
    for r in &trace.rounds {
        let inst = r.opt_value.map(|o| o - r.utility);
        if let Some(x) = inst {
            cum += x;
        }
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.t,
            trace.algo,
            trace.seed,
            fmt_f64(r.reward),
            opt(r.opt_value),
            opt(inst),
            opt(inst.map(|_| cum)),
            r.seq.len(),
            opt(r.ratio_max),
            opt(r.ratio_mean),
            opt(r.beta),
            r.flags.join(";"),
        ));
    }
    s
}

/// Reference series `scale * c * L * sqrt(d t log t)` for `t = 1..=horizon`.
pub fn bound_series(horizon: usize, scale: f64, c: f64, l: usize, d: usize) -> Vec<f64> {
    (1..=horizon).map(|t| scale * c * l as f64 * (d as f64 * t as f64 * (t as f64).ln()).sqrt()).collect()
}

pub fn bound_csv(series: &[f64]) -> String {
    let mut s = format!("{BOUND_HEADER}\n");
    for (i, b) in series.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, fmt_f64(*b)));
    }
    s
}

/// One parsed trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub algo: String,
    pub seed: u64,
    pub reward: f64,
    pub opt_value: Option<f64>,
    pub inst_regret: Option<f64>,
    pub cum_regret: Option<f64>,
    pub seq_len: usize,
    pub ratio_max: Option<f64>,
    pub ratio_mean: Option<f64>,
    pub beta: Option<f64>,
    pub flags: Vec<String>,
}

fn field<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse { line, msg: format!("bad {name}: {s:?}") })
}

fn opt_field(s: &str, line: usize, name: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        field(s, line, name).map(Some)
    }
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRACE_HEADER => {}
        _ => return Err(Error::Parse { line: 1, msg: "missing or unexpected header".into() }),
    }
    let mut rows = Vec::new();
    for (i, l) in lines {
        let line = i + 1;
        let c: Vec<&str> = l.split(',').collect();
        if c.len() != 12 {
            return Err(Error::Parse { line, msg: format!("expected 12 columns, got {}", c.len()) });
        }
        rows.push(TraceRow {
            t: field(c[0], line, "t")?,
            algo: c[1].to_string(),
            seed: field(c[2], line, "seed")?,
            reward: field(c[3], line, "reward")?,
            opt_value: opt_field(c[4], line, "opt_value")?,
            inst_regret: opt_field(c[5], line, "inst_regret")?,
            cum_regret: opt_field(c[6], line, "cum_regret")?,
            seq_len: field(c[7], line, "seq_len")?,
            ratio_max: opt_field(c[8], line, "ratio_max")?,
            ratio_mean: opt_field(c[9], line, "ratio_mean")?,
            beta: opt_field(c[10], line, "beta")?,
            flags: if c[11].is_empty() { Vec::new() } else { c[11].split(';').map(String::from).collect() },
        });
    }
    Ok(rows)
}
