//! Command-line driver. Exit codes: 0 success, 1 config error, 2 runtime
//! error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tokbandit::assumptions::{check_assumptions, CheckMode};
use tokbandit::bts::{bts_to_tmab, smoothness_profile, tmab_to_bts, BtsInstance};
use tokbandit::ddmc_validate::{aggregate, gen_dump, ingest, stats_csv, stratified_csv, summarize, write_jsonl, Metric};
use tokbandit::decoding::brute_force_opt_supported;
use tokbandit::env::FixedUtilityEnv;
use tokbandit::harness::{build_env, run_experiment, with_threads, EnvClass, Family, RunConfig};
use tokbandit::{Error, Query, Result, SequenceUtility};

#[derive(Parser, Debug)]
#[command(name = "tokbandit", version, about = "Tokenized bandit simulator")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the configured seed list with a single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file for gen-dump).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel cells.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Linear-environment learners and baselines.
    SimulateTlb,
    /// Fixed-query learners and baselines.
    SimulateTmab,
    /// Runs that include a k-lookahead learner.
    SimulateLookahead,
    /// Bucket statistics over a JSONL embedding dump.
    ValidateDdmc {
        #[arg(long)]
        input: PathBuf,
        /// d1, d1_signed, l2 or l<p>.
        #[arg(long, default_value = "d1")]
        metric: String,
        /// Report d1 as a signed inner product.
        #[arg(long)]
        signed: bool,
        #[arg(long, default_value = "dump")]
        dump_id: String,
    },
    /// Tree to bandit (`--input`), or bandit to tree (from `--config`).
    ReduceBts {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Checks monotonicity, SLD and DDMC on the configured instance.
    CheckAssumptions,
    /// Writes a synthetic embedding dump.
    GenDump {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long = "L", default_value_t = 5)]
        l: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        pairs: usize,
    },
}

fn config_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Config { path: path.into(), msg: msg.into() }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| config_err("--config", "this subcommand needs --config"))?;
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.out_path = o.clone();
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

fn simulate(cli: &Cli, class: Option<EnvClass>, need_lookahead: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    if need_lookahead && !cfg.algos.iter().any(|a| a.is_lookahead()) {
        return Err(config_err("algos", "simulate-lookahead needs k_lookahead_eoful or k_lookahead_etc"));
    }
    let summary = with_threads(cli.threads, || run_experiment(&cfg, class))??;
    for (algo, s) in &summary.per_algo {
        println!("{algo}: mean final regret {:.6} over {} seeds", s.mean_final_regret, s.seeds);
    }
    println!("wrote {} cells to {}", summary.cells.len(), cfg.out_path.display());
    Ok(())
}

fn validate_ddmc(cli: &Cli, input: &Path, metric: &str, signed: bool, dump_id: &str) -> Result<()> {
    let mut metric = Metric::parse(metric).map_err(|e| config_err("--metric", e.to_string()))?;
    if signed {
        match &mut metric {
            Metric::D1 { signed, .. } => *signed = true,
            _ => return Err(config_err("--signed", "only applies to d1")),
        }
    }
    let records = ingest(input)?;
    let stats = aggregate(&records, &metric)?;
    let dir = out_dir(cli)?;
    fs::write(dir.join("ddmc_stats.csv"), stats_csv(&stats, dump_id))?;
    fs::write(dir.join("ddmc_stratified.csv"), stratified_csv(&stats, dump_id))?;
    let summary = summarize(&stats, &metric, dump_id);
    write_json(&dir.join("ddmc_summary.json"), serde_json::to_value(&summary)?)?;
    println!("{}: {} records, monotonicity {}", summary.metric, summary.records, summary.monotonicity);
    Ok(())
}

fn reduce_bts(cli: &Cli, input: Option<&Path>) -> Result<()> {
    let dir = out_dir(cli)?;
    match input {
        Some(p) => {
            let tree = BtsInstance::from_json(&fs::read_to_string(p)?)?;
            let env = bts_to_tmab(&tree)?;
            let cap = tokbandit::decoding::DEFAULT_ENUM_CAP;
            let (opt, value) = brute_force_opt_supported(&env, FixedUtilityEnv::QUERY, cap)?;
            let report = serde_json::json!({
                "n": env.vocab().n(),
                "eos": env.vocab().eos(),
                "L": env.depth().get(),
                "optimum": opt.tokens(),
                "value": value,
                "max_leaf": tree.max_leaf(),
                "smoothness": smoothness_profile(&tree).delta,
            });
            write_json(&dir.join("bts_tmab.json"), report)?;
            println!("tmab: n = {}, L = {}, optimum value {value}", env.vocab().n(), env.depth().get());
        }
        None => {
            let cfg = load_config(cli)?;
            let seed = cfg.seeds[0];
            let env = build_env(&cfg, EnvClass::Fixed, seed)?;
            let tree = tmab_to_bts(env.utility(), FixedUtilityEnv::QUERY, cfg.enum_cap)?;
            fs::write(dir.join("tree.json"), tree.to_json())?;
            println!("tree: arity {}, depth {}, max leaf {}", tree.arity(), tree.depth(), tree.max_leaf());
        }
    }
    Ok(())
}

fn assumptions(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let class = EnvClass::infer(&cfg);
    let env = build_env(&cfg, class, cfg.seeds[0])?;
    let u: &dyn SequenceUtility = env.utility();
    let eps = (cfg.family == Family::Affine).then(|| cfg.eps());
    let k = (cfg.family == Family::KDdmc).then_some(cfg.k);
    let report = check_assumptions(u, Query(0), CheckMode::default(), eps, k)?;
    let dir = out_dir(cli)?;
    write_json(&dir.join("assumptions.json"), serde_json::to_value(&report)?)?;
    println!(
        "monotone {} sld {} ddmc {}{}",
        report.monotonicity.passed,
        report.sld.passed,
        report.ddmc.passed,
        report.k_ddmc.as_ref().map(|(k, r)| format!(" {k}-ddmc {}", r.passed)).unwrap_or_default()
    );
    Ok(())
}

fn dump(cli: &Cli, n: usize, l: usize, d: usize, eps: f64, pairs: usize) -> Result<()> {
    let records = gen_dump(n, l, d, eps, pairs, cli.seed.unwrap_or(0))?;
    let path = cli.out.clone().unwrap_or_else(|| PathBuf::from("dump.jsonl"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_jsonl(&path, &records)?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SimulateTlb => simulate(cli, Some(EnvClass::Linear), false),
        Command::SimulateTmab => simulate(cli, Some(EnvClass::Fixed), false),
        Command::SimulateLookahead => simulate(cli, None, true),
        Command::ValidateDdmc { input, metric, signed, dump_id } => validate_ddmc(cli, input, metric, *signed, dump_id),
        Command::ReduceBts { input } => reduce_bts(cli, input.as_deref()),
        Command::CheckAssumptions => assumptions(cli),
        Command::GenDump { n, l, d, eps, pairs } => dump(cli, *n, *l, *d, *eps, *pairs),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
