//! Command-line driver: instance generation, experiment runs, offline
//! best-of-N analysis, verification suites, and query-log replay.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sharpen_cli::config::{
    load_instance, save_instance, Algorithm, ClassChoice, ExperimentConfig, InstanceSpec,
};
use sharpen_cli::{analyze, experiment, records, verify};
use sharpen_core::decode::SelfReward;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "sharpen", version, about = "Self-training experiments on exactly solvable models")]
struct Cli {
    /// Worker threads for data-parallel loops (also honors SHARPEN_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file plus its ground-truth sidecar.
    GenInstance(GenInstanceArgs),
    /// Run an experiment described by a TOML config (flags override).
    Run(RunArgs),
    /// Analyze a JSONL file of completion records.
    BonAnalyze(BonAnalyzeArgs),
    /// Run a named verification suite (or `all`).
    Verify(VerifyArgs),
    /// Re-derive best-of-N selections from a persisted query log and check
    /// them against an instance's base model.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct GenInstanceArgs {
    /// Instance kind: random-tabular | lower-bound | separation | maxcut |
    /// representational.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the instance JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    prompts: usize,
    #[arg(long, default_value_t = 8)]
    responses: usize,
    /// Planted-prompt count for the lower-bound family.
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Non-null response count for the lower-bound family.
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 0.5)]
    delta_mass: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Feature dimension for the separation instance.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 64)]
    y_size: usize,
    #[arg(long, default_value_t = 200.0)]
    bound: f64,
    /// Vertex count for the max-cut instance.
    #[arg(long, default_value_t = 4)]
    vertices: usize,
    /// Edges as `u-v` pairs, e.g. `--edges 0-1 1-2 0-2`.
    #[arg(long, num_args = 0.., value_parser = parse_edge)]
    edges: Vec<(usize, usize)>,
    /// Vocabulary size for the representational example.
    #[arg(long, default_value_t = 100)]
    n: usize,
}

fn parse_edge(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once('-').ok_or_else(|| format!("edge {s:?} is not u-v"))?;
    Ok((
        a.parse().map_err(|e| format!("{e}"))?,
        b.parse().map_err(|e| format!("{e}"))?,
    ))
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm override: sft | ada-sft | dpo | xpo | inference-bon.
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// Seed list override.
    #[arg(long, num_args = 0..)]
    seed: Vec<u64>,
    /// Instance file (overrides the config's instance block).
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<u64>,
    /// Best-of-N width.
    #[arg(long)]
    n_draws: Option<u64>,
    /// N*; expands to `ceil(n_star ln(2/delta))`.
    #[arg(long)]
    n_star: Option<f64>,
    #[arg(long)]
    mu_stop: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Candidate class: instance | tabular | bon-ladder | tilt-ladder.
    #[arg(long)]
    class: Option<String>,
}

#[derive(Args)]
struct BonAnalyzeArgs {
    /// JSONL file of completion records.
    #[arg(long)]
    file: PathBuf,
    /// Subsample sizes.
    #[arg(long, num_args = 1.., default_values_t = vec![1u64, 2, 5, 10, 20, 50])]
    n: Vec<u64>,
    /// Rewards: log_likelihood | length_normalized | majority | external_label.
    #[arg(long, num_args = 1.., default_values_t = vec!["log_likelihood".to_string()])]
    reward: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Baseline accuracy for the lift columns (e.g. greedy accuracy).
    #[arg(long)]
    baseline: Option<f64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite name (see `verify list`) or `all`.
    suite: String,
}

#[derive(Args)]
struct ReplayArgs {
    /// Query log exported by a run.
    #[arg(long)]
    log: PathBuf,
    /// Instance file whose base model produced the log.
    #[arg(long)]
    instance: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("SHARPEN_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        configure_threads(t);
    }
    match dispatch(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

fn configure_threads(t: usize) {
    sharpen_core::exec::configure_threads(t);
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::GenInstance(args) => gen_instance(args),
        Command::Run(args) => run(args),
        Command::BonAnalyze(args) => bon_analyze(args),
        Command::Verify(args) => run_verify(args),
        Command::Replay(args) => replay(args),
    }
}

fn gen_instance(args: GenInstanceArgs) -> Result<i32> {
    let spec = match args.kind.as_str() {
        "random-tabular" => InstanceSpec::RandomTabular {
            prompts: args.prompts,
            responses: args.responses,
            margin_range: None,
            c_cov_range: None,
        },
        "lower-bound" => InstanceSpec::LowerBound {
            d: args.d,
            m: args.m,
            delta_mass: args.delta_mass,
            gamma: args.gamma,
        },
        "separation" => InstanceSpec::Separation {
            d: args.dim,
            y_size: args.y_size,
            bound: args.bound,
        },
        "maxcut" => InstanceSpec::Maxcut { vertices: args.vertices, edges: args.edges },
        "representational" => InstanceSpec::Representational { n: args.n, bound: None },
        other => bail!("unknown instance kind {other:?}"),
    };
    let instance = spec.build(args.seed)?;
    save_instance(&instance, &args.out)?;
    println!(
        "wrote {} (c_cov {:.4}, margin {:.4})",
        args.out.display(),
        instance.truth.c_cov,
        instance.truth.margin_max
    );
    Ok(0)
}

fn run(args: RunArgs) -> Result<i32> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig {
            algorithm: Algorithm::Sft,
            seeds: vec![0],
            instance_seed: 0,
            output_dir: None,
            instance: InstanceSpec::RandomTabular {
                prompts: 2,
                responses: 8,
                margin_range: None,
                c_cov_range: None,
            },
            hyper: Default::default(),
        },
    };
    if let Some(a) = args.algorithm {
        config.algorithm = a;
    }
    if !args.seed.is_empty() {
        config.seeds = args.seed.clone();
    }
    if let Some(path) = args.instance {
        config.instance = InstanceSpec::File { path };
    }
    if let Some(out) = args.out {
        config.output_dir = Some(out);
    }
    let h = &mut config.hyper;
    if let Some(v) = args.n {
        h.n = v;
    }
    if let Some(v) = args.n_draws {
        h.n_draws = v;
    }
    if args.n_star.is_some() {
        h.n_star = args.n_star;
    }
    if let Some(v) = args.mu_stop {
        h.mu_stop = v;
    }
    if let Some(v) = args.beta {
        h.beta = v;
    }
    if let Some(v) = args.alpha {
        h.alpha = v;
    }
    if let Some(v) = args.iterations {
        h.iterations = v;
    }
    if let Some(v) = args.delta {
        h.delta = v;
    }
    if let Some(v) = args.gamma {
        h.gamma = v;
    }
    if let Some(v) = args.epsilon {
        h.epsilon = v;
    }
    if let Some(v) = args.rho {
        h.rho = v;
    }
    if let Some(c) = args.class {
        h.class = match c.as_str() {
            "instance" => ClassChoice::Instance,
            "tabular" => ClassChoice::Tabular,
            "bon-ladder" => ClassChoice::BonLadder,
            "tilt-ladder" => ClassChoice::TiltLadder,
            other => bail!("unknown class choice {other:?}"),
        };
    }

    let report = experiment::run_experiment(&config)?;
    let dir = config.resolved_output_dir();
    println!(
        "{} seeds, {} ok, success rate {:.3}; report under {}",
        report.per_seed.len(),
        report.per_seed.iter().filter(|s| s.ok).count(),
        report.aggregate_success_rate,
        dir.display()
    );
    Ok(if report.all_ok() { 0 } else { 1 })
}

fn bon_analyze(args: BonAnalyzeArgs) -> Result<i32> {
    let records = records::read_records_file(&args.file)?;
    let rewards = args
        .reward
        .iter()
        .map(|r| parse_reward(r))
        .collect::<Result<Vec<_>>>()?;
    let request = analyze::AnalyzeRequest {
        ns: args.n,
        rewards,
        seed: args.seed,
        baseline: args.baseline,
        bootstrap: 1000,
    };
    let report = analyze::bon_analyze(&records, &request)?;
    let csv = analyze::to_csv(&report);
    match args.out {
        Some(path) => {
            std::fs::write(&path, csv)?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

fn parse_reward(s: &str) -> Result<SelfReward> {
    Ok(match s {
        "log_likelihood" => SelfReward::LogLikelihood,
        "length_normalized" => SelfReward::LengthNormalized,
        "majority" => SelfReward::Majority,
        "external_label" => SelfReward::ExternalLabel,
        other => bail!("unknown reward {other:?}"),
    })
}

fn run_verify(args: VerifyArgs) -> Result<i32> {
    if args.suite == "list" {
        for name in verify::SUITES {
            println!("{name}");
        }
        return Ok(0);
    }
    let results = if args.suite == "all" {
        verify::run_all()?
    } else {
        vec![verify::run_suite(&args.suite)?]
    };
    let mut all_pass = true;
    for suite in &results {
        for check in &suite.checks {
            println!(
                "[{}] {}: {}",
                if check.pass { "PASS" } else { "FAIL" },
                check.name,
                check.measured
            );
            all_pass &= check.pass;
        }
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn replay(args: ReplayArgs) -> Result<i32> {
    let instance = load_instance(&args.instance)?;
    let text = std::fs::read_to_string(&args.log)
        .with_context(|| format!("reading {}", args.log.display()))?;
    let log = sharpen_core::oracle::parse_log(&text)
        .map_err(|e| anyhow::anyhow!("parsing log: {e}"))?;
    let mut groups: std::collections::BTreeMap<u64, Vec<&sharpen_core::oracle::QueryRecord>> =
        Default::default();
    let mut mismatches = 0usize;
    for rec in &log {
        let expect = instance.base.logprob(rec.prompt, rec.response)?;
        if expect.to_bits() != rec.logprob.to_bits() {
            mismatches += 1;
        }
        groups.entry(rec.group).or_default().push(rec);
    }
    let mut selections = Vec::new();
    for (group, recs) in &groups {
        let items: Vec<sharpen_core::decode::BonCandidate<usize>> = recs
            .iter()
            .map(|r| sharpen_core::decode::BonCandidate::new(r.response, r.logprob, 1))
            .collect();
        let sel = sharpen_core::decode::bon_select(&items, SelfReward::LogLikelihood)
            .map_err(|e| anyhow::anyhow!("group {group}: {e}"))?;
        selections.push((*group, items[sel].item));
    }
    println!(
        "replayed {} groups ({} queries), {} logprob mismatches",
        groups.len(),
        log.len(),
        mismatches
    );
    for (group, pick) in selections.iter().take(10) {
        println!("group {group}: best-of-group response {pick}");
    }
    if selections.len() > 10 {
        println!("... {} more groups", selections.len() - 10);
    }
    Ok(if mismatches == 0 { 0 } else { 1 })
}
