//! `moesim` command-line front end.
//!
//! Exit codes: 0 on success, 1 when the inputs are invalid, 2 when a run
//! fails after validation.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use moesim::config::{CutoffCompute, ExperimentConfig, Policy};
use moesim::cutoff::{feasibility_report, solve_cutoff, CutoffInput};
use moesim::predictor::calibrate_fidelity;
use moesim::report::{reports_csv, reports_table, SimReport};
use moesim::sim::{compare_policies, simulate, sweep, sweep_csv, SimError, SweepParam, SweepPoint};
use moesim::trace::{
    activation_rate, generate_synthetic_trace, load_trace, mean_entropy, overlap_percentage,
    trace_to_string, ActivationTrace, OverlapPairing, TraceError, TraceParams, DEFAULT_CONCENTRATION,
};
use moesim::{config::ConfigError, presets};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "moesim", version, about = "Simulate expert offloading under speculative decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one policy and report its TPOT and latency breakdown.
    Run(RunArgs),
    /// Simulate every policy on the same trace and seed.
    Compare(CompareArgs),
    /// Simulate one policy across a range of one parameter.
    Sweep(SweepArgs),
    /// Solve for the deepest layer that can be prefetched while drafting.
    Cutoff(CutoffArgs),
    /// Activation-rate and overlap statistics of a trace.
    AnalyzeTrace(AnalyzeArgs),
    /// Write a synthetic activation trace.
    GenTrace(GenArgs),
}

#[derive(Clone, Copy, Debug, Default, ValueEnum, PartialEq, Eq)]
enum Format {
    #[default]
    Text,
    Csv,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Experiment config file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Bundled config instead of a file: mixtral-desk or deepseek-desk.
    #[arg(long)]
    preset: Option<String>,
    /// Seed for every random draw, generated traces included.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TraceArgs {
    /// Trace file; a synthetic trace is generated when absent.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    tokens: usize,
    #[arg(long, default_value_t = 1.0)]
    skew: f64,
    #[arg(long, default_value_t = 0.5)]
    correlation: f64,
    #[arg(long, default_value_t = DEFAULT_CONCENTRATION)]
    concentration: f64,
    /// Generator seed; defaults to the experiment seed.
    #[arg(long)]
    trace_seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct PolicyArgs {
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    draft_length: Option<usize>,
    #[arg(long)]
    prefetch_k: Option<usize>,
    #[arg(long)]
    cutoff_layer: Option<usize>,
    #[arg(long)]
    cache_capacity: Option<usize>,
    #[arg(long)]
    acceptance_rate: Option<f64>,
    #[arg(long, conflicts_with = "calibrate_accuracy")]
    fidelity: Option<f64>,
    /// Pick the fidelity at which top-1 prediction accuracy on the trace
    /// reaches this value.
    #[arg(long)]
    calibrate_accuracy: Option<f64>,
    /// One launch per expert instead of one per layer batch.
    #[arg(long)]
    unbatched: bool,
    /// Blocking prefetch on the compute stream instead of the background worker.
    #[arg(long)]
    no_worker: bool,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Directory for report files; results go to stdout only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    trace: TraceArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    trace: TraceArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Policies to compare, comma separated; all four by default.
    #[arg(long, value_delimiter = ',')]
    policies: Vec<Policy>,
    /// Run the baselines with one launch per expert while draft-prefetch keeps
    /// its batched transfers.
    #[arg(long)]
    native_baselines: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    trace: TraceArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// cutoff_layer, draft_length, cache_capacity or prefetch_k.
    #[arg(long)]
    param: SweepParam,
    /// Inclusive range `a..b` or a comma-separated list.
    #[arg(long)]
    values: String,
}

#[derive(Args, Debug)]
struct CutoffArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    k: Option<usize>,
    /// Per-layer compute time in ms.
    #[arg(long)]
    t_comp_ms: Option<f64>,
    /// Per-expert load time in ms.
    #[arg(long)]
    t_io_ms: Option<f64>,
    /// Layers whose compute hides the transfers.
    #[arg(long)]
    layers: Option<usize>,
    /// Whose compute bounds the prefetch window.
    #[arg(long, value_enum)]
    compute: Option<ComputeBasis>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ComputeBasis {
    Draft,
    Target,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    trace: TraceArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Window sizes for the activation rate, as `a..b` or a list.
    #[arg(long, default_value = "1..16")]
    windows: String,
    /// Count token pairs up to this distance apart instead of adjacent pairs.
    #[arg(long)]
    pair_window: Option<usize>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    trace: TraceArgs,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A problem with the command line itself.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<ConfigError>() || cause.is::<TraceError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::Cache(_) => 2,
                _ => 1,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Cutoff(a) => cmd_cutoff(a),
        Command::AnalyzeTrace(a) => cmd_analyze(a),
        Command::GenTrace(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!(usage(format!("{}: file not found", path.display())));
    }
    Ok(())
}

fn load_base(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            require_file(path)?;
            moesim::load_config(path)?
        }
        (None, Some(name)) => presets::by_name(name).ok_or_else(|| {
            usage(format!("unknown preset {name:?}; expected mixtral-desk or deepseek-desk"))
        })?,
        (None, None) => bail!(usage("one of --config or --preset is required")),
    };
    if let Some(seed) = args.seed {
        cfg.policy.seed = seed;
    }
    Ok(cfg)
}

fn load_or_generate(args: &TraceArgs, cfg: &ExperimentConfig) -> Result<ActivationTrace> {
    if let Some(path) = &args.trace {
        require_file(path)?;
        let trace = load_trace(path)?;
        trace.check_matches(&cfg.model)?;
        return Ok(trace);
    }
    Ok(generate_synthetic_trace(&cfg.model, trace_params(args, cfg))?)
}

fn trace_params(args: &TraceArgs, cfg: &ExperimentConfig) -> TraceParams {
    TraceParams {
        concentration: args.concentration,
        ..TraceParams::new(
            args.tokens,
            args.skew,
            args.correlation,
            args.trace_seed.unwrap_or(cfg.policy.seed),
        )
    }
}

/// Applies command-line policy overrides, calibrating fidelity on `trace`
/// when asked.
fn apply_policy(cfg: &mut ExperimentConfig, args: &PolicyArgs, trace: &ActivationTrace) -> Result<()> {
    let p = &mut cfg.policy;
    if let Some(v) = args.policy {
        p.policy = v;
    }
    if let Some(v) = args.draft_length {
        p.draft_length = v;
    }
    if let Some(v) = args.prefetch_k {
        p.prefetch_k = v;
    }
    if args.cutoff_layer.is_some() {
        p.cutoff_layer = args.cutoff_layer;
    }
    if args.cache_capacity.is_some() {
        p.cache_capacity = args.cache_capacity;
    }
    if let Some(v) = args.acceptance_rate {
        p.acceptance_rate = v;
    }
    if let Some(v) = args.fidelity {
        p.fidelity = v;
    }
    if let Some(target) = args.calibrate_accuracy {
        if !(0.0..=1.0).contains(&target) {
            bail!(usage("--calibrate-accuracy must lie in [0, 1]"));
        }
        p.fidelity = calibrate_fidelity(trace, target, p.seed);
    }
    if args.unbatched {
        p.batched_io = false;
    }
    if args.no_worker {
        p.worker_prefetch = false;
    }
    cfg.validate()?;
    Ok(())
}

fn prepare(
    config: &ConfigArgs,
    trace: &TraceArgs,
    policy: &PolicyArgs,
) -> Result<(ExperimentConfig, ActivationTrace)> {
    let mut cfg = load_base(config)?;
    let trace = load_or_generate(trace, &cfg)?;
    apply_policy(&mut cfg, policy, &trace)?;
    Ok((cfg, trace))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let (cfg, trace) = prepare(&a.config, &a.trace, &a.policy)?;
    let report = simulate(&cfg, &trace)?;
    let csv = reports_csv(std::slice::from_ref(&report));
    if let Some(dir) = &a.output.out {
        write_file(dir, "config.toml", &cfg.to_toml_string())?;
        write_file(dir, "report.csv", &csv)?;
        write_file(dir, "report.toml", &report.to_toml())?;
        write_file(dir, "transfers.csv", &report.transfers_csv())?;
        write_file(dir, "compute.csv", &report.compute_csv())?;
        write_file(dir, "iterations.csv", &report.iterations_csv())?;
    }
    match a.output.format {
        Format::Csv => print!("{csv}"),
        Format::Text => {
            print!("{}", reports_table(std::slice::from_ref(&report)));
            print!("{}", run_summary(&report));
        }
    }
    Ok(())
}

fn run_summary(r: &SimReport) -> String {
    let mut s = format!(
        "{} tokens in {} iterations, {:.3} ms total\n",
        r.emitted_tokens,
        r.iterations,
        r.total_time * 1e3
    );
    if let Some(l) = r.cutoff_layer {
        let _ = writeln!(s, "cutoff layer {l}");
    }
    let _ = writeln!(
        s,
        "{} transfers, {} bytes, {} cache slots",
        r.transfers, r.bytes_transferred, r.cache_slots
    );
    s
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let (base, trace) = prepare(&a.config, &a.trace, &a.policy)?;
    let policies = if a.policies.is_empty() { Policy::ALL.to_vec() } else { a.policies.clone() };
    let configs: Vec<ExperimentConfig> = policies
        .iter()
        .map(|&p| {
            let mut c = base.with_policy(p);
            if a.native_baselines && p != Policy::DraftPrefetch {
                c.policy.batched_io = false;
            }
            c
        })
        .collect();
    let reports = compare_policies(&configs, &trace)?;
    let csv = reports_csv(&reports);
    if let Some(dir) = &a.output.out {
        write_file(dir, "config.toml", &base.to_toml_string())?;
        write_file(dir, "compare.csv", &csv)?;
    }
    match a.output.format {
        Format::Csv => print!("{csv}"),
        Format::Text => print!("{}", reports_table(&reports)),
    }
    Ok(())
}

/// `a..b` (inclusive), `a..=b`, or `a,b,c`.
fn parse_values(text: &str) -> Result<Vec<usize>> {
    let num = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("{s:?} is not a non-negative integer")))
    };
    let values = if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi) = (num(lo)?, num(hi.trim_start_matches('='))?);
        if lo > hi {
            bail!(usage(format!("empty range {text:?}")));
        }
        (lo..=hi).collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        bail!(usage("no values given"));
    }
    Ok(values)
}

fn sweep_table(param: SweepParam, points: &[SweepPoint]) -> String {
    let mut out = format!(
        "{:>14} {:>10} {:>9} {:>9} {:>8}\n",
        param.as_str(),
        "tpot_ms",
        "hit_rate",
        "evict",
        "load"
    );
    for p in points {
        let r = &p.report;
        let _ = writeln!(
            out,
            "{:>14} {:>10.3} {:>9.4} {:>9.4} {:>8.3}",
            p.value,
            r.tpot_ms(),
            r.hit_rate,
            r.eviction_rate,
            r.breakdown.expert_load
        );
    }
    if let Some(best) = points.iter().min_by(|a, b| a.report.tpot.total_cmp(&b.report.tpot)) {
        let _ = writeln!(out, "minimum TPOT at {} = {}", param.as_str(), best.value);
    }
    out
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let values = parse_values(&a.values)?;
    let (base, trace) = prepare(&a.config, &a.trace, &a.policy)?;
    let points = sweep(a.param, &values, &base, &trace)?;
    let csv = sweep_csv(a.param, &points);
    if let Some(dir) = &a.output.out {
        write_file(dir, "config.toml", &base.to_toml_string())?;
        write_file(dir, "sweep.csv", &csv)?;
    }
    match a.output.format {
        Format::Csv => print!("{csv}"),
        Format::Text => print!("{}", sweep_table(a.param, &points)),
    }
    Ok(())
}

pub const CUTOFF_CSV_HEADER: &str =
    "l,n_expert,binding_constraint,feasible,memory_slack_bytes,overlap_slack_ms";

fn cmd_cutoff(a: CutoffArgs) -> Result<()> {
    let mut cfg = load_base(&a.config)?;
    if let Some(basis) = a.compute {
        cfg.policy.cutoff_compute = match basis {
            ComputeBasis::Draft => CutoffCompute::Draft,
            ComputeBasis::Target => CutoffCompute::Target,
        };
    }
    let mut input = CutoffInput::from_config(&cfg);
    if let Some(k) = a.k {
        input.k = k;
    }
    if let Some(t) = a.t_comp_ms {
        input.t_comp = t * 1e-3;
    }
    if let Some(t) = a.t_io_ms {
        input.t_io = t * 1e-3;
    }
    if let Some(l) = a.layers {
        input.l_all = l;
    }
    if input.k == 0 || input.l_all == 0 {
        bail!(usage("k and layers must be at least 1"));
    }
    if !(input.t_comp.is_finite() && input.t_comp > 0.0 && input.t_io.is_finite() && input.t_io > 0.0) {
        bail!(usage("compute and load times must be positive"));
    }
    let result = solve_cutoff(&input);
    let at = feasibility_report(&input, result.l.unwrap_or(0)).map_err(|e| anyhow!(e))?;
    match a.format {
        Format::Csv => {
            println!("{CUTOFF_CSV_HEADER}");
            println!(
                "{},{},{},{},{},{:.3}",
                result.l.map(|l| l.to_string()).unwrap_or_default(),
                result.n_expert,
                result.binding_constraint.as_str(),
                result.feasible,
                at.memory_slack_bytes,
                at.overlap_slack_secs * 1e3
            );
        }
        Format::Text => {
            match result.l {
                Some(l) => println!("L = {l}"),
                None => println!("L = none (layer 0 is infeasible)"),
            }
            println!("N_expert = {}", result.n_expert);
            println!("binding constraint: {}", result.binding_constraint.as_str());
            println!("memory slack at L{}: {} bytes", at.l, at.memory_slack_bytes);
            println!("overlap slack at L{}: {:.3} ms", at.l, at.overlap_slack_secs * 1e3);
            if let Some(next) = result.l.and_then(|l| feasibility_report(&input, l + 1).ok()) {
                println!(
                    "at L{}: memory slack {} bytes, overlap slack {:.3} ms",
                    next.l,
                    next.memory_slack_bytes,
                    next.overlap_slack_secs * 1e3
                );
            }
        }
    }
    Ok(())
}

pub const ANALYSIS_CSV_HEADER: &str = "metric,layer,window,value";

fn cmd_analyze(a: AnalyzeArgs) -> Result<()> {
    let windows = parse_values(&a.windows)?;
    let cfg = load_base(&a.config)?;
    let trace = load_or_generate(&a.trace, &cfg)?;
    let pairing = match a.pair_window {
        Some(w) => OverlapPairing::AllPairsWithin(w),
        None => OverlapPairing::Adjacent,
    };
    let overlap = overlap_percentage(&trace, pairing)?;
    let entropy = mean_entropy(&trace)?;
    let rates = windows
        .iter()
        .map(|&w| activation_rate(&trace, w).map(|r| (w, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let reach = a.pair_window.unwrap_or(1);

    let mut csv = format!("{ANALYSIS_CSV_HEADER}\n");
    for (w, per_layer) in &rates {
        for (l, r) in per_layer.iter().enumerate() {
            let _ = writeln!(csv, "activation_rate,{l},{w},{r:.6}");
        }
    }
    for (l, v) in overlap.per_layer.iter().enumerate() {
        let _ = writeln!(csv, "overlap,{l},{reach},{v:.6}");
    }
    for (l, h) in entropy.iter().enumerate() {
        let _ = writeln!(csv, "entropy_bits,{l},,{h:.6}");
    }
    if let Some(dir) = &a.output.out {
        write_file(dir, "analysis.csv", &csv)?;
    }
    match a.output.format {
        Format::Csv => print!("{csv}"),
        Format::Text => {
            println!(
                "{} tokens, {} layers, {} experts per layer, top-{}, {} shared",
                trace.len(),
                trace.num_layers,
                trace.experts_per_layer,
                trace.topk,
                trace.shared_experts
            );
            let k_over_e = trace.topk as f64 / trace.experts_per_layer as f64;
            println!("{:>6} {:>10} {:>10}", "window", "rate", "bound");
            for (w, per_layer) in &rates {
                let mean = per_layer.iter().sum::<f64>() / per_layer.len() as f64;
                println!("{w:>6} {mean:>10.4} {:>10.4}", (*w as f64 * k_over_e).min(1.0));
            }
            println!(
                "overlap within {reach} token(s): {:.2}% over {} pairs per layer",
                100.0 * overlap.mean,
                overlap.pairs
            );
            let h = entropy.iter().sum::<f64>() / entropy.len() as f64;
            println!("mean gating entropy: {h:.4} bits");
        }
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    if a.trace.trace.is_some() {
        bail!(usage("gen-trace writes a trace; use --out for its path"));
    }
    let cfg = load_base(&a.config)?;
    let trace = generate_synthetic_trace(&cfg.model, trace_params(&a.trace, &cfg))?;
    let text = trace_to_string(&trace)?;
    match &a.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
