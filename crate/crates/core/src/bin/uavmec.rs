use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use uavmec::harness::{
    emit_plots_data, load_records, oracle_suite, run_sweep, Mutation, OracleLimits, SweepAxis, SweepManifest, SweepOptions, SweepSpec, MANIFEST_FILE,
    RECORDS_FILE,
};
use uavmec::joint::{compare, run_policy, PolicyId};
use uavmec::scenario::Scenario;

#[derive(Parser)]
#[command(name = "uavmec", version, about = "Multi-UAV edge computing: joint offloading, CPU allocation and trajectory control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario with one policy and print its metrics as JSON.
    Simulate(SimulateArgs),
    /// Run a parameter sweep, writing raw records and per-metric CSVs.
    Sweep(SweepArgs),
    /// Run several policies on several seeds and print a comparison CSV.
    Compare(CompareArgs),
    /// Check solvers against brute-force and Monte-Carlo oracles.
    Oracle(OracleArgs),
    /// Rebuild the CSVs of a sweep directory from its raw records.
    Export(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "JTORATC")]
    policy: PolicyId,
    /// Directory for the full solution (JSON) and trajectory (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated, strictly increasing axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Seed list (`1,2,5`) or half-open range (`0..20`).
    #[arg(long, default_value = "0..10")]
    seeds: String,
    /// Comma-separated policies, or `all`.
    #[arg(long, default_value = "all")]
    policy: String,
    #[arg(long)]
    out: PathBuf,
    /// Skip cells already recorded in the output directory.
    #[arg(long)]
    resume: bool,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "0..10")]
    seeds: String,
    #[arg(long, default_value = "all")]
    policy: String,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct OracleArgs {
    /// Smaller instance counts for a fast smoke run.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = OracleLimits::default().seed)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Inject a known solver fault; the suite is expected to fail.
    #[arg(long, hide = true)]
    mutate_residual_sign: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Sweep output directory.
    #[arg(long)]
    out: PathBuf,
}

fn load_scenario(c: &Common) -> Result<Scenario> {
    match &c.config {
        Some(p) => Scenario::from_toml_file(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(Scenario::default_scenario()),
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi): (u64, u64) = (lo.trim().parse()?, hi.trim().parse()?);
        if lo >= hi {
            bail!("empty seed range `{text}`");
        }
        return Ok((lo..hi).collect());
    }
    text.split(',').map(|s| s.trim().parse().with_context(|| format!("bad seed `{s}`"))).collect()
}

fn parse_policies(text: &str) -> Result<Vec<PolicyId>> {
    if text.eq_ignore_ascii_case("all") {
        return Ok(PolicyId::ALL.to_vec());
    }
    text.split(',').map(|s| s.trim().parse::<PolicyId>().map_err(Into::into)).collect()
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let s = load_scenario(&args.common)?;
    let tasks = s.generate_tasks(args.seed);
    let sol = run_policy(args.policy, &s, &tasks, args.seed)?;
    for d in &sol.diagnostics {
        log::warn!("{d}");
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("solution.json"), serde_json::to_string_pretty(&sol)?)?;
        std::fs::write(dir.join("trajectory.csv"), sol.q.to_csv())?;
    }
    let summary = serde_json::json!({
        "policy": args.policy,
        "seed": args.seed,
        "objective": sol.metrics.objective,
        "total_delay_s": sol.metrics.total_delay_s,
        "total_uav_energy_j": sol.metrics.total_uav_energy_j,
        "total_offloaded_bits": sol.metrics.total_offloaded_bits,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "history": sol.history,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let base = load_scenario(&args.common)?;
    let spec = SweepSpec { axis: args.axis, values: args.values, seeds: parse_seeds(&args.seeds)?, policies: parse_policies(&args.policy)? };
    let opts = SweepOptions { jobs: args.jobs, resume: args.resume };
    let report = run_sweep(&base, &spec, &args.out, &opts)?;
    eprintln!("{} cells: {} computed, {} reused, {} failed", report.records.len(), report.computed, report.skipped, report.failed);
    for f in &report.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(if report.failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(f))
}

fn run_compare(args: CompareArgs) -> Result<ExitCode> {
    let s = load_scenario(&args.common)?;
    let seeds = parse_seeds(&args.seeds)?;
    let policies = parse_policies(&args.policy)?;
    let table = with_jobs(args.jobs, || compare(&s, &policies, &seeds))??;
    write_or_print(args.out.as_deref(), &table.to_csv())?;
    for p in &table.summaries {
        match p.jtoratc_win_rate {
            Some(w) => eprintln!("{:8} mean objective {:.6}  JTORATC no worse on {:.0}% of seeds", p.policy, p.mean_objective, 100.0 * w),
            None => eprintln!("{:8} mean objective {:.6}", p.policy, p.mean_objective),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle(args: OracleArgs) -> Result<ExitCode> {
    let mut limits = OracleLimits { seed: args.seed, ..OracleLimits::default() };
    if args.quick {
        limits.allocation_instances = 30;
        limits.grid_steps = 600;
        limits.offload_instances = 30;
        limits.channel_samples = 100_000;
        limits.surrogate_checks = 1000;
    }
    let mutation = if args.mutate_residual_sign { Mutation::FlipResidualSign } else { Mutation::None };
    let report = oracle_suite(&limits, mutation);
    for e in &report.entries {
        eprintln!(
            "{} {:28} max deviation {:.3e} (tolerance {:.1e}, {} instances)",
            if e.passed { "PASS" } else { "FAIL" },
            e.name,
            e.max_deviation,
            e.tolerance,
            e.instances
        );
    }
    write_or_print(args.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn export(args: ExportArgs) -> Result<ExitCode> {
    let manifest_path = args.out.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest: SweepManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", manifest_path.display()))?;
    let records = load_records(&args.out.join(RECORDS_FILE))?;
    if records.is_empty() {
        bail!("no records in {}", args.out.display());
    }
    for csv in emit_plots_data(&records, &manifest.spec) {
        let path = args.out.join(&csv.name);
        std::fs::write(&path, csv.contents).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => run_compare(a),
        Command::Oracle(a) => oracle(a),
        Command::Export(a) => export(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
