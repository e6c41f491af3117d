//! Pipeline entry point: profile a job's memory behavior, fit and classify
//! its memory model, and evaluate search strategies against a replay table.
//!
//! Every command writes a manifest next to its output with the resolved
//! parameters and input digests, so runs can be reproduced bit-for-bit.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use memtune_core::config_space::PartitionParams;
use memtune_core::memory_model::{
    extrapolate_requirement, fit_memory_model, MemoryModel, ModelCategory, R2Thresholds,
    BYTES_PER_GB,
};
use memtune_core::profiler::{
    profile_job, CommandTemplate, ProfileOptions, ProfilingReport, SampleMode,
};
use memtune_core::replay::{
    compare_methods, load_category_sidecar, load_replay_table, normalize_costs,
    synthetic::synthetic_dataset, write_report, write_sidecar_csv, write_table_csv,
    write_trace, CompareParams, SearchMethod,
};
use memtune_core::search::{run_baseline_search, run_priority_search, SearchParams};

use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "memtune",
    version,
    about = "Memory-aware cluster configuration tuning",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Profile a job's memory use on growing dataset samples.
    Profile(ProfileArgs),
    /// Classify a profiling report and extrapolate the memory requirement.
    Model(ModelArgs),
    /// Show the priority partition of a machine catalog for a memory class.
    Partition(PartitionArgs),
    /// Evaluate search strategies against a measured replay table.
    #[command(subcommand)]
    Replay(ReplayCmd),
}

#[derive(Subcommand)]
enum ReplayCmd {
    /// Compare priority-first search against the plain baseline over many
    /// paired seeds.
    Compare(CompareArgs),
    /// Replay a single seeded search for one job and dump its trace.
    Search(SearchCmdArgs),
    /// Generate a synthetic replay table plus category sidecar.
    Synth(SynthArgs),
}

#[derive(Args, Serialize)]
struct ProfileArgs {
    /// Command template; `{input}` marks the dataset-sample argument.
    #[arg(long)]
    cmd: String,
    /// Dataset file (record-delimited) to sample from.
    #[arg(long)]
    data: PathBuf,
    /// Target runtime window per profiling run, seconds.
    #[arg(long, default_value = "30,300")]
    window: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Memory poll interval, seconds.
    #[arg(long, default_value_t = 0.2)]
    poll: f64,
    /// Record sampling mode.
    #[arg(long, default_value = "bernoulli")]
    mode: String,
    /// Starting sample fraction for calibration.
    #[arg(long, default_value_t = 0.01)]
    start_fraction: f64,
    /// KEY=VALUE environment entries passed to the job (repeatable).
    #[arg(long = "env")]
    env: Vec<String>,
    /// Report output path (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ModelArgs {
    /// Profiling report produced by `memtune profile`.
    #[arg(long)]
    report: PathBuf,
    /// Full dataset size the job will run on, e.g. `260GB` or a byte count.
    #[arg(long)]
    full_size: String,
    /// R² classification thresholds `low,high`.
    #[arg(long, default_value = "0.1,0.99")]
    thresholds: String,
    /// Optional JSON output path for the fitted model.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Clone)]
struct SearchKnobs {
    /// Random initial configurations.
    #[arg(long, default_value_t = 3)]
    n_initial: usize,
    /// Stop when max expected improvement falls below this fraction of the
    /// best cost.
    #[arg(long, default_value_t = 0.1)]
    ei_stop: f64,
    /// Observations required before the stopping rule may fire.
    #[arg(long, default_value_t = 6)]
    min_observations: usize,
    /// Draw initial configurations from the full space instead of the
    /// priority set (ablation).
    #[arg(long, default_value_t = false)]
    init_from_full: bool,
}

impl SearchKnobs {
    fn to_params(&self, seed: u64) -> SearchParams {
        SearchParams {
            n_initial: self.n_initial,
            ei_stop_fraction: self.ei_stop,
            min_observations: self.min_observations,
            max_iterations: None,
            seed,
            init_from_full: self.init_from_full,
        }
    }
}

#[derive(Args, Serialize, Clone)]
struct PartitionKnobs {
    /// Fraction of the space prioritized for flat jobs.
    #[arg(long, default_value_t = 0.15)]
    flat_fraction: f64,
    /// Per-node memory overhead (OS + framework), GB.
    #[arg(long, default_value_t = 2.0)]
    overhead_gb: f64,
    /// Safety margin on the extrapolated requirement.
    #[arg(long, default_value_t = 0.10)]
    leeway: f64,
    /// Extreme-group size per end when the requirement is unsatisfiable.
    #[arg(long, default_value_t = 0.10)]
    fallback_fraction: f64,
}

impl PartitionKnobs {
    fn to_params(&self) -> PartitionParams {
        PartitionParams {
            flat_fraction: self.flat_fraction,
            per_node_overhead_gb: self.overhead_gb,
            leeway_fraction: self.leeway,
            fallback_fraction: self.fallback_fraction,
        }
    }
}

#[derive(Args, Serialize)]
struct CompareArgs {
    /// Replay table CSV.
    #[arg(long)]
    table: PathBuf,
    /// Memory-category sidecar CSV (job,category,job_gb).
    #[arg(long)]
    categories: PathBuf,
    /// Paired seeds per job.
    #[arg(long, default_value_t = 200)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    base_seed: u64,
    /// Normalized-cost thresholds for the report columns.
    #[arg(long, default_value = "1.2,1.1,1.0")]
    thresholds: String,
    /// Apply the stopping rule instead of running searches to exhaustion.
    #[arg(long, default_value_t = false)]
    with_stopping: bool,
    #[command(flatten)]
    search: SearchKnobs,
    #[command(flatten)]
    partition: PartitionKnobs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SearchCmdArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    categories: PathBuf,
    /// Job name from the table.
    #[arg(long)]
    job: String,
    /// Which strategy to run.
    #[arg(long, value_parser = parse_method)]
    method: SearchMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run to exhaustion instead of stopping on converged EI.
    #[arg(long, default_value_t = false)]
    exhaustive: bool,
    #[command(flatten)]
    search: SearchKnobs,
    #[command(flatten)]
    partition: PartitionKnobs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PartitionArgs {
    /// Machine catalog (JSON: machine_types plus scale_outs or configs).
    #[arg(long)]
    catalog: PathBuf,
    /// Memory class of the job: linear, flat, or unclear.
    #[arg(long)]
    category: String,
    /// Extrapolated job memory in GB; required for linear jobs.
    #[arg(long)]
    job_gb: Option<f64>,
    #[command(flatten)]
    partition: PartitionKnobs,
    /// Optional CSV output (config, set) listing the partition.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Jobs generated per memory class (linear, flat, unclear).
    #[arg(long, default_value_t = 4)]
    jobs_per_class: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<SearchMethod, String> {
    match s {
        "baseline" => Ok(SearchMethod::Baseline),
        "priority" => Ok(SearchMethod::Priority),
        other => Err(format!("unknown method {other:?} (use priority or baseline)")),
    }
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    // Die quietly when a pipe consumer closes early instead of panicking
    // mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::Profile(args) => cmd_profile(args),
        Cmd::Model(args) => cmd_model(args),
        Cmd::Partition(args) => cmd_partition(args),
        Cmd::Replay(ReplayCmd::Compare(args)) => cmd_replay_compare(args),
        Cmd::Replay(ReplayCmd::Search(args)) => cmd_replay_search(args),
        Cmd::Replay(ReplayCmd::Synth(args)) => cmd_replay_synth(args),
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn cmd_profile(args: ProfileArgs) -> Result<(), CliError> {
    require_file(&args.data, "dataset")?;
    let window = parse_pair(&args.window).map_err(CliError::usage)?;
    let mode = match args.mode.as_str() {
        "bernoulli" => SampleMode::Bernoulli,
        "prefix" => SampleMode::Prefix,
        other => {
            return Err(CliError::Usage(format!(
                "unknown sampling mode {other:?} (use bernoulli or prefix)"
            )))
        }
    };
    let env: Vec<(String, String)> = args
        .env
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CliError::Usage(format!("--env needs KEY=VALUE, got {kv:?}")))
        })
        .collect::<Result<_, _>>()?;
    let template = CommandTemplate::new(
        args.cmd.split_whitespace().map(str::to_string).collect(),
        env,
        None,
    )
    .map_err(CliError::usage)?;
    let options = ProfileOptions {
        window,
        poll_interval_s: args.poll,
        seed: args.seed,
        mode,
        start_fraction: args.start_fraction,
        ..Default::default()
    };

    let report = profile_job(&template, &args.data, &options).map_err(CliError::runtime)?;
    report.save(&args.out).map_err(CliError::runtime)?;
    let manifest = RunManifest::new("profile", &args, &[args.data.as_path()], args.seed)
        .map_err(CliError::runtime)?;
    manifest.write(&manifest_path(&args.out)).map_err(CliError::runtime)?;

    println!(
        "profiled {} sample runs in {:.1} s; report written to {}",
        report.samples.len(),
        report.wall_time_s,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ModelOutput {
    model: MemoryModel,
    requirement_gb: Option<f64>,
    clamped: bool,
}

fn cmd_model(args: ModelArgs) -> Result<(), CliError> {
    require_file(&args.report, "report")?;
    let (low, high) = parse_pair(&args.thresholds).map_err(CliError::usage)?;
    let thresholds = R2Thresholds::new(low, high).map_err(CliError::usage)?;
    let full_bytes = parse_size(&args.full_size).map_err(CliError::usage)?;

    let report = ProfilingReport::load(&args.report).map_err(CliError::runtime)?;
    let model = fit_memory_model(&report.samples, thresholds).map_err(CliError::runtime)?;

    let mut output = ModelOutput { model, requirement_gb: None, clamped: false };
    match model.category {
        ModelCategory::Linear { slope, intercept, r2 } => {
            let req = extrapolate_requirement(&model, full_bytes).map_err(CliError::runtime)?;
            output.requirement_gb = Some(req.job_gb);
            output.clamped = req.clamped;
            println!(
                "category: linear (r2 {r2:.4}, slope {slope:.4} bytes/byte, intercept {:.3} GB)",
                intercept / BYTES_PER_GB
            );
            println!("memory requirement at {} bytes: {:.1} GB", full_bytes, req.job_gb);
            if req.clamped {
                eprintln!(
                    "warning: extrapolation was non-positive and was clamped; treat the requirement as unreliable"
                );
            }
        }
        ModelCategory::Flat { mean_bytes, r2 } => {
            println!(
                "category: flat (r2 {r2:.4}, mean job memory {:.3} GB); no requirement to extrapolate",
                mean_bytes / BYTES_PER_GB
            );
        }
        ModelCategory::Unclear { r2 } => {
            println!("category: unclear (r2 {r2:.4}); memory-aware partitioning will be skipped");
        }
    }

    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&output).expect("model serializes");
        std::fs::write(out, json).map_err(CliError::runtime)?;
        let manifest = RunManifest::new("model", &args, &[args.report.as_path()], 0)
            .map_err(CliError::runtime)?;
        manifest.write(&manifest_path(out)).map_err(CliError::runtime)?;
    }
    Ok(())
}

fn cmd_partition(args: PartitionArgs) -> Result<(), CliError> {
    use memtune_core::config_space::{CatalogFile, MemoryClass};
    use memtune_core::memory_model::{CategoryKind, MemoryRequirement};

    require_file(&args.catalog, "catalog")?;
    let kind: CategoryKind = args.category.parse().map_err(CliError::usage)?;
    let class = match kind {
        CategoryKind::Linear => {
            let job_gb = args.job_gb.filter(|&g| g > 0.0).ok_or_else(|| {
                CliError::Usage("linear jobs need --job-gb with a positive value".into())
            })?;
            MemoryClass::Linear(MemoryRequirement { job_gb, clamped: false })
        }
        CategoryKind::Flat => MemoryClass::Flat,
        CategoryKind::Unclear => MemoryClass::Unclear,
    };

    let space = CatalogFile::load(&args.catalog)
        .map_err(CliError::runtime)?
        .into_space()
        .map_err(CliError::runtime)?;
    let partition = memtune_core::config_space::build_priority_partition(
        &space,
        &class,
        &args.partition.to_params(),
    )
    .map_err(CliError::runtime)?;

    println!(
        "{} of {} configurations prioritized ({} deferred)",
        partition.priority().len(),
        space.len(),
        partition.remainder().len()
    );
    for &id in partition.priority() {
        let config = space.get(id).unwrap();
        println!(
            "  {:18} total {:7.1} GB, {:4} cores, {:.3}/h",
            config.to_string(),
            config.total_memory_gb(),
            config.total_cores(),
            config.hourly_cost()
        );
    }

    if let Some(out) = &args.out {
        let mut text = String::from("config,machine_type,scale_out,total_memory_gb,set\n");
        for (set, ids) in
            [("priority", partition.priority()), ("remainder", partition.remainder())]
        {
            for &id in ids {
                let config = space.get(id).unwrap();
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    config,
                    config.machine.name,
                    config.scale_out,
                    config.total_memory_gb(),
                    set
                ));
            }
        }
        std::fs::write(out, text).map_err(CliError::runtime)?;
        let manifest = RunManifest::new("partition", &args, &[args.catalog.as_path()], 0)
            .map_err(CliError::runtime)?;
        manifest.write(&manifest_path(out)).map_err(CliError::runtime)?;
        println!("partition written to {}", out.display());
    }
    Ok(())
}

fn cmd_replay_compare(args: CompareArgs) -> Result<(), CliError> {
    require_file(&args.table, "replay table")?;
    require_file(&args.categories, "category sidecar")?;
    let thresholds = parse_list(&args.thresholds).map_err(CliError::usage)?;

    let table = load_replay_table(&args.table).map_err(CliError::runtime)?;
    let classes = load_category_sidecar(&args.categories).map_err(CliError::runtime)?;
    let params = CompareParams {
        n_seeds: args.seeds,
        base_seed: args.base_seed,
        search: args.search.to_params(args.base_seed),
        partition: args.partition.to_params(),
        thresholds,
        exhaustive: !args.with_stopping,
    };
    let report = compare_methods(&table, &classes, &params).map_err(CliError::runtime)?;

    std::fs::create_dir_all(&args.out).map_err(CliError::runtime)?;
    write_report(&report, &args.out).map_err(CliError::runtime)?;
    let manifest = RunManifest::new(
        "replay compare",
        &args,
        &[args.table.as_path(), args.categories.as_path()],
        args.base_seed,
    )
    .map_err(CliError::runtime)?;
    manifest.write(&args.out.join("manifest.json")).map_err(CliError::runtime)?;

    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    println!(
        "replayed {} jobs x {} seeds over {} configs",
        report.jobs.len(),
        report.seeds.len(),
        table.space().len()
    );
    for (label, idx) in [("baseline", 0usize), ("priority", 1usize)] {
        let row: Vec<String> =
            report.overall.mean_iterations[idx].iter().map(|v| fmt(*v)).collect();
        println!("overall {label:9} mean iterations: {}", row.join(" / "));
    }
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_replay_search(args: SearchCmdArgs) -> Result<(), CliError> {
    require_file(&args.table, "replay table")?;
    require_file(&args.categories, "category sidecar")?;
    let table = load_replay_table(&args.table).map_err(CliError::runtime)?;
    let classes = load_category_sidecar(&args.categories).map_err(CliError::runtime)?;
    let job = table
        .job(&args.job)
        .ok_or_else(|| CliError::Usage(format!("job {:?} not in table", args.job)))?;
    let class = classes
        .get(&args.job)
        .ok_or_else(|| CliError::Usage(format!("job {:?} not in sidecar", args.job)))?;

    let mut params = args.search.to_params(args.seed);
    if args.exhaustive {
        params.ei_stop_fraction = 0.0;
    }
    let oracle = table.oracle(job);
    let trace = match args.method {
        SearchMethod::Baseline => run_baseline_search(job.space(), &oracle, &params),
        SearchMethod::Priority => {
            let partition = memtune_core::config_space::build_priority_partition(
                job.space(),
                class,
                &args.partition.to_params(),
            )
            .map_err(CliError::runtime)?;
            run_priority_search(job.space(), &partition, &oracle, &params)
        }
    }
    .map_err(CliError::runtime)?;

    std::fs::create_dir_all(&args.out).map_err(CliError::runtime)?;
    let normalized = normalize_costs(job);
    let trace_path = args.out.join("trace.csv");
    write_trace(&trace, job.space(), &normalized, &trace_path).map_err(CliError::runtime)?;
    let manifest = RunManifest::new(
        "replay search",
        &args,
        &[args.table.as_path(), args.categories.as_path()],
        args.seed,
    )
    .map_err(CliError::runtime)?;
    manifest.write(&args.out.join("manifest.json")).map_err(CliError::runtime)?;

    println!(
        "{} search of {:?}: {} observations, stop reason {}, best cost {:.6}",
        args.method,
        args.job,
        trace.observations.len(),
        trace.stop_reason,
        trace.best_cost_after(trace.observations.len()).unwrap_or(f64::NAN)
    );
    println!("trace written to {}", trace_path.display());
    Ok(())
}

fn cmd_replay_synth(args: SynthArgs) -> Result<(), CliError> {
    if args.jobs_per_class == 0 {
        return Err(CliError::Usage("--jobs-per-class must be at least 1".into()));
    }
    let (table, classes) = synthetic_dataset(args.seed, args.jobs_per_class);
    std::fs::create_dir_all(&args.out).map_err(CliError::runtime)?;
    let table_path = args.out.join("synthetic_table.csv");
    let sidecar_path = args.out.join("synthetic_categories.csv");
    write_table_csv(&table, &table_path).map_err(CliError::runtime)?;
    write_sidecar_csv(&classes, &sidecar_path).map_err(CliError::runtime)?;
    let manifest =
        RunManifest::new("replay synth", &args, &[], args.seed).map_err(CliError::runtime)?;
    manifest.write(&args.out.join("manifest.json")).map_err(CliError::runtime)?;
    println!(
        "wrote {} jobs x {} configs to {} and {}",
        table.jobs().len(),
        table.space().len(),
        table_path.display(),
        sidecar_path.display()
    );
    Ok(())
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected two comma-separated numbers, got {s:?}"));
    }
    let a = parts[0].trim().parse().map_err(|_| format!("not a number: {:?}", parts[0]))?;
    let b = parts[1].trim().parse().map_err(|_| format!("not a number: {:?}", parts[1]))?;
    Ok((a, b))
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("not a number: {p:?}")))
        .collect()
}

/// Parses `1073741824`, `2.5GB`, `300MB`, `1TB`, ... (decimal units).
fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (number, multiplier) = match s.to_ascii_uppercase() {
        u if u.ends_with("TB") => (&s[..s.len() - 2], 1e12),
        u if u.ends_with("GB") => (&s[..s.len() - 2], 1e9),
        u if u.ends_with("MB") => (&s[..s.len() - 2], 1e6),
        u if u.ends_with("KB") => (&s[..s.len() - 2], 1e3),
        u if u.ends_with('B') => (&s[..s.len() - 1], 1.0),
        _ => (s, 1.0),
    };
    let value: f64 =
        number.trim().parse().map_err(|_| format!("cannot parse size {s:?}"))?;
    if value <= 0.0 {
        return Err(format!("size must be positive, got {s:?}"));
    }
    Ok((value * multiplier) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing_accepts_suffixes() {
        assert_eq!(parse_size("1024").unwrap(), 1024);
        assert_eq!(parse_size("1024B").unwrap(), 1024);
        assert_eq!(parse_size("1KB").unwrap(), 1000);
        assert_eq!(parse_size("2.5GB").unwrap(), 2_500_000_000);
        assert_eq!(parse_size("260GB").unwrap(), 260_000_000_000);
        assert_eq!(parse_size("1TB").unwrap(), 1_000_000_000_000);
        assert!(parse_size("abc").is_err());
        assert!(parse_size("-5GB").is_err());
    }

    #[test]
    fn pair_parsing() {
        assert_eq!(parse_pair("30,300").unwrap(), (30.0, 300.0));
        assert_eq!(parse_pair("0.1, 0.99").unwrap(), (0.1, 0.99));
        assert!(parse_pair("30").is_err());
        assert!(parse_pair("a,b").is_err());
    }

    #[test]
    fn manifest_path_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("/tmp/report.json")),
            Path::new("/tmp/report.json.manifest.json")
        );
    }
}
