//! Local job profiling: generates dataset samples, calibrates the sample
//! size against a runtime window, runs the job on each sample, and records
//! baseline-subtracted peak resident memory of the whole process tree.
//!
//! One profiling run at a time per profiler invocation; concurrent runs
//! would contaminate each other's baselines and contend for RAM. The
//! monitoring loop is internal; every public operation blocks.

mod procfs;

use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory_model::MemorySample;

pub use procfs::process_tree_rss_bytes;

/// Token replaced with the sample path inside a command template.
pub const INPUT_PLACEHOLDER: &str = "{input}";

/// Number of differently sized sample runs per profiling report.
pub const SAMPLE_RUNS: usize = 5;

/// How to launch the job under measurement. GC or other framework flags
/// travel through `argv`/`env` untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandTemplate {
    argv_template: Vec<String>,
    env: Vec<(String, String)>,
    working_dir: Option<PathBuf>,
}

impl CommandTemplate {
    /// `argv` must mention [`INPUT_PLACEHOLDER`] exactly once (possibly
    /// embedded, e.g. `--data={input}`).
    pub fn new(
        argv: Vec<String>,
        env: Vec<(String, String)>,
        working_dir: Option<PathBuf>,
    ) -> Result<Self, ProfileError> {
        let occurrences: usize =
            argv.iter().map(|a| a.matches(INPUT_PLACEHOLDER).count()).sum();
        if argv.is_empty() || occurrences != 1 {
            return Err(ProfileError::InvalidTemplate {
                placeholder_count: occurrences,
            });
        }
        Ok(Self { argv_template: argv, env, working_dir })
    }

    /// Parses a whitespace-separated command line. Quoting is not
    /// interpreted; arguments with spaces need the `Vec` constructor.
    pub fn parse(command_line: &str) -> Result<Self, ProfileError> {
        Self::new(
            command_line.split_whitespace().map(str::to_string).collect(),
            Vec::new(),
            None,
        )
    }

    fn resolved_argv(&self, input: &Path) -> Vec<String> {
        self.argv_template
            .iter()
            .map(|a| a.replace(INPUT_PLACEHOLDER, &input.display().to_string()))
            .collect()
    }

    fn command(&self, input: &Path) -> Command {
        let argv = self.resolved_argv(input);
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..]);
        for (k, v) in &self.env {
            cmd.env(k, v);
        }
        if let Some(dir) = &self.working_dir {
            cmd.current_dir(dir);
        }
        cmd
    }
}

/// Record sampling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// Each record kept independently with probability `fraction`;
    /// preserves value distributions.
    #[default]
    Bernoulli,
    /// Leading `ceil(fraction × records)` records; for formats where record
    /// order matters.
    Prefix,
}

/// Memory readings over one run: tree RSS at each poll, plus the floor
/// attributed to interpreter/framework startup rather than the workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSeries {
    pub timestamps_s: Vec<f64>,
    pub rss_bytes: Vec<u64>,
    pub baseline_bytes: u64,
}

impl TraceSeries {
    /// Peak tree RSS with the startup floor discounted.
    pub fn peak_minus_baseline(&self) -> u64 {
        let peak = self.rss_bytes.iter().copied().max().unwrap_or(0);
        peak.saturating_sub(self.baseline_bytes)
    }
}

/// Result of a full profiling pass: five (sample size, job memory) points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilingReport {
    pub samples: Vec<MemorySample>,
    pub sample_fractions: Vec<f64>,
    pub wall_time_s: f64,
}

impl ProfilingReport {
    pub fn save(&self, path: &Path) -> Result<(), ProfileError> {
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, json).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ProfileError::ReportParse {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Profiling knobs; the defaults implement the standard procedure: start at
/// one percent of the dataset and adjust until the run lands in a 30–300 s
/// window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub window: (f64, f64),
    pub poll_interval_s: f64,
    pub seed: u64,
    pub mode: SampleMode,
    /// Where sample files are staged; the system temp dir by default.
    pub work_dir: Option<PathBuf>,
    pub start_fraction: f64,
    pub max_calibration_attempts: usize,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            window: (30.0, 300.0),
            poll_interval_s: 0.2,
            seed: 0,
            mode: SampleMode::Bernoulli,
            work_dir: None,
            start_fraction: 0.01,
            max_calibration_attempts: 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("command template must contain `{{input}}` exactly once (found {placeholder_count})")]
    InvalidTemplate { placeholder_count: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse profiling report {path}: {source}")]
    ReportParse { path: String, source: serde_json::Error },
    #[error("sample fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("sampling produced an empty file (achieved {achieved_bytes} bytes at fraction {fraction})")]
    EmptySample { fraction: f64, achieved_bytes: u64 },
    #[error("command exited with {status}: {stderr_tail}")]
    CommandFailed { status: i32, stderr_tail: String, trace: TraceSeries },
    #[error("runtime window ({0}, {1}) s not reached in {attempts} attempts; last runtime {last_runtime_s:.1} s", window.0, window.1)]
    CalibrationFailed { window: (f64, f64), attempts: usize, last_runtime_s: f64 },
    #[error("profiling failed after {} completed sample(s): {source}", partial.len())]
    Partial { partial: Vec<MemorySample>, source: Box<ProfileError> },
    #[error("process monitoring requires /proc (Linux)")]
    Unsupported,
}

/// Writes a seeded sample of a record-delimited (newline by default) file.
/// Returns the sample size in bytes. `fraction` 1.0 copies byte-identically
/// in either mode.
pub fn generate_sample(
    dataset: &Path,
    fraction: f64,
    seed: u64,
    mode: SampleMode,
    out: &Path,
) -> Result<u64, ProfileError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ProfileError::InvalidFraction(fraction));
    }
    let data = std::fs::read(dataset).map_err(|source| ProfileError::Io {
        path: dataset.display().to_string(),
        source,
    })?;
    let records: Vec<&[u8]> = data.split_inclusive(|&b| b == b'\n').collect();

    let mut kept: Vec<u8> = Vec::new();
    match mode {
        SampleMode::Bernoulli => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for record in &records {
                if rng.random::<f64>() < fraction {
                    kept.extend_from_slice(record);
                }
            }
        }
        SampleMode::Prefix => {
            let take = (fraction * records.len() as f64).ceil() as usize;
            for record in records.iter().take(take) {
                kept.extend_from_slice(record);
            }
        }
    }

    if kept.is_empty() {
        return Err(ProfileError::EmptySample { fraction, achieved_bytes: 0 });
    }
    std::fs::write(out, &kept).map_err(|source| ProfileError::Io {
        path: out.display().to_string(),
        source,
    })?;
    Ok(kept.len() as u64)
}

enum RunOutcome {
    Completed { trace: TraceSeries, wall_s: f64, status: i32, stderr_tail: String },
    /// Canceled at the deadline; the tree was killed.
    TimedOut { wall_s: f64 },
}

/// Launches the command and samples tree RSS until exit (or the deadline).
/// The baseline is the minimum of the first three samples, taken before the
/// workload ramps up.
fn run_monitored(
    cmd: &CommandTemplate,
    input: &Path,
    poll_interval_s: f64,
    deadline_s: Option<f64>,
) -> Result<RunOutcome, ProfileError> {
    if !cfg!(target_os = "linux") {
        return Err(ProfileError::Unsupported);
    }
    let mut command = cmd.command(input);
    command.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        command.process_group(0);
    }
    let mut child = command.spawn().map_err(|source| ProfileError::Io {
        path: cmd.argv_template[0].clone(),
        source,
    })?;
    let stderr = child.stderr.take().expect("stderr is piped");
    let drain = std::thread::spawn(move || {
        use std::io::Read;
        let mut buf = Vec::new();
        let mut reader = std::io::BufReader::new(stderr);
        let _ = reader.read_to_end(&mut buf);
        buf
    });

    let start = Instant::now();
    let poll = Duration::from_secs_f64(poll_interval_s.max(0.01));
    let mut timestamps_s = Vec::new();
    let mut rss_bytes = Vec::new();
    let status = loop {
        timestamps_s.push(start.elapsed().as_secs_f64());
        rss_bytes.push(procfs::process_tree_rss_bytes(child.id()));

        if let Some(status) = child.try_wait().map_err(|source| ProfileError::Io {
            path: "wait".into(),
            source,
        })? {
            break Some(status);
        }
        if let Some(deadline) = deadline_s {
            if start.elapsed().as_secs_f64() >= deadline {
                kill_tree(&mut child);
                let _ = child.wait();
                break None;
            }
        }
        std::thread::sleep(poll);
    };
    let wall_s = start.elapsed().as_secs_f64();

    let stderr_buf = drain.join().unwrap_or_default();
    let stderr_tail = String::from_utf8_lossy(
        &stderr_buf[stderr_buf.len().saturating_sub(4096)..],
    )
    .into_owned();

    let Some(status) = status else {
        return Ok(RunOutcome::TimedOut { wall_s });
    };

    let baseline_bytes =
        rss_bytes.iter().take(3).copied().min().unwrap_or(0);
    let trace = TraceSeries { timestamps_s, rss_bytes, baseline_bytes };
    Ok(RunOutcome::Completed {
        trace,
        wall_s,
        status: status.code().unwrap_or(-1),
        stderr_tail,
    })
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group; negative pid signals the
        // whole group.
        unsafe {
            libc::kill(-(child.id() as i32), libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

/// Runs the job on `input` and returns the full memory trace.
pub fn monitor_run(
    cmd: &CommandTemplate,
    input: &Path,
    poll_interval_s: f64,
) -> Result<TraceSeries, ProfileError> {
    match run_monitored(cmd, input, poll_interval_s, None)? {
        RunOutcome::Completed { trace, status: 0, .. } => Ok(trace),
        RunOutcome::Completed { trace, status, stderr_tail, .. } => {
            Err(ProfileError::CommandFailed { status, stderr_tail, trace })
        }
        RunOutcome::TimedOut { .. } => unreachable!("no deadline was set"),
    }
}

/// Finds a sample fraction whose runtime lands inside the window: starts at
/// `start_fraction`, cancels and halves when a run exceeds the maximum,
/// doubles (capped at 1.0) when it finishes under the minimum.
pub fn calibrate_sample_fraction(
    cmd: &CommandTemplate,
    dataset: &Path,
    options: &ProfileOptions,
) -> Result<f64, ProfileError> {
    let (min_s, max_s) = options.window;
    let work_dir = staging_dir(options)?;
    let mut fraction = options.start_fraction;
    let mut last_runtime = 0.0;
    for attempt in 0..options.max_calibration_attempts {
        let sample_path = work_dir.join(format!("calibrate-{attempt}.sample"));
        let result = generate_sample(
            dataset,
            fraction,
            options.seed.wrapping_add(0x5EED_0000 + attempt as u64),
            options.mode,
            &sample_path,
        );
        let outcome = result.and_then(|_| {
            run_monitored(cmd, &sample_path, options.poll_interval_s, Some(max_s))
        });
        let _ = std::fs::remove_file(&sample_path);

        match outcome? {
            RunOutcome::TimedOut { wall_s } => {
                last_runtime = wall_s;
                fraction /= 2.0;
            }
            RunOutcome::Completed { status, stderr_tail, trace, .. } if status != 0 => {
                return Err(ProfileError::CommandFailed { status, stderr_tail, trace });
            }
            RunOutcome::Completed { wall_s, .. } => {
                last_runtime = wall_s;
                if wall_s < min_s {
                    if fraction >= 1.0 {
                        // Even the whole dataset is too quick; doubling
                        // cannot help, so run the attempts out.
                        fraction = 1.0;
                    } else {
                        fraction = (fraction * 2.0).min(1.0);
                        continue;
                    }
                } else if wall_s > max_s {
                    fraction /= 2.0;
                } else {
                    return Ok(fraction);
                }
            }
        }
    }
    Err(ProfileError::CalibrationFailed {
        window: options.window,
        attempts: options.max_calibration_attempts,
        last_runtime_s: last_runtime,
    })
}

/// Full profiling pass: calibrate a base fraction `f`, then run the job on
/// five equally spaced sample sizes `f/5 … f`, measuring peak-minus-baseline
/// memory for each.
pub fn profile_job(
    cmd: &CommandTemplate,
    dataset: &Path,
    options: &ProfileOptions,
) -> Result<ProfilingReport, ProfileError> {
    let started = Instant::now();
    let base = calibrate_sample_fraction(cmd, dataset, options)?;
    let fractions: Vec<f64> =
        (1..=SAMPLE_RUNS).map(|i| base * i as f64 / SAMPLE_RUNS as f64).collect();

    let work_dir = staging_dir(options)?;
    let mut samples = Vec::with_capacity(SAMPLE_RUNS);
    for (i, &fraction) in fractions.iter().enumerate() {
        let sample_path = work_dir.join(format!("profile-{i}.sample"));
        let run = generate_sample(
            dataset,
            fraction,
            options.seed.wrapping_add(i as u64),
            options.mode,
            &sample_path,
        )
        .and_then(|input_bytes| {
            let trace = monitor_run(cmd, &sample_path, options.poll_interval_s)?;
            Ok(MemorySample { input_bytes, job_memory_bytes: trace.peak_minus_baseline() })
        });
        let _ = std::fs::remove_file(&sample_path);
        match run {
            Ok(sample) => samples.push(sample),
            Err(source) => {
                return Err(ProfileError::Partial { partial: samples, source: Box::new(source) })
            }
        }
    }

    Ok(ProfilingReport {
        samples,
        sample_fractions: fractions,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

fn staging_dir(options: &ProfileOptions) -> Result<PathBuf, ProfileError> {
    let dir = options
        .work_dir
        .clone()
        .unwrap_or_else(|| std::env::temp_dir().join(format!("memtune-{}", std::process::id())));
    std::fs::create_dir_all(&dir).map_err(|source| ProfileError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(dir)
}
