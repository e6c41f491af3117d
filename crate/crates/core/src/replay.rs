//! Replays searches over a measured (job, configuration) → (runtime, cost)
//! table and computes the evaluation metrics: iterations until a normalized
//! cost threshold is reached, per-iteration best-cost curves, and cumulative
//! cost curves, averaged over many paired seeds.
//!
//! Seed repetitions and jobs are embarrassingly parallel; runs fan out over
//! a thread pool and reduce in a fixed order, so reports are deterministic.

pub mod synthetic;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config_space::{
    build_priority_partition, ConfigId, ConfigSpace, MachineType, MemoryClass,
    PartitionParams, SpaceError,
};
use crate::memory_model::{CategoryKind, MemoryRequirement};
use crate::search::{
    run_baseline_search, run_priority_search, CostOracle, OracleError, SearchError,
    SearchParams, SearchTrace,
};

/// Normalized-cost thresholds of the standard report: within 20%, within
/// 10%, and exactly optimal.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [1.2, 1.1, 1.0];

/// Measured executions of one job over its own reconstructed space; `runs`
/// is id-indexed into that space and complete by construction. Real
/// exports are often ragged (runs that timed out are absent), so each job
/// carries the space it actually covers.
#[derive(Debug, Clone, PartialEq)]
pub struct JobRuns {
    pub name: String,
    pub framework: String,
    pub dataset_size_label: String,
    space: ConfigSpace,
    runs: Vec<(f64, f64)>, // (runtime_s, cost) per ConfigId of `space`
}

impl JobRuns {
    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn cost(&self, id: ConfigId) -> f64 {
        self.runs[id.0].1
    }

    pub fn runtime_s(&self, id: ConfigId) -> f64 {
        self.runs[id.0].0
    }
}

/// The replay table: per-job runs plus the union space over all jobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTable {
    union_space: ConfigSpace,
    jobs: Vec<JobRuns>, // sorted by job name
}

impl ReplayTable {
    /// Every configuration measured for at least one job.
    pub fn space(&self) -> &ConfigSpace {
        &self.union_space
    }

    pub fn jobs(&self) -> &[JobRuns] {
        &self.jobs
    }

    pub fn job(&self, name: &str) -> Option<&JobRuns> {
        self.jobs.iter().find(|j| j.name == name)
    }

    pub fn oracle<'a>(&'a self, job: &'a JobRuns) -> ReplayOracle<'a> {
        ReplayOracle { job }
    }

    /// Errors on the first job that does not cover the union space, listing
    /// its gaps. Rectangular exports pass; ragged ones report what is
    /// missing.
    pub fn validate_complete(&self) -> Result<(), ReplayError> {
        for job in &self.jobs {
            let gaps: Vec<String> = self
                .union_space
                .iter()
                .filter(|(_, c)| {
                    !job.space.iter().any(|(_, jc)| {
                        jc.machine.name == c.machine.name && jc.scale_out == c.scale_out
                    })
                })
                .map(|(_, c)| c.to_string())
                .collect();
            if !gaps.is_empty() {
                return Err(ReplayError::MissingConfigs { job: job.name.clone(), gaps });
            }
        }
        Ok(())
    }
}

/// Deterministic cost oracle backed by the table.
pub struct ReplayOracle<'a> {
    job: &'a JobRuns,
}

impl CostOracle for ReplayOracle<'_> {
    fn observe(&self, id: ConfigId) -> Result<(f64, f64), OracleError> {
        self.job.runs.get(id.0).map(|&(runtime_s, cost)| (cost, runtime_s)).ok_or_else(|| {
            OracleError { config_id: id, message: format!("job {} has no such config", self.job.name) }
        })
    }
}

#[derive(Debug, Deserialize)]
struct ReplayRow {
    job: String,
    machine_type: String,
    cores: u32,
    memory_gb: f64,
    price_per_hour: f64,
    scale_out: u32,
    runtime_s: f64,
    #[serde(default)]
    cost: Option<f64>,
    #[serde(default)]
    framework: Option<String>,
    #[serde(default)]
    dataset_size: Option<String>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("job {job} is missing {} configuration(s): {gaps:?}", gaps.len())]
    MissingConfigs { job: String, gaps: Vec<String> },
    #[error("job {job} has duplicate entries for {config}")]
    DuplicateEntry { job: String, config: String },
    #[error("machine type {name} appears with conflicting attributes")]
    InconsistentMachineType { name: String },
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("no memory category supplied for job {0}")]
    MissingCategory(String),
    #[error("category sidecar {path}:{line}: {message}")]
    Sidecar { path: String, line: u64, message: String },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("replay table has no jobs")]
    Empty,
}

/// Loads a replay table. The file is delimited text with a header:
/// `job,machine_type,cores,memory_gb,price_per_hour,scale_out,runtime_s`
/// plus optional `cost`, `framework`, and `dataset_size` columns. When no
/// cost column exists it is derived as `runtime_s / 3600 × scale_out ×
/// price_per_hour`.
///
/// Each job's space is reconstructed from its own rows (catalog order ×
/// ascending scale-out); jobs may cover different subsets of the union
/// space, which is normal for exports where timed-out runs are absent.
/// Use [`ReplayTable::validate_complete`] to require full coverage.
pub fn load_replay_table(path: &Path) -> Result<ReplayTable, ReplayError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)
        .map_err(|source| ReplayError::Io { path: display.clone(), source })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);

    let mut catalog: Vec<MachineType> = Vec::new();
    let mut rows: Vec<(String, usize, u32, f64, f64, String, String)> = Vec::new();

    for record in reader.deserialize::<ReplayRow>() {
        let row = match record {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(ReplayError::Parse {
                    path: display,
                    line,
                    message: e.to_string(),
                });
            }
        };
        let machine = MachineType {
            name: row.machine_type.clone(),
            cores: row.cores,
            memory_gb: row.memory_gb,
            price_per_hour: row.price_per_hour,
        };
        let idx = match catalog.iter().position(|m| m.name == machine.name) {
            Some(idx) => {
                if catalog[idx] != machine {
                    return Err(ReplayError::InconsistentMachineType { name: machine.name });
                }
                idx
            }
            None => {
                machine.validate()?;
                catalog.push(machine);
                catalog.len() - 1
            }
        };
        let cost = row
            .cost
            .unwrap_or(row.runtime_s / 3600.0 * row.scale_out as f64 * row.price_per_hour);
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(cost) || !positive(row.runtime_s) {
            return Err(ReplayError::Parse {
                path: display,
                line: 0,
                message: format!(
                    "job {} on {}x{}: runtime and cost must be positive",
                    row.job, row.scale_out, row.machine_type
                ),
            });
        }
        rows.push((
            row.job,
            idx,
            row.scale_out,
            row.runtime_s,
            cost,
            row.framework.unwrap_or_default(),
            row.dataset_size.unwrap_or_default(),
        ));
    }
    if rows.is_empty() {
        return Err(ReplayError::Empty);
    }

    // Per job: (catalog index, scale-out, runtime, cost) rows plus the
    // first-seen framework and size labels.
    type JobRows = (Vec<(usize, u32, f64, f64)>, String, String);
    let mut union_pairs: BTreeMap<(usize, u32), ()> = BTreeMap::new();
    let mut per_job: BTreeMap<String, JobRows> = BTreeMap::new();
    for (job, idx, scale_out, runtime_s, cost, framework, size) in rows {
        union_pairs.entry((idx, scale_out)).or_insert(());
        per_job
            .entry(job)
            .or_insert_with(|| (Vec::new(), framework, size))
            .0
            .push((idx, scale_out, runtime_s, cost));
    }

    let union_space = ConfigSpace::from_pairs(
        &catalog,
        &union_pairs
            .keys()
            .map(|&(idx, so)| (catalog[idx].name.clone(), so))
            .collect::<Vec<_>>(),
    )?;

    let mut jobs = Vec::with_capacity(per_job.len());
    for (name, (mut entries, framework, size)) in per_job {
        entries.sort_by_key(|&(idx, so, ..)| (idx, so));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                return Err(ReplayError::DuplicateEntry {
                    job: name,
                    config: format!("{}x{}", pair[0].1, catalog[pair[0].0].name),
                });
            }
        }
        let pairs: Vec<(String, u32)> =
            entries.iter().map(|&(idx, so, ..)| (catalog[idx].name.clone(), so)).collect();
        let space = ConfigSpace::from_pairs(&catalog, &pairs)?;
        // from_pairs sorts exactly like `entries`, so runs align by index.
        let runs: Vec<(f64, f64)> =
            entries.iter().map(|&(.., runtime_s, cost)| (runtime_s, cost)).collect();
        jobs.push(JobRuns { name, framework, dataset_size_label: size, space, runs });
    }

    Ok(ReplayTable { union_space, jobs })
}

/// Costs of a job divided by its cheapest execution; the optimum maps to
/// exactly 1.0. Returned id-indexed.
pub fn normalize_costs(job: &JobRuns) -> Vec<f64> {
    let min = job.runs.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    job.runs.iter().map(|r| r.1 / min).collect()
}

/// For each threshold, the first 1-based iteration at which the best
/// normalized cost so far is ≤ the threshold, or `None` if never reached.
/// Since normalized costs are ≥ 1.0, the 1.0 threshold is equivalent to
/// membership in the argmin set: only a true optimum satisfies it.
pub fn iterations_to_thresholds(
    trace: &SearchTrace,
    normalized: &[f64],
    thresholds: &[f64],
) -> Vec<Option<usize>> {
    thresholds
        .iter()
        .map(|&t| {
            let mut best = f64::INFINITY;
            for obs in &trace.observations {
                best = best.min(normalized[obs.config_id.0]);
                if best <= t {
                    return Some(obs.iteration);
                }
            }
            None
        })
        .collect()
}

/// The two search strategies the harness compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Baseline,
    Priority,
}

impl SearchMethod {
    pub const BOTH: [SearchMethod; 2] = [SearchMethod::Baseline, SearchMethod::Priority];
}

impl std::fmt::Display for SearchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SearchMethod::Baseline => write!(f, "baseline"),
            SearchMethod::Priority => write!(f, "priority"),
        }
    }
}

/// Parameters of a comparison run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareParams {
    /// Paired repetitions per job; both methods replay every seed.
    pub n_seeds: usize,
    /// Seed of repetition `i` is `base_seed + i`.
    pub base_seed: u64,
    pub search: SearchParams,
    pub partition: PartitionParams,
    pub thresholds: Vec<f64>,
    /// Run every search to exhaustion (stopping rule disabled) so that
    /// every threshold is eventually reached. This matches the
    /// iterations-to-threshold metric, which asks when a configuration
    /// *would* be found, independent of the stopping policy.
    pub exhaustive: bool,
}

impl Default for CompareParams {
    fn default() -> Self {
        Self {
            n_seeds: 200,
            base_seed: 0,
            search: SearchParams::default(),
            partition: PartitionParams::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            exhaustive: true,
        }
    }
}

/// Per-job comparison outcome. Means are over the seeds where the threshold
/// was reached; `unreached` counts the excluded seeds (always zero for
/// exhaustive runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobComparison {
    pub job: String,
    pub category: CategoryKind,
    /// `[method][threshold]`, method order per [`SearchMethod::BOTH`].
    pub mean_iterations: [Vec<Option<f64>>; 2],
    pub unreached: [Vec<usize>; 2],
    /// priority mean / baseline mean, per threshold.
    pub quotients: Vec<Option<f64>>,
}

/// Mean best-so-far and cumulative normalized cost at one iteration,
/// averaged over jobs and seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub iteration: usize,
    pub baseline: f64,
    pub priority: f64,
}

/// Full comparison outcome: per-job rows, the overall mean row, and the
/// plot-ready per-iteration series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub thresholds: Vec<f64>,
    pub seeds: Vec<u64>,
    pub jobs: Vec<JobComparison>,
    /// Mean over jobs of the per-job means, like the per-job rows.
    pub overall: JobComparison,
    pub best_cost_series: Vec<SeriesPoint>,
    pub cumulative_cost_series: Vec<SeriesPoint>,
}

struct RunMetrics {
    iterations: Vec<Option<usize>>,
    best_series: Vec<f64>,
    cumulative_series: Vec<f64>,
}

fn run_metrics(
    trace: &SearchTrace,
    normalized: &[f64],
    thresholds: &[f64],
    series_len: usize,
) -> RunMetrics {
    let iterations = iterations_to_thresholds(trace, normalized, thresholds);
    let mut best_series = Vec::with_capacity(series_len);
    let mut cumulative_series = Vec::with_capacity(series_len);
    let mut best = f64::INFINITY;
    let mut cumulative = 0.0;
    for k in 0..series_len {
        if let Some(obs) = trace.observations.get(k) {
            let c = normalized[obs.config_id.0];
            best = best.min(c);
            cumulative += c;
        } else {
            // Search ended: the job keeps running on the best found config.
            cumulative += best;
        }
        best_series.push(best);
        cumulative_series.push(cumulative);
    }
    RunMetrics { iterations, best_series, cumulative_series }
}

/// Replays both methods over every (job, seed) pair and aggregates the
/// report. Jobs must all have a memory class; linear classes carry the
/// extrapolated requirement (typically from a sidecar file).
pub fn compare_methods(
    table: &ReplayTable,
    classes: &BTreeMap<String, MemoryClass>,
    params: &CompareParams,
) -> Result<ComparisonReport, ReplayError> {
    if table.jobs.is_empty() {
        return Err(ReplayError::Empty);
    }
    for job in &table.jobs {
        if !classes.contains_key(&job.name) {
            return Err(ReplayError::MissingCategory(job.name.clone()));
        }
    }

    // Series cover the longest per-job space; shorter traces carry forward.
    let series_len = table.jobs.iter().map(|j| j.space.len()).max().unwrap_or(0);
    let seeds: Vec<u64> = (0..params.n_seeds).map(|i| params.base_seed + i as u64).collect();

    // One task per (job, seed): run baseline and priority with the same
    // seed. Tasks are independent; results collect in input order.
    let tasks: Vec<(usize, u64)> = (0..table.jobs.len())
        .flat_map(|j| seeds.iter().map(move |&s| (j, s)))
        .collect();

    let per_job_setup: Vec<(Vec<f64>, crate::config_space::PriorityPartition)> = table
        .jobs
        .iter()
        .map(|job| {
            let class = &classes[&job.name];
            let partition = build_priority_partition(&job.space, class, &params.partition)?;
            Ok((normalize_costs(job), partition))
        })
        .collect::<Result<_, ReplayError>>()?;

    let results: Vec<[RunMetrics; 2]> = tasks
        .par_iter()
        .map(|&(job_idx, seed)| {
            let job = &table.jobs[job_idx];
            let (normalized, partition) = &per_job_setup[job_idx];
            let oracle = table.oracle(job);
            let mut search = params.search.clone();
            search.seed = seed;
            if params.exhaustive {
                search.ei_stop_fraction = 0.0;
                search.max_iterations = None;
            }
            let baseline = run_baseline_search(&job.space, &oracle, &search)?;
            let priority = run_priority_search(&job.space, partition, &oracle, &search)?;
            Ok([
                run_metrics(&baseline, normalized, &params.thresholds, series_len),
                run_metrics(&priority, normalized, &params.thresholds, series_len),
            ])
        })
        .collect::<Result<_, ReplayError>>()?;

    // Deterministic reduction in task order.
    let t_count = params.thresholds.len();
    let n_jobs = table.jobs.len();
    let mut sums = vec![[vec![0.0; t_count], vec![0.0; t_count]]; n_jobs];
    let mut counts = vec![[vec![0usize; t_count], vec![0usize; t_count]]; n_jobs];
    let mut best_acc = vec![[vec![0.0; series_len], vec![0.0; series_len]]; n_jobs];
    let mut cum_acc = vec![[vec![0.0; series_len], vec![0.0; series_len]]; n_jobs];

    for (task_idx, metrics) in results.iter().enumerate() {
        let (job_idx, _) = tasks[task_idx];
        for m in 0..2 {
            for (t, reached) in metrics[m].iterations.iter().enumerate() {
                if let Some(iter) = reached {
                    sums[job_idx][m][t] += *iter as f64;
                    counts[job_idx][m][t] += 1;
                }
            }
            for k in 0..series_len {
                best_acc[job_idx][m][k] += metrics[m].best_series[k];
                cum_acc[job_idx][m][k] += metrics[m].cumulative_series[k];
            }
        }
    }

    let n_seeds_f = params.n_seeds as f64;
    let mut jobs_out = Vec::with_capacity(n_jobs);
    for (job_idx, job) in table.jobs.iter().enumerate() {
        let mean_of = |m: usize, t: usize| -> Option<f64> {
            (counts[job_idx][m][t] > 0)
                .then(|| sums[job_idx][m][t] / counts[job_idx][m][t] as f64)
        };
        let mean_iterations = [
            (0..t_count).map(|t| mean_of(0, t)).collect::<Vec<_>>(),
            (0..t_count).map(|t| mean_of(1, t)).collect::<Vec<_>>(),
        ];
        let unreached = [
            (0..t_count).map(|t| params.n_seeds - counts[job_idx][0][t]).collect::<Vec<_>>(),
            (0..t_count).map(|t| params.n_seeds - counts[job_idx][1][t]).collect::<Vec<_>>(),
        ];
        let quotients = (0..t_count)
            .map(|t| match (mean_iterations[1][t], mean_iterations[0][t]) {
                (Some(p), Some(b)) if b > 0.0 => Some(p / b),
                _ => None,
            })
            .collect();
        jobs_out.push(JobComparison {
            job: job.name.clone(),
            category: kind_of(&classes[&job.name]),
            mean_iterations,
            unreached,
            quotients,
        });
    }

    // Overall row: mean over jobs of per-job means, quotient of the overall
    // means. Jobs with an unreached threshold are excluded from that
    // threshold's overall mean.
    let overall_mean = |m: usize, t: usize| -> Option<f64> {
        let vals: Vec<f64> =
            jobs_out.iter().filter_map(|j| j.mean_iterations[m][t]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let overall_iterations = [
        (0..t_count).map(|t| overall_mean(0, t)).collect::<Vec<_>>(),
        (0..t_count).map(|t| overall_mean(1, t)).collect::<Vec<_>>(),
    ];
    let overall_quotients = (0..t_count)
        .map(|t| match (overall_iterations[1][t], overall_iterations[0][t]) {
            (Some(p), Some(b)) if b > 0.0 => Some(p / b),
            _ => None,
        })
        .collect();
    let overall = JobComparison {
        job: "mean".into(),
        category: CategoryKind::Unclear,
        mean_iterations: overall_iterations,
        unreached: [
            (0..t_count).map(|t| jobs_out.iter().map(|j| j.unreached[0][t]).sum()).collect(),
            (0..t_count).map(|t| jobs_out.iter().map(|j| j.unreached[1][t]).sum()).collect(),
        ],
        quotients: overall_quotients,
    };

    let denominator = n_seeds_f * n_jobs as f64;
    let series = |acc: &Vec<[Vec<f64>; 2]>| -> Vec<SeriesPoint> {
        (0..series_len)
            .map(|k| SeriesPoint {
                iteration: k + 1,
                baseline: acc.iter().map(|a| a[0][k]).sum::<f64>() / denominator,
                priority: acc.iter().map(|a| a[1][k]).sum::<f64>() / denominator,
            })
            .collect()
    };

    Ok(ComparisonReport {
        thresholds: params.thresholds.clone(),
        seeds,
        jobs: jobs_out,
        overall,
        best_cost_series: series(&best_acc),
        cumulative_cost_series: series(&cum_acc),
    })
}

fn kind_of(class: &MemoryClass) -> CategoryKind {
    match class {
        MemoryClass::Linear(_) => CategoryKind::Linear,
        MemoryClass::Flat => CategoryKind::Flat,
        MemoryClass::Unclear => CategoryKind::Unclear,
    }
}

#[derive(Debug, Deserialize)]
struct SidecarRow {
    job: String,
    category: String,
    #[serde(default)]
    job_gb: Option<f64>,
}

/// Loads the memory-category sidecar: `job,category,job_gb` with `job_gb`
/// required for linear jobs. This allows replaying an evaluation without
/// rerunning its profiling.
pub fn load_category_sidecar(
    path: &Path,
) -> Result<BTreeMap<String, MemoryClass>, ReplayError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)
        .map_err(|source| ReplayError::Io { path: display.clone(), source })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut classes = BTreeMap::new();
    for (i, record) in reader.deserialize::<SidecarRow>().enumerate() {
        let line = i as u64 + 2; // header is line 1
        let row = record.map_err(|e| ReplayError::Sidecar {
            path: display.clone(),
            line,
            message: e.to_string(),
        })?;
        let kind: CategoryKind = row.category.parse().map_err(|_| ReplayError::Sidecar {
            path: display.clone(),
            line,
            message: format!("unknown category {:?}", row.category),
        })?;
        let class = match kind {
            CategoryKind::Linear => {
                let job_gb = row.job_gb.filter(|&g| g > 0.0).ok_or_else(|| {
                    ReplayError::Sidecar {
                        path: display.clone(),
                        line,
                        message: "linear jobs need a positive job_gb".into(),
                    }
                })?;
                MemoryClass::Linear(MemoryRequirement { job_gb, clamped: false })
            }
            CategoryKind::Flat => MemoryClass::Flat,
            CategoryKind::Unclear => MemoryClass::Unclear,
        };
        if classes.insert(row.job.clone(), class).is_some() {
            return Err(ReplayError::Sidecar {
                path: display,
                line,
                message: format!("duplicate job {}", row.job),
            });
        }
    }
    Ok(classes)
}

/// Writes `report.csv`, `best_cost_by_iteration.csv`, and
/// `cumulative_cost_by_iteration.csv` under `dir`. Formatting is fixed, so
/// identical reports produce identical bytes.
pub fn write_report(report: &ComparisonReport, dir: &Path) -> Result<(), ReplayError> {
    std::fs::create_dir_all(dir)
        .map_err(|source| ReplayError::Io { path: dir.display().to_string(), source })?;

    let fmt_mean = |v: &Option<f64>| v.map_or("never".to_string(), |x| format!("{x:.3}"));
    let fmt_quot = |v: &Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));

    let report_path = dir.join("report.csv");
    let mut out = String::new();
    out.push_str("job,category");
    for method in SearchMethod::BOTH {
        for t in &report.thresholds {
            out.push_str(&format!(",{method}_c{t}"));
        }
    }
    for t in &report.thresholds {
        out.push_str(&format!(",quotient_c{t}"));
    }
    for method in SearchMethod::BOTH {
        for t in &report.thresholds {
            out.push_str(&format!(",{method}_unreached_c{t}"));
        }
    }
    out.push('\n');
    for row in report.jobs.iter().chain([&report.overall]) {
        out.push_str(&row.job);
        out.push(',');
        if row.job == "mean" {
            out.push_str("all");
        } else {
            out.push_str(&row.category.to_string());
        }
        for m in 0..2 {
            for v in &row.mean_iterations[m] {
                out.push(',');
                out.push_str(&fmt_mean(v));
            }
        }
        for q in &row.quotients {
            out.push(',');
            out.push_str(&fmt_quot(q));
        }
        for m in 0..2 {
            for u in &row.unreached[m] {
                out.push_str(&format!(",{u}"));
            }
        }
        out.push('\n');
    }
    write_text(&report_path, &out)?;

    for (name, series) in [
        ("best_cost_by_iteration.csv", &report.best_cost_series),
        ("cumulative_cost_by_iteration.csv", &report.cumulative_cost_series),
    ] {
        let mut out = String::from("iteration,baseline,priority\n");
        for point in series {
            out.push_str(&format!(
                "{},{:.6},{:.6}\n",
                point.iteration, point.baseline, point.priority
            ));
        }
        write_text(&dir.join(name), &out)?;
    }
    Ok(())
}

/// Writes a single search trace as CSV, one observation per line.
pub fn write_trace(
    trace: &SearchTrace,
    space: &ConfigSpace,
    normalized: &[f64],
    path: &Path,
) -> Result<(), ReplayError> {
    let mut out =
        String::from("iteration,config_id,machine_type,scale_out,cost,runtime_s,normalized_cost,phase\n");
    for obs in &trace.observations {
        let config = space.get(obs.config_id).unwrap();
        let phase = match trace.phase_boundaries.first() {
            Some(&b) if obs.iteration >= b => "remainder",
            _ => "priority",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{}\n",
            obs.iteration,
            obs.config_id,
            config.machine.name,
            config.scale_out,
            obs.cost,
            obs.runtime_s,
            normalized[obs.config_id.0],
            phase
        ));
    }
    out.push_str(&format!("# stop_reason={}\n", trace.stop_reason));
    write_text(path, &out)
}

/// Writes the replay table in the loader's schema.
pub fn write_table_csv(table: &ReplayTable, path: &Path) -> Result<(), ReplayError> {
    let mut out = String::from(
        "job,machine_type,cores,memory_gb,price_per_hour,scale_out,runtime_s,cost,framework,dataset_size\n",
    );
    for job in &table.jobs {
        for (id, config) in job.space.iter() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                job.name,
                config.machine.name,
                config.machine.cores,
                config.machine.memory_gb,
                config.machine.price_per_hour,
                config.scale_out,
                job.runtime_s(id),
                job.cost(id),
                job.framework,
                job.dataset_size_label,
            ));
        }
    }
    write_text(path, &out)
}

/// Writes the memory-category sidecar in the loader's schema.
pub fn write_sidecar_csv(
    classes: &BTreeMap<String, MemoryClass>,
    path: &Path,
) -> Result<(), ReplayError> {
    let mut out = String::from("job,category,job_gb\n");
    for (job, class) in classes {
        match class {
            MemoryClass::Linear(req) => {
                out.push_str(&format!("{job},linear,{}\n", req.job_gb))
            }
            MemoryClass::Flat => out.push_str(&format!("{job},flat,\n")),
            MemoryClass::Unclear => out.push_str(&format!("{job},unclear,\n")),
        }
    }
    write_text(path, &out)
}

fn write_text(path: &Path, text: &str) -> Result<(), ReplayError> {
    let mut file = std::fs::File::create(path)
        .map_err(|source| ReplayError::Io { path: path.display().to_string(), source })?;
    file.write_all(text.as_bytes())
        .map_err(|source| ReplayError::Io { path: path.display().to_string(), source })
}
