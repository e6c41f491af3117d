//! Seeded synthetic replay datasets for benchmarks and demos.
//!
//! The generated jobs mimic the cost structure the priority partition is
//! designed for: linear-memory jobs pay a 2–5× cost cliff on clusters with
//! too little memory, flat jobs are cheapest on low-memory clusters, and
//! unclear jobs carry an arbitrary cost surface.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config_space::{ConfigSpace, MachineType, MemoryClass};
use crate::memory_model::{CategoryKind, MemoryRequirement};

use super::{JobRuns, ReplayTable};

/// Node overhead the generated cost surfaces assume, matching the partition
/// default.
const OVERHEAD_GB: f64 = 2.0;

/// Cliff margin above the published requirement: clusters whose usable
/// memory is below `(1 + margin) × job_gb` pay the penalty. Slightly wider
/// than the default partition leeway, which is exactly what the leeway is
/// for.
const CLIFF_MARGIN: f64 = 0.15;

fn catalog() -> Vec<MachineType> {
    let machine = |name: &str, cores: u32, memory_gb: f64, price: f64| MachineType {
        name: name.into(),
        cores,
        memory_gb,
        price_per_hour: price,
    };
    vec![
        machine("c.large", 2, 4.0, 0.080),
        machine("m.large", 2, 8.0, 0.088),
        machine("r.large", 2, 16.0, 0.096),
        machine("m.xlarge", 4, 16.0, 0.176),
        machine("r.xlarge", 4, 32.0, 0.192),
    ]
}

const SCALE_OUTS: [u32; 12] = [4, 6, 8, 10, 12, 16, 20, 24, 28, 32, 40, 48];

/// The 60-configuration space every synthetic job runs on.
pub fn synthetic_space() -> ConfigSpace {
    ConfigSpace::enumerate(&catalog(), &SCALE_OUTS).expect("static catalog is valid")
}

/// Builds `jobs_per_class` jobs of each memory class over the synthetic
/// space, plus the matching category sidecar. Deterministic in the seed.
pub fn synthetic_dataset(
    seed: u64,
    jobs_per_class: usize,
) -> (ReplayTable, BTreeMap<String, MemoryClass>) {
    let space = synthetic_space();
    let mut jobs = Vec::new();
    let mut classes = BTreeMap::new();

    // Requirements span comfortably-satisfiable to barely-satisfiable;
    // cycled when more than four jobs per class are requested.
    let requirements = [250.0, 500.0, 900.0, 1000.0];

    for i in 0..jobs_per_class {
        let name = format!("linear-{i}");
        let job_gb = requirements[i % requirements.len()] * (1.0 + 0.02 * (i / 4) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x11 + i as u64));
        let work = rng.random_range(1.0e4..1.0e5);
        let runs: Vec<(f64, f64)> = space
            .iter()
            .map(|(_, config)| {
                let mut runtime = base_runtime(work, config, &mut rng);
                if config.usable_memory_gb(OVERHEAD_GB) < job_gb * (1.0 + CLIFF_MARGIN) {
                    runtime *= rng.random_range(2.0..5.0);
                }
                priced(runtime, config)
            })
            .collect();
        classes.insert(
            name.clone(),
            MemoryClass::Linear(MemoryRequirement { job_gb, clamped: false }),
        );
        jobs.push(job(name, CategoryKind::Linear, &space, runs));
    }

    for i in 0..jobs_per_class {
        let name = format!("flat-{i}");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x22 + i as u64));
        let work = rng.random_range(1.0e4..1.0e5);
        let runs: Vec<(f64, f64)> = space
            .iter()
            .map(|(_, config)| priced(base_runtime(work, config, &mut rng), config))
            .collect();
        classes.insert(name.clone(), MemoryClass::Flat);
        jobs.push(job(name, CategoryKind::Flat, &space, runs));
    }

    let mem_bounds = {
        let mems: Vec<f64> = space.iter().map(|(_, c)| c.total_memory_gb()).collect();
        (
            mems.iter().cloned().fold(f64::INFINITY, f64::min),
            mems.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    for i in 0..jobs_per_class {
        let name = format!("unclear-{i}");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x33 + i as u64));
        let work = rng.random_range(1.0e4..1.0e5);
        let depth = rng.random_range(0.6..1.2);
        let runs: Vec<(f64, f64)> = space
            .iter()
            .map(|(_, config)| {
                // Smooth slowdown bowl: cheap only with plenty of memory,
                // but not linearly so.
                let mem_norm = (config.total_memory_gb() - mem_bounds.0)
                    / (mem_bounds.1 - mem_bounds.0);
                let runtime = base_runtime(work, config, &mut rng)
                    * (1.0 + depth * (1.0 - mem_norm).powi(2));
                priced(runtime, config)
            })
            .collect();
        classes.insert(name.clone(), MemoryClass::Unclear);
        jobs.push(job(name, CategoryKind::Unclear, &space, runs));
    }

    jobs.sort_by(|a, b| a.name.cmp(&b.name));
    (ReplayTable { union_space: space, jobs }, classes)
}

fn job(
    name: String,
    kind: CategoryKind,
    space: &ConfigSpace,
    runs: Vec<(f64, f64)>,
) -> JobRuns {
    JobRuns {
        name,
        framework: "synthetic".into(),
        dataset_size_label: kind.to_string(),
        space: space.clone(),
        runs,
    }
}

/// Work divided over the cores with a mild per-node coordination slowdown
/// and ±4% noise. The noise band is narrow enough that the cheapest flat
/// config always stays inside the low-memory priority slice and cliffed
/// configs never undercut a clean optimum.
fn base_runtime(
    work: f64,
    config: &crate::config_space::ClusterConfig,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let slowdown = 1.0 + 0.01 * config.scale_out as f64;
    work / config.total_cores() as f64 * slowdown * rng.random_range(0.96..1.04)
}

fn priced(runtime_s: f64, config: &crate::config_space::ClusterConfig) -> (f64, f64) {
    (runtime_s, runtime_s / 3600.0 * config.hourly_cost())
}
