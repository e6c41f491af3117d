//! Cross-module integration: the model → partition → search → metrics flow
//! on replay data, and the stability of comparison means across disjoint
//! seed blocks.

use std::collections::BTreeMap;

use memtune_core::config_space::{build_priority_partition, MemoryClass, PartitionParams};
use memtune_core::memory_model::{
    extrapolate_requirement, fit_memory_model, MemorySample, R2Thresholds,
};
use memtune_core::replay::{
    compare_methods, iterations_to_thresholds, normalize_costs,
    synthetic::synthetic_dataset, CompareParams, DEFAULT_THRESHOLDS,
};
use memtune_core::search::{run_priority_search, SearchParams};

/// A profiling-shaped sample set drives the whole selection pipeline: fit,
/// extrapolate, partition, search, and score against the replay table.
#[test]
fn model_to_search_pipeline_finds_a_satisfying_optimum() {
    let (table, _) = synthetic_dataset(11, 4);

    // Profiling points consistent with "linear-1" (500 GB at full size):
    // slope 0.5 bytes per input byte over a 1 TB dataset.
    let full_bytes: u64 = 1_000_000_000_000;
    let samples: Vec<MemorySample> = (1..=5)
        .map(|i| {
            let input = i * 2_000_000_000u64;
            MemorySample { input_bytes: input, job_memory_bytes: input / 2 }
        })
        .collect();
    let model = fit_memory_model(&samples, R2Thresholds::default()).unwrap();
    let requirement = extrapolate_requirement(&model, full_bytes).unwrap();
    assert!((requirement.job_gb - 500.0).abs() < 1.0, "requirement {}", requirement.job_gb);

    let job = table.job("linear-1").unwrap();
    let partition = build_priority_partition(
        job.space(),
        &MemoryClass::Linear(requirement),
        &PartitionParams::default(),
    )
    .unwrap();
    assert!(!partition.priority().is_empty());
    assert!(partition.priority().len() < job.space().len());

    let oracle = table.oracle(job);
    let params = SearchParams { seed: 4, ei_stop_fraction: 0.0, ..Default::default() };
    let trace = run_priority_search(job.space(), &partition, &oracle, &params).unwrap();

    let normalized = normalize_costs(job);
    let iters = iterations_to_thresholds(&trace, &normalized, &DEFAULT_THRESHOLDS);
    let to_optimum = iters[2].expect("exhaustive trace reaches the optimum");
    // The optimum lives in the priority set, so it must be found before the
    // remainder phase opens.
    let boundary = trace.phase_boundaries.first().copied().unwrap_or(usize::MAX);
    assert!(
        to_optimum < boundary,
        "optimum found at iteration {to_optimum}, after the phase switch at {boundary}"
    );
}

/// Disjoint 200-seed blocks must agree on the overall means within 5%:
/// individual traces change with the seed, aggregate behavior does not.
#[test]
fn comparison_means_are_stable_across_seed_blocks() {
    let (table, classes) = synthetic_dataset(3, 4);
    let run = |base_seed: u64| {
        let params = CompareParams { n_seeds: 200, base_seed, ..Default::default() };
        compare_methods(&table, &classes, &params).unwrap()
    };
    let block_a = run(0);
    let block_b = run(200);

    // Per-seed traces really differ between the blocks.
    assert_ne!(
        block_a.best_cost_series, block_b.best_cost_series,
        "disjoint seed blocks produced identical series"
    );

    for method in 0..2 {
        for (t, threshold) in block_a.thresholds.iter().enumerate() {
            let a = block_a.overall.mean_iterations[method][t].unwrap();
            let b = block_b.overall.mean_iterations[method][t].unwrap();
            let rel = (a - b).abs() / a;
            // Small means (a handful of iterations) get an absolute floor:
            // a 0.3-iteration wobble is noise, not instability.
            assert!(
                rel <= 0.05 || (a - b).abs() <= 0.3,
                "method {method} threshold {threshold}: means {a:.3} vs {b:.3} differ by {:.1}%",
                rel * 100.0
            );
        }
    }
}

/// The sidecar-driven comparison honors per-job categories end to end.
#[test]
fn per_job_categories_shape_the_comparison() {
    let (table, classes) = synthetic_dataset(19, 2);
    let params = CompareParams { n_seeds: 20, ..Default::default() };
    let report = compare_methods(&table, &classes, &params).unwrap();

    let by_name: BTreeMap<&str, &memtune_core::replay::JobComparison> =
        report.jobs.iter().map(|j| (j.job.as_str(), j)).collect();
    // Unclear jobs replay the baseline exactly; the others improve on it.
    for (name, row) in &by_name {
        let q = row.quotients[2].unwrap();
        if name.starts_with("unclear") {
            assert_eq!(q, 1.0, "{name} quotient {q}");
        } else {
            assert!(q < 1.0, "{name} quotient {q} should improve on the baseline");
        }
    }
    // Series lengths cover the whole space.
    assert_eq!(report.best_cost_series.len(), table.space().len());
    assert_eq!(report.cumulative_cost_series.len(), table.space().len());
    // Best-so-far means decrease; cumulative means increase.
    let best = &report.best_cost_series;
    assert!(best.last().unwrap().priority <= best.first().unwrap().priority);
    let cumulative = &report.cumulative_cost_series;
    assert!(cumulative.last().unwrap().baseline > cumulative.first().unwrap().baseline);
}
