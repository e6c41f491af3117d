//! Property tests across modules: partition structure over random spaces
//! and the baseline-equivalence of degenerate partitions.

use proptest::prelude::*;

use memtune_core::config_space::{
    build_priority_partition, ConfigId, ConfigSpace, MachineType, MemoryClass,
    PartitionParams, PriorityPartition,
};
use memtune_core::memory_model::MemoryRequirement;
use memtune_core::search::{
    run_baseline_search, run_priority_search, CostOracle, OracleError, SearchParams,
};

fn arb_catalog() -> impl Strategy<Value = Vec<MachineType>> {
    proptest::collection::vec(
        (1u32..=16, 1u32..=8, 0.02f64..0.2).prop_map(|(cores, per_core, price)| {
            (cores, per_core as f64 * cores as f64, price * cores as f64)
        }),
        1..5,
    )
    .prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (cores, memory_gb, price_per_hour))| MachineType {
                name: format!("type-{i}"),
                cores,
                memory_gb,
                price_per_hour,
            })
            .collect()
    })
}

fn arb_scale_outs() -> impl Strategy<Value = Vec<u32>> {
    proptest::collection::btree_set(1u32..=48, 1..6)
        .prop_map(|set| set.into_iter().collect())
}

fn arb_class() -> impl Strategy<Value = MemoryClass> {
    prop_oneof![
        Just(MemoryClass::Flat),
        Just(MemoryClass::Unclear),
        (1.0f64..3000.0).prop_map(|job_gb| {
            MemoryClass::Linear(MemoryRequirement { job_gb, clamped: false })
        }),
    ]
}

struct ModCostOracle {
    multiplier: f64,
}

impl CostOracle for ModCostOracle {
    fn observe(&self, id: ConfigId) -> Result<(f64, f64), OracleError> {
        // Deterministic, spiky cost surface.
        let cost = 1.0 + ((id.0 * 7919) % 101) as f64 * self.multiplier;
        Ok((cost, cost * 60.0))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_exact_disjoint_cover(
        catalog in arb_catalog(),
        outs in arb_scale_outs(),
        class in arb_class(),
    ) {
        let space = ConfigSpace::enumerate(&catalog, &outs).unwrap();
        let partition =
            build_priority_partition(&space, &class, &PartitionParams::default()).unwrap();
        let mut ids: Vec<ConfigId> = partition
            .priority()
            .iter()
            .chain(partition.remainder())
            .copied()
            .collect();
        let before = ids.len();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(before, ids.len(), "priority and remainder overlap");
        prop_assert_eq!(ids, space.ids().collect::<Vec<_>>());
        prop_assert!(!partition.priority().is_empty());
    }

    #[test]
    fn whole_space_priority_replays_the_baseline(
        catalog in arb_catalog(),
        outs in arb_scale_outs(),
        seed in 0u64..5000,
        multiplier in 0.01f64..2.0,
    ) {
        let space = ConfigSpace::enumerate(&catalog, &outs).unwrap();
        // Cap the space so each proptest case stays cheap.
        prop_assume!(space.len() <= 12);
        let oracle = ModCostOracle { multiplier };
        let params = SearchParams { seed, ..Default::default() };
        let whole = PriorityPartition::whole_space(&space);
        let priority = run_priority_search(&space, &whole, &oracle, &params).unwrap();
        let baseline = run_baseline_search(&space, &oracle, &params).unwrap();
        prop_assert_eq!(priority, baseline);
    }

    #[test]
    fn traces_are_duplicate_free_and_bounded(
        catalog in arb_catalog(),
        outs in arb_scale_outs(),
        seed in 0u64..5000,
    ) {
        let space = ConfigSpace::enumerate(&catalog, &outs).unwrap();
        prop_assume!(space.len() <= 12);
        let oracle = ModCostOracle { multiplier: 0.5 };
        let params = SearchParams { seed, ei_stop_fraction: 0.0, ..Default::default() };
        let trace = run_baseline_search(&space, &oracle, &params).unwrap();
        prop_assert_eq!(trace.observations.len(), space.len());
        let mut seen = std::collections::BTreeSet::new();
        for obs in &trace.observations {
            prop_assert!(seen.insert(obs.config_id));
        }
        // Iterations are consecutive from 1.
        for (i, obs) in trace.observations.iter().enumerate() {
            prop_assert_eq!(obs.iteration, i + 1);
        }
    }
}
