//! Orchestrates the two-phase (priority-first, then remainder)
//! Bayesian-optimized search and the plain baseline, against any cost
//! oracle.
//!
//! A single run is strictly sequential: each observation informs the next
//! GP fit. Independent runs (different seeds or jobs) can execute
//! concurrently, as the replay harness does.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayes_opt::{gp_fit, select_next, Candidate, GpError, GpHyperparams};
use crate::config_space::{ConfigId, ConfigSpace, PriorityPartition, SpaceError};

/// Knobs of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Random draws before the model takes over. Clamped to the priority
    /// set size when that set is smaller.
    pub n_initial: usize,
    /// Convergence rule: stop when the best expected improvement falls
    /// below this fraction of the best observed cost. Zero disables the
    /// rule, making the search exhaustive.
    pub ei_stop_fraction: f64,
    /// Convergence checks only fire once this many observations exist.
    pub min_observations: usize,
    /// Hard cap on observations; `None` means the space size.
    pub max_iterations: Option<usize>,
    pub seed: u64,
    /// Draw the initial configurations from the full space instead of the
    /// priority set (ablation flag).
    pub init_from_full: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            n_initial: 3,
            ei_stop_fraction: 0.1,
            min_observations: 6,
            max_iterations: None,
            seed: 0,
            init_from_full: false,
        }
    }
}

/// One tried configuration and what it cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub config_id: ConfigId,
    pub cost: f64,
    pub runtime_s: f64,
    /// 1-based position in the trace.
    pub iteration: usize,
}

/// Why a search ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Expected improvement no longer justified another execution.
    Converged,
    /// Every configuration was observed.
    Exhausted,
    /// Iteration cap hit first.
    MaxIterations,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::Converged => write!(f, "converged"),
            StopReason::Exhausted => write!(f, "exhausted"),
            StopReason::MaxIterations => write!(f, "max_iterations"),
        }
    }
}

/// Ordered history of a search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub observations: Vec<Observation>,
    /// Iteration index of the first observation of each later phase; empty
    /// when the search never left the priority set.
    pub phase_boundaries: Vec<usize>,
    pub stop_reason: StopReason,
}

impl SearchTrace {
    /// Lowest cost seen in the first `k` observations.
    pub fn best_cost_after(&self, k: usize) -> Option<f64> {
        self.observations[..k.min(self.observations.len())]
            .iter()
            .map(|o| o.cost)
            .min_by(f64::total_cmp)
    }
}

/// Cost source the search queries; deterministic per configuration in
/// replay mode. The error type is a plain message so live executors can
/// wrap whatever they need.
pub trait CostOracle {
    /// Returns (cost, runtime seconds) of executing on the configuration.
    fn observe(&self, id: ConfigId) -> Result<(f64, f64), OracleError>;
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("cost oracle failed for config {config_id}: {message}")]
pub struct OracleError {
    pub config_id: ConfigId,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("partition does not cover the space: {0}")]
    PartitionMismatch(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("oracle failure after {} observations: {source}", partial.observations.len())]
    Oracle { source: OracleError, partial: SearchTrace },
}

/// Priority-first search: explores the priority set exhaustively before the
/// remainder opens, keeping all observations in one model throughout.
pub fn run_priority_search(
    space: &ConfigSpace,
    partition: &PriorityPartition,
    oracle: &dyn CostOracle,
    params: &SearchParams,
) -> Result<SearchTrace, SearchError> {
    let mut covered: Vec<ConfigId> =
        partition.priority().iter().chain(partition.remainder()).copied().collect();
    covered.sort_unstable();
    let all: Vec<ConfigId> = space.ids().collect();
    if covered != all {
        return Err(SearchError::PartitionMismatch(format!(
            "{} ids covered, space has {}",
            covered.len(),
            all.len()
        )));
    }
    run_phased(space, partition.priority(), partition.remainder(), oracle, params)
}

/// Plain Bayesian-optimized search over the whole space: the same loop with
/// a single phase, so an unclear-class partition and the baseline produce
/// identical traces for the same seed.
pub fn run_baseline_search(
    space: &ConfigSpace,
    oracle: &dyn CostOracle,
    params: &SearchParams,
) -> Result<SearchTrace, SearchError> {
    let whole = PriorityPartition::whole_space(space);
    run_phased(space, whole.priority(), whole.remainder(), oracle, params)
}

fn run_phased(
    space: &ConfigSpace,
    priority: &[ConfigId],
    remainder: &[ConfigId],
    oracle: &dyn CostOracle,
    params: &SearchParams,
) -> Result<SearchTrace, SearchError> {
    let max_iterations = params.max_iterations.unwrap_or(space.len()).min(space.len());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let init_pool: Vec<ConfigId> = if params.init_from_full {
        space.ids().collect()
    } else {
        priority.to_vec()
    };
    let n_initial = params.n_initial.min(init_pool.len()).min(max_iterations);
    let initial: Vec<ConfigId> = rand::seq::index::sample(&mut rng, init_pool.len(), n_initial)
        .iter()
        .map(|i| init_pool[i])
        .collect();

    let mut trace = SearchTrace {
        observations: Vec::new(),
        phase_boundaries: Vec::new(),
        stop_reason: StopReason::Exhausted,
    };
    let all_features = space.encode_all();
    let mut features = Vec::new();
    let mut costs = Vec::new();
    let hp = GpHyperparams::default_for_dim(crate::config_space::FEATURE_DIM);

    let observe = |id: ConfigId,
                       trace: &mut SearchTrace,
                       features: &mut Vec<_>,
                       costs: &mut Vec<f64>|
     -> Result<(), SearchError> {
        let (cost, runtime_s) = oracle
            .observe(id)
            .map_err(|source| SearchError::Oracle { source, partial: trace.clone() })?;
        trace.observations.push(Observation {
            config_id: id,
            cost,
            runtime_s,
            iteration: trace.observations.len() + 1,
        });
        features.push(all_features[id.0]);
        costs.push(cost);
        Ok(())
    };

    for id in initial {
        observe(id, &mut trace, &mut features, &mut costs)?;
    }

    // The initial draws come from the priority pool (unless ablated), so the
    // search starts in the priority phase regardless.
    let mut in_remainder = false;
    loop {
        if trace.observations.len() >= max_iterations {
            trace.stop_reason = if trace.observations.len() == space.len() {
                StopReason::Exhausted
            } else {
                StopReason::MaxIterations
            };
            break;
        }

        let observed: std::collections::BTreeSet<ConfigId> =
            trace.observations.iter().map(|o| o.config_id).collect();
        let phase_pool = if in_remainder { remainder } else { priority };
        let mut unobserved: Vec<ConfigId> =
            phase_pool.iter().copied().filter(|id| !observed.contains(id)).collect();
        if unobserved.is_empty() {
            if !in_remainder && remainder.iter().any(|id| !observed.contains(id)) {
                in_remainder = true;
                continue;
            }
            trace.stop_reason = StopReason::Exhausted;
            break;
        }
        unobserved.sort_unstable();

        let model = gp_fit(&features, &costs, &hp)?;
        let best_cost = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let candidates: Vec<Candidate> = unobserved
            .iter()
            .map(|&id| Candidate {
                id,
                features: all_features[id.0],
                hourly_cost: space.get(id).unwrap().hourly_cost(),
            })
            .collect();
        let (next, best_ei) = select_next(&model, &candidates, best_cost)?
            .expect("candidate list is nonempty");

        // Convergence may fire inside the priority phase only when that set
        // is large enough to satisfy the observation minimum on its own.
        let stopping_active = in_remainder || priority.len() >= params.min_observations;
        if stopping_active
            && trace.observations.len() >= params.min_observations
            && params.ei_stop_fraction > 0.0
            && best_ei < params.ei_stop_fraction * best_cost
        {
            trace.stop_reason = StopReason::Converged;
            break;
        }

        if in_remainder && trace.phase_boundaries.is_empty() {
            trace.phase_boundaries.push(trace.observations.len() + 1);
        }
        observe(next, &mut trace, &mut features, &mut costs)?;
    }

    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config_space::MachineType;
    use std::collections::BTreeMap;

    pub(crate) struct TableOracle {
        pub table: BTreeMap<ConfigId, (f64, f64)>,
    }

    impl TableOracle {
        pub fn new(costs: &[f64]) -> Self {
            let table = costs
                .iter()
                .enumerate()
                .map(|(i, &c)| (ConfigId(i), (c, c * 100.0)))
                .collect();
            Self { table }
        }
    }

    impl CostOracle for TableOracle {
        fn observe(&self, id: ConfigId) -> Result<(f64, f64), OracleError> {
            self.table.get(&id).copied().ok_or_else(|| OracleError {
                config_id: id,
                message: "not in table".into(),
            })
        }
    }

    fn machine(name: &str, memory_gb: f64, price: f64) -> MachineType {
        MachineType { name: name.into(), cores: 2, memory_gb, price_per_hour: price }
    }

    fn space_of(n: usize) -> ConfigSpace {
        let catalog: Vec<MachineType> =
            (0..n).map(|i| machine(&format!("t{i}"), 4.0 + i as f64, 0.1 + 0.01 * i as f64)).collect();
        ConfigSpace::enumerate(&catalog, &[4]).unwrap()
    }

    #[test]
    fn single_config_space_exhausts_immediately() {
        let space = space_of(1);
        let oracle = TableOracle::new(&[3.0]);
        let trace =
            run_baseline_search(&space, &oracle, &SearchParams::default()).unwrap();
        assert_eq!(trace.observations.len(), 1);
        assert_eq!(trace.stop_reason, StopReason::Exhausted);
    }

    #[test]
    fn same_seed_means_identical_traces() {
        let space = space_of(8);
        let oracle = TableOracle::new(&[5.0, 3.0, 8.0, 2.0, 9.0, 4.0, 7.0, 6.0]);
        let params = SearchParams { seed: 17, ..Default::default() };
        let a = run_baseline_search(&space, &oracle, &params).unwrap();
        let b = run_baseline_search(&space, &oracle, &params).unwrap();
        assert_eq!(a, b);
        let other = run_baseline_search(
            &space,
            &oracle,
            &SearchParams { seed: 18, ..Default::default() },
        )
        .unwrap();
        // Different seed starts elsewhere (with overwhelming likelihood for
        // this fixture; asserted to pin the fixture, not the RNG).
        assert_ne!(a.observations[0].config_id, other.observations[0].config_id);
    }

    #[test]
    fn unclear_partition_equals_baseline() {
        let space = space_of(7);
        let oracle = TableOracle::new(&[5.0, 3.0, 8.0, 2.0, 9.0, 4.0, 7.0]);
        let params = SearchParams { seed: 5, ..Default::default() };
        let whole = PriorityPartition::whole_space(&space);
        let priority = run_priority_search(&space, &whole, &oracle, &params).unwrap();
        let baseline = run_baseline_search(&space, &oracle, &params).unwrap();
        assert_eq!(priority, baseline);
    }

    #[test]
    fn tiny_priority_set_clamps_initial_draws_and_finds_optimum_first() {
        // 4 configs, the optimum alone in the priority set: it must be
        // observed at iteration 1 even though n_initial is 1.
        let space = space_of(4);
        let oracle = TableOracle::new(&[4.0, 1.0, 6.0, 9.0]);
        let partition =
            PriorityPartition::from_priority_ids(&space, [ConfigId(1)]).unwrap();
        let params = SearchParams { n_initial: 1, seed: 3, ..Default::default() };
        let trace = run_priority_search(&space, &partition, &oracle, &params).unwrap();
        assert_eq!(trace.observations[0].config_id, ConfigId(1));
        assert_eq!(trace.best_cost_after(1), Some(1.0));
        // Also fine with the default n_initial of 3: the one-config pool
        // clamps to a single draw.
        let params3 = SearchParams { seed: 3, ..Default::default() };
        let trace3 = run_priority_search(&space, &partition, &oracle, &params3).unwrap();
        assert_eq!(trace3.observations[0].config_id, ConfigId(1));
    }

    #[test]
    fn trace_has_no_duplicates_and_phases_are_ordered() {
        let space = space_of(9);
        let costs: Vec<f64> = (0..9).map(|i| 2.0 + ((i * 7) % 9) as f64).collect();
        let oracle = TableOracle::new(&costs);
        let partition = PriorityPartition::from_priority_ids(
            &space,
            [ConfigId(2), ConfigId(4), ConfigId(6)],
        )
        .unwrap();
        let params = SearchParams { seed: 11, ei_stop_fraction: 0.0, ..Default::default() };
        let trace = run_priority_search(&space, &partition, &oracle, &params).unwrap();

        let mut seen = std::collections::BTreeSet::new();
        for o in &trace.observations {
            assert!(seen.insert(o.config_id), "config {} observed twice", o.config_id);
        }
        assert_eq!(trace.observations.len(), 9);
        assert_eq!(trace.stop_reason, StopReason::Exhausted);

        // Every priority observation precedes every remainder observation.
        let boundary = trace.phase_boundaries[0];
        for o in &trace.observations {
            let in_priority = partition.priority().contains(&o.config_id);
            assert_eq!(
                o.iteration < boundary,
                in_priority,
                "iteration {} phase mismatch",
                o.iteration
            );
        }
        assert_eq!(boundary, partition.priority().len() + 1);
    }

    #[test]
    fn max_iterations_caps_trace_length() {
        let space = space_of(8);
        let oracle = TableOracle::new(&[5.0, 3.0, 8.0, 2.0, 9.0, 4.0, 7.0, 6.0]);
        let params = SearchParams {
            max_iterations: Some(4),
            ei_stop_fraction: 0.0,
            ..Default::default()
        };
        let trace = run_baseline_search(&space, &oracle, &params).unwrap();
        assert_eq!(trace.observations.len(), 4);
        assert_eq!(trace.stop_reason, StopReason::MaxIterations);
    }

    #[test]
    fn convergence_stops_early_on_flat_costs() {
        // All costs identical: after min_observations the model is certain
        // and EI collapses to ~0.
        let space = space_of(10);
        let oracle = TableOracle::new(&[4.0; 10]);
        let params = SearchParams { seed: 2, ..Default::default() };
        let trace = run_baseline_search(&space, &oracle, &params).unwrap();
        assert_eq!(trace.stop_reason, StopReason::Converged);
        assert!(trace.observations.len() < 10, "converged trace should stop early");
        assert!(trace.observations.len() >= params.min_observations);
    }

    #[test]
    fn oracle_failure_carries_partial_trace() {
        // The broken config sits in the remainder, so the whole priority set
        // is already observed when the failure hits.
        let space = space_of(4);
        let mut oracle = TableOracle::new(&[5.0, 3.0, 8.0, 2.0]);
        oracle.table.remove(&ConfigId(3));
        let partition = PriorityPartition::from_priority_ids(
            &space,
            [ConfigId(0), ConfigId(1), ConfigId(2)],
        )
        .unwrap();
        let params = SearchParams { ei_stop_fraction: 0.0, seed: 1, ..Default::default() };
        match run_priority_search(&space, &partition, &oracle, &params) {
            Err(SearchError::Oracle { source, partial }) => {
                assert_eq!(source.config_id, ConfigId(3));
                assert_eq!(partial.observations.len(), 3);
            }
            other => panic!("expected oracle failure, got {other:?}"),
        }
    }

    #[test]
    fn baseline_matches_reference_loop_reimplementation() {
        use crate::bayes_opt::{expected_improvement, gp_fit, GpHyperparams};

        let space = space_of(6);
        let costs = [5.0, 3.0, 8.0, 2.0, 9.0, 4.0];
        let oracle = TableOracle::new(&costs);
        let params =
            SearchParams { seed: 23, ei_stop_fraction: 0.0, ..Default::default() };
        let trace = run_baseline_search(&space, &oracle, &params).unwrap();

        // Independent re-simulation: same RNG contract, then a hand-written
        // fit/score/argmax loop per iteration.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let ids: Vec<ConfigId> = space.ids().collect();
        let mut expected: Vec<ConfigId> =
            rand::seq::index::sample(&mut rng, ids.len(), 3).iter().map(|i| ids[i]).collect();
        let hp = GpHyperparams::default_for_dim(4);
        while expected.len() < 6 {
            let xs: Vec<_> =
                expected.iter().map(|&id| space.encode_features(id).unwrap()).collect();
            let ys: Vec<f64> = expected.iter().map(|id| costs[id.0]).collect();
            let model = gp_fit(&xs, &ys, &hp).unwrap();
            let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let mut ranked: Vec<(f64, f64, ConfigId)> = ids
                .iter()
                .filter(|id| !expected.contains(id))
                .map(|&id| {
                    let (m, s) =
                        model.predict(&space.encode_features(id).unwrap()).unwrap();
                    (
                        expected_improvement(m, s, best),
                        space.get(id).unwrap().hourly_cost(),
                        id,
                    )
                })
                .collect();
            ranked.sort_by(|a, b| {
                b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2))
            });
            expected.push(ranked[0].2);
        }
        let got: Vec<ConfigId> = trace.observations.iter().map(|o| o.config_id).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn best_so_far_is_non_increasing() {
        let space = space_of(9);
        let costs: Vec<f64> = (0..9).map(|i| 1.0 + ((i * 5) % 9) as f64).collect();
        let oracle = TableOracle::new(&costs);
        let params = SearchParams { ei_stop_fraction: 0.0, seed: 4, ..Default::default() };
        let trace = run_baseline_search(&space, &oracle, &params).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=trace.observations.len() {
            let best = trace.best_cost_after(k).unwrap();
            assert!(best <= last);
            last = best;
        }
    }
}
