//! Machine types, cluster configurations, the enumerated search space,
//! feature encoding for the optimizer, and the memory-aware priority
//! partition.
//!
//! All types here are immutable after construction and the operations are
//! pure, so values can be shared freely across threads.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory_model::MemoryRequirement;

/// A node SKU: the per-node attributes a cluster configuration multiplies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineType {
    pub name: String,
    pub cores: u32,
    pub memory_gb: f64,
    pub price_per_hour: f64,
}

impl MachineType {
    pub fn validate(&self) -> Result<(), SpaceError> {
        if self.name.is_empty() || self.cores < 1 || self.memory_gb <= 0.0 || self.price_per_hour <= 0.0
        {
            return Err(SpaceError::InvalidMachineType { name: self.name.clone() });
        }
        Ok(())
    }
}

/// A machine type together with a scale-out (node count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub machine: MachineType,
    pub scale_out: u32,
}

impl ClusterConfig {
    pub fn total_memory_gb(&self) -> f64 {
        self.scale_out as f64 * self.machine.memory_gb
    }

    pub fn total_cores(&self) -> u32 {
        self.scale_out * self.machine.cores
    }

    pub fn hourly_cost(&self) -> f64 {
        self.scale_out as f64 * self.machine.price_per_hour
    }

    pub fn memory_per_core_gb(&self) -> f64 {
        self.machine.memory_gb / self.machine.cores as f64
    }

    /// Cluster memory left for the job after per-node overhead.
    pub fn usable_memory_gb(&self, per_node_overhead_gb: f64) -> f64 {
        self.total_memory_gb() - self.scale_out as f64 * per_node_overhead_gb
    }
}

impl fmt::Display for ClusterConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.scale_out, self.machine.name)
    }
}

/// Stable index of a configuration within its space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigId(pub usize);

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// The enumerated search space. Iteration order is construction order and
/// ids are positional, so a space built from the same inputs is identical
/// across runs and platforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSpace {
    configs: Vec<ClusterConfig>,
}

impl ConfigSpace {
    /// Full cartesian product: catalog order × ascending scale-out.
    pub fn enumerate(
        catalog: &[MachineType],
        scale_outs: &[u32],
    ) -> Result<Self, SpaceError> {
        if catalog.is_empty() {
            return Err(SpaceError::EmptyCatalog);
        }
        if scale_outs.is_empty() {
            return Err(SpaceError::EmptyScaleOuts);
        }
        validate_catalog(catalog)?;
        let mut sorted_outs: Vec<u32> = scale_outs.to_vec();
        sorted_outs.sort_unstable();
        for w in sorted_outs.windows(2) {
            if w[0] == w[1] {
                return Err(SpaceError::DuplicateScaleOut(w[0]));
            }
        }
        if sorted_outs[0] == 0 {
            return Err(SpaceError::ZeroScaleOut);
        }
        let mut configs = Vec::with_capacity(catalog.len() * sorted_outs.len());
        for machine in catalog {
            for &scale_out in &sorted_outs {
                configs.push(ClusterConfig { machine: machine.clone(), scale_out });
            }
        }
        Ok(Self { configs })
    }

    /// Non-rectangular space from explicit (machine name, scale-out) pairs.
    /// Pairs are kept in catalog order × ascending scale-out regardless of
    /// their order in the list.
    pub fn from_pairs(
        catalog: &[MachineType],
        pairs: &[(String, u32)],
    ) -> Result<Self, SpaceError> {
        if catalog.is_empty() {
            return Err(SpaceError::EmptyCatalog);
        }
        if pairs.is_empty() {
            return Err(SpaceError::EmptyScaleOuts);
        }
        validate_catalog(catalog)?;
        let mut seen = BTreeSet::new();
        let mut keyed: Vec<(usize, u32)> = Vec::with_capacity(pairs.len());
        for (name, scale_out) in pairs {
            let idx = catalog
                .iter()
                .position(|m| &m.name == name)
                .ok_or_else(|| SpaceError::UnknownMachineType(name.clone()))?;
            if *scale_out == 0 {
                return Err(SpaceError::ZeroScaleOut);
            }
            if !seen.insert((idx, *scale_out)) {
                return Err(SpaceError::DuplicateConfig {
                    machine: name.clone(),
                    scale_out: *scale_out,
                });
            }
            keyed.push((idx, *scale_out));
        }
        keyed.sort_unstable();
        let configs = keyed
            .into_iter()
            .map(|(idx, scale_out)| ClusterConfig { machine: catalog[idx].clone(), scale_out })
            .collect();
        Ok(Self { configs })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn get(&self, id: ConfigId) -> Option<&ClusterConfig> {
        self.configs.get(id.0)
    }

    pub fn ids(&self) -> impl Iterator<Item = ConfigId> + '_ {
        (0..self.configs.len()).map(ConfigId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConfigId, &ClusterConfig)> {
        self.configs.iter().enumerate().map(|(i, c)| (ConfigId(i), c))
    }

    /// Min-max feature bounds over the space, one (min, max) per dimension.
    fn feature_bounds(&self) -> [(f64, f64); FEATURE_DIM] {
        let mut bounds = [(f64::INFINITY, f64::NEG_INFINITY); FEATURE_DIM];
        for config in &self.configs {
            for (b, v) in bounds.iter_mut().zip(raw_features(config)) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        bounds
    }

    /// Encodes a configuration of this space as a normalized feature vector.
    pub fn encode_features(&self, id: ConfigId) -> Result<FeatureVector, SpaceError> {
        let config = self.get(id).ok_or(SpaceError::ConfigNotInSpace(id))?;
        Ok(encode_with_bounds(config, &self.feature_bounds()))
    }

    /// Feature vectors for every configuration, id-indexed. Equivalent to
    /// calling [`Self::encode_features`] per id but computes the
    /// normalization bounds once.
    pub fn encode_all(&self) -> Vec<FeatureVector> {
        let bounds = self.feature_bounds();
        self.configs.iter().map(|c| encode_with_bounds(c, &bounds)).collect()
    }
}

fn encode_with_bounds(
    config: &ClusterConfig,
    bounds: &[(f64, f64); FEATURE_DIM],
) -> FeatureVector {
    let raw = raw_features(config);
    let mut values = [0.0; FEATURE_DIM];
    for i in 0..FEATURE_DIM {
        let (min, max) = bounds[i];
        let range = max - min;
        // A dimension that does not vary carries no information; park it
        // mid-scale so it cannot dominate kernel distances.
        values[i] = if range == 0.0 { 0.5 } else { (raw[i] - min) / range };
    }
    FeatureVector { values }
}

/// Number of encoded feature dimensions per configuration.
pub const FEATURE_DIM: usize = 4;

fn raw_features(config: &ClusterConfig) -> [f64; FEATURE_DIM] {
    [
        config.total_cores() as f64,
        config.total_memory_gb(),
        config.scale_out as f64,
        config.memory_per_core_gb(),
    ]
}

fn validate_catalog(catalog: &[MachineType]) -> Result<(), SpaceError> {
    let mut names = BTreeSet::new();
    for machine in catalog {
        machine.validate()?;
        if !names.insert(machine.name.as_str()) {
            return Err(SpaceError::DuplicateMachineType(machine.name.clone()));
        }
    }
    Ok(())
}

/// Per-config features: total cores, total memory, scale-out, and memory per
/// core, each min-max normalized to [0, 1] over the space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_DIM],
}

/// Job memory behavior as it matters to partitioning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MemoryClass {
    /// Memory scales with input size; carries the extrapolated requirement.
    Linear(MemoryRequirement),
    /// Memory does not respond to input size.
    Flat,
    /// No usable model; the partition degenerates to the whole space.
    Unclear,
}

/// Tunables for the memory-aware partition. Defaults: priority fraction
/// 0.15 for flat jobs, 2 GB per-node overhead, 10% leeway on the
/// requirement, 10% extremes on each end for the unsatisfiable fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionParams {
    /// Fraction of the space prioritized for flat jobs.
    pub flat_fraction: f64,
    /// Memory reserved per node for the OS and framework, in GB.
    pub per_node_overhead_gb: f64,
    /// Safety margin multiplied onto the extrapolated requirement.
    pub leeway_fraction: f64,
    /// Size of each extreme group when no configuration satisfies the
    /// requirement (fraction of the space, top and bottom separately).
    pub fallback_fraction: f64,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self {
            flat_fraction: 0.15,
            per_node_overhead_gb: 2.0,
            leeway_fraction: 0.10,
            fallback_fraction: 0.10,
        }
    }
}

/// Disjoint split of the space into the set explored first and the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityPartition {
    priority: Vec<ConfigId>,
    remainder: Vec<ConfigId>,
}

impl PriorityPartition {
    /// Ids explored first, ascending.
    pub fn priority(&self) -> &[ConfigId] {
        &self.priority
    }

    /// Ids deferred to the second phase, ascending.
    pub fn remainder(&self) -> &[ConfigId] {
        &self.remainder
    }

    /// Degenerate partition covering the whole space; search over it equals
    /// the plain baseline.
    pub fn whole_space(space: &ConfigSpace) -> Self {
        Self { priority: space.ids().collect(), remainder: Vec::new() }
    }

    /// Partition with an explicit priority set; the remainder is the
    /// complement. The set must be nonempty and inside the space.
    pub fn from_priority_ids(
        space: &ConfigSpace,
        ids: impl IntoIterator<Item = ConfigId>,
    ) -> Result<Self, SpaceError> {
        let chosen: BTreeSet<ConfigId> = ids.into_iter().collect();
        if chosen.is_empty() {
            return Err(SpaceError::EmptySpace);
        }
        if let Some(&outside) = chosen.iter().find(|id| space.get(**id).is_none()) {
            return Err(SpaceError::ConfigNotInSpace(outside));
        }
        Ok(split_from_selection(space, chosen.into_iter()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("machine catalog is empty")]
    EmptyCatalog,
    #[error("scale-out list is empty")]
    EmptyScaleOuts,
    #[error("scale-out must be at least 1")]
    ZeroScaleOut,
    #[error("duplicate scale-out {0}")]
    DuplicateScaleOut(u32),
    #[error("machine type {name:?} must have a name, at least one core, and positive memory and price")]
    InvalidMachineType { name: String },
    #[error("duplicate machine type {0:?} in catalog")]
    DuplicateMachineType(String),
    #[error("unknown machine type {0:?}")]
    UnknownMachineType(String),
    #[error("duplicate configuration ({machine:?}, {scale_out})")]
    DuplicateConfig { machine: String, scale_out: u32 },
    #[error("configuration id {0} is not part of this space")]
    ConfigNotInSpace(ConfigId),
    #[error("cannot partition an empty space")]
    EmptySpace,
}

/// Splits the space into a priority set matched to the job's memory class
/// and the remainder.
///
/// - Flat: the lowest-total-memory slice of the space (additional memory
///   only adds cost for these jobs).
/// - Linear: every configuration whose usable memory covers the requirement
///   plus leeway; if none does, the extremes of the memory range (some jobs
///   exploit any memory they get, others need either enough or none).
/// - Unclear: the whole space; the search then equals the baseline.
pub fn build_priority_partition(
    space: &ConfigSpace,
    class: &MemoryClass,
    params: &PartitionParams,
) -> Result<PriorityPartition, SpaceError> {
    if space.is_empty() {
        return Err(SpaceError::EmptySpace);
    }
    let n = space.len();
    let partition = match class {
        MemoryClass::Unclear => PriorityPartition::whole_space(space),
        MemoryClass::Flat => {
            let take = ((params.flat_fraction * n as f64).ceil() as usize).clamp(1, n);
            let ordered = ids_by_total_memory(space);
            split_from_selection(space, ordered[..take].iter().copied())
        }
        MemoryClass::Linear(req) => {
            let needed = req.job_gb * (1.0 + params.leeway_fraction);
            let satisfying: Vec<ConfigId> = space
                .iter()
                .filter(|(_, c)| c.usable_memory_gb(params.per_node_overhead_gb) >= needed)
                .map(|(id, _)| id)
                .collect();
            if satisfying.is_empty() {
                let take = ((params.fallback_fraction * n as f64).ceil() as usize).clamp(1, n);
                let ordered = ids_by_total_memory(space);
                let low = ordered[..take].iter().copied();
                let high = ordered[n - take..].iter().copied();
                split_from_selection(space, low.chain(high))
            } else {
                split_from_selection(space, satisfying.into_iter())
            }
        }
    };
    Ok(partition)
}

/// Ids sorted by (total memory, hourly cost, id): the deterministic total
/// order every memory-ranked selection uses.
fn ids_by_total_memory(space: &ConfigSpace) -> Vec<ConfigId> {
    let mut ids: Vec<ConfigId> = space.ids().collect();
    ids.sort_by(|&a, &b| {
        let (ca, cb) = (&space.get(a).unwrap(), &space.get(b).unwrap());
        ca.total_memory_gb()
            .total_cmp(&cb.total_memory_gb())
            .then(ca.hourly_cost().total_cmp(&cb.hourly_cost()))
            .then(a.cmp(&b))
    });
    ids
}

fn split_from_selection(
    space: &ConfigSpace,
    selection: impl Iterator<Item = ConfigId>,
) -> PriorityPartition {
    let chosen: BTreeSet<ConfigId> = selection.collect();
    let priority: Vec<ConfigId> = chosen.iter().copied().collect();
    let remainder: Vec<ConfigId> = space.ids().filter(|id| !chosen.contains(id)).collect();
    PriorityPartition { priority, remainder }
}

/// On-disk machine catalog: the machine types plus either a rectangular
/// scale-out list or an explicit configuration pair list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogFile {
    pub machine_types: Vec<MachineType>,
    #[serde(default)]
    pub scale_outs: Vec<u32>,
    /// Explicit (machine name, scale-out) pairs for non-rectangular spaces.
    /// Takes precedence over `scale_outs` when present.
    #[serde(default)]
    pub configs: Vec<(String, u32)>,
}

impl CatalogFile {
    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CatalogError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text)
            .map_err(|source| CatalogError::Parse { path: path.display().to_string(), source })
    }

    pub fn into_space(self) -> Result<ConfigSpace, CatalogError> {
        let space = if !self.configs.is_empty() {
            ConfigSpace::from_pairs(&self.machine_types, &self.configs)?
        } else {
            ConfigSpace::enumerate(&self.machine_types, &self.scale_outs)?
        };
        Ok(space)
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse catalog {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error(transparent)]
    Space(#[from] SpaceError),
}
