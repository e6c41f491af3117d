//! Fits the relation between input dataset size and observed job memory,
//! classifies it, and extrapolates the memory requirement for a full-size
//! dataset.
//!
//! The classification is driven by the R² score of an ordinary least-squares
//! fit on the profiling samples themselves: a high score means memory scales
//! linearly with input size, a very low score means it stays flat, and
//! anything in between is treated as unclear and excluded from extrapolation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes per gigabyte as used throughout this crate (decimal, 10^9).
pub const BYTES_PER_GB: f64 = 1e9;

/// Floor applied when a marginal fit extrapolates to a non-positive
/// requirement; keeps downstream consumers running instead of failing.
pub const REQUIREMENT_FLOOR_GB: f64 = 1e-3;

/// One profiling observation: dataset sample size and the peak resident
/// memory attributed to the job (baseline already subtracted).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySample {
    pub input_bytes: u64,
    pub job_memory_bytes: u64,
}

/// R² boundaries separating the flat, unclear, and linear categories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2Thresholds {
    /// Scores below this are considered uncorrelated (flat memory use).
    pub low: f64,
    /// Scores at or above this are considered linear.
    pub high: f64,
}

impl Default for R2Thresholds {
    fn default() -> Self {
        Self { low: 0.1, high: 0.99 }
    }
}

impl R2Thresholds {
    pub fn new(low: f64, high: f64) -> Result<Self, ModelError> {
        if !(low > 0.0 && low < high && high < 1.0) {
            return Err(ModelError::InvalidThresholds { low, high });
        }
        Ok(Self { low, high })
    }
}

/// The fitted relation between input size and job memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "snake_case")]
pub enum ModelCategory {
    /// Memory grows linearly with input size; slope is bytes of job memory
    /// per byte of input.
    Linear { slope: f64, intercept: f64, r2: f64 },
    /// Memory use does not respond to input size.
    Flat { mean_bytes: f64, r2: f64 },
    /// Some correlation, but not confidently linear.
    Unclear { r2: f64 },
}

/// Category without the fitted payload; used where only the branch matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    Linear,
    Flat,
    Unclear,
}

impl std::fmt::Display for CategoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CategoryKind::Linear => write!(f, "linear"),
            CategoryKind::Flat => write!(f, "flat"),
            CategoryKind::Unclear => write!(f, "unclear"),
        }
    }
}

impl std::str::FromStr for CategoryKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(CategoryKind::Linear),
            "flat" => Ok(CategoryKind::Flat),
            "unclear" => Ok(CategoryKind::Unclear),
            other => Err(ModelError::UnknownCategory(other.to_string())),
        }
    }
}

/// Fitted model plus the thresholds that produced its category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    pub category: ModelCategory,
    pub thresholds: R2Thresholds,
}

impl MemoryModel {
    pub fn kind(&self) -> CategoryKind {
        match self.category {
            ModelCategory::Linear { .. } => CategoryKind::Linear,
            ModelCategory::Flat { .. } => CategoryKind::Flat,
            ModelCategory::Unclear { .. } => CategoryKind::Unclear,
        }
    }

    pub fn r2(&self) -> f64 {
        match self.category {
            ModelCategory::Linear { r2, .. }
            | ModelCategory::Flat { r2, .. }
            | ModelCategory::Unclear { r2 } => r2,
        }
    }
}

/// Extrapolated job memory need at full dataset size, in GB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryRequirement {
    pub job_gb: f64,
    /// True when the raw extrapolation was non-positive and got clamped to
    /// [`REQUIREMENT_FLOOR_GB`]; callers should surface a warning.
    #[serde(default)]
    pub clamped: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("need at least 3 samples with 2 distinct input sizes, got {samples} samples over {distinct_inputs} distinct sizes")]
    InsufficientData { samples: usize, distinct_inputs: usize },
    #[error("invalid R² thresholds: require 0 < low < high < 1, got low={low}, high={high}")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("cannot extrapolate a memory requirement from a {0} model")]
    NotLinear(CategoryKind),
    #[error("unknown memory category {0:?} (expected linear, flat, or unclear)")]
    UnknownCategory(String),
}

/// Ordinary least squares on (input_bytes → job_memory_bytes), scored with
/// R² on the training points themselves, then categorized per thresholds.
///
/// Constant targets (zero variance) are flat by definition; their R² is
/// pinned to 0 because the usual quotient is undefined there.
pub fn fit_memory_model(
    samples: &[MemorySample],
    thresholds: R2Thresholds,
) -> Result<MemoryModel, ModelError> {
    R2Thresholds::new(thresholds.low, thresholds.high)?;
    let n = samples.len();
    let mut inputs: Vec<u64> = samples.iter().map(|s| s.input_bytes).collect();
    inputs.sort_unstable();
    inputs.dedup();
    if n < 3 || inputs.len() < 2 {
        return Err(ModelError::InsufficientData { samples: n, distinct_inputs: inputs.len() });
    }

    let nf = n as f64;
    let mean_x = samples.iter().map(|s| s.input_bytes as f64).sum::<f64>() / nf;
    let mean_y = samples.iter().map(|s| s.job_memory_bytes as f64).sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for s in samples {
        let dx = s.input_bytes as f64 - mean_x;
        let dy = s.job_memory_bytes as f64 - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }

    if syy == 0.0 {
        return Ok(MemoryModel {
            category: ModelCategory::Flat { mean_bytes: mean_y, r2: 0.0 },
            thresholds,
        });
    }

    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = samples
        .iter()
        .map(|s| {
            let pred = slope * s.input_bytes as f64 + intercept;
            let r = s.job_memory_bytes as f64 - pred;
            r * r
        })
        .sum();
    let r2 = 1.0 - ss_res / syy;

    let category = if r2 >= thresholds.high {
        ModelCategory::Linear { slope, intercept, r2 }
    } else if r2 < thresholds.low {
        ModelCategory::Flat { mean_bytes: mean_y, r2 }
    } else {
        ModelCategory::Unclear { r2 }
    };
    Ok(MemoryModel { category, thresholds })
}

/// Evaluates the fitted line at the full dataset size and converts to GB.
///
/// Only linear models can be extrapolated; flat and unclear models must be
/// handled by the caller before reaching this point.
pub fn extrapolate_requirement(
    model: &MemoryModel,
    full_dataset_bytes: u64,
) -> Result<MemoryRequirement, ModelError> {
    let ModelCategory::Linear { slope, intercept, .. } = model.category else {
        return Err(ModelError::NotLinear(model.kind()));
    };
    let raw_gb = (slope * full_dataset_bytes as f64 + intercept) / BYTES_PER_GB;
    if raw_gb > REQUIREMENT_FLOOR_GB {
        Ok(MemoryRequirement { job_gb: raw_gb, clamped: false })
    } else {
        Ok(MemoryRequirement { job_gb: REQUIREMENT_FLOOR_GB, clamped: true })
    }
}
