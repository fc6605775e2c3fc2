//! Mapping options: the genome explored by the tuner.

use serde::{Deserialize, Serialize};

use super::ScheduleError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionStrategy {
    Max,
    Min,
    PreserveThreeParallel,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [FusionStrategy::Max, FusionStrategy::Min, FusionStrategy::PreserveThreeParallel];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Some(FusionStrategy::Max),
            "min" => Some(FusionStrategy::Min),
            "preservethreeparallel" | "preserve3" => Some(FusionStrategy::PreserveThreeParallel),
            _ => None,
        }
    }
}

pub const MAX_THREADS_PER_BLOCK: i64 = 1024;
pub const MAX_UNROLL: u32 = 4096;
pub const DEFAULT_SHARED_BUDGET: usize = 48 * 1024;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingOptions {
    /// Tile sizes consumed in schedule-depth order; missing sizes leave the
    /// member untiled.
    pub tile_sizes: Vec<i64>,
    /// Grid extents (number of blocks per dimension).
    pub block_shape: Vec<i64>,
    /// Block extents (threads per dimension).
    pub thread_shape: Vec<i64>,
    pub fusion: FusionStrategy,
    pub use_shared: bool,
    pub use_private: bool,
    pub unroll_copy_shared: bool,
    pub unroll_factor: u32,
    pub shared_memory_budget: usize,
    pub rng_seed: u64,
}

impl Default for MappingOptions {
    fn default() -> Self {
        MappingOptions {
            tile_sizes: vec![32, 32, 32],
            block_shape: vec![8, 8],
            thread_shape: vec![16, 16],
            fusion: FusionStrategy::Max,
            use_shared: true,
            use_private: false,
            unroll_copy_shared: false,
            unroll_factor: 1,
            shared_memory_budget: DEFAULT_SHARED_BUDGET,
            rng_seed: 0,
        }
    }
}

impl MappingOptions {
    /// Unmapped-looking options: one block of one thread, no promotion.
    pub fn naive() -> Self {
        MappingOptions {
            tile_sizes: vec![],
            block_shape: vec![1],
            thread_shape: vec![1],
            fusion: FusionStrategy::Max,
            use_shared: false,
            use_private: false,
            unroll_copy_shared: false,
            unroll_factor: 1,
            shared_memory_budget: DEFAULT_SHARED_BUDGET,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if let Some(t) = self.tile_sizes.iter().find(|t| **t <= 0) {
            return Err(ScheduleError::InvalidTileSize(*t));
        }
        let dims_ok = |v: &[i64]| !v.is_empty() && v.len() <= 3 && v.iter().all(|x| *x >= 1);
        if !dims_ok(&self.block_shape) {
            return Err(ScheduleError::InvalidOptions(format!("grid extents {:?} must be 1 to 3 positive values", self.block_shape)));
        }
        if !dims_ok(&self.thread_shape) {
            return Err(ScheduleError::InvalidOptions(format!("block extents {:?} must be 1 to 3 positive values", self.thread_shape)));
        }
        let threads: i64 = self.thread_shape.iter().product();
        if threads > MAX_THREADS_PER_BLOCK {
            return Err(ScheduleError::TooManyThreads(threads));
        }
        if !self.unroll_factor.is_power_of_two() || self.unroll_factor > MAX_UNROLL {
            return Err(ScheduleError::InvalidOptions(format!("unroll factor {} must be a power of 2 up to {MAX_UNROLL}", self.unroll_factor)));
        }
        if self.shared_memory_budget == 0 {
            return Err(ScheduleError::InvalidOptions("shared memory budget must be positive".into()));
        }
        Ok(())
    }
}
