//! Admissible values of every gene.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::schedule::{FusionStrategy, MappingOptions, MAX_UNROLL};
use crate::semantics::InstantiatedDef;

/// Largest grid extent per dimension the space offers.
pub const MAX_GRID_EXTENT: i64 = 16;
/// Largest block extent per dimension the space offers.
pub const MAX_BLOCK_EXTENT: i64 = 32;

pub const GENE_NAMES: [&str; 12] =
    ["grid_rank", "grid0", "grid1", "grid2", "block_rank", "block0", "block1", "block2", "fusion", "use_shared", "use_private", "unroll_copy_shared"];

/// Fixed-length view of a genome: tile sizes, then the genes named in
/// [`GENE_NAMES`], then the unroll factor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Genome {
    pub tile: Vec<i64>,
    pub grid_rank: usize,
    pub grid: [i64; 3],
    pub block_rank: usize,
    pub block: [i64; 3],
    pub fusion: FusionStrategy,
    pub use_shared: bool,
    pub use_private: bool,
    pub unroll_copy_shared: bool,
    pub unroll: u32,
}

impl Genome {
    pub fn to_options(&self, template: &MappingOptions) -> MappingOptions {
        MappingOptions {
            tile_sizes: self.tile.clone(),
            block_shape: self.grid[..self.grid_rank].to_vec(),
            thread_shape: self.block[..self.block_rank].to_vec(),
            fusion: self.fusion,
            use_shared: self.use_shared,
            use_private: self.use_private,
            unroll_copy_shared: self.unroll_copy_shared,
            unroll_factor: self.unroll,
            ..template.clone()
        }
    }

    pub fn copy_gene(&mut self, from: &Genome, g: usize) {
        let d = self.tile.len();
        if g < d {
            self.tile[g] = from.tile[g];
            return;
        }
        match g - d {
            0 => self.grid_rank = from.grid_rank,
            k @ 1..=3 => self.grid[k - 1] = from.grid[k - 1],
            4 => self.block_rank = from.block_rank,
            k @ 5..=7 => self.block[k - 5] = from.block[k - 5],
            8 => self.fusion = from.fusion,
            9 => self.use_shared = from.use_shared,
            10 => self.use_private = from.use_private,
            11 => self.unroll_copy_shared = from.unroll_copy_shared,
            _ => self.unroll = from.unroll,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TuningSpace {
    pub depth: usize,
    pub tiles: Vec<i64>,
    pub grid: Vec<i64>,
    pub block: Vec<i64>,
    pub unroll: Vec<u32>,
    /// Source of the non-genetic option fields.
    pub template: MappingOptions,
}

/// Powers of two and ceil divisors of the sizes, up to `cap`.
fn admissible(sizes: &[i64], cap: i64) -> Vec<i64> {
    let mut out = BTreeSet::new();
    let mut p = 1;
    while p <= cap {
        out.insert(p);
        p *= 2;
    }
    for &n in sizes {
        for d in 1..=n {
            let v = (n + d - 1) / d;
            if v <= cap {
                out.insert(v);
            }
        }
    }
    out.into_iter().collect()
}

impl TuningSpace {
    pub fn new(inst: &InstantiatedDef) -> Self {
        let sizes: Vec<i64> = inst.sizes.values().copied().filter(|v| *v > 0).collect();
        let largest = sizes.iter().copied().max().unwrap_or(1);
        let depth = inst.stmts.iter().map(|s| s.iters.len()).max().unwrap_or(0).max(1);
        let mut unroll = Vec::new();
        let mut u = 1;
        while u <= MAX_UNROLL {
            unroll.push(u);
            u *= 2;
        }
        TuningSpace {
            depth,
            tiles: admissible(&sizes, (largest as u64).next_power_of_two() as i64),
            grid: admissible(&sizes, MAX_GRID_EXTENT),
            block: admissible(&sizes, MAX_BLOCK_EXTENT),
            unroll,
            template: MappingOptions::default(),
        }
    }

    pub fn gene_count(&self) -> usize {
        self.depth + GENE_NAMES.len() + 1
    }

    pub fn random(&self, rng: &mut impl Rng) -> Genome {
        let mut g = Genome {
            tile: vec![1; self.depth],
            grid_rank: 1,
            grid: [1; 3],
            block_rank: 1,
            block: [1; 3],
            fusion: FusionStrategy::Max,
            use_shared: false,
            use_private: false,
            unroll_copy_shared: false,
            unroll: 1,
        };
        for k in 0..self.gene_count() {
            self.mutate_gene(&mut g, k, rng);
        }
        g
    }

    /// Replace gene `g` by a uniformly chosen admissible value.
    pub fn mutate_gene(&self, x: &mut Genome, g: usize, rng: &mut impl Rng) {
        let pick = |v: &[i64], rng: &mut dyn rand::RngCore| *v.choose(rng).expect("non-empty gene list");
        if g < self.depth {
            x.tile[g] = pick(&self.tiles, rng);
            return;
        }
        match g - self.depth {
            0 => x.grid_rank = rng.gen_range(1..=3),
            k @ 1..=3 => x.grid[k - 1] = pick(&self.grid, rng),
            4 => x.block_rank = rng.gen_range(1..=3),
            k @ 5..=7 => x.block[k - 5] = pick(&self.block, rng),
            8 => x.fusion = *FusionStrategy::ALL.choose(rng).expect("three strategies"),
            9 => x.use_shared = rng.gen(),
            10 => x.use_private = rng.gen(),
            11 => x.unroll_copy_shared = rng.gen(),
            _ => x.unroll = *self.unroll.choose(rng).expect("non-empty unroll list"),
        }
    }

    /// Fixed-length genome of arbitrary options: missing tile sizes and
    /// extents are padded with the largest tile and with 1.
    pub fn genome_of(&self, o: &MappingOptions) -> Genome {
        let pad = |v: &[i64]| {
            let mut a = [1; 3];
            for (k, x) in v.iter().take(3).enumerate() {
                a[k] = *x;
            }
            a
        };
        let big = *self.tiles.last().expect("non-empty tile list");
        Genome {
            tile: (0..self.depth).map(|k| o.tile_sizes.get(k).copied().unwrap_or(big)).collect(),
            grid_rank: o.block_shape.len().clamp(1, 3),
            grid: pad(&o.block_shape),
            block_rank: o.thread_shape.len().clamp(1, 3),
            block: pad(&o.thread_shape),
            fusion: o.fusion,
            use_shared: o.use_shared,
            use_private: o.use_private,
            unroll_copy_shared: o.unroll_copy_shared,
            unroll: o.unroll_factor,
        }
    }
}
