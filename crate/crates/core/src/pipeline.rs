//! End-to-end compilation: dependences, fusion, tiling, sinking, mapping,
//! unrolling, promotion and lowering, plus random sizes and inputs for
//! testing compiled kernels against the reference interpreter.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::backend::{emulate, lower, run_reference, BackendError, Bindings, EmulationResult, KernelIR, Tensor, Value};
use crate::frontend::{CheckedDef, TensorRole};
use crate::polyir::{compute_dependences, validate_schedule, DependenceGraph, Violation};
use crate::promotion::{insert_copies_and_syncs, plan_promotion, PromotionPlan};
use crate::schedule::{fuse, map_to_gpu, sink_point_loops, tile, unroll_mark, FusionStrategy, MappingOptions, ScheduleError, ScheduleTree, DEFAULT_SHARED_BUDGET};
use crate::semantics::{instantiate, InstantiatedDef, SemanticError, SizeBinding, Subscript, VExpr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("schedule violates {} dependence(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Clone, Debug)]
pub struct Compiled {
    pub deps: DependenceGraph,
    /// Mapped tree before promotion.
    pub mapped: ScheduleTree,
    /// Final tree with copies and barriers.
    pub tree: ScheduleTree,
    pub plan: PromotionPlan,
    pub ir: KernelIR,
}

/// Run every transformation stage for one set of options.
pub fn compile(inst: &InstantiatedDef, opts: &MappingOptions) -> Result<Compiled, CompileError> {
    opts.validate()?;
    let deps = compute_dependences(inst);
    let fused = fuse(inst, &deps, opts.fusion);
    let tiled = tile(&fused, &deps, &opts.tile_sizes)?;
    let sunk = sink_point_loops(&tiled, &deps);
    let mapped = map_to_gpu(&sunk, &deps, &opts.block_shape, &opts.thread_shape)?;
    let mapped = unroll_mark(&mapped, opts.unroll_factor);
    validate_schedule(&deps, &mapped).map_err(CompileError::Invalid)?;
    let plan = plan_promotion(inst, &mapped, opts);
    let tree = insert_copies_and_syncs(&mapped, &plan);
    let ir = lower(inst, &tree, &plan, opts.unroll_copy_shared);
    Ok(Compiled { deps, mapped, tree, plan, ir })
}

pub fn run(inst: &InstantiatedDef, c: &Compiled, b: &Bindings) -> Result<EmulationResult, BackendError> {
    emulate(inst, &c.ir, b)
}

/// Symbols a size binding must provide: sizes and integer scalars.
pub fn binding_symbols(c: &CheckedDef) -> Vec<String> {
    let mut out = c.size_symbols.clone();
    out.extend(c.scalars.iter().filter(|(_, t)| t.is_integer()).map(|(n, _)| n.clone()));
    out
}

pub fn total_instances(inst: &InstantiatedDef) -> u64 {
    inst.stmts.iter().map(|s| s.cardinality()).sum()
}

/// Random sizes in `1..=max` (integer scalars in `1..=2`) that instantiate
/// and keep the total instance count within `budget`.
pub fn sample_sizes(c: &CheckedDef, rng: &mut impl Rng, max: i64, budget: u64) -> Option<(SizeBinding, InstantiatedDef)> {
    let scalars: Vec<&String> = c.scalars.iter().filter(|(_, t)| t.is_integer()).map(|(n, _)| n).collect();
    for _ in 0..500 {
        let mut sizes = SizeBinding::new();
        for s in &c.size_symbols {
            sizes.insert(s.clone(), rng.gen_range(1..=max));
        }
        for s in &scalars {
            sizes.insert((*s).clone(), rng.gen_range(1..=2));
        }
        for _ in 0..64 {
            let Ok(inst) = instantiate(c, &sizes) else { break };
            if total_instances(&inst) <= budget {
                return Some((sizes, inst));
            }
            let Some((k, _)) = c.size_symbols.iter().map(|s| (s.clone(), sizes[s])).filter(|(_, v)| *v > 1).max_by_key(|(_, v)| *v) else { break };
            let v = sizes[&k];
            sizes.insert(k, (v + 1) / 2);
        }
    }
    None
}

/// Random options over small tiles and extents, for equivalence testing.
pub fn random_options(rng: &mut impl Rng) -> MappingOptions {
    let dims = |rng: &mut dyn rand::RngCore, choices: &[i64]| -> Vec<i64> { (0..rand::Rng::gen_range(rng, 1..=3)).map(|_| choices[rand::Rng::gen_range(rng, 0..choices.len())]).collect() };
    MappingOptions {
        tile_sizes: (0..rng.gen_range(0..=3)).map(|_| rng.gen_range(1..=8)).collect(),
        block_shape: dims(rng, &[1, 2, 3, 4]),
        thread_shape: dims(rng, &[1, 2, 3, 4, 8]),
        fusion: FusionStrategy::ALL[rng.gen_range(0..3)],
        use_shared: rng.gen(),
        use_private: rng.gen(),
        unroll_copy_shared: rng.gen(),
        unroll_factor: 1 << rng.gen_range(0..7),
        shared_memory_budget: [256, 1024, DEFAULT_SHARED_BUDGET][rng.gen_range(0..3)],
        rng_seed: 0,
    }
}

/// Valid value range `[0, hi)` for tensors used as index arrays.
fn index_ranges(inst: &InstantiatedDef) -> BTreeMap<usize, i64> {
    let mut out: BTreeMap<usize, i64> = BTreeMap::new();
    for st in &inst.stmts {
        for a in &st.accesses {
            for (d, sub) in a.subs.iter().enumerate() {
                let Subscript::Indirect(e) = sub else { continue };
                let hi = inst.tensors[a.tensor].shape[d] as i64;
                let mut direct = None;
                if let VExpr::Access(k) = e {
                    direct = Some(st.accesses[*k].tensor);
                }
                e.walk(&mut |x| {
                    if let VExpr::Access(k) = x {
                        let t = st.accesses[*k].tensor;
                        let lim = if Some(t) == direct { hi } else { 1 };
                        let cur = out.entry(t).or_insert(lim);
                        *cur = (*cur).min(lim);
                    }
                });
            }
        }
    }
    out
}

/// Uniform floats in [-1, 1], small integers, and in-range index arrays.
pub fn random_inputs(inst: &InstantiatedDef, rng: &mut impl Rng) -> Bindings {
    let ranges = index_ranges(inst);
    let mut b = Bindings::default();
    for (k, t) in inst.tensors.iter().enumerate() {
        if t.role != TensorRole::Input && !t.inout {
            continue;
        }
        let n = t.len();
        let tensor = if t.ty.is_integer() {
            let data = match ranges.get(&k) {
                Some(hi) => (0..n).map(|_| rng.gen_range(0..(*hi).max(1))).collect(),
                None => (0..n).map(|_| rng.gen_range(-8..=8)).collect(),
            };
            Tensor::from_i64(t.ty, &t.shape, data)
        } else {
            Tensor::from_f64(t.ty, &t.shape, (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        };
        b.tensors.insert(t.name.clone(), tensor.narrowed());
    }
    for s in &inst.scalars {
        let v = if s.ty.is_integer() { Value::I(rng.gen_range(-4..=4)) } else { Value::F(rng.gen_range(-1.0..=1.0)) };
        b.scalars.insert(s.name.clone(), v);
    }
    b
}

/// Largest element-wise mismatch: integers must match exactly, floats
/// within `tol` relative to `max(|ref|, 1)`. Returns `None` when all agree.
pub fn compare_outputs(reference: &BTreeMap<String, Tensor>, got: &BTreeMap<String, Tensor>, tol: f64) -> Option<String> {
    for (name, r) in reference {
        let Some(g) = got.get(name) else { return Some(format!("missing output {name}")) };
        if r.shape != g.shape {
            return Some(format!("{name}: shape {:?} vs {:?}", r.shape, g.shape));
        }
        for (k, (a, b)) in r.data.iter().zip(&g.data).enumerate() {
            let ok = match (a, b) {
                (Value::I(x), Value::I(y)) => x == y,
                _ => {
                    let (x, y) = (a.as_f64(), b.as_f64());
                    (x.is_nan() && y.is_nan()) || x == y || (x - y).abs() / x.abs().max(1.0) <= tol
                }
            };
            if !ok {
                return Some(format!("{name}[{k}]: reference {a:?}, got {b:?}"));
            }
        }
    }
    None
}

/// Compile, emulate and compare against the reference interpreter.
pub fn check_against_reference(inst: &InstantiatedDef, opts: &MappingOptions, b: &Bindings) -> Result<(EmulationResult, Option<String>), CompileError> {
    let c = compile(inst, opts)?;
    let reference = run_reference(inst, b)?;
    let got = run(inst, &c, b)?;
    let diff = compare_outputs(&reference, &got.outputs, 1e-4);
    Ok((got, diff))
}
