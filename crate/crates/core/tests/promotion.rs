use tc_core::corpus;
use tc_core::frontend::check_program;
use tc_core::pipeline::compile;
use tc_core::polyir::compute_dependences;
use tc_core::promotion::{group_references, insert_copies_and_syncs, plan_promotion, Target};
use tc_core::backend::KStmt;
use tc_core::schedule::{fuse, tile, CopyDir, FusionStrategy, MappingOptions};
use tc_core::semantics::{instantiate, InstantiatedDef};

fn inst(src: &str, sizes: &[(&str, i64)]) -> InstantiatedDef {
    let c = check_program(src).unwrap().remove(0);
    instantiate(&c, &sizes.iter().map(|(k, v)| (k.to_string(), *v)).collect()).unwrap()
}

fn sgemm(n: i64) -> InstantiatedDef {
    inst(corpus::source("sgemm").unwrap(), &[("N", n), ("M", n), ("K", n)])
}

fn small_opts() -> MappingOptions {
    MappingOptions { tile_sizes: vec![4, 4, 4], block_shape: vec![2, 2], thread_shape: vec![4, 4], ..Default::default() }
}

#[test]
fn sgemm_default_options_promote_three_32x32_tiles() {
    let i = sgemm(32);
    let c = compile(&i, &MappingOptions::default()).unwrap();
    let mut names: Vec<(&str, Vec<i64>)> = c.plan.buffers.iter().map(|b| (b.name.as_str(), b.shape())).collect();
    names.sort();
    assert_eq!(names, vec![("shared_A", vec![32, 32]), ("shared_B", vec![32, 32]), ("shared_C", vec![32, 32])]);
    assert_eq!(c.plan.shared_bytes, 3 * 32 * 32 * 4);
    assert!(c.plan.shared_bytes <= MappingOptions::default().shared_memory_budget);
}

#[test]
fn sgemm_groups_are_one_per_tensor() {
    let i = sgemm(32);
    let c = compile(&i, &MappingOptions::default()).unwrap();
    let groups = group_references(&i, &c.mapped);
    let by_name = |n: &str| groups.iter().find(|g| i.tensors[g.tensor].name == n).unwrap();
    let cg = by_name("C");
    assert!(cg.has_write);
    assert_eq!(cg.accesses.len(), 4);
    for n in ["A", "B"] {
        let g = by_name(n);
        assert!(!g.has_write && !g.indirect);
        assert_eq!(g.tile.as_ref().unwrap().extents(), vec![32, 32]);
    }
}

#[test]
fn budget_limits_promotion() {
    let i = sgemm(32);
    let opts = MappingOptions { shared_memory_budget: 4096, ..Default::default() };
    let c = compile(&i, &opts).unwrap();
    assert_eq!(c.plan.buffers.len(), 1);
    assert_eq!(c.plan.shared_bytes, 4096);
    let none = compile(&i, &MappingOptions { shared_memory_budget: 1024, ..Default::default() }).unwrap();
    assert!(none.plan.buffers.is_empty());
}

#[test]
fn single_use_access_is_not_promoted() {
    let i = inst("def cp(float(N,M) A) -> (B) {\n  B(i,j) = A(i,j)\n}\n", &[("N", 16), ("M", 16)]);
    let c = compile(&i, &small_opts()).unwrap();
    assert!(c.plan.groups.iter().all(|g| g.reuse == 1));
    assert!(c.plan.targets.iter().all(|t| *t == Target::None));
    assert!(c.plan.buffers.is_empty());
}

#[test]
fn indirect_lookup_table_promotes_with_source_access() {
    let i = inst("def lut(float(E,D) LUT, int(B,L) I) -> (O) {\n  O(i,j) +=! LUT(I(i,k),j)\n}\n", &[("E", 8), ("D", 8), ("B", 8), ("L", 4)]);
    let c = compile(&i, &small_opts()).unwrap();
    let b = c.plan.buffers.iter().find(|b| b.name == "shared_LUT").expect("indirect buffer");
    assert!(b.source.is_some());
    assert!(b.copy_in && !b.copy_out);
    assert_eq!(b.shape(), vec![4, 4, 4]);
}

#[test]
fn two_lut_promotes_both_tables() {
    let i = inst(corpus::source("2LUT").unwrap(), &[("E1", 8), ("E2", 8), ("D", 8), ("B", 8), ("L1", 4), ("L2", 4)]);
    let c = compile(&i, &small_opts()).unwrap();
    for n in ["shared_LUT1", "shared_LUT2"] {
        assert!(c.plan.buffers.iter().any(|b| b.name == n && b.source.is_some()), "{n}");
    }
}

#[test]
fn indirect_read_of_written_tensor_is_not_promoted() {
    let src = "def g(float(N) X0, int(A) I, float(C) Y) -> (X, Z) {\n  X(i) = X0(i)\n  Z(a,b) = X(I(a)) + Y(b)\n}\n";
    let i = inst(src, &[("N", 8), ("A", 8), ("C", 8)]);
    let g = compute_dependences(&i);
    let t = tile(&fuse(&i, &g, FusionStrategy::Max), &g, &[4, 4]).unwrap();
    let plan = plan_promotion(&i, &t, &MappingOptions::default());
    let x = i.tensors.iter().position(|t| t.name == "X").unwrap();
    assert!(plan.buffers.iter().all(|b| b.tensor != x));
    assert!(plan.buffers.iter().any(|b| b.name == "shared_Y"));

    let read_only = "def g(float(N) X, int(A) I, float(C) Y) -> (Z) {\n  Z(a,b) = X(I(a)) + Y(b)\n}\n";
    let i = inst(read_only, &[("N", 8), ("A", 8), ("C", 8)]);
    let c = compile(&i, &small_opts()).unwrap();
    assert!(c.plan.buffers.iter().any(|b| b.name == "shared_X" && b.source.is_some()));
}

#[test]
fn no_promotion_leaves_tree_unchanged() {
    let i = sgemm(16);
    let opts = MappingOptions { use_shared: false, ..small_opts() };
    let c = compile(&i, &opts).unwrap();
    assert!(c.plan.buffers.is_empty());
    assert_eq!(insert_copies_and_syncs(&c.mapped, &c.plan).dump(), c.mapped.dump());
}

fn flatten<'a>(b: &'a [KStmt], out: &mut Vec<&'a KStmt>) {
    for s in b {
        out.push(s);
        match s {
            KStmt::Loop { body, .. } | KStmt::If { body, .. } => flatten(body, out),
            _ => {}
        }
    }
}

#[test]
fn shared_copies_in_are_followed_by_a_barrier() {
    let i = sgemm(16);
    let c = compile(&i, &small_opts()).unwrap();
    assert!(!c.plan.buffers.is_empty());
    let mut flat = Vec::new();
    flatten(&c.ir.body, &mut flat);
    let mut checked = 0;
    for (k, s) in flat.iter().enumerate() {
        if let KStmt::Copy { buffer, dir: CopyDir::In } = s {
            if c.ir.buffers[*buffer].spec.private {
                continue;
            }
            let next = flat[k + 1..].iter().find(|x| !matches!(x, KStmt::Copy { .. } | KStmt::Loop { .. } | KStmt::If { .. }));
            assert!(matches!(next, Some(KStmt::Barrier)), "copy-in at {k} not followed by a barrier");
            checked += 1;
        }
    }
    assert!(checked >= 3);
}

#[test]
fn private_promotion_of_accumulator() {
    let i = sgemm(16);
    let opts = MappingOptions { use_shared: false, use_private: true, tile_sizes: vec![4, 4, 4], block_shape: vec![4, 4], thread_shape: vec![4, 4], ..Default::default() };
    let c = compile(&i, &opts).unwrap();
    let b = c.plan.buffers.iter().find(|b| b.name == "private_C").expect("private C");
    assert!(b.private);
    assert_eq!(b.cells(), 1);
    assert_eq!(c.plan.shared_bytes, 0);
}

#[test]
fn private_copies_follow_thread_pinning() {
    // Only thread 0 runs the untiled reduction, so only it may copy C back.
    let i = inst(corpus::source("mv").unwrap(), &[("M", 4), ("K", 4)]);
    let opts = MappingOptions { tile_sizes: vec![], block_shape: vec![1], thread_shape: vec![4], use_shared: false, use_private: true, ..Default::default() };
    let c = compile(&i, &opts).unwrap();
    let b = c.plan.buffers.iter().find(|b| b.name == "private_C").unwrap();
    assert_eq!(b.thread_guards, vec![(0, 1)]);
    let inputs = tc_core::pipeline::random_inputs(&i, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1));
    assert!(tc_core::backend::emulate(&i, &c.ir, &inputs).unwrap().races.is_empty());
}
