use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tc_core::corpus;
use tc_core::frontend::check_program;
use tc_core::polyir::{compute_dependences, validate_schedule, DependenceGraph};
use tc_core::schedule::{
    canonical_tree, fuse, map_to_gpu, sink_point_loops, tile, unroll_mark, FilterSet, FusionStrategy, MapTag, MappingOptions, Node, ScheduleError, ScheduleTree,
};
use tc_core::semantics::{instantiate, InstantiatedDef, SizeBinding};

fn setup(src: &str, size: i64) -> (InstantiatedDef, DependenceGraph) {
    let c = check_program(src).unwrap().remove(0);
    let mut sizes: SizeBinding = c.size_symbols.iter().map(|s| (s.clone(), size)).collect();
    for (n, t) in &c.scalars {
        if t.is_integer() {
            sizes.insert(n.clone(), 1);
        }
    }
    let inst = instantiate(&c, &sizes).unwrap();
    let g = compute_dependences(&inst);
    (inst, g)
}

fn sgemm(size: i64) -> (InstantiatedDef, DependenceGraph) {
    setup(corpus::source("sgemm").unwrap(), size)
}

type Order = Vec<(usize, Vec<i64>)>;

const TREE_A: &str = "Domain(Sequence(Filter[S0](Band[S0:i,j]),Filter[S1](Band[S1:i,j,k])))";
const TREE_B: &str = "Domain(Band[S0:i,j;S1:i,j](Sequence(Filter[S0],Filter[S1](Band[S1:k]))))";
const TREE_C: &str = "Domain(Band[S0:i/32,j/32;S1:i/32,j/32](Band[S0:i%32,j%32;S1:i%32,j%32](Sequence(Filter[S0],Filter[S1](Band[S1:k])))))";
const TREE_D: &str = "Domain(Band[S0:i/32,j/32;S1:i/32,j/32](Sequence(Filter[S0](Band[S0:i%32,j%32]),Filter[S1](Band[S1:k](Band[S1:i%32,j%32])))))";

#[test]
fn sgemm_tree_goldens() {
    let (inst, g) = sgemm(64);
    let a = canonical_tree(&inst, &g);
    let b = fuse(&inst, &g, FusionStrategy::Max);
    let c = tile(&b, &g, &[32, 32]).unwrap();
    let d = sink_point_loops(&c, &g);
    assert_eq!(a.skeleton(), TREE_A);
    assert_eq!(b.skeleton(), TREE_B);
    assert_eq!(c.skeleton(), TREE_C);
    assert_eq!(d.skeleton(), TREE_D);
}

/// Loop nests written out by hand for sgemm at 4x4x4 with 2x2 tiles.
fn expected_orders() -> [Order; 4] {
    let n = 4;
    let mut a = Vec::new();
    for i in 0..n {
        for j in 0..n {
            a.push((0, vec![i, j]));
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                a.push((1, vec![i, j, k]));
            }
        }
    }
    let mut b = Vec::new();
    for i in 0..n {
        for j in 0..n {
            b.push((0, vec![i, j]));
            for k in 0..n {
                b.push((1, vec![i, j, k]));
            }
        }
    }
    let mut c = Vec::new();
    let mut d = Vec::new();
    for ti in (0..n).step_by(2) {
        for tj in (0..n).step_by(2) {
            for pi in 0..2 {
                for pj in 0..2 {
                    c.push((0, vec![ti + pi, tj + pj]));
                    for k in 0..n {
                        c.push((1, vec![ti + pi, tj + pj, k]));
                    }
                }
            }
            for pi in 0..2 {
                for pj in 0..2 {
                    d.push((0, vec![ti + pi, tj + pj]));
                }
            }
            for k in 0..n {
                for pi in 0..2 {
                    for pj in 0..2 {
                        d.push((1, vec![ti + pi, tj + pj, k]));
                    }
                }
            }
        }
    }
    [a, b, c, d]
}

#[test]
fn instance_order_matches_hand_written_loops() {
    let (inst, g) = sgemm(4);
    let a = canonical_tree(&inst, &g);
    let b = fuse(&inst, &g, FusionStrategy::Max);
    let c = tile(&b, &g, &[2, 2]).unwrap();
    let d = sink_point_loops(&c, &g);
    let want = expected_orders();
    for (k, t) in [a, b, c, d].iter().enumerate() {
        assert_eq!(t.instance_order(), want[k], "tree {k}");
        assert!(validate_schedule(&g, t).is_ok(), "tree {k}");
    }
}

#[test]
fn single_statement_has_no_sequence() {
    let (inst, g) = setup("def scale(float(N) A) -> (B) {\n  B(i) = 2 * A(i)\n}\n", 4);
    assert_eq!(canonical_tree(&inst, &g).skeleton(), "Domain(Filter[S0](Band[S0:i]))");
}

#[test]
fn fcrelu_canonical_is_a_sequence_of_three_filters() {
    let (inst, g) = setup(corpus::source("fcrelu").unwrap(), 4);
    let s = canonical_tree(&inst, &g).skeleton();
    assert!(s.starts_with("Domain(Sequence(Filter[S0]"));
    assert_eq!(s.matches("Filter[").count(), 3);
}

#[test]
fn min_fusion_is_identity() {
    for (stem, _, src) in corpus::CORPUS {
        let (inst, g) = setup(src, 4);
        assert_eq!(fuse(&inst, &g, FusionStrategy::Min), canonical_tree(&inst, &g), "{stem}");
    }
}

#[test]
fn mlp3_max_fusion_shares_the_batch_band() {
    let (inst, g) = setup(corpus::source("MLP3").unwrap(), 4);
    let t = fuse(&inst, &g, FusionStrategy::Max);
    let Node::Domain(c) = &t.root else { panic!("no domain") };
    let Node::Band { members, child, .. } = &**c else { panic!("expected an outer band, got {}", t.skeleton()) };
    assert_eq!(members.len(), 1);
    assert_eq!(members[0].fns.len(), inst.stmts.len());
    assert!(matches!(**child, Node::Sequence(_)));
    assert!(validate_schedule(&g, &t).is_ok());
}

fn multiset(t: &ScheduleTree) -> Order {
    let mut v = t.instance_order();
    v.sort();
    v
}

#[test]
fn tiling_preserves_instances_and_validity() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (stem, _, src) in corpus::CORPUS {
        let (inst, g) = setup(src, 5);
        for strategy in FusionStrategy::ALL {
            let f = fuse(&inst, &g, strategy);
            let base = multiset(&f);
            for _ in 0..4 {
                let sizes: Vec<i64> = (0..rng.gen_range(0..=3)).map(|_| rng.gen_range(1..=6)).collect();
                let t = tile(&f, &g, &sizes).unwrap();
                let s = sink_point_loops(&t, &g);
                for (name, x) in [("tiled", &t), ("sunk", &s)] {
                    assert_eq!(multiset(x), base, "{stem} {strategy:?} {sizes:?} {name}");
                    assert!(validate_schedule(&g, x).is_ok(), "{stem} {strategy:?} {sizes:?} {name}");
                }
            }
        }
    }
}

#[test]
fn degenerate_tile_sizes() {
    let (inst, g) = sgemm(4);
    let f = fuse(&inst, &g, FusionStrategy::Max);
    let big = tile(&f, &g, &[8, 8]).unwrap();
    assert_eq!(big.instance_order(), f.instance_order());
    let unit = tile(&f, &g, &[1, 1]).unwrap();
    assert_eq!(unit.instance_order(), f.instance_order());
    assert!(tile(&f, &g, &[0]).is_err());
}

fn outer_band_mut(n: &mut Node) -> Option<&mut Node> {
    match n {
        Node::Domain(c) => outer_band_mut(c),
        Node::Band { .. } => Some(n),
        Node::Filter { child, .. } => outer_band_mut(child),
        _ => None,
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn permutable_bands_allow_every_member_order() {
    let mut checked = 0;
    for (stem, _, src) in corpus::CORPUS {
        let (inst, g) = setup(src, 3);
        let f = fuse(&inst, &g, FusionStrategy::Max);
        let mut t = f.clone();
        let Some(Node::Band { members, permutable, .. }) = outer_band_mut(&mut t.root) else { continue };
        if !*permutable || members.len() > 4 {
            continue;
        }
        let orig = members.clone();
        for p in permutations(orig.len()) {
            let mut u = f.clone();
            if let Some(Node::Band { members, .. }) = outer_band_mut(&mut u.root) {
                *members = p.iter().map(|k| orig[*k].clone()).collect();
            }
            assert!(validate_schedule(&g, &u).is_ok(), "{stem} permutation {p:?}");
            checked += 1;
        }
    }
    assert!(checked >= 20);
}

#[test]
fn mapping_adds_context_and_residue_filters() {
    let (inst, g) = sgemm(64);
    let d = sink_point_loops(&tile(&fuse(&inst, &g, FusionStrategy::Max), &g, &[32, 32]).unwrap(), &g);
    let e = map_to_gpu(&d, &g, &[2, 2], &[16, 16]).unwrap();
    assert!(e.is_mapped());
    assert_eq!(e.context(), Some((vec![2, 2], vec![16, 16])));
    let s = e.skeleton();
    assert!(s.starts_with("Domain(Context(Filter<b_x,b_y>(Band[S0:i/32,j/32;S1:i/32,j/32]"), "{s}");
    assert_eq!(s.matches("Filter<t_x,t_y>").count(), 2, "{s}");
    assert!(validate_schedule(&g, &e).is_ok());
    let dump = e.dump();
    assert!(dump.contains("0 <= t_x < 16 and 0 <= t_y < 16"));
    assert!(dump.contains("(i mod 32) - t_x = 0 mod 16"));
}

fn count_tags(n: &Node, tag: MapTag) -> usize {
    let here = match n {
        Node::Band { members, .. } => members.iter().filter(|m| m.tag == Some(tag)).count(),
        _ => 0,
    };
    here + n.children().into_iter().map(|c| count_tags(c, tag)).sum::<usize>()
}

#[test]
fn threads_beyond_extent_idle_and_limits_hold() {
    let (inst, g) = setup(corpus::source("mv").unwrap(), 4);
    let f = fuse(&inst, &g, FusionStrategy::Max);
    let t = sink_point_loops(&tile(&f, &g, &[4]).unwrap(), &g);
    let e = map_to_gpu(&t, &g, &[1], &[32]).unwrap();
    assert!(validate_schedule(&g, &e).is_ok());
    assert!(count_tags(&e.root, MapTag::Thread(0)) >= 1);
    assert!(matches!(map_to_gpu(&e, &g, &[1], &[64, 32]), Err(ScheduleError::TooManyThreads(2048))));
}

#[test]
fn reduction_only_branch_pads_thread_dimension() {
    let (inst, g) = setup(corpus::source("mv").unwrap(), 8);
    let e = map_to_gpu(&fuse(&inst, &g, FusionStrategy::Max), &g, &[2], &[4, 4]).unwrap();
    fn residues(n: &Node, out: &mut Vec<(MapTag, bool)>) {
        if let Node::Filter { set: FilterSet::Residues(rs), .. } = n {
            out.extend(rs.iter().map(|r| (r.tag, r.fns.is_none())));
        }
        for c in n.children() {
            residues(c, out);
        }
    }
    let mut rs = Vec::new();
    residues(&e.root, &mut rs);
    assert!(rs.contains(&(MapTag::Thread(1), true)), "{rs:?}");
}

fn unroll_marks(n: &Node, out: &mut Vec<u32>) {
    if let Node::Band { members, .. } = n {
        out.extend(members.iter().map(|m| m.unroll));
    }
    for c in n.children() {
        unroll_marks(c, out);
    }
}

#[test]
fn unroll_annotations() {
    let (inst, g) = sgemm(32);
    let o = MappingOptions::default();
    let d = sink_point_loops(&tile(&fuse(&inst, &g, FusionStrategy::Max), &g, &o.tile_sizes).unwrap(), &g);
    let mut marks = Vec::new();
    unroll_marks(&unroll_mark(&d, 1).root, &mut marks);
    assert!(marks.iter().all(|u| *u == 1));

    let mut marks = Vec::new();
    unroll_marks(&unroll_mark(&d, 4096).root, &mut marks);
    assert!(marks.iter().filter(|u| **u == 32).count() >= 2, "{marks:?}");

    let (inst, g) = setup("def scale(float(N) A) -> (B) {\n  B(i) = 2 * A(i)\n}\n", 32);
    let mut marks = Vec::new();
    unroll_marks(&unroll_mark(&canonical_tree(&inst, &g), 4096).root, &mut marks);
    assert_eq!(marks, vec![32]);

    let (inst, g) = setup("def acc(float(K) A) -> (s) {\n  s(i) +=! A(k) where i in 0:1\n}\n", 32);
    let t = fuse(&inst, &g, FusionStrategy::Max);
    let t = tile(&t, &g, &[1, 32]).unwrap();
    let mut marks = Vec::new();
    unroll_marks(&unroll_mark(&t, 8).root, &mut marks);
    assert!(marks.contains(&8), "{marks:?}");
}
