use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tc_core::corpus;
use tc_core::frontend::check_program;
use tc_core::polyir::{compute_dependences, dataflow, validate_schedule, Constraint, DepKind, System, ViolationKind};
use tc_core::schedule::{canonical_tree, Node};
use tc_core::semantics::{instantiate, InstantiatedDef, SizeBinding};

fn inst_of(src: &str, size: i64) -> InstantiatedDef {
    let c = check_program(src).unwrap().remove(0);
    let mut sizes: SizeBinding = c.size_symbols.iter().map(|s| (s.clone(), size)).collect();
    for (n, t) in &c.scalars {
        if t.is_integer() {
            sizes.insert(n.clone(), 1);
        }
    }
    instantiate(&c, &sizes).unwrap()
}

/// Every point of the box, by explicit odometer.
fn enumerate(bounds: &[(i64, i64)]) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    if bounds.iter().any(|(l, h)| l >= h) {
        return out;
    }
    let mut p: Vec<i64> = bounds.iter().map(|b| b.0).collect();
    loop {
        out.push(p.clone());
        let mut k = bounds.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            p[k] += 1;
            if p[k] < bounds[k].1 {
                break;
            }
            p[k] = bounds[k].0;
        }
    }
}

fn satisfies(cons: &[Constraint], x: &[i64]) -> bool {
    cons.iter().all(|c| {
        let v: i64 = c.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<i64>() + c.c;
        if c.eq {
            v == 0
        } else {
            v >= 0
        }
    })
}

fn random_system(rng: &mut impl Rng) -> System {
    let n = rng.gen_range(1..=5);
    let mut bounds = Vec::new();
    let mut size: i64 = 1;
    for _ in 0..n {
        let lo = rng.gen_range(-5..=5);
        let room = (10_000 / size).clamp(1, 12);
        let ext = rng.gen_range(1..=room);
        bounds.push((lo, lo + ext));
        size *= ext;
    }
    let mut s = System::new((0..n).map(|k| format!("x{k}")).collect(), bounds);
    for _ in 0..rng.gen_range(0..=6) {
        let coeffs: Vec<i64> = (0..n).map(|_| rng.gen_range(-3..=3)).collect();
        let c = rng.gen_range(-12..=12);
        if rng.gen_bool(0.25) {
            s.add(Constraint::eq(coeffs, c));
        } else {
            s.add(Constraint::ge(coeffs, c));
        }
    }
    s
}

#[test]
fn emptiness_matches_enumeration_on_600_random_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut disagreements = 0;
    let mut nonempty = 0;
    for _ in 0..600 {
        let s = random_system(&mut rng);
        assert!(s.box_size() <= 10_000);
        let truth = enumerate(&s.bounds).iter().any(|p| satisfies(&s.cons, p));
        if truth {
            nonempty += 1;
        }
        if s.is_empty() == truth {
            disagreements += 1;
        }
        if let Some(w) = s.witness() {
            assert!(satisfies(&s.cons, &w) && w.iter().zip(&s.bounds).all(|(x, (l, h))| l <= x && x < h));
        }
    }
    assert_eq!(disagreements, 0);
    assert!(nonempty > 50 && nonempty < 550, "suite should mix empty and non-empty systems ({nonempty})");
}

#[test]
fn exact_solver_agrees_with_brute_force_beyond_the_box_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let s = random_system(&mut rng);
        assert_eq!(s.solve_exact().is_some(), s.brute_force().is_some());
    }
}

#[test]
fn sgemm_dataflow_restricts_s_to_first_reduction_step() {
    let inst = inst_of(corpus::source("sgemm").unwrap(), 4);
    let edges = dataflow(&inst).expect("sgemm has only affine accesses");
    let s_to_t: Vec<_> = edges.iter().filter(|e| e.src == 0 && e.dst == 1).collect();
    assert_eq!(s_to_t.len(), 1);
    let pairs = &s_to_t[0].pairs;
    assert_eq!(pairs.len(), 16);
    for (x, y) in pairs {
        assert_eq!(y, &vec![x[0], x[1], 0]);
    }
    assert!(edges.iter().all(|e| !(e.src == 1 && e.dst == 0)));
}

#[test]
fn memory_based_sgemm_dependences() {
    let inst = inst_of(corpus::source("sgemm").unwrap(), 4);
    let g = compute_dependences(&inst);
    for kind in [DepKind::Flow, DepKind::Anti, DepKind::Output] {
        assert!(g.edges_between(0, 1).any(|d| d.kind == kind), "S -> T {kind}");
        assert!(g.edges_between(1, 1).any(|d| d.kind == kind), "T -> T {kind}");
    }
    let flow: Vec<_> = g.edges_between(0, 1).filter(|d| d.kind == DepKind::Flow).collect();
    assert!(flow.iter().any(|d| d.contains(&[1, 2], &[1, 2, 3])));
    assert!(!flow.iter().any(|d| d.contains(&[1, 2], &[2, 1, 0])));
    assert!(g.edges_between(1, 0).next().is_none());
}

#[test]
fn disjoint_tensors_have_no_dependences() {
    let src = "def two(float(N) A) -> (B, C) {\n  B(i) = A(i)\n  C(i) = 2 * A(i)\n}\n";
    let g = compute_dependences(&inst_of(src, 5));
    assert!(g.deps.is_empty());
}

#[test]
fn dataflow_edges_refine_memory_based_flow() {
    for (stem, _, src) in corpus::CORPUS {
        let inst = inst_of(src, 3);
        let Some(edges) = dataflow(&inst) else { continue };
        let g = compute_dependences(&inst);
        for e in &edges {
            for (x, y) in &e.pairs {
                let covered = g.edges_between(e.src, e.dst).any(|d| d.kind == DepKind::Flow && d.contains(x, y));
                assert!(covered, "{stem}: flow {x:?} -> {y:?} missing from memory-based set");
            }
        }
    }
}

#[test]
fn indirect_dependences_cover_every_concrete_index_array() {
    // The exact dependences for any index values must lie inside the conservative set.
    let src = "def lookup(float(N) X, int(N) I) -> (Y, Z) {\n  Y(i) = X(i)\n  Z(i) = Y(I(i))\n}\n";
    let inst = inst_of(src, 4);
    let g = compute_dependences(&inst);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let idx: Vec<i64> = (0..4).map(|_| rng.gen_range(0..4)).collect();
        for a in 0..4i64 {
            for b in 0..4i64 {
                if idx[b as usize] == a {
                    assert!(g.edges_between(0, 1).any(|d| d.contains(&[a], &[b])), "S({a}) -> T({b})");
                }
            }
        }
    }
}

fn reverse_first_sequence(n: &mut Node) -> bool {
    match n {
        Node::Sequence(cs) => {
            cs.reverse();
            true
        }
        Node::Domain(c) => reverse_first_sequence(c),
        Node::Band { child, .. } | Node::Filter { child, .. } | Node::Context { child, .. } | Node::Extension { child, .. } => reverse_first_sequence(child),
        Node::Set(cs) => cs.iter_mut().any(reverse_first_sequence),
        Node::Leaf => false,
    }
}

#[test]
fn reversed_sequence_is_rejected_with_witness() {
    let inst = inst_of(corpus::source("sgemm").unwrap(), 4);
    let g = compute_dependences(&inst);
    let mut t = canonical_tree(&inst, &g);
    assert!(reverse_first_sequence(&mut t.root));
    let v = validate_schedule(&g, &t).unwrap_err();
    let order = v.iter().find(|v| v.src == 0 && v.dst == 1 && v.kind == ViolationKind::Order).expect("S -> T order violation");
    let (x, y) = order.witness.clone().expect("witness");
    assert_eq!((x, y), (vec![0, 0], vec![0, 0, 0]));
}

#[test]
fn canonical_trees_are_valid_for_whole_corpus() {
    for (stem, _, src) in corpus::CORPUS {
        let inst = inst_of(src, 4);
        let g = compute_dependences(&inst);
        let t = canonical_tree(&inst, &g);
        assert!(validate_schedule(&g, &t).is_ok(), "{stem}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn witness_is_a_member(seed in any::<u64>()) {
        let s = random_system(&mut ChaCha8Rng::seed_from_u64(seed));
        match s.witness() {
            Some(w) => prop_assert!(s.contains(&w)),
            None => prop_assert!(enumerate(&s.bounds).iter().all(|p| !satisfies(&s.cons, p))),
        }
    }

    #[test]
    fn adding_a_constraint_never_grows_the_set(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_system(&mut rng);
        let mut t = s.clone();
        let coeffs: Vec<i64> = (0..s.nvars()).map(|_| rng.gen_range(-2..=2)).collect();
        t.add(Constraint::ge(coeffs, rng.gen_range(-4..=4)));
        prop_assert!(!s.is_empty() || t.is_empty());
    }
}
