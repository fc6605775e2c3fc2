use std::collections::BTreeMap;

use proptest::prelude::*;
use tc_core::corpus;
use tc_core::frontend::{check_program, CheckedDef};
use tc_core::semantics::{check_symbolic, instantiate, SemanticError, SizeBinding};

fn checked(src: &str) -> CheckedDef {
    check_program(src).expect("frontend").remove(0)
}

fn sizes(pairs: &[(&str, i64)]) -> SizeBinding {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn range_text(c: &CheckedDef, stmt: usize, iter: &str) -> (String, String) {
    let r = check_symbolic(c).unwrap();
    let it = r.stmts[stmt].range(iter).unwrap();
    (it.lo.to_string(), it.hi.to_string())
}

#[test]
fn whole_corpus_passes_symbolic_checks() {
    for (stem, _, src) in corpus::CORPUS {
        let c = checked(src);
        check_symbolic(&c).unwrap_or_else(|e| panic!("{stem}: {e}"));
    }
}

#[test]
fn mv_ranges() {
    let c = checked(corpus::source("mv").unwrap());
    assert_eq!(range_text(&c, 0, "i"), ("0".into(), "M".into()));
    assert_eq!(range_text(&c, 1, "k"), ("0".into(), "K".into()));
}

#[test]
fn conv1d_output_range() {
    let c = checked(corpus::source("conv1d").unwrap());
    assert_eq!(range_text(&c, 0, "i"), ("0".into(), "M - N + 1".into()));
    assert_eq!(range_text(&c, 0, "x"), ("0".into(), "N".into()));
    let inst = instantiate(&c, &sizes(&[("M", 10), ("N", 3)])).unwrap();
    assert_eq!(inst.tensors[inst.tensor_id("O").unwrap()].shape, vec![8]);
}

#[test]
fn maxpool_without_where_is_under_constrained() {
    let c = checked(corpus::MAXPOOL_NO_WHERE);
    match check_symbolic(&c) {
        Err(SemanticError::UnderConstrained { iters, .. }) => {
            assert!(iters.contains(&"kw".to_string()) || iters.contains(&"kh".to_string()), "{iters:?}")
        }
        other => panic!("expected UnderConstrained, got {other:?}"),
    }
}

#[test]
fn maxpool_with_where_halves_the_image() {
    let c = checked(corpus::source("maxpool2x2").unwrap());
    let inst = instantiate(&c, &sizes(&[("B", 1), ("C", 2), ("H", 8), ("W", 6)])).unwrap();
    let out = &inst.tensors[inst.tensor_id("out").unwrap()];
    assert_eq!(out.shape, vec![1, 2, 4, 3]);
}

#[test]
fn copy_range() {
    let c = checked("def copy(float(N) A) -> (B) { B(i) = A(i) }");
    let inst = instantiate(&c, &sizes(&[("N", 7)])).unwrap();
    assert_eq!((inst.stmts[0].iters[0].lo, inst.stmts[0].iters[0].hi), (0, 7));
}

#[test]
fn transpose_in_place_is_rejected() {
    let c = checked(corpus::TRANSPOSE_INPLACE);
    assert!(matches!(check_symbolic(&c), Err(SemanticError::LivenessInterference { .. })));
}

#[test]
fn pointwise_in_place_update_is_accepted() {
    let c = checked(corpus::source("fcrelu").unwrap());
    let inst = instantiate(&c, &sizes(&[("B", 2), ("I", 4), ("O", 4)])).unwrap();
    assert_eq!(inst.stmts.len(), 3);
    // The bias is declared over I, so with I < O part of `out` is read unwritten.
    assert!(matches!(
        instantiate(&c, &sizes(&[("B", 2), ("I", 3), ("O", 4)])),
        Err(SemanticError::UninitializedRead { .. })
    ));
}

#[test]
fn self_read_inside_reduction_is_rejected() {
    let c = checked("def f(float(N,K) A) -> (C) { C(i) = 0\n C(i) += C(i) * A(i,k) }");
    assert!(matches!(check_symbolic(&c), Err(SemanticError::LivenessInterference { .. })));
}

#[test]
fn where_clause_out_of_bounds() {
    let c = checked(corpus::WHERE_OUT_OF_BOUNDS);
    check_symbolic(&c).unwrap();
    match instantiate(&c, &sizes(&[("N", 5)])) {
        Err(SemanticError::OutOfBounds { tensor, hi, extent, .. }) => {
            assert_eq!((tensor.as_str(), hi, extent), ("A", 5, 5));
        }
        other => panic!("expected OutOfBounds, got {other:?}"),
    }
}

#[test]
fn strided_convolution_uses_scalar_strides() {
    let c = checked(corpus::source("sconv2d").unwrap());
    let b = sizes(&[("sh", 2), ("sw", 3), ("N", 1), ("C", 2), ("H", 9), ("W", 10), ("F", 2), ("KH", 3), ("KW", 4)]);
    let inst = instantiate(&c, &b).unwrap();
    let o = &inst.tensors[inst.tensor_id("O").unwrap()];
    // h: 2h + kh <= 8 with kh < 3 gives h < 4; w: 3w + kw <= 9 with kw < 4 gives w < 3.
    assert_eq!(o.shape, vec![1, 2, 4, 3]);
}

#[test]
fn missing_size_is_reported() {
    let c = checked(corpus::source("mv").unwrap());
    assert!(matches!(instantiate(&c, &sizes(&[("M", 3)])), Err(SemanticError::MissingBinding { .. })));
}

#[test]
fn empty_range_is_reported() {
    let c = checked(corpus::source("conv1d").unwrap());
    assert!(matches!(instantiate(&c, &sizes(&[("M", 2), ("N", 3)])), Err(SemanticError::EmptyRange { .. })));
}

#[test]
fn sgemm_output_is_inout() {
    let c = checked(corpus::source("sgemm").unwrap());
    let inst = instantiate(&c, &sizes(&[("N", 4), ("M", 5), ("K", 6)])).unwrap();
    let t = &inst.tensors[inst.tensor_id("C").unwrap()];
    assert!(t.inout);
    assert_eq!(t.shape, vec![4, 6]);
}

#[test]
fn temporary_read_before_write_is_rejected() {
    let c = checked("def f(float(N) A) -> (B) { T(i) = A(i)\n B(i) = T(i + 1) where i in 0:N - 1 }");
    assert!(instantiate(&c, &sizes(&[("N", 5)])).is_ok());
    let c = checked("def f(float(N) A) -> (B) { T(i) = A(i) where i in 0:2\n T(i) = A(i) where i in 3:N\n B(i) = T(i) }");
    assert!(matches!(instantiate(&c, &sizes(&[("N", 5)])), Err(SemanticError::UninitializedRead { .. })));
}

#[test]
fn reduction_init_is_split() {
    let c = checked(corpus::source("mv_oneline").unwrap());
    let inst = instantiate(&c, &sizes(&[("M", 3), ("K", 4)])).unwrap();
    assert_eq!(inst.stmts.len(), 2);
    assert_eq!(inst.stmts[0].iters.len(), 1);
    assert_eq!(inst.stmts[1].iters.len(), 2);
}

/// Brute-force oracle: largest range of `i` starting at 0 such that
/// `a*i + x` stays in [0, E) for every `x` in [0, X).
fn oracle_hi(a: i64, x: i64, e: i64) -> i64 {
    let mut hi = 0;
    while (0..x).all(|xx| a * hi + xx < e) {
        hi += 1;
    }
    hi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The inferred range is the maximal one on which every access is in bounds.
    #[test]
    fn inferred_range_is_maximal(a in 1i64..4, kx in 1i64..5, extra in 0i64..12) {
        let src = format!("def f(float(E) I, float(X) K) -> (O) {{ O(i) +=! I({a} * i + x) * K(x) }}");
        let c = checked(&src);
        let e = a * 0 + kx + extra;
        let inst = instantiate(&c, &BTreeMap::from([("E".to_string(), e), ("X".to_string(), kx)])).unwrap();
        let it = &inst.stmts[1].iters[0];
        prop_assert_eq!(it.hi, oracle_hi(a, kx, e));
    }

    /// Permuting independent statements' accesses does not change inference.
    #[test]
    fn operand_order_is_irrelevant(swap in any::<bool>(), n in 2i64..9, k in 1i64..6) {
        let rhs = if swap { "x(kk) * A(ii,kk)" } else { "A(ii,kk) * x(kk)" };
        let c = checked(&format!("def f(float(N,K) A, float(K) x) -> (C) {{ C(ii) +=! {rhs} }}"));
        let inst = instantiate(&c, &sizes(&[("N", n), ("K", k)])).unwrap();
        prop_assert_eq!((inst.stmts[1].iters[0].hi, inst.stmts[1].iters[1].hi), (n, k));
    }
}


#[test]
fn accumulation_without_definition_is_rejected() {
    let c = checked("def f(float(N,K) A) -> (C) { C(i) += A(i,k) }");
    assert!(matches!(instantiate(&c, &sizes(&[("N", 3), ("K", 2)])), Err(SemanticError::UninitializedRead { .. })));
}
