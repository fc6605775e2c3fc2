use proptest::prelude::*;
use tc_core::corpus;
use tc_core::frontend::{check_program, diagnostic, parse_program, pretty_print, Builtin, FrontendError};

#[test]
fn corpus_parses_and_validates() {
    assert_eq!(corpus::CORPUS.len(), 16);
    for (stem, name, src) in corpus::CORPUS {
        let defs = check_program(src).unwrap_or_else(|e| panic!("{stem}: {e}"));
        assert_eq!(defs.len(), 1);
        assert_eq!(&defs[0].def.name.name, name);
    }
}

#[test]
fn pretty_print_round_trips() {
    for (stem, _, src) in corpus::CORPUS {
        let p = parse_program(src).unwrap();
        let text = pretty_print(&p);
        let q = parse_program(&text).unwrap_or_else(|e| panic!("{stem}: {e}\n{text}"));
        assert_eq!(p, q, "{stem}");
        assert_eq!(pretty_print(&q), text, "{stem}");
    }
}

#[test]
fn builtin_table_is_closed() {
    let names: Vec<&str> = Builtin::ALL.iter().map(|b| b.name()).collect();
    assert_eq!(names, ["fmaxf", "fminf", "exp", "log", "tanh", "sigmoid", "abs"]);
    for unknown in ["sqrtf", "concat", "pow"] {
        let src = format!("def f(float(N) A) -> (B) {{ B(i) = {unknown}(A(i)) }}");
        assert!(matches!(check_program(&src), Err(FrontendError::UnknownTensor { .. })), "{unknown}");
    }
}

#[test]
fn size_symbol_may_share_a_tensor_name() {
    let defs = check_program(corpus::source("sconv2d").unwrap()).unwrap();
    assert!(defs[0].size_symbols.iter().any(|s| s == "W"));
    assert!(defs[0].tensor("W").is_some());
}

#[test]
fn diagnostics_carry_positions() {
    let err = check_program("def f(float(N) A) -> (B) {\n  B(i) = C(i)\n}").unwrap_err();
    let msg = diagnostic("f.tc", err.span(), &err.to_string());
    assert!(msg.starts_with("f.tc:2:10:"), "{msg}");
}

#[test]
fn write_to_input_is_rejected() {
    let err = check_program("def f(float(N) A) -> (B) { A(i) = 1\n B(i) = A(i) }").unwrap_err();
    assert!(matches!(err, FrontendError::WriteToInput { .. }));
}

fn arb_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("A(i)".to_string()),
        Just("A(j)".to_string()),
        (0u32..9).prop_map(|v| v.to_string()),
        Just("2.5".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), prop_oneof![Just("+"), Just("-"), Just("*"), Just("/")])
                .prop_map(|(a, b, op)| format!("({a} {op} {b})")),
            inner.clone().prop_map(|a| format!("-{a}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("fmaxf({a}, {b})")),
            (inner.clone(), inner.clone(), inner).prop_map(|(c, a, b)| format!("({c} < {a} ? {a} : {b})")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Printing and re-parsing yields the same tree.
    #[test]
    fn random_expressions_round_trip(e in arb_expr()) {
        let src = format!("def f(float(N) A) -> (B) {{ B(i) +=! {e} where j in 0:N }}");
        let p = parse_program(&src).unwrap();
        let q = parse_program(&pretty_print(&p)).unwrap();
        prop_assert_eq!(p, q);
    }
}
