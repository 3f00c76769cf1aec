use kpcm::expr::parse_expr;
use kpcm::{parse_operator, print_operator, Error, ExactOp, LoweringConfig};
use proptest::prelude::*;

fn expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("t".to_string()),
        Just("D".to_string()),
        (-3i32..=2).prop_map(|k| format!("D^{k}")),
        (0i32..=3).prop_map(|k| format!("t^{k}")),
        (0u32..9).prop_map(|n| n.to_string()),
        (1u32..9, 1u32..5).prop_map(|(a, b)| format!("{a}/{b}")),
    ];
    leaf.prop_recursive(3, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} + {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} - {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
            (inner, 0u32..3).prop_map(|(a, k)| format!("({a})^{k}")),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn print_then_parse_is_stable(text in expr()) {
        let cfg = LoweringConfig::default();
        let op: ExactOp = parse_operator(&text, cfg).unwrap();
        let printed = print_operator(&op);
        let back: ExactOp = parse_operator(&printed, cfg).unwrap();
        prop_assert!(back.agrees_with(&op));
        prop_assert_eq!(print_operator(&back), printed);
    }

    #[test]
    fn tree_display_reparses(text in expr()) {
        let tree = parse_expr(&text).unwrap();
        prop_assert_eq!(parse_expr(&tree.to_string()).unwrap(), tree);
    }
}

#[test]
fn normal_form_of_d_times_t() {
    let op: ExactOp = parse_operator("D*t", LoweringConfig::default()).unwrap();
    assert_eq!(print_operator(&op), "t*D + 1");
}

#[test]
fn errors_carry_positions() {
    for (text, line, col) in [("D^1.5", 1, 3), ("t^-2", 1, 4), ("D +\n* t", 2, 1)] {
        match parse_expr(text) {
            Err(Error::Parse { line: l, column: c, .. }) => assert_eq!((l, c), (line, col), "{text:?}"),
            other => panic!("{text:?}: expected a parse error, got {other:?}"),
        }
    }
}
