use proptest::prelude::*;

use plmi_core::logic::{equivalence_check, eval_expr, parse_expr, render_expr, Assignment, Expr, RenderStyle};

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        any::<bool>().prop_map(Expr::Const),
        prop::sample::select(vec!['A', 'B', 'C', 'D']).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::not),
            (inner.clone(), inner.clone()).prop_map(|(l, r)| Expr::and(l, r)),
            (inner.clone(), inner).prop_map(|(l, r)| Expr::or(l, r)),
        ]
    })
}

fn full(bits: u8) -> Assignment {
    (0..4).map(|k| ((b'A' + k) as char, bits >> k & 1 == 1)).collect()
}

proptest! {
    #[test]
    fn render_then_parse_preserves_meaning(e in arb_expr(), bits in 0u8..16) {
        let back = parse_expr(&render_expr(&e, RenderStyle::default(), false)).unwrap();
        prop_assert_eq!(eval_expr(&e, &full(bits)).unwrap(), eval_expr(&back, &full(bits)).unwrap());
    }

    #[test]
    fn double_negation_is_equivalent(e in arb_expr()) {
        prop_assert!(equivalence_check(&e, &Expr::not(Expr::not(e.clone()))).unwrap());
    }

    #[test]
    fn expression_never_equivalent_to_its_negation(e in arb_expr()) {
        prop_assert!(!equivalence_check(&e, &Expr::not(e.clone())).unwrap());
    }

    #[test]
    fn de_morgan_on_arbitrary_subterms(l in arb_expr(), r in arb_expr()) {
        let lhs = Expr::not(Expr::and(l.clone(), r.clone()));
        let rhs = Expr::or(Expr::not(l), Expr::not(r));
        prop_assert!(equivalence_check(&lhs, &rhs).unwrap());
    }
}

#[test]
fn unbound_variable_is_an_error() {
    let e = parse_expr("A and B").unwrap();
    let a = Assignment::new().with('A', true);
    assert!(eval_expr(&e, &a).is_err());
}

#[test]
fn malformed_text_is_rejected() {
    for bad in ["", "A and", "(A or B", "A B", "and A"] {
        assert!(parse_expr(bad).is_err(), "{bad:?} parsed");
    }
}
