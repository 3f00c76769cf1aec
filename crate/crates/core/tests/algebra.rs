use kpcm::scalar::rat;
use kpcm::{ExactOp, ExactSeries, Rational};
use proptest::prelude::*;

fn series() -> impl Strategy<Value = ExactSeries> {
    prop::collection::vec((-6i64..=6, 1i64..=4), 6)
        .prop_map(|v| ExactSeries::from_coeffs(v.into_iter().map(|(n, d)| rat(n, d)).collect()))
}

fn operator(floor: i32, top: i32) -> impl Strategy<Value = ExactOp> {
    prop::collection::vec(series(), (top - floor + 1) as usize).prop_map(move |c| ExactOp::new(floor, c, true))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn product_is_associative(a in operator(-2, 1), b in operator(-2, 1), c in operator(-2, 1)) {
        let cap = Some(-5);
        let left = a.mul_capped(&b, cap).unwrap().mul_capped(&c, cap).unwrap();
        let right = a.mul_capped(&b.mul_capped(&c, cap).unwrap(), cap).unwrap();
        prop_assert!(left.agrees_with(&right));
    }

    #[test]
    fn product_distributes_over_sum(a in operator(-2, 1), b in operator(-2, 1), c in operator(-1, 1)) {
        let cap = Some(-5);
        let left = a.add(&b).mul_capped(&c, cap).unwrap();
        let right = a.mul_capped(&c, cap).unwrap().add(&b.mul_capped(&c, cap).unwrap());
        prop_assert!(left.agrees_with(&right));
    }

    #[test]
    fn leibniz_rule(f in series()) {
        let fo = ExactOp::from_series(f.clone());
        let d = ExactOp::d_pow(1, 6);
        let bracket = d.mul(&fo).unwrap().sub(&fo.mul(&d).unwrap());
        prop_assert!(bracket.agrees_with(&ExactOp::from_series(f.derive().unwrap())));
    }

    #[test]
    fn inverse_derivative_cancels(k in 1i32..4) {
        let d = ExactOp::d_pow(k, 6);
        let dinv = ExactOp::d_pow(-k, 6);
        prop_assert!(d.mul(&dinv).unwrap().agrees_with(&ExactOp::identity(6)));
    }
}

#[test]
fn volterra_inverse_is_two_sided() {
    let c: Vec<Rational> = vec![rat(1, 3), rat(-2, 1), rat(1, 1)];
    let w = ExactOp::from_constants(-2, &c, 6);
    let wi = w.volterra_inverse(5).unwrap();
    let one = ExactOp::identity(6);
    assert!(w.mul_capped(&wi, Some(-5)).unwrap().truncate_below(-5).agrees_with(&one));
    assert!(wi.mul_capped(&w, Some(-5)).unwrap().truncate_below(-5).agrees_with(&one));
}
