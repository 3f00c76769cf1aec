use kpcm::bridge::{bridge_constants, kp_residual_exact, pole_trajectories, tau_from_cm, CMTimeFamily};
use kpcm::cm::coords_to_pair;
use kpcm::scalar::rat;
use kpcm::Rational;
use proptest::prelude::*;

fn coords(n: usize) -> impl Strategy<Value = (Vec<Rational>, Vec<Rational>)> {
    (
        prop::collection::btree_set(-12i64..=12, n),
        prop::collection::vec((-4i64..=4, 1i64..=3), n),
    )
        .prop_map(|(q, p)| {
            (
                q.into_iter().map(|k| rat(k, 2)).collect(),
                p.into_iter().map(|(a, b)| rat(a, b)).collect(),
            )
        })
}

fn residual_vanishes(q: &[Rational], p: &[Rational]) -> bool {
    let fam = CMTimeFamily::calibrated(coords_to_pair(q, p).unwrap()).unwrap();
    kp_residual_exact(&tau_from_cm(&fam).unwrap()).unwrap().is_zero()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn two_particles_solve_kp((q, p) in coords(2)) {
        prop_assert!(residual_vanishes(&q, &p));
    }

    #[test]
    fn three_particles_solve_kp((q, p) in coords(3)) {
        prop_assert!(residual_vanishes(&q, &p));
    }
}

#[test]
fn constants_are_calibrated() {
    let k = bridge_constants().unwrap();
    assert_eq!(k.a, rat(2, 1));
    assert!(k.c2 == rat(2, 1) || k.c2 == rat(-2, 1));
    assert_eq!(k.c3, rat(-3, 1));
}

#[test]
fn head_on_pair_collides_at_one_half() {
    let pair = coords_to_pair(&[rat(0, 1), rat(1, 1)], &[rat(0, 1), rat(0, 1)]).unwrap();
    let fam = CMTimeFamily::calibrated(pair).unwrap();
    let xs: Vec<f64> = (0..=40).map(|i| i as f64 / 100.0).collect();
    let paths = pole_trajectories(&fam, &xs).unwrap();
    let s = paths.collisions.first().expect("a collision").s;
    assert!((s - 0.5).abs() < 1e-9, "collision at {s}");
}
