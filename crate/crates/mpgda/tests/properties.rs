//! Property tests for the geometry and proximal layers.

use mpgda::manifold::{random_point, retract, tangent_project, Manifold};
use mpgda::proxsets::{prox_g_over_s, simplex_project, FeasibleSet, Regularizer};
use mpgda::solver::bb_stepsize;
use proptest::prelude::*;

fn small_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0f64..5.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_projection_is_a_distribution(w in small_vec(6)) {
        let p = simplex_project(&w);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn prox_over_ball_is_nonexpansive(w1 in small_vec(5), w2 in small_vec(5)) {
        let set = FeasibleSet::linf_ball(0.8, 5).unwrap();
        let reg = Regularizer::l1(0.3).unwrap();
        let p1 = prox_g_over_s(&reg, &set, &w1, 0.7).unwrap();
        let p2 = prox_g_over_s(&reg, &set, &w2, 0.7).unwrap();
        let dp: f64 = p1.iter().zip(&p2).map(|(a, b)| (a - b) * (a - b)).sum();
        let dw: f64 = w1.iter().zip(&w2).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!(dp.sqrt() <= dw.sqrt() + 1e-12);
    }

    #[test]
    fn tangent_projection_idempotent_and_self_adjoint(
        seed in 0u64..1000,
        xi in small_vec(12),
        zeta in small_vec(12),
    ) {
        let m = Manifold::stiefel(4, 3).unwrap();
        let x = random_point(&m, seed);
        let p = tangent_project(&x, &xi).unwrap();
        let pp = tangent_project(&x, p.data()).unwrap();
        let dev: f64 = p.data().iter().zip(pp.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!(dev.sqrt() <= 1e-12);

        let pz = tangent_project(&x, &zeta).unwrap();
        let lhs: f64 = p.data().iter().zip(&zeta).map(|(a, b)| a * b).sum();
        let rhs: f64 = xi.iter().zip(pz.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10);
    }

    #[test]
    fn retraction_lands_on_the_manifold(seed in 0u64..1000, xi in small_vec(10), scale in 0.01f64..10.0) {
        let m = Manifold::stiefel(5, 2).unwrap();
        let x = random_point(&m, seed);
        let v = tangent_project(&x, &xi).unwrap();
        let n = v.norm();
        prop_assume!(n > 1e-9);
        let y = retract(&x, &v.scaled(scale / n)).unwrap();
        prop_assert!(y.check().is_ok());
    }

    #[test]
    fn bb_stepsize_respects_bounds(
        dx in small_vec(4),
        dr in small_vec(4),
        scale in 1e-6f64..1e6,
    ) {
        let l = bb_stepsize(&dx, &dr, scale, (1e-8, 1e8));
        prop_assert!((1e-8..=1e8).contains(&l));
    }
}
