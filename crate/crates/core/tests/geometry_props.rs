use proptest::prelude::*;
use rand_chacha::ChaCha20Rng;

use spdim::alignment::tsm;
use spdim::frechet::{frechet_mean, FrechetConfig};
use spdim::random::{random_invertible, random_spd, random_symmetric, substream, Purpose};
use spdim::spd::{
    airm_distance, airm_inner, exp_map, geodesic, log_map, parallel_transport,
    parallel_transport_spd, transport_to_identity, upper, upper_inv, SpdMatrix, SymMatrix,
};

fn rng(seed: u64) -> ChaCha20Rng {
    substream(seed, 7, Purpose::Fixture)
}

fn rel(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(128)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn distance_is_affine_invariant(dim in 2usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let c1 = random_spd(dim, 1.5, &mut r);
        let c2 = random_spd(dim, 1.5, &mut r);
        let a = random_invertible(dim, &mut r);
        let d = airm_distance(&c1, &c2).unwrap();
        let da = airm_distance(&c1.congruence(&a).unwrap(), &c2.congruence(&a).unwrap()).unwrap();
        prop_assert!((d - da).abs() <= 1e-8 * d.max(1.0), "{d} vs {da}");
    }

    #[test]
    fn distance_is_symmetric(dim in 2usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let c1 = random_spd(dim, 2.0, &mut r);
        let c2 = random_spd(dim, 2.0, &mut r);
        let d12 = airm_distance(&c1, &c2).unwrap();
        let d21 = airm_distance(&c2, &c1).unwrap();
        prop_assert!((d12 - d21).abs() <= 1e-9 * d12.max(1.0));
    }

    #[test]
    fn geodesic_arc_length_is_linear(dim in 2usize..=8, seed in any::<u64>(), t in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let c1 = random_spd(dim, 1.5, &mut r);
        let c2 = random_spd(dim, 1.5, &mut r);
        let g = geodesic(&c1, &c2, t).unwrap();
        prop_assert!(!g.extrapolated);
        let full = airm_distance(&c1, &c2).unwrap();
        let part = airm_distance(&c1, &g.point).unwrap();
        prop_assert!((part - t * full).abs() <= 1e-9 * full.max(1.0), "{part} vs {}", t * full);
    }

    #[test]
    fn exp_of_log_round_trips(dim in 2usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let base = random_spd(dim, 1.5, &mut r);
        let c = random_spd(dim, 1.5, &mut r);
        let back = exp_map(&base, &log_map(&base, &c).unwrap()).unwrap();
        prop_assert!(rel(back.as_matrix(), c.as_matrix()) <= 1e-9);
    }

    #[test]
    fn log_of_exp_round_trips(dim in 2usize..=8, seed in any::<u64>(), size in 0.1f64..2.0) {
        let mut r = rng(seed);
        let base = random_spd(dim, 1.5, &mut r);
        let w = random_symmetric(dim, &mut r);
        let w = w.scale(size / w.frobenius_norm());
        let s = w.congruence(base.sqrt().as_matrix()).unwrap();
        let back = log_map(&base, &exp_map(&base, &s).unwrap()).unwrap();
        prop_assert!(rel(back.as_matrix(), s.as_matrix()) <= 1e-9);
    }

    #[test]
    fn log_norm_is_distance(dim in 2usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let base = random_spd(dim, 1.5, &mut r);
        let c = random_spd(dim, 1.5, &mut r);
        let l = log_map(&base, &c).unwrap();
        let norm = airm_inner(&base, &l, &l).unwrap().sqrt();
        let d = airm_distance(&base, &c).unwrap();
        prop_assert!((norm - d).abs() <= 1e-9 * d.max(1.0));
        let f = tsm(&c, &base).unwrap();
        prop_assert!((f.norm() - d).abs() <= 1e-9 * d.max(1.0));
    }

    #[test]
    fn parallel_transport_is_an_isometry(dim in 2usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let from = random_spd(dim, 1.5, &mut r);
        let to = random_spd(dim, 1.5, &mut r);
        let s1 = random_symmetric(dim, &mut r).congruence(from.sqrt().as_matrix()).unwrap();
        let s2 = random_symmetric(dim, &mut r).congruence(from.sqrt().as_matrix()).unwrap();
        let t1 = parallel_transport(&s1, &from, &to).unwrap();
        let t2 = parallel_transport(&s2, &from, &to).unwrap();
        let before = airm_inner(&from, &s1, &s2).unwrap();
        let after = airm_inner(&to, &t1, &t2).unwrap();
        let scale = airm_inner(&from, &s1, &s1).unwrap().sqrt() * airm_inner(&from, &s2, &s2).unwrap().sqrt();
        prop_assert!((before - after).abs() <= 1e-9 * scale.max(1.0), "{before} vs {after}");
        // Linearity.
        let sum = parallel_transport(&(&s1 + &s2), &from, &to).unwrap();
        prop_assert!(rel(sum.as_matrix(), (&t1 + &t2).as_matrix()) <= 1e-10);
    }

    #[test]
    fn transport_to_identity_matches_geodesic_transport(dim in 2usize..=8, seed in any::<u64>(), t in -1.0f64..2.0) {
        let mut r = rng(seed);
        let mean = random_spd(dim, 1.5, &mut r);
        let c = random_spd(dim, 1.5, &mut r);
        let direct = transport_to_identity(&c, &mean, t).unwrap();
        let target = geodesic(&mean, &SpdMatrix::identity(dim), t).unwrap().point;
        let via = parallel_transport_spd(&c, &mean, &target).unwrap();
        prop_assert!(rel(direct.as_matrix(), via.as_matrix()) <= 1e-9);
    }

    #[test]
    fn upper_preserves_norm_and_inverts(dim in 2usize..=8, seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = random_symmetric(dim, &mut r);
        let v = upper(&s);
        prop_assert_eq!(v.len(), dim * (dim + 1) / 2);
        prop_assert!((v.norm() - s.frobenius_norm()).abs() <= 1e-12 * s.frobenius_norm().max(1.0));
        let back: SymMatrix = upper_inv(&v);
        for a in 0..dim {
            prop_assert_eq!(back.get(a, a), s.get(a, a));
            for b in a + 1..dim {
                // Scaling by √2 and back can cost one rounding step off the diagonal.
                let x = s.get(a, b);
                prop_assert!((back.get(a, b) - x).abs() <= 2.0 * f64::EPSILON * x.abs());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn frechet_mean_is_congruence_invariant(dim in 2usize..=8, seed in any::<u64>(), n in 2usize..8) {
        let mut r = rng(seed);
        let set: Vec<SpdMatrix> = (0..n).map(|_| random_spd(dim, 1.0, &mut r)).collect();
        let a = random_invertible(dim, &mut r);
        let cfg = FrechetConfig::default();
        let mean = frechet_mean(&set, &cfg).unwrap().mean;
        let moved: Vec<SpdMatrix> = set.iter().map(|c| c.congruence(&a).unwrap()).collect();
        let moved_mean = frechet_mean(&moved, &cfg).unwrap().mean;
        let expected = mean.congruence(&a).unwrap();
        prop_assert!(rel(moved_mean.as_matrix(), expected.as_matrix()) <= 1e-6);
    }

    #[test]
    fn frechet_mean_ignores_order(dim in 2usize..=6, seed in any::<u64>(), n in 2usize..8) {
        let mut r = rng(seed);
        let set: Vec<SpdMatrix> = (0..n).map(|_| random_spd(dim, 1.0, &mut r)).collect();
        let mut rev = set.clone();
        rev.reverse();
        let cfg = FrechetConfig::default();
        let a = frechet_mean(&set, &cfg).unwrap();
        let b = frechet_mean(&rev, &cfg).unwrap();
        prop_assert!(a.final_grad_norm <= cfg.tol);
        prop_assert!(rel(a.mean.as_matrix(), b.mean.as_matrix()) <= 1e-9);
    }

    #[test]
    fn commuting_zero_log_sum_has_identity_mean(dim in 2usize..=8, seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let mut set = Vec::new();
        for _ in 0..n {
            let d: Vec<f64> = (0..dim).map(|_| rand::Rng::random_range(&mut r, -1.5..1.5)).collect();
            set.push(SpdMatrix::from_diagonal(&d.iter().map(|x: &f64| x.exp()).collect::<Vec<_>>()).unwrap());
            set.push(SpdMatrix::from_diagonal(&d.iter().map(|x: &f64| (-x).exp()).collect::<Vec<_>>()).unwrap());
        }
        let mean = frechet_mean(&set, &FrechetConfig::default()).unwrap().mean;
        prop_assert!(airm_distance(&mean, &SpdMatrix::identity(dim)).unwrap() < 1e-8);
    }
}
