use faer::{c64, Mat};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resdmd::kernel::default_scale;
use resdmd::oracle::kernel_gram_residual;
use resdmd::selftest::random_complex_vector;
use resdmd::snapshot::delay_embed;
use resdmd::spectral::{fit_kmd, Decomposition, Ordering};
use resdmd::{exact_dmd, kedmd, synthetic, KernelSpec, SnapshotPairs, TrajectorySet};

fn noisy_pairs(seed: u64, d: usize, m: usize) -> SnapshotPairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthetic::nonlinear_pairs(d, m, 0.1, &mut rng)
}

fn point() -> impl Strategy<Value = c64> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(re, im)| c64::new(re, im))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_tau_is_lipschitz_and_conjugate_symmetric(seed in 0u64..1000, z1 in point(), z2 in point()) {
        let pairs = noisy_pairs(seed, 5, 40);
        let res = exact_dmd(&pairs, Some(4)).unwrap();
        let t1 = res.pseudo_point(z1).unwrap().0;
        let t2 = res.pseudo_point(z2).unwrap().0;
        prop_assert!((t1 - t2).abs() <= (z1 - z2).norm() + 1e-10);
        prop_assert!((t1 - res.pseudo_point(z1.conj()).unwrap().0).abs() <= 1e-10);
    }

    #[test]
    fn kernel_tau_is_lipschitz_and_conjugate_symmetric(seed in 0u64..1000, z1 in point(), z2 in point()) {
        let pairs = noisy_pairs(seed, 3, 25);
        let spec = KernelSpec::gaussian(default_scale(pairs.x()).unwrap()).unwrap();
        let res = kedmd(&pairs, &spec, Some(8)).unwrap();
        let t1 = res.pseudo_point(z1).unwrap().0;
        let t2 = res.pseudo_point(z2).unwrap().0;
        // The kernel form carries a square-root floor near zero.
        prop_assert!((t1 - t2).abs() <= (z1 - z2).norm() + 1e-7);
        prop_assert!((t1 - res.pseudo_point(z1.conj()).unwrap().0).abs() <= 1e-7);
    }

    #[test]
    fn residual_forms_agree(seed in 0u64..1000, lam in point()) {
        let pairs = noisy_pairs(seed, 6, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let res = exact_dmd(&pairs, Some(5)).unwrap();
        let v = random_complex_vector(5, &mut rng);
        prop_assert!((res.residual(lam, &v).unwrap() - res.residual_gram(lam, &v).unwrap()).abs() <= 1e-8);

        let spec = KernelSpec::gaussian(default_scale(pairs.x()).unwrap()).unwrap();
        let kres = kedmd(&pairs, &spec, Some(8)).unwrap();
        let w = random_complex_vector(kres.rank(), &mut rng);
        let gram = kernel_gram_residual(&kres, &pairs, lam, &w).unwrap();
        prop_assert!((kres.residual(lam, &w).unwrap() - gram).abs() <= 1e-7);
    }

    #[test]
    fn eigenpair_residual_is_pseudospectral_upper_bound(seed in 0u64..1000) {
        let pairs = noisy_pairs(seed, 5, 40);
        let res = exact_dmd(&pairs, Some(4)).unwrap();
        for (j, &lam) in res.eigenvalues.iter().enumerate() {
            prop_assert!(res.pseudo_point(lam).unwrap().0 <= res.residuals[j] + 1e-10);
        }
    }

    #[test]
    fn normal_operator_tau_is_eigenvalue_distance(seed in 0u64..1000, z in point()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = synthetic::random_orthogonal(5, &mut rng);
        let pairs = synthetic::linear_pairs(a.as_ref(), 30, &mut rng);
        let res = exact_dmd(&pairs, None).unwrap();
        let dist = res.eigenvalues.iter().map(|l| (z - l).norm()).fold(f64::INFINITY, f64::min);
        prop_assert!((res.pseudo_point(z).unwrap().0 - dist).abs() <= 1e-8);
    }

    #[test]
    fn delay_embedding_shifts_and_counts(
        lengths in prop::collection::vec(4usize..20, 1..5),
        q in 1usize..4,
    ) {
        let realizations: Vec<Mat<f64>> = lengths
            .iter()
            .enumerate()
            .map(|(r, &t)| Mat::from_fn(t, 1, |k, _| (r * 100 + k) as f64))
            .collect();
        let traj = TrajectorySet::new(realizations).unwrap();
        let pairs = delay_embed(&traj, q).unwrap();
        let expected: usize = lengths.iter().map(|t| t - q).sum();
        prop_assert_eq!(pairs.len(), expected);
        prop_assert_eq!(pairs.dim(), q);
        for j in 0..pairs.len() {
            for i in 0..q {
                prop_assert_eq!(pairs.y()[(i, j)], pairs.x()[(i, j)] + 1.0);
            }
        }
    }

    #[test]
    fn residual_ordering_keeps_smallest_residuals(seed in 0u64..1000, k in 1usize..6) {
        let pairs = noisy_pairs(seed, 6, 40);
        let res = exact_dmd(&pairs, Some(6)).unwrap();
        let model = fit_kmd(Decomposition::Exact(&res), &pairs, k, Ordering::Residual).unwrap();
        let mut sorted = res.residuals.clone();
        sorted.sort_by(f64::total_cmp);
        let kept: f64 = model.residuals.iter().sum();
        let best: f64 = sorted[..k].iter().sum();
        prop_assert!((kept - best).abs() <= 1e-12);
    }
}
