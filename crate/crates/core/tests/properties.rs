use mivi_core::discriminator::{d_loss_grad, Discriminator};
use mivi_core::evaluation::{ci_overlap, gaussian_kl, summarize};
use mivi_core::models::{Toy2d, Toy2dKind};
use mivi_core::numerics::{cholesky, log_sum_exp, Matrix, RngStream, Vector};
use mivi_core::transitions::{replay, run_chain, SgldKernel, StepSchedule};
use mivi_core::variational::{q_logpdf, VariationalParams};
use proptest::prelude::*;

fn spd(n: usize, entries: &[f64]) -> Matrix {
    let m = Matrix::from_fn(n, n, |i, j| entries[(i * n + j) % entries.len()]);
    m.transpose() * &m + Matrix::identity(n, n)
}

fn rows(seed: u64, count: usize, dim: usize) -> Vec<Vector> {
    let mut rng = RngStream::new(seed, 7);
    (0..count).map(|_| Vector::from_vec(rng.normals(dim))).collect()
}

fn permuted<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut rng = RngStream::new(seed, 11);
    let mut out = items.to_vec();
    for i in (1..out.len()).rev() {
        out.swap(i, rng.below(i + 1));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cholesky_reconstructs_spd_matrices(n in 1usize..30, entries in prop::collection::vec(-3.0f64..3.0, 1..64)) {
        let a = spd(n, &entries);
        let l = cholesky(&a).unwrap();
        let err = (&l * l.transpose() - &a).amax();
        prop_assert!(err <= 1e-9 * a.norm(), "error {err}");
        for i in 0..n {
            for j in i + 1..n {
                prop_assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn summary_ignores_row_order(seed in any::<u64>(), count in 100usize..300, dim in 1usize..5) {
        let names: Vec<String> = (0..dim).map(|i| format!("v{i}")).collect();
        let samples = rows(seed, count, dim);
        let a = summarize(&names, &samples).unwrap();
        let b = summarize(&names, &permuted(&samples, seed)).unwrap();
        prop_assert_eq!(&a.q025, &b.q025);
        prop_assert_eq!(&a.q975, &b.q975);
        for i in 0..dim {
            prop_assert!((a.mean[i] - b.mean[i]).abs() <= 1e-12);
            prop_assert!((a.sd[i] - b.sd[i]).abs() <= 1e-12);
            for j in 0..dim {
                prop_assert!((a.corr[(i, j)] - b.corr[(i, j)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn summary_quantiles_are_ordered_and_correlations_bounded(seed in any::<u64>(), dim in 1usize..5) {
        let names: Vec<String> = (0..dim).map(|i| format!("v{i}")).collect();
        let s = summarize(&names, &rows(seed, 150, dim)).unwrap();
        for i in 0..dim {
            prop_assert!(s.q025[i] <= s.q975[i]);
            prop_assert!(s.sd[i] > 0.0);
            for j in 0..dim {
                prop_assert!(s.corr[(i, j)].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn discriminator_loss_ignores_sample_order(seed in any::<u64>(), n_pos in 1usize..40, n_neg in 1usize..40) {
        let mut rng = RngStream::new(seed, 3);
        let mut d = Discriminator::new(2, 8, &mut rng).unwrap();
        // Perturb every weight so the output layer is not identically zero.
        for p in d.net.params.iter_mut() {
            *p += 0.3 * rng.normal();
        }
        let pos = rows(seed, n_pos, 2);
        let neg = rows(seed ^ 1, n_neg, 2);
        let (obj_a, grad_a) = d_loss_grad(&d, &pos, &neg).unwrap();
        let (obj_b, grad_b) = d_loss_grad(&d, &permuted(&pos, seed), &permuted(&neg, seed ^ 2)).unwrap();
        prop_assert!((obj_a - obj_b).abs() <= 1e-12);
        for (a, b) in grad_a.iter().zip(&grad_b) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn discriminator_loss_uses_means(seed in any::<u64>(), copies in 2usize..5) {
        let mut rng = RngStream::new(seed, 5);
        let mut d = Discriminator::new(2, 8, &mut rng).unwrap();
        for p in d.net.params.iter_mut() {
            *p += 0.3 * rng.normal();
        }
        let pos = rows(seed, 10, 2);
        let neg = rows(seed ^ 1, 7, 2);
        let repeat = |v: &[Vector]| v.iter().cycle().take(v.len() * copies).cloned().collect::<Vec<_>>();
        let (obj_a, grad_a) = d_loss_grad(&d, &pos, &neg).unwrap();
        let (obj_b, grad_b) = d_loss_grad(&d, &repeat(&pos), &repeat(&neg)).unwrap();
        prop_assert!((obj_a - obj_b).abs() <= 1e-12);
        for (a, b) in grad_a.iter().zip(&grad_b) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn equal_seeds_give_equal_streams(seed in any::<u64>(), stream in any::<u64>()) {
        let mut a = RngStream::new(seed, stream);
        let mut b = RngStream::new(seed, stream);
        for _ in 0..64 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
            prop_assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn chosen_indices_are_distinct_and_in_range(seed in any::<u64>(), n in 1usize..200, frac in 0.0f64..1.0) {
        let k = ((n as f64 * frac) as usize).max(1);
        let mut idx = RngStream::new(seed, 0).choose_indices(n, k);
        prop_assert_eq!(idx.len(), k);
        prop_assert!(idx.iter().all(|&i| i < n));
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), k);
    }

    #[test]
    fn replaying_recorded_noise_is_bitwise_identical(
        seed in any::<u64>(),
        log_step in -5.0f64..-1.0,
        steps in 1usize..6,
        target in 0usize..3,
    ) {
        let kind = [Toy2dKind::CorrelatedGaussian, Toy2dKind::Banana, Toy2dKind::Mixture][target];
        let model = Toy2d::new(kind);
        let kernel = SgldKernel::new(2, steps, StepSchedule::PerStep, true);
        let params = kernel.init_params(log_step);
        let mut rng = RngStream::new(seed, 1);
        let z0 = Vector::from_vec(rng.normals(2));
        let traj = run_chain(&kernel, &model, &params, z0.clone(), steps, &mut rng, None).unwrap();
        let again = replay(&kernel, &model, &params, z0, traj.noise.clone(), None).unwrap();
        for (a, b) in traj.states.iter().zip(&again.states) {
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn proposal_density_integrates_to_one(mean in -5.0f64..5.0, log_var in -4.0f64..4.0) {
        let phi = VariationalParams::new(Vector::from_element(1, mean), Vector::from_element(1, log_var)).unwrap();
        let sd = (0.5 * log_var).exp();
        let cells = 4000;
        let (lo, hi) = (mean - 10.0 * sd, mean + 10.0 * sd);
        let h = (hi - lo) / cells as f64;
        // Simpson's rule.
        let mut total = 0.0;
        for k in 0..=cells {
            let w = if k == 0 || k == cells { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            let z = Vector::from_element(1, lo + k as f64 * h);
            total += w * q_logpdf(&phi, &z).unwrap().exp();
        }
        total *= h / 3.0;
        prop_assert!((total - 1.0).abs() <= 1e-8, "mass {total}");
    }

    #[test]
    fn proposal_flat_round_trip(values in prop::collection::vec(-10.0f64..10.0, 2..12)) {
        let d = values.len() / 2;
        let flat = &values[..2 * d];
        let phi = VariationalParams::from_flat(flat).unwrap();
        prop_assert_eq!(phi.to_flat(), flat.to_vec());
        prop_assert!(phi.variance().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn gaussian_kl_is_nonnegative(m1 in -5.0f64..5.0, v1 in 0.01f64..10.0, m2 in -5.0f64..5.0, v2 in 0.01f64..10.0) {
        prop_assert!(gaussian_kl(m1, v1, m2, v2) >= -1e-12);
        prop_assert!(gaussian_kl(m1, v1, m1, v1).abs() <= 1e-12);
    }

    #[test]
    fn interval_overlap_is_symmetric_and_bounded(a in -5.0f64..5.0, la in 0.01f64..5.0, b in -5.0f64..5.0, lb in 0.01f64..5.0) {
        let x = (a, a + la);
        let y = (b, b + lb);
        let o = ci_overlap(x, y);
        prop_assert!((0.0..=1.0).contains(&o));
        prop_assert_eq!(o, ci_overlap(y, x));
        prop_assert_eq!(ci_overlap(x, x), 1.0);
    }

    #[test]
    fn log_sum_exp_bounds(values in prop::collection::vec(-700.0f64..700.0, 1..50)) {
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = log_sum_exp(&values);
        prop_assert!(lse >= max - 1e-12);
        prop_assert!(lse <= max + (values.len() as f64).ln() + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_log_epochs_strictly_increase(seed in any::<u64>(), epochs in 1usize..25, warmup in 0usize..30) {
        use mivi_core::trainer::{train, TrainerConfig};
        let mut model = Toy2d::new(Toy2dKind::Banana);
        let kernel = SgldKernel::new(2, 2, StepSchedule::Shared, false);
        let config = TrainerConfig {
            particles: 8,
            steps: 2,
            warmup,
            epochs,
            checkpoint_every: 4,
            seed,
            ..TrainerConfig::default()
        };
        let out = train(&mut model, &kernel, VariationalParams::standard(2), kernel.init_params(-3.0), &config).unwrap();
        prop_assert_eq!(out.log.rows.len(), epochs);
        prop_assert!(out.log.rows.windows(2).all(|w| w[0].epoch < w[1].epoch));
        prop_assert!(out.log.checkpoints.windows(2).all(|w| w[0].epoch < w[1].epoch));
        prop_assert_eq!(out.log.checkpoints.len(), epochs / 4);
        for row in &out.log.rows {
            prop_assert_eq!(row.disc_objective.is_nan(), row.epoch < warmup);
        }
    }
}
