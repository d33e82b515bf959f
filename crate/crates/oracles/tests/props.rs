use hypergen_tensor::Tensor;
use hypergen_oracles::{construct_attention_generator, ode_track, one_step_gd_logits, QuadraticFamily, TaskCurve};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn one_hot(labels: &[usize], n_classes: usize) -> Tensor<f64> {
    let mut t = Tensor::zeros(vec![labels.len(), n_classes]);
    for (m, &c) in labels.iter().enumerate() {
        *t.at_mut(&[m, c]) = 1.0;
    }
    t
}

proptest! {
    /// Sample order never matters beyond floating-point reduction order.
    #[test]
    fn logits_update_is_permutation_invariant(
        data in prop::collection::vec((-1.0f64..1.0, 0usize..4), 4..20),
        perm_seed in 0u64..1000,
    ) {
        let n = data.len();
        let labels: Vec<usize> = data.iter().map(|(_, c)| *c).collect();
        let e = Tensor::new(
            vec![n, 3],
            data.iter().flat_map(|(v, _)| [*v, v * 0.5 - 0.2, v * v]).collect(),
        ).unwrap();
        let up = one_step_gd_logits(&e, &one_hot(&labels, 4), 0.8, 4).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        let mut state = perm_seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        for i in (1..n).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            perm.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let mut pe = Tensor::zeros(vec![n, 3]);
        let mut pl = vec![0usize; n];
        for (to, &from) in perm.iter().enumerate() {
            pl[to] = labels[from];
            for j in 0..3 {
                *pe.at_mut(&[to, j]) = e.at(&[from, j]);
            }
        }
        let pup = one_step_gd_logits(&pe, &one_hot(&pl, 4), 0.8, 4).unwrap();
        prop_assert!(up.delta_w.max_abs_diff(&pup.delta_w).unwrap() < 1e-12);
        prop_assert!(up.delta_b.max_abs_diff(&pup.delta_b).unwrap() < 1e-12);
    }

    /// Reversing the sample order leaves the generated slices unchanged.
    #[test]
    fn attention_slices_are_order_invariant(
        values in prop::collection::vec(-1.0f64..1.0, 12),
        extra in 1usize..4,
    ) {
        let mut labels = vec![0, 1, 2, 0, 1, 2];
        labels.extend(std::iter::repeat(0).take(extra));
        let n = labels.len();
        let e = Tensor::new(
            vec![n, 2],
            (0..n).flat_map(|m| {
                let v = values[m % values.len()];
                [v, 0.3 * v + 0.1 * m as f64]
            }).collect(),
        ).unwrap();
        let gen = construct_attention_generator(&e, &labels, 1.0, 40.0).unwrap();

        let rl: Vec<usize> = labels.iter().rev().copied().collect();
        let mut re = Tensor::zeros(vec![n, 2]);
        for m in 0..n {
            for j in 0..2 {
                *re.at_mut(&[m, j]) = e.at(&[n - 1 - m, j]);
            }
        }
        let rgen = construct_attention_generator(&re, &rl, 1.0, 40.0).unwrap();
        prop_assert!(gen.slices.max_abs_diff(&rgen.slices).unwrap() < 1e-12);
    }

    /// Tracking the quadratic family lands on A t1 for any well-scaled
    /// instance, not just the suite's fixed seed.
    #[test]
    fn quadratic_tracking_is_exact_for_random_instances(
        a_vals in prop::collection::vec(-1.0f64..1.0, 6),
        t0_vals in prop::collection::vec(-1.0f64..1.0, 2),
        t1_vals in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let a = DMatrix::from_row_slice(3, 2, &a_vals);
        let t0 = DVector::from_vec(t0_vals);
        let t1 = DVector::from_vec(t1_vals);
        let theta0 = &a * &t0;
        let target = &a * &t1;
        let curve = TaskCurve::linear(QuadraticFamily::isotropic(a), t0, t1);
        let tracked = ode_track(&curve, &theta0, 50).unwrap();
        prop_assert!((tracked - target).amax() < 1e-10);
    }
}
