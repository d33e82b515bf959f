//! Finite-difference checks: every differentiable primitive's analytic
//! gradient against central differences (h = 1e-5, fp64), 50 random seeds per
//! primitive, worst relative error < 1e-4.

use hypergen_tensor::gradcheck;
use hypergen_tensor::{Padding, Tape, Tensor, Tid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 50;
const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

/// Deterministic weights used to collapse a non-scalar output into a scalar
/// so every output element's gradient path gets exercised.
fn weighted_sum(tape: &mut Tape<f64>, out: Tid) -> Tid {
    let n = tape.value(out).numel();
    let shape = tape.shape(out).to_vec();
    let w: Vec<f64> = (0..n)
        .map(|i| 0.2 + ((i * 2654435761) % 97) as f64 / 97.0)
        .collect();
    let wc = tape.constant(Tensor::new(shape, w).unwrap());
    let prod = tape.mul(out, wc).unwrap();
    tape.sum_all(prod).unwrap()
}

/// How leaf data is generated per seed.
type Gen = fn(&mut ChaCha8Rng, usize) -> Vec<f64>;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Uniform but bounded away from zero, for kink-free relu checks.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Distinct values with gaps far wider than the FD step, for maxpool.
fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        vals.swap(i, j);
    }
    vals
}

fn positive(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.2..1.5)).collect()
}

/// Runs the check for one primitive. `build` receives leaves (one per entry in
/// `shapes`) and must return a scalar.
fn check_primitive(
    name: &str,
    shapes: &[&[usize]],
    gens: &[Gen],
    build: impl Fn(&mut Tape<f64>, &[Tid]) -> Tid,
) {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let datas: Vec<Vec<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| gens[i](&mut rng, s.iter().product()))
            .collect();
        let mut tape = Tape::new();
        let ids: Vec<Tid> = datas
            .iter()
            .enumerate()
            .map(|(i, d)| tape.leaf(Tensor::new(shapes[i].to_vec(), d.clone()).unwrap(), true))
            .collect();
        let loss = build(&mut tape, &ids);
        assert_eq!(tape.value(loss).numel(), 1, "{}: loss must be scalar", name);
        let grads = tape.backward(loss).unwrap();
        for (li, id) in ids.iter().enumerate() {
            let analytic = grads
                .get(*id)
                .unwrap_or_else(|| panic!("{}: missing grad for leaf {}", name, li))
                .data()
                .to_vec();
            let mut f = |x: &[f64]| {
                let mut tape = Tape::new();
                let ids2: Vec<Tid> = datas
                    .iter()
                    .enumerate()
                    .map(|(j, d)| {
                        let data = if j == li { x.to_vec() } else { d.clone() };
                        tape.leaf(Tensor::new(shapes[j].to_vec(), data).unwrap(), true)
                    })
                    .collect();
                let l = build(&mut tape, &ids2);
                tape.value(l).item().unwrap()
            };
            let err = gradcheck::check(&mut f, &datas[li], &analytic, H, FLOOR);
            worst = worst.max(err);
            assert!(
                err < REL_TOL,
                "{}: leaf {} seed {} rel err {:.3e}",
                name,
                li,
                seed,
                err
            );
        }
    }
    eprintln!("gradcheck {}: worst rel err {:.3e}", name, worst);
}

#[test]
fn grad_add_sub_mul_neg_scale() {
    check_primitive(
        "add",
        &[&[3, 4], &[3, 4]],
        &[uniform, uniform],
        |t, ids| {
            let y = t.add(ids[0], ids[1]).unwrap();
            weighted_sum(t, y)
        },
    );
    check_primitive(
        "sub",
        &[&[3, 4], &[3, 4]],
        &[uniform, uniform],
        |t, ids| {
            let y = t.sub(ids[0], ids[1]).unwrap();
            weighted_sum(t, y)
        },
    );
    check_primitive(
        "mul",
        &[&[3, 4], &[3, 4]],
        &[uniform, uniform],
        |t, ids| {
            let y = t.mul(ids[0], ids[1]).unwrap();
            weighted_sum(t, y)
        },
    );
    check_primitive("neg_scale", &[&[5]], &[uniform], |t, ids| {
        let y = t.neg(ids[0]).unwrap();
        let y = t.scale(y, 0.37).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_matmul_transpose_linear() {
    check_primitive(
        "matmul",
        &[&[3, 4], &[4, 2]],
        &[uniform, uniform],
        |t, ids| {
            let y = t.matmul(ids[0], ids[1]).unwrap();
            weighted_sum(t, y)
        },
    );
    check_primitive("transpose2d", &[&[3, 5]], &[uniform], |t, ids| {
        let y = t.transpose2d(ids[0]).unwrap();
        weighted_sum(t, y)
    });
    check_primitive(
        "linear",
        &[&[4, 3], &[3, 2], &[2]],
        &[uniform, uniform, uniform],
        |t, ids| {
            let y = t.linear(ids[0], ids[1], ids[2]).unwrap();
            weighted_sum(t, y)
        },
    );
    // Same operand on both sides: gradient must accumulate both paths.
    check_primitive("matmul_shared_operand", &[&[3, 3]], &[uniform], |t, ids| {
        let y = t.matmul(ids[0], ids[0]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_relu_softmax_cross_entropy() {
    check_primitive("relu", &[&[4, 5]], &[away_from_zero], |t, ids| {
        let y = t.relu(ids[0]).unwrap();
        weighted_sum(t, y)
    });
    check_primitive("softmax_axis1", &[&[3, 6]], &[uniform], |t, ids| {
        let y = t.softmax(ids[0], 1).unwrap();
        weighted_sum(t, y)
    });
    check_primitive("softmax_axis0", &[&[3, 4]], &[uniform], |t, ids| {
        let y = t.softmax(ids[0], 0).unwrap();
        weighted_sum(t, y)
    });
    check_primitive("cross_entropy", &[&[4, 5]], &[uniform], |t, ids| {
        t.cross_entropy(ids[0], &[0, 3, 2, 4]).unwrap()
    });
}

#[test]
fn grad_shape_ops() {
    check_primitive("reshape", &[&[2, 6]], &[uniform], |t, ids| {
        let y = t.reshape(ids[0], vec![3, 4]).unwrap();
        weighted_sum(t, y)
    });
    check_primitive(
        "concat_axis0",
        &[&[2, 3], &[1, 3]],
        &[uniform, uniform],
        |t, ids| {
            let y = t.concat(&[ids[0], ids[1]], 0).unwrap();
            weighted_sum(t, y)
        },
    );
    check_primitive(
        "concat_axis1",
        &[&[2, 3], &[2, 2]],
        &[uniform, uniform],
        |t, ids| {
            let y = t.concat(&[ids[0], ids[1]], 1).unwrap();
            weighted_sum(t, y)
        },
    );
    check_primitive("gather_rows_with_repeats", &[&[4, 3]], &[uniform], |t, ids| {
        let y = t.gather_rows(ids[0], &[1, 3, 1, 0]).unwrap();
        weighted_sum(t, y)
    });
    check_primitive("slice_axis", &[&[3, 5]], &[uniform], |t, ids| {
        let y = t.slice_axis(ids[0], 1, 1, 3).unwrap();
        weighted_sum(t, y)
    });
    check_primitive("sum_axes", &[&[2, 3, 4]], &[uniform], |t, ids| {
        let y = t.sum_axes(ids[0], &[0, 2]).unwrap();
        weighted_sum(t, y)
    });
    check_primitive("mean_axes", &[&[2, 3, 4]], &[uniform], |t, ids| {
        let y = t.mean_axes(ids[0], &[1]).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn grad_broadcast_ops() {
    check_primitive(
        "add_rowvec",
        &[&[3, 4], &[4]],
        &[uniform, uniform],
        |t, ids| {
            let y = t.add_rowvec(ids[0], ids[1]).unwrap();
            weighted_sum(t, y)
        },
    );
    check_primitive(
        "add_chan",
        &[&[2, 3, 2, 2], &[3]],
        &[uniform, uniform],
        |t, ids| {
            let y = t.add_chan(ids[0], ids[1]).unwrap();
            weighted_sum(t, y)
        },
    );
}

#[test]
fn grad_layer_norm() {
    check_primitive(
        "layer_norm",
        &[&[3, 6], &[6], &[6]],
        &[uniform, positive, uniform],
        |t, ids| {
            let y = t.layer_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
            weighted_sum(t, y)
        },
    );
}

#[test]
fn grad_batchnorm_composition() {
    // Differentiable batch statistics feeding bn_apply: gradients must flow
    // through mean, variance, and the normalized input together.
    check_primitive(
        "batch_stats_bn_apply",
        &[&[3, 2, 2, 2], &[2], &[2]],
        &[uniform, positive, uniform],
        |t, ids| {
            let (mu, var) = t.batch_stats(ids[0]).unwrap();
            let y = t.bn_apply(ids[0], mu, var, ids[1], ids[2], 1e-5).unwrap();
            weighted_sum(t, y)
        },
    );
    // Statistics computed on one batch, applied to another (the support/query
    // pattern): gradients reach the stats batch through the statistics alone.
    check_primitive(
        "bn_stats_reused_across_batches",
        &[&[3, 2, 2, 2], &[2, 2, 2, 2], &[2], &[2]],
        &[uniform, uniform, positive, uniform],
        |t, ids| {
            let (mu, var) = t.batch_stats(ids[0]).unwrap();
            let y = t.bn_apply(ids[1], mu, var, ids[2], ids[3], 1e-5).unwrap();
            weighted_sum(t, y)
        },
    );
}

#[test]
fn grad_conv_and_pool() {
    check_primitive(
        "conv2d_same_s1",
        &[&[2, 2, 4, 4], &[3, 3, 2, 3], &[3]],
        &[uniform, uniform, uniform],
        |t, ids| {
            let y = t.conv2d(ids[0], ids[1], ids[2], 1, Padding::Same).unwrap();
            weighted_sum(t, y)
        },
    );
    check_primitive(
        "conv2d_same_s2",
        &[&[1, 2, 5, 5], &[3, 3, 2, 2], &[2]],
        &[uniform, uniform, uniform],
        |t, ids| {
            let y = t.conv2d(ids[0], ids[1], ids[2], 2, Padding::Same).unwrap();
            weighted_sum(t, y)
        },
    );
    check_primitive(
        "conv2d_valid",
        &[&[1, 1, 5, 5], &[3, 3, 1, 2], &[2]],
        &[uniform, uniform, uniform],
        |t, ids| {
            let y = t.conv2d(ids[0], ids[1], ids[2], 1, Padding::Valid).unwrap();
            weighted_sum(t, y)
        },
    );
    check_primitive("maxpool2d", &[&[2, 2, 4, 4]], &[distinct], |t, ids| {
        let y = t.maxpool2d(ids[0], 2, 2).unwrap();
        weighted_sum(t, y)
    });
}

#[test]
fn backward_of_identity_is_one() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::scalar(3.5), true);
    let g = t.backward(x).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0]);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap(), true);
    let s = t.sum_all(x).unwrap();
    let g = t.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::zeros(vec![2, 2]), true);
    assert!(t.backward(x).is_err());
}

/// The spec's end-to-end case: a two-layer MLP with cross-entropy, every
/// parameter checked against central differences.
#[test]
fn grad_two_layer_mlp_cross_entropy() {
    check_primitive(
        "mlp2_cross_entropy",
        &[&[4, 6], &[6, 8], &[8], &[8, 3], &[3]],
        &[uniform, uniform, uniform, uniform, uniform],
        |t, ids| {
            let h = t.linear(ids[0], ids[1], ids[2]).unwrap();
            let h = t.relu(h).unwrap();
            let logits = t.linear(h, ids[3], ids[4]).unwrap();
            t.cross_entropy(logits, &[0, 2, 1, 2]).unwrap()
        },
    );
}

/// Gradient flows through weights that are themselves computed by upstream
/// ops (the weight-generation pattern: a network emits another network's
/// weights).
#[test]
fn grad_flows_through_generated_weights() {
    check_primitive(
        "generated_conv_kernel",
        &[&[1, 4], &[4, 9], &[1, 1, 3, 3]],
        &[uniform, uniform, uniform],
        |t, ids| {
            let gen = t.matmul(ids[0], ids[1]).unwrap();
            let w = t.reshape(gen, vec![3, 3, 1, 1]).unwrap();
            let b = t.constant(Tensor::zeros(vec![1]));
            let y = t.conv2d(ids[2], w, b, 1, Padding::Same).unwrap();
            weighted_sum(t, y)
        },
    );
}
