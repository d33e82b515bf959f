//! Forward-pass checks against independent loop oracles plus the small
//! hand-checkable cases every primitive must satisfy.

use hypergen_tensor::{read_tensor, write_tensor, BnMode, Padding, RunningStats, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

// ---- matmul ----

#[test]
fn matmul_identity_fixes_any_matrix() {
    let mut t = Tape::<f64>::new();
    let x_data = randvec(&mut rng(1), 9);
    let eye = t.constant(
        Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
    );
    let x = t.constant(Tensor::new(vec![3, 3], x_data.clone()).unwrap());
    let y = t.matmul(eye, x).unwrap();
    assert_eq!(t.value(y).data(), &x_data[..]);
}

#[test]
fn matmul_zero_times_anything_is_zero() {
    let mut t = Tape::<f64>::new();
    let z = t.constant(Tensor::zeros(vec![2, 3]));
    let x = t.constant(Tensor::new(vec![3, 4], randvec(&mut rng(2), 12)).unwrap());
    let y = t.matmul(z, x).unwrap();
    assert_eq!(t.shape(y), &[2, 4]);
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let (m, k, n) = (4, 5, 2);
    let mut r = rng(3);
    let a = randvec(&mut r, m * k);
    let b = randvec(&mut r, k * n);
    // Independent oracle: accumulate in a different loop order.
    let mut want = vec![0.0; m * n];
    for j in 0..n {
        for p in 0..k {
            for i in 0..m {
                want[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    let mut t = Tape::<f64>::new();
    let ta = t.constant(Tensor::new(vec![m, k], a).unwrap());
    let tb = t.constant(Tensor::new(vec![k, n], b).unwrap());
    let y = t.matmul(ta, tb).unwrap();
    for (got, want) in t.value(y).data().iter().zip(&want) {
        assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
    }
}

#[test]
fn matmul_rejects_inner_dim_mismatch() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::zeros(vec![2, 3]));
    let b = t.constant(Tensor::zeros(vec![4, 2]));
    assert!(t.matmul(a, b).is_err());
}

// ---- conv2d ----

#[test]
fn conv2d_unit_kernel_is_identity() {
    let mut t = Tape::<f64>::new();
    let x_data = randvec(&mut rng(4), 2 * 3 * 4 * 4);
    let x = t.constant(Tensor::new(vec![2, 3, 4, 4], x_data.clone()).unwrap());
    // 1x1 kernel mapping each input channel to itself.
    let mut w = vec![0.0; 3 * 3];
    for c in 0..3 {
        w[c * 3 + c] = 1.0;
    }
    let w = t.constant(Tensor::new(vec![1, 1, 3, 3], w).unwrap());
    let b = t.constant(Tensor::zeros(vec![3]));
    let y = t.conv2d(x, w, b, 1, Padding::Same).unwrap();
    assert_eq!(t.value(y).data(), &x_data[..]);
}

#[test]
fn conv2d_zero_kernel_broadcasts_bias() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::new(vec![1, 2, 3, 3], randvec(&mut rng(5), 18)).unwrap());
    let w = t.constant(Tensor::zeros(vec![3, 3, 2, 4]));
    let b = t.constant(Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.0]).unwrap());
    let y = t.conv2d(x, w, b, 1, Padding::Same).unwrap();
    let out = t.value(y);
    assert_eq!(out.shape(), &[1, 4, 3, 3]);
    for co in 0..4 {
        for p in 0..9 {
            let want = [0.5, -1.0, 2.0, 0.0][co];
            assert_eq!(out.data()[co * 9 + p], want);
        }
    }
}

/// Independent convolution oracle: materialize the zero-padded input, then
/// correlate directly.
fn conv_oracle(
    x: &[f64],
    (b, cin, h, w): (usize, usize, usize, usize),
    wk: &[f64],
    k: usize,
    cout: usize,
    bias: &[f64],
    stride: usize,
    same: bool,
) -> (Vec<f64>, usize, usize) {
    let (oh, ow, py, px) = if same {
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let py = (((oh - 1) * stride + k).saturating_sub(h)) / 2;
        let px = (((ow - 1) * stride + k).saturating_sub(w)) / 2;
        (oh, ow, py, px)
    } else {
        ((h - k) / stride + 1, (w - k) / stride + 1, 0, 0)
    };
    let (ph, pw) = (h + 2 * py + 1, w + 2 * px + 1); // +1 slack for asymmetric SAME
    let mut padded = vec![0.0; b * cin * ph * pw];
    for bi in 0..b {
        for c in 0..cin {
            for y in 0..h {
                for xx in 0..w {
                    padded[((bi * cin + c) * ph + y + py) * pw + xx + px] =
                        x[((bi * cin + c) * h + y) * w + xx];
                }
            }
        }
    }
    let mut out = vec![0.0; b * cout * oh * ow];
    for bi in 0..b {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ky in 0..k {
                        for kx in 0..k {
                            for ci in 0..cin {
                                let pv = padded
                                    [((bi * cin + ci) * ph + oy * stride + ky) * pw + ox * stride + kx];
                                acc += pv * wk[((ky * k + kx) * cin + ci) * cout + co];
                            }
                        }
                    }
                    out[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn conv2d_same_matches_padded_oracle() {
    let mut r = rng(6);
    let x = randvec(&mut r, 25);
    let w = randvec(&mut r, 9);
    let bias = vec![0.3];
    let (want, oh, ow) = conv_oracle(&x, (1, 1, 5, 5), &w, 3, 1, &bias, 1, true);
    assert_eq!((oh, ow), (5, 5));
    let mut t = Tape::<f64>::new();
    let tx = t.constant(Tensor::new(vec![1, 1, 5, 5], x).unwrap());
    let tw = t.constant(Tensor::new(vec![3, 3, 1, 1], w).unwrap());
    let tb = t.constant(Tensor::new(vec![1], bias).unwrap());
    let y = t.conv2d(tx, tw, tb, 1, Padding::Same).unwrap();
    for (got, want) in t.value(y).data().iter().zip(&want) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn conv2d_multichannel_strided_matches_oracle() {
    for (stride, same) in [(1, true), (2, true), (1, false), (2, false)] {
        let mut r = rng(7 + stride as u64 + same as u64);
        let (b, cin, h, w, k, cout) = (2, 3, 6, 7, 3, 4);
        let x = randvec(&mut r, b * cin * h * w);
        let wk = randvec(&mut r, k * k * cin * cout);
        let bias = randvec(&mut r, cout);
        let (want, oh, ow) = conv_oracle(&x, (b, cin, h, w), &wk, k, cout, &bias, stride, same);
        let mut t = Tape::<f64>::new();
        let tx = t.constant(Tensor::new(vec![b, cin, h, w], x).unwrap());
        let tw = t.constant(Tensor::new(vec![k, k, cin, cout], wk).unwrap());
        let tb = t.constant(Tensor::new(vec![cout], bias).unwrap());
        let pad = if same { Padding::Same } else { Padding::Valid };
        let y = t.conv2d(tx, tw, tb, stride, pad).unwrap();
        assert_eq!(t.shape(y), &[b, cout, oh, ow]);
        for (got, want) in t.value(y).data().iter().zip(&want) {
            assert!((got - want).abs() < 1e-12, "stride {} same {}", stride, same);
        }
    }
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(vec![1, 3, 5, 5]));
    let w = t.constant(Tensor::zeros(vec![3, 3, 2, 4]));
    let b = t.constant(Tensor::zeros(vec![4]));
    assert!(t.conv2d(x, w, b, 1, Padding::Same).is_err());
}

// ---- maxpool2d ----

#[test]
fn maxpool_constant_input_constant_output() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::full(vec![1, 2, 4, 4], 0.7));
    let y = t.maxpool2d(x, 2, 2).unwrap();
    assert_eq!(t.shape(y), &[1, 2, 2, 2]);
    assert!(t.value(y).data().iter().all(|&v| v == 0.7));
}

#[test]
fn maxpool_2x2_takes_the_max() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = t.maxpool2d(x, 2, 2).unwrap();
    assert_eq!(t.value(y).data(), &[4.0]);
}

#[test]
fn maxpool_matches_loop_oracle() {
    let mut r = rng(8);
    let x = randvec(&mut r, 64);
    let (window, stride) = (2, 2);
    let o = 4;
    let mut want = vec![0.0; o * o];
    for oy in 0..o {
        for ox in 0..o {
            let mut best = f64::NEG_INFINITY;
            for dy in 0..window {
                for dx in 0..window {
                    best = best.max(x[(oy * stride + dy) * 8 + ox * stride + dx]);
                }
            }
            want[oy * o + ox] = best;
        }
    }
    let mut t = Tape::<f64>::new();
    let tx = t.constant(Tensor::new(vec![1, 1, 8, 8], x).unwrap());
    let y = t.maxpool2d(tx, window, stride).unwrap();
    assert_eq!(t.value(y).data(), &want[..]);
}

#[test]
fn maxpool_rejects_oversized_window() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(vec![1, 1, 2, 2]));
    assert!(t.maxpool2d(x, 3, 1).is_err());
}

// ---- batchnorm ----

#[test]
fn batchnorm_fixes_standardized_input() {
    // Input constructed with exact zero mean and unit (biased) variance per
    // channel; gamma=1, beta=0 must reproduce it up to eps.
    let vals = [-1.5, -0.5, 0.5, 1.5];
    let scale = 1.0 / (vals.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
    let data: Vec<f64> = vals.iter().map(|v| v * scale).collect();
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::new(vec![4, 1, 1, 1], data.clone()).unwrap());
    let gamma = t.constant(Tensor::from_vec(vec![1.0]));
    let beta = t.constant(Tensor::from_vec(vec![0.0]));
    let mut stats = RunningStats::new(1);
    let y = t
        .batchnorm(x, gamma, beta, BnMode::Train, &mut stats, 0.1, 1e-5)
        .unwrap();
    for (got, want) in t.value(y).data().iter().zip(&data) {
        assert!((got - want).abs() < 1e-5, "{} vs {}", got, want);
    }
}

#[test]
fn batchnorm_constant_input_returns_beta() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::full(vec![3, 2, 2, 2], 5.0));
    let gamma = t.constant(Tensor::from_vec(vec![1.0, 2.0]));
    let beta = t.constant(Tensor::from_vec(vec![0.25, -0.75]));
    let mut stats = RunningStats::new(2);
    let y = t
        .batchnorm(x, gamma, beta, BnMode::Train, &mut stats, 0.1, 1e-5)
        .unwrap();
    let out = t.value(y);
    for c in 0..2 {
        let want = [0.25, -0.75][c];
        for b in 0..3 {
            for p in 0..4 {
                let got = out.data()[(b * 2 + c) * 4 + p];
                assert!((got - want).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn batchnorm_batch_of_one_is_an_error_in_train_mode() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::zeros(vec![1, 2, 3, 3]));
    let gamma = t.constant(Tensor::from_vec(vec![1.0, 1.0]));
    let beta = t.constant(Tensor::from_vec(vec![0.0, 0.0]));
    let mut stats = RunningStats::new(2);
    assert!(t
        .batchnorm(x, gamma, beta, BnMode::Train, &mut stats, 0.1, 1e-5)
        .is_err());
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::full(vec![1, 1, 1, 2], 3.0));
    let gamma = t.constant(Tensor::from_vec(vec![2.0]));
    let beta = t.constant(Tensor::from_vec(vec![1.0]));
    let mut stats = RunningStats::new(1);
    stats.mean = vec![1.0];
    stats.var = vec![4.0];
    let y = t
        .batchnorm(x, gamma, beta, BnMode::Eval, &mut stats, 0.1, 0.0)
        .unwrap();
    // (3 - 1)/2 * 2 + 1 = 3
    for &v in t.value(y).data() {
        assert!((v - 3.0).abs() < 1e-12);
    }
}

// ---- softmax / cross-entropy ----

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_vec(vec![0.0, 0.0, 0.0]));
    let y = t.softmax(x, 0).unwrap();
    for &v in t.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn cross_entropy_of_uniform_logits_is_ln_n() {
    for n in [2usize, 5, 7] {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new(vec![1, n], vec![0.42; n]).unwrap());
        let l = t.cross_entropy(x, &[n - 1]).unwrap();
        let got = t.value(l).item().unwrap();
        assert!((got - (n as f64).ln()).abs() < 1e-12, "n={}", n);
    }
}

#[test]
fn softmax_is_shift_invariant() {
    let mut r = rng(9);
    let x = randvec(&mut r, 6);
    let shifted: Vec<f64> = x.iter().map(|v| v + 123.25).collect();
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::new(vec![2, 3], x).unwrap());
    let b = t.constant(Tensor::new(vec![2, 3], shifted).unwrap());
    let ya = t.softmax(a, 1).unwrap();
    let yb = t.softmax(b, 1).unwrap();
    for (va, vb) in t.value(ya).data().iter().zip(t.value(yb).data()) {
        assert!((va - vb).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_rejects_non_finite_logits() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::new(vec![1, 3], vec![0.0, f64::NAN, 1.0]).unwrap());
    assert!(t.cross_entropy(x, &[0]).is_err());
}

#[test]
fn softmax_huge_inputs_stay_finite() {
    let mut t = Tape::<f64>::new();
    let x = t.constant(Tensor::from_vec(vec![1e300, 0.0, -1e300]));
    let y = t.softmax(x, 0).unwrap();
    assert!(t.value(y).is_finite());
    assert!((t.value(y).data()[0] - 1.0).abs() < 1e-12);
}

// ---- reductions, gather, slice, concat ----

#[test]
fn reductions_match_direct_sums() {
    let mut r = rng(10);
    let x = randvec(&mut r, 2 * 3 * 4);
    let mut t = Tape::<f64>::new();
    let tx = t.constant(Tensor::new(vec![2, 3, 4], x.clone()).unwrap());
    let s = t.sum_axes(tx, &[0, 2]).unwrap();
    assert_eq!(t.shape(s), &[3]);
    for j in 0..3 {
        let mut want = 0.0;
        for i in 0..2 {
            for k in 0..4 {
                want += x[(i * 3 + j) * 4 + k];
            }
        }
        assert!((t.value(s).data()[j] - want).abs() < 1e-12);
    }
    let m = t.mean_all(tx).unwrap();
    let want: f64 = x.iter().sum::<f64>() / 24.0;
    assert!((t.value(m).item().unwrap() - want).abs() < 1e-12);
}

#[test]
fn gather_slice_concat_round_trip() {
    let mut r = rng(11);
    let x = randvec(&mut r, 4 * 3);
    let mut t = Tape::<f64>::new();
    let tx = t.constant(Tensor::new(vec![4, 3], x.clone()).unwrap());
    let g = t.gather_rows(tx, &[2, 0, 2]).unwrap();
    assert_eq!(t.value(g).data()[0..3], x[6..9]);
    assert_eq!(t.value(g).data()[3..6], x[0..3]);
    assert_eq!(t.value(g).data()[6..9], x[6..9]);

    let top = t.slice_axis(tx, 0, 0, 2).unwrap();
    let bottom = t.slice_axis(tx, 0, 2, 2).unwrap();
    let whole = t.concat(&[top, bottom], 0).unwrap();
    assert_eq!(t.value(whole).data(), &x[..]);

    let left = t.slice_axis(tx, 1, 0, 1).unwrap();
    let right = t.slice_axis(tx, 1, 1, 2).unwrap();
    let whole2 = t.concat(&[left, right], 1).unwrap();
    assert_eq!(t.value(whole2).data(), &x[..]);
}

// ---- layer norm ----

#[test]
fn layer_norm_rows_have_zero_mean_unit_variance() {
    let mut r = rng(12);
    let x = randvec(&mut r, 3 * 8);
    let mut t = Tape::<f64>::new();
    let tx = t.constant(Tensor::new(vec![3, 8], x).unwrap());
    let gamma = t.constant(Tensor::full(vec![8], 1.0));
    let beta = t.constant(Tensor::zeros(vec![8]));
    let y = t.layer_norm(tx, gamma, beta, 1e-12).unwrap();
    let out = t.value(y).data();
    for row in 0..3 {
        let r = &out[row * 8..(row + 1) * 8];
        let mu: f64 = r.iter().sum::<f64>() / 8.0;
        let var: f64 = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 8.0;
        assert!(mu.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }
}

// ---- determinism / replay ----

#[test]
fn forward_replay_is_bit_identical() {
    let run = || {
        let mut r = rng(13);
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new(vec![2, 3, 6, 6], randvec(&mut r, 216)).unwrap(), true);
        let w = t.leaf(Tensor::new(vec![3, 3, 3, 4], randvec(&mut r, 108)).unwrap(), true);
        let b = t.leaf(Tensor::new(vec![4], randvec(&mut r, 4)).unwrap(), true);
        let c = t.conv2d(x, w, b, 1, Padding::Same).unwrap();
        let a = t.relu(c).unwrap();
        let p = t.maxpool2d(a, 2, 2).unwrap();
        let f = t.reshape(p, vec![2, 4 * 9]).unwrap();
        let wl = t.leaf(Tensor::new(vec![36, 5], randvec(&mut r, 180)).unwrap(), true);
        let l = t.matmul(f, wl).unwrap();
        let loss = t.cross_entropy(l, &[1, 3]).unwrap();
        let g = t.backward(loss).unwrap();
        (
            t.value(loss).item().unwrap(),
            g.get(w).unwrap().data().to_vec(),
        )
    };
    let (l1, g1) = run();
    let (l2, g2) = run();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(g1.len(), g2.len());
    for (a, b) in g1.iter().zip(&g2) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn backward_is_repeatable_on_a_live_tape() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(Tensor::from_vec(vec![1.0, 2.0, 3.0]), true);
    let s = t.sum_all(x).unwrap();
    let g1 = t.backward(s).unwrap();
    let g2 = t.backward(s).unwrap();
    assert_eq!(g1.get(x).unwrap().data(), g2.get(x).unwrap().data());
}

// ---- serialization ----

#[test]
fn tensor_blob_round_trips() {
    let mut r = rng(14);
    for shape in [vec![], vec![7], vec![2, 3], vec![2, 3, 4, 5]] {
        let n: usize = shape.iter().product();
        let t = Tensor::<f64>::new(shape.clone(), randvec(&mut r, n)).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back: Tensor<f64> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());

        let tf: Tensor<f32> = t.cast();
        let mut buf32 = Vec::new();
        write_tensor(&mut buf32, &tf).unwrap();
        let back32: Tensor<f32> = read_tensor(&mut buf32.as_slice()).unwrap();
        assert_eq!(back32.data(), tf.data());
    }
}

#[test]
fn tensor_blob_rejects_bad_magic() {
    let mut buf = Vec::new();
    write_tensor(&mut buf, &Tensor::<f64>::zeros(vec![2])).unwrap();
    buf[0] = b'X';
    assert!(read_tensor::<f64, _>(&mut buf.as_slice()).is_err());
}
