//! Independent oracles for the tensor kernels and gradient checks for every
//! primitive operation on the tape.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smokesal_tensor::{kernels, ParamSet, Real, Sgd, Shape, Tape, Tensor, Var};

fn random(shape: impl Into<Shape>, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Direct six-loop cross-correlation with zero padding.
fn conv_direct(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let oh = (xs.h + 2 * pad - k) / stride + 1;
    let ow = (xs.w + 2 * pad - k) / stride + 1;
    let mut y = Tensor::zeros([xs.n, ws.n, oh, ow]);
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..xs.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                                    acc += w.at(co, ci, ky, kx) * x.at(n, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    y.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    y
}

/// Direct scatter form of the transposed convolution (no padding).
fn transposed_direct(x: &Tensor, w: &Tensor, stride: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h;
    let oh = (xs.h - 1) * stride + k;
    let ow = (xs.w - 1) * stride + k;
    let mut y = Tensor::zeros([xs.n, ws.c, oh, ow]);
    for n in 0..xs.n {
        for ci in 0..xs.c {
            for iy in 0..xs.h {
                for ix in 0..xs.w {
                    let v = x.at(n, ci, iy, ix);
                    for co in 0..ws.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (oy, ox) = (iy * stride + ky, ix * stride + kx);
                                let cur = y.at(n, co, oy, ox);
                                y.set(n, co, oy, ox, cur + v * w.at(ci, co, ky, kx));
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Normwise relative error `max|a − b| / max|b|`.
fn rel_err(a: &Tensor, b: &Tensor) -> Real {
    assert_eq!(a.shape(), b.shape());
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0 as Real, |m, (x, y)| m.max((x - y).abs()));
    diff / b.max_abs().max(Real::MIN_POSITIVE)
}

#[test]
fn conv2d_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random([2, 3, 8, 8], &mut rng);
    let w = random([4, 3, 3, 3], &mut rng);
    let b = random([1, 4, 1, 1], &mut rng);
    let fast = kernels::conv2d(&x, &w, Some(&b), 1, 1).unwrap();
    assert!(rel_err(&fast, &conv_direct(&x, &w, Some(&b), 1, 1)) < 1e-12);
    for _ in 0..60 {
        let k: usize = rng.gen_range(1..=4);
        let stride = rng.gen_range(1..=3);
        let pad: usize = rng.gen_range(0..=2);
        let h = rng.gen_range(k.saturating_sub(2 * pad).max(1)..=9);
        let wd = rng.gen_range(k.saturating_sub(2 * pad).max(1)..=9);
        let x = random([rng.gen_range(1..=3), rng.gen_range(1..=4), h, wd], &mut rng);
        let w = random([rng.gen_range(1..=4), x.shape().c, k, k], &mut rng);
        let fast = kernels::conv2d(&x, &w, None, stride, pad).unwrap();
        let slow = conv_direct(&x, &w, None, stride, pad);
        assert!(rel_err(&fast, &slow) < 1e-12, "k{k} s{stride} p{pad} {}", x.shape());
    }
}

#[test]
fn transposed_conv_matches_scatter_and_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for &(k, stride) in &[(2, 2), (3, 2), (2, 1), (3, 3)] {
        let x = random([2, 3, 5, 4], &mut rng);
        let w = random([3, 2, k, k], &mut rng);
        let y = kernels::transposed_conv2d(&x, &w, stride, 0).unwrap();
        assert!(rel_err(&y, &transposed_direct(&x, &w, stride)) < 1e-12);
        // ⟨conv(u), x⟩ = ⟨u, convᵀ(x)⟩. The transposed weight C_in × C_out × k × k
        // is read as a forward weight mapping C_out channels to C_in.
        let u = random(y.shape(), &mut rng);
        let conv_u = conv_direct(&u, &w, None, stride, 0);
        assert_eq!(conv_u.shape(), x.shape());
        let lhs: Real = conv_u.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        let rhs: Real = u.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        // Same operator as the conv2d input-gradient routine.
        let grads = kernels::conv2d_backward(&u, &w, &x, stride, 0, true).unwrap();
        assert!(rel_err(&grads.input.unwrap(), &y) < 1e-12);
    }
}

#[test]
fn maxpool_matches_sliding_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random([1, 1, 6, 6], &mut rng);
    let (y, _) = kernels::maxpool(&x, 3, 1, 1).unwrap();
    for oy in 0..6usize {
        for ox in 0..6usize {
            let mut best = Real::NEG_INFINITY;
            for iy in oy.saturating_sub(1)..=(oy + 1) {
                for ix in ox.saturating_sub(1)..=(ox + 1) {
                    let v = if iy < 6 && ix < 6 { x.at(0, 0, iy, ix) } else { 0.0 };
                    best = best.max(v);
                }
            }
            // Borders also see padding zeros.
            if oy == 0 || ox == 0 || oy == 5 || ox == 5 {
                best = best.max(0.0);
            }
            assert_eq!(y.at(0, 0, oy, ox), best);
        }
    }
}

#[test]
fn global_avgpool_is_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random([1, 1, 8, 8], &mut rng);
    let y = kernels::avgpool(&x, 8, 8).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
    let mean = x.data().iter().sum::<Real>() / 64.0;
    assert!((y.data()[0] - mean).abs() < 1e-14);
}

/// Central finite differences of `loss(inputs)` against the tape gradient for
/// every input element.
fn gradcheck(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> Real {
    let eval = |xs: &[Tensor]| -> Real {
        let mut t = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| t.input(x.clone())).collect();
        let l = build(&mut t, &vars);
        t.value(l).data()[0]
    };
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.input_with_grad(x.clone())).collect();
    let l = build(&mut t, &vars);
    let grads = t.backward(l).unwrap();
    let eps = 1e-5;
    let mut worst: Real = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Random projection so every output element contributes to the loss.
fn project(t: &mut Tape, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = t.input(random(t.shape(y), &mut rng));
    let p = t.mul(y, r).unwrap();
    t.reduce_sum(p).unwrap()
}

/// Random values bounded away from zero and pairwise distinct, so ReLU and
/// max-pool kinks are out of finite-difference reach.
fn away_from_kinks(shape: impl Into<Shape>, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) { m } else { -m }
    })
}

const TOL: Real = 1e-4;

#[test]
fn gradcheck_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for &(stride, pad) in &[(1, 1), (2, 0), (2, 1)] {
        let inputs = [random([2, 2, 5, 5], &mut rng), random([3, 2, 3, 3], &mut rng), random([1, 3, 1, 1], &mut rng)];
        let err = gradcheck(&inputs, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
            project(t, y, 1)
        });
        assert!(err < TOL, "stride {stride} pad {pad}: {err}");
    }
}

#[test]
fn gradcheck_transposed_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let inputs = [random([2, 3, 3, 3], &mut rng), random([3, 2, 2, 2], &mut rng)];
    let err = gradcheck(&inputs, |t, v| {
        let y = t.transposed_conv2d(v[0], v[1], 2).unwrap();
        project(t, y, 2)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn gradcheck_pools() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = [away_from_kinks([1, 2, 6, 6], &mut rng)];
    assert!(gradcheck(&x, |t, v| { let y = t.maxpool(v[0], 2, 2).unwrap(); project(t, y, 3) }) < TOL);
    assert!(gradcheck(&x, |t, v| { let y = t.maxpool(v[0], 3, 1).unwrap(); project(t, y, 4) }) < TOL);
    assert!(gradcheck(&x, |t, v| { let y = t.avgpool(v[0], 2, 2).unwrap(); project(t, y, 5) }) < TOL);
    assert!(gradcheck(&x, |t, v| { let y = t.avgpool(v[0], 3, 3).unwrap(); project(t, y, 6) }) < TOL);
}

#[test]
fn gradcheck_pointwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let a = away_from_kinks([2, 3, 3, 3], &mut rng);
    let b = random([2, 3, 3, 3], &mut rng);
    let gate = random([2, 1, 3, 3], &mut rng);
    assert!(gradcheck(&[a.clone()], |t, v| { let y = t.relu(v[0]).unwrap(); project(t, y, 7) }) < TOL);
    assert!(gradcheck(&[a.clone()], |t, v| { let y = t.sigmoid(v[0]).unwrap(); project(t, y, 8) }) < TOL);
    assert!(gradcheck(&[a.clone()], |t, v| { let y = t.scale(v[0], -1.7).unwrap(); project(t, y, 9) }) < TOL);
    assert!(gradcheck(&[a.clone(), b.clone()], |t, v| { let y = t.add(v[0], v[1]).unwrap(); project(t, y, 10) }) < TOL);
    assert!(gradcheck(&[a.clone(), b.clone()], |t, v| { let y = t.mul(v[0], v[1]).unwrap(); project(t, y, 11) }) < TOL);
    assert!(gradcheck(&[a.clone(), gate], |t, v| { let y = t.mul_channels(v[0], v[1]).unwrap(); project(t, y, 12) }) < TOL);
    assert!(gradcheck(&[a.clone(), b], |t, v| { let y = t.concat_channels(&[v[0], v[1], v[0]]).unwrap(); project(t, y, 13) }) < TOL);
    assert!(gradcheck(&[a.clone()], |t, v| { let y = t.reduce_mean(v[0]).unwrap(); t.scale(y, 3.0).unwrap() }) < TOL);
    assert!(gradcheck(&[a], |t, v| { let y = t.reduce_sum(v[0]).unwrap(); let s = t.sigmoid(y).unwrap(); t.reduce_sum(s).unwrap() }) < TOL);
}

#[test]
fn gradcheck_heads_and_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let x = random([3, 2, 2, 2], &mut rng);
    let w = random([2, 8, 1, 1], &mut rng);
    let b = random([1, 2, 1, 1], &mut rng);
    assert!(gradcheck(&[x, w, b], |t, v| { let y = t.fully_connected(v[0], v[1], v[2]).unwrap(); project(t, y, 14) }) < TOL);

    let z = random([3, 2, 1, 1], &mut rng);
    assert!(gradcheck(&[z.clone()], |t, v| { let y = t.softmax2(v[0]).unwrap(); project(t, y, 15) }) < TOL);
    assert!(gradcheck(&[z], |t, v| t.softmax_cross_entropy(v[0], &[1, 0, 1]).unwrap()) < TOL);

    let p = Tensor::from_fn([2, 1, 3, 3], |_, _, _, _| rng.gen_range(0.05..0.95));
    let target = Tensor::from_fn([2, 1, 3, 3], |_, _, _, _| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
    assert!(gradcheck(&[p.clone()], |t, v| t.weighted_bce(v[0], &target, &[0.3, 0.6], &[0.7, 0.4]).unwrap()) < TOL);

    let labels = vec![vec![0, 0, 1, 1, 2, 2, 2, 1, 0], vec![1, 1, 1, 0, 0, 0, 1, 1, 1]];
    assert!(gradcheck(&[p], |t, v| { let y = t.segment_mean(v[0], &labels).unwrap(); project(t, y, 16) }) < TOL);
}

#[test]
fn two_identical_training_runs_are_bitwise_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut ps = ParamSet::new();
        let w = ps.add("w", random([4, 3, 3, 3], &mut rng)).unwrap();
        let b = ps.add("b", Tensor::zeros([1, 4, 1, 1])).unwrap();
        let x = random([2, 3, 8, 8], &mut rng);
        let opt = Sgd::new(0.01, 0.9);
        for _ in 0..5 {
            let mut t = Tape::new();
            let xi = t.input(x.clone());
            let (wv, bv) = (t.param(&ps, w), t.param(&ps, b));
            let y = t.conv2d(xi, wv, Some(bv), 1, 1).unwrap();
            let y = t.relu(y).unwrap();
            let y = t.maxpool(y, 2, 2).unwrap();
            let l = t.reduce_sum(y).unwrap();
            t.backward_into(l, &mut ps).unwrap();
            opt.step(&mut ps).unwrap();
        }
        ps.iter().map(|p| p.value.clone()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn conv_output_size_formula(h in 1usize..12, w in 1usize..12, k in 1usize..5, stride in 1usize..4, pad in 0usize..3) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let x = Tensor::ones([1, 1, h, w]);
        let wt = Tensor::ones([1, 1, k, k]);
        let y = kernels::conv2d(&x, &wt, None, stride, pad).unwrap();
        prop_assert_eq!(y.shape(), Shape::new(1, 1, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1));
    }

    #[test]
    fn stride_two_transposed_doubles(h in 1usize..8, w in 1usize..8) {
        let y = kernels::transposed_conv2d(&Tensor::ones([1, 2, h, w]), &Tensor::ones([2, 1, 2, 2]), 2, 0).unwrap();
        prop_assert_eq!(y.shape(), Shape::new(1, 1, 2 * h, 2 * w));
    }
}
