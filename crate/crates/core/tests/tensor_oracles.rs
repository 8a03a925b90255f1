//! Tape operations against direct, loop-by-loop reference implementations.

use caan_core::tensor::{lstm_forward, Adam, AdamConfig, LstmVars, NormAxis, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "index {i}: {x} vs {y}");
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (m, k, n) = (rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..7));
        let (a, b) = (random(&[m, k], &mut rng), random(&[k, n], &mut rng));
        let mut want = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    want[i * n + j] += a.at(i, l) * b.at(l, j);
                }
            }
        }
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a), t.constant(b));
        let c = t.matmul(va, vb).unwrap();
        close(t.value(c).data(), &want, 1e-12);
    }
}

#[test]
fn conv1d_matches_sliding_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (len, width, stride, pad) in [(8, 3, 1, 1), (9, 3, 2, 1), (16, 4, 2, 1), (5, 1, 1, 0), (7, 5, 1, 2)] {
        let (c_in, c_out) = (3, 2);
        let x = random(&[len, c_in], &mut rng);
        let k = random(&[width, c_in, c_out], &mut rng);
        let out = (len + 2 * pad - width) / stride + 1;
        let mut want = vec![0.0; out * c_out];
        for t in 0..out {
            for o in 0..c_out {
                for w in 0..width {
                    let src = (t * stride + w) as isize - pad as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    for i in 0..c_in {
                        want[t * c_out + o] += x.at(src as usize, i) * k.data()[(w * c_in + i) * c_out + o];
                    }
                }
            }
        }
        let mut tape = Tape::new();
        let (vx, vk) = (tape.constant(x), tape.constant(k));
        let y = tape.conv1d(vx, vk, stride, pad).unwrap();
        assert_eq!(tape.value(y).shape(), [out, c_out]);
        close(tape.value(y).data(), &want, 1e-12);
    }
}

#[test]
fn transposed_conv_is_the_adjoint() {
    // <conv(x), y> == <x, conv_t(y)> for the same kernel
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for len in [2, 4, 8, 16, 32] {
        let (c_in, c_out) = (3, 5);
        let x = random(&[len, c_in], &mut rng);
        let k = random(&[4, c_in, c_out], &mut rng);
        let y = random(&[len / 2, c_out], &mut rng);
        let mut t = Tape::new();
        let (vx, vk, vy) = (t.constant(x.clone()), t.constant(k), t.constant(y.clone()));
        let fx = t.conv1d(vx, vk, 2, 1).unwrap();
        let ty = t.conv_transpose1d(vy, vk, 2, 1).unwrap();
        assert_eq!(t.value(ty).shape(), [len, c_in], "transposed conv doubles length");
        let lhs = dot(t.value(fx).data(), y.data());
        let rhs = dot(x.data(), t.value(ty).data());
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn max_pool_takes_window_maxima() {
    let x = Tensor::from_rows(&[vec![1.0, -1.0], vec![3.0, -4.0], vec![0.0, 2.0], vec![-1.0, 2.5], vec![9.0, 9.0]]).unwrap();
    let mut t = Tape::new();
    let v = t.leaf(x, true);
    let p = t.max_pool2(v).unwrap();
    // odd trailing frame is dropped
    assert_eq!(t.value(p).data(), &[3.0, -1.0, 0.0, 2.5]);
    let s = t.sum(p);
    t.backward(s).unwrap();
    assert_eq!(t.grad(v).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn softmax_rows_direct() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[4, 6], &mut rng).map(|v| 30.0 * v);
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let s = t.softmax_rows(v).unwrap();
    let shifted = t.add_scalar(v, 1000.0);
    let s2 = t.softmax_rows(shifted).unwrap();
    for r in 0..4 {
        let row = x.row(r);
        let z: f64 = row.iter().map(|a| a.exp()).sum();
        let want: Vec<f64> = row.iter().map(|a| a.exp() / z).collect();
        close(t.value(s).row(r), &want, 1e-12);
        close(t.value(s2).row(r), &want, 1e-12);
    }
}

#[test]
fn norm_layers_direct() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (r, c) = (6, 4);
    let x = random(&[r, c], &mut rng);
    let gamma = random(&[c], &mut rng);
    let beta = random(&[c], &mut rng);
    let eps = 1e-5;
    let mut t = Tape::new();
    let (vx, vg, vb) = (t.constant(x.clone()), t.constant(gamma.clone()), t.constant(beta.clone()));
    let bn = t.norm(vx, vg, vb, eps, NormAxis::Temporal).unwrap();
    let ln = t.norm(vx, vg, vb, eps, NormAxis::Feature).unwrap();
    for j in 0..c {
        let col: Vec<f64> = (0..r).map(|i| x.at(i, j)).collect();
        let mu = col.iter().sum::<f64>() / r as f64;
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / r as f64;
        for i in 0..r {
            let want = (x.at(i, j) - mu) / (var + eps).sqrt() * gamma.data()[j] + beta.data()[j];
            assert!((t.value(bn).at(i, j) - want).abs() < 1e-12);
        }
    }
    for i in 0..r {
        let row = x.row(i);
        let mu = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
        for j in 0..c {
            let want = (row[j] - mu) / (var + eps).sqrt() * gamma.data()[j] + beta.data()[j];
            assert!((t.value(ln).at(i, j) - want).abs() < 1e-12);
        }
    }
    let one = t.constant(Tensor::zeros(&[1, c]));
    assert!(t.norm(one, vg, vb, eps, NormAxis::Temporal).is_err(), "one frame has no temporal variance");
}

#[test]
fn lstm_matches_scalar_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (frames, d, h) = (5, 3, 4);
    let x = random(&[frames, d], &mut rng);
    let w_ih = random(&[d, 4 * h], &mut rng);
    let w_hh = random(&[h, 4 * h], &mut rng);
    let bias = random(&[4 * h], &mut rng);
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());

    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    let mut want = Vec::new();
    for f in 0..frames {
        let mut z = bias.data().to_vec();
        for (g, zg) in z.iter_mut().enumerate() {
            for i in 0..d {
                *zg += x.at(f, i) * w_ih.at(i, g);
            }
            for i in 0..h {
                *zg += hs[i] * w_hh.at(i, g);
            }
        }
        for u in 0..h {
            let (ig, fg, cg, og) = (sig(z[u]), sig(z[h + u]), z[2 * h + u].tanh(), sig(z[3 * h + u]));
            cs[u] = fg * cs[u] + ig * cg;
            hs[u] = og * cs[u].tanh();
        }
        want.extend_from_slice(&hs);
    }

    let mut t = Tape::new();
    let vars = LstmVars {
        w_ih: t.constant(w_ih),
        w_hh: t.constant(w_hh),
        bias: t.constant(bias),
    };
    let vx = t.constant(x);
    let h0 = t.constant(Tensor::zeros(&[1, h]));
    let c0 = t.constant(Tensor::zeros(&[1, h]));
    let out = lstm_forward(&mut t, vx, vars, h0, c0).unwrap();
    close(t.value(out.hidden_states).data(), &want, 1e-12);
    close(t.value(out.last_hidden).data(), &want[(frames - 1) * h..], 1e-12);
}

#[test]
fn adam_follows_scalar_recurrence() {
    let cfg = AdamConfig::with_lr(0.01);
    let grads = [0.5, -1.5, 2.0, 0.0, 3.0];
    let (mut theta, mut m, mut v) = (1.0f64, 0.0, 0.0);
    let mut values = vec![Tensor::<f64>::scalar(1.0)];
    let mut set = caan_core::tensor::ParamSet::<f64>::new();
    set.add("p", Tensor::scalar(1.0));
    let mut adam = Adam::new(cfg, &set).unwrap();
    for (t, &g) in grads.iter().enumerate() {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let mh = m / (1.0 - cfg.beta1.powi(t as i32 + 1));
        let vh = v / (1.0 - cfg.beta2.powi(t as i32 + 1));
        theta -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        adam.update(&mut values, &[Tensor::scalar(g)]).unwrap();
        assert!((values[0].item() - theta).abs() < 1e-14, "step {t}");
    }
}

#[test]
fn adam_with_zero_lr_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut set = caan_core::tensor::ParamSet::<f32>::new();
    set.add("w", Tensor::uniform(&[3, 3], 1.0, &mut rng));
    let before: Vec<u32> = set.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect();
    let mut adam = Adam::new(AdamConfig::with_lr(0.0), &set).unwrap();
    let mut values = vec![set.iter().next().unwrap().1.clone()];
    adam.update(&mut values, &[Tensor::full(&[3, 3], 1.0)]).unwrap();
    let after: Vec<u32> = values[0].data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(before, after);
    assert!(Adam::new(AdamConfig::with_lr(-1.0), &set).is_err());
}

#[test]
fn backward_accumulates_across_calls() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::from_rows(&[vec![1.0f64, 2.0]]).unwrap(), true);
    let y = t.mul(x, x).unwrap();
    let s = t.sum(y);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0]);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[4.0, 8.0]);
    t.zero_grad();
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn shape_errors_are_reported() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    assert!(t.matmul(a, b).is_err());
    let k = t.constant(Tensor::zeros(&[3, 4, 1]));
    assert!(t.conv1d(a, k, 1, 1).is_err());
}
