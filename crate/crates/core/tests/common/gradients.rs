//! Finite-difference checks of every differentiable tensor operation and of
//! the whole model.
//!
//! Each op has a naive 64-bit reference forward written here from its
//! definition. Central differences (ε = 1e-3) of the reference give the
//! expected gradient; the engine's analytic gradient (32-bit) must agree to a
//! relative error below 1e-3, guarded by `max(|a|, |b|, 1e-4)`. Every check
//! returns its worst relative error over all seeds.

use docrectify::losses::{combined_loss, BoundaryWeightMask};
use docrectify::model::{Mode, Model, ModelConfig};
use docrectify::tensor::{ConvParams, RunningStats, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;
pub const TOL: f64 = 1e-3;
pub const END_TO_END_TOL: f64 = 1e-2;
pub const SEEDS: u64 = 5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn max_rel_err(analytic: &[f32], expected: &[f64]) -> f64 {
    assert_eq!(analytic.len(), expected.len());
    analytic
        .iter()
        .zip(expected)
        .map(|(&a, &b)| rel_err(a as f64, b))
        .fold(0.0, f64::max)
}

/// Central differences of `f` with respect to every element of `x`.
fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + EPS;
            let up = f(&probe);
            probe[i] = x[i] - EPS;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Projects an output onto fixed random weights so the check covers every
/// output element: L = Σ r·y.
fn project(y: &[f64], r: &[f64]) -> f64 {
    y.iter().zip(r).map(|(a, b)| a * b).sum()
}

fn engine_projection(tape: &mut Tape<f32>, y: &Tensor<f32>, r: &[f64]) -> Tensor<f32> {
    let rt = Tensor::new(y.shape().to_vec(), to_f32(r)).unwrap();
    let prod = tape.mul(y, &rt).unwrap();
    tape.sum(&prod).unwrap()
}

// ---------------------------------------------------------------- references

#[allow(clippy::too_many_arguments)]
fn ref_conv(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    (n, c, h, wd): (usize, usize, usize, usize),
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * c_out * ho * wo];
    for bi in 0..n {
        for co in 0..c_out {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += w[((co * c + ci) * k + ky) * k + kx]
                                    * x[((bi * c + ci) * h + iy as usize) * wd + ix as usize];
                            }
                        }
                    }
                    out[((bi * c_out + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

fn ref_maxpool(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for p in 0..planes {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let at = |dy: usize, dx: usize| x[(p * h + 2 * oy + dy) * w + 2 * ox + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}

fn ref_resize(x: &[f64], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let src = |o: usize, out: usize, inp: usize| o as f64 * (inp - 1) as f64 / (out - 1) as f64;
    let mut out = Vec::new();
    for p in 0..planes {
        for oy in 0..oh {
            let sy = src(oy, oh, h);
            let y0 = (sy.floor() as usize).min(h - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for ox in 0..ow {
                let sx = src(ox, ow, w);
                let x0 = (sx.floor() as usize).min(w - 1);
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                let v = |yy: usize, xx: usize| x[(p * h + yy) * w + xx];
                out.push(
                    (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1))
                        + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1)),
                );
            }
        }
    }
    out
}

fn ref_batchnorm(x: &[f64], g: &[f64], b: &[f64], (n, c, hw): (usize, usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let m = (n * hw) as f64;
    for ch in 0..c {
        let idx = |bi: usize, i: usize| (bi * c + ch) * hw + i;
        let mean: f64 = (0..n).flat_map(|bi| (0..hw).map(move |i| (bi, i))).map(|(bi, i)| x[idx(bi, i)]).sum::<f64>() / m;
        let var: f64 = (0..n)
            .flat_map(|bi| (0..hw).map(move |i| (bi, i)))
            .map(|(bi, i)| (x[idx(bi, i)] - mean).powi(2))
            .sum::<f64>()
            / m;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for bi in 0..n {
            for i in 0..hw {
                out[idx(bi, i)] = g[ch] * (x[idx(bi, i)] - mean) * inv + b[ch];
            }
        }
    }
    out
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

// ---------------------------------------------------------------- checks

pub fn conv2d() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        for &(k, stride, pad, h) in &[(3usize, 1usize, 1usize, 8usize), (1, 1, 0, 8), (3, 2, 1, 9)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = (2, 3, h, h);
            let c_out = 4;
            let x = random_vec(&mut rng, 2 * 3 * h * h, -1.0, 1.0);
            let w = random_vec(&mut rng, c_out * 3 * k * k, -0.5, 0.5);
            let b = random_vec(&mut rng, c_out, -0.5, 0.5);
            let y_ref = ref_conv(&x, &w, &b, dims, c_out, k, stride, pad);
            let r = random_vec(&mut rng, y_ref.len(), -1.0, 1.0);

            let mut tape = Tape::<f32>::new();
            let xt = tape.leaf(&Tensor::new([2, 3, h, h], to_f32(&x)).unwrap());
            let wt = tape.leaf(&Tensor::new([c_out, 3, k, k], to_f32(&w)).unwrap());
            let bt = tape.leaf(&Tensor::new([c_out], to_f32(&b)).unwrap());
            let params = ConvParams {
                weight: wt.clone(),
                bias: bt.clone(),
                stride,
                padding: pad,
            };
            let y = tape.conv2d(&xt, &params).unwrap();
            for (a, e) in y.data().iter().zip(&y_ref) {
                assert!((*a as f64 - e).abs() < 1e-5);
            }
            let loss = engine_projection(&mut tape, &y, &r);
            let grads = tape.backward(&loss).unwrap();

            let gx = numeric_grad(&x, |xv| project(&ref_conv(xv, &w, &b, dims, c_out, k, stride, pad), &r));
            let gw = numeric_grad(&w, |wv| project(&ref_conv(&x, wv, &b, dims, c_out, k, stride, pad), &r));
            let gb = numeric_grad(&b, |bv| project(&ref_conv(&x, &w, bv, dims, c_out, k, stride, pad), &r));
            worst = worst.max(max_rel_err(grads.get(&xt).unwrap(), &gx));
            worst = worst.max(max_rel_err(grads.get(&wt).unwrap(), &gw));
            worst = worst.max(max_rel_err(grads.get(&bt).unwrap(), &gb));
        }
    }
    worst
}

pub fn maxpool() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        // distinct values spaced 0.01 apart so ±ε never changes an argmax
        let n = 2 * 3 * 8 * 8;
        let mut x: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            x.swap(i, j);
        }
        let r = random_vec(&mut rng, n / 4, -1.0, 1.0);
        let mut tape = Tape::<f32>::new();
        let xt = tape.leaf(&Tensor::new([2, 3, 8, 8], to_f32(&x)).unwrap());
        let y = tape.max_pool2(&xt).unwrap();
        let loss = engine_projection(&mut tape, &y, &r);
        let grads = tape.backward(&loss).unwrap();
        let gx = numeric_grad(&x, |xv| project(&ref_maxpool(xv, 6, 8, 8), &r));
        worst = worst.max(max_rel_err(grads.get(&xt).unwrap(), &gx));
    }
    worst
}

pub fn bilinear_resize() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        for &(h, w, oh, ow) in &[(4usize, 5usize, 8usize, 10usize), (3, 3, 11, 7), (8, 8, 5, 3)] {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let x = random_vec(&mut rng, 2 * 2 * h * w, -1.0, 1.0);
            let y_ref = ref_resize(&x, 4, h, w, oh, ow);
            let r = random_vec(&mut rng, y_ref.len(), -1.0, 1.0);
            let mut tape = Tape::<f32>::new();
            let xt = tape.leaf(&Tensor::new([2, 2, h, w], to_f32(&x)).unwrap());
            let y = tape.resize_bilinear(&xt, oh, ow).unwrap();
            for (a, e) in y.data().iter().zip(&y_ref) {
                assert!((*a as f64 - e).abs() < 1e-5);
            }
            let loss = engine_projection(&mut tape, &y, &r);
            let grads = tape.backward(&loss).unwrap();
            let gx = numeric_grad(&x, |xv| project(&ref_resize(xv, 4, h, w, oh, ow), &r));
            worst = worst.max(max_rel_err(grads.get(&xt).unwrap(), &gx));
        }
    }
    worst
}

pub fn upsample2() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(250 + seed);
        let x = random_vec(&mut rng, 2 * 3 * 4 * 4, -1.0, 1.0);
        let r = random_vec(&mut rng, 2 * 3 * 8 * 8, -1.0, 1.0);
        let mut tape = Tape::<f32>::new();
        let xt = tape.leaf(&Tensor::new([2, 3, 4, 4], to_f32(&x)).unwrap());
        let y = tape.upsample_bilinear2(&xt).unwrap();
        let loss = engine_projection(&mut tape, &y, &r);
        let grads = tape.backward(&loss).unwrap();
        let gx = numeric_grad(&x, |xv| project(&ref_resize(xv, 6, 4, 4, 8, 8), &r));
        worst = worst.max(max_rel_err(grads.get(&xt).unwrap(), &gx));
    }
    worst
}

pub fn activations() -> f64 {
    let mut worst = 0.0f64;
    type Kind = (&'static str, fn(f64) -> f64);
    let kinds: [Kind; 3] = [
        ("relu", |v| v.max(0.0)),
        ("sigmoid", sigmoid),
        ("tanh", f64::tanh),
    ];
    for seed in 0..SEEDS {
        for (name, f) in kinds {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            // keep relu inputs away from the kink
            let x: Vec<f64> = random_vec(&mut rng, 96, -3.0, 3.0)
                .into_iter()
                .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
                .collect();
            let r = random_vec(&mut rng, 96, -1.0, 1.0);
            let mut tape = Tape::<f32>::new();
            let xt = tape.leaf(&Tensor::new([2, 3, 4, 4], to_f32(&x)).unwrap());
            let y = match name {
                "relu" => tape.relu(&xt),
                "sigmoid" => tape.sigmoid(&xt),
                _ => tape.tanh(&xt),
            }
            .unwrap();
            let loss = engine_projection(&mut tape, &y, &r);
            let grads = tape.backward(&loss).unwrap();
            let gx = numeric_grad(&x, |xv| {
                project(&xv.iter().map(|&v| f(v)).collect::<Vec<_>>(), &r)
            });
            worst = worst.max(max_rel_err(grads.get(&xt).unwrap(), &gx));
        }
    }
    worst
}

pub fn batchnorm_training() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let dims = (2, 3, 16);
        let x = random_vec(&mut rng, 96, -2.0, 2.0);
        let g = random_vec(&mut rng, 3, 0.5, 1.5);
        let b = random_vec(&mut rng, 3, -0.5, 0.5);
        let r = random_vec(&mut rng, 96, -1.0, 1.0);
        let mut tape = Tape::<f32>::new();
        let xt = tape.leaf(&Tensor::new([2, 3, 4, 4], to_f32(&x)).unwrap());
        let gt = tape.leaf(&Tensor::new([3], to_f32(&g)).unwrap());
        let bt = tape.leaf(&Tensor::new([3], to_f32(&b)).unwrap());
        let mut stats = RunningStats::new(3);
        let y = tape.batch_norm(&xt, &gt, &bt, &mut stats, true).unwrap();
        let y_ref = ref_batchnorm(&x, &g, &b, dims);
        for (a, e) in y.data().iter().zip(&y_ref) {
            assert!((*a as f64 - e).abs() < 1e-4);
        }
        let loss = engine_projection(&mut tape, &y, &r);
        let grads = tape.backward(&loss).unwrap();
        let gx = numeric_grad(&x, |v| project(&ref_batchnorm(v, &g, &b, dims), &r));
        let gg = numeric_grad(&g, |v| project(&ref_batchnorm(&x, v, &b, dims), &r));
        let gb = numeric_grad(&b, |v| project(&ref_batchnorm(&x, &g, v, dims), &r));
        worst = worst.max(max_rel_err(grads.get(&xt).unwrap(), &gx));
        worst = worst.max(max_rel_err(grads.get(&gt).unwrap(), &gg));
        worst = worst.max(max_rel_err(grads.get(&bt).unwrap(), &gb));
    }
    worst
}

pub fn concat_split() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let a = random_vec(&mut rng, 2 * 2 * 9, -1.0, 1.0);
        let b = random_vec(&mut rng, 2 * 3 * 9, -1.0, 1.0);
        let r1 = random_vec(&mut rng, 2 * 4 * 9, -1.0, 1.0);
        let r2 = random_vec(&mut rng, 2 * 9, -1.0, 1.0);

        // reference: split(concat(a, b), [4, 1]) projected on r1, r2
        let reference = |a: &[f64], b: &[f64]| -> f64 {
            let mut cat = Vec::new();
            for n in 0..2 {
                cat.extend_from_slice(&a[n * 18..(n + 1) * 18]);
                cat.extend_from_slice(&b[n * 27..(n + 1) * 27]);
            }
            let mut s = 0.0;
            for n in 0..2 {
                for i in 0..36 {
                    s += cat[n * 45 + i] * r1[n * 36 + i];
                }
                for i in 0..9 {
                    s += cat[n * 45 + 36 + i] * r2[n * 9 + i];
                }
            }
            s
        };
        let mut tape = Tape::<f32>::new();
        let at = tape.leaf(&Tensor::new([2, 2, 3, 3], to_f32(&a)).unwrap());
        let bt = tape.leaf(&Tensor::new([2, 3, 3, 3], to_f32(&b)).unwrap());
        let cat = tape.concat_channels(&[&at, &bt]).unwrap();
        let parts = tape.split_channels(&cat, &[4, 1]).unwrap();
        let l1 = engine_projection(&mut tape, &parts[0], &r1);
        let l2 = engine_projection(&mut tape, &parts[1], &r2);
        let loss = tape.add(&l1, &l2).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let ga = numeric_grad(&a, |v| reference(v, &b));
        let gb = numeric_grad(&b, |v| reference(&a, v));
        worst = worst.max(max_rel_err(grads.get(&at).unwrap(), &ga));
        worst = worst.max(max_rel_err(grads.get(&bt).unwrap(), &gb));
    }
    worst
}

pub fn batch_concat_split() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(550 + seed);
        let a = random_vec(&mut rng, 2 * 4, -1.0, 1.0);
        let b = random_vec(&mut rng, 4, -1.0, 1.0);
        let r1 = random_vec(&mut rng, 4, -1.0, 1.0);
        let r2 = random_vec(&mut rng, 4 * 4, -1.0, 1.0);

        // reference: a duplicated skip-style input, split at batch index 1
        let reference = |a: &[f64], b: &[f64]| -> f64 {
            let cat: Vec<f64> = a.iter().chain(b).chain(a).copied().collect();
            let head: f64 = cat[..4].iter().zip(&r1).map(|(x, r)| x * r).sum();
            let tail: f64 = cat[4..20].iter().zip(&r2).map(|(x, r)| x * r).sum();
            head + tail.powi(2)
        };
        let mut tape = Tape::<f32>::new();
        let at = tape.leaf(&Tensor::new([2, 2, 2, 1], to_f32(&a)).unwrap());
        let bt = tape.leaf(&Tensor::new([1, 2, 2, 1], to_f32(&b)).unwrap());
        let cat = tape.concat_batch(&[&at, &bt, &at]).unwrap();
        let parts = tape.split_batch(&cat, &[1, 2, 2]).unwrap();
        let mut loss = engine_projection(&mut tape, &parts[0], &r1);
        let rest = tape.concat_batch(&[&parts[1], &parts[2]]).unwrap();
        let rest = tape.split_batch(&rest, &[4]).unwrap().remove(0);
        let t = engine_projection(&mut tape, &rest, &r2);
        let t2 = tape.mul(&t, &t).unwrap();
        loss = tape.add(&loss, &t2).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let ga = numeric_grad(&a, |v| reference(v, &b));
        let gb = numeric_grad(&b, |v| reference(&a, v));
        worst = worst.max(max_rel_err(grads.get(&at).unwrap(), &ga));
        worst = worst.max(max_rel_err(grads.get(&bt).unwrap(), &gb));
    }
    worst
}

pub fn gate_scale() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let s = random_vec(&mut rng, 2 * 3 * 16, -1.0, 1.0);
        let a = random_vec(&mut rng, 2 * 16, 0.0, 1.0);
        let r = random_vec(&mut rng, 2 * 3 * 16, -1.0, 1.0);
        let reference = |s: &[f64], a: &[f64]| -> f64 {
            let mut t = 0.0;
            for n in 0..2 {
                for c in 0..3 {
                    for i in 0..16 {
                        let k = (n * 3 + c) * 16 + i;
                        t += s[k] * (1.0 + a[n * 16 + i]) * r[k];
                    }
                }
            }
            t
        };
        let mut tape = Tape::<f32>::new();
        let st = tape.leaf(&Tensor::new([2, 3, 4, 4], to_f32(&s)).unwrap());
        let at = tape.leaf(&Tensor::new([2, 1, 4, 4], to_f32(&a)).unwrap());
        let y = tape.gate_scale(&st, &at).unwrap();
        let loss = engine_projection(&mut tape, &y, &r);
        let grads = tape.backward(&loss).unwrap();
        let gs = numeric_grad(&s, |v| reference(v, &a));
        let ga = numeric_grad(&a, |v| reference(&s, v));
        worst = worst.max(max_rel_err(grads.get(&st).unwrap(), &gs));
        worst = worst.max(max_rel_err(grads.get(&at).unwrap(), &ga));
    }
    worst
}

pub fn losses() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let p = random_vec(&mut rng, 2 * 16, 0.05, 0.95);
        let y: Vec<f64> = (0..32).map(|_| rng.gen_range(0..2) as f64).collect();
        let bce = |p: &[f64]| -> f64 {
            -p.iter()
                .zip(&y)
                .map(|(&q, &t)| t * q.ln() + (1.0 - t) * (1.0 - q).ln())
                .sum::<f64>()
                / p.len() as f64
        };
        let mut tape = Tape::<f32>::new();
        let pt = tape.leaf(&Tensor::new([2, 1, 4, 4], to_f32(&p)).unwrap());
        let l = tape.binary_cross_entropy(&pt, &to_f32(&y)).unwrap();
        let grads = tape.backward(&l).unwrap();
        worst = worst.max(max_rel_err(grads.get(&pt).unwrap(), &numeric_grad(&p, bce)));

        let g = random_vec(&mut rng, 2 * 2 * 16, -1.0, 1.0);
        let t = random_vec(&mut rng, 2 * 2 * 16, -1.0, 1.0);
        let w = random_vec(&mut rng, 16, 1.0, 5.0);
        let wmse = |g: &[f64]| -> f64 {
            g.iter()
                .zip(&t)
                .enumerate()
                .map(|(i, (a, b))| w[i % 16] * (a - b).powi(2))
                .sum::<f64>()
                / g.len() as f64
        };
        let mut tape = Tape::<f32>::new();
        let gt = tape.leaf(&Tensor::new([2, 2, 4, 4], to_f32(&g)).unwrap());
        let l = tape.weighted_mse(&gt, &to_f32(&t), &to_f32(&w)).unwrap();
        let grads = tape.backward(&l).unwrap();
        worst = worst.max(max_rel_err(grads.get(&gt).unwrap(), &numeric_grad(&g, wmse)));
    }
    worst
}


pub fn arithmetic() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(650 + seed);
        let a = random_vec(&mut rng, 48, -1.0, 1.0);
        let b = random_vec(&mut rng, 48, -1.0, 1.0);
        let r = random_vec(&mut rng, 48, -1.0, 1.0);
        // L = mean(0.7·(a·b + a) · r) + Σ b
        let reference = |a: &[f64], b: &[f64]| -> f64 {
            let m: f64 = (0..48).map(|i| 0.7 * (a[i] * b[i] + a[i]) * r[i]).sum::<f64>() / 48.0;
            m + b.iter().sum::<f64>()
        };
        let mut tape = Tape::<f32>::new();
        let at = tape.leaf(&Tensor::new([2, 2, 3, 4], to_f32(&a)).unwrap());
        let bt = tape.leaf(&Tensor::new([2, 2, 3, 4], to_f32(&b)).unwrap());
        let ab = tape.mul(&at, &bt).unwrap();
        let y = tape.add(&ab, &at).unwrap();
        let y = tape.scale(&y, 0.7).unwrap();
        let rt = Tensor::new([2, 2, 3, 4], to_f32(&r)).unwrap();
        let yr = tape.mul(&y, &rt).unwrap();
        let m = tape.mean(&yr).unwrap();
        let s = tape.sum(&bt).unwrap();
        let loss = tape.add(&m, &s).unwrap();
        let grads = tape.backward(&loss).unwrap();
        worst = worst.max(max_rel_err(grads.get(&at).unwrap(), &numeric_grad(&a, |v| reference(v, &b))));
        worst = worst.max(max_rel_err(grads.get(&bt).unwrap(), &numeric_grad(&b, |v| reference(&a, v))));
    }
    worst
}

/// Worst error of every per-op check.
pub fn all_ops() -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", conv2d()),
        ("max_pool2", maxpool()),
        ("resize_bilinear", bilinear_resize()),
        ("upsample_bilinear2", upsample2()),
        ("activations", activations()),
        ("batch_norm", batchnorm_training()),
        ("concat/split channels", concat_split()),
        ("concat/split batch", batch_concat_split()),
        ("gate_scale", gate_scale()),
        ("losses", losses()),
        ("arithmetic", arithmetic()),
    ]
}

// ------------------------------------------------------------- whole model

struct Problem {
    input: Tensor<f64>,
    grid: Vec<f64>,
    edges: Vec<f64>,
    mask: BoundaryWeightMask,
}

const LAMBDA: f64 = 0.9;

fn model_loss(model: &mut Model<f64>, p: &Problem) -> f64 {
    let mut tape = Tape::inference();
    let out = model.forward(&mut tape, None, &p.input, Mode::TRAIN).unwrap();
    let terms = combined_loss(&mut tape, &out.grid, &p.grid, &out.edge_pred, &p.edges, &p.mask, LAMBDA).unwrap();
    terms.total.item().unwrap()
}

/// Parameter group of a name: its first two dotted components without
/// trailing digits (`primary.respath2.unit0.conv3.weight` → `primary.respath`).
fn group(name: &str) -> String {
    name.split('.')
        .take(2)
        .map(|p| p.trim_end_matches(|c: char| c.is_ascii_digit()))
        .collect::<Vec<_>>()
        .join(".")
}

/// Directional derivatives of the full training loss (f64 model, batch 2,
/// training-mode BN) against central differences. The loss is only piecewise
/// smooth (ReLU, max-pool), and a step of 1e-6 along a whole tensor already
/// crosses enough kinks to move the estimate by percents, so ε = 1e-8; f64
/// roundoff at that step is around 1e-8 relative. Directions:
/// one over all parameters, one per parameter group and four over single
/// random tensors. Returns the worst relative error and the number of
/// directions checked.
pub fn model_end_to_end(config: ModelConfig, seed: u64) -> (f64, usize) {
    const H: f64 = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
    let s = config.input_size;
    let mut model = Model::<f64>::new(config, seed).unwrap();
    let p = Problem {
        input: Tensor::new([2, 3, s, s], random_vec(&mut rng, 2 * 3 * s * s, 0.0, 1.0)).unwrap(),
        grid: random_vec(&mut rng, 2 * 2 * s * s, -1.0, 1.0),
        edges: (0..2 * s * s).map(|_| if rng.gen_bool(0.2) { 1.0 } else { 0.0 }).collect(),
        mask: BoundaryWeightMask::with_defaults(s),
    };

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let out = model.forward(&mut tape, Some(&bound), &p.input, Mode::TRAIN).unwrap();
    let terms = combined_loss(&mut tape, &out.grid, &p.grid, &out.edge_pred, &p.edges, &p.mask, LAMBDA).unwrap();
    let grads = tape.backward(&terms.total).unwrap();
    let analytic: Vec<Vec<f64>> = bound.iter().map(|b| grads.get(b).unwrap().to_vec()).collect();

    let names = model.params.names().to_vec();
    let mut supports: Vec<Vec<usize>> = vec![(0..names.len()).collect()];
    let mut groups: Vec<String> = names.iter().map(|n| group(n)).collect();
    groups.dedup();
    for g in &groups {
        supports.push((0..names.len()).filter(|&i| &group(&names[i]) == g).collect());
    }
    for _ in 0..4 {
        supports.push(vec![rng.gen_range(0..names.len())]);
    }

    let mut worst = 0.0f64;
    for support in &supports {
        let dirs: Vec<Vec<f64>> = support
            .iter()
            .map(|&i| random_vec(&mut rng, analytic[i].len(), -1.0, 1.0))
            .collect();
        let expected: f64 = support
            .iter()
            .zip(&dirs)
            .map(|(&i, d)| analytic[i].iter().zip(d).map(|(g, r)| g * r).sum::<f64>())
            .sum();
        let base: Vec<Vec<f64>> = support.iter().map(|&i| model.params.tensors()[i].to_vec()).collect();
        let mut eval = |sign: f64| {
            for ((&i, d), b) in support.iter().zip(&dirs).zip(&base) {
                for ((v, r), b) in model.params.values_mut(i).iter_mut().zip(d).zip(b) {
                    *v = b + sign * H * r;
                }
            }
            model_loss(&mut model, &p)
        };
        let numeric = (eval(1.0) - eval(-1.0)) / (2.0 * H);
        for (&i, b) in support.iter().zip(&base) {
            model.params.values_mut(i).copy_from_slice(b);
        }
        worst = worst.max((expected - numeric).abs() / expected.abs().max(numeric.abs()).max(1e-4));
    }
    (worst, supports.len())
}
