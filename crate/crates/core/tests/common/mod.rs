//! Shared test helpers: naive reference operators, literal row-by-row
//! transcriptions of the two block tables, and a small synthetic dataset.

#![allow(dead_code)]

use draco_core::haze::{apply_asm, synthetic_scene, DepthKind, HazeRecipe};
use draco_core::model::layout::ddirb_sub_prefix;
use draco_core::model::{ArchConfig, DracoWeights};
use draco_core::tensor::{Shape, Tensor};
use draco_core::train::Pair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain nested-loop arrays in f64: `[c][y][x]` for one sample.
pub type Map = Vec<Vec<Vec<f64>>>;

pub fn to_map(t: &Tensor<f32>, n: usize) -> Map {
    let s = t.shape();
    (0..s.c)
        .map(|c| {
            (0..s.h)
                .map(|y| (0..s.w).map(|x| f64::from(t.at(n, c, y, x))).collect())
                .collect()
        })
        .collect()
}

fn w4(t: &Tensor<f32>, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
    f64::from(t.at(o, i, ky, kx))
}

fn bias(t: &Tensor<f32>, o: usize) -> f64 {
    f64::from(t.data()[o])
}

/// Direct same-zero-padded convolution.
pub fn naive_conv(x: &Map, w: &Tensor<f32>, b: &Tensor<f32>, dilation: usize) -> Map {
    let s = w.shape();
    let (cout, cin, k) = (s.n, s.c, s.h);
    let (h, wd) = (x[0].len(), x[0][0].len());
    let pad = (dilation * (k - 1) / 2) as isize;
    let mut out = vec![vec![vec![0.0; wd]; h]; cout];
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = bias(b, o);
                for i in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + (ky * dilation) as isize - pad;
                            let sx = xx as isize + (kx * dilation) as isize - pad;
                            if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                acc += w4(w, o, i, ky, kx) * x[i][sy as usize][sx as usize];
                            }
                        }
                    }
                }
                out[o][y][xx] = acc;
            }
        }
    }
    out
}

pub fn naive_depthwise(x: &Map, w: &Tensor<f32>, b: &Tensor<f32>, dilation: usize) -> Map {
    let k = w.shape().h;
    let (h, wd) = (x[0].len(), x[0][0].len());
    let pad = (dilation * (k - 1) / 2) as isize;
    (0..x.len())
        .map(|c| {
            (0..h)
                .map(|y| {
                    (0..wd)
                        .map(|xx| {
                            let mut acc = bias(b, c);
                            for ky in 0..k {
                                for kx in 0..k {
                                    let sy = y as isize + (ky * dilation) as isize - pad;
                                    let sx = xx as isize + (kx * dilation) as isize - pad;
                                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                        acc += w4(w, c, 0, ky, kx) * x[c][sy as usize][sx as usize];
                                    }
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn relu(x: &Map) -> Map {
    map1(x, |v| v.max(0.0))
}

pub fn map1(x: &Map, f: impl Fn(f64) -> f64 + Copy) -> Map {
    x.iter()
        .map(|p| p.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect())
        .collect()
}

pub fn zip(a: &Map, b: &Map, f: impl Fn(f64, f64) -> f64 + Copy) -> Map {
    a.iter()
        .zip(b)
        .map(|(pa, pb)| {
            pa.iter()
                .zip(pb)
                .map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| f(x, y)).collect())
                .collect()
        })
        .collect()
}

pub fn avg_pool(x: &Map) -> Map {
    x.iter()
        .map(|p| {
            let n = (p.len() * p[0].len()) as f64;
            vec![vec![p.iter().flatten().sum::<f64>() / n]]
        })
        .collect()
}

/// `a + b` with `b` a per-channel `1 × 1` map.
pub fn add_per_channel(a: &Map, b: &Map) -> Map {
    a.iter()
        .zip(b)
        .map(|(p, q)| map1(&vec![p.clone()], |v| v + q[0][0]).remove(0))
        .collect()
}

pub fn max_pool2(x: &Map) -> Map {
    x.iter()
        .map(|p| {
            (0..p.len() / 2)
                .map(|y| {
                    (0..p[0].len() / 2)
                        .map(|xx| {
                            let mut m = f64::NEG_INFINITY;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    m = m.max(p[2 * y + dy][2 * xx + dx]);
                                }
                            }
                            m
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn layer<'a>(w: &'a DracoWeights<f32>, name: &str) -> (&'a Tensor<f32>, &'a Tensor<f32>) {
    (
        w.get(&format!("{name}.weight")).unwrap(),
        w.get(&format!("{name}.bias")).unwrap(),
    )
}

fn conv(x: &Map, w: &DracoWeights<f32>, name: &str, dilation: usize) -> Map {
    let (k, b) = layer(w, name);
    naive_conv(x, k, b, dilation)
}

/// SE step by step: pool, squeeze, ReLU, excite, sigmoid, scale.
pub fn se_reference(x: &Map, w: &DracoWeights<f32>, prefix: &str) -> Map {
    let pooled = avg_pool(x);
    let s = relu(&conv(&pooled, w, &format!("{prefix}.squeeze"), 1));
    let e = conv(&s, w, &format!("{prefix}.excite"), 1);
    x.iter()
        .zip(&e)
        .map(|(p, g)| {
            let gate = 1.0 / (1.0 + (-g[0][0]).exp());
            p.iter().map(|r| r.iter().map(|v| v * gate).collect()).collect()
        })
        .collect()
}

/// DDIRB, one table row per line:
/// (1) 1×1 conv, (2) depthwise 3×3, (3) SE, (4) 1×1 conv, (5) Add(1)+(4),
/// (6)–(9) the same at the second dilation, (10) Add(5)+(9),
/// (11)–(14) at the third dilation, (15) Add(10)+(14).
pub fn ddirb_table(x: &Map, w: &DracoWeights<f32>, arch: &ArchConfig, block: usize) -> Map {
    let [d1, d2, d3] = arch.ddirb_dilations;
    let p0 = ddirb_sub_prefix(block, 0);
    let p1 = ddirb_sub_prefix(block, 1);
    let p2 = ddirb_sub_prefix(block, 2);
    let r1 = relu(&conv(x, w, &format!("{p0}.expand"), d1));
    let (dw, db) = layer(w, &format!("{p0}.depthwise"));
    let r2 = relu(&naive_depthwise(&r1, dw, db, d1));
    let r3 = se_reference(&r2, w, &format!("{p0}.se"));
    let r4 = conv(&r3, w, &format!("{p0}.project"), d1);
    let r5 = zip(&r1, &r4, |a, b| a + b);
    let r6 = relu(&conv(&r5, w, &format!("{p1}.expand"), d2));
    let (dw, db) = layer(w, &format!("{p1}.depthwise"));
    let r7 = relu(&naive_depthwise(&r6, dw, db, d2));
    let r8 = se_reference(&r7, w, &format!("{p1}.se"));
    let r9 = conv(&r8, w, &format!("{p1}.project"), d2);
    let r10 = zip(&r5, &r9, |a, b| a + b);
    let r11 = relu(&conv(&r10, w, &format!("{p2}.expand"), d3));
    let (dw, db) = layer(w, &format!("{p2}.depthwise"));
    let r12 = relu(&naive_depthwise(&r11, dw, db, d3));
    let r13 = se_reference(&r12, w, &format!("{p2}.se"));
    let r14 = conv(&r13, w, &format!("{p2}.project"), d3);
    zip(&r10, &r14, |a, b| a + b)
}

/// ATTDRN, one table row per line, with branch dilations from the config and
/// 32 input channels per branch:
/// (1)–(3) parallel 3×3 convs, (4) concat, (5) average pool, (6)–(8) convs,
/// (10) add to (4), (11)–(13) convs, (14) (11)×(13), (15) 3×3 conv 96→32,
/// (16) add the block input.
pub fn attdrn_table(x: &Map, w: &DracoWeights<f32>, arch: &ArchConfig, block: usize) -> Map {
    let p = format!("attdrn.{block}");
    let [d1, d2, d3] = arch.attdrn_dilations;
    let r1 = relu(&conv(x, w, &format!("{p}.branch0"), d1));
    let r2 = relu(&conv(x, w, &format!("{p}.branch1"), d2));
    let r3 = relu(&conv(x, w, &format!("{p}.branch2"), d3));
    let r4: Map = r1.into_iter().chain(r2).chain(r3).collect();
    let r5 = avg_pool(&r4);
    let r6 = relu(&conv(&r5, w, &format!("{p}.ca.0"), 1));
    let r7 = relu(&conv(&r6, w, &format!("{p}.ca.1"), 1));
    let r8 = relu(&conv(&r7, w, &format!("{p}.ca.2"), 1));
    let r10 = add_per_channel(&r4, &r8);
    let r11 = relu(&conv(&r10, w, &format!("{p}.pa.0"), 1));
    let r12 = relu(&conv(&r11, w, &format!("{p}.pa.1"), 1));
    let r13 = relu(&conv(&r12, w, &format!("{p}.pa.2"), 1));
    let r14 = zip(&r11, &r13, |a, b| a * b);
    let r15 = conv(&r14, w, &format!("{p}.fuse"), 1);
    zip(x, &r15, |a, b| a + b)
}

/// Largest `|a − b|` between a tensor sample and a reference map.
pub fn max_diff(t: &Tensor<f32>, n: usize, m: &Map) -> f64 {
    let s = t.shape();
    let mut worst: f64 = 0.0;
    for (c, plane) in m.iter().enumerate().take(s.c) {
        for (y, row) in plane.iter().enumerate() {
            for (x, &v) in row.iter().enumerate() {
                worst = worst.max((f64::from(t.at(n, c, y, x)) - v).abs());
            }
        }
    }
    worst
}

pub fn max_abs(m: &Map) -> f64 {
    m.iter().flatten().flatten().fold(0.0, |a, &v| a.max(v.abs()))
}

pub fn random_input(seed: u64, c: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(Shape::new(1, c, h, w), 0.0, 1.0, &mut rng)
}

/// `n` synthetic `size × size` scenes hazed with `β = 1`, left-to-right
/// linear depth, and per-channel airlight drawn from `[0.7, 1]`.
pub fn smoke_pairs(n: usize, size: usize, seed: u64) -> Vec<Pair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let clear = synthetic_scene(size, size, seed * 1000 + i as u64);
            let airlight = std::array::from_fn(|_| rng.random_range(0.7f32..=1.0));
            let recipe = HazeRecipe::new(airlight, 1.0, DepthKind::LinearX, size, size).unwrap();
            let hazy = apply_asm(&clear, &recipe).unwrap().hazy;
            (hazy, clear)
        })
        .collect()
}
