use draco_core::tensor::{grad_check, ConvSpec, GradCheckConfig, Graph, Shape, Tensor, Var};
use draco_core::Result;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand64(seed: u64, s: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(s, lo, hi, &mut rng)
}

/// `sum(y ⊙ r)` for a fixed random `r`, so every output element carries its
/// own weight in the gradient.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = g.constant(rand64(seed, g.shape(y), -1.0, 1.0));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

fn check<F>(leaves: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let r = grad_check(
        leaves,
        |g, v| {
            let y = f(g, v)?;
            project(g, y, 999)
        },
        GradCheckConfig::default().with_samples(30),
    )
    .unwrap();
    assert!(r.passed && r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn conv_gradients() {
    for (k, d) in [(1, 1), (3, 1), (3, 2), (3, 5), (5, 1)] {
        let spec = ConvSpec::new(3, 4, k, d);
        let leaves = [
            rand64(1, Shape::new(2, 3, 7, 6), -1.0, 1.0),
            rand64(2, spec.weight_shape(), -0.5, 0.5),
            rand64(3, spec.bias_shape(), -0.5, 0.5),
        ];
        check(&leaves, |g, v| g.conv2d(v[0], v[1], v[2], spec));
    }
}

#[test]
fn depthwise_gradients() {
    for d in [1, 2, 3, 5] {
        let spec = ConvSpec::new(4, 4, 3, d);
        let leaves = [
            rand64(4, Shape::new(2, 4, 8, 7), -1.0, 1.0),
            rand64(5, spec.depthwise_weight_shape(), -0.5, 0.5),
            rand64(6, spec.bias_shape(), -0.5, 0.5),
        ];
        check(&leaves, |g, v| g.depthwise_conv2d(v[0], v[1], v[2], spec));
    }
}

#[test]
fn pooling_gradients() {
    let x = [rand64(7, Shape::new(2, 3, 6, 7), -1.0, 1.0)];
    check(&x, |g, v| g.max_pool2(v[0]));
    check(&x, |g, v| g.global_avg(v[0]));
}

#[test]
fn activation_gradients() {
    let x = [rand64(8, Shape::new(1, 3, 5, 5), -1.0, 1.0)];
    check(&x, |g, v| Ok(g.relu(v[0])));
    check(&x, |g, v| Ok(g.sigmoid(v[0])));
    check(&x, |g, v| Ok(g.abs(v[0])));
}

#[test]
fn elementwise_gradients() {
    let s = Shape::new(2, 3, 4, 5);
    let ab = [rand64(9, s, -1.0, 1.0), rand64(10, s, 0.5, 1.5)];
    check(&ab, |g, v| g.add(v[0], v[1]));
    check(&ab, |g, v| g.sub(v[0], v[1]));
    check(&ab, |g, v| g.mul(v[0], v[1]));
    check(&ab, |g, v| g.div(v[0], v[1]));
    check(&ab, |g, v| {
        let a = g.scale(v[0], -2.5);
        Ok(g.shift(a, 0.25))
    });
}

#[test]
fn broadcast_gradients() {
    let leaves = [
        rand64(11, Shape::new(2, 3, 4, 5), -1.0, 1.0),
        rand64(12, Shape::new(2, 3, 1, 1), 0.5, 1.5),
    ];
    check(&leaves, |g, v| g.add_bcast(v[0], v[1]));
    check(&leaves, |g, v| g.sub_bcast(v[0], v[1]));
    check(&leaves, |g, v| g.mul_bcast(v[0], v[1]));
}

#[test]
fn structural_gradients() {
    let leaves = [
        rand64(13, Shape::new(1, 2, 5, 6), -1.0, 1.0),
        rand64(14, Shape::new(1, 3, 5, 6), -1.0, 1.0),
    ];
    check(&leaves, |g, v| g.concat_channels(&[v[0], v[1], v[0]]));
    check(&leaves, |g, v| g.crop(v[1], 1, 2, 3, 3));
    check(&leaves, |g, v| {
        let m = g.mean(v[0]);
        let s = g.sum(v[1]);
        g.mul(m, s)
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_preserves_spatial_shape(
        n in 1usize..3, cin in 1usize..5, cout in 1usize..5,
        h in 1usize..9, w in 1usize..9, k in prop::sample::select(vec![1usize, 3, 5]), d in 1usize..4,
    ) {
        let spec = ConvSpec::new(cin, cout, k, d);
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(Shape::new(n, cin, h, w)));
        let wv = g.constant(Tensor::zeros(spec.weight_shape()));
        let b = g.constant(Tensor::full(spec.bias_shape(), 0.5));
        let y = g.conv2d(x, wv, b, spec).unwrap();
        prop_assert_eq!(g.shape(y), Shape::new(n, cout, h, w));
        prop_assert!(g.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn max_pool_halves_and_bounds(seed in any::<u64>(), h in 2usize..10, w in 2usize..10) {
        let x = rand64(seed, Shape::new(1, 2, h, w), -3.0, 3.0);
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let p = g.max_pool2(v).unwrap();
        let out = g.value(p);
        prop_assert_eq!(out.shape(), Shape::new(1, 2, h / 2, w / 2));
        let hi = x.data().iter().copied().fold(f64::MIN, f64::max);
        prop_assert!(out.data().iter().all(|&v| v <= hi));
    }
}
