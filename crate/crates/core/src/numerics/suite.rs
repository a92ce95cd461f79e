//! Seeded gradient checks for every differentiable primitive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_graph_gradients, GradCheckReport};
use super::{BnMode, Graph, NumericsError, RunningStats, Tensor, Var};

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>>;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape product")
}

/// Values bounded away from zero, for kinked primitives.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

fn cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let mut v: Vec<(&'static str, Vec<Tensor>, Build)> = Vec::new();
    v.push(("linear", vec![rand_tensor(rng, &[3, 4], -1.0, 1.0), rand_tensor(rng, &[4, 5], -1.0, 1.0), rand_tensor(rng, &[5], -1.0, 1.0)], Box::new(|g, x| g.linear(x[0], x[1], x[2]))));
    v.push(("conv2d", vec![rand_tensor(rng, &[2, 5, 5], -1.0, 1.0), rand_tensor(rng, &[3, 2, 3, 3], -1.0, 1.0)], Box::new(|g, x| g.conv2d(x[0], x[1], 1, 0))));
    v.push(("conv2d_strided", vec![rand_tensor(rng, &[2, 2, 7, 7], -1.0, 1.0), rand_tensor(rng, &[3, 2, 3, 3], -1.0, 1.0)], Box::new(|g, x| g.conv2d(x[0], x[1], 2, 1))));
    v.push(("depthwise_conv2d", vec![rand_tensor(rng, &[2, 3, 5, 5], -1.0, 1.0), rand_tensor(rng, &[3, 1, 3, 3], -1.0, 1.0)], Box::new(|g, x| g.depthwise_conv2d(x[0], x[1]))));
    v.push(("channel_bias", vec![rand_tensor(rng, &[2, 3, 2, 2], -1.0, 1.0), rand_tensor(rng, &[3], -1.0, 1.0)], Box::new(|g, x| g.channel_bias(x[0], x[1]))));
    v.push(("pad_end", vec![rand_tensor(rng, &[1, 2, 3, 4], -1.0, 1.0)], Box::new(|g, x| g.pad_end(x[0], 1, 1))));
    v.push((
        "batchnorm2d_train",
        vec![rand_tensor(rng, &[3, 2, 3, 3], -2.0, 2.0), rand_tensor(rng, &[2], 0.5, 1.5), rand_tensor(rng, &[2], -1.0, 1.0)],
        Box::new(|g, x| {
            let mut stats = RunningStats::default();
            g.batchnorm2d(x[0], x[1], x[2], 1e-5, BnMode::Train { stats: &mut stats, momentum: 0.1 })
        }),
    ));
    let stats = RunningStats::from_values(vec![0.3, -0.2], vec![1.5, 0.7]);
    v.push((
        "batchnorm2d_infer",
        vec![rand_tensor(rng, &[2, 2, 3, 3], -2.0, 2.0), rand_tensor(rng, &[2], 0.5, 1.5), rand_tensor(rng, &[2], -1.0, 1.0)],
        Box::new(move |g, x| g.batchnorm2d(x[0], x[1], x[2], 1e-5, BnMode::Infer(&stats))),
    ));
    v.push(("relu", vec![rand_away_from_zero(rng, &[4, 5])], Box::new(|g, x| g.relu(x[0]))));
    v.push(("sigmoid", vec![rand_tensor(rng, &[4, 5], -3.0, 3.0)], Box::new(|g, x| g.sigmoid(x[0]))));
    v.push(("tanh", vec![rand_tensor(rng, &[4, 5], -2.0, 2.0)], Box::new(|g, x| g.tanh(x[0]))));
    v.push(("exp", vec![rand_tensor(rng, &[4, 5], -2.0, 2.0)], Box::new(|g, x| g.exp(x[0]))));
    v.push(("square", vec![rand_tensor(rng, &[4, 5], -2.0, 2.0)], Box::new(|g, x| g.square(x[0]))));
    v.push(("elementwise_add", vec![rand_tensor(rng, &[3, 4], -1.0, 1.0), rand_tensor(rng, &[3, 4], -1.0, 1.0)], Box::new(|g, x| g.add(x[0], x[1]))));
    v.push(("elementwise_sub", vec![rand_tensor(rng, &[3, 4], -1.0, 1.0), rand_tensor(rng, &[3, 4], -1.0, 1.0)], Box::new(|g, x| g.sub(x[0], x[1]))));
    v.push(("elementwise_mul", vec![rand_tensor(rng, &[3, 4], -1.0, 1.0), rand_tensor(rng, &[3, 4], -1.0, 1.0)], Box::new(|g, x| g.mul(x[0], x[1]))));
    let a = rand_tensor(rng, &[3, 4], -1.0, 1.0);
    let b = Tensor::new(vec![3, 4], a.data().iter().map(|v| v + if rng.gen_bool(0.5) { 0.3 } else { -0.3 }).collect()).expect("shape");
    v.push(("minimum", vec![a, b], Box::new(|g, x| g.minimum(x[0], x[1]))));
    v.push(("scale", vec![rand_tensor(rng, &[3, 4], -1.0, 1.0)], Box::new(|g, x| g.scale(x[0], -2.5))));
    v.push(("add_scalar", vec![rand_tensor(rng, &[3, 4], -1.0, 1.0)], Box::new(|g, x| g.add_scalar(x[0], 0.7))));
    let clip_in = Tensor::new(vec![12], (0..12).map(|i| if i % 2 == 0 { rng.gen_range(-0.4..0.4) } else { rng.gen_range(0.7..2.0) * if i % 4 == 1 { 1.0 } else { -1.0 } }).collect()).expect("shape");
    v.push(("clip_value", vec![clip_in], Box::new(|g, x| g.clip_value(x[0], -0.5, 0.5))));
    v.push(("global_avg_pool", vec![rand_tensor(rng, &[2, 3, 4, 4], -1.0, 1.0)], Box::new(|g, x| g.global_avg_pool(x[0]))));
    v.push(("softmax_logits", vec![rand_tensor(rng, &[3, 6], -2.0, 2.0)], Box::new(|g, x| g.softmax_logits(x[0]))));
    v.push(("log_softmax", vec![rand_tensor(rng, &[3, 6], -2.0, 2.0)], Box::new(|g, x| g.log_softmax(x[0]))));
    v.push(("concat", vec![rand_tensor(rng, &[2, 3], -1.0, 1.0), rand_tensor(rng, &[2, 2], -1.0, 1.0)], Box::new(|g, x| g.concat(&[x[0], x[1]]))));
    v.push(("reshape", vec![rand_tensor(rng, &[2, 6], -1.0, 1.0)], Box::new(|g, x| g.reshape(x[0], &[3, 4]))));
    v.push(("sum", vec![rand_tensor(rng, &[2, 6], -1.0, 1.0)], Box::new(|g, x| g.sum(x[0]))));
    v.push(("mean", vec![rand_tensor(rng, &[2, 6], -1.0, 1.0)], Box::new(|g, x| g.mean(x[0]))));
    v.push(("sum_rows", vec![rand_tensor(rng, &[3, 4], -1.0, 1.0)], Box::new(|g, x| g.sum_rows(x[0]))));
    v.push(("gather", vec![rand_tensor(rng, &[3, 6], -1.0, 1.0)], Box::new(|g, x| g.gather(x[0], &[5, 0, 2]))));
    v.push(("embedding", vec![rand_tensor(rng, &[4, 3], -1.0, 1.0)], Box::new(|g, x| g.embedding(x[0], &[1, 3, 1]))));
    v
}

/// Runs the primitive gradient checks for one seed, returning `(name, report)` pairs.
pub fn primitive_gradient_suite(seed: u64, h: f64, tol: f64) -> Result<Vec<(&'static str, GradCheckReport)>, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases(&mut rng).into_iter().map(|(name, inputs, build)| Ok((name, check_graph_gradients(&inputs, seed, h, tol, build)?))).collect()
}
