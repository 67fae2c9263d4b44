//! Helpers shared by the integration targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scalpgym::nn::{
    conv1d_backward, conv1d_forward, conv3d_backward, conv3d_forward, dense_backward, dense_forward, relu_backward,
    relu_forward, ArchConfig, LossTarget, NetInput, Network, NetworkSpec, Tensor,
};

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;
const DENOM_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Worst relative error of `grad` against central differences of `f` at `x`.
fn check_against<F: Fn(&[f64]) -> f64>(x: &[f64], grad: &[f64], f: F) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

/// Layer check: loss = <forward(x, w, b), r> for a fixed random `r`, so the
/// upstream gradient is `r`. Returns the worst error over x, w and b.
pub fn layer_check<F, B>(x: &Tensor, w: &Tensor, b: &Tensor, seed: u64, forward: F, backward: B) -> f64
where
    F: Fn(&Tensor, &Tensor, &Tensor) -> Tensor,
    B: Fn(&Tensor, &Tensor, &Tensor, &mut Tensor, &mut Tensor) -> Tensor,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = forward(x, w, b);
    let r = random_tensor(y.shape(), &mut rng);
    let dot = |t: &Tensor| t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
    let mut gw = Tensor::zeros(w.shape().to_vec());
    let mut gb = Tensor::zeros(b.shape().to_vec());
    let gx = backward(x, w, &r, &mut gw, &mut gb);
    let with = |t: &Tensor, v: &[f64]| Tensor::from_vec(t.shape().to_vec(), v.to_vec());
    let ex = check_against(x.data(), gx.data(), |v| dot(&forward(&with(x, v), w, b)));
    let ew = check_against(w.data(), gw.data(), |v| dot(&forward(x, &with(w, v), b)));
    let eb = check_against(b.data(), gb.data(), |v| dot(&forward(x, w, &with(b, v))));
    ex.max(ew).max(eb)
}

pub fn conv3d_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&[3, 4, 5, 2], &mut rng);
    let w = random_tensor(&[3, 2, 2, 3, 2], &mut rng);
    let b = random_tensor(&[3], &mut rng);
    layer_check(
        &x,
        &w,
        &b,
        seed,
        |x, w, b| conv3d_forward(x, w, b).unwrap(),
        |x, w, g, gw, gb| conv3d_backward(x, w, g, gw, gb, true).unwrap(),
    )
}

pub fn conv1d_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&[9, 3], &mut rng);
    let w = random_tensor(&[4, 3, 3], &mut rng);
    let b = random_tensor(&[4], &mut rng);
    layer_check(
        &x,
        &w,
        &b,
        seed,
        |x, w, b| conv1d_forward(x, w, b).unwrap(),
        |x, w, g, gw, gb| conv1d_backward(x, w, g, gw, gb, true).unwrap(),
    )
}

pub fn dense_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&[7], &mut rng);
    let w = random_tensor(&[5, 7], &mut rng);
    let b = random_tensor(&[5], &mut rng);
    layer_check(
        &x,
        &w,
        &b,
        seed,
        |x, w, b| dense_forward(x, w, b).unwrap(),
        |x, w, g, gw, gb| dense_backward(x, w, g, gw, gb, true).unwrap(),
    )
}

/// ReLU away from its kink: inputs are kept at least 0.1 from zero.
pub fn relu_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_vec(
        vec![20],
        (0..20)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.0);
                if rng.random_bool(0.5) { v } else { -v }
            })
            .collect(),
    );
    let r = random_tensor(&[20], &mut rng);
    let dot = |v: &[f64]| relu_forward(&Tensor::from_vec(vec![20], v.to_vec())).data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
    check_against(x.data(), relu_backward(&x, &r).data(), dot)
}

/// Toy-sized scalping network: both book branches, the trade branch, the
/// remaining-time input and the dense head.
pub fn toy_spec() -> NetworkSpec {
    let arch = ArchConfig {
        conv3d_channels: 2,
        conv3d_kernel: [2, 2, 2],
        conv1d_channels: 3,
        conv1d_kernel: 3,
        dense_width: 6,
    };
    NetworkSpec::scalping(&arch, [3, 4, 3, 2], [12, 11], true)
}

pub fn toy_input(spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> NetInput {
    NetInput {
        branches: spec.branches.iter().map(|b| random_tensor(&b.input_shape, rng)).collect(),
        extra: (0..spec.extra_inputs).map(|_| rng.random_range(0.0..1.0)).collect(),
    }
}

/// Inputs are redrawn until every ReLU pre-activation is this far from zero,
/// so no finite-difference probe straddles the kink.
pub const KINK_MARGIN: f64 = 1e-2;

/// Parameter gradients of the whole network under the squared-error loss.
pub fn network_check(spec: NetworkSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::new(spec.clone(), seed).unwrap();
    let x = (0..1000)
        .map(|_| toy_input(&spec, &mut rng))
        .find(|x| net.forward_tape(x).unwrap().relu_margin(&spec) > KINK_MARGIN)
        .expect("an input clear of every ReLU kink");
    let target = LossTarget::both([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
    let (_, grads) = net.gradients(&x, &target).unwrap();
    let mut worst: f64 = 0.0;
    for (p, g) in grads.0.iter().enumerate() {
        let base = net.params()[p].data().to_vec();
        worst = worst.max(check_against(&base, g.data(), |v| {
            let mut probe = net.clone();
            probe.params_mut()[p].data_mut().copy_from_slice(v);
            target.loss(&probe.forward(&x).unwrap()).0
        }));
    }
    worst
}
