//! Central finite-difference checks in double precision. Every check returns
//! the largest entrywise relative error `|a - n| / max(|a|, |n|, FLOOR)`.

use dpn_core::conv::{conv2d_backward, conv2d_forward, ConvParams};
use dpn_core::model::{CellSpec, Network, NetworkSpec, SkipPolicy};
use dpn_core::ops::{add, mse_loss, relu_backward, relu_forward};
use dpn_core::{Dims, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
/// Magnitude below which errors are judged in absolute terms.
pub const FLOOR: f64 = 1e-5;

fn random(dims: Dims, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    let data = (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor4::from_vec(dims, data).unwrap()
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR))
        .fold(0.0, f64::max)
}

/// Central differences of `f` with respect to every entry of `x`.
fn numeric(x: &mut [f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + EPS;
            let up = f(x);
            x[i] = orig - EPS;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

/// Input, weight and bias gradients of one convolution.
pub fn conv(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cin, cout) = (3, 2);
    let input = random(Dims::new(2, cin, 5, 6), &mut rng);
    let bias = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
    let params = ConvParams::new(random(Dims::new(cout, cin, 3, 3), &mut rng), bias).unwrap();
    let cot = random(Dims::new(2, cout, 5, 6), &mut rng);
    let g = conv2d_backward(&input, &params, &cot).unwrap();

    let mut x = input.data().to_vec();
    let num = numeric(&mut x, &mut |v| {
        let t = Tensor4::from_vec(input.dims(), v.to_vec()).unwrap();
        dot(&conv2d_forward(&t, &params).unwrap(), &cot)
    });
    let mut err = max_rel_error(g.input.data(), &num);

    let mut w = params.weights.data().to_vec();
    let num = numeric(&mut w, &mut |v| {
        let p = ConvParams::new(Tensor4::from_vec(params.weights.dims(), v.to_vec()).unwrap(), params.bias.clone()).unwrap();
        dot(&conv2d_forward(&input, &p).unwrap(), &cot)
    });
    err = err.max(max_rel_error(g.params.weights.data(), &num));

    let mut b = params.bias.clone();
    let num = numeric(&mut b, &mut |v| {
        let p = ConvParams::new(params.weights.clone(), v.to_vec()).unwrap();
        dot(&conv2d_forward(&input, &p).unwrap(), &cot)
    });
    err.max(max_rel_error(&g.params.bias, &num))
}

pub fn relu(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keep inputs away from the kink.
    let data: Vec<f64> = (0..40)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let input = Tensor4::from_vec(Dims::new(2, 2, 2, 5), data).unwrap();
    let cot = random(input.dims(), &mut rng);
    let g = relu_backward(&input, &cot).unwrap();
    let mut x = input.data().to_vec();
    let num = numeric(&mut x, &mut |v| dot(&relu_forward(&Tensor4::from_vec(input.dims(), v.to_vec()).unwrap()), &cot));
    max_rel_error(g.data(), &num)
}

/// The sum's gradient with respect to either operand is the cotangent.
pub fn add_op(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random(Dims::new(1, 2, 3, 3), &mut rng);
    let b = random(a.dims(), &mut rng);
    let cot = random(a.dims(), &mut rng);
    let mut x = a.data().to_vec();
    let num = numeric(&mut x, &mut |v| dot(&add(&Tensor4::from_vec(a.dims(), v.to_vec()).unwrap(), &b).unwrap(), &cot));
    max_rel_error(cot.data(), &num)
}

pub fn mse(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = random(Dims::new(2, 1, 4, 3), &mut rng);
    let t = random(p.dims(), &mut rng);
    let (_, g) = mse_loss(&p, &t).unwrap();
    let mut x = p.data().to_vec();
    let num = numeric(&mut x, &mut |v| mse_loss(&Tensor4::from_vec(p.dims(), v.to_vec()).unwrap(), &t).unwrap().0);
    max_rel_error(g.data(), &num)
}

/// Six convs with a conv skip and a width change: one extraction, two branch
/// convs and a skip, two reconstruction.
pub fn six_conv_spec() -> NetworkSpec {
    NetworkSpec {
        extraction: vec![2],
        cells: vec![CellSpec::new(3, 1)],
        reconstruction: vec![2, 1],
        ..NetworkSpec::toy()
    }
}

/// Two units, the second with an identity skip.
pub fn identity_spec() -> NetworkSpec {
    NetworkSpec {
        extraction: vec![2],
        cells: vec![CellSpec::new(2, 2)],
        reconstruction: vec![1],
        skip: SkipPolicy::IdentityWhereWidthKept,
        ..NetworkSpec::toy()
    }
}

/// Input and every parameter of a whole network under the MSE loss.
pub fn network(spec: &NetworkSpec, seed: u64) -> f64 {
    let mut net = Network::<f64>::build(spec.clone(), seed).unwrap();
    assert!(net.params().len() <= 6, "{} convs", net.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    // Replace the small output gain so every layer carries a measurable gradient.
    for p in net.params_mut() {
        for w in p.weights.data_mut() {
            *w = rng.random_range(-0.6..0.6);
        }
        for b in p.bias.iter_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let input = random(Dims::new(2, 1, 6, 5), &mut rng);
    let target = random(input.dims(), &mut rng);
    let loss = |n: &Network<f64>, x: &Tensor4<f64>| mse_loss(&n.forward(x).unwrap(), &target).unwrap().0;

    let (out, trace) = net.forward_train(&input).unwrap();
    let (_, gout) = mse_loss(&out, &target).unwrap();
    let grads = net.backward(&trace, &gout).unwrap();

    let mut x = input.data().to_vec();
    let num = numeric(&mut x, &mut |v| loss(&net, &Tensor4::from_vec(input.dims(), v.to_vec()).unwrap()));
    let mut err = max_rel_error(grads.input.data(), &num);

    for li in 0..net.params().len() {
        let mut w = net.params()[li].weights.data().to_vec();
        let num = numeric(&mut w, &mut |v| {
            let mut n = net.clone();
            n.params_mut()[li].weights.data_mut().copy_from_slice(v);
            loss(&n, &input)
        });
        err = err.max(max_rel_error(grads.params[li].weights.data(), &num));

        let mut b = net.params()[li].bias.clone();
        let num = numeric(&mut b, &mut |v| {
            let mut n = net.clone();
            n.params_mut()[li].bias.copy_from_slice(v);
            loss(&n, &input)
        });
        err = err.max(max_rel_error(&grads.params[li].bias, &num));
    }
    err
}
