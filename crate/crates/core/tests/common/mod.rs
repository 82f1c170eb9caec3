#![allow(dead_code)]

pub mod dd;

use rfr_core::linalg::DenseMatrix;
use rfr_core::rng;

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut r = rng::seeded(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| rng::normal(&mut r))
}

/// `|a − b| / max(|a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

use rfr_core::net::{loss_and_backward, Activation, Batch, Network, NetworkSpec, Regularizer};
use rfr_core::rank::rfr_loss_and_grad;

use dd::Dd;

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between analytic and central-difference gradients,
/// over entries whose analytic magnitude exceeds `floor`, and how many were compared.
#[derive(Clone, Copy, Debug)]
pub struct FdResult {
    pub max_rel_err: f64,
    pub compared: usize,
}

fn central(f: impl Fn(Dd) -> Dd, x: f64) -> f64 {
    let h = Dd::from(FD_STEP);
    let up = f(Dd::from(x) + h);
    let down = f(Dd::from(x) - h);
    ((up - down) / h.scale(2.0)).to_f64()
}

/// Rank-loss gradient check on `instances` random `rows × cols` matrices.
pub fn rfr_gradient_check(instances: usize, rows: usize, cols: usize, seed: u64, floor: f64) -> FdResult {
    let mut out = FdResult { max_rel_err: 0.0, compared: 0 };
    for k in 0..instances {
        let h = gaussian(rows, cols, rng::derive_seed(seed, k as u64));
        let analytic = rfr_loss_and_grad(&h).expect("loss").grad_h;
        let base: Vec<Dd> = h.data().iter().map(|&v| Dd::from(v)).collect();
        for idx in 0..base.len() {
            let g = analytic.data()[idx];
            if g.abs() <= floor {
                continue;
            }
            let fd = central(
                |x| {
                    let mut p = base.clone();
                    p[idx] = x;
                    dd::rfr_loss(&p, rows, cols)
                },
                h.data()[idx],
            );
            out.max_rel_err = out.max_rel_err.max(rel_err(g, fd));
            out.compared += 1;
        }
    }
    out
}

/// Small network used by the full-objective gradient check: 4 inputs,
/// 8 ReLU hidden units, 6 identity features, 3 classes.
pub fn small_net(seed: u64) -> Network {
    let spec = NetworkSpec {
        input_dim: 4,
        hidden: vec![8],
        feature_dim: 6,
        activation: Activation::Relu,
        feature_activation: Activation::Identity,
    };
    Network::new(&spec, 3, seed).expect("network")
}

/// Full objective (`CE + α·Σλlogλ`) gradient check over every parameter.
pub fn network_gradient_check(net: &Network, n: usize, alpha: f64, seed: u64, floor: f64) -> FdResult {
    let inputs = gaussian(n, net.input_dim(), seed);
    let labels: Vec<usize> = (0..n).map(|i| i % net.num_classes()).collect();
    let batch = Batch { inputs: inputs.clone(), labels: labels.clone() };
    let (_, grads) = loss_and_backward(net, &batch, alpha, Regularizer::Rfr).expect("backward");
    let analytic = grads.flatten();
    let params = net.params_flat();
    let base: Vec<Dd> = params.iter().map(|&v| Dd::from(v)).collect();
    let mut out = FdResult { max_rel_err: 0.0, compared: 0 };
    for idx in 0..params.len() {
        let g = analytic[idx];
        if g.abs() <= floor {
            continue;
        }
        let fd = central(
            |x| {
                let mut p = base.clone();
                p[idx] = x;
                dd::network_objective(net, &p, inputs.data(), &labels, alpha)
            },
            params[idx],
        );
        out.max_rel_err = out.max_rel_err.max(rel_err(g, fd));
        out.compared += 1;
    }
    out
}
