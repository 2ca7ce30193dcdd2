//! Backpropagation check against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Affine, Layer, ResidualBlock};
use super::model::Initializer;
use super::{ClassifierError, Network, Tensor};

/// Gradients smaller than this in magnitude are compared on an absolute
/// scale; below it finite-difference rounding noise dominates.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub param_count: usize,
    /// (layer index, parameter tensor within layer, element) of the worst entry.
    pub worst: Option<(usize, usize, usize)>,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the analytic cross-entropy gradient of every parameter with
/// `(L(p + eps) - L(p - eps)) / (2 eps)`.
pub fn grad_check(
    net: &Network,
    input: &Tensor,
    target: usize,
    epsilon: f64,
) -> Result<GradCheckReport, ClassifierError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(ClassifierError::Config(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (_, grads) = net.loss_and_gradients(input, target)?;
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        param_count: net.param_count(),
        worst: None,
    };
    for (li, layer_grads) in grads.iter().enumerate() {
        for (pi, grad) in layer_grads.iter().enumerate() {
            for ei in 0..grad.len() {
                let original = param(&mut probe, li, pi).data()[ei];
                param(&mut probe, li, pi).data_mut()[ei] = original + epsilon;
                let plus = probe.loss(input, target)?;
                param(&mut probe, li, pi).data_mut()[ei] = original - epsilon;
                let minus = probe.loss(input, target)?;
                param(&mut probe, li, pi).data_mut()[ei] = original;
                let numeric = (plus - minus) / (2.0 * epsilon);
                let err = relative_error(grad.data()[ei], numeric);
                if err > report.max_relative_error || report.worst.is_none() {
                    report.max_relative_error = err;
                    report.worst = Some((li, pi, ei));
                }
            }
        }
    }
    Ok(report)
}

fn param(net: &mut Network, layer: usize, index: usize) -> &mut Tensor {
    net.layer_params_mut(layer)
        .into_iter()
        .nth(index)
        .expect("gradient aligned with parameters")
}

/// A network with one of every layer kind and random biases, plus a random
/// input and target: conv, relu, max pool, conv residual block, flatten and
/// a dense head on a 1×6×6 input (well under 1000 parameters).
pub fn one_of_each(seed: u64) -> (Network, Tensor, usize) {
    let mut init = Initializer::new(seed);
    let conv = |init: &mut Initializer, cin, cout| {
        let mut c = init.conv(cin, cout);
        c.bias = init.bias(cout);
        c
    };
    let c1 = conv(&mut init, 1, 2);
    let r1 = conv(&mut init, 2, 2);
    let r2 = conv(&mut init, 2, 2);
    let dense = |init: &mut Initializer, i, o| {
        let mut d = init.dense(i, o);
        d.bias = init.bias(o);
        d
    };
    let d1 = dense(&mut init, 18, 8);
    let d2 = dense(&mut init, 8, 6);
    let d3 = dense(&mut init, 6, 3);
    let net = Network::new(
        vec![1, 6, 6],
        vec![
            Layer::Conv(c1),
            Layer::Relu,
            Layer::MaxPool { size: 2 },
            Layer::Residual(ResidualBlock::new(Affine::Conv(r1), Affine::Conv(r2))),
            Layer::Flatten,
            Layer::Dense(d1),
            Layer::Relu,
            Layer::Dense(d2),
            Layer::Relu,
            Layer::Dense(d3),
        ],
    )
    .expect("shapes compose");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let input =
        Tensor::new(vec![1, 6, 6], (0..36).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches");
    (net, input, rng.random_range(0..3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::layers::DenseLayer;

    #[test]
    fn every_layer_kind_passes() {
        for seed in 0..5 {
            let (net, x, target) = one_of_each(seed);
            assert!(net.param_count() <= 1000);
            let r = grad_check(&net, &x, target, 1e-5).unwrap();
            assert!(r.max_relative_error <= 1e-4, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn single_dense_residual_block() {
        let w = |v: [f64; 4]| Tensor::new(vec![2, 2], v.to_vec()).unwrap();
        let first = DenseLayer::new(w([0.7, -0.3, 0.2, 0.9]), Tensor::from_vec(vec![0.1, -0.2])).unwrap();
        let second = DenseLayer::new(w([-0.5, 0.4, 0.8, 0.1]), Tensor::from_vec(vec![0.05, 0.3])).unwrap();
        let net = Network::new(
            vec![2],
            vec![Layer::Residual(ResidualBlock::new(
                Affine::Dense(first),
                Affine::Dense(second),
            ))],
        )
        .unwrap();
        let r = grad_check(&net, &Tensor::from_vec(vec![0.6, 0.4]), 1, 1e-5).unwrap();
        assert!(r.max_relative_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn zero_downstream_weights_force_zero_gradients() {
        let mut init = Initializer::new(1);
        let zero = |i, o| DenseLayer::new(Tensor::zeros(&[o, i]), Tensor::zeros(&[o])).unwrap();
        let net = Network::new(
            vec![3],
            vec![Layer::Dense(init.dense(3, 4)), Layer::Relu, Layer::Dense(zero(4, 2))],
        )
        .unwrap();
        let x = Tensor::from_vec(vec![0.5, 0.5, 0.5]);
        let (_, grads) = net.loss_and_gradients(&x, 0).unwrap();
        assert!(grads[0].iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        // With uniform logits the output bias gradient is p - onehot = (-0.5, 0.5).
        assert_eq!(grads[2][1].data(), &[-0.5, 0.5]);
        assert!(grad_check(&net, &x, 0, 1e-5).unwrap().max_relative_error <= 1e-4);
    }

    #[test]
    fn oracle_error_grows_with_step() {
        let (net, x, target) = one_of_each(3);
        let coarse = grad_check(&net, &x, target, 1e-1).unwrap().max_relative_error;
        let fine = grad_check(&net, &x, target, 1e-5).unwrap().max_relative_error;
        assert!(coarse > fine, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
        assert!(grad_check(&one_of_each(0).0, &one_of_each(0).1, 0, 0.0).is_err());
    }
}
