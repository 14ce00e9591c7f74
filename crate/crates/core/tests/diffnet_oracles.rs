//! Finite-difference oracles for input derivatives and parameter gradients.

use ndarray::Array2;
use proptest::prelude::*;
use wavepinn_core::diffnet::{param_count, Activation, Cotangent, Mlp};

/// Relative error with an absolute floor so that near-zero references do not
/// blow the ratio up.
fn rel_err(got: f64, reference: f64, floor: f64) -> f64 {
    (got - reference).abs() / reference.abs().max(floor)
}

fn fd_first(net: &Mlp, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += h;
    m[i] -= h;
    (net.forward(&p).unwrap()[0] - net.forward(&m).unwrap()[0]) / (2.0 * h)
}

fn fd_second(net: &Mlp, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += h;
    m[i] -= h;
    let u0 = net.forward(x).unwrap()[0];
    (net.forward(&p).unwrap()[0] - 2.0 * u0 + net.forward(&m).unwrap()[0]) / (h * h)
}

#[test]
fn small_tanh_net_matches_central_differences() {
    let net = Mlp::init(&[2, 8, 1], Activation::Tanh, 1.0, 3).unwrap();
    for x in [[0.3, -0.7], [1.1, 0.4], [-0.5, -0.2]] {
        let r = net.eval_with_input_derivs(&x).unwrap();
        let grad = r.input_grad.unwrap();
        let hess = r.input_hess_diag.unwrap();
        for i in 0..2 {
            let g_fd = fd_first(&net, &x, i, 1e-4);
            let h_fd = fd_second(&net, &x, i, 1e-4);
            assert!(rel_err(grad[i][0], g_fd, 1e-3) < 1e-5, "grad {i}: {} vs {g_fd}", grad[i][0]);
            assert!(rel_err(hess[i][0], h_fd, 1e-3) < 1e-4, "hess {i}: {} vs {h_fd}", hess[i][0]);
        }
    }
}

/// Loss = u_xx(x)^2 summed over a few points; gradient over every parameter
/// compared against central parameter perturbation.
#[test]
fn second_derivative_loss_gradient_matches_parameter_perturbation() {
    let sizes = [2, 4, 1];
    let net = Mlp::init(&sizes, Activation::Tanh, 2.0, 17).unwrap();
    let xs = Array2::from_shape_vec((3, 2), vec![0.2, -0.4, 0.9, 0.1, -0.6, 0.5]).unwrap();

    let loss_of = |m: &Mlp| -> f64 {
        xs.outer_iter()
            .map(|x| m.eval_with_input_derivs(x.as_slice().unwrap()).unwrap().input_hess_diag.unwrap()[0][0].powi(2))
            .sum()
    };

    let tape = net.record(xs.view(), &[0]).unwrap();
    let mut cot = Cotangent::zeros_like(&tape);
    for b in 0..3 {
        cot.add_second(b, 0, 0, 2.0 * tape.second(b, 0, 0));
    }
    let grad = net.grad_params(&tape, &cot).unwrap();
    assert_eq!(grad.len(), param_count(&sizes));

    let h = 1e-5;
    let base = net.params().to_vec();
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        let up = Mlp::from_params(&sizes, Activation::Tanh, 2.0, p.clone()).unwrap();
        p[i] -= 2.0 * h;
        let down = Mlp::from_params(&sizes, Activation::Tanh, 2.0, p).unwrap();
        let fd = (loss_of(&up) - loss_of(&down)) / (2.0 * h);
        assert!(rel_err(grad[i], fd, 1e-6) < 1e-4, "param {i}: {} vs {fd}", grad[i]);
    }
}

fn net_strategy() -> impl Strategy<Value = (Mlp, Vec<f64>)> {
    (
        1usize..4,
        prop::collection::vec(1usize..7, 1..3),
        any::<bool>(),
        1.0f64..10.0,
        any::<u64>(),
        prop::collection::vec(-1.0f64..1.0, 3),
    )
        .prop_map(|(inputs, hidden, sin, n, seed, x)| {
            let mut sizes = vec![inputs];
            sizes.extend(hidden);
            sizes.push(1);
            let kind = if sin { Activation::Sin } else { Activation::Tanh };
            let mut net = Mlp::init(&sizes, kind, n, seed).unwrap();
            // Move away from the a = 1/n starting point so slopes vary.
            net.set_slope((1.0 + (seed % 7) as f64 * 0.1) / n).unwrap();
            (net, x[..inputs].to_vec())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivative_consistency((net, x) in net_strategy()) {
        let r = net.eval_with_input_derivs(&x).unwrap();
        let grad = r.input_grad.unwrap();
        let hess = r.input_hess_diag.unwrap();
        for i in 0..x.len() {
            let g_fd = fd_first(&net, &x, i, 1e-5);
            let h_fd = fd_second(&net, &x, i, 1e-4);
            prop_assert!(rel_err(grad[i][0], g_fd, 1e-3) < 1e-5);
            prop_assert!(rel_err(hess[i][0], h_fd, 1e-2) < 1e-4);
        }
    }

    #[test]
    fn scale_equivalence((net, x) in net_strategy(), c in 1.0f64..8.0) {
        let scaled = Mlp::from_params(
            net.layer_sizes(),
            net.activation(),
            net.scale() * c,
            {
                let mut p = net.params().to_vec();
                *p.last_mut().unwrap() /= c;
                p
            },
        ).unwrap();
        let a = net.eval_with_input_derivs(&x).unwrap();
        let b = scaled.eval_with_input_derivs(&x).unwrap();
        prop_assert!((a.value[0] - b.value[0]).abs() < 1e-12);
        for (ga, gb) in a.input_grad.unwrap().iter().zip(b.input_grad.unwrap()) {
            prop_assert!((ga[0] - gb[0]).abs() < 1e-12);
        }
        for (ha, hb) in a.input_hess_diag.unwrap().iter().zip(b.input_hess_diag.unwrap()) {
            prop_assert!((ha[0] - hb[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_count_law(sizes in prop::collection::vec(1usize..9, 2..5)) {
        let net = Mlp::init(&sizes, Activation::Tanh, 1.0, 0).unwrap();
        let expected: usize = sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum::<usize>() + 1;
        prop_assert_eq!(net.num_params(), expected);
        let xs = Array2::<f64>::zeros((2, sizes[0]));
        let tape = net.record(xs.view(), &[0]).unwrap();
        let cot = Cotangent::zeros_like(&tape);
        prop_assert_eq!(net.grad_params(&tape, &cot).unwrap().len(), expected);
    }

    #[test]
    fn evaluation_is_deterministic((net, x) in net_strategy()) {
        let a = net.eval_with_input_derivs(&x).unwrap();
        let b = net.eval_with_input_derivs(&x).unwrap();
        prop_assert_eq!(a, b);
    }
}
