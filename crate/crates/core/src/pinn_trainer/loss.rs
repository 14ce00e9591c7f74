use ndarray::Array2;
use rayon::prelude::*;

use super::velocity::{sigmoid, softplus};
use super::{DataPoint, InputScaling, ResidualPoint, Result, TrainError, VelocityModel};
use crate::diffnet::{Cotangent, Mlp};

/// Points per parallel work item. Partial sums are reduced in chunk order,
/// so results do not depend on the thread count.
const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub mse_u: f64,
    pub mse_f: f64,
    pub total: f64,
    /// Gradient of `total` over the displacement-network parameters followed
    /// by the velocity parameters. Empty unless requested.
    pub gradient: Vec<f64>,
}

/// Wave-equation residual at a single physical point.
pub fn residual(u_net: &Mlp, vel: &VelocityModel, p: ResidualPoint, scaling: &InputScaling) -> Result<f64> {
    let r = u_net.eval_with_input_derivs(&[scaling.norm_t(p.t), scaling.norm_x(p.x), scaling.norm_y(p.y)])?;
    let h = r.input_hess_diag.expect("requested");
    let (ct, cx, cy) = scaling.factors();
    let v = vel.speed_at(p.x, p.y, scaling);
    Ok(ct * ct * h[0][0] - v * v * (cx * cx * h[1][0] + cy * cy * h[2][0]))
}

struct Partial {
    sum: f64,
    grad: Vec<f64>,
}

/// Composite loss `λ·MSE_u + MSE_f` and, if `with_grad`, its gradient.
pub fn loss(
    u_net: &Mlp,
    vel: &VelocityModel,
    data: &[DataPoint],
    residual: &[ResidualPoint],
    lambda: f64,
    scaling: &InputScaling,
    with_grad: bool,
) -> Result<LossEval> {
    if data.is_empty() || residual.is_empty() {
        return Err(TrainError::EmptySelection(format!(
            "loss needs data and residual points (got {} and {})",
            data.len(),
            residual.len()
        )));
    }
    if u_net.input_width() != 3 || u_net.output_width() != 1 {
        return Err(TrainError::Config("displacement network must map 3 inputs to 1 output".into()));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(TrainError::Config(format!("lambda must be nonnegative, got {lambda}")));
    }
    scaling.validate()?;
    let n_u = u_net.num_params();
    let n_v = vel.num_params();
    let nd = data.len() as f64;
    let nf = residual.len() as f64;

    let data_parts: Vec<Partial> = data
        .par_chunks(CHUNK)
        .map(|c| data_chunk(u_net, c, 2.0 * lambda / nd, scaling, with_grad))
        .collect::<Result<_>>()?;
    let res_parts: Vec<Partial> = residual
        .par_chunks(CHUNK)
        .map(|c| residual_chunk(u_net, vel, c, 2.0 / nf, scaling, with_grad))
        .collect::<Result<_>>()?;

    let mut gradient = if with_grad { vec![0.0; n_u + n_v] } else { Vec::new() };
    let mut sum_u = 0.0;
    for p in &data_parts {
        sum_u += p.sum;
        for (g, x) in gradient.iter_mut().zip(&p.grad) {
            *g += x;
        }
    }
    let mut sum_f = 0.0;
    for p in &res_parts {
        sum_f += p.sum;
        for (g, x) in gradient.iter_mut().zip(&p.grad) {
            *g += x;
        }
    }
    let mse_u = sum_u / nd;
    let mse_f = sum_f / nf;
    Ok(LossEval {
        mse_u,
        mse_f,
        total: lambda * mse_u + mse_f,
        gradient,
    })
}

fn data_chunk(u_net: &Mlp, pts: &[DataPoint], weight: f64, s: &InputScaling, with_grad: bool) -> Result<Partial> {
    let inputs = Array2::from_shape_fn((pts.len(), 3), |(b, k)| match k {
        0 => s.norm_t(pts[b].t),
        1 => s.norm_x(pts[b].x),
        _ => s.norm_y(pts[b].y),
    });
    let tape = u_net.record(inputs.view(), &[])?;
    let mut sum = 0.0;
    let mut cot = with_grad.then(|| Cotangent::zeros_like(&tape));
    for (b, p) in pts.iter().enumerate() {
        let r = tape.value(b, 0) - p.u / s.u_scale;
        sum += r * r;
        if let Some(c) = cot.as_mut() {
            c.add_value(b, 0, weight * r);
        }
    }
    let mut grad = Vec::new();
    if let Some(c) = cot {
        // Data terms never touch the velocity parameters; the caller's
        // reduction pads the missing tail with zeros.
        grad = vec![0.0; u_net.num_params()];
        u_net.backward(&tape, &c, &mut grad)?;
    }
    Ok(Partial { sum, grad })
}

fn residual_chunk(
    u_net: &Mlp,
    vel: &VelocityModel,
    pts: &[ResidualPoint],
    weight: f64,
    s: &InputScaling,
    with_grad: bool,
) -> Result<Partial> {
    let inputs = Array2::from_shape_fn((pts.len(), 3), |(b, k)| match k {
        0 => s.norm_t(pts[b].t),
        1 => s.norm_x(pts[b].x),
        _ => s.norm_y(pts[b].y),
    });
    let tape = u_net.record(inputs.view(), &[0, 1, 2])?;
    let (ct, cx, cy) = s.factors();
    let (ct2, cx2, cy2) = (ct * ct, cx * cx, cy * cy);

    // Speed and dv/d(raw output) per point.
    let (speeds, dv_draw, vel_tape) = match (vel.net(), vel.repr_scalar()) {
        (Some(net), _) => {
            let vin = inputs.slice(ndarray::s![.., 1..3]);
            let vt = net.record(vin, &[])?;
            let o: Vec<f64> = (0..pts.len()).map(|b| vt.value(b, 0)).collect();
            (
                o.iter().map(|&o| vel.v_min + softplus(o)).collect::<Vec<_>>(),
                o.iter().map(|&o| sigmoid(o)).collect::<Vec<_>>(),
                Some(vt),
            )
        }
        (None, Some((theta, scale))) => {
            let v = vel.v_min + softplus(scale * theta);
            (vec![v; pts.len()], vec![scale * sigmoid(scale * theta); pts.len()], None)
        }
        (None, None) => unreachable!("velocity model is either scalar or field"),
    };

    let mut sum = 0.0;
    let n_u = u_net.num_params();
    let mut grad = Vec::new();
    let mut cot_u = with_grad.then(|| Cotangent::zeros_like(&tape));
    let mut cot_v = match (&vel_tape, with_grad) {
        (Some(vt), true) => Some(Cotangent::zeros_like(vt)),
        _ => None,
    };
    let mut g_theta = 0.0;
    for b in 0..pts.len() {
        let v = speeds[b];
        let lap = cx2 * tape.second(b, 1, 0) + cy2 * tape.second(b, 2, 0);
        let f = ct2 * tape.second(b, 0, 0) - v * v * lap;
        sum += f * f;
        if let Some(c) = cot_u.as_mut() {
            let w = weight * f;
            c.add_second(b, 0, 0, w * ct2);
            c.add_second(b, 1, 0, -w * v * v * cx2);
            c.add_second(b, 2, 0, -w * v * v * cy2);
            let g_v = -w * 2.0 * v * lap * dv_draw[b];
            match cot_v.as_mut() {
                Some(cv) => cv.add_value(b, 0, g_v),
                None => g_theta += g_v,
            }
        }
    }
    if let Some(c) = cot_u {
        grad = vec![0.0; n_u + vel.num_params()];
        let (gu, gv) = grad.split_at_mut(n_u);
        u_net.backward(&tape, &c, gu)?;
        match (cot_v, vel_tape, vel.net()) {
            (Some(cv), Some(vt), Some(net)) => net.backward(&vt, &cv, gv)?,
            _ => gv[0] = g_theta,
        }
    }
    Ok(Partial { sum, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Activation;
    use std::f64::consts::FRAC_PI_2;

    fn pts(n: usize) -> (Vec<DataPoint>, Vec<ResidualPoint>) {
        let d = (0..n)
            .map(|i| {
                let s = i as f64 / n as f64;
                DataPoint {
                    t: s - 0.5,
                    x: 0.3 * s,
                    y: -0.7 * s,
                    u: (3.0 * s).sin(),
                }
            })
            .collect();
        let r = (0..n)
            .map(|i| {
                let s = i as f64 / n as f64;
                ResidualPoint {
                    t: 0.2 - s,
                    x: s * s - 0.5,
                    y: 0.1 * s,
                }
            })
            .collect();
        (d, r)
    }

    #[test]
    fn zero_network_has_zero_residual() {
        let mut params = vec![0.0; 22];
        params[21] = 1.0;
        let net = Mlp::from_params(&[3, 4, 1], Activation::Tanh, 1.0, params).unwrap();
        let vel = VelocityModel::scalar(2.9, 10.0);
        let r = residual(&net, &vel, ResidualPoint { t: 0.1, x: 0.2, y: -0.3 }, &InputScaling::identity()).unwrap();
        assert_eq!(r, 0.0);
    }

    /// `u = (1 − cos(εx))·2/ε²`, built from sin units, equals x² up to O(ε²x⁴).
    fn quadratic_in_x(eps: f64) -> Mlp {
        // Hidden unit: sin(εx + π/2) = cos(εx); output: −2/ε²·cos(εx) + 2/ε².
        let mut p = vec![0.0, eps, 0.0, FRAC_PI_2, -2.0 / (eps * eps), 2.0 / (eps * eps)];
        p.push(1.0);
        Mlp::from_params(&[3, 1, 1], Activation::Sin, 1.0, p).unwrap()
    }

    #[test]
    fn quadratic_displacement_gives_minus_two_v_squared() {
        let net = quadratic_in_x(1e-3);
        for v in [0.5, 2.9] {
            let vel = VelocityModel::scalar(v, 10.0);
            for x in [-0.8, 0.0, 0.6] {
                let p = ResidualPoint { t: 0.3, x, y: 0.1 };
                let f = residual(&net, &vel, p, &InputScaling::identity()).unwrap();
                assert!((f + 2.0 * v * v).abs() < 1e-6 * v * v, "f = {f}");
            }
        }
    }

    #[test]
    fn exact_plane_wave_has_negligible_residual() {
        // One sin unit encodes u = sin(k(x − v t)) exactly after normalization.
        let s = InputScaling {
            t: (1.0, 1.6),
            x: (2.0, 10.0),
            y: (2.0, 10.0),
            u_scale: 1.0,
        };
        let (k, v) = (2.1, 2.9);
        let (ct, cx, _) = s.factors();
        // x = x0 + (ξ+1)/cx, t = t0 + (τ+1)/ct.
        let wt = -k * v / ct;
        let wx = k / cx;
        let b = k * (s.x.0 + 1.0 / cx) - k * v * (s.t.0 + 1.0 / ct);
        let net = Mlp::from_params(&[3, 1, 1], Activation::Sin, 1.0, vec![wt, wx, 0.0, b, 1.0, 0.0, 1.0]).unwrap();
        let vel = VelocityModel::scalar(v, 10.0);
        let p = ResidualPoint { t: 1.2, x: 5.5, y: 4.0 };
        let u = net.forward(&[s.norm_t(p.t), s.norm_x(p.x), s.norm_y(p.y)]).unwrap()[0];
        assert!((u - (k * (p.x - v * p.t)).sin()).abs() < 1e-12);
        assert!(residual(&net, &vel, p, &s).unwrap().abs() < 1e-10);
        let wrong = VelocityModel::scalar(2.0, 10.0);
        assert!(residual(&net, &wrong, p, &s).unwrap().abs() > 1.0);
    }

    #[test]
    fn batched_loss_matches_pointwise_residuals() {
        let net = Mlp::init(&[3, 6, 6, 1], Activation::Tanh, 2.0, 11).unwrap();
        let vel = VelocityModel::scalar(2.0, 10.0);
        let (data, res) = pts(600);
        let s = InputScaling::identity();
        let e = loss(&net, &vel, &data, &res, 3.0, &s, false).unwrap();
        let mse_f: f64 = res.iter().map(|&p| residual(&net, &vel, p, &s).unwrap().powi(2)).sum::<f64>() / 600.0;
        let mse_u: f64 = data
            .iter()
            .map(|p| (net.forward(&[p.t, p.x, p.y]).unwrap()[0] - p.u).powi(2))
            .sum::<f64>()
            / 600.0;
        assert!((e.mse_f - mse_f).abs() < 1e-12 * mse_f.max(1.0));
        assert!((e.mse_u - mse_u).abs() < 1e-12);
        assert_eq!(e.total, 3.0 * e.mse_u + e.mse_f);
        assert!(e.gradient.is_empty());
    }

    #[test]
    fn lambda_enters_linearly() {
        let net = Mlp::init(&[3, 5, 1], Activation::Sin, 1.0, 2).unwrap();
        let vel = VelocityModel::scalar(2.0, 10.0);
        let (data, res) = pts(40);
        let s = InputScaling::identity();
        let one = loss(&net, &vel, &data, &res, 50.0, &s, false).unwrap();
        let two = loss(&net, &vel, &data, &res, 100.0, &s, false).unwrap();
        let zero = loss(&net, &vel, &data, &res, 0.0, &s, false).unwrap();
        assert!(((two.total - one.total) - 50.0 * one.mse_u).abs() < 1e-9 * two.total);
        assert_eq!(zero.total, zero.mse_f);
    }

    #[test]
    fn empty_sets_rejected() {
        let net = Mlp::init(&[3, 5, 1], Activation::Sin, 1.0, 2).unwrap();
        let vel = VelocityModel::scalar(2.0, 10.0);
        let (data, res) = pts(4);
        let s = InputScaling::identity();
        assert!(matches!(loss(&net, &vel, &[], &res, 1.0, &s, false), Err(TrainError::EmptySelection(_))));
        assert!(matches!(loss(&net, &vel, &data, &[], 1.0, &s, false), Err(TrainError::EmptySelection(_))));
    }

    #[test]
    fn perfect_fit_of_exact_solution_has_zero_loss() {
        let net = Mlp::from_params(&[3, 1, 1], Activation::Sin, 1.0, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let vel = VelocityModel::scalar(2.0, 10.0);
        let (mut data, res) = pts(10);
        data.iter_mut().for_each(|p| p.u = 0.0);
        let e = loss(&net, &vel, &data, &res, 100.0, &InputScaling::identity(), true).unwrap();
        assert_eq!(e.total, 0.0);
        assert!(e.gradient.iter().all(|&g| g == 0.0));
    }
}
