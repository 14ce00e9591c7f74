//! Self-checks shared by the `selftest` command and the test suites.
//!
//! Each check measures an implementation against an independent reference:
//! wavefront arrival times against the prescribed speed, fine-grid runs
//! against coarse ones, and finite differences against analytic gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffnet::{Activation, Mlp};
use crate::pinn_trainer::{self, DataPoint, InputScaling, Region, ResidualPoint, VelocityModel};
use crate::wavegen::{solve_wave_with, Boundary, Grid2D, Rect, SolverOptions, SourceSpec, SpeedField};

#[derive(Clone, Debug, Serialize)]
pub struct WavefrontReport {
    pub prescribed: f64,
    pub measured: f64,
    pub relative_error: f64,
}

/// Point tone burst in a homogeneous medium; arrival times picked along the
/// +x ray at half of each trace's peak, then fitted with a straight line whose
/// inverse slope is the measured speed.
pub fn wavefront_speed(speed: f64) -> WavefrontReport {
    let frequency = 2.0;
    let h = speed / frequency / 14.5;
    let half_width = 8.0;
    let nodes = (2.0 * half_width / h).round() as usize + 1;
    let dt = 0.35 * h / speed;
    let travel = 0.75 * half_width / speed;
    let src = SourceSpec::point(frequency, 2, (half_width, half_width), 1.0);
    let nt = ((travel + src.duration()) / dt).ceil() as usize;
    let grid = Grid2D::new(nodes, nodes, h, h, nt, dt).unwrap();
    let field = SpeedField::uniform(&grid, speed).unwrap();
    let opts = SolverOptions {
        boundary: Boundary::Absorbing,
        sponge_width: 20,
        ..SolverOptions::default()
    };
    let ds = solve_wave_with(&field, &grid, Some(&src), &opts).unwrap().dataset;
    let centre = nodes / 2;

    let mut rs = Vec::new();
    let mut ts = Vec::new();
    let r_min = 0.25 * half_width;
    let r_max = 0.65 * half_width;
    for i in centre..nodes {
        let r = grid.x(i) - grid.x(centre);
        if r < r_min || r > r_max {
            continue;
        }
        let trace: Vec<f64> = (0..nt).map(|n| ds.snapshots[[n, centre, i]].abs()).collect();
        let peak = trace.iter().copied().fold(0.0, f64::max);
        let level = 0.5 * peak;
        if let Some(n) = trace.iter().position(|&v| v >= level) {
            if n == 0 {
                continue;
            }
            let frac = (level - trace[n - 1]) / (trace[n] - trace[n - 1]);
            rs.push(r);
            ts.push((n as f64 - 1.0 + frac) * dt);
        }
    }
    let slope = least_squares_slope(&rs, &ts);
    let measured = 1.0 / slope;
    WavefrontReport {
        prescribed: speed,
        measured,
        relative_error: (measured - speed).abs() / speed,
    }
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub spacings: [f64; 2],
    pub errors: [f64; 2],
    pub ratio: f64,
}

/// Gaussian initial displacement in a homogeneous medium, solved at spacing
/// `h` and `h/2` with a fixed Courant number and compared at a fixed time with
/// a run at `h/8` on the coarse nodes inside a fixed window.
pub fn grid_convergence() -> ConvergenceReport {
    let (v, sigma, half_width, t_end, window) = (1.0, 0.5, 4.0, 1.0, 2.5);
    let h0 = 0.1;
    let run = |level: u32| -> (Array2<f64>, usize) {
        let refine = 1usize << level;
        let h = h0 / refine as f64;
        let nodes = (2.0 * half_width / h).round() as usize + 1;
        let substeps = 4 * refine * 10;
        let mut grid = Grid2D::new(nodes, nodes, h, h, 2, t_end).unwrap();
        grid.x0 = -half_width;
        grid.y0 = -half_width;
        let field = SpeedField::uniform(&grid, v).unwrap();
        let u0 = Array2::from_shape_fn((nodes, nodes), |(j, i)| {
            let (x, y) = (grid.x(i), grid.y(j));
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        });
        let opts = SolverOptions {
            boundary: Boundary::Free,
            substeps,
            initial_displacement: Some(u0),
            ..SolverOptions::default()
        };
        let ds = solve_wave_with(&field, &grid, None, &opts).unwrap().dataset;
        (ds.snapshot(1).to_owned(), refine)
    };
    let reference = run(3);
    let coarse = run(0);
    let medium = run(1);
    let err = |(sol, refine): &(Array2<f64>, usize)| -> f64 {
        // Compare on the coarsest nodes inside the window.
        let step_ref = reference.1 / refine;
        let nodes = sol.nrows();
        let h = h0 / *refine as f64;
        let mut acc = 0.0;
        let mut count = 0usize;
        let stride = *refine;
        for j in (0..nodes).step_by(stride) {
            for i in (0..nodes).step_by(stride) {
                let (x, y) = (-half_width + i as f64 * h, -half_width + j as f64 * h);
                if x.abs() > window || y.abs() > window {
                    continue;
                }
                let d = sol[[j, i]] - reference.0[[j * step_ref, i * step_ref]];
                acc += d * d;
                count += 1;
            }
        }
        (acc / count as f64).sqrt()
    };
    let errors = [err(&coarse), err(&medium)];
    ConvergenceReport {
        spacings: [h0, h0 / 2.0],
        errors,
        ratio: errors[0] / errors[1],
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientCheckReport {
    pub trials: usize,
    pub max_first_derivative_error: f64,
    pub max_second_derivative_error: f64,
    pub max_loss_gradient_error: f64,
}

/// Relative error with an absolute floor on the denominator.
pub fn relative_error(got: f64, reference: f64, floor: f64) -> f64 {
    (got - reference).abs() / reference.abs().max(floor)
}

/// Randomized comparison of analytic derivatives with finite differences:
/// input derivatives of random networks (central differences, step 1e-4 /
/// 1e-3) and the full composite loss gradient over every trainable parameter
/// of a displacement net and a velocity net (central differences, step 1e-5).
pub fn gradient_check(trials: usize, seed: u64) -> GradientCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = 0.0f64;
    let mut second = 0.0f64;
    let mut loss_grad = 0.0f64;
    for trial in 0..trials {
        let kind = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Sin };
        let width = rng.random_range(3..9);
        let n = rng.random_range(1.0..10.0);
        let mut net = Mlp::init(&[3, width, width, 1], kind, n, rng.random()).unwrap();
        net.set_slope(rng.random_range(0.5..2.0) / n).unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = net.eval_with_input_derivs(&x).unwrap();
        let grad = r.input_grad.unwrap();
        let hess = r.input_hess_diag.unwrap();
        for i in 0..3 {
            let f = |d: f64| {
                let mut p = x.clone();
                p[i] += d;
                net.forward(&p).unwrap()[0]
            };
            let h1 = 1e-4;
            let g_fd = (f(h1) - f(-h1)) / (2.0 * h1);
            let h2 = 1e-3;
            // Fourth-order stencil keeps truncation below the 1e-4 budget.
            let s_fd = (-f(2.0 * h2) + 16.0 * f(h2) - 30.0 * f(0.0) + 16.0 * f(-h2) - f(-2.0 * h2)) / (12.0 * h2 * h2);
            first = first.max(relative_error(grad[i][0], g_fd, 1e-2));
            second = second.max(relative_error(hess[i][0], s_fd, 1e-2));
        }
        loss_grad = loss_grad.max(loss_gradient_error(&mut rng, trial));
    }
    GradientCheckReport {
        trials,
        max_first_derivative_error: first,
        max_second_derivative_error: second,
        max_loss_gradient_error: loss_grad,
    }
}

fn loss_gradient_error(rng: &mut ChaCha8Rng, trial: usize) -> f64 {
    let kind = if trial % 2 == 0 { Activation::Tanh } else { Activation::Sin };
    let u_net = Mlp::init(&[3, 8, 8, 1], kind, 10.0, rng.random()).unwrap();
    let velocity = if trial % 3 == 0 {
        VelocityModel::scalar(rng.random_range(1.0..3.5), 10.0)
    } else {
        let mut v = VelocityModel::field(&[2, 6, 1], Activation::Tanh, 10.0, rng.random(), 2.0).unwrap();
        // Perturb the output layer so the field is not constant.
        v.perturb(rng, 0.3);
        v
    };
    let scaling = InputScaling {
        t: (0.0, 0.6),
        x: (2.0, 10.0),
        y: (2.0, 10.0),
        u_scale: 1.0,
    };
    let data: Vec<DataPoint> = (0..16)
        .map(|_| DataPoint {
            t: rng.random_range(0.0..0.6),
            x: rng.random_range(2.0..10.0),
            y: rng.random_range(2.0..10.0),
            u: rng.random_range(-1.0..1.0),
        })
        .collect();
    let residual: Vec<ResidualPoint> = (0..16)
        .map(|_| ResidualPoint {
            t: rng.random_range(0.0..0.6),
            x: rng.random_range(2.0..10.0),
            y: rng.random_range(2.0..10.0),
        })
        .collect();
    let lambda = 100.0;
    let eval = pinn_trainer::loss(&u_net, &velocity, &data, &residual, lambda, &scaling, true).unwrap();

    let mut params = u_net.params().to_vec();
    params.extend_from_slice(&velocity.params());
    let n_u = u_net.num_params();
    let total = |p: &[f64]| -> f64 {
        let mut u = u_net.clone();
        u.load_params(&p[..n_u]).unwrap();
        let mut v = velocity.clone();
        v.load_params(&p[n_u..]).unwrap();
        pinn_trainer::loss(&u, &v, &data, &residual, lambda, &scaling, false)
            .unwrap()
            .total
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let scale = eval.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] += h;
        let up = total(&p);
        p[i] -= 2.0 * h;
        let down = total(&p);
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(eval.gradient[i], fd, 1e-3 * scale));
    }
    worst
}

#[derive(Clone, Debug, Serialize)]
pub struct CrackReport {
    pub mean_inside: f64,
    pub mean_background: f64,
    /// `mean_inside / mean_background`.
    pub ratio: f64,
    /// Speed level halfway between the background mean and the minimum.
    pub half_depth: f64,
    pub iou: f64,
}

/// Compares a predicted speed map with a rectangular crack over the grid
/// nodes inside `region`. The predicted low-speed set is every node below
/// the half-depth level.
pub fn crack_metrics(map: &SpeedField, grid: &Grid2D, crack: &Rect, region: &Region) -> CrackReport {
    let mut inside = Vec::new();
    let mut background = Vec::new();
    let mut nodes = Vec::new();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (x, y) = (grid.x(i), grid.y(j));
            if !region.contains(x, y) {
                continue;
            }
            let v = map.values[[j, i]];
            let truth = crack.contains(x, y);
            if truth {
                inside.push(v);
            } else {
                background.push(v);
            }
            nodes.push((v, truth));
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (mean_inside, mean_background) = (mean(&inside), mean(&background));
    let v_min = nodes.iter().map(|n| n.0).fold(f64::INFINITY, f64::min);
    let half_depth = 0.5 * (mean_background + v_min);
    // A map without a dip has no low-speed set.
    let has_dip = mean_background - v_min > 1e-9 * mean_background.abs();
    let (mut both, mut either) = (0usize, 0usize);
    for &(v, truth) in &nodes {
        let low = has_dip && v < half_depth;
        both += (low && truth) as usize;
        either += (low || truth) as usize;
    }
    CrackReport {
        mean_inside,
        mean_background,
        ratio: mean_inside / mean_background,
        half_depth,
        iou: if either == 0 { 0.0 } else { both as f64 / either as f64 },
    }
}

/// Bounding rectangle of the nodes whose true speed lies below the level
/// halfway between the background and the minimum, padded by half a cell.
/// `None` for a field without a dip.
pub fn low_speed_bounds(field: &SpeedField, grid: &Grid2D) -> Option<Rect> {
    let level = 0.5 * (field.background + field.min());
    if field.background - field.min() <= 1e-9 * field.background {
        return None;
    }
    let mut bounds: Option<Rect> = None;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            if field.values[[j, i]] < level {
                let (x, y) = (grid.x(i), grid.y(j));
                let b = bounds.get_or_insert(Rect::new(x, x, y, y));
                b.x_min = b.x_min.min(x);
                b.x_max = b.x_max.max(x);
                b.y_min = b.y_min.min(y);
                b.y_max = b.y_max.max(y);
            }
        }
    }
    bounds.map(|b| Rect::new(b.x_min - 0.5 * grid.dx, b.x_max + 0.5 * grid.dx, b.y_min - 0.5 * grid.dy, b.y_max + 0.5 * grid.dy))
}
