use std::path::Path;
use std::time::Instant;

use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::loss;
use super::sampling::{residual_points, sample_training_points, select_snapshots};
use super::{
    DataPoint, InputScaling, Normalization, Region, ResidualPoint, Result, TraceRecord, TrainConfig, TrainError,
    TrainTrace, VelocityKind, VelocityModel,
};
use crate::diffnet::{write_checkpoint, Mlp, MIN_SLOPE};
use crate::wavegen::{Grid2D, WavefieldDataset};
use ndarray::Array3;

/// Divergence guard: abort once the traced loss exceeds this multiple of its initial value.
const DIVERGENCE_FACTOR: f64 = 1e6;

/// Everything a finished run produces besides the trace.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub u_net: Mlp,
    pub velocity: VelocityModel,
    pub trace: TrainTrace,
    pub setup: TrainSetup,
}

/// Resolved sampling and normalization of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub scaling: InputScaling,
    pub region: Region,
    pub snapshot_ids: Vec<usize>,
    pub n_data: usize,
    pub n_residual: usize,
}

/// Fresh displacement network and velocity model for `config`.
pub fn init_models(config: &TrainConfig) -> Result<(Mlp, VelocityModel)> {
    let u_net = Mlp::init(&config.u_layer_sizes(), config.activation, config.n_scale, config.seed)?;
    let velocity = match config.velocity_mode {
        VelocityKind::Scalar => VelocityModel::scalar(config.v_init, config.scalar_scale),
        VelocityKind::Field => VelocityModel::field(
            &config.velocity_layer_sizes(),
            config.velocity_activation,
            config.n_scale,
            config.seed.wrapping_add(1),
            config.v_init,
        )?,
    };
    Ok((u_net, velocity))
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

fn subset<T: Copy>(items: &[T], size: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<T> {
    match size {
        Some(m) if m < items.len() => {
            let mut idx = index::sample(rng, items.len(), m).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| items[k]).collect()
        }
        _ => items.to_vec(),
    }
}

/// Resolves the snapshot window, samples data and collocation points and
/// fixes the normalization.
pub fn prepare(
    ds: &WavefieldDataset,
    config: &TrainConfig,
) -> Result<(TrainSetup, Vec<DataPoint>, Vec<ResidualPoint>)> {
    config.validate()?;
    ds.validate()?;
    let g = &ds.grid;
    let region = config.region.unwrap_or(Region {
        x_min: g.x0,
        x_max: g.x_max(),
        y_min: g.y0,
        y_max: g.y_max(),
    });
    let ids = select_snapshots(
        ds,
        config.snapshot_start,
        config.snapshot_count,
        config.snapshot_stride,
        Some(&region),
    )?;
    let data = sample_training_points(ds, &ids, config.data_fraction, stream_seed(config.seed, 1), Some(&region))?;
    let u_scale = match config.normalization {
        Normalization::Fixed { u_scale } => u_scale,
        Normalization::Unit => {
            let m = data.iter().fold(0.0f64, |m, p| m.max(p.u.abs()));
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let (mut t0, mut t1) = (g.t(ids[0]), g.t(*ids.last().unwrap()));
    if t1 <= t0 {
        t0 -= 0.5 * g.dt;
        t1 += 0.5 * g.dt;
    }
    let scaling = InputScaling {
        t: (t0, t1),
        x: (region.x_min, region.x_max),
        y: (region.y_min, region.y_max),
        u_scale,
    };
    scaling.validate()?;
    let n_res = config.n_residual.unwrap_or(data.len());
    let residual = residual_points(scaling.t, &region, n_res, stream_seed(config.seed, 2));
    let setup = TrainSetup {
        scaling,
        region,
        snapshot_ids: ids,
        n_data: data.len(),
        n_residual: residual.len(),
    };
    Ok((setup, data, residual))
}

/// Runs `config.epochs` ADAM steps on the composite loss.
///
/// Each epoch is one optimizer step over a batch of `batch_size` data points
/// and as many collocation points (all of them when `batch_size` is unset).
/// Losses are traced on a fixed monitor subset. Runs are bit-reproducible for
/// a fixed configuration regardless of the thread count.
pub fn train(
    ds: &WavefieldDataset,
    mut u_net: Mlp,
    mut velocity: VelocityModel,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let (setup, data, residual) = prepare(ds, config)?;
    if u_net.input_width() != 3 || u_net.output_width() != 1 {
        return Err(TrainError::Config("displacement network must map 3 inputs to 1 output".into()));
    }
    let scaling = setup.scaling;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 3));
    let monitor_data = subset(&data, config.monitor_size, &mut rng);
    let monitor_res = subset(&residual, config.monitor_size, &mut rng);

    let n_u = u_net.num_params();
    let mut params: Vec<f64> = u_net.params().to_vec();
    params.extend(velocity.params());
    let u_slope = n_u - 1;
    let v_slope = velocity.slope_index().map(|k| n_u + k);
    let mut frozen = Vec::new();
    if !config.adaptive_a {
        frozen.push(u_slope);
    }
    if let (Some(k), false) = (v_slope, config.velocity_adaptive_a) {
        frozen.push(k);
    }
    let floored: Vec<usize> = std::iter::once(u_slope).chain(v_slope).collect();
    let mut adam = AdamState::new(params.len());

    log::info!(
        "training on {} data and {} residual points from snapshots {}..={} (stride {})",
        setup.n_data,
        setup.n_residual,
        setup.snapshot_ids[0],
        setup.snapshot_ids.last().unwrap(),
        config.snapshot_stride
    );
    let started = Instant::now();
    let mut trace = TrainTrace::default();
    let mut initial = None;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 4));
    for epoch in 0..=config.epochs {
        if epoch % config.log_every == 0 || epoch == config.epochs {
            let e = loss(&u_net, &velocity, &monitor_data, &monitor_res, config.lambda, &scaling, false)?;
            let record = TraceRecord {
                epoch,
                mse_u: e.mse_u,
                mse_f: e.mse_f,
                total: e.total,
                a: u_net.slope(),
                v_scalar: velocity.scalar_value(),
                wall_time: started.elapsed().as_secs_f64(),
            };
            let reference = *initial.get_or_insert(e.total);
            if !e.total.is_finite() || e.total > DIVERGENCE_FACTOR * reference {
                return Err(TrainError::Diverged {
                    epoch,
                    loss: e.total,
                    initial: reference,
                    last_finite: trace.records.last().cloned(),
                });
            }
            if epoch % (config.log_every * 100).max(1) == 0 || epoch == config.epochs {
                log::info!(
                    "epoch {epoch}: total {:.4e} (mse_u {:.4e}, mse_f {:.4e}) a {:.4}{}",
                    e.total,
                    e.mse_u,
                    e.mse_f,
                    record.a,
                    record.v_scalar.map_or(String::new(), |v| format!(" v {v:.4}"))
                );
            }
            trace.records.push(record);
        }
        if epoch == config.epochs {
            break;
        }

        let (bd, br): (Vec<DataPoint>, Vec<ResidualPoint>);
        let (d, r): (&[DataPoint], &[ResidualPoint]) = match config.batch_size {
            Some(b) if b < data.len() || b < residual.len() => {
                bd = subset(&data, Some(b), &mut batch_rng);
                br = subset(&residual, Some(b), &mut batch_rng);
                (&bd, &br)
            }
            _ => (&data, &residual),
        };
        let mut e = loss(&u_net, &velocity, d, r, config.lambda, &scaling, true)?;
        for &k in &frozen {
            e.gradient[k] = 0.0;
        }
        adam_step(&mut adam, &mut params, &e.gradient, config.learning_rate, &config.adam)?;
        for &k in &floored {
            params[k] = params[k].max(MIN_SLOPE);
        }
        u_net.load_params(&params[..n_u])?;
        velocity.load_params(&params[n_u..])?;

        let done = epoch + 1;
        if let (Some(every), Some(dir)) = (config.checkpoint_every, checkpoint_dir) {
            if done % every == 0 {
                write_models(dir, &format!("{done:07}"), &u_net, &velocity)?;
            }
        }
    }
    Ok(TrainOutcome {
        u_net,
        velocity,
        trace,
        setup,
    })
}

/// Network displacement (in data units) on every grid node of the training
/// snapshots, shaped `[snapshot_ids.len(), ny, nx]`.
pub fn predict_wavefield(u_net: &Mlp, setup: &TrainSetup, grid: &Grid2D) -> Result<Array3<f64>> {
    let s = &setup.scaling;
    let mut out = Array3::zeros((setup.snapshot_ids.len(), grid.ny, grid.nx));
    for (k, &n) in setup.snapshot_ids.iter().enumerate() {
        let tn = s.norm_t(grid.t(n));
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let u = u_net.forward(&[tn, s.norm_x(grid.x(i)), s.norm_y(grid.y(j))])?;
                out[[k, j, i]] = u[0] * s.u_scale;
            }
        }
    }
    Ok(out)
}

/// Relative L2 error of the network against `reference` over the training
/// snapshots and the nodes inside the training region.
pub fn wavefield_error(u_net: &Mlp, setup: &TrainSetup, reference: &WavefieldDataset) -> Result<f64> {
    let g = &reference.grid;
    let pred = predict_wavefield(u_net, setup, g)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, &n) in setup.snapshot_ids.iter().enumerate() {
        for j in 0..g.ny {
            for i in 0..g.nx {
                if setup.region.contains(g.x(i), g.y(j)) {
                    let r = reference.snapshots[[n, j, i]];
                    num += (pred[[k, j, i]] - r).powi(2);
                    den += r * r;
                }
            }
        }
    }
    Ok((num / den.max(f64::MIN_POSITIVE)).sqrt())
}

/// Writes `u_net_<tag>.ckpt` and the velocity model (`velocity_net_<tag>.ckpt`
/// or `velocity_scalar_<tag>.json`) into `dir`.
pub fn write_models(dir: &Path, tag: &str, u_net: &Mlp, velocity: &VelocityModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_checkpoint(u_net, dir.join(format!("u_net_{tag}.ckpt")))?;
    match velocity.net() {
        Some(net) => write_checkpoint(net, dir.join(format!("velocity_net_{tag}.ckpt")))?,
        None => {
            let json = serde_json::json!({ "v": velocity.scalar_value(), "theta": velocity.params()[0] });
            std::fs::write(dir.join(format!("velocity_scalar_{tag}.json")), json.to_string())?;
        }
    }
    Ok(())
}
