use std::path::{Path, PathBuf};

use clap::Args;
use wavepinn_core::checks::{crack_metrics, low_speed_bounds};
use wavepinn_core::diffnet::Activation;
use wavepinn_core::pinn_trainer::{
    init_models, train, wavefield_error, write_models, Region, Scale, TrainConfig, TrainPreset, VelocityKind,
};
use wavepinn_core::wavegen::{read_dataset, write_dataset, write_speed_csv, Grid2D, SpeedField, WavefieldDataset};

use crate::error::{CliError, CliResult, ResultExt};
use crate::manifest::{load_config_source, overlay, write_atomic, RunManifest};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data (WFD).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config or a previous train manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// fig4 | fig5 | fig6 | fig7 | fig8
    #[arg(long)]
    pub preset: Option<TrainPreset>,
    /// desk | paper
    #[arg(long, default_value = "desk")]
    pub scale: Scale,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    /// Fraction of grid nodes per snapshot used as data points.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Use every data and residual point in each step.
    #[arg(long, conflicts_with = "batch_size")]
    pub full_batch: bool,
    /// scalar | field
    #[arg(long)]
    pub mode: Option<VelocityKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub snapshot_start: Option<usize>,
    #[arg(long)]
    pub snapshot_count: Option<usize>,
    #[arg(long)]
    pub snapshot_stride: Option<usize>,
    /// Hidden widths of the displacement network, e.g. `32,32`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// tanh | sin
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Keep the activation slope fixed at its initial value.
    #[arg(long)]
    pub fixed_a: bool,
    /// Training window `x_min,x_max,y_min,y_max` in mm.
    #[arg(long, value_delimiter = ',', num_args = 4, allow_hyphen_values = true)]
    pub region: Option<Vec<f64>>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

/// Defaults, then preset, then config file, then flags.
pub fn resolve(args: &TrainArgs) -> CliResult<(TrainConfig, Option<PathBuf>)> {
    let base = match args.preset {
        Some(p) => p.config(args.scale),
        None => TrainConfig::default(),
    };
    let mut value = serde_json::to_value(base).expect("config serializes");
    let mut data = args.data.clone();
    if let Some(path) = &args.config {
        let src = load_config_source(path, "train")?;
        overlay(&mut value, &src.config)?;
        if data.is_none() {
            data = src.manifest.and_then(|m| m.inputs.get("data").cloned());
        }
    }
    let mut c: TrainConfig =
        serde_json::from_value(value).map_err(|e| CliError::usage(format!("train config: {e}")))?;
    if let Some(v) = args.epochs {
        c.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = args.lambda {
        c.lambda = v;
    }
    if let Some(v) = args.fraction {
        c.data_fraction = v;
    }
    if args.batch_size.is_some() {
        c.batch_size = args.batch_size;
    }
    if args.full_batch {
        c.batch_size = None;
    }
    if let Some(v) = args.mode {
        c.velocity_mode = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if args.snapshot_start.is_some() {
        c.snapshot_start = args.snapshot_start;
    }
    if let Some(v) = args.snapshot_count {
        c.snapshot_count = v;
    }
    if let Some(v) = args.snapshot_stride {
        c.snapshot_stride = v;
    }
    if let Some(v) = &args.hidden {
        c.hidden_layers = v.clone();
    }
    if let Some(v) = args.activation {
        c.activation = v;
    }
    if args.fixed_a {
        c.adaptive_a = false;
    }
    if let Some(r) = &args.region {
        c.region = Some(Region {
            x_min: r[0],
            x_max: r[1],
            y_min: r[2],
            y_max: r[3],
        });
    }
    if let Some(v) = args.log_every {
        c.log_every = v;
    }
    if args.checkpoint_every.is_some() {
        c.checkpoint_every = args.checkpoint_every;
    }
    c.validate()?;
    Ok((c, data))
}

/// Relative L2 distance between two speed maps over the nodes inside `region`.
pub fn speed_error(pred: &SpeedField, truth: &SpeedField, grid: &Grid2D, region: &Region) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            if region.contains(grid.x(i), grid.y(j)) {
                let t = truth.values[[j, i]];
                num += (pred.values[[j, i]] - t).powi(2);
                den += t * t;
            }
        }
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_atomic(path, text.as_bytes())
}

pub fn run(args: TrainArgs, deterministic: bool) -> CliResult<()> {
    let mut manifest = RunManifest::begin("train", deterministic);
    let (config, data) = resolve(&args)?;
    let data = data.ok_or_else(|| CliError::usage("--data is required"))?;
    let ds = read_dataset(&data).at(format!("reading {}", data.display()))?;
    let out = &args.out;
    std::fs::create_dir_all(out).at(format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), &config)?;

    let (u_net, velocity) = init_models(&config)?;
    let checkpoints = out.join("checkpoints");
    let result = train(&ds, u_net, velocity, &config, Some(&checkpoints))?;

    result.trace.write_csv(out.join("trace.csv")).at("writing trace.csv")?;
    write_json(&out.join("setup.json"), &result.setup)?;
    write_models(out, "final", &result.u_net, &result.velocity)?;
    let map = result.velocity.export_velocity_map(&ds.grid, &result.setup.scaling);
    write_speed_csv(&map, &ds.grid, out.join("velocity.csv")).at("writing velocity.csv")?;
    let mut map_grid = ds.grid;
    map_grid.nt = 1;
    let stack = map.values.clone().into_shape_with_order((1, map_grid.ny, map_grid.nx)).expect("contiguous map");
    let map_ds = WavefieldDataset::new(map_grid, stack, Some(map.clone()), "velocity map".into())?;
    write_dataset(&map_ds, out.join("velocity.wfd")).at("writing velocity.wfd")?;

    let last = result.trace.last().expect("trace has the final epoch");
    let mut summary = serde_json::json!({
        "epochs": last.epoch,
        "mse_u": last.mse_u,
        "mse_f": last.mse_f,
        "total": last.total,
        "a": last.a,
        "v_scalar": last.v_scalar,
        "wavefield_relative_error": wavefield_error(&result.u_net, &result.setup, &ds)?,
    });
    if let Some(truth) = &ds.true_speed {
        summary["speed_relative_error"] = speed_error(&map, truth, &ds.grid, &result.setup.region).into();
        if let Some(rect) = low_speed_bounds(truth, &ds.grid) {
            let report = crack_metrics(&map, &ds.grid, &rect, &result.setup.region);
            summary["crack"] = serde_json::to_value(report).expect("serializable");
        }
    }
    write_json(&out.join("summary.json"), &summary)?;

    manifest.input("data", &data);
    for name in ["config.json", "setup.json", "trace.csv", "velocity.csv", "velocity.wfd", "summary.json"] {
        manifest.output(name, &out.join(name));
    }
    manifest.seed = Some(config.seed);
    manifest.config = serde_json::to_value(&config).expect("config serializes");
    manifest.finish(&out.join("manifest.json"))?;
    println!("{summary}");
    Ok(())
}
