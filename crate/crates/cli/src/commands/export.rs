use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use wavepinn_core::diffnet::read_checkpoint;
use wavepinn_core::pinn_trainer::{predict_wavefield, TrainConfig, TrainSetup, VelocityModel};
use wavepinn_core::wavegen::{read_dataset, relative_l2_error};

use super::train::speed_error;
use crate::error::{CliError, CliResult, ResultExt};
use crate::manifest::{write_atomic, RunManifest};

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory for the CSV and JSON files.
    #[arg(long)]
    pub out: PathBuf,
    /// Data the run was trained on (defaults to the path in the run manifest).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Noise-free stack to score the prediction against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Snapshot indices for comparison triplets (default: first, middle and
    /// last training snapshot).
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<usize>>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).at(format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn load_velocity(run: &Path, config: &TrainConfig) -> CliResult<VelocityModel> {
    let net = run.join("velocity_net_final.ckpt");
    if net.exists() {
        return Ok(VelocityModel::from_net(read_checkpoint(&net).at(format!("reading {}", net.display()))?)?);
    }
    let scalar: serde_json::Value = read_json(&run.join("velocity_scalar_final.json"))?;
    let theta = scalar["theta"]
        .as_f64()
        .ok_or_else(|| CliError::io("velocity_scalar_final.json has no numeric 'theta'"))?;
    let mut v = VelocityModel::scalar(config.v_init, config.scalar_scale);
    v.load_params(&[theta])?;
    Ok(v)
}

pub fn run(args: ExportArgs, deterministic: bool) -> CliResult<()> {
    let mut manifest = RunManifest::begin("export", deterministic);
    let run = &args.run;
    let required = ["config.json", "setup.json", "trace.csv", "u_net_final.ckpt"];
    let mut missing: Vec<String> = required
        .iter()
        .filter(|f| !run.join(f).exists())
        .map(|f| f.to_string())
        .collect();
    if !run.join("velocity_net_final.ckpt").exists() && !run.join("velocity_scalar_final.json").exists() {
        missing.push("velocity_net_final.ckpt or velocity_scalar_final.json".into());
    }
    if !missing.is_empty() {
        return Err(CliError::io(format!(
            "run directory {} is missing: {}",
            run.display(),
            missing.join(", ")
        )));
    }
    let data = match &args.data {
        Some(d) => d.clone(),
        None => RunManifest::read(&run.join("manifest.json"))?
            .inputs
            .get("data")
            .cloned()
            .ok_or_else(|| CliError::usage("run manifest has no data input; pass --data"))?,
    };
    let config: TrainConfig = read_json(&run.join("config.json"))?;
    let setup: TrainSetup = read_json(&run.join("setup.json"))?;
    let u_net = read_checkpoint(run.join("u_net_final.ckpt")).at("reading u_net_final.ckpt")?;
    let velocity = load_velocity(run, &config)?;
    let ds = read_dataset(&data).at(format!("reading {}", data.display()))?;
    let g = ds.grid;
    if setup.snapshot_ids.iter().any(|&n| n >= g.nt) {
        return Err(CliError::usage(format!("{} does not match the run's snapshot window", data.display())));
    }
    let out = &args.out;
    std::fs::create_dir_all(out).at(format!("creating {}", out.display()))?;

    std::fs::copy(run.join("trace.csv"), out.join("trace.csv")).at("copying trace.csv")?;

    let map = velocity.export_velocity_map(&g, &setup.scaling);
    let mut heat = String::from("y\\x");
    for i in 0..g.nx {
        write!(heat, ",{}", g.x(i)).unwrap();
    }
    heat.push('\n');
    for j in 0..g.ny {
        write!(heat, "{}", g.y(j)).unwrap();
        for i in 0..g.nx {
            write!(heat, ",{}", map.values[[j, i]]).unwrap();
        }
        heat.push('\n');
    }
    write_atomic(&out.join("velocity_heatmap.csv"), heat.as_bytes())?;

    let pred = predict_wavefield(&u_net, &setup, &g)?;
    let ids = &setup.snapshot_ids;
    let picks = match &args.snapshots {
        Some(p) => p.clone(),
        None => {
            let mut p = vec![ids[0], ids[ids.len() / 2], ids[ids.len() - 1]];
            p.dedup();
            p
        }
    };
    for &n in &picks {
        let k = ids
            .iter()
            .position(|&m| m == n)
            .ok_or_else(|| CliError::usage(format!("snapshot {n} is not one of the run's training snapshots")))?;
        let mut csv = String::from("x,y,data,prediction,difference\n");
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (d, p) = (ds.snapshots[[n, j, i]], pred[[k, j, i]]);
                writeln!(csv, "{},{},{d},{p},{}", g.x(i), g.y(j), p - d).unwrap();
            }
        }
        write_atomic(&out.join(format!("snapshot_{n:05}.csv")), csv.as_bytes())?;
    }

    // Errors are taken over the training snapshots and the training region.
    let window = |stack: &wavepinn_core::wavegen::WavefieldDataset| {
        let mut sel = pred.clone();
        let mut reference = pred.clone();
        for (k, &n) in ids.iter().enumerate() {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    if setup.region.contains(g.x(i), g.y(j)) {
                        reference[[k, j, i]] = stack.snapshots[[n, j, i]];
                    } else {
                        sel[[k, j, i]] = 0.0;
                        reference[[k, j, i]] = 0.0;
                    }
                }
            }
        }
        relative_l2_error(&sel, &reference)
    };
    let mut errors = serde_json::json!({ "wavefield_vs_data": window(&ds) });
    if let Some(path) = &args.reference {
        let clean = read_dataset(path).at(format!("reading {}", path.display()))?;
        if clean.grid != g {
            return Err(CliError::usage("reference grid differs from the data grid"));
        }
        errors["wavefield_vs_reference"] = window(&clean).into();
        manifest.input("reference", path);
    }
    if let Some(truth) = &ds.true_speed {
        errors["speed_vs_truth"] = speed_error(&map, truth, &g, &setup.region).into();
        let mut csv = String::from("x,y,true,predicted,difference\n");
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (t, p) = (truth.values[[j, i]], map.values[[j, i]]);
                writeln!(csv, "{},{},{t},{p},{}", g.x(i), g.y(j), p - t).unwrap();
            }
        }
        write_atomic(&out.join("velocity_comparison.csv"), csv.as_bytes())?;
    }
    let text = serde_json::to_string_pretty(&errors).expect("serializable") + "\n";
    write_atomic(&out.join("errors.json"), text.as_bytes())?;

    manifest.input("run", run);
    manifest.input("data", &data);
    manifest.output("dir", out);
    manifest.config = serde_json::json!({ "snapshots": picks });
    manifest.finish(&out.join("manifest.json"))?;
    println!("{errors}");
    Ok(())
}
