use std::path::PathBuf;

use clap::Args;
use wavepinn_core::checks::{gradient_check, grid_convergence, wavefront_speed};

use crate::error::{CliError, CliResult};
use crate::manifest::write_atomic;

/// Tolerances checked by `selftest`.
pub const MAX_INPUT_DERIVATIVE_ERROR: f64 = 1e-5;
pub const MAX_PARAMETER_GRADIENT_ERROR: f64 = 1e-4;
pub const MAX_WAVEFRONT_ERROR: f64 = 0.02;
pub const CONVERGENCE_RATIO: (f64, f64) = (3.2, 4.8);

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Random networks in the derivative check.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: SelftestArgs) -> CliResult<()> {
    if args.trials == 0 {
        return Err(CliError::usage("--trials must be positive"));
    }
    let grad = gradient_check(args.trials, args.seed);
    let front = wavefront_speed(2.9);
    let conv = grid_convergence();
    let grad_ok = grad.max_first_derivative_error < MAX_INPUT_DERIVATIVE_ERROR
        && grad.max_second_derivative_error < MAX_INPUT_DERIVATIVE_ERROR
        && grad.max_loss_gradient_error < MAX_PARAMETER_GRADIENT_ERROR;
    let front_ok = front.relative_error < MAX_WAVEFRONT_ERROR;
    let conv_ok = (CONVERGENCE_RATIO.0..=CONVERGENCE_RATIO.1).contains(&conv.ratio);
    let report = serde_json::json!({
        "gradient_check": { "pass": grad_ok, "report": grad },
        "wavefront_speed": { "pass": front_ok, "report": front },
        "grid_convergence": { "pass": conv_ok, "report": conv },
    });
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    if let Some(path) = &args.out {
        write_atomic(path, (text.clone() + "\n").as_bytes())?;
    }
    println!("{text}");
    if grad_ok && front_ok && conv_ok {
        Ok(())
    } else {
        Err(CliError::numeric("self-test failed"))
    }
}
