//! Physics-informed training of a displacement network and a velocity model.
//!
//! The displacement network sees normalized coordinates `(τ, ξ, η) ∈ [−1, 1]³`
//! and predicts `u / u_scale`. The residual is reported in physical time and
//! length units:
//!
//! ```text
//! f = c_t² U_ττ − v² (c_x² U_ξξ + c_y² U_ηη),    c_t = 2 / (t₁ − t₀), ...
//! total = λ · mean((U − u/u_scale)²) + mean(f²)
//! ```

mod adam;
mod loss;
mod presets;
mod sampling;
mod train;
mod velocity;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffnet::{Activation, DiffnetError};
use crate::wavegen::WaveError;

pub use adam::{adam_step, AdamParams, AdamState};
pub use loss::{loss, residual, LossEval};
pub use presets::{Scale, TrainPreset, DESK_MIN_EPOCHS, DESK_WINDOW};
pub use sampling::{residual_points, sample_training_points, select_snapshots};
pub use train::{
    init_models, predict_wavefield, prepare, train, wavefield_error, write_models, TrainOutcome, TrainSetup,
};
pub use velocity::{VelocityKind, VelocityModel, DEFAULT_V_MAX, DEFAULT_V_MIN};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("empty selection: {0}")]
    EmptySelection(String),
    #[error("training diverged at epoch {epoch}: total loss {loss:e} vs initial {initial:e}{}", last_row(.last_finite))]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
        last_finite: Option<TraceRecord>,
    },
    #[error(transparent)]
    Network(#[from] DiffnetError),
    #[error(transparent)]
    Wave(#[from] WaveError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn last_row(r: &Option<TraceRecord>) -> String {
    match r {
        Some(r) => format!("; last finite trace row: {}", r.csv_row()),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Training sample: a measured displacement at a physical space-time point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub u: f64,
}

/// Collocation point for the wave-equation residual.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Affine map of physical `(t, x, y)` ranges onto `[−1, 1]` and the
/// displacement scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub t: (f64, f64),
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub u_scale: f64,
}

#[inline]
fn norm(v: f64, (lo, hi): (f64, f64)) -> f64 {
    2.0 * (v - lo) / (hi - lo) - 1.0
}

impl InputScaling {
    /// Identity map (`[−1, 1]` ranges, unit displacement scale).
    pub fn identity() -> Self {
        InputScaling {
            t: (-1.0, 1.0),
            x: (-1.0, 1.0),
            y: (-1.0, 1.0),
            u_scale: 1.0,
        }
    }

    #[inline]
    pub fn norm_t(&self, t: f64) -> f64 {
        norm(t, self.t)
    }

    #[inline]
    pub fn norm_x(&self, x: f64) -> f64 {
        norm(x, self.x)
    }

    #[inline]
    pub fn norm_y(&self, y: f64) -> f64 {
        norm(y, self.y)
    }

    /// Chain-rule factors `(c_t, c_x, c_y)`: `∂/∂t = c_t ∂/∂τ` and so on.
    pub fn factors(&self) -> (f64, f64, f64) {
        (
            2.0 / (self.t.1 - self.t.0),
            2.0 / (self.x.1 - self.x.0),
            2.0 / (self.y.1 - self.y.0),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("t", self.t), ("x", self.x), ("y", self.y)] {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(TrainError::Config(format!("{name} range ({lo}, {hi}) is empty")));
            }
        }
        if !(self.u_scale.is_finite() && self.u_scale > 0.0) {
            return Err(TrainError::Config(format!("u_scale must be positive, got {}", self.u_scale)));
        }
        Ok(())
    }
}

/// Spatial training window in mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// How the displacement is rescaled before fitting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Inputs mapped to `[−1, 1]`, displacement divided by its largest magnitude.
    Unit,
    /// Inputs mapped to `[−1, 1]`, displacement divided by a fixed value.
    Fixed { u_scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Points per optimizer step for each of the data and residual sets;
    /// `None` uses every point (full batch).
    pub batch_size: Option<usize>,
    pub data_fraction: f64,
    /// First snapshot of the training window; `None` picks the window with
    /// the most signal energy.
    pub snapshot_start: Option<usize>,
    pub snapshot_count: usize,
    pub snapshot_stride: usize,
    /// Residual point count; `None` matches the number of data points.
    pub n_residual: Option<usize>,
    pub adam: AdamParams,
    pub adaptive_a: bool,
    pub velocity_adaptive_a: bool,
    pub n_scale: f64,
    pub seed: u64,
    pub normalization: Normalization,
    /// Spatial window; `None` uses the whole grid.
    pub region: Option<Region>,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub velocity_mode: VelocityKind,
    pub velocity_hidden_layers: Vec<usize>,
    pub velocity_activation: Activation,
    pub v_init: f64,
    /// Fixed multiplier on the scalar speed parameter.
    pub scalar_scale: f64,
    /// Trace every this many epochs (the first and last epochs are always traced).
    pub log_every: usize,
    /// Size of the fixed point subset used for traced losses; `None` traces
    /// the full sets.
    pub monitor_size: Option<usize>,
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 100.0,
            learning_rate: 5e-4,
            epochs: 2000,
            batch_size: None,
            data_fraction: 0.2,
            snapshot_start: None,
            snapshot_count: 30,
            snapshot_stride: 1,
            n_residual: None,
            adam: AdamParams::default(),
            adaptive_a: true,
            velocity_adaptive_a: true,
            n_scale: 10.0,
            seed: 0,
            normalization: Normalization::Unit,
            region: None,
            hidden_layers: vec![32, 32],
            activation: Activation::Sin,
            velocity_mode: VelocityKind::Scalar,
            velocity_hidden_layers: vec![32, 32],
            velocity_activation: Activation::Tanh,
            v_init: 2.0,
            scalar_scale: 10.0,
            log_every: 1,
            monitor_size: None,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(TrainError::Config(m));
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return err(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return err("epochs must be at least 1".into());
        }
        if self.batch_size == Some(0) {
            return err("batch_size must be at least 1".into());
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return err(format!("data_fraction must lie in (0, 1], got {}", self.data_fraction));
        }
        if self.snapshot_count == 0 || self.snapshot_stride == 0 {
            return err("snapshot_count and snapshot_stride must be at least 1".into());
        }
        if self.n_residual == Some(0) {
            return err("n_residual must be at least 1".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return err(format!("invalid ADAM constants {a:?}"));
        }
        if !(self.n_scale.is_finite() && self.n_scale >= 1.0) {
            return err(format!("n_scale must be at least 1, got {}", self.n_scale));
        }
        if let Normalization::Fixed { u_scale } = self.normalization {
            if !(u_scale.is_finite() && u_scale > 0.0) {
                return err(format!("u_scale must be positive, got {u_scale}"));
            }
        }
        if let Some(r) = &self.region {
            if !(r.x_max > r.x_min && r.y_max > r.y_min) {
                return err(format!("empty region {r:?}"));
            }
        }
        if self.hidden_layers.iter().any(|&w| w == 0) || self.velocity_hidden_layers.iter().any(|&w| w == 0) {
            return err("hidden layer widths must be positive".into());
        }
        if !(self.v_init > DEFAULT_V_MIN && self.v_init < DEFAULT_V_MAX) {
            return err(format!("v_init must lie in ({DEFAULT_V_MIN}, {DEFAULT_V_MAX}), got {}", self.v_init));
        }
        if !(self.scalar_scale.is_finite() && self.scalar_scale > 0.0) {
            return err(format!("scalar_scale must be positive, got {}", self.scalar_scale));
        }
        if self.log_every == 0 || self.checkpoint_every == Some(0) || self.monitor_size == Some(0) {
            return err("log_every, checkpoint_every and monitor_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn u_layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![3];
        s.extend(&self.hidden_layers);
        s.push(1);
        s
    }

    pub fn velocity_layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![2];
        s.extend(&self.velocity_hidden_layers);
        s.push(1);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub mse_u: f64,
    pub mse_f: f64,
    pub total: f64,
    pub a: f64,
    pub v_scalar: Option<f64>,
    /// Seconds since the start of training. Not written to the CSV so that
    /// reruns produce identical files.
    pub wall_time: f64,
}

impl TraceRecord {
    fn csv_row(&self) -> String {
        let v = self.v_scalar.map_or(String::new(), |v| v.to_string());
        format!("{},{},{},{},{},{}", self.epoch, self.mse_u, self.mse_f, self.total, self.a, v)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "epoch,mse_u,mse_f,total,a,v_scalar";

impl TrainTrace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Traced total loss at the largest logged epoch not after `epoch`.
    pub fn total_at(&self, epoch: usize) -> Option<f64> {
        self.records.iter().rev().find(|r| r.epoch <= epoch).map(|r| r.total)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.records.len() + 1));
        s.push_str(TRACE_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(s, "{}", r.csv_row()).unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(TrainError::Config("trace CSV header mismatch".into()));
        }
        let bad = |l: &str| TrainError::Config(format!("malformed trace row '{l}'"));
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(line));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            records.push(TraceRecord {
                epoch: f[0].parse().map_err(|_| bad(line))?,
                mse_u: num(f[1])?,
                mse_f: num(f[2])?,
                total: num(f[3])?,
                a: num(f[4])?,
                v_scalar: if f[5].is_empty() { None } else { Some(num(f[5])?) },
                wall_time: 0.0,
            });
        }
        Ok(TrainTrace { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn non_positive_lambda_rejected() {
        for lambda in [0.0, -1.0, f64::NAN] {
            let c = TrainConfig { lambda, ..TrainConfig::default() };
            assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn fraction_bounds() {
        for (f, ok) in [(0.0, false), (1e-3, true), (1.0, true), (1.01, false)] {
            let c = TrainConfig {
                data_fraction: f,
                ..TrainConfig::default()
            };
            assert_eq!(c.validate().is_ok(), ok, "fraction {f}");
        }
    }

    #[test]
    fn scaling_factors_and_endpoints() {
        let s = InputScaling {
            t: (1.0, 1.6),
            x: (2.0, 10.0),
            y: (0.0, 4.0),
            u_scale: 1.0,
        };
        assert_eq!(s.norm_t(1.0), -1.0);
        assert_eq!(s.norm_x(10.0), 1.0);
        assert_eq!(s.norm_y(2.0), 0.0);
        let (ct, cx, cy) = s.factors();
        assert!((ct - 2.0 / 0.6).abs() < 1e-12 && cx == 0.25 && cy == 0.5);
    }

    #[test]
    fn trace_csv_round_trip() {
        let trace = TrainTrace {
            records: vec![
                TraceRecord {
                    epoch: 0,
                    mse_u: 0.25,
                    mse_f: 1.5e-3,
                    total: 25.0015,
                    a: 0.1,
                    v_scalar: Some(2.0),
                    wall_time: 0.3,
                },
                TraceRecord {
                    epoch: 10,
                    mse_u: 0.125,
                    mse_f: 0.0,
                    total: 12.5,
                    a: 0.11,
                    v_scalar: None,
                    wall_time: 1.0,
                },
            ],
        };
        let csv = trace.to_csv();
        assert!(csv.starts_with("epoch,mse_u,mse_f,total,a,v_scalar\n"));
        let back = TrainTrace::parse_csv(&csv).unwrap();
        assert_eq!(back.records.len(), 2);
        assert_eq!(back.records[0].v_scalar, Some(2.0));
        assert_eq!(back.records[1].v_scalar, None);
        assert_eq!(back.to_csv(), csv);
        assert_eq!(trace.total_at(5), Some(25.0015));
    }

    #[test]
    fn config_json_round_trip_and_partial_input() {
        let c = TrainConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), c);
        let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 7, "velocity_mode": "field"}"#).unwrap();
        assert_eq!(partial.epochs, 7);
        assert_eq!(partial.velocity_mode, VelocityKind::Field);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 7}"#).is_err());
    }
}
