use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{InputScaling, TrainError};
use crate::diffnet::{Activation, Mlp};
use crate::wavegen::{Grid2D, SpeedField};

/// Lower and upper speed bounds in mm/µs. Speeds are `v_min + softplus(·)`,
/// so they never drop below `v_min`; `v_max` clamps reported maps only.
pub const DEFAULT_V_MIN: f64 = 0.1;
pub const DEFAULT_V_MAX: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityKind {
    Scalar,
    Field,
}

impl std::str::FromStr for VelocityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scalar" => Ok(VelocityKind::Scalar),
            "field" => Ok(VelocityKind::Field),
            other => Err(format!("unknown velocity mode '{other}' (expected scalar or field)")),
        }
    }
}

#[derive(Clone, Debug)]
enum Repr {
    /// `v = v_min + softplus(scale·θ)`; the fixed scale plays the same role as
    /// the activation scale factor and speeds up ADAM on this single parameter.
    Scalar { theta: f64, scale: f64 },
    /// `v(x, y) = v_min + softplus(net(ξ, η))` on normalized coordinates.
    Field { net: Mlp },
}

/// Trainable sound-speed model.
#[derive(Clone, Debug)]
pub struct VelocityModel {
    repr: Repr,
    pub v_min: f64,
    pub v_max: f64,
}

#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl VelocityModel {
    pub fn scalar(initial: f64, scale: f64) -> Self {
        let theta = softplus_inv(initial - DEFAULT_V_MIN) / scale;
        VelocityModel {
            repr: Repr::Scalar { theta, scale },
            v_min: DEFAULT_V_MIN,
            v_max: DEFAULT_V_MAX,
        }
    }

    /// Network `(x, y) → v` whose output bias puts the initial field near
    /// `initial`; output weights start at zero so the initial field is flat.
    pub fn field(layer_sizes: &[usize], activation: Activation, n: f64, seed: u64, initial: f64) -> Result<Self, TrainError> {
        if layer_sizes.first() != Some(&2) || layer_sizes.last() != Some(&1) {
            return Err(TrainError::Config(format!(
                "velocity network must map 2 inputs to 1 output, got {layer_sizes:?}"
            )));
        }
        let mut net = Mlp::init(layer_sizes, activation, n, seed)?;
        let last = layer_sizes.len() - 2;
        let (w, b) = net.layer_params_mut(last);
        w.fill(0.0);
        b[0] = softplus_inv(initial - DEFAULT_V_MIN);
        Ok(VelocityModel {
            repr: Repr::Field { net },
            v_min: DEFAULT_V_MIN,
            v_max: DEFAULT_V_MAX,
        })
    }

    pub fn from_net(net: Mlp) -> Result<Self, TrainError> {
        if net.input_width() != 2 || net.output_width() != 1 {
            return Err(TrainError::Config("velocity network must map 2 inputs to 1 output".into()));
        }
        Ok(VelocityModel {
            repr: Repr::Field { net },
            v_min: DEFAULT_V_MIN,
            v_max: DEFAULT_V_MAX,
        })
    }

    pub fn kind(&self) -> VelocityKind {
        match self.repr {
            Repr::Scalar { .. } => VelocityKind::Scalar,
            Repr::Field { .. } => VelocityKind::Field,
        }
    }

    pub fn scalar_value(&self) -> Option<f64> {
        match self.repr {
            Repr::Scalar { theta, scale } => Some(self.v_min + softplus(scale * theta)),
            Repr::Field { .. } => None,
        }
    }

    pub fn net(&self) -> Option<&Mlp> {
        match &self.repr {
            Repr::Field { net } => Some(net),
            Repr::Scalar { .. } => None,
        }
    }

    pub fn num_params(&self) -> usize {
        match &self.repr {
            Repr::Scalar { .. } => 1,
            Repr::Field { net } => net.num_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Scalar { theta, .. } => vec![*theta],
            Repr::Field { net } => net.params().to_vec(),
        }
    }

    pub fn load_params(&mut self, src: &[f64]) -> Result<(), TrainError> {
        match &mut self.repr {
            Repr::Scalar { theta, .. } => {
                if src.len() != 1 {
                    return Err(TrainError::Config(format!("scalar velocity takes 1 parameter, got {}", src.len())));
                }
                *theta = src[0];
            }
            Repr::Field { net } => net.load_params(src)?,
        }
        Ok(())
    }

    /// Index of the adaptive slope inside [`VelocityModel::params`], if any.
    pub fn slope_index(&self) -> Option<usize> {
        match &self.repr {
            Repr::Field { net } => Some(net.num_params() - 1),
            Repr::Scalar { .. } => None,
        }
    }

    /// Speed at a physical point.
    pub fn speed_at(&self, x: f64, y: f64, scaling: &InputScaling) -> f64 {
        match &self.repr {
            Repr::Scalar { .. } => self.scalar_value().unwrap(),
            Repr::Field { net } => {
                let (xi, eta) = (scaling.norm_x(x), scaling.norm_y(y));
                self.v_min + softplus(net.forward(&[xi, eta]).unwrap()[0])
            }
        }
    }

    /// Evaluates the model at every grid node, clamped to `[v_min, v_max]`.
    pub fn export_velocity_map(&self, grid: &Grid2D, scaling: &InputScaling) -> SpeedField {
        let values = match &self.repr {
            Repr::Scalar { .. } => Array2::from_elem((grid.ny, grid.nx), self.scalar_value().unwrap()),
            Repr::Field { net } => {
                let mut inputs = Array2::<f64>::zeros((grid.nx * grid.ny, 2));
                for j in 0..grid.ny {
                    for i in 0..grid.nx {
                        inputs[[j * grid.nx + i, 0]] = scaling.norm_x(grid.x(i));
                        inputs[[j * grid.nx + i, 1]] = scaling.norm_y(grid.y(j));
                    }
                }
                let tape = net.record(inputs.view(), &[]).unwrap();
                Array2::from_shape_fn((grid.ny, grid.nx), |(j, i)| self.v_min + softplus(tape.value(j * grid.nx + i, 0)))
            }
        }
        .mapv(|v| v.clamp(self.v_min, self.v_max));
        let mut sorted: Vec<f64> = values.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let background = sorted[sorted.len() / 2];
        SpeedField { values, background }
    }

    pub(crate) fn repr_scalar(&self) -> Option<(f64, f64)> {
        match self.repr {
            Repr::Scalar { theta, scale } => Some((theta, scale)),
            Repr::Field { .. } => None,
        }
    }

    /// Randomizes the output layer (used by gradient checks to get a non-flat field).
    pub(crate) fn perturb(&mut self, rng: &mut impl Rng, amount: f64) {
        match &mut self.repr {
            Repr::Scalar { theta, .. } => *theta += rng.random_range(-amount..amount),
            Repr::Field { net } => {
                let last = net.layer_sizes().len() - 2;
                let (w, _) = net.layer_params_mut(last);
                for x in w {
                    *x = rng.random_range(-amount..amount);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scaling() -> InputScaling {
        InputScaling {
            t: (0.0, 1.0),
            x: (0.0, 11.8),
            y: (0.0, 11.8),
            u_scale: 1.0,
        }
    }

    #[test]
    fn scalar_initial_value_round_trips() {
        let v = VelocityModel::scalar(2.9, 10.0);
        assert!((v.scalar_value().unwrap() - 2.9).abs() < 1e-12);
    }

    #[test]
    fn scalar_mode_exports_constant_field() {
        let v = VelocityModel::scalar(2.9, 10.0);
        let g = Grid2D::desk();
        let f = v.export_velocity_map(&g, &scaling());
        assert!(f.values.iter().all(|&s| (s - 2.9).abs() < 1e-12));
    }

    #[test]
    fn fresh_field_is_flat_at_initial_speed() {
        let v = VelocityModel::field(&[2, 16, 16, 1], Activation::Tanh, 10.0, 3, 2.0).unwrap();
        let g = Grid2D::desk();
        let f = v.export_velocity_map(&g, &scaling());
        assert!(f.values.iter().all(|&s| (s - 2.0).abs() < 1e-12));
    }

    #[test]
    fn exported_map_matches_pointwise_evaluation() {
        let mut v = VelocityModel::field(&[2, 8, 1], Activation::Tanh, 1.0, 3, 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        v.perturb(&mut rng, 0.5);
        let g = Grid2D::desk();
        let s = scaling();
        let f = v.export_velocity_map(&g, &s);
        for (j, i) in [(0, 0), (13, 40), (59, 59)] {
            let direct = v.speed_at(g.x(i), g.y(j), &s).clamp(v.v_min, v.v_max);
            assert!((f.values[[j, i]] - direct).abs() < 1e-12);
        }
        assert!(f.values.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn softplus_helpers_are_consistent() {
        for z in [-5.0, -0.3, 0.0, 1.7, 40.0] {
            assert!((softplus_inv(softplus(z)) - z).abs() < 1e-9);
        }
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    use rand::SeedableRng;
}
