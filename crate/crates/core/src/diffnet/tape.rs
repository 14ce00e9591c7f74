use ndarray::{linalg::general_mat_mul, Array2, ArrayView2, ArrayViewMut2};

use super::{DiffnetError, Mlp, Result};

/// Forward record of a batch evaluation with input tangents.
///
/// Rows are grouped per sample: row `b·C` holds values, rows `b·C + 1 + d`
/// the first tangents along tracked direction `d` and rows `b·C + 1 + D + d`
/// the pure second tangents, with `C = 1 + 2D`.
#[derive(Debug)]
pub struct Tape {
    stamp: (u64, u64),
    batch: usize,
    dirs: usize,
    channels: usize,
    slope: f64,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn num_dirs(&self) -> usize {
        self.dirs
    }

    #[inline]
    pub fn value(&self, b: usize, o: usize) -> f64 {
        self.output[[b * self.channels, o]]
    }

    /// First derivative of output `o` along tracked direction `d`.
    #[inline]
    pub fn first(&self, b: usize, d: usize, o: usize) -> f64 {
        self.output[[b * self.channels + 1 + d, o]]
    }

    /// Pure second derivative of output `o` along tracked direction `d`.
    #[inline]
    pub fn second(&self, b: usize, d: usize, o: usize) -> f64 {
        self.output[[b * self.channels + 1 + self.dirs + d, o]]
    }
}

/// Sensitivities of a scalar loss to every recorded output and tangent.
#[derive(Clone, Debug)]
pub struct Cotangent {
    batch: usize,
    dirs: usize,
    channels: usize,
    grad: Array2<f64>,
}

impl Cotangent {
    pub fn zeros_like(tape: &Tape) -> Self {
        Cotangent {
            batch: tape.batch,
            dirs: tape.dirs,
            channels: tape.channels,
            grad: Array2::zeros(tape.output.raw_dim()),
        }
    }

    #[inline]
    pub fn add_value(&mut self, b: usize, o: usize, g: f64) {
        self.grad[[b * self.channels, o]] += g;
    }

    #[inline]
    pub fn add_first(&mut self, b: usize, d: usize, o: usize, g: f64) {
        self.grad[[b * self.channels + 1 + d, o]] += g;
    }

    #[inline]
    pub fn add_second(&mut self, b: usize, d: usize, o: usize, g: f64) {
        self.grad[[b * self.channels + 1 + self.dirs + d, o]] += g;
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Mlp {
    /// Evaluates a batch (`rows = samples`) and records the tape, tracking
    /// first and pure second derivatives along the input coordinates `dirs`.
    pub fn record(&self, inputs: ArrayView2<'_, f64>, dirs: &[usize]) -> Result<Tape> {
        let width = self.input_width();
        if inputs.ncols() != width {
            return Err(DiffnetError::DimensionMismatch {
                expected: width,
                got: inputs.ncols(),
            });
        }
        if let Some(&dir) = dirs.iter().find(|&&d| d >= width) {
            return Err(DiffnetError::InvalidDirection { dir, width });
        }
        let batch = inputs.nrows();
        let nd = dirs.len();
        let channels = 1 + 2 * nd;
        let slope = self.effective_slope();

        let mut h = Array2::<f64>::zeros((batch * channels, width));
        for (b, x) in inputs.outer_iter().enumerate() {
            h.row_mut(b * channels).assign(&x);
            for (d, &dir) in dirs.iter().enumerate() {
                h[[b * channels + 1 + d, dir]] = 1.0;
            }
        }

        let layers = self.num_layers();
        let mut recorded_inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers - 1);
        for k in 0..layers {
            let w = self.weights(k);
            let bias = self.biases(k);
            let mut z = Array2::<f64>::zeros((batch * channels, w.nrows()));
            general_mat_mul(1.0, &h, &w.t(), 0.0, &mut z);
            for b in 0..batch {
                let mut row = z.row_mut(b * channels);
                row += &bias;
            }
            if k + 1 == layers {
                recorded_inputs.push(h);
                return Ok(Tape {
                    stamp: self.stamp(),
                    batch,
                    dirs: nd,
                    channels,
                    slope,
                    inputs: recorded_inputs,
                    pre,
                    output: z,
                });
            }
            let y = activate(self, &z, batch, nd, slope);
            recorded_inputs.push(h);
            pre.push(z);
            h = y;
        }
        unreachable!("network has at least one layer")
    }

    /// Accumulates parameter gradients of the loss described by `cotangent`
    /// into `grads` (which must have [`Mlp::num_params`] entries).
    pub fn backward(&self, tape: &Tape, cotangent: &Cotangent, grads: &mut [f64]) -> Result<()> {
        if tape.stamp != self.stamp() {
            return Err(DiffnetError::DetachedGraph);
        }
        if cotangent.grad.dim() != tape.output.dim() || cotangent.channels != tape.channels {
            return Err(DiffnetError::CotangentShape {
                expected: tape.output.dim(),
                got: cotangent.grad.dim(),
            });
        }
        if grads.len() != self.num_params() {
            return Err(DiffnetError::ParamCount {
                expected: self.num_params(),
                got: grads.len(),
            });
        }

        let (batch, nd, channels, s) = (tape.batch, tape.dirs, tape.channels, tape.slope);
        let mut zbar = cotangent.grad.clone();
        let mut slope_bar = 0.0;
        for k in (0..self.num_layers()).rev() {
            let (off, fan_in, fan_out) = self.layer_offset(k);
            let h = &tape.inputs[k];
            {
                let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw).unwrap();
                general_mat_mul(1.0, &zbar.t(), h, 1.0, &mut gw);
                for b in 0..batch {
                    for (g, z) in gb.iter_mut().zip(zbar.row(b * channels)) {
                        *g += z;
                    }
                }
            }
            if k == 0 {
                break;
            }
            let mut ybar = Array2::<f64>::zeros((zbar.nrows(), fan_in));
            general_mat_mul(1.0, &zbar, &self.weights(k), 0.0, &mut ybar);
            zbar = activate_backward(self, &tape.pre[k - 1], &ybar, batch, nd, s, &mut slope_bar);
        }
        *grads.last_mut().unwrap() += self.scale() * slope_bar;
        Ok(())
    }
}

fn activate(net: &Mlp, z: &Array2<f64>, batch: usize, nd: usize, s: f64) -> Array2<f64> {
    let units = z.ncols();
    let channels = 1 + 2 * nd;
    let act = net.activation();
    let mut y = Array2::<f64>::zeros(z.raw_dim());
    let zs = z.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().unwrap();
    let s2 = s * s;
    for b in 0..batch {
        let base = b * channels * units;
        for j in 0..units {
            let [g0, g1, g2, _] = act.derivs(s * zs[base + j]);
            ys[base + j] = g0;
            for d in 0..nd {
                let i1 = base + (1 + d) * units + j;
                let i2 = base + (1 + nd + d) * units + j;
                let dz = zs[i1];
                let ddz = zs[i2];
                ys[i1] = g1 * s * dz;
                ys[i2] = g2 * s2 * dz * dz + g1 * s * ddz;
            }
        }
    }
    y
}

fn activate_backward(
    net: &Mlp,
    z: &Array2<f64>,
    ybar: &Array2<f64>,
    batch: usize,
    nd: usize,
    s: f64,
    slope_bar: &mut f64,
) -> Array2<f64> {
    let units = z.ncols();
    let channels = 1 + 2 * nd;
    let act = net.activation();
    let mut zbar = Array2::<f64>::zeros(z.raw_dim());
    let zs = z.as_slice().expect("standard layout");
    let yb = ybar.as_slice().expect("standard layout");
    let zb = zbar.as_slice_mut().unwrap();
    let (s2, s3) = (s * s, s * s * s);
    let mut acc = 0.0;
    for b in 0..batch {
        let base = b * channels * units;
        for j in 0..units {
            let z0 = zs[base + j];
            let [_, g1, g2, g3] = act.derivs(s * z0);
            let y0 = yb[base + j];
            let mut z0bar = y0 * g1 * s;
            acc += y0 * g1 * z0;
            for d in 0..nd {
                let i1 = base + (1 + d) * units + j;
                let i2 = base + (1 + nd + d) * units + j;
                let (dz, ddz) = (zs[i1], zs[i2]);
                let (y1, y2) = (yb[i1], yb[i2]);
                z0bar += y1 * g2 * s2 * dz + y2 * (g3 * s3 * dz * dz + g2 * s2 * ddz);
                zb[i1] = y1 * g1 * s + 2.0 * y2 * g2 * s2 * dz;
                zb[i2] = y2 * g1 * s;
                acc += y1 * (g2 * z0 * s * dz + g1 * dz)
                    + y2 * (g3 * z0 * s2 * dz * dz + 2.0 * g2 * s * dz * dz + g2 * z0 * s * ddz + g1 * ddz);
            }
            zb[base + j] = z0bar;
        }
    }
    *slope_bar += acc;
    zbar
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{param_count, Activation};
    use ndarray::arr2;

    #[test]
    fn batch_values_match_pointwise_forward() {
        let net = Mlp::init(&[3, 7, 5, 2], Activation::Tanh, 3.0, 11).unwrap();
        let xs = arr2(&[[0.1, -0.3, 0.7], [1.2, 0.0, -0.5], [-0.9, 0.4, 0.2]]);
        let tape = net.record(xs.view(), &[0, 2]).unwrap();
        for (b, x) in xs.outer_iter().enumerate() {
            let u = net.forward(x.as_slice().unwrap()).unwrap();
            for o in 0..2 {
                assert!((tape.value(b, o) - u[o]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_output_loss_has_zero_gradient() {
        // With all-zero parameters u ≡ 0, so L = u² is stationary.
        let sizes = [2, 4, 1];
        let mut params = vec![0.0; param_count(&sizes)];
        *params.last_mut().unwrap() = 1.0;
        let net = Mlp::from_params(&sizes, Activation::Tanh, 1.0, params).unwrap();
        let xs = arr2(&[[0.3, -0.2]]);
        let tape = net.record(xs.view(), &[]).unwrap();
        let mut cot = Cotangent::zeros_like(&tape);
        cot.add_value(0, 0, 2.0 * tape.value(0, 0));
        let g = net.grad_params(&tape, &cot).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_neuron_slope_gradient_closed_form() {
        // u = σ(n·a·w x); L = u²; dL/da = 2σ·σ'(n a z)·n·z with z = w x.
        for kind in [Activation::Tanh, Activation::Sin] {
            let (w, a, n, x) = (0.8, 0.35, 4.0, 0.6);
            let net = Mlp::from_params(&[1, 1, 1], kind, n, vec![w, 0.0, 1.0, 0.0, a]).unwrap();
            let xs = arr2(&[[x]]);
            let tape = net.record(xs.view(), &[]).unwrap();
            let mut cot = Cotangent::zeros_like(&tape);
            cot.add_value(0, 0, 2.0 * tape.value(0, 0));
            let g = net.grad_params(&tape, &cot).unwrap();
            let z = w * x;
            let [sig, dsig, _, _] = kind.derivs(n * a * z);
            let expected = n * z * dsig * 2.0 * sig;
            assert!((g[4] - expected).abs() < 1e-14, "{kind}: {} vs {expected}", g[4]);
        }
    }

    #[test]
    fn detached_and_misshapen_inputs_are_rejected() {
        let net = Mlp::init(&[2, 3, 1], Activation::Tanh, 1.0, 0).unwrap();
        let other = Mlp::init(&[2, 3, 1], Activation::Tanh, 1.0, 0).unwrap();
        let xs = arr2(&[[0.1, 0.2]]);
        let tape = net.record(xs.view(), &[0]).unwrap();
        let cot = Cotangent::zeros_like(&tape);
        assert!(matches!(other.grad_params(&tape, &cot), Err(DiffnetError::DetachedGraph)));

        let value_tape = net.record(xs.view(), &[]).unwrap();
        let wrong = Cotangent::zeros_like(&value_tape);
        assert!(matches!(
            net.grad_params(&tape, &wrong),
            Err(DiffnetError::CotangentShape { .. })
        ));
        assert!(matches!(
            net.record(xs.view(), &[2]),
            Err(DiffnetError::InvalidDirection { dir: 2, width: 2 })
        ));
    }

    #[test]
    fn parameter_update_detaches_old_tape() {
        let mut net = Mlp::init(&[2, 3, 1], Activation::Tanh, 1.0, 0).unwrap();
        let xs = arr2(&[[0.1, 0.2]]);
        let tape = net.record(xs.view(), &[]).unwrap();
        let p = net.params().to_vec();
        net.load_params(&p).unwrap();
        let cot = Cotangent::zeros_like(&tape);
        assert!(matches!(net.grad_params(&tape, &cot), Err(DiffnetError::DetachedGraph)));
    }
}
