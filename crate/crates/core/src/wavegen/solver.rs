use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Grid2D, Result, SourceSpec, SpeedField, WaveError, WavefieldDataset};

/// Rows per rayon task once the grid is large enough to bother.
const PARALLEL_MIN_NODES: usize = 40_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Damping layer along every edge; the outer edge itself is stress free.
    Absorbing,
    /// Zero normal derivative on the outer edge.
    Free,
}

impl std::str::FromStr for Boundary {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "absorbing" => Ok(Boundary::Absorbing),
            "free" => Ok(Boundary::Free),
            other => Err(format!("unknown boundary '{other}' (expected absorbing or free)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub boundary: Boundary,
    /// Width of the damping layer in cells (absorbing boundary only).
    pub sponge_width: usize,
    /// Target amplitude reflection of a normally incident wave off the layer.
    pub sponge_reflection: f64,
    /// Internal time steps per recorded snapshot.
    pub substeps: usize,
    /// Initial displacement (initial velocity is zero), `[[j, i]]` indexing.
    pub initial_displacement: Option<Array2<f64>>,
    /// Solve on a grid refined by this factor in space and time and record
    /// every `oversample`-th node. Reduces numerical dispersion of the output.
    pub oversample: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            boundary: Boundary::Absorbing,
            sponge_width: 10,
            sponge_reflection: 1e-3,
            substeps: 1,
            initial_displacement: None,
            oversample: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub dataset: WavefieldDataset,
    /// Discrete energy `Σ v⁻²((uⁿ⁺¹−uⁿ)/Δt)² + Σ_edges D uⁿ⁺¹·D uⁿ`, sampled at
    /// every recorded snapshot. It is exactly conserved by the undamped scheme
    /// and non-increasing with damping, once the source is silent.
    pub energy: Vec<f64>,
    /// First recorded snapshot at which the source no longer injects.
    pub source_off_snapshot: usize,
}

/// Runs the solver with default options for the given boundary.
pub fn solve_wave(speed: &SpeedField, grid: &Grid2D, source: &SourceSpec, boundary: Boundary) -> Result<WavefieldDataset> {
    let opts = SolverOptions {
        boundary,
        ..SolverOptions::default()
    };
    Ok(solve_wave_with(speed, grid, Some(source), &opts)?.dataset)
}

/// Explicit second-order leapfrog for `u_tt + γ u_t = v² Δu + s(t) δ_src`.
///
/// `γ` is zero outside the damping layer and grows quadratically into it.
pub fn solve_wave_with(
    speed: &SpeedField,
    grid: &Grid2D,
    source: Option<&SourceSpec>,
    opts: &SolverOptions,
) -> Result<Solution> {
    grid.validate()?;
    speed.validate()?;
    if opts.oversample == 0 {
        return Err(WaveError::InvalidGrid("oversample must be at least 1".into()));
    }
    if opts.oversample > 1 {
        return solve_oversampled(speed, grid, source, opts);
    }
    let (nx, ny) = (grid.nx, grid.ny);
    if speed.values.dim() != (ny, nx) {
        return Err(WaveError::Shape(format!(
            "speed field {:?} does not match grid {ny}×{nx}",
            speed.values.dim()
        )));
    }
    if opts.substeps == 0 {
        return Err(WaveError::InvalidGrid("substeps must be at least 1".into()));
    }
    let dt = grid.dt / opts.substeps as f64;
    let v_max = speed.max();
    let courant = grid.courant(v_max, dt);
    if courant > 1.0 {
        return Err(WaveError::CflViolation {
            courant,
            max_dt: grid.max_stable_dt(v_max) * opts.substeps as f64,
        });
    }

    let forcing = match source {
        Some(src) => {
            src.validate()?;
            let ppw = speed.background / (src.center_frequency * grid.dx.max(grid.dy));
            if ppw < 8.0 {
                log::warn!("only {ppw:.1} grid points per wavelength at the source frequency");
            }
            source_weights(grid, src)?
        }
        None => Vec::new(),
    };

    let n = nx * ny;
    let gamma = damping_profile(grid, speed, opts);
    let coef: Vec<f64> = speed.values.iter().map(|v| v * v * dt * dt).collect();
    let inv_v2: Vec<f64> = speed.values.iter().map(|v| 1.0 / (v * v)).collect();
    let a_plus: Vec<f64> = gamma.iter().map(|g| 1.0 + 0.5 * g * dt).collect();
    let a_minus: Vec<f64> = gamma.iter().map(|g| 1.0 - 0.5 * g * dt).collect();
    let stencil = Stencil {
        nx,
        ny,
        idx2: 1.0 / (grid.dx * grid.dx),
        idy2: 1.0 / (grid.dy * grid.dy),
    };

    let mut u = match &opts.initial_displacement {
        Some(u0) => {
            if u0.dim() != (ny, nx) {
                return Err(WaveError::Shape(format!("initial displacement {:?} vs grid {ny}×{nx}", u0.dim())));
            }
            u0.iter().copied().collect::<Vec<f64>>()
        }
        None => vec![0.0; n],
    };
    // Zero initial velocity: u⁻¹ = u⁰ + ½Δt² v² L u⁰, which makes the first step second-order.
    let mut u_prev = vec![0.0; n];
    for (k, up) in u_prev.iter_mut().enumerate() {
        *up = u[k] + 0.5 * coef[k] * stencil.laplacian(&u, k);
    }
    let mut u_next = vec![0.0; n];

    let mut snapshots = Array3::<f64>::zeros((grid.nt, ny, nx));
    snapshots
        .index_axis_mut(ndarray::Axis(0), 0)
        .as_slice_mut()
        .unwrap()
        .copy_from_slice(&u);
    let mut energy = vec![stencil.energy(&u_prev, &u, &inv_v2, dt)];

    let src_len = source.map_or(0.0, |s| s.duration());
    let mut source_off_snapshot = 0;
    let mut step = 0usize;
    for snap in 1..grid.nt {
        for _ in 0..opts.substeps {
            let t = step as f64 * dt;
            let update = |(j, row): (usize, &mut [f64])| {
                for i in 0..nx {
                    let k = j * nx + i;
                    row[i] = (2.0 * u[k] - a_minus[k] * u_prev[k] + coef[k] * stencil.laplacian(&u, k)) / a_plus[k];
                }
            };
            if n >= PARALLEL_MIN_NODES {
                u_next.par_chunks_mut(nx).enumerate().for_each(update);
            } else {
                u_next.chunks_mut(nx).enumerate().for_each(update);
            }
            if let Some(src) = source {
                let s = src.wavelet(t);
                if s != 0.0 {
                    for &(k, w) in &forcing {
                        u_next[k] += dt * dt * s * w / a_plus[k];
                    }
                }
            }
            step += 1;
            std::mem::swap(&mut u_prev, &mut u);
            std::mem::swap(&mut u, &mut u_next);
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(WaveError::NonFinite { step });
        }
        energy.push(stencil.energy(&u_prev, &u, &inv_v2, dt));
        // The last injecting step used t = (step-1)·dt; everything after it is source free.
        if source_off_snapshot == 0 && (step as f64 - 1.0) * dt > src_len {
            source_off_snapshot = snap;
        }
        snapshots
            .index_axis_mut(ndarray::Axis(0), snap)
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(&u);
    }
    if source.is_none() {
        source_off_snapshot = 0;
    } else if source_off_snapshot == 0 {
        source_off_snapshot = grid.nt;
    }

    let provenance = serde_json::json!({
        "generator": "fd2-leapfrog",
        "boundary": opts.boundary,
        "sponge_width": opts.sponge_width,
        "substeps": opts.substeps,
        "source": source,
        "courant": courant,
    })
    .to_string();
    let dataset = WavefieldDataset::new(*grid, snapshots, Some(speed.clone()), provenance)?;
    Ok(Solution {
        dataset,
        energy,
        source_off_snapshot,
    })
}

fn solve_oversampled(speed: &SpeedField, grid: &Grid2D, source: Option<&SourceSpec>, opts: &SolverOptions) -> Result<Solution> {
    let r = opts.oversample;
    if speed.values.dim() != (grid.ny, grid.nx) {
        return Err(WaveError::Shape(format!(
            "speed field {:?} does not match grid {}×{}",
            speed.values.dim(),
            grid.ny,
            grid.nx
        )));
    }
    let fine = Grid2D {
        nx: (grid.nx - 1) * r + 1,
        ny: (grid.ny - 1) * r + 1,
        dx: grid.dx / r as f64,
        dy: grid.dy / r as f64,
        ..*grid
    };
    let coarse = &speed.values;
    // Bilinear interpolation of the speed onto the fine nodes.
    let fine_speed = Array2::from_shape_fn((fine.ny, fine.nx), |(j, i)| {
        let (j0, i0) = (j / r, i / r);
        let (ty, tx) = ((j % r) as f64 / r as f64, (i % r) as f64 / r as f64);
        let (j1, i1) = ((j0 + 1).min(grid.ny - 1), (i0 + 1).min(grid.nx - 1));
        (1.0 - ty) * ((1.0 - tx) * coarse[[j0, i0]] + tx * coarse[[j0, i1]])
            + ty * ((1.0 - tx) * coarse[[j1, i0]] + tx * coarse[[j1, i1]])
    });
    let fine_opts = SolverOptions {
        boundary: opts.boundary,
        sponge_width: opts.sponge_width * r,
        sponge_reflection: opts.sponge_reflection,
        substeps: opts.substeps * r,
        initial_displacement: opts.initial_displacement.as_ref().map(|u0| {
            Array2::from_shape_fn((fine.ny, fine.nx), |(j, i)| {
                let (j0, i0) = (j / r, i / r);
                let (ty, tx) = ((j % r) as f64 / r as f64, (i % r) as f64 / r as f64);
                let (j1, i1) = ((j0 + 1).min(grid.ny - 1), (i0 + 1).min(grid.nx - 1));
                (1.0 - ty) * ((1.0 - tx) * u0[[j0, i0]] + tx * u0[[j0, i1]])
                    + ty * ((1.0 - tx) * u0[[j1, i0]] + tx * u0[[j1, i1]])
            })
        }),
        oversample: 1,
    };
    let fine_field = SpeedField::from_values(fine_speed, speed.background)?;
    let sol = solve_wave_with(&fine_field, &fine, source, &fine_opts)?;
    let snapshots = Array3::from_shape_fn((grid.nt, grid.ny, grid.nx), |(n, j, i)| {
        sol.dataset.snapshots[[n, j * r, i * r]]
    });
    let mut provenance: serde_json::Value =
        serde_json::from_str(&sol.dataset.provenance).expect("solver provenance is JSON");
    provenance["oversample"] = serde_json::json!(r);
    provenance["sponge_width"] = serde_json::json!(opts.sponge_width);
    provenance["substeps"] = serde_json::json!(opts.substeps);
    let dataset = WavefieldDataset::new(*grid, snapshots, Some(speed.clone()), provenance.to_string())?;
    Ok(Solution {
        dataset,
        energy: sol.energy,
        source_off_snapshot: sol.source_off_snapshot,
    })
}

struct Stencil {
    nx: usize,
    ny: usize,
    idx2: f64,
    idy2: f64,
}

impl Stencil {
    /// Five-point Laplacian with missing neighbours dropped (zero normal flux).
    #[inline]
    fn laplacian(&self, u: &[f64], k: usize) -> f64 {
        let (i, j) = (k % self.nx, k / self.nx);
        let c = u[k];
        let mut acc = 0.0;
        if i > 0 {
            acc += (u[k - 1] - c) * self.idx2;
        }
        if i + 1 < self.nx {
            acc += (u[k + 1] - c) * self.idx2;
        }
        if j > 0 {
            acc += (u[k - self.nx] - c) * self.idy2;
        }
        if j + 1 < self.ny {
            acc += (u[k + self.nx] - c) * self.idy2;
        }
        acc
    }

    fn energy(&self, u_old: &[f64], u_new: &[f64], inv_v2: &[f64], dt: f64) -> f64 {
        let kinetic: f64 = u_new
            .iter()
            .zip(u_old)
            .zip(inv_v2)
            .map(|((a, b), w)| w * ((a - b) / dt).powi(2))
            .sum();
        let mut potential = 0.0;
        for j in 0..self.ny {
            for i in 0..self.nx {
                let k = j * self.nx + i;
                if i + 1 < self.nx {
                    potential += (u_new[k + 1] - u_new[k]) * (u_old[k + 1] - u_old[k]) * self.idx2;
                }
                if j + 1 < self.ny {
                    potential += (u_new[k + self.nx] - u_new[k]) * (u_old[k + self.nx] - u_old[k]) * self.idy2;
                }
            }
        }
        kinetic + potential
    }
}

fn damping_profile(grid: &Grid2D, speed: &SpeedField, opts: &SolverOptions) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let width = opts.sponge_width;
    if opts.boundary == Boundary::Free || width == 0 {
        return vec![0.0; nx * ny];
    }
    // Quadratic ramp; a wave crossing the layer twice decays by `sponge_reflection`.
    let thickness = width as f64 * grid.dx.min(grid.dy);
    let gamma_max = 3.0 * speed.max() * (1.0 / opts.sponge_reflection).ln() / thickness;
    let depth = |idx: usize, len: usize| -> f64 {
        let from_edge = idx.min(len - 1 - idx);
        if from_edge >= width {
            0.0
        } else {
            (width - from_edge) as f64 / width as f64
        }
    };
    let mut gamma = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let d = depth(i, nx).max(depth(j, ny));
            gamma[j * nx + i] = gamma_max * d * d;
        }
    }
    gamma
}

/// Discrete delta weights (per unit area) of the source on the grid nodes.
fn source_weights(grid: &Grid2D, src: &SourceSpec) -> Result<Vec<(usize, f64)>> {
    let (px, py) = src.position;
    let mut weights = Vec::new();
    match src.incidence_angle {
        None => {
            let fx = (px - grid.x0) / grid.dx;
            let fy = (py - grid.y0) / grid.dy;
            if fx < 0.0 || fy < 0.0 || fx > (grid.nx - 1) as f64 || fy > (grid.ny - 1) as f64 {
                return Err(WaveError::InvalidSource(format!("position ({px}, {py}) outside the grid")));
            }
            let (i0, j0) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
            let area = grid.dx * grid.dy;
            for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
                for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
                    let w = wx * wy;
                    if w > 0.0 {
                        let (i, j) = ((i0 + di).min(grid.nx - 1), (j0 + dj).min(grid.ny - 1));
                        weights.push((j * grid.nx + i, w / area));
                    }
                }
            }
        }
        Some(angle) => {
            let (s, c) = angle.to_radians().sin_cos();
            let h = grid.dx.min(grid.dy);
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let dist = (grid.x(i) - px) * c + (grid.y(j) - py) * s;
                    let w = (1.0 - dist.abs() / h).max(0.0) / h;
                    if w > 0.0 {
                        weights.push((j * grid.nx + i, w));
                    }
                }
            }
            if weights.is_empty() {
                return Err(WaveError::InvalidSource("line source misses the grid".into()));
            }
        }
    }
    Ok(weights)
}
