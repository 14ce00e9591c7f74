//! PCA denoising of snapshot stacks.
//!
//! By default every snapshot is decomposed on its own, with grid rows as
//! samples and columns as features; the smallest number of components whose
//! cumulative explained variance reaches the threshold is kept and the
//! snapshot is rebuilt from them. [`PcaMode::Pixels`] instead treats each
//! snapshot as one sample over all pixels.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::wavegen::{WaveError, WavefieldDataset};

/// Slack on the cumulative-variance comparison so that a threshold of 1.0
/// is reached despite rounding.
const THRESHOLD_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum PcaError {
    #[error("PCA needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("PCA input contains non-finite values")]
    NonFinite,
    #[error("all samples are identical; total variance is zero")]
    ZeroVariance,
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("component count must lie in 1..={max}, got {got}")]
    InvalidComponents { got: usize, max: usize },
    #[error("feature count mismatch: model has {expected}, input has {got}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Wave(#[from] WaveError),
}

pub type Result<T> = std::result::Result<T, PcaError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcaMode {
    Rows,
    Pixels,
}

impl std::str::FromStr for PcaMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rows" => Ok(PcaMode::Rows),
            "pixels" => Ok(PcaMode::Pixels),
            other => Err(format!("unknown PCA mode '{other}' (expected rows or pixels)")),
        }
    }
}

/// How many components to keep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    /// Smallest count whose cumulative explained variance reaches the fraction.
    Threshold(f64),
    /// Exactly this many (capped at the available count).
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// All `min(n, d)` right singular vectors as rows, by decreasing variance.
    pub components: Array2<f64>,
    pub singular_values: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Mean-centred thin SVD of `samples × features` data.
///
/// Each component's largest-magnitude entry is made positive.
pub fn fit_pca(data: ArrayView2<'_, f64>) -> Result<PcaModel> {
    let (n, d) = data.dim();
    if n < 2 {
        return Err(PcaError::TooFewSamples(n));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(PcaError::NonFinite);
    }
    let mean = data.mean_axis(Axis(0)).expect("n >= 2");
    let centred = DMatrix::from_fn(n, d, |i, j| data[[i, j]] - mean[j]);
    let scale = centred.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let data_scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if scale <= 1e-14 * data_scale {
        return Err(PcaError::ZeroVariance);
    }
    // The bidiagonal SVD can stop short on rank-deficient input and leave
    // neighbouring singular vectors mixed at the 1e-8 level; one Rayleigh-Ritz
    // pass on the small Gram matrix of the projected data cleans that up.
    let v_t = centred.clone().svd(false, true).v_t.expect("requested");
    let projected = &centred * v_t.transpose();
    let eig = (projected.transpose() * &projected).symmetric_eigen();
    let v_t = eig.eigenvectors.transpose() * v_t;
    let sv: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let r = order.len();
    let mut components = Array2::<f64>::zeros((r, d));
    let mut singular_values = Vec::with_capacity(r);
    for (row, &k) in order.iter().enumerate() {
        let mut sign = 1.0;
        let mut best = -1.0;
        for j in 0..d {
            let v = v_t[(k, j)];
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        for j in 0..d {
            components[[row, j]] = sign * v_t[(k, j)];
        }
        singular_values.push(sv[k]);
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let explained_variance_ratio = singular_values.iter().map(|s| s * s / total).collect();
    Ok(PcaModel {
        mean,
        components,
        singular_values,
        explained_variance_ratio,
    })
}

/// Smallest `k ≥ 1` whose cumulative explained variance reaches `threshold`.
pub fn n_components_for(model: &PcaModel, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PcaError::InvalidThreshold(threshold));
    }
    let mut cumulative = 0.0;
    for (k, r) in model.explained_variance_ratio.iter().enumerate() {
        cumulative += r;
        if cumulative >= threshold - THRESHOLD_TOL {
            return Ok(k + 1);
        }
    }
    Ok(model.explained_variance_ratio.len())
}

impl PcaModel {
    pub fn num_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn cumulative_ratio(&self) -> Vec<f64> {
        self.explained_variance_ratio
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    fn select(&self, selection: Selection) -> Result<usize> {
        match selection {
            Selection::Threshold(t) => n_components_for(self, t),
            Selection::Fixed(k) if k >= 1 => Ok(k.min(self.num_components())),
            Selection::Fixed(k) => Err(PcaError::InvalidComponents {
                got: k,
                max: self.num_components(),
            }),
        }
    }

    /// Projects onto the first `k` components and maps back, adding the mean.
    pub fn reconstruct(&self, data: ArrayView2<'_, f64>, k: usize) -> Result<Array2<f64>> {
        let d = self.mean.len();
        if data.ncols() != d {
            return Err(PcaError::Shape {
                expected: d,
                got: data.ncols(),
            });
        }
        if k == 0 || k > self.num_components() {
            return Err(PcaError::InvalidComponents {
                got: k,
                max: self.num_components(),
            });
        }
        let basis = self.components.slice(ndarray::s![..k, ..]);
        let centred = &data - &self.mean;
        let scores = centred.dot(&basis.t());
        Ok(scores.dot(&basis) + &self.mean)
    }
}

/// Per-snapshot component counts and cumulative variance curves.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterReport {
    pub mode: PcaMode,
    /// One entry per snapshot in rows mode, a single entry in pixels mode.
    pub components: Vec<usize>,
    /// Cumulative explained variance per fitted matrix; empty when the
    /// matrix had no variance.
    pub cumulative: Vec<Vec<f64>>,
    /// Features per fitted matrix (the upper bound on the component count).
    pub features: usize,
}

impl FilterReport {
    pub fn min_median_max(&self) -> (usize, usize, usize) {
        let mut k = self.components.clone();
        k.sort_unstable();
        (k[0], k[k.len() / 2], k[k.len() - 1])
    }
}

fn filter_matrix(m: ArrayView2<'_, f64>, selection: Selection) -> Result<(Array2<f64>, usize, Vec<f64>)> {
    match fit_pca(m) {
        Ok(model) => {
            let k = model.select(selection)?;
            Ok((model.reconstruct(m, k)?, k, model.cumulative_ratio()))
        }
        // Identical samples are carried entirely by the mean.
        Err(PcaError::ZeroVariance) => {
            if let Selection::Threshold(t) = selection {
                if !(t > 0.0 && t <= 1.0) {
                    return Err(PcaError::InvalidThreshold(t));
                }
            }
            Ok((m.to_owned(), 1, Vec::new()))
        }
        Err(e) => Err(e),
    }
}

/// Filters every snapshot; the speed metadata is carried over unchanged.
pub fn filter_snapshots(
    ds: &WavefieldDataset,
    selection: Selection,
    mode: PcaMode,
) -> Result<(WavefieldDataset, FilterReport)> {
    ds.validate()?;
    let (nt, ny, nx) = ds.snapshots.dim();
    let (snapshots, components, cumulative, features) = match mode {
        PcaMode::Rows => {
            let parts: Vec<(Array2<f64>, usize, Vec<f64>)> = (0..nt)
                .into_par_iter()
                .map(|n| filter_matrix(ds.snapshot(n), selection))
                .collect::<Result<_>>()?;
            let mut out = Array3::<f64>::zeros((nt, ny, nx));
            let mut ks = Vec::with_capacity(nt);
            let mut curves = Vec::with_capacity(nt);
            for (n, (m, k, c)) in parts.into_iter().enumerate() {
                out.index_axis_mut(Axis(0), n).assign(&m);
                ks.push(k);
                curves.push(c);
            }
            (out, ks, curves, nx)
        }
        PcaMode::Pixels => {
            let flat = ds
                .snapshots
                .view()
                .into_shape_with_order((nt, ny * nx))
                .expect("standard layout");
            let (m, k, c) = filter_matrix(flat, selection)?;
            let out = m.into_shape_with_order((nt, ny, nx)).expect("same element count");
            (out, vec![k], vec![c], ny * nx)
        }
    };
    let label = match selection {
        Selection::Threshold(t) => format!("threshold={t}"),
        Selection::Fixed(k) => format!("components={k}"),
    };
    let filtered = WavefieldDataset::new(
        ds.grid,
        snapshots,
        ds.true_speed.clone(),
        format!("{}; pca: mode={:?} {label}", ds.provenance, mode).to_lowercase(),
    )?;
    Ok((
        filtered,
        FilterReport {
            mode,
            components,
            cumulative,
            features,
        },
    ))
}
