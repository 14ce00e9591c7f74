use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataPoint, Region, ResidualPoint, Result, TrainError};
use crate::wavegen::WavefieldDataset;

fn nodes_in(ds: &WavefieldDataset, region: Option<&Region>) -> Vec<(usize, usize)> {
    let g = &ds.grid;
    let mut nodes = Vec::with_capacity(g.nx * g.ny);
    for j in 0..g.ny {
        for i in 0..g.nx {
            if region.is_none_or(|r| r.contains(g.x(i), g.y(j))) {
                nodes.push((j, i));
            }
        }
    }
    nodes
}

/// Snapshot indices `start, start + stride, ...`. Without an explicit start,
/// the window with the largest summed squared displacement inside `region`
/// is chosen (earliest on ties).
pub fn select_snapshots(
    ds: &WavefieldDataset,
    start: Option<usize>,
    count: usize,
    stride: usize,
    region: Option<&Region>,
) -> Result<Vec<usize>> {
    let nt = ds.grid.nt;
    if count == 0 || stride == 0 {
        return Err(TrainError::EmptySelection("snapshot window is empty".into()));
    }
    let span = (count - 1) * stride + 1;
    if span > nt {
        return Err(TrainError::EmptySelection(format!(
            "window of {count} snapshots with stride {stride} exceeds the {nt} available"
        )));
    }
    let start = match start {
        Some(s) if s + span > nt => {
            return Err(TrainError::EmptySelection(format!(
                "window starting at {s} runs past snapshot {}",
                nt - 1
            )))
        }
        Some(s) => s,
        None => {
            let nodes = nodes_in(ds, region);
            let energy: Vec<f64> = (0..nt)
                .map(|n| nodes.iter().map(|&(j, i)| ds.snapshots[[n, j, i]].powi(2)).sum())
                .collect();
            let mut best = (0, f64::NEG_INFINITY);
            for s in 0..=nt - span {
                let e: f64 = (0..count).map(|k| energy[s + k * stride]).sum();
                if e > best.1 {
                    best = (s, e);
                }
            }
            best.0
        }
    };
    Ok((0..count).map(|k| start + k * stride).collect())
}

/// Uniform subset of nodes, without replacement, from each listed snapshot.
/// The count per snapshot is `round(fraction · nodes)`, at least one.
pub fn sample_training_points(
    ds: &WavefieldDataset,
    snapshot_ids: &[usize],
    fraction: f64,
    seed: u64,
    region: Option<&Region>,
) -> Result<Vec<DataPoint>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TrainError::Config(format!("data fraction must lie in (0, 1], got {fraction}")));
    }
    if snapshot_ids.is_empty() {
        return Err(TrainError::EmptySelection("no snapshots selected".into()));
    }
    if let Some(&n) = snapshot_ids.iter().find(|&&n| n >= ds.grid.nt) {
        return Err(TrainError::EmptySelection(format!(
            "snapshot {n} does not exist ({} available)",
            ds.grid.nt
        )));
    }
    let nodes = nodes_in(ds, region);
    if nodes.is_empty() {
        return Err(TrainError::EmptySelection("training region contains no grid nodes".into()));
    }
    let per = ((fraction * nodes.len() as f64).round() as usize).clamp(1, nodes.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = &ds.grid;
    let mut out = Vec::with_capacity(per * snapshot_ids.len());
    for &n in snapshot_ids {
        let mut picked = index::sample(&mut rng, nodes.len(), per).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|k| {
            let (j, i) = nodes[k];
            DataPoint {
                t: g.t(n),
                x: g.x(i),
                y: g.y(j),
                u: ds.snapshots[[n, j, i]],
            }
        }));
    }
    Ok(out)
}

/// Collocation points drawn uniformly over `[t.0, t.1] × region`.
pub fn residual_points(t: (f64, f64), region: &Region, count: usize, seed: u64) -> Vec<ResidualPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ResidualPoint {
            t: rng.random_range(t.0..=t.1),
            x: rng.random_range(region.x_min..=region.x_max),
            y: rng.random_range(region.y_min..=region.y_max),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavegen::Grid2D;
    use ndarray::Array3;

    fn toy() -> WavefieldDataset {
        let g = Grid2D::desk();
        let snaps = Array3::from_shape_fn((g.nt, g.ny, g.nx), |(n, j, i)| {
            let bump = (-((n as f64 - 300.0) / 20.0).powi(2)).exp();
            bump * ((i + 2 * j) as f64 * 0.1).sin()
        });
        WavefieldDataset::new(g, snaps, None, "toy".into()).unwrap()
    }

    #[test]
    fn full_fraction_takes_every_node() {
        let ds = toy();
        let pts = sample_training_points(&ds, &[3, 4], 1.0, 0, None).unwrap();
        assert_eq!(pts.len(), 2 * 3600);
    }

    #[test]
    fn tenth_of_desk_snapshot_is_360_points() {
        let ds = toy();
        let pts = sample_training_points(&ds, &[10], 0.1, 5, None).unwrap();
        assert_eq!(pts.len(), 360);
        let mut keys: Vec<(u64, u64)> = pts.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 360, "sampling must be without replacement");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let ds = toy();
        let a = sample_training_points(&ds, &[1, 7], 0.2, 9, None).unwrap();
        let b = sample_training_points(&ds, &[1, 7], 0.2, 9, None).unwrap();
        let c = sample_training_points(&ds, &[1, 7], 0.2, 10, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn region_restricts_points_and_bad_ids_fail() {
        let ds = toy();
        let r = Region {
            x_min: 1.9,
            x_max: 4.1,
            y_min: 0.9,
            y_max: 3.1,
        };
        let pts = sample_training_points(&ds, &[0], 1.0, 0, Some(&r)).unwrap();
        assert_eq!(pts.len(), 11 * 11);
        assert!(pts.iter().all(|p| r.contains(p.x, p.y)));
        assert!(sample_training_points(&ds, &[600], 0.5, 0, None).is_err());
        assert!(sample_training_points(&ds, &[], 0.5, 0, None).is_err());
    }

    #[test]
    fn auto_window_centres_on_energy_peak() {
        let ds = toy();
        let ids = select_snapshots(&ds, None, 21, 2, None).unwrap();
        assert_eq!(ids.len(), 21);
        assert_eq!(ids[10], 300);
        assert_eq!(select_snapshots(&ds, Some(5), 3, 4, None).unwrap(), vec![5, 9, 13]);
        assert!(select_snapshots(&ds, Some(598), 3, 1, None).is_err());
    }

    #[test]
    fn residual_points_stay_in_box() {
        let r = Region {
            x_min: 1.0,
            x_max: 2.0,
            y_min: -1.0,
            y_max: 0.0,
        };
        let pts = residual_points((0.5, 0.7), &r, 500, 3);
        assert_eq!(pts.len(), 500);
        assert!(pts.iter().all(|p| r.contains(p.x, p.y) && (0.5..=0.7).contains(&p.t)));
        assert_eq!(pts, residual_points((0.5, 0.7), &r, 500, 3));
    }
}
