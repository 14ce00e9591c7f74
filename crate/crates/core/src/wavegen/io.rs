//! WFD container and CSV exports.
//!
//! WFD layout, all numbers little-endian:
//!
//! ```text
//! [u8; 8]          magic "WFDATA01" (the last two bytes are the format version)
//! u32              header length L in bytes
//! [u8; L]          UTF-8 JSON {nx, ny, nt, dx, dy, dt, x0, y0, has_speed, provenance,
//!                              speed_background (present iff has_speed)}
//! f64 × nt·ny·nx   snapshots in (t, y, x) order
//! f64 × ny·nx      speed field in (y, x) order, iff has_speed
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{Grid2D, Result, SpeedField, WaveError, WavefieldDataset};

pub const WFD_MAGIC: &[u8; 8] = b"WFDATA01";
pub const WFD_MAGIC_PREFIX: &[u8; 6] = b"WFDATA";

#[derive(Serialize, Deserialize)]
struct Header {
    nx: usize,
    ny: usize,
    nt: usize,
    dx: f64,
    dy: f64,
    dt: f64,
    x0: f64,
    y0: f64,
    has_speed: bool,
    provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    speed_background: Option<f64>,
}

pub fn encode_dataset(ds: &WavefieldDataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let g = &ds.grid;
    let header = Header {
        nx: g.nx,
        ny: g.ny,
        nt: g.nt,
        dx: g.dx,
        dy: g.dy,
        dt: g.dt,
        x0: g.x0,
        y0: g.y0,
        has_speed: ds.true_speed.is_some(),
        provenance: ds.provenance.clone(),
        speed_background: ds.true_speed.as_ref().map(|s| s.background),
    };
    let json = serde_json::to_vec(&header).map_err(|e| WaveError::Header(e.to_string()))?;
    let speed_len = ds.true_speed.as_ref().map_or(0, |s| s.values.len());
    let mut out = Vec::with_capacity(12 + json.len() + 8 * (ds.snapshots.len() + speed_len));
    out.extend_from_slice(WFD_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in ds.snapshots.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(sp) = &ds.true_speed {
        for v in sp.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<WavefieldDataset> {
    if bytes.len() < 8 {
        return Err(WaveError::Truncated("file shorter than the magic bytes".into()));
    }
    if &bytes[..6] != WFD_MAGIC_PREFIX {
        return Err(WaveError::BadMagic);
    }
    if &bytes[..8] != WFD_MAGIC {
        return Err(WaveError::VersionMismatch(String::from_utf8_lossy(&bytes[6..8]).into_owned()));
    }
    let len_bytes: [u8; 4] = bytes
        .get(8..12)
        .ok_or_else(|| WaveError::Truncated("missing header length".into()))?
        .try_into()
        .unwrap();
    let len = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| WaveError::Truncated(format!("header declares {len} bytes")))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| WaveError::Header(e.to_string()))?;
    let payload = &bytes[12 + len..];
    if payload.len() % 8 != 0 {
        return Err(WaveError::Truncated(format!(
            "payload of {} bytes is not a whole number of f64 values",
            payload.len()
        )));
    }
    let snap_len = header.nt * header.ny * header.nx;
    let speed_len = if header.has_speed { header.ny * header.nx } else { 0 };
    let found = payload.len() / 8;
    if found != snap_len + speed_len {
        return Err(WaveError::Shape(format!(
            "header describes {} values (nt={}, ny={}, nx={}, has_speed={}), payload holds {found}",
            snap_len + speed_len,
            header.nt,
            header.ny,
            header.nx,
            header.has_speed
        )));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let snapshots = Array3::from_shape_vec((header.nt, header.ny, header.nx), values.by_ref().take(snap_len).collect())
        .map_err(|e| WaveError::Shape(e.to_string()))?;
    let true_speed = if header.has_speed {
        let vals = Array2::from_shape_vec((header.ny, header.nx), values.collect())
            .map_err(|e| WaveError::Shape(e.to_string()))?;
        let background = header
            .speed_background
            .ok_or_else(|| WaveError::Header("has_speed set but speed_background missing".into()))?;
        Some(SpeedField::from_values(vals, background)?)
    } else {
        None
    };
    let grid = Grid2D {
        nx: header.nx,
        ny: header.ny,
        dx: header.dx,
        dy: header.dy,
        nt: header.nt,
        dt: header.dt,
        x0: header.x0,
        y0: header.y0,
    };
    WavefieldDataset::new(grid, snapshots, true_speed, header.provenance)
}

pub fn write_dataset(ds: &WavefieldDataset, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<WavefieldDataset> {
    decode_dataset(&fs::read(path)?)
}

/// One `x,y,u` CSV per snapshot, named `<prefix>_<nnnnn>.csv`.
pub fn write_snapshot_csvs(ds: &WavefieldDataset, dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let g = &ds.grid;
    let mut paths = Vec::with_capacity(g.nt);
    for n in 0..g.nt {
        let path = dir.join(format!("{prefix}_{n:05}.csv"));
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "x,y,u")?;
        let snap = ds.snapshot(n);
        for j in 0..g.ny {
            for i in 0..g.nx {
                writeln!(w, "{},{},{}", g.x(i), g.y(j), snap[[j, i]])?;
            }
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// `x,y,v` CSV of a speed field on the grid nodes.
pub fn write_speed_csv(speed: &SpeedField, grid: &Grid2D, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "x,y,v")?;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            writeln!(w, "{},{},{}", grid.x(i), grid.y(j), speed.values[[j, i]])?;
        }
    }
    w.flush()?;
    Ok(())
}
