//! Network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! u32            header length L in bytes
//! [u8; L]        UTF-8 JSON {"format_version", "layer_sizes", "activation", "n"}
//! f64 × P        parameters: per layer W (row-major, out × in) then b; slope a last
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_count, Activation, DiffnetError, Mlp, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    layer_sizes: Vec<usize>,
    activation: Activation,
    n: f64,
}

pub fn encode_checkpoint(net: &Mlp) -> Vec<u8> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        layer_sizes: net.layer_sizes().to_vec(),
        activation: net.activation(),
        n: net.scale(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(4 + json.len() + 8 * net.num_params());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Mlp> {
    let fmt = |m: &str| DiffnetError::Format(m.to_string());
    let len_bytes: [u8; 4] = bytes.get(..4).ok_or_else(|| fmt("truncated length prefix"))?.try_into().unwrap();
    let len = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(4..4 + len).ok_or_else(|| fmt("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| DiffnetError::Format(e.to_string()))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(DiffnetError::Format(format!(
            "unsupported checkpoint version {}",
            header.format_version
        )));
    }
    let payload = &bytes[4 + len..];
    let expected = param_count(&header.layer_sizes);
    if payload.len() != 8 * expected {
        return Err(DiffnetError::Format(format!(
            "expected {} parameter bytes, found {}",
            8 * expected,
            payload.len()
        )));
    }
    let params = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Mlp::from_params(&header.layer_sizes, header.activation, header.n, params)
}

pub fn write_checkpoint(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_checkpoint(net))?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Mlp> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Mlp::init(&[3, 6, 4, 1], Activation::Sin, 10.0, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        write_checkpoint(&net, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.layer_sizes(), net.layer_sizes());
        assert_eq!(back.activation(), net.activation());
        assert_eq!(back.scale().to_bits(), net.scale().to_bits());
        let bits = |m: &Mlp| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&net));
    }

    #[test]
    fn slope_is_the_final_eight_bytes() {
        let net = Mlp::init(&[2, 3, 1], Activation::Tanh, 4.0, 1).unwrap();
        let bytes = encode_checkpoint(&net);
        let tail: [u8; 8] = bytes[bytes.len() - 8..].try_into().unwrap();
        assert_eq!(f64::from_le_bytes(tail), 0.25);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let net = Mlp::init(&[2, 3, 1], Activation::Tanh, 1.0, 1).unwrap();
        let bytes = encode_checkpoint(&net);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(DiffnetError::Format(_))
        ));
        assert!(decode_checkpoint(&bytes[..2]).is_err());
    }
}
