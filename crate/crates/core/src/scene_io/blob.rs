//! Gaussian blob: `"GPCA"`, `u32` version, `u64` count, then one 60-byte
//! record per Gaussian (anchor `u32`, offset 3, quaternion 4 w-first,
//! log-scales 3, opacity logit 1, RGB 3 as `f32`), all little-endian.

use std::path::Path;

use super::{IoError, IoResult};
use crate::core::Gaussian;

pub const BLOB_MAGIC: [u8; 4] = *b"GPCA";
pub const BLOB_VERSION: u32 = 1;
pub const BLOB_HEADER_BYTES: usize = 16;
pub const BLOB_RECORD_BYTES: usize = 60;

pub fn encode_gaussians(gaussians: &[Gaussian]) -> Vec<u8> {
    let mut out = Vec::with_capacity(BLOB_HEADER_BYTES + BLOB_RECORD_BYTES * gaussians.len());
    out.extend_from_slice(&BLOB_MAGIC);
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    out.extend_from_slice(&(gaussians.len() as u64).to_le_bytes());
    for g in gaussians {
        out.extend_from_slice(&g.anchor.to_le_bytes());
        let floats = g
            .offset
            .iter()
            .chain(&g.rotation)
            .chain(&g.log_scale)
            .chain(std::iter::once(&g.opacity_logit))
            .chain(&g.color);
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a blob. `path` is only used in error messages.
pub fn decode_gaussians(path: &Path, bytes: &[u8]) -> IoResult<Vec<Gaussian>> {
    if bytes.len() < BLOB_HEADER_BYTES {
        if bytes.len() >= 4 && bytes[..4] != BLOB_MAGIC {
            return Err(IoError::BadMagic(path.to_path_buf()));
        }
        return Err(IoError::CountMismatch {
            path: path.to_path_buf(),
            what: "header bytes",
            expected: BLOB_HEADER_BYTES as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes[..4] != BLOB_MAGIC {
        return Err(IoError::BadMagic(path.to_path_buf()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BLOB_VERSION {
        return Err(IoError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: BLOB_VERSION,
        });
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[BLOB_HEADER_BYTES..];
    let found = (body.len() / BLOB_RECORD_BYTES) as u64;
    if !body.len().is_multiple_of(BLOB_RECORD_BYTES) || found != count {
        return Err(IoError::CountMismatch {
            path: path.to_path_buf(),
            what: "gaussian records",
            expected: count,
            found,
        });
    }
    Ok(body
        .chunks_exact(BLOB_RECORD_BYTES)
        .map(|r| {
            let f = |i: usize| f32::from_le_bytes(r[4 + 4 * i..8 + 4 * i].try_into().unwrap());
            Gaussian {
                anchor: u32::from_le_bytes(r[..4].try_into().unwrap()),
                offset: [f(0), f(1), f(2)],
                rotation: [f(3), f(4), f(5), f(6)],
                log_scale: [f(7), f(8), f(9)],
                opacity_logit: f(10),
                color: [f(11), f(12), f(13)],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Gaussian> {
        vec![
            Gaussian::new(
                3,
                [1.0, -2.0, 0.5],
                [0.9, 0.1, 0.2, 0.3],
                [0.5, 1.0, 2.0],
                0.7,
                [0.1, 0.2, 0.3],
            ),
            Gaussian::new(0, [0.0; 3], [1.0, 0.0, 0.0, 0.0], [1.0; 3], 0.5, [1.0; 3]),
        ]
    }

    #[test]
    fn layout_and_round_trip() {
        let bytes = encode_gaussians(&sample());
        assert_eq!(bytes.len(), 16 + 60 * 2);
        assert_eq!(&bytes[..4], b"GPCA");
        assert_eq!(decode_gaussians(Path::new("x"), &bytes).unwrap(), sample());
    }

    #[test]
    fn empty_blob_is_valid() {
        let bytes = encode_gaussians(&[]);
        assert_eq!(bytes.len(), 16);
        assert!(decode_gaussians(Path::new("x"), &bytes).unwrap().is_empty());
    }

    #[test]
    fn distinct_errors() {
        let p = Path::new("x");
        let good = encode_gaussians(&sample());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_gaussians(p, &bad), Err(IoError::BadMagic(_))));
        let mut ver = good.clone();
        ver[4] = 9;
        assert!(matches!(
            decode_gaussians(p, &ver),
            Err(IoError::VersionMismatch { found: 9, .. })
        ));
        assert!(matches!(
            decode_gaussians(p, &good[..good.len() - 1]),
            Err(IoError::CountMismatch {
                expected: 2,
                found: 1,
                ..
            })
        ));
    }
}
