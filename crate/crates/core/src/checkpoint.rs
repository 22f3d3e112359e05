//! Binary checkpoint format.
//!
//! ```text
//! "IIMLP\x01"                        6-byte magic
//! L, C, N                            u32 little-endian each
//! sigma, q_star                      f64 little-endian each
//! activation code, init code        u8 each
//! L x (C+N)^2 weights                f64 little-endian, row-major, layer by layer
//! CRC-64/XZ of all preceding bytes   u64 little-endian
//! ```

use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use crate::error::{Error, ParseError, ParseErrorKind, Result};
use crate::linalg::Matrix;
use crate::network::{Activation, InitKind, InterpretableMLP, NetworkConfig};

pub const MAGIC: &[u8; 6] = b"IIMLP\x01";
const HEADER_LEN: usize = 6 + 3 * 4 + 2 * 8 + 2;
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// Shape recorded in a checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointShape {
    pub layers: usize,
    pub classes: usize,
    pub data_width: usize,
}

pub fn encode(mlp: &InterpretableMLP) -> Vec<u8> {
    let cfg = mlp.config();
    let m = cfg.width();
    let mut out = Vec::with_capacity(HEADER_LEN + cfg.layers * m * m * 8 + 8);
    out.extend_from_slice(MAGIC);
    for v in [cfg.layers, cfg.classes, cfg.data_width] {
        out.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes());
    }
    out.extend_from_slice(&cfg.sigma.to_le_bytes());
    out.extend_from_slice(&cfg.q_star.to_le_bytes());
    out.push(cfg.activation.code());
    out.push(cfg.init.code());
    for w in mlp.weights() {
        for v in w.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = CRC64.checksum(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn err(offset: usize, kind: ParseErrorKind) -> Error {
    Error::Parse(ParseError {
        format: "checkpoint",
        offset: offset as u64,
        kind,
    })
}

/// Decodes a checkpoint. Fields of [`NetworkConfig`] that are not stored (seed, linear-head
/// flag) take their defaults.
pub fn decode(bytes: &[u8]) -> Result<InterpretableMLP> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        let found = bytes[..bytes.len().min(MAGIC.len())].to_vec();
        return Err(err(
            0,
            ParseErrorKind::BadMagic {
                expected: MAGIC.to_vec(),
                found,
            },
        ));
    }
    if bytes.len() < HEADER_LEN {
        return Err(err(
            bytes.len(),
            ParseErrorKind::Truncated {
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            },
        ));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let layers = u32_at(6);
    let classes = u32_at(10);
    let data_width = u32_at(14);
    let sigma = f64_at(18);
    let q_star = f64_at(26);
    let activation = Activation::from_code(bytes[34])
        .ok_or_else(|| err(34, ParseErrorKind::Invalid(format!("unknown activation code {}", bytes[34]))))?;
    let init = InitKind::from_code(bytes[35])
        .ok_or_else(|| err(35, ParseErrorKind::Invalid(format!("unknown init code {}", bytes[35]))))?;

    let m = classes + data_width;
    let expected = (HEADER_LEN as u64)
        .checked_add((layers as u64) * (m as u64) * (m as u64) * 8 + 8)
        .ok_or_else(|| err(6, ParseErrorKind::Invalid("header dimensions overflow".into())))?;
    if bytes.len() as u64 != expected {
        let kind = if (bytes.len() as u64) < expected {
            ParseErrorKind::Truncated {
                expected,
                actual: bytes.len() as u64,
            }
        } else {
            ParseErrorKind::Invalid(format!("{} trailing bytes", bytes.len() as u64 - expected))
        };
        return Err(err(bytes.len().min(expected as usize), kind));
    }
    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = CRC64.checksum(&bytes[..body_end]);
    if stored != computed {
        return Err(err(body_end, ParseErrorKind::Checksum { stored, computed }));
    }

    let config = NetworkConfig {
        layers,
        data_width,
        classes,
        sigma,
        q_star,
        activation,
        init,
        ..NetworkConfig::default()
    };
    config
        .validate()
        .map_err(|e| err(6, ParseErrorKind::Invalid(e.to_string())))?;
    let mut offset = HEADER_LEN;
    let mut weights = Vec::with_capacity(layers);
    for _ in 0..layers {
        let data = bytes[offset..offset + m * m * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += m * m * 8;
        weights.push(Matrix::from_vec(m, m, data));
    }
    InterpretableMLP::from_weights(config, weights)
}

pub fn save_checkpoint(mlp: &InterpretableMLP, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(mlp)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<InterpretableMLP> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint and checks its shape against what the caller expects.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expect: CheckpointShape) -> Result<InterpretableMLP> {
    let mlp = load_checkpoint(path)?;
    let got = CheckpointShape {
        layers: mlp.layers(),
        classes: mlp.classes(),
        data_width: mlp.data_width(),
    };
    if got != expect {
        return Err(Error::shape("checkpoint", format!("{expect:?}"), format!("{got:?}")));
    }
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn small() -> InterpretableMLP {
        let cfg = NetworkConfig {
            layers: 2,
            classes: 2,
            data_width: 3,
            init: InitKind::HeRandom,
            activation: Activation::Relu,
            ..NetworkConfig::default()
        };
        InterpretableMLP::init_he_random(cfg, &mut SeededRng::new(77)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mlp = small();
        let bytes = encode(&mlp);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * 25 * 8 + 8);
        assert_eq!(&bytes[..6], b"IIMLP\x01");
        let back = decode(&bytes).unwrap();
        for (a, b) in mlp.weights().iter().zip(back.weights()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back.config().sigma.to_bits(), mlp.config().sigma.to_bits());
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&small());
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[18..26].try_into().unwrap()), 1.0 + 8e-4);
        assert_eq!(bytes[34], 1);
        assert_eq!(bytes[35], 1);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&small());
        bytes[0] = b'X';
        match decode(&bytes) {
            Err(Error::Parse(p)) => {
                assert_eq!(p.offset, 0);
                assert!(matches!(p.kind, ParseErrorKind::BadMagic { .. }));
            }
            other => panic!("expected bad magic, got {other:?}"),
        }
    }

    #[test]
    fn truncation_names_lengths() {
        let bytes = encode(&small());
        let cut = &bytes[..bytes.len() - 20];
        match decode(cut) {
            Err(Error::Parse(p)) => match p.kind {
                ParseErrorKind::Truncated { expected, actual } => {
                    assert_eq!(expected, bytes.len() as u64);
                    assert_eq!(actual, cut.len() as u64);
                }
                k => panic!("wrong kind {k:?}"),
            },
            other => panic!("expected truncation, got {other:?}"),
        }
        assert!(matches!(decode(&bytes[..10]), Err(Error::Parse(_))));
    }

    #[test]
    fn corruption_fails_checksum() {
        let mut bytes = encode(&small());
        bytes[50] ^= 0x01;
        match decode(&bytes) {
            Err(Error::Parse(p)) => assert!(matches!(p.kind, ParseErrorKind::Checksum { .. })),
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn shape_expectation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.iimlp");
        save_checkpoint(&small(), &path).unwrap();
        let ok = CheckpointShape {
            layers: 2,
            classes: 2,
            data_width: 3,
        };
        assert!(load_checkpoint_expecting(&path, ok).is_ok());
        let wrong = CheckpointShape { data_width: 4, ..ok };
        assert!(matches!(load_checkpoint_expecting(&path, wrong), Err(Error::Shape { .. })));
    }
}
