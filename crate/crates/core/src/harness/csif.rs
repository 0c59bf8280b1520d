//! CSIF1 channel-trace files.
//!
//! Layout (little endian): `"CSIF"`, `u16` version = 1, `u32` T, `u16` N_r,
//! `u16` N_t, `f32` sample interval in ms, 6 reserved zero bytes; then
//! `T·N_r·N_t` `(re, im)` pairs of `f32`, snapshot by snapshot, row-major.

use std::path::Path;

use num_complex::Complex64;

use crate::mimo_channel::{CMatrix, ChannelTrace, ModelTag};
use crate::{Error, Result};

pub const CSIF_MAGIC: &[u8; 4] = b"CSIF";
pub const CSIF_VERSION: u16 = 1;
pub const CSIF_HEADER_LEN: usize = 24;

pub fn encode_csi(trace: &ChannelTrace) -> Result<Vec<u8>> {
    let (n_r, n_t) = trace.dims().ok_or_else(|| Error::input("cannot save an empty trace"))?;
    let t = u32::try_from(trace.len()).map_err(|_| Error::input("trace too long for CSIF1"))?;
    let (r16, t16) = match (u16::try_from(n_r), u16::try_from(n_t)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::input("antenna count exceeds CSIF1 limits")),
    };
    let mut out = Vec::with_capacity(CSIF_HEADER_LEN + trace.len() * n_r * n_t * 8);
    out.extend_from_slice(CSIF_MAGIC);
    out.extend_from_slice(&CSIF_VERSION.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&r16.to_le_bytes());
    out.extend_from_slice(&t16.to_le_bytes());
    out.extend_from_slice(&(trace.sample_interval_ms().unwrap_or(1.0) as f32).to_le_bytes());
    out.extend_from_slice(&[0u8; 6]);
    for r in trace.realizations() {
        for i in 0..n_r {
            for j in 0..n_t {
                let z = r.h[(i, j)];
                out.extend_from_slice(&(z.re as f32).to_le_bytes());
                out.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn read<const N: usize>(bytes: &[u8], at: usize) -> Result<[u8; N]> {
    bytes
        .get(at..at + N)
        .map(|s| s.try_into().expect("slice length"))
        .ok_or_else(|| Error::Format {
            offset: at as u64,
            msg: format!("header truncated: need {CSIF_HEADER_LEN} bytes, file has {}", bytes.len()),
        })
}

pub fn decode_csi(bytes: &[u8]) -> Result<ChannelTrace> {
    let magic: [u8; 4] = read(bytes, 0)?;
    if &magic != CSIF_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected \"CSIF\""),
        });
    }
    let version = u16::from_le_bytes(read(bytes, 4)?);
    if version != CSIF_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let t = u32::from_le_bytes(read(bytes, 6)?) as usize;
    let n_r = u16::from_le_bytes(read(bytes, 10)?) as usize;
    let n_t = u16::from_le_bytes(read(bytes, 12)?) as usize;
    let interval = f32::from_le_bytes(read(bytes, 14)?) as f64;
    let _reserved: [u8; 6] = read(bytes, 18)?;
    if t == 0 || n_r == 0 || n_t == 0 {
        return Err(Error::Format {
            offset: 6,
            msg: format!("empty dimensions T={t}, N_r={n_r}, N_t={n_t}"),
        });
    }
    if !(interval.is_finite() && interval > 0.0) {
        return Err(Error::Format {
            offset: 14,
            msg: format!("invalid sample interval {interval}"),
        });
    }
    let expected = CSIF_HEADER_LEN + t * n_r * n_t * 8;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected) as u64,
            msg: format!("expected {expected} bytes, file has {}", bytes.len()),
        });
    }
    let mut at = CSIF_HEADER_LEN;
    let mut f = || {
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("bounds checked"));
        at += 4;
        v as f64
    };
    let mats = (0..t)
        .map(|_| {
            let mut m = CMatrix::zeros(n_r, n_t);
            for i in 0..n_r {
                for j in 0..n_t {
                    let re = f();
                    let im = f();
                    m[(i, j)] = Complex64::new(re, im);
                }
            }
            m
        })
        .collect();
    ChannelTrace::from_matrices(mats, interval, ModelTag::FromFile)
}

pub fn save_csi(trace: &ChannelTrace, path: &Path) -> Result<()> {
    std::fs::write(path, encode_csi(trace)?)?;
    Ok(())
}

pub fn load_csi(path: &Path) -> Result<ChannelTrace> {
    decode_csi(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mimo_channel::{generate_trace, ChannelModelParams};

    fn trace() -> ChannelTrace {
        let p = ChannelModelParams {
            n_r: 3,
            n_t: 2,
            ..ChannelModelParams::default()
        };
        generate_trace(&p, 4, 5).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_at_f32() {
        let bytes = encode_csi(&trace()).unwrap();
        assert_eq!(bytes.len(), CSIF_HEADER_LEN + 5 * 3 * 2 * 8);
        let back = decode_csi(&bytes).unwrap();
        assert_eq!(encode_csi(&back).unwrap(), bytes);
        for (a, b) in back.realizations().iter().zip(trace().realizations()) {
            for (x, y) in a.h.iter().zip(b.h.iter()) {
                assert_eq!(x.re, y.re as f32 as f64);
                assert_eq!(x.im, y.im as f32 as f64);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csif");
        save_csi(&back, &path).unwrap();
        assert_eq!(load_csi(&path).unwrap(), back);
    }

    #[test]
    fn truncation_names_lengths() {
        let bytes = encode_csi(&trace()).unwrap();
        let err = decode_csi(&bytes[..bytes.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&format!("expected {}", bytes.len())), "{msg}");
        assert!(msg.contains(&format!("has {}", bytes.len() - 3)), "{msg}");
        assert!(matches!(decode_csi(&bytes[..10]), Err(Error::Format { offset: 10, .. })));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_csi(&trace()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_csi(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = encode_csi(&trace()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_csi(&bytes), Err(Error::Format { offset: 4, .. })));
    }
}
