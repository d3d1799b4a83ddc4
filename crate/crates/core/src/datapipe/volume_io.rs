//! `SFV1` multi-channel volume files.
//!
//! Layout, little-endian: magic `SFV1`, then `u32` version, channels, D, H,
//! W, a `u8` dtype tag (1 = binary32), the payload in channel-major order and
//! a trailing `u64` FNV-1a checksum of the payload bytes.

use std::fs;
use std::path::Path;

use super::DataError;
use crate::VolumeField;

pub const MAGIC: &[u8; 4] = b"SFV1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 1;
const HEADER_LEN: usize = 4 + 5 * 4 + 1;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Serializes channels of equal dims. Returns the bytes and the payload
/// checksum.
pub fn encode_volume(channels: &[&VolumeField]) -> Result<(Vec<u8>, u64), DataError> {
    let first = channels.first().ok_or_else(|| DataError::Format("a volume needs at least one channel".into()))?;
    for c in channels {
        first.check_same(c, "encode_volume")?;
    }
    let dims = first.dims();
    let fits = |v: usize| u32::try_from(v).is_ok();
    if !fits(channels.len()) || !dims.iter().all(|&d| fits(d)) {
        return Err(DataError::Format(format!("shape {dims:?} x {} exceeds header limits", channels.len())));
    }
    let n = first.len();
    let mut out = Vec::with_capacity(HEADER_LEN + channels.len() * n * 4 + 8);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, channels.len() as u32, dims[0] as u32, dims[1] as u32, dims[2] as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(DTYPE_F32);
    for c in channels {
        for v in c.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&out[HEADER_LEN..]);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok((out, checksum))
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a volume; every channel gets `spacing` since the file does not
/// carry it.
pub fn decode_volume(bytes: &[u8], spacing: f64) -> Result<Vec<VolumeField>, DataError> {
    if bytes.len() < HEADER_LEN + 8 {
        return Err(DataError::Format(format!("truncated volume: {} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(DataError::Format(format!("bad magic {:?}, expected SFV1", &bytes[..4])));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(DataError::Format(format!("unsupported volume version {version}")));
    }
    let channels = u32_at(bytes, 8) as usize;
    let dims = [u32_at(bytes, 12) as usize, u32_at(bytes, 16) as usize, u32_at(bytes, 20) as usize];
    let dtype = bytes[24];
    if dtype != DTYPE_F32 {
        return Err(DataError::Format(format!("unsupported dtype tag {dtype}")));
    }
    let payload = &bytes[HEADER_LEN..bytes.len() - 8];
    let expected = channels
        .checked_mul(dims.iter().product::<usize>())
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| DataError::Format(format!("header shape {channels} x {dims:?} overflows")))?;
    if payload.len() != expected {
        return Err(DataError::Format(format!(
            "header declares {channels} x {dims:?} ({expected} payload bytes) but the file holds {}",
            payload.len()
        )));
    }
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let actual = fnv1a64(payload);
    if stored != actual {
        return Err(DataError::Format(format!("checksum mismatch: stored {stored:016x}, computed {actual:016x}")));
    }
    let n = dims.iter().product::<usize>();
    (0..channels)
        .map(|c| {
            let data = payload[c * n * 4..(c + 1) * n * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            Ok(VolumeField::new(dims, spacing, data)?)
        })
        .collect()
}

pub fn write_volume(path: &Path, channels: &[&VolumeField]) -> Result<u64, DataError> {
    let (bytes, checksum) = encode_volume(channels)?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))?;
    Ok(checksum)
}

pub fn read_volume(path: &Path, spacing: f64) -> Result<Vec<VolumeField>, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_volume(&bytes, spacing).map_err(|e| match e {
        DataError::Format(m) => DataError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn header_layout() {
        let f = VolumeField::filled([1, 2, 3], 1.0, 2.0);
        let (b, _) = encode_volume(&[&f]).unwrap();
        assert_eq!(&b[..4], b"SFV1");
        assert_eq!(u32_at(&b, 4), 1);
        assert_eq!(u32_at(&b, 8), 1);
        assert_eq!((u32_at(&b, 12), u32_at(&b, 16), u32_at(&b, 20)), (1, 2, 3));
        assert_eq!(b[24], 1);
        assert_eq!(b.len(), 25 + 6 * 4 + 8);
    }
}
