//! SSAD activation dumps.
//!
//! Layout, all integers little-endian:
//!
//! | field    | type          |
//! |----------|---------------|
//! | magic    | u32 `0x53534144` |
//! | version  | u16 (1)       |
//! | name_len | u16           |
//! | name     | UTF-8 bytes   |
//! | dtype    | u8: 0 = f32, 1 = f64 |
//! | n, p     | u64, u64      |
//! | values   | `n·p` floats, row-major |

use std::path::Path;

use simscope_core::ActivationMatrix;

use crate::fsutil;
use crate::{Error, Result};

pub const MAGIC: u32 = 0x5353_4144;
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DType {
    F32,
    #[default]
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Serialises one layer. Values are narrowed when `dtype` is f32.
pub fn encode(m: &ActivationMatrix, dtype: DType) -> std::result::Result<Vec<u8>, String> {
    let name = m.layer_name().as_bytes();
    let name_len = u16::try_from(name.len()).map_err(|_| format!("layer name is {} bytes, limit 65535", name.len()))?;
    let values = m.matrix().as_slice();
    let mut out = Vec::with_capacity(25 + name.len() + values.len() * dtype.width());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name);
    out.push(dtype.code());
    out.extend_from_slice(&(m.n() as u64).to_le_bytes());
    out.extend_from_slice(&(m.p() as u64).to_le_bytes());
    match dtype {
        DType::F32 => values.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => values.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated while reading {what} at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N, what)?.try_into().expect("slice length"))
    }
}

/// Parses one layer; the reported dtype is the one stored on disk.
pub fn decode(bytes: &[u8]) -> std::result::Result<(ActivationMatrix, DType), String> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = u32::from_le_bytes(r.array("magic")?);
    if magic != MAGIC {
        return Err(format!("bad magic 0x{magic:08x}, expected 0x{MAGIC:08x}"));
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let name_len = u16::from_le_bytes(r.array("name length")?) as usize;
    let name = std::str::from_utf8(r.take(name_len, "layer name")?).map_err(|_| "layer name is not UTF-8".to_string())?;
    let dtype = match r.array::<1>("dtype")?[0] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(format!("unknown dtype code {other}")),
    };
    let n = u64::from_le_bytes(r.array("n")?);
    let p = u64::from_le_bytes(r.array("p")?);
    let count = n
        .checked_mul(p)
        .and_then(|c| usize::try_from(c).ok())
        .filter(|c| c.checked_mul(dtype.width()).is_some())
        .ok_or_else(|| format!("shape {n}x{p} is too large"))?;
    let raw = r.take(count * dtype.width(), "values")?;
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let values: Vec<f64> = match dtype {
        DType::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    let m = ActivationMatrix::from_vec(name, n as usize, p as usize, values).map_err(|e| e.to_string())?;
    Ok((m, dtype))
}

pub fn write_dump(path: &Path, m: &ActivationMatrix, dtype: DType) -> Result<()> {
    let bytes = encode(m, dtype).map_err(|message| Error::Format { path: path.to_path_buf(), message })?;
    fsutil::write_atomic(path, &bytes)
}

pub fn read_dump(path: &Path) -> Result<ActivationMatrix> {
    let bytes = fsutil::read(path)?;
    decode(&bytes).map(|(m, _)| m).map_err(|message| Error::Format { path: path.to_path_buf(), message })
}

#[cfg(test)]
mod tests {
    use super::*;
    use simscope_core::Matrix;

    fn layer() -> ActivationMatrix {
        let m = Matrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) * (j as f64 - 0.7) / 3.0);
        ActivationMatrix::new("encoder_1", m).unwrap()
    }

    #[test]
    fn header_layout() {
        let b = encode(&layer(), DType::F64).unwrap();
        assert_eq!(&b[..4], &[0x44, 0x41, 0x53, 0x53]);
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..8], &[9, 0]);
        assert_eq!(&b[8..17], b"encoder_1");
        assert_eq!(b[17], 1);
        assert_eq!(u64::from_le_bytes(b[18..26].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(b[26..34].try_into().unwrap()), 2);
        assert_eq!(b.len(), 34 + 6 * 8);
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let m = layer();
        let (back, dtype) = decode(&encode(&m, DType::F64).unwrap()).unwrap();
        assert_eq!(dtype, DType::F64);
        assert_eq!(back.layer_name(), "encoder_1");
        let bits = |m: &ActivationMatrix| m.matrix().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn f32_dumps_are_readable() {
        let m = layer();
        let (back, dtype) = decode(&encode(&m, DType::F32).unwrap()).unwrap();
        assert_eq!(dtype, DType::F32);
        for (a, b) in back.matrix().as_slice().iter().zip(m.matrix().as_slice()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn malformed_inputs() {
        let good = encode(&layer(), DType::F64).unwrap();
        let mut bad = good.clone();
        bad[0] ^= 0xff;
        assert!(decode(&bad).unwrap_err().contains("magic"));
        assert!(decode(&good[..good.len() - 1]).unwrap_err().contains("truncated"));
        let mut long = good.clone();
        long.push(0);
        assert!(decode(&long).unwrap_err().contains("trailing"));
        let mut dtype = good;
        dtype[17] = 7;
        assert!(decode(&dtype).unwrap_err().contains("dtype"));
    }
}
