//! `GCMR` binary tensors: a 5-byte magic, a version byte, a dtype code, the
//! rank, `u32` dims and a little-endian row-major payload. Several named
//! tensors can be packed into one bundle (used for checkpoints).

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex32;

use crate::error::{Error, Result};
use crate::numerics::C64;

pub const MAGIC: &[u8; 5] = b"GCMR1";
pub const VERSION: u8 = 1;
pub const BUNDLE_MAGIC: &[u8; 8] = b"GCMRIDX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    C32 = 1,
    F64 = 2,
}

impl DType {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::C32),
            2 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::C32 | DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    F32(ArrayD<f32>),
    C32(ArrayD<Complex32>),
    F64(ArrayD<f64>),
}

impl Tensor {
    pub fn dtype(&self) -> DType {
        match self {
            Tensor::F32(_) => DType::F32,
            Tensor::C32(_) => DType::C32,
            Tensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::F32(a) => a.shape(),
            Tensor::C32(a) => a.shape(),
            Tensor::F64(a) => a.shape(),
        }
    }

    /// Complex data stored at single precision.
    pub fn from_complex(a: &ArrayD<C64>) -> Self {
        Tensor::C32(a.mapv(|z| Complex32::new(z.re as f32, z.im as f32)))
    }

    pub fn to_complex(&self) -> Result<ArrayD<C64>> {
        match self {
            Tensor::C32(a) => Ok(a.mapv(|z| C64::new(z.re as f64, z.im as f64))),
            other => Err(Error::Format(format!("expected complex tensor, found {:?}", other.dtype()))),
        }
    }

    /// Any real tensor widened to `f64`.
    pub fn to_real(&self) -> Result<ArrayD<f64>> {
        match self {
            Tensor::F32(a) => Ok(a.mapv(|v| v as f64)),
            Tensor::F64(a) => Ok(a.clone()),
            Tensor::C32(_) => Err(Error::Format("expected real tensor, found complex".into())),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let shape = self.shape();
        let n: usize = shape.iter().product();
        let mut out = Vec::with_capacity(8 + 4 * shape.len() + n * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype() as u8);
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match self {
            Tensor::F32(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Tensor::C32(a) => a.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
            Tensor::F64(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
        out
    }

    /// Decodes one tensor from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(5, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format("bad magic, not a GCMR tensor".into()));
        }
        let version = r.take(1, "version")?[0];
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let dtype = DType::from_code(r.take(1, "dtype")?[0])?;
        let ndim = r.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        let payload = r.take(n * dtype.size(), "payload")?;
        let t = match dtype {
            DType::F32 => {
                let v: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::F32(ArrayD::from_shape_vec(IxDyn(&dims), v).expect("length checked"))
            }
            DType::C32 => {
                let v: Vec<Complex32> = payload
                    .chunks_exact(8)
                    .map(|c| {
                        Complex32::new(
                            f32::from_le_bytes(c[..4].try_into().unwrap()),
                            f32::from_le_bytes(c[4..].try_into().unwrap()),
                        )
                    })
                    .collect();
                Tensor::C32(ArrayD::from_shape_vec(IxDyn(&dims), v).expect("length checked"))
            }
            DType::F64 => {
                let v: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::F64(ArrayD::from_shape_vec(IxDyn(&dims), v).expect("length checked"))
            }
        };
        Ok((t, r.pos))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len().saturating_sub(self.pos)
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, "u32")?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, "u64")?.try_into().unwrap()))
    }
}

/// Decodes a single tensor; trailing bytes are an error.
pub fn decode_exact(bytes: &[u8]) -> Result<Tensor> {
    let (t, used) = Tensor::decode(bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after tensor", bytes.len() - used)));
    }
    Ok(t)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&t.encode())?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_exact(&std::fs::read(path)?)
}

/// Bundle layout: [`BUNDLE_MAGIC`], version byte, `u32` entry count, then per
/// entry a `u16` name length, the UTF-8 name, a `u64` record length and the
/// encoded tensor.
pub fn encode_bundle(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let rec = t.encode();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
        out.extend_from_slice(&rec);
    }
    out
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "bundle magic")? != BUNDLE_MAGIC {
        return Err(Error::Format("bad magic, not a GCMR bundle".into()));
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = String::from_utf8(r.take(len, "name")?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rec_len = r.u64()? as usize;
        let t = decode_exact(r.take(rec_len, "record")?)?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after bundle".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample() -> Vec<Tensor> {
        let mut rng = Rng::new(0);
        vec![
            Tensor::F32(ArrayD::from_shape_fn(IxDyn(&[2, 3]), |_| rng.normal() as f32)),
            Tensor::C32(ArrayD::from_shape_fn(IxDyn(&[2, 2, 2]), |_| {
                Complex32::new(rng.normal() as f32, rng.normal() as f32)
            })),
            Tensor::F64(ArrayD::from_shape_fn(IxDyn(&[5]), |_| rng.normal())),
            Tensor::F64(ArrayD::zeros(IxDyn(&[0, 3]))),
        ]
    }

    #[test]
    fn round_trip_is_byte_exact() {
        for t in sample() {
            let bytes = t.encode();
            let back = decode_exact(&bytes).unwrap();
            assert_eq!(back, t);
            assert_eq!(back.encode(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let t = Tensor::F64(ArrayD::from_shape_vec(IxDyn(&[1, 2]), vec![1.0, -2.0]).unwrap());
        let b = t.encode();
        assert_eq!(&b[..5], b"GCMR1");
        assert_eq!(b[5], VERSION);
        assert_eq!(b[6], 2);
        assert_eq!(b[7], 2);
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..24], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 16 + 2 * 8);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample()[1].encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_exact(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[5] = 9;
        assert!(matches!(decode_exact(&bad), Err(Error::Version { found: 9, .. })));
        assert!(matches!(decode_exact(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
        let mut bad = bytes.clone();
        bad[6] = 7;
        assert!(decode_exact(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_exact(&long).is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let entries: Vec<(String, Tensor)> = sample()
            .into_iter()
            .enumerate()
            .map(|(i, t)| (format!("t{i}"), t))
            .collect();
        let bytes = encode_bundle(&entries);
        let back = decode_bundle(&bytes).unwrap();
        assert_eq!(back, entries);
        assert_eq!(encode_bundle(&back), bytes);
        assert!(matches!(decode_bundle(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
        assert!(decode_bundle(&sample()[0].encode()).is_err());
    }

    #[test]
    fn complex_conversion() {
        let a = ArrayD::from_shape_vec(IxDyn(&[2]), vec![C64::new(0.5, -0.25), C64::new(1.0, 2.0)]).unwrap();
        let t = Tensor::from_complex(&a);
        assert_eq!(t.to_complex().unwrap(), a);
        assert!(t.to_real().is_err());
    }
}
