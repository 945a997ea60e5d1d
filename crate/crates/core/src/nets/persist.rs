//! Flat binary parameter files.
//!
//! Layout, all integers little-endian:
//! `"AGLA"`, `u32` version, then per tensor until EOF:
//! `u32` name length, UTF-8 name, `u32` rank, `u64` per dim, `f64` payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{AglaError, Result};
use crate::ndmath::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"AGLA";
pub const VERSION: u32 = 1;

pub fn encode_params<S: Scalar>(named: &[(String, &Tensor<S>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(AglaError::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_params<S: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<S>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(AglaError::Format {
            offset: 0,
            message: "bad magic, expected \"AGLA\"".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(AglaError::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let start = r.pos as u64;
        let n = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(n, "name")?.to_vec()).map_err(|_| AglaError::Format {
            offset: start + 4,
            message: "tensor name is not UTF-8".into(),
        })?;
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank).map(|_| r.u64("dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let payload = r.take(count.saturating_mul(8), "payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| S::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| AglaError::Format {
            offset: start,
            message: e.to_string(),
        })?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_params<S: Scalar>(path: &Path, named: &[(String, &Tensor<S>)]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_params(named))?;
    Ok(())
}

pub fn load_params<S: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<S>)>> {
    decode_params(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f64>::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let bytes = encode_params(&[("w".to_string(), &t)]);
        assert_eq!(&bytes[..4], b"AGLA");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(bytes[12], b'w');
        assert_eq!(&bytes[13..17], &2u32.to_le_bytes());
        assert_eq!(&bytes[bytes.len() - 8..], &(-2.0f64).to_le_bytes());
    }

    #[test]
    fn truncation_reports_offset() {
        let t = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_params(&[("a".to_string(), &t)]);
        let err = decode_params::<f64>(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, AglaError::Format { offset, .. } if offset as usize == bytes.len() - 24));
        assert!(matches!(decode_params::<f64>(b"AGLX\x01\0\0\0"), Err(AglaError::Format { offset: 0, .. })));
    }

    proptest! {
        #[test]
        fn round_trip(rows in 1usize..4, cols in 1usize..5, seed in any::<u64>(), name in "[a-z.0-9]{1,12}") {
            let data: Vec<f64> = (0..rows * cols).map(|i| ((seed as f64) * 1e-9 + i as f64).sin()).collect();
            let t = Tensor::new(vec![rows, cols], data).unwrap();
            let back = decode_params::<f64>(&encode_params(&[(name.clone(), &t)])).unwrap();
            prop_assert_eq!(&back[0].0, &name);
            prop_assert_eq!(&back[0].1, &t);
        }
    }
}
