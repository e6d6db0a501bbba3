//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "DBNMODEL"
//! version      u32
//! scalar tag   u8 length + ascii ("f32" | "f64")
//! header       u64 length + JSON { architecture, num_classes, dustbin_index }
//! params       u32 count, then per tensor:
//!                u32 name length + utf8 name
//!                u32 rank + u64 dims
//!                raw little-endian scalars
//! ```
//!
//! Readers reject unknown versions, scalar mismatches, truncation and
//! trailing bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Architecture;
use super::model::{Model, Param};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &[u8; 8] = b"DBNMODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    num_classes: usize,
    dustbin_index: Option<usize>,
}

pub fn encode_model<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.push(T::TAG.len() as u8);
    out.extend_from_slice(T::TAG.as_bytes());
    let header = serde_json::to_vec(&Header {
        architecture: model.arch.clone(),
        num_classes: model.num_classes,
        dustbin_index: model.dustbin_index,
    })
    .expect("header serializes");
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!("truncated while reading {what}")));
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

    fn len(&mut self, v: u64, what: &str) -> Result<usize> {
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| self.fail(format!("implausible {what} {v}")))
    }
}

pub fn decode_model<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Model<T>> {
    let mut r = Reader {
        path,
        buf: bytes,
        pos: 0,
    };
    if r.take(8, "magic")? != MODEL_MAGIC {
        r.pos = 0;
        return Err(r.fail("not a model file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(r.fail(format!(
            "unsupported format version {version} (expected {MODEL_FORMAT_VERSION})"
        )));
    }
    let tag_len = r.take(1, "scalar tag")?[0] as usize;
    let tag = r.take(tag_len, "scalar tag")?;
    if tag != T::TAG.as_bytes() {
        return Err(r.fail(format!(
            "stored scalar type {} does not match requested {}",
            String::from_utf8_lossy(tag),
            T::TAG
        )));
    }
    let header_len = r.u64("header length")?;
    let header_len = r.len(header_len, "header length")?;
    let header: Header =
        serde_json::from_slice(r.take(header_len, "header")?).map_err(|e| r.fail(format!("bad header: {e}")))?;
    let count = r.u32("parameter count")? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| r.fail("parameter name is not utf-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(r.fail(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            shape.push(r.len(d, "dimension")?);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * T::BYTES, "parameter data")?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let value = Tensor::new(shape, data).map_err(|e| r.fail(e.to_string()))?;
        params.push(Param { name, value });
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes after parameters"));
    }
    let model =
        Model::from_parts(header.architecture, params, header.dustbin_index).map_err(|e| r.fail(e.to_string()))?;
    if model.num_classes != header.num_classes {
        return Err(r.fail("class count disagrees with architecture"));
    }
    Ok(model)
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_mlp, build_victim_cnn};

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = build_victim_cnn::<f32>(&[1, 28, 28], 10, true, 5).unwrap();
        let bytes = encode_model(&m);
        let back: Model<f32> = decode_model(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, m);
        let x = Tensor::from_fn(vec![3, 1, 28, 28], |i| ((i * 31) % 17) as f32 / 17.0);
        assert_eq!(
            back.predict(&x, false, None).unwrap(),
            m.predict(&x, false, None).unwrap()
        );
    }

    #[test]
    fn every_truncation_is_rejected() {
        let m = build_mlp::<f64>(2, &[3], 2, true, 1).unwrap();
        let bytes = encode_model(&m);
        for cut in 0..bytes.len() {
            assert!(
                decode_model::<f64>(&bytes[..cut], Path::new("t")).is_err(),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn unknown_version_and_scalar_mismatch_rejected() {
        let m = build_mlp::<f64>(2, &[3], 2, false, 1).unwrap();
        let mut bytes = encode_model(&m);
        assert!(decode_model::<f32>(&bytes, Path::new("t")).is_err());
        bytes[8] = 99;
        let err = decode_model::<f64>(&bytes, Path::new("t")).unwrap_err().to_string();
        assert!(err.contains("version 99"), "{err}");
    }
}
