//! SHA-256 digests of files and in-memory datasets.

use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// Digest over sample shape, little-endian inputs and labels.
pub fn sha256_dataset<T: Scalar>(ds: &Dataset<T>) -> String {
    let mut h = Sha256::new();
    for d in ds.sample_shape() {
        h.update((*d as u64).to_le_bytes());
    }
    let mut buf = Vec::with_capacity(ds.raw().len() * T::BYTES);
    for &v in ds.raw() {
        v.write_le(&mut buf);
    }
    h.update(&buf);
    for l in ds.labels() {
        h.update(l.to_string().as_bytes());
        h.update([0]);
    }
    hex(&h.finalize())
}
