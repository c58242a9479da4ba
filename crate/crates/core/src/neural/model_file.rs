//! Model parameter files.
//!
//! Layout: a text header line
//!
//! ```text
//! #scriptcausal-model v1 <model-kind> <json-config>\n
//! ```
//!
//! followed by a little-endian binary block: `u32` tensor count, then per
//! tensor `u32` name length, UTF-8 name, `u32` rank, `u64` per dimension and
//! the `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{Parameters, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "#scriptcausal-model v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: String,
    /// Compact JSON, kept verbatim so rewriting a file reproduces it.
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl ModelFile {
    pub fn from_params<P: Parameters>(kind: &str, config: String, params: &P) -> Self {
        ModelFile {
            kind: kind.to_string(),
            config,
            tensors: params
                .tensors()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC} {} {}", self.kind, self.config)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut header = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            r.read_exact(&mut byte)
                .map_err(|_| Error::format("truncated model header"))?;
            if byte[0] == b'\n' {
                break;
            }
            header.push(byte[0]);
        }
        let header =
            String::from_utf8(header).map_err(|_| Error::format("model header is not UTF-8"))?;
        let rest = header
            .strip_prefix(MAGIC)
            .and_then(|s| s.strip_prefix(' '))
            .ok_or_else(|| Error::format("not a scriptcausal model file"))?;
        let (kind, config) = rest
            .split_once(' ')
            .ok_or_else(|| Error::format("model header lacks a config"))?;
        serde_json::from_str::<serde_json::Value>(config)
            .map_err(|e| Error::format(format!("bad model config: {e}")))?;

        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("tensor name is not UTF-8"))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(truncated)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b).map_err(truncated)?;
                data.push(f64::from_le_bytes(b));
            }
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(truncated)? != 0 {
            return Err(Error::format("trailing bytes after model tensors"));
        }
        Ok(ModelFile {
            kind: kind.to_string(),
            config: config.to_string(),
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f)).map_err(|e| e.in_file(path))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(format!(
                "expected a {kind} model, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        buf
    }
}

fn truncated(_: std::io::Error) -> Error {
    Error::format("truncated model file")
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_exact() {
        let params = vec![
            Tensor::from_vec(&[2, 2], vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
            Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap(),
        ];
        let file = ModelFile::from_params("test-kind", r#"{"a":1}"#.into(), &params);
        let bytes = file.to_bytes();
        let back = ModelFile::read(bytes.as_slice()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(ModelFile::read(&b"hello\n"[..]).is_err());
        let file = ModelFile::from_params("k", "{}".into(), &vec![Tensor::zeros(&[4])]);
        let bytes = file.to_bytes();
        assert!(ModelFile::read(&bytes[..bytes.len() - 3]).is_err());
    }
}
