//! Checkpoint layout: an 8-byte little-endian header length, a UTF-8 JSON
//! header naming the tensors and their shapes, then every tensor's values as
//! little-endian `f64` in header order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{NeuralError, Tensor};
use crate::Result;

pub const CHECKPOINT_FORMAT: &str = "mmforge-ckpt-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

impl Checkpoint {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor) {
        self.tensors.push((name.into(), t.clone()));
    }

    /// Takes the tensors out in order, checking names and shapes against
    /// the model they are loaded into.
    pub fn load_into(&self, targets: Vec<(String, &mut Tensor)>) -> Result<(), NeuralError> {
        if targets.len() != self.tensors.len() {
            return Err(NeuralError::Checkpoint(format!(
                "expected {} tensors, file has {}",
                targets.len(),
                self.tensors.len()
            )));
        }
        for ((name, dst), (src_name, src)) in targets.into_iter().zip(&self.tensors) {
            if name != *src_name || dst.shape() != src.shape() {
                return Err(NeuralError::Checkpoint(format!(
                    "tensor {src_name} {:?} does not fit {name} {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        format: CHECKPOINT_FORMAT.to_string(),
        kind: ckpt.kind.clone(),
        meta: ckpt.meta.clone(),
        tensors: ckpt
            .tensors
            .iter()
            .map(|(name, t)| Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in &ckpt.tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let bad = |m: String| crate::Error::from(NeuralError::Checkpoint(m));
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 26 {
        return Err(bad(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(bad(format!("unknown format {}", header.format)));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push((e.name, Tensor::new(e.shape, data)?));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint {
        kind: header.kind,
        meta: header.meta,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut c = Checkpoint::new("test", serde_json::json!({"b": 3}));
        c.push("w", &Tensor::new(vec![2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        c.push("b", &Tensor::vector(vec![]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.tensors[0].1.data()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back, c);
    }

    #[test]
    fn truncated_and_trailing_input_fail() {
        let mut c = Checkpoint::new("test", serde_json::Value::Null);
        c.push("w", &Tensor::vector(vec![1.0, 2.0]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }

    #[test]
    fn load_checks_shapes() {
        let mut c = Checkpoint::new("t", serde_json::Value::Null);
        c.push("w", &Tensor::vector(vec![1.0, 2.0]));
        let mut t = Tensor::zeros(&[3]);
        assert!(c.load_into(vec![("w".into(), &mut t)]).is_err());
        let mut t = Tensor::zeros(&[2]);
        c.load_into(vec![("w".into(), &mut t)]).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0]);
    }
}
