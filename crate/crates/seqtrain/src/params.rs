//! Named parameter collections. A `ParamSet` is the unit of checkpointing,
//! averaging, and wire transfer; iteration order is always lexicographic by
//! name so every consumer sees the same deterministic ordering.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter tensor {:?}", name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Lexicographic (name, tensor) iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Checks that `other` holds exactly the same tensor names and shapes.
    pub fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Network(format!(
                "parameter sets disagree: {} vs {} tensors",
                self.len(),
                other.len()
            )));
        }
        for ((an, at), (bn, bt)) in self.iter().zip(other.iter()) {
            if an != bn {
                return Err(Error::Network(format!(
                    "parameter name mismatch: {:?} vs {:?}",
                    an, bn
                )));
            }
            if at.dims() != bt.dims() {
                return Err(Error::Network(format!(
                    "parameter {:?} shape mismatch: {:?} vs {:?}",
                    an,
                    at.dims(),
                    bt.dims()
                )));
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            tensors: iter.into_iter().collect(),
        }
    }
}

const DTYPE_F64: u8 = 1;

/// Encodes named tensors as the binary blob shared by checkpoints and the
/// wire protocol: count u32, then per tensor name_len u32 + name bytes,
/// dtype u8 (1 = f64), ndim u8, dims u64 each, data little-endian f64.
pub fn encode_tensors<'a>(tensors: impl Iterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let entries: Vec<(&str, &Tensor)> = tensors.collect();
    let mut out = Vec::new();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.push(t.dims().len() as u8);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes the tensor blob; rejects truncation and unknown dtypes.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let (out, consumed) = decode_tensors_prefix(bytes)?;
    if consumed != bytes.len() {
        return Err(Error::Format(format!(
            "tensor blob has {} trailing bytes",
            bytes.len() - consumed
        )));
    }
    Ok(out)
}

/// Decodes a tensor blob that may be followed by more payload; returns the
/// tensors and the number of bytes consumed.
pub fn decode_tensors_prefix(bytes: &[u8]) -> Result<(Vec<(String, Tensor)>, usize)> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Format(format!(
                "tensor blob truncated at byte {} (wanted {} more)",
                pos, n
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let dtype = take(&mut pos, 1)?[0];
        if dtype != DTYPE_F64 {
            return Err(Error::Format(format!(
                "tensor {:?}: unknown dtype {}",
                name, dtype
            )));
        }
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = take(&mut pos, numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_vec(&dims, data)));
    }
    Ok((out, pos))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_is_lexicographic() {
        let mut p = ParamSet::new();
        p.insert("z/b", Tensor::zeros(&[1]));
        p.insert("a/W", Tensor::zeros(&[2, 2]));
        p.insert("a/R", Tensor::zeros(&[2, 2]));
        let names: Vec<&str> = p.names().collect();
        assert_eq!(names, vec!["a/R", "a/W", "z/b"]);
    }

    #[test]
    fn alignment_checks() {
        let mut a = ParamSet::new();
        a.insert("w", Tensor::zeros(&[2, 3]));
        let mut b = ParamSet::new();
        b.insert("w", Tensor::zeros(&[2, 3]));
        assert!(a.check_aligned(&b).is_ok());
        b.insert("x", Tensor::zeros(&[1]));
        assert!(a.check_aligned(&b).is_err());
        let mut c = ParamSet::new();
        c.insert("w", Tensor::zeros(&[3, 2]));
        assert!(a.check_aligned(&c).is_err());
    }
}
