use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{Shape, Tensor};
use super::NnetError;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const BINARY_MAGIC: &[u8; 8] = b"HELPCKPT";

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    ArchEncoder,
    DeviceEncoder,
    HeaderWeights,
    HeaderBiases,
    Modulator,
    Alpha,
}

impl ParamGroup {
    /// Groups that make up the predictor `f` itself.
    pub fn is_predictor(self) -> bool {
        matches!(
            self,
            Self::ArchEncoder | Self::DeviceEncoder | Self::HeaderWeights | Self::HeaderBiases
        )
    }

    pub fn is_header(self) -> bool {
        matches!(self, Self::HeaderWeights | Self::HeaderBiases)
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::ArchEncoder => "arch_encoder",
            Self::DeviceEncoder => "device_encoder",
            Self::HeaderWeights => "header_weights",
            Self::HeaderBiases => "header_biases",
            Self::Modulator => "modulator",
            Self::Alpha => "alpha",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Named tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    group: ParamGroup,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    params: Vec<CheckpointEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        tensor: Tensor,
    ) -> Result<usize, NnetError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnetError::DuplicateParam(name));
        }
        let idx = self.params.len();
        self.index.insert(name.clone(), idx);
        self.params.push(Param {
            name,
            group,
            tensor,
        });
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnetError> {
        self.position(name)
            .map(|i| &self.params[i].tensor)
            .ok_or_else(|| NnetError::UnknownParam(name.to_owned()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NnetError> {
        match self.position(name) {
            Some(i) => Ok(&mut self.params[i].tensor),
            None => Err(NnetError::UnknownParam(name.to_owned())),
        }
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.params[idx].tensor
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].tensor
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.shape().len()).sum()
    }

    pub fn group_scalar_count(&self, group: ParamGroup) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.tensor.shape().len())
            .sum()
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params: self
                .params
                .iter()
                .map(|p| CheckpointEntry {
                    name: p.name.clone(),
                    group: p.group,
                    shape: [p.tensor.rows(), p.tensor.cols()],
                    data: p.tensor.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&ck).expect("checkpoint serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, NnetError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| NnetError::Checkpoint(e.to_string()))?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(NnetError::Checkpoint(format!(
                "unsupported format version {} (expected {})",
                ck.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        let mut set = Self::new();
        for e in ck.params {
            let shape = Shape::new(e.shape[0], e.shape[1]);
            if shape.len() != e.data.len() {
                return Err(NnetError::Checkpoint(format!(
                    "parameter `{}` has {} values for shape {}",
                    e.name,
                    e.data.len(),
                    shape
                )));
            }
            set.insert(e.name, e.group, Tensor::new(shape, e.data))?;
        }
        Ok(set)
    }

    /// Binary checkpoint: magic, a JSON header of names, groups and shapes,
    /// then every value as little-endian `f64` in parameter order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params: self
                .params
                .iter()
                .map(|p| CheckpointEntry {
                    name: p.name.clone(),
                    group: p.group,
                    shape: [p.tensor.rows(), p.tensor.cols()],
                    data: Vec::new(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("checkpoint header serialization");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.scalar_count());
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            for x in p.tensor.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnetError> {
        let bad = |m: &str| NnetError::Checkpoint(m.to_owned());
        if bytes.len() < 16 || &bytes[..8] != BINARY_MAGIC {
            return Err(bad("not a binary checkpoint"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated header"))?;
        if hlen > body.len() {
            return Err(bad("truncated header"));
        }
        let ck: Checkpoint = serde_json::from_slice(&body[..hlen])
            .map_err(|e| NnetError::Checkpoint(e.to_string()))?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(NnetError::Checkpoint(format!(
                "unsupported format version {} (expected {})",
                ck.format_version, CHECKPOINT_FORMAT_VERSION
            )));
        }
        let mut values = body[hlen..].chunks_exact(8);
        let total: usize = ck.params.iter().map(|e| e.shape[0] * e.shape[1]).sum();
        if values.len() != total || !values.remainder().is_empty() {
            return Err(NnetError::Checkpoint(format!(
                "expected {total} values, found {} bytes",
                body.len() - hlen
            )));
        }
        let mut set = Self::new();
        for e in ck.params {
            let shape = Shape::new(e.shape[0], e.shape[1]);
            let data = values
                .by_ref()
                .take(shape.len())
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            set.insert(e.name, e.group, Tensor::new(shape, data))?;
        }
        Ok(set)
    }

    /// Writes JSON, or the binary layout when the extension is `.bin`.
    pub fn save(&self, path: &Path) -> Result<(), NnetError> {
        let bytes = if is_binary(path) {
            self.to_bytes()
        } else {
            self.to_json().into_bytes()
        };
        std::fs::write(path, bytes)
            .map_err(|e| NnetError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnetError> {
        let bytes = std::fs::read(path)
            .map_err(|e| NnetError::Checkpoint(format!("{}: {e}", path.display())))?;
        if is_binary(path) {
            Self::from_bytes(&bytes)
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|e| NnetError::Checkpoint(format!("{}: {e}", path.display())))?;
            Self::from_json(&text)
        }
    }

    /// Checks that `other` has the same names, groups and shapes in the same order.
    pub fn check_compatible(&self, other: &Self) -> Result<(), NnetError> {
        if self.len() != other.len() {
            return Err(NnetError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.group != b.group || a.tensor.shape() != b.tensor.shape() {
                return Err(NnetError::Checkpoint(format!(
                    "parameter mismatch: `{}` {} {} vs `{}` {} {}",
                    a.name,
                    a.group,
                    a.tensor.shape(),
                    b.name,
                    b.group,
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.insert("w", ParamGroup::Modulator, Tensor::scalar(1.0))
            .unwrap();
        assert!(matches!(
            p.insert("w", ParamGroup::Alpha, Tensor::scalar(2.0)),
            Err(NnetError::DuplicateParam(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut p = ParamSet::new();
        p.insert(
            "a",
            ParamGroup::ArchEncoder,
            Tensor::from_rows(&[vec![0.1, -3.25e-7], vec![1.0 / 3.0, 7.0]]),
        )
        .unwrap();
        p.insert("b", ParamGroup::Alpha, Tensor::row(vec![1e-2; 3]))
            .unwrap();
        let q = ParamSet::from_json(&p.to_json()).unwrap();
        assert_eq!(p, q);
        p.check_compatible(&q).unwrap();
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let mut p = ParamSet::new();
        p.insert(
            "w",
            ParamGroup::Modulator,
            Tensor::from_rows(&[vec![f64::MIN_POSITIVE, -0.0]]),
        )
        .unwrap();
        p.insert("z", ParamGroup::HeaderBiases, Tensor::row(vec![]))
            .unwrap();
        let bytes = p.to_bytes();
        assert_eq!(ParamSet::from_bytes(&bytes).unwrap(), p);
        assert!(ParamSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ParamSet::from_bytes(b"garbage").is_err());
    }

    #[test]
    fn wrong_version_rejected() {
        let text = r#"{"format_version":99,"params":[]}"#;
        assert!(ParamSet::from_json(text).is_err());
    }
}
