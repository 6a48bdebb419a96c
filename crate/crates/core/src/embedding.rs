//! Hardware embeddings and few-shot episode sampling.
//!
//! A device is fingerprinted by its latencies on the fixed reference set,
//! min-max scaled into `[0, 1]`:
//!
//! ```text
//! v_i = (y_i − min y) / (max y − min y)
//! ```
//!
//! The same anchors map latency targets into the model's standardized space.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archspace::{Architecture, ReferenceSet};
use crate::devicesim::{measurement_seed, DeviceError, DeviceProfile, LatencyDataset};
use crate::rng;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("device `{device}` is degenerate: all {d} reference latencies equal {value} ms")]
    Degenerate {
        device: String,
        d: usize,
        value: f64,
    },
    #[error("device `{device}` has {available} rows, episode needs {needed} (k_shot {k_shot} + query {query})")]
    InsufficientRows {
        device: String,
        available: usize,
        needed: usize,
        k_shot: usize,
        query: usize,
    },
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("no devices to sample episodes from")]
    NoDevices,
    #[error("embedding has no anchors (raw_min {raw_min}, raw_max {raw_max})")]
    MissingAnchors { raw_min: f64, raw_max: f64 },
    #[error("non-finite reference latency {0}")]
    NonFinite(f64),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Min-max scaled reference latencies plus the anchors used to scale them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareEmbedding {
    pub device_id: String,
    pub values: Vec<f64>,
    pub raw_min: f64,
    pub raw_max: f64,
}

impl HardwareEmbedding {
    /// Scales `raw` reference latencies into `[0, 1]`.
    pub fn from_raw(device_id: impl Into<String>, raw: &[f64]) -> Result<Self, EmbeddingError> {
        let device_id = device_id.into();
        if let Some(&x) = raw.iter().find(|x| !x.is_finite()) {
            return Err(EmbeddingError::NonFinite(x));
        }
        let raw_min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let raw_max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if raw.is_empty() || raw_max <= raw_min {
            return Err(EmbeddingError::Degenerate {
                device: device_id,
                d: raw.len(),
                value: raw.first().copied().unwrap_or(f64::NAN),
            });
        }
        let span = raw_max - raw_min;
        let values = raw.iter().map(|&y| (y - raw_min) / span).collect();
        Ok(Self {
            device_id,
            values,
            raw_min,
            raw_max,
        })
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    fn span(&self) -> Result<f64, EmbeddingError> {
        let span = self.raw_max - self.raw_min;
        if span > 0.0 && span.is_finite() {
            Ok(span)
        } else {
            Err(EmbeddingError::MissingAnchors {
                raw_min: self.raw_min,
                raw_max: self.raw_max,
            })
        }
    }

    /// Milliseconds into the standardized target space.
    pub fn standardize(&self, ms: f64) -> Result<f64, EmbeddingError> {
        Ok((ms - self.raw_min) / self.span()?)
    }

    /// Standardized prediction back to milliseconds.
    pub fn destandardize(&self, p: f64) -> Result<f64, EmbeddingError> {
        Ok(p * self.span()? + self.raw_min)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("embedding serialization")
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        std::fs::write(path, self.to_json()).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Measures every reference architecture on `device` and scales the result.
pub fn compute_embedding(
    device: &DeviceProfile,
    refset: &ReferenceSet,
    seed: u64,
) -> Result<HardwareEmbedding, EmbeddingError> {
    let raw = reference_latencies(device, refset, seed)?;
    HardwareEmbedding::from_raw(device.device_id.clone(), &raw)
}

pub fn reference_latencies(
    device: &DeviceProfile,
    refset: &ReferenceSet,
    seed: u64,
) -> Result<Vec<f64>, EmbeddingError> {
    refset
        .architectures()
        .iter()
        .map(|a| Ok(device.measure(a, measurement_seed(seed, &device.device_id, a))?))
        .collect()
}

/// One few-shot task: a device, its embedding, and disjoint support and
/// query samples. Latencies are milliseconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub device_id: String,
    pub v_h: HardwareEmbedding,
    pub support_archs: Vec<Architecture>,
    pub support_ms: Vec<f64>,
    pub query_archs: Vec<Architecture>,
    pub query_ms: Vec<f64>,
}

/// Per-device sample pools plus the embeddings of their devices.
#[derive(Clone, Debug)]
pub struct TaskSource {
    samples: BTreeMap<String, Vec<(Architecture, f64)>>,
    profiles: BTreeMap<String, DeviceProfile>,
    cached: BTreeMap<String, HardwareEmbedding>,
    refset: ReferenceSet,
    remeasure: bool,
}

impl TaskSource {
    /// Indexes `dataset` by device and fingerprints every device in `profiles`
    /// that has rows. With `remeasure`, noisy devices get a freshly measured
    /// embedding per episode; otherwise the embedding measured under `seed`
    /// is reused.
    pub fn new<'a>(
        dataset: &LatencyDataset,
        profiles: impl IntoIterator<Item = &'a DeviceProfile>,
        refset: ReferenceSet,
        remeasure: bool,
        seed: u64,
    ) -> Result<Self, EmbeddingError> {
        let mut samples: BTreeMap<String, Vec<(Architecture, f64)>> = BTreeMap::new();
        for r in &dataset.rows {
            samples
                .entry(r.device_id.clone())
                .or_default()
                .push((r.arch, r.latency_ms));
        }
        let mut out_profiles = BTreeMap::new();
        let mut cached = BTreeMap::new();
        for p in profiles {
            if samples.contains_key(&p.device_id) {
                cached.insert(p.device_id.clone(), compute_embedding(p, &refset, seed)?);
                out_profiles.insert(p.device_id.clone(), p.clone());
            }
        }
        if let Some(id) = samples.keys().find(|id| !out_profiles.contains_key(*id)) {
            return Err(EmbeddingError::UnknownDevice(id.clone()));
        }
        Ok(Self {
            samples,
            profiles: out_profiles,
            cached,
            refset,
            remeasure,
        })
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.samples.keys().cloned().collect()
    }

    pub fn refset(&self) -> &ReferenceSet {
        &self.refset
    }

    pub fn rows(&self, device_id: &str) -> Result<&[(Architecture, f64)], EmbeddingError> {
        self.samples
            .get(device_id)
            .map(Vec::as_slice)
            .ok_or_else(|| EmbeddingError::UnknownDevice(device_id.to_owned()))
    }

    pub fn embedding(
        &self,
        device_id: &str,
        seed: u64,
    ) -> Result<HardwareEmbedding, EmbeddingError> {
        let p = self
            .profiles
            .get(device_id)
            .ok_or_else(|| EmbeddingError::UnknownDevice(device_id.to_owned()))?;
        if self.remeasure && p.is_noisy() {
            compute_embedding(p, &self.refset, seed)
        } else {
            Ok(self.cached[device_id].clone())
        }
    }

    /// `k_shot` support and `query` query samples drawn without replacement.
    pub fn sample_episode(
        &self,
        device_id: &str,
        k_shot: usize,
        query: usize,
        seed: u64,
    ) -> Result<Episode, EmbeddingError> {
        let rows = self.rows(device_id)?;
        let needed = k_shot + query;
        if needed > rows.len() {
            return Err(EmbeddingError::InsufficientRows {
                device: device_id.to_owned(),
                available: rows.len(),
                needed,
                k_shot,
                query,
            });
        }
        let mut r = rng::child_rng(seed, "episode-rows", 0);
        let picked = index::sample(&mut r, rows.len(), needed).into_vec();
        let (s, q) = picked.split_at(k_shot);
        let v_h = self.embedding(device_id, rng::derive(seed, "embedding", 0))?;
        Ok(Episode {
            device_id: device_id.to_owned(),
            v_h,
            support_archs: s.iter().map(|&i| rows[i].0).collect(),
            support_ms: s.iter().map(|&i| rows[i].1).collect(),
            query_archs: q.iter().map(|&i| rows[i].0).collect(),
            query_ms: q.iter().map(|&i| rows[i].1).collect(),
        })
    }

    /// `meta_batch` episodes on devices drawn with replacement from `device_ids`.
    pub fn build_meta_batch(
        &self,
        device_ids: &[String],
        meta_batch: usize,
        k_shot: usize,
        query: usize,
        seed: u64,
    ) -> Result<Vec<Episode>, EmbeddingError> {
        if device_ids.is_empty() {
            return Err(EmbeddingError::NoDevices);
        }
        let mut r = rng::child_rng(seed, "meta-batch-devices", 0);
        (0..meta_batch)
            .map(|i| {
                let d = &device_ids[r.random_range(0..device_ids.len())];
                self.sample_episode(d, k_shot, query, rng::derive(seed, "episode", i as u64))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn titan_rtx_reference_vector() {
        let raw = [5.9, 8.5, 11.8, 14.1, 15.5, 16.6, 17.6, 19.1, 28.5, 44.3];
        let e = HardwareEmbedding::from_raw("titan_rtx", &raw).unwrap();
        // hand-computed: (y − 5.9) / 38.4
        let want = [
            0.0,
            2.6 / 38.4,
            5.9 / 38.4,
            8.2 / 38.4,
            9.6 / 38.4,
            10.7 / 38.4,
            11.7 / 38.4,
            13.2 / 38.4,
            22.6 / 38.4,
            1.0,
        ];
        for (v, w) in e.values.iter().zip(want) {
            assert!((v - w).abs() < 1e-9, "{v} vs {w}");
        }
        assert!((e.values[2] - 0.15365).abs() < 1e-5);
        assert_eq!(e.values[0], 0.0);
        assert_eq!(e.values[9], 1.0);
    }

    #[test]
    fn constant_vector_is_degenerate() {
        let err = HardwareEmbedding::from_raw("flat", &[3.0; 10]).unwrap_err();
        assert!(matches!(err, EmbeddingError::Degenerate { .. }));
        assert!(err.to_string().contains("flat"));
    }

    #[test]
    fn anchors_map_zero_and_one() {
        let e = HardwareEmbedding::from_raw("x", &[2.0, 7.0, 4.0]).unwrap();
        assert_eq!(e.destandardize(0.0).unwrap(), 2.0);
        assert_eq!(e.destandardize(1.0).unwrap(), 7.0);
        for p in [-0.3, 0.25, 0.5, 1.7] {
            assert!((e.standardize(e.destandardize(p).unwrap()).unwrap() - p).abs() < 1e-12);
        }
        let broken = HardwareEmbedding { raw_max: 2.0, ..e };
        assert!(matches!(
            broken.destandardize(0.5),
            Err(EmbeddingError::MissingAnchors { .. })
        ));
    }

    #[test]
    fn json_export_fields() {
        let e = HardwareEmbedding::from_raw("x", &[1.0, 3.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["device_id"], "x");
        assert_eq!(v["values"], serde_json::json!([0.0, 1.0]));
        assert_eq!(v["raw_min"], 1.0);
        assert_eq!(v["raw_max"], 3.0);
    }
}
