//! Ground-truth latency sources: parameterized synthetic devices and
//! lookup tables loaded from exported measurements.

mod pool;
mod synthetic;
mod table;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archspace::{ArchError, ArchKey, Architecture, SearchSpace};

pub use pool::{
    generate_pool, pairwise_correlations, Archetype, ArchetypeRanges, DevicePool, PoolConfig,
    PoolEntry, Split,
};
pub use synthetic::{InteractionCoeff, SyntheticDevice, MEASUREMENT_REPEATS};
pub use table::{
    build_dataset, load_table, measurement_seed, LatencyDataset, LatencyRow, TableHeader,
};

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("device `{device}` has no latency for {arch}")]
    UnknownArchitecture { device: String, arch: String },
    #[error("device `{device}` serves the {expected} space, got a {found} architecture")]
    WrongSpace {
        device: String,
        expected: SearchSpace,
        found: SearchSpace,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: latency {value} must be positive and finite")]
    InvalidLatency {
        path: String,
        line: usize,
        value: f64,
    },
    #[error(
        "{path}:{line}: duplicate ({device}, {arch}) with differing latency {first} vs {second}"
    )]
    ConflictingDuplicate {
        path: String,
        line: usize,
        device: String,
        arch: String,
        first: f64,
        second: f64,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid pool configuration: {0}")]
    Config(String),
    #[error(
        "pool calibration failed: device {index} violated the correlation band [{lo}, {hi}] \
         after {retries} retries; widen the archetype ranges or the band"
    )]
    Calibration {
        index: usize,
        lo: f64,
        hi: f64,
        retries: usize,
    },
    #[error("device `{0}` listed twice")]
    DuplicateDevice(String),
    #[error("requested {requested} samples for `{device}` but only {available} architectures are available")]
    NotEnoughArchitectures {
        device: String,
        requested: usize,
        available: usize,
    },
    #[error(transparent)]
    Arch(#[from] ArchError),
}

/// Measured latencies keyed by architecture hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableDevice {
    pub space: SearchSpace,
    pub latencies: BTreeMap<ArchKey, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeviceKind {
    Synthetic(SyntheticDevice),
    Table(TableDevice),
}

/// A black-box latency function identified by `device_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    #[serde(flatten)]
    pub kind: DeviceKind,
}

impl DeviceProfile {
    pub fn synthetic(device_id: impl Into<String>, device: SyntheticDevice) -> Self {
        Self {
            device_id: device_id.into(),
            kind: DeviceKind::Synthetic(device),
        }
    }

    pub fn space(&self) -> SearchSpace {
        match &self.kind {
            DeviceKind::Synthetic(s) => s.space,
            DeviceKind::Table(t) => t.space,
        }
    }

    /// Whether repeated measurements of one architecture can differ.
    pub fn is_noisy(&self) -> bool {
        matches!(&self.kind, DeviceKind::Synthetic(s) if s.noise_cv > 0.0)
    }

    /// Latency in milliseconds. Synthetic devices average
    /// [`MEASUREMENT_REPEATS`] noisy draws seeded by `seed`; tables return
    /// the stored value.
    pub fn measure(&self, arch: &Architecture, seed: u64) -> Result<f64, DeviceError> {
        if arch.space() != self.space() {
            return Err(DeviceError::WrongSpace {
                device: self.device_id.clone(),
                expected: self.space(),
                found: arch.space(),
            });
        }
        match &self.kind {
            DeviceKind::Synthetic(s) => Ok(s.measure(arch, seed)),
            DeviceKind::Table(t) => t.latencies.get(&arch.key()).copied().ok_or_else(|| {
                DeviceError::UnknownArchitecture {
                    device: self.device_id.clone(),
                    arch: arch.to_string(),
                }
            }),
        }
    }

    /// Noise-free latency where defined (synthetic), stored value otherwise.
    pub fn true_latency(&self, arch: &Architecture) -> Result<f64, DeviceError> {
        match &self.kind {
            DeviceKind::Synthetic(s) if arch.space() == s.space => Ok(s.latency(arch)),
            _ => self.measure(arch, 0),
        }
    }
}

impl fmt::Display for DeviceProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            DeviceKind::Synthetic(s) => s.archetype.to_string(),
            DeviceKind::Table(_) => "table".to_owned(),
        };
        write!(f, "{} ({kind})", self.device_id)
    }
}
