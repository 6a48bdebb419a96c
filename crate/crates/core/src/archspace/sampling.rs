use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

use super::{
    ArchError, Architecture, CellArchitecture, LayerwiseArchitecture, SearchSpace, CELL_SPACE_SIZE,
    LAYERWISE_CHOICES, LAYERWISE_POSITIONS,
};

pub const DEFAULT_REFERENCE_COUNT: usize = 10;
/// Minimum `max(MACs) / min(MACs)` over a generated reference set.
pub const MIN_REFERENCE_MAC_SPAN: f64 = 3.0;
const REFERENCE_ATTEMPTS: usize = 1000;

/// Every cell architecture in index order.
pub fn enumerate_cells() -> impl Iterator<Item = CellArchitecture> {
    (0..CELL_SPACE_SIZE).map(|i| CellArchitecture::from_index(i).expect("index in range"))
}

/// `n` distinct architectures drawn uniformly without replacement.
pub fn sample_architectures(
    space: SearchSpace,
    n: usize,
    seed: u64,
) -> Result<Vec<Architecture>, ArchError> {
    if n == 0 {
        return Err(ArchError::EmptySample);
    }
    if n as u128 > space.size() {
        return Err(ArchError::SpaceTooSmall {
            requested: n as u128,
            available: space.size(),
        });
    }
    let mut r = rng::rng(seed);
    match space {
        SearchSpace::Cell => Ok(index::sample(&mut r, CELL_SPACE_SIZE, n)
            .into_iter()
            .map(|i| Architecture::Cell(CellArchitecture::from_index(i).expect("in range")))
            .collect()),
        SearchSpace::Layerwise => {
            let mut seen = HashSet::with_capacity(n);
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let mut c = [0u8; LAYERWISE_POSITIONS];
                for x in c.iter_mut() {
                    *x = r.random_range(0..LAYERWISE_CHOICES as u8);
                }
                let a = LayerwiseArchitecture::new(c)?;
                if seen.insert(a) {
                    out.push(Architecture::Layerwise(a));
                }
            }
            Ok(out)
        }
    }
}

/// Fixed architectures whose latencies fingerprint a device.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceSet {
    space: SearchSpace,
    architectures: Vec<Architecture>,
}

#[derive(Serialize, Deserialize)]
struct ReferenceHeader {
    d: usize,
    space: SearchSpace,
}

impl ReferenceSet {
    pub fn new(space: SearchSpace, architectures: Vec<Architecture>) -> Result<Self, ArchError> {
        if architectures.is_empty() {
            return Err(ArchError::EmptySample);
        }
        if let Some(a) = architectures.iter().find(|a| a.space() != space) {
            return Err(ArchError::MixedSpaces {
                expected: space,
                found: a.space(),
            });
        }
        Ok(Self {
            space,
            architectures,
        })
    }

    pub fn space(&self) -> SearchSpace {
        self.space
    }

    pub fn d(&self) -> usize {
        self.architectures.len()
    }

    pub fn architectures(&self) -> &[Architecture] {
        &self.architectures
    }

    /// `max(MACs) / min(MACs)` over the members.
    pub fn mac_span(&self) -> f64 {
        mac_span(&self.architectures)
    }

    pub fn load(path: &Path) -> Result<Self, ArchError> {
        let text = fs::read_to_string(path).map_err(|source| ArchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ArchError> {
        let parse_err = |line: usize, message: String| ArchError::Parse {
            path: origin.to_owned(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, htext) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let header: ReferenceHeader = serde_json::from_str(htext)
            .map_err(|e| parse_err(hline, format!("bad header: {e}")))?;
        let mut archs = Vec::with_capacity(header.d);
        for (n, l) in lines {
            let a: Architecture =
                serde_json::from_str(l).map_err(|e| parse_err(n, e.to_string()))?;
            if a.space() != header.space {
                return Err(parse_err(
                    n,
                    format!(
                        "architecture in {} space, header says {}",
                        a.space(),
                        header.space
                    ),
                ));
            }
            archs.push(a);
        }
        if archs.len() != header.d {
            return Err(parse_err(
                hline,
                format!(
                    "header declares d={} but {} architectures follow",
                    header.d,
                    archs.len()
                ),
            ));
        }
        Self::new(header.space, archs)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&ReferenceHeader {
            d: self.d(),
            space: self.space,
        })
        .expect("header serialization");
        s.push('\n');
        for a in &self.architectures {
            s.push_str(&a.canonical_json());
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ArchError> {
        fs::write(path, self.to_jsonl()).map_err(|source| ArchError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn mac_span(archs: &[Architecture]) -> f64 {
    let macs: Vec<f64> = archs.iter().map(|a| a.macs() as f64).collect();
    let max = macs.iter().copied().fold(f64::MIN, f64::max);
    let min = macs.iter().copied().fold(f64::MAX, f64::min);
    max / min
}

/// `d` uniformly random architectures, redrawn until their MAC counts span
/// at least [`MIN_REFERENCE_MAC_SPAN`].
pub fn default_reference_set(
    space: SearchSpace,
    d: usize,
    seed: u64,
) -> Result<ReferenceSet, ArchError> {
    for attempt in 0..REFERENCE_ATTEMPTS {
        let archs = sample_architectures(space, d, rng::derive(seed, "reference", attempt as u64))?;
        if mac_span(&archs) >= MIN_REFERENCE_MAC_SPAN {
            return ReferenceSet::new(space, archs);
        }
    }
    Err(ArchError::ReferenceDiversity {
        span: MIN_REFERENCE_MAC_SPAN,
        attempts: REFERENCE_ATTEMPTS,
    })
}

/// Reads a JSON-lines architecture file.
pub fn read_arch_file(path: &Path) -> Result<Vec<Architecture>, ArchError> {
    let text = fs::read_to_string(path).map_err(|source| ArchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ArchError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_arch_file(path: &Path, archs: &[Architecture]) -> Result<(), ArchError> {
    let io = |source| ArchError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for a in archs {
        writeln!(f, "{}", a.canonical_json()).map_err(io)?;
    }
    f.flush().map_err(io)
}
