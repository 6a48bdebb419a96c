use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::archspace::{
    Architecture, SearchSpace, CELL_EDGES, CELL_OP_NAMES, LAYERWISE_BLOCK_NAMES,
    LAYERWISE_POSITIONS, NUM_EDGES,
};
use crate::rng;

use super::{DeviceError, DeviceKind, DevicePool, DeviceProfile, TableDevice};

pub const TABLE_FORMAT: &str = "help-latency-table";
pub const TABLE_VERSION: u32 = 1;

/// First line of a JSON-lines latency table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub format: String,
    pub version: u32,
    pub space: SearchSpace,
    /// `(source, target)` node pairs in cell op order; empty for layer-wise tables.
    pub edge_order: Vec<[usize; 2]>,
    pub op_names: Vec<String>,
}

impl TableHeader {
    pub fn new(space: SearchSpace) -> Self {
        let (edge_order, op_names) = match space {
            SearchSpace::Cell => (
                CELL_EDGES.iter().map(|&(s, t)| [s, t]).collect(),
                CELL_OP_NAMES.iter().map(|s| s.to_string()).collect(),
            ),
            SearchSpace::Layerwise => (
                Vec::new(),
                LAYERWISE_BLOCK_NAMES
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ),
        };
        Self {
            format: TABLE_FORMAT.to_owned(),
            version: TABLE_VERSION,
            space,
            edge_order,
            op_names,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub device_id: String,
    pub arch: Architecture,
    pub latency_ms: f64,
}

/// Measured `(device, architecture, latency)` rows in device-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyDataset {
    pub space: SearchSpace,
    pub rows: Vec<LatencyRow>,
}

impl LatencyDataset {
    /// Device ids in order of first appearance.
    pub fn device_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.device_id) {
                out.push(r.device_id.clone());
            }
        }
        out
    }

    pub fn rows_for<'a>(&'a self, device_id: &'a str) -> impl Iterator<Item = &'a LatencyRow> + 'a {
        self.rows.iter().filter(move |r| r.device_id == device_id)
    }

    /// Rows grouped by device, preserving row order within each device.
    pub fn by_device(&self) -> BTreeMap<&str, Vec<&LatencyRow>> {
        let mut m: BTreeMap<&str, Vec<&LatencyRow>> = BTreeMap::new();
        for r in &self.rows {
            m.entry(r.device_id.as_str()).or_default().push(r);
        }
        m
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = serde_json::to_string(&TableHeader::new(self.space)).expect("header");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r).expect("row"));
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["device_id", "arch", "latency_ms"])
            .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.device_id.as_str(),
                &r.arch.op_string(),
                &r.latency_ms.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Writes CSV when the extension is `.csv`, JSON lines otherwise.
    pub fn save(&self, path: &Path) -> Result<(), DeviceError> {
        let text = if is_csv(path) {
            self.to_csv()
        } else {
            self.to_jsonl()
        };
        let io = |source| DeviceError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(text.as_bytes()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, DeviceError> {
        let text = fs::read_to_string(path).map_err(|source| DeviceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let origin = path.display().to_string();
        if is_csv(path) {
            Self::parse_csv(&text, &origin)
        } else {
            Self::parse_jsonl(&text, &origin)
        }
    }

    pub fn parse_jsonl(text: &str, origin: &str) -> Result<Self, DeviceError> {
        let err = |line, message: String| DeviceError::Parse {
            path: origin.to_owned(),
            line,
            message,
        };
        let mut header_space = None;
        let mut rows = Vec::new();
        for (i, l) in text.lines().enumerate() {
            let line = i + 1;
            let l = l.trim();
            if l.is_empty() {
                continue;
            }
            let v: serde_json::Value =
                serde_json::from_str(l).map_err(|e| err(line, e.to_string()))?;
            if v.get("format").is_some() {
                if !rows.is_empty() || header_space.is_some() {
                    return Err(err(line, "header must be the first line".into()));
                }
                let h: TableHeader =
                    serde_json::from_value(v).map_err(|e| err(line, format!("bad header: {e}")))?;
                if h.format != TABLE_FORMAT || h.version != TABLE_VERSION {
                    return Err(err(
                        line,
                        format!("unsupported table format {} v{}", h.format, h.version),
                    ));
                }
                header_space = Some(h.space);
                continue;
            }
            let row: LatencyRow =
                serde_json::from_value(v).map_err(|e| err(line, e.to_string()))?;
            rows.push((line, row));
        }
        Self::validated(rows, header_space, origin)
    }

    pub fn parse_csv(text: &str, origin: &str) -> Result<Self, DeviceError> {
        let err = |line, message: String| DeviceError::Parse {
            path: origin.to_owned(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| err(1, format!("missing column `{name}`")))
        };
        let (cd, ca, cl) = (col("device_id")?, col("arch")?, col("latency_ms")?);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec =
                rec.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let ops = &rec[ca];
            let space = match ops.len() {
                NUM_EDGES => SearchSpace::Cell,
                LAYERWISE_POSITIONS => SearchSpace::Layerwise,
                n => {
                    return Err(err(
                        line,
                        format!("op string `{ops}` has length {n}, expected 6 or 22"),
                    ))
                }
            };
            let arch =
                Architecture::from_op_string(space, ops).map_err(|e| err(line, e.to_string()))?;
            let latency_ms: f64 = rec[cl]
                .parse()
                .map_err(|e| err(line, format!("latency_ms `{}`: {e}", &rec[cl])))?;
            rows.push((
                line,
                LatencyRow {
                    device_id: rec[cd].to_owned(),
                    arch,
                    latency_ms,
                },
            ));
        }
        Self::validated(rows, None, origin)
    }

    fn validated(
        rows: Vec<(usize, LatencyRow)>,
        header_space: Option<SearchSpace>,
        origin: &str,
    ) -> Result<Self, DeviceError> {
        let space = header_space
            .or_else(|| rows.first().map(|(_, r)| r.arch.space()))
            .unwrap_or(SearchSpace::Cell);
        let mut seen: HashMap<(String, Architecture), f64> = HashMap::new();
        let mut out = Vec::with_capacity(rows.len());
        for (line, r) in rows {
            if r.arch.space() != space {
                return Err(DeviceError::Parse {
                    path: origin.to_owned(),
                    line,
                    message: format!("{} architecture in a {space} table", r.arch.space()),
                });
            }
            if !(r.latency_ms.is_finite() && r.latency_ms > 0.0) {
                return Err(DeviceError::InvalidLatency {
                    path: origin.to_owned(),
                    line,
                    value: r.latency_ms,
                });
            }
            match seen.get(&(r.device_id.clone(), r.arch)) {
                Some(&first) if first != r.latency_ms => {
                    return Err(DeviceError::ConflictingDuplicate {
                        path: origin.to_owned(),
                        line,
                        device: r.device_id,
                        arch: r.arch.to_string(),
                        first,
                        second: r.latency_ms,
                    })
                }
                Some(_) => continue,
                None => {
                    seen.insert((r.device_id.clone(), r.arch), r.latency_ms);
                    out.push(r);
                }
            }
        }
        Ok(Self { space, rows: out })
    }

    /// One table profile per device id, in order of first appearance.
    pub fn to_profiles(&self) -> Vec<DeviceProfile> {
        let mut tables: Vec<(String, BTreeMap<_, f64>)> = Vec::new();
        for r in &self.rows {
            let idx = match tables.iter().position(|(id, _)| *id == r.device_id) {
                Some(i) => i,
                None => {
                    tables.push((r.device_id.clone(), BTreeMap::new()));
                    tables.len() - 1
                }
            };
            tables[idx].1.insert(r.arch.key(), r.latency_ms);
        }
        tables
            .into_iter()
            .map(|(device_id, latencies)| DeviceProfile {
                device_id,
                kind: DeviceKind::Table(TableDevice {
                    space: self.space,
                    latencies,
                }),
            })
            .collect()
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Seed of one `(device, architecture)` measurement.
pub fn measurement_seed(root: u64, device_id: &str, arch: &Architecture) -> u64 {
    rng::derive(rng::derive(root, device_id, 0), &arch.op_string(), 0)
}

/// Measures `samples_per_device` architectures drawn without replacement
/// from `archs` on every pool device. Rows are device-major in pool order.
pub fn build_dataset(
    pool: &DevicePool,
    archs: &[Architecture],
    samples_per_device: usize,
    seed: u64,
) -> Result<LatencyDataset, DeviceError> {
    let mut rows = Vec::with_capacity(samples_per_device * pool.devices.len());
    for p in pool.profiles() {
        if samples_per_device > archs.len() {
            return Err(DeviceError::NotEnoughArchitectures {
                device: p.device_id.clone(),
                requested: samples_per_device,
                available: archs.len(),
            });
        }
        if samples_per_device == 0 {
            continue;
        }
        let mut r = rng::child_rng(seed, &format!("dataset/{}", p.device_id), 0);
        for i in index::sample(&mut r, archs.len(), samples_per_device) {
            let a = &archs[i];
            rows.push(LatencyRow {
                device_id: p.device_id.clone(),
                arch: *a,
                latency_ms: p.measure(a, measurement_seed(seed, &p.device_id, a))?,
            });
        }
    }
    Ok(LatencyDataset {
        space: pool.space,
        rows,
    })
}

/// Reads a CSV or JSON-lines latency table into one profile per device id.
pub fn load_table(path: &Path) -> Result<Vec<DeviceProfile>, DeviceError> {
    Ok(LatencyDataset::load(path)?.to_profiles())
}
