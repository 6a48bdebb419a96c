//! Architecture search spaces: the 4-node cell space and the 22-position
//! layer-wise space, their encodings, MAC counting, sampling and the fixed
//! reference set used to fingerprint devices.

mod encoding;
pub(crate) mod macs;
mod sampling;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use encoding::{
    cell_op_graph_adjacency, decode_layerwise, encode, encode_cell, encode_layerwise, ArchEncoding,
    CELL_FEATURE_DIM, CELL_GRAPH_NODES, COMPACT_LAYERWISE_DIM, ONE_HOT_LAYERWISE_DIM,
};
pub use macs::{count_macs, count_macs_layerwise, CellMacroConfig};
pub use sampling::{
    default_reference_set, enumerate_cells, read_arch_file, sample_architectures, write_arch_file,
    ReferenceSet, DEFAULT_REFERENCE_COUNT, MIN_REFERENCE_MAC_SPAN,
};

pub const NUM_CELL_OPS: usize = 5;
pub const NUM_EDGES: usize = 6;
pub const CELL_SPACE_SIZE: usize = 15_625;
pub const LAYERWISE_POSITIONS: usize = 22;
pub const LAYERWISE_CHOICES: usize = 9;

/// Edges of the 4-node cell DAG as `(source, target)`, in storage order.
pub const CELL_EDGES: [(usize, usize); NUM_EDGES] =
    [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

pub const CELL_OP_NAMES: [&str; NUM_CELL_OPS] =
    ["zeroize", "skip", "conv1x1", "conv3x3", "avgpool3x3"];

/// Candidate blocks of the layer-wise space, index order.
pub const LAYERWISE_BLOCK_NAMES: [&str; LAYERWISE_CHOICES] = [
    "k3_e1", "k3_e1_g2", "k3_e3", "k3_e6", "k5_e1", "k5_e1_g2", "k5_e3", "k5_e6", "skip",
];

pub const LAYERWISE_SKIP: u8 = 8;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("expected {expected} ops for the {space} space, got {got}")]
    WrongLength {
        space: SearchSpace,
        expected: usize,
        got: usize,
    },
    #[error("op index {value} at position {position} out of range 0..{limit}")]
    OpOutOfRange {
        position: usize,
        value: u8,
        limit: usize,
    },
    #[error("cell index {0} out of range 0..15625")]
    IndexOutOfRange(usize),
    #[error("requested {requested} distinct architectures but the space holds {available}")]
    SpaceTooSmall { requested: u128, available: u128 },
    #[error("n must be at least 1")]
    EmptySample,
    #[error("encoding dimension {0} unsupported (use 132, or ≥ 198 for zero-padded one-hot)")]
    UnsupportedDim(usize),
    #[error("encoding is not a valid one-hot layout: {0}")]
    InvalidEncoding(String),
    #[error("mixed search spaces: expected {expected}, found {found}")]
    MixedSpaces {
        expected: SearchSpace,
        found: SearchSpace,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("no reference set with MAC span ≥ {span} found in {attempts} draws")]
    ReferenceDiversity { span: f64, attempts: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchSpace {
    Cell,
    Layerwise,
}

impl SearchSpace {
    pub fn positions(self) -> usize {
        match self {
            Self::Cell => NUM_EDGES,
            Self::Layerwise => LAYERWISE_POSITIONS,
        }
    }

    pub fn choices(self) -> usize {
        match self {
            Self::Cell => NUM_CELL_OPS,
            Self::Layerwise => LAYERWISE_CHOICES,
        }
    }

    /// Number of distinct architectures.
    pub fn size(self) -> u128 {
        (self.choices() as u128).pow(self.positions() as u32)
    }
}

impl fmt::Display for SearchSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cell => "cell",
            Self::Layerwise => "layerwise",
        })
    }
}

impl std::str::FromStr for SearchSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cell" => Ok(Self::Cell),
            "layerwise" => Ok(Self::Layerwise),
            other => Err(format!("unknown search space `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CellOp {
    Zeroize = 0,
    Skip = 1,
    Conv1x1 = 2,
    Conv3x3 = 3,
    AvgPool3x3 = 4,
}

impl CellOp {
    pub const ALL: [CellOp; NUM_CELL_OPS] = [
        CellOp::Zeroize,
        CellOp::Skip,
        CellOp::Conv1x1,
        CellOp::Conv3x3,
        CellOp::AvgPool3x3,
    ];

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        CELL_OP_NAMES[self.index()]
    }
}

/// One op per edge of the 4-node DAG, in [`CELL_EDGES`] order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellArchitecture {
    edge_ops: [u8; NUM_EDGES],
}

impl CellArchitecture {
    pub fn new(ops: [u8; NUM_EDGES]) -> Result<Self, ArchError> {
        Self::from_slice(&ops)
    }

    pub fn from_slice(ops: &[u8]) -> Result<Self, ArchError> {
        if ops.len() != NUM_EDGES {
            return Err(ArchError::WrongLength {
                space: SearchSpace::Cell,
                expected: NUM_EDGES,
                got: ops.len(),
            });
        }
        let mut edge_ops = [0u8; NUM_EDGES];
        for (i, &o) in ops.iter().enumerate() {
            if o as usize >= NUM_CELL_OPS {
                return Err(ArchError::OpOutOfRange {
                    position: i,
                    value: o,
                    limit: NUM_CELL_OPS,
                });
            }
            edge_ops[i] = o;
        }
        Ok(Self { edge_ops })
    }

    pub fn uniform(op: CellOp) -> Self {
        Self {
            edge_ops: [op as u8; NUM_EDGES],
        }
    }

    /// Inverse of [`Self::index`]; the first edge is the most significant base-5 digit.
    pub fn from_index(index: usize) -> Result<Self, ArchError> {
        if index >= CELL_SPACE_SIZE {
            return Err(ArchError::IndexOutOfRange(index));
        }
        let mut edge_ops = [0u8; NUM_EDGES];
        let mut rest = index;
        for slot in edge_ops.iter_mut().rev() {
            *slot = (rest % NUM_CELL_OPS) as u8;
            rest /= NUM_CELL_OPS;
        }
        Ok(Self { edge_ops })
    }

    pub fn index(&self) -> usize {
        self.edge_ops
            .iter()
            .fold(0, |acc, &o| acc * NUM_CELL_OPS + o as usize)
    }

    pub fn ops(&self) -> &[u8; NUM_EDGES] {
        &self.edge_ops
    }

    pub fn op(&self, edge: usize) -> CellOp {
        CellOp::from_index(self.edge_ops[edge]).expect("validated at construction")
    }

    pub fn with_op(&self, edge: usize, op: CellOp) -> Self {
        let mut edge_ops = self.edge_ops;
        edge_ops[edge] = op as u8;
        Self { edge_ops }
    }
}

/// One candidate block per searchable position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerwiseArchitecture {
    block_choices: [u8; LAYERWISE_POSITIONS],
}

impl LayerwiseArchitecture {
    pub fn new(choices: [u8; LAYERWISE_POSITIONS]) -> Result<Self, ArchError> {
        Self::from_slice(&choices)
    }

    pub fn from_slice(choices: &[u8]) -> Result<Self, ArchError> {
        if choices.len() != LAYERWISE_POSITIONS {
            return Err(ArchError::WrongLength {
                space: SearchSpace::Layerwise,
                expected: LAYERWISE_POSITIONS,
                got: choices.len(),
            });
        }
        let mut block_choices = [0u8; LAYERWISE_POSITIONS];
        for (i, &c) in choices.iter().enumerate() {
            if c as usize >= LAYERWISE_CHOICES {
                return Err(ArchError::OpOutOfRange {
                    position: i,
                    value: c,
                    limit: LAYERWISE_CHOICES,
                });
            }
            block_choices[i] = c;
        }
        Ok(Self { block_choices })
    }

    pub fn uniform(choice: u8) -> Result<Self, ArchError> {
        Self::new([choice; LAYERWISE_POSITIONS])
    }

    pub fn choices(&self) -> &[u8; LAYERWISE_POSITIONS] {
        &self.block_choices
    }

    pub fn with_choice(&self, position: usize, choice: u8) -> Result<Self, ArchError> {
        let mut c = self.block_choices;
        c[position] = choice;
        Self::new(c)
    }
}

/// An architecture from either search space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "ArchRecord", into = "ArchRecord")]
pub enum Architecture {
    Cell(CellArchitecture),
    Layerwise(LayerwiseArchitecture),
}

/// Wire form: `{"space":"cell","ops":[...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchRecord {
    pub space: SearchSpace,
    pub ops: Vec<u8>,
}

impl TryFrom<ArchRecord> for Architecture {
    type Error = ArchError;

    fn try_from(r: ArchRecord) -> Result<Self, Self::Error> {
        Architecture::from_ops(r.space, &r.ops)
    }
}

impl From<Architecture> for ArchRecord {
    fn from(a: Architecture) -> Self {
        ArchRecord {
            space: a.space(),
            ops: a.ops().to_vec(),
        }
    }
}

/// Content hash of an architecture's canonical JSON form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchKey(pub String);

impl fmt::Display for ArchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Architecture {
    pub fn from_ops(space: SearchSpace, ops: &[u8]) -> Result<Self, ArchError> {
        match space {
            SearchSpace::Cell => CellArchitecture::from_slice(ops).map(Self::Cell),
            SearchSpace::Layerwise => LayerwiseArchitecture::from_slice(ops).map(Self::Layerwise),
        }
    }

    pub fn space(&self) -> SearchSpace {
        match self {
            Self::Cell(_) => SearchSpace::Cell,
            Self::Layerwise(_) => SearchSpace::Layerwise,
        }
    }

    pub fn ops(&self) -> &[u8] {
        match self {
            Self::Cell(c) => c.ops(),
            Self::Layerwise(l) => l.choices(),
        }
    }

    pub fn as_cell(&self) -> Option<&CellArchitecture> {
        match self {
            Self::Cell(c) => Some(c),
            Self::Layerwise(_) => None,
        }
    }

    /// `{"space":"cell","ops":[0,1,2,3,4,0]}` with no whitespace.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&ArchRecord::from(*self)).expect("arch serialization")
    }

    /// Lower-case hex SHA-256 of [`Self::canonical_json`].
    pub fn key(&self) -> ArchKey {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        ArchKey(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Op indices joined without separators (`"013240"`); the CSV form.
    pub fn op_string(&self) -> String {
        self.ops().iter().map(|o| char::from(b'0' + o)).collect()
    }

    pub fn from_op_string(space: SearchSpace, s: &str) -> Result<Self, ArchError> {
        let ops: Vec<u8> = s
            .trim()
            .bytes()
            .map(|b| {
                if b.is_ascii_digit() {
                    Ok(b - b'0')
                } else {
                    Err(ArchError::InvalidEncoding(format!(
                        "non-digit `{}` in op string",
                        b as char
                    )))
                }
            })
            .collect::<Result<_, _>>()?;
        Self::from_ops(space, &ops)
    }

    /// MAC count under the default macro skeleton of the space.
    pub fn macs(&self) -> u64 {
        match self {
            Self::Cell(c) => count_macs(c, &CellMacroConfig::default()),
            Self::Layerwise(l) => count_macs_layerwise(l),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.space(), self.op_string())
    }
}
