use std::sync::OnceLock;

use crate::nnet::{Shape, Tensor};

use super::{
    ArchError, Architecture, CellArchitecture, LayerwiseArchitecture, CELL_EDGES,
    LAYERWISE_CHOICES, LAYERWISE_POSITIONS, NUM_CELL_OPS, NUM_EDGES,
};

/// Input node, one node per edge op, output node.
pub const CELL_GRAPH_NODES: usize = NUM_EDGES + 2;
/// Five op columns, then input marker, output marker, one always-zero pad column.
pub const CELL_FEATURE_DIM: usize = 8;
pub const ONE_HOT_LAYERWISE_DIM: usize = LAYERWISE_POSITIONS * LAYERWISE_CHOICES;
pub const COMPACT_LAYERWISE_DIM: usize = LAYERWISE_POSITIONS * COMPACT_GROUP;

const INPUT_COL: usize = NUM_CELL_OPS;
const OUTPUT_COL: usize = NUM_CELL_OPS + 1;
const OUTPUT_NODE: usize = CELL_GRAPH_NODES - 1;

// Compact layer-wise layout, per position: [k3, k5, e1, e3, e6, g2].
// The skip block is the all-zero group.
const COMPACT_GROUP: usize = 6;
const COMPACT_CODES: [[u8; COMPACT_GROUP]; LAYERWISE_CHOICES] = [
    [1, 0, 1, 0, 0, 0], // k3_e1
    [1, 0, 1, 0, 0, 1], // k3_e1_g2
    [1, 0, 0, 1, 0, 0], // k3_e3
    [1, 0, 0, 0, 1, 0], // k3_e6
    [0, 1, 1, 0, 0, 0], // k5_e1
    [0, 1, 1, 0, 0, 1], // k5_e1_g2
    [0, 1, 0, 1, 0, 0], // k5_e3
    [0, 1, 0, 0, 1, 0], // k5_e6
    [0, 0, 0, 0, 0, 0], // skip
];

#[derive(Clone, Debug, PartialEq)]
pub enum ArchEncoding {
    /// Node features (`8 × 8`, one-hot rows) and the directed op-graph adjacency.
    Graph { features: Tensor, adjacency: Tensor },
    /// `1 × dim` row.
    Flat(Tensor),
}

impl ArchEncoding {
    pub fn features(&self) -> &Tensor {
        match self {
            Self::Graph { features, .. } => features,
            Self::Flat(t) => t,
        }
    }
}

/// Directed adjacency of the unrolled op graph shared by every cell.
///
/// The node for edge `s → t` reads from every op node whose edge ends at
/// `s` (or from the input node when `s = 0`); op nodes of edges ending at
/// node 3 feed the output node. Zeroize ops keep their node and edges.
pub fn cell_op_graph_adjacency() -> &'static Tensor {
    static ADJ: OnceLock<Tensor> = OnceLock::new();
    ADJ.get_or_init(|| {
        let mut a = Tensor::zeros(Shape::new(CELL_GRAPH_NODES, CELL_GRAPH_NODES));
        for (e, &(src, dst)) in CELL_EDGES.iter().enumerate() {
            let node = e + 1;
            if src == 0 {
                a.set(0, node, 1.0);
            }
            for (f, &(_, fdst)) in CELL_EDGES.iter().enumerate() {
                if fdst == src {
                    a.set(f + 1, node, 1.0);
                }
            }
            if dst == 3 {
                a.set(node, OUTPUT_NODE, 1.0);
            }
        }
        a
    })
}

pub fn encode_cell(a: &CellArchitecture) -> ArchEncoding {
    let mut features = Tensor::zeros(Shape::new(CELL_GRAPH_NODES, CELL_FEATURE_DIM));
    features.set(0, INPUT_COL, 1.0);
    for (e, &op) in a.ops().iter().enumerate() {
        features.set(e + 1, op as usize, 1.0);
    }
    features.set(OUTPUT_NODE, OUTPUT_COL, 1.0);
    ArchEncoding::Graph {
        features,
        adjacency: cell_op_graph_adjacency().clone(),
    }
}

/// Flat encoding of a layer-wise architecture.
///
/// `dim = 132` selects the compact per-position `[k3, k5, e1, e3, e6, g2]`
/// groups; `dim ≥ 198` selects plain one-hot per position, zero padded.
pub fn encode_layerwise(a: &LayerwiseArchitecture, dim: usize) -> Result<Tensor, ArchError> {
    let mut v = vec![0.0; dim];
    if dim == COMPACT_LAYERWISE_DIM {
        for (p, &c) in a.choices().iter().enumerate() {
            for (j, &bit) in COMPACT_CODES[c as usize].iter().enumerate() {
                v[p * COMPACT_GROUP + j] = f64::from(bit);
            }
        }
    } else if dim >= ONE_HOT_LAYERWISE_DIM {
        for (p, &c) in a.choices().iter().enumerate() {
            v[p * LAYERWISE_CHOICES + c as usize] = 1.0;
        }
    } else {
        return Err(ArchError::UnsupportedDim(dim));
    }
    Ok(Tensor::row(v))
}

pub fn decode_layerwise(t: &Tensor, dim: usize) -> Result<LayerwiseArchitecture, ArchError> {
    let v = t.data();
    if v.len() != dim {
        return Err(ArchError::InvalidEncoding(format!(
            "length {} does not match dimension {dim}",
            v.len()
        )));
    }
    let mut choices = [0u8; LAYERWISE_POSITIONS];
    if dim == COMPACT_LAYERWISE_DIM {
        for (p, slot) in choices.iter_mut().enumerate() {
            let group = &v[p * COMPACT_GROUP..(p + 1) * COMPACT_GROUP];
            let found = COMPACT_CODES
                .iter()
                .position(|code| code.iter().zip(group).all(|(&b, &x)| f64::from(b) == x));
            *slot = found.ok_or_else(|| {
                ArchError::InvalidEncoding(format!("position {p}: unknown group {group:?}"))
            })? as u8;
        }
    } else if dim >= ONE_HOT_LAYERWISE_DIM {
        for (p, slot) in choices.iter_mut().enumerate() {
            let block = &v[p * LAYERWISE_CHOICES..(p + 1) * LAYERWISE_CHOICES];
            let ones: Vec<usize> = (0..LAYERWISE_CHOICES)
                .filter(|&j| block[j] == 1.0)
                .collect();
            if ones.len() != 1 || block.iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(ArchError::InvalidEncoding(format!(
                    "position {p} is not one-hot"
                )));
            }
            *slot = ones[0] as u8;
        }
        if v[ONE_HOT_LAYERWISE_DIM..].iter().any(|&x| x != 0.0) {
            return Err(ArchError::InvalidEncoding("non-zero padding".into()));
        }
    } else {
        return Err(ArchError::UnsupportedDim(dim));
    }
    LayerwiseArchitecture::new(choices)
}

pub fn encode(a: &Architecture, layerwise_dim: usize) -> Result<ArchEncoding, ArchError> {
    match a {
        Architecture::Cell(c) => Ok(encode_cell(c)),
        Architecture::Layerwise(l) => encode_layerwise(l, layerwise_dim).map(ArchEncoding::Flat),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::CellOp;
    use crate::archspace::LAYERWISE_SKIP;
    use crate::rng;
    use rand::Rng;

    fn skip_column(position: usize) -> usize {
        position * LAYERWISE_CHOICES + LAYERWISE_SKIP as usize
    }

    // Straight-line reference encoder: node list and edges spelled out by hand.
    fn reference_encode(ops: [u8; 6]) -> (Vec<[f64; 8]>, [[f64; 8]; 8]) {
        let mut feats = vec![[0.0; 8]; 8];
        feats[0][5] = 1.0;
        for e in 0..6 {
            feats[e + 1][ops[e] as usize] = 1.0;
        }
        feats[7][6] = 1.0;
        let mut adj = [[0.0; 8]; 8];
        // input feeds the edges leaving node 0: 0->1 (1), 0->2 (2), 0->3 (4)
        adj[0][1] = 1.0;
        adj[0][2] = 1.0;
        adj[0][4] = 1.0;
        // node 1 = output of edge 0->1, consumed by 1->2 (3) and 1->3 (5)
        adj[1][3] = 1.0;
        adj[1][5] = 1.0;
        // node 2 = edges 0->2 and 1->2, consumed by 2->3 (6)
        adj[2][6] = 1.0;
        adj[3][6] = 1.0;
        // node 3 = edges 0->3, 1->3, 2->3, the cell output
        adj[4][7] = 1.0;
        adj[5][7] = 1.0;
        adj[6][7] = 1.0;
        (feats, adj)
    }

    fn unpack(enc: &ArchEncoding) -> (&Tensor, &Tensor) {
        match enc {
            ArchEncoding::Graph {
                features,
                adjacency,
            } => (features, adjacency),
            ArchEncoding::Flat(_) => panic!("expected graph encoding"),
        }
    }

    #[test]
    fn all_skip_cell_marks_skip_column_on_every_op_node() {
        let enc = encode_cell(&CellArchitecture::uniform(CellOp::Skip));
        let (f, _) = unpack(&enc);
        assert_eq!(f.shape(), Shape::new(8, 8));
        for node in 1..=6 {
            for col in 0..8 {
                assert_eq!(f.get(node, col), if col == 1 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn all_zeroize_cell_keeps_adjacency() {
        let zero = encode_cell(&CellArchitecture::uniform(CellOp::Zeroize));
        let conv = encode_cell(&CellArchitecture::uniform(CellOp::Conv3x3));
        let (fz, az) = unpack(&zero);
        let (_, ac) = unpack(&conv);
        assert_eq!(az, ac);
        for node in 1..=6 {
            assert_eq!(fz.get(node, 0), 1.0);
        }
    }

    #[test]
    fn matches_reference_encoder_bit_for_bit() {
        let mut r = rng::rng(11);
        for _ in 0..500 {
            let mut ops = [0u8; 6];
            for o in ops.iter_mut() {
                *o = r.random_range(0..5);
            }
            let enc = encode_cell(&CellArchitecture::new(ops).unwrap());
            let (f, a) = unpack(&enc);
            let (rf, ra) = reference_encode(ops);
            for i in 0..8 {
                for j in 0..8 {
                    assert_eq!(f.get(i, j).to_bits(), rf[i][j].to_bits());
                    assert_eq!(a.get(i, j).to_bits(), ra[i][j].to_bits());
                }
            }
        }
    }

    #[test]
    fn cell_features_are_one_hot_and_adjacency_upper_triangular() {
        let enc = encode_cell(&CellArchitecture::new([4, 3, 2, 1, 0, 3]).unwrap());
        let (f, a) = unpack(&enc);
        for i in 0..8 {
            let s: f64 = (0..8).map(|j| f.get(i, j)).sum();
            assert_eq!(s, 1.0);
            for j in 0..=i {
                assert_eq!(a.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn all_skip_layerwise_sets_skip_columns() {
        let a = LayerwiseArchitecture::uniform(LAYERWISE_SKIP).unwrap();
        let t = encode_layerwise(&a, ONE_HOT_LAYERWISE_DIM).unwrap();
        assert_eq!(t.data().iter().filter(|&&x| x == 1.0).count(), 22);
        for p in 0..22 {
            assert_eq!(t.data()[skip_column(p)], 1.0);
        }
    }

    #[test]
    fn single_position_change_stays_inside_one_block() {
        let mut r = rng::rng(5);
        for _ in 0..200 {
            let mut c = [0u8; 22];
            for x in c.iter_mut() {
                *x = r.random_range(0..9);
            }
            let a = LayerwiseArchitecture::new(c).unwrap();
            let p = r.random_range(0..22);
            let other = (c[p] + r.random_range(1..9)) % 9;
            let b = a.with_choice(p, other).unwrap();
            let ta = encode_layerwise(&a, ONE_HOT_LAYERWISE_DIM).unwrap();
            let tb = encode_layerwise(&b, ONE_HOT_LAYERWISE_DIM).unwrap();
            let diff: Vec<usize> = (0..ONE_HOT_LAYERWISE_DIM)
                .filter(|&i| ta.data()[i] != tb.data()[i])
                .collect();
            assert_eq!(diff.len(), 2);
            assert!(diff.iter().all(|&i| i / 9 == p));
        }
    }

    #[test]
    fn decode_inverts_encode_for_both_layouts() {
        let mut r = rng::rng(99);
        for _ in 0..1000 {
            let mut c = [0u8; 22];
            for x in c.iter_mut() {
                *x = r.random_range(0..9);
            }
            let a = LayerwiseArchitecture::new(c).unwrap();
            for dim in [COMPACT_LAYERWISE_DIM, ONE_HOT_LAYERWISE_DIM, 256] {
                let t = encode_layerwise(&a, dim).unwrap();
                assert_eq!(decode_layerwise(&t, dim).unwrap(), a);
            }
        }
    }

    #[test]
    fn compact_codes_are_distinct() {
        for i in 0..9 {
            for j in 0..i {
                assert_ne!(COMPACT_CODES[i], COMPACT_CODES[j]);
            }
        }
    }

    #[test]
    fn unsupported_dimension_is_a_configuration_error() {
        let a = LayerwiseArchitecture::uniform(0).unwrap();
        assert!(matches!(
            encode_layerwise(&a, 100),
            Err(ArchError::UnsupportedDim(100))
        ));
    }
}
