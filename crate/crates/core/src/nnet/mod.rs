//! Dense-matrix numerical core: tensors, a differentiable tape, graph
//! convolution, parameter sets and Adam.

mod adam;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

use std::sync::Arc;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use params::{Param, ParamGroup, ParamSet, CHECKPOINT_FORMAT_VERSION};
pub use tape::{Tape, Var, DEFAULT_NODE_CAP};
pub use tensor::{gemm, Shape, Tensor};

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("tape exceeded its cap of {cap} nodes")]
    TapeCapExceeded { cap: usize },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` where `D̂` is the degree matrix of `A + I`.
///
/// With `undirected` the closure `A + Aᵀ` (clamped to 0/1) is used in place of `A`.
pub fn normalized_adjacency(adj: &Tensor, undirected: bool) -> Tensor {
    let n = adj.rows();
    assert_eq!(n, adj.cols(), "adjacency must be square");
    let mut a = Tensor::identity(n);
    for i in 0..n {
        for j in 0..n {
            let mut e = adj.get(i, j);
            if undirected {
                e = e.max(adj.get(j, i));
            }
            if i != j && e != 0.0 {
                a.set(i, j, e);
            }
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|j| a.get(i, j)).sum();
            1.0 / d.sqrt()
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j) * inv_sqrt_deg[i] * inv_sqrt_deg[j];
            a.set(i, j, v);
        }
    }
    a
}

/// `ReLU(Â · H · W)` for a batch of graphs sharing the normalized adjacency `Â`.
///
/// `h` stacks the node features of every graph (`graphs·k × in`).
pub fn gcn_layer(
    tape: &mut Tape,
    h: Var,
    adj_norm: &Arc<Tensor>,
    w: Var,
) -> Result<Var, NnetError> {
    let agg = tape.graph_aggregate(h, adj_norm)?;
    let hw = tape.matmul(agg, w)?;
    tape.relu(hw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_with_identity_weights_is_relu() {
        let adj = Arc::new(normalized_adjacency(&Tensor::zeros(Shape::new(3, 3)), true));
        let mut tape = Tape::new();
        let h = tape
            .param(Tensor::from_rows(&[
                vec![1.0, -2.0],
                vec![-0.5, 0.25],
                vec![3.0, 0.0],
            ]))
            .unwrap();
        let w = tape.param(Tensor::identity(2)).unwrap();
        let out = gcn_layer(&mut tape, h, &adj, w).unwrap();
        let want = tape.value(h).map(|x| x.max(0.0));
        assert_eq!(tape.value(out), &want);
    }

    #[test]
    fn single_node_scales_by_weight() {
        let adj = Arc::new(normalized_adjacency(&Tensor::zeros(Shape::new(1, 1)), true));
        for w in [-1.5, 0.0, 2.5] {
            let mut tape = Tape::new();
            let h = tape.param(Tensor::scalar(1.0)).unwrap();
            let wv = tape.param(Tensor::scalar(w)).unwrap();
            let out = gcn_layer(&mut tape, h, &adj, wv).unwrap();
            assert_eq!(tape.value(out).item(), w.max(0.0));
        }
    }

    #[test]
    fn normalization_is_symmetric_with_unit_self_loop_weight_on_isolated_nodes() {
        let mut a = Tensor::zeros(Shape::new(4, 4));
        a.set(0, 1, 1.0);
        a.set(1, 2, 1.0);
        let n = normalized_adjacency(&a, true);
        assert_eq!(n, n.transpose());
        assert_eq!(n.get(3, 3), 1.0);
        assert!((n.get(0, 1) - 1.0 / (2.0f64 * 3.0).sqrt()).abs() < 1e-15);
    }
}
