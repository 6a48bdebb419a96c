//! Analytic multiply-accumulate counts.
//!
//! Convolutions contribute `k²·C_in·C_out·H_out·W_out / groups`; pooling, skip
//! and zeroize contribute nothing, nor do batch-norm and activations.

use super::{CellArchitecture, CellOp, LayerwiseArchitecture, LAYERWISE_SKIP};

/// Macro skeleton of the cell space: stem, three stages of stacked cells
/// separated by residual reduction blocks, then a linear classifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellMacroConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub channels: [usize; 3],
    pub cells_per_stage: usize,
    pub num_classes: usize,
}

impl Default for CellMacroConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            in_channels: 3,
            channels: [16, 32, 64],
            cells_per_stage: 5,
            num_classes: 10,
        }
    }
}

impl CellMacroConfig {
    /// Spatial side length of each stage.
    pub fn stage_sizes(&self) -> [usize; 3] {
        let h1 = self.image_size;
        let h2 = h1.div_ceil(2);
        let h3 = h2.div_ceil(2);
        [h1, h2, h3]
    }

    /// MACs of everything except the cells.
    pub fn skeleton_macs(&self) -> u64 {
        let [h1, h2, h3] = self.stage_sizes().map(|h| h as u64);
        let [c1, c2, c3] = self.channels.map(|c| c as u64);
        let stem = 9 * self.in_channels as u64 * c1 * h1 * h1;
        let reduction = |cin: u64, cout: u64, h: u64| {
            9 * cin * cout * h * h + 9 * cout * cout * h * h + cin * cout * h * h
        };
        stem + reduction(c1, c2, h2) + reduction(c2, c3, h3) + c3 * self.num_classes as u64
    }
}

/// MACs of a single cell op at `channels` × `size` × `size`.
pub(crate) fn cell_op_macs(op: CellOp, channels: usize, size: usize) -> u64 {
    let base = (channels * channels * size * size) as u64;
    match op {
        CellOp::Conv1x1 => base,
        CellOp::Conv3x3 => 9 * base,
        CellOp::Zeroize | CellOp::Skip | CellOp::AvgPool3x3 => 0,
    }
}

pub fn count_macs(a: &CellArchitecture, cfg: &CellMacroConfig) -> u64 {
    let sizes = cfg.stage_sizes();
    let cells: u64 = (0..3)
        .map(|s| {
            let per_cell: u64 = (0..a.ops().len())
                .map(|e| cell_op_macs(a.op(e), cfg.channels[s], sizes[s]))
                .sum();
            per_cell * cfg.cells_per_stage as u64
        })
        .sum();
    cfg.skeleton_macs() + cells
}

/// `(output channels, repeats, first stride)` of each layer-wise stage.
pub(crate) const LAYERWISE_STAGES: [(usize, usize, usize); 7] = [
    (16, 1, 1),
    (24, 4, 2),
    (32, 4, 2),
    (64, 4, 2),
    (112, 4, 1),
    (184, 4, 2),
    (352, 1, 1),
];

/// `(kernel, expansion, groups)` per candidate; skip is handled separately.
pub(crate) const LAYERWISE_BLOCKS: [(usize, usize, usize); 8] = [
    (3, 1, 1),
    (3, 1, 2),
    (3, 3, 1),
    (3, 6, 1),
    (5, 1, 1),
    (5, 1, 2),
    (5, 3, 1),
    (5, 6, 1),
];

/// Input channels, output channels, input size and output size of every position.
pub(crate) fn layerwise_positions() -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::with_capacity(22);
    let mut cin = 16;
    let mut size: usize = 112;
    for &(cout, repeats, stride) in &LAYERWISE_STAGES {
        for r in 0..repeats {
            let s = if r == 0 { stride } else { 1 };
            let out_size = size.div_ceil(s);
            out.push((cin, cout, size, out_size));
            cin = cout;
            size = out_size;
        }
    }
    out
}

pub(crate) fn layerwise_block_macs(choice: u8, position: usize) -> u64 {
    if choice == LAYERWISE_SKIP {
        return 0;
    }
    let (k, e, g) = LAYERWISE_BLOCKS[choice as usize];
    let (cin, cout, hin, hout) = layerwise_positions()[position];
    let hidden = (e * cin) as u64;
    let (cin, cout, hin, hout, k, g) = (
        cin as u64,
        cout as u64,
        hin as u64,
        hout as u64,
        k as u64,
        g as u64,
    );
    let expand = hin * hin * cin * hidden / g;
    let depthwise = hout * hout * k * k * hidden;
    let project = hout * hout * hidden * cout / g;
    expand + depthwise + project
}

/// MACs of a layer-wise architecture at 224×224 input.
pub fn count_macs_layerwise(a: &LayerwiseArchitecture) -> u64 {
    let stem = 9 * 3 * 16 * 112 * 112;
    let head = 7 * 7 * 352 * 1504 + 1504 * 1000;
    let blocks: u64 = a
        .choices()
        .iter()
        .enumerate()
        .map(|(p, &c)| layerwise_block_macs(c, p))
        .sum();
    stem + head + blocks
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent shape walker: builds the full layer list and propagates
    /// `(channels, size)` through it.
    fn walk(ops: [u8; 6], cfg: &CellMacroConfig) -> u64 {
        enum Layer {
            Conv { k: u64, stride: usize, cout: usize },
            Shortcut { cout: usize },
            Cell,
            Fc { out: usize },
        }
        let mut layers = vec![Layer::Conv {
            k: 3,
            stride: 1,
            cout: cfg.channels[0],
        }];
        for stage in 0..3 {
            if stage > 0 {
                layers.push(Layer::Shortcut {
                    cout: cfg.channels[stage],
                });
                layers.push(Layer::Conv {
                    k: 3,
                    stride: 2,
                    cout: cfg.channels[stage],
                });
                layers.push(Layer::Conv {
                    k: 3,
                    stride: 1,
                    cout: cfg.channels[stage],
                });
            }
            for _ in 0..cfg.cells_per_stage {
                layers.push(Layer::Cell);
            }
        }
        layers.push(Layer::Fc {
            out: cfg.num_classes,
        });

        let mut c = cfg.in_channels as u64;
        let mut h = cfg.image_size;
        let mut total = 0u64;
        for layer in layers {
            match layer {
                Layer::Conv { k, stride, cout } => {
                    let ho = (h + 2 * (k as usize / 2) - k as usize) / stride + 1;
                    total += k * k * c * cout as u64 * (ho * ho) as u64;
                    c = cout as u64;
                    h = ho;
                }
                Layer::Shortcut { cout } => {
                    // avg-pool stride 2 then 1x1 conv; does not advance the main path
                    let ho = (h - 1) / 2 + 1;
                    total += c * cout as u64 * (ho * ho) as u64;
                }
                Layer::Cell => {
                    for &o in &ops {
                        let hw = (h * h) as u64;
                        total += match o {
                            2 => c * c * hw,
                            3 => 9 * c * c * hw,
                            _ => 0,
                        };
                    }
                }
                Layer::Fc { out } => total += c * out as u64,
            }
        }
        total
    }

    #[test]
    fn zeroize_cell_is_skeleton_only() {
        let cfg = CellMacroConfig::default();
        let a = CellArchitecture::uniform(CellOp::Zeroize);
        assert_eq!(count_macs(&a, &cfg), cfg.skeleton_macs());
        assert_eq!(count_macs(&a, &cfg), walk([0; 6], &cfg));
    }

    #[test]
    fn conv3x3_costs_more_than_conv1x1() {
        let cfg = CellMacroConfig::default();
        let c3 = count_macs(&CellArchitecture::uniform(CellOp::Conv3x3), &cfg);
        let c1 = count_macs(&CellArchitecture::uniform(CellOp::Conv1x1), &cfg);
        assert!(c3 > c1);
    }

    #[test]
    fn matches_shape_walker() {
        let cfg = CellMacroConfig::default();
        let ops = [3, 1, 2, 4, 0, 3];
        let a = CellArchitecture::new(ops).unwrap();
        assert_eq!(count_macs(&a, &cfg), walk(ops, &cfg));
        // odd image size exercises the ceil in the stride-2 stages
        let cfg = CellMacroConfig {
            image_size: 27,
            ..CellMacroConfig::default()
        };
        for idx in (0..15625).step_by(97) {
            let a = CellArchitecture::from_index(idx).unwrap();
            let mut ops = [0u8; 6];
            ops.copy_from_slice(a.ops());
            assert_eq!(count_macs(&a, &cfg), walk(ops, &cfg));
        }
    }

    #[test]
    fn monotone_under_costlier_ops() {
        let cfg = CellMacroConfig::default();
        let rank = |o: CellOp| match o {
            CellOp::Zeroize => 0,
            CellOp::Skip | CellOp::AvgPool3x3 => 1,
            CellOp::Conv1x1 => 2,
            CellOp::Conv3x3 => 3,
        };
        for idx in (0..15625).step_by(13) {
            let a = CellArchitecture::from_index(idx).unwrap();
            let base = count_macs(&a, &cfg);
            for e in 0..6 {
                for op in CellOp::ALL {
                    if rank(op) > rank(a.op(e)) {
                        assert!(count_macs(&a.with_op(e, op), &cfg) >= base);
                    }
                }
            }
        }
    }

    #[test]
    fn layerwise_positions_cover_22_slots() {
        let p = layerwise_positions();
        assert_eq!(p.len(), 22);
        assert_eq!(p.last().unwrap().3, 7);
        let skip = LayerwiseArchitecture::uniform(LAYERWISE_SKIP).unwrap();
        let heavy = LayerwiseArchitecture::uniform(7).unwrap();
        assert!(count_macs_layerwise(&heavy) > count_macs_layerwise(&skip));
    }
}
