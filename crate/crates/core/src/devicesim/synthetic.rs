use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::archspace::{Architecture, SearchSpace, CELL_EDGES};
use crate::rng;

use super::pool::Archetype;

/// Draws averaged per synthetic measurement.
pub const MEASUREMENT_REPEATS: usize = 50;

/// Edge pairs `(a, b)` where edge `a` ends at the node edge `b` starts from.
const CELL_ADJACENT_EDGES: [(usize, usize); 4] = [(0, 2), (0, 4), (1, 5), (2, 5)];

/// Multiplier on the mean cost of two adjacent ops `first → second`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionCoeff {
    pub first: u8,
    pub second: u8,
    pub coeff: f64,
}

/// Parameterized latency model.
///
/// For the cell space each stage contributes `cells_per_stage` copies of
///
/// ```text
/// (1 − π)·Σ_e c_e + π·critical_path + Σ_adjacent κ(o_a, o_b)·(c_a + c_b)/2
/// ```
///
/// clamped at zero, where `c_e = op_cost_table[op_e][stage]·edge_scale[e]` and zeroize
/// edges carry neither cost nor data. The layer-wise space chains its 22
/// positions sequentially, so only the sum and the interaction terms apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDevice {
    pub archetype: Archetype,
    pub space: SearchSpace,
    /// `[op][stage]` (cell) or `[block][position]` (layer-wise), milliseconds.
    pub op_cost_table: Vec<Vec<f64>>,
    /// Branch overlap in `[0, 1]`: 0 executes every op serially.
    pub parallelism_factor: f64,
    pub interaction_coeffs: Vec<InteractionCoeff>,
    pub fixed_overhead: f64,
    /// Cost of the fixed stem, reduction blocks and classifier.
    pub skeleton_ms: f64,
    pub noise_cv: f64,
    pub cells_per_stage: usize,
    /// Per-edge cost multiplier for the cell space (data placement effects);
    /// empty means all ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edge_scale: Vec<f64>,
}

impl SyntheticDevice {
    /// Interaction-free, fully serial cell-space device.
    pub fn additive_cell(
        op_cost_table: Vec<Vec<f64>>,
        fixed_overhead: f64,
        skeleton_ms: f64,
    ) -> Self {
        Self {
            archetype: Archetype::Additive,
            space: SearchSpace::Cell,
            op_cost_table,
            parallelism_factor: 0.0,
            interaction_coeffs: Vec::new(),
            fixed_overhead,
            skeleton_ms,
            noise_cv: 0.0,
            cells_per_stage: 5,
            edge_scale: Vec::new(),
        }
    }

    /// Same op costs under a different degree of parallelism, e.g. another batch size.
    pub fn batch_variant(&self, parallelism_factor: f64) -> Self {
        Self {
            parallelism_factor,
            ..self.clone()
        }
    }

    pub fn is_additive(&self) -> bool {
        self.parallelism_factor == 0.0 && self.interaction_coeffs.iter().all(|c| c.coeff == 0.0)
    }

    fn kappa(&self, first: u8, second: u8) -> f64 {
        self.interaction_coeffs
            .iter()
            .filter(|c| c.first == first && c.second == second)
            .map(|c| c.coeff)
            .sum()
    }

    /// Noise-free latency in milliseconds.
    pub fn latency(&self, arch: &Architecture) -> f64 {
        debug_assert_eq!(arch.space(), self.space);
        let body = match arch {
            Architecture::Cell(c) => {
                let ops = c.ops();
                let stages = self.op_cost_table.first().map_or(0, Vec::len);
                (0..stages)
                    .map(|s| self.cell_time(ops, s) * self.cells_per_stage as f64)
                    .sum()
            }
            Architecture::Layerwise(l) => {
                let ch = l.choices();
                let costs: Vec<f64> = ch
                    .iter()
                    .enumerate()
                    .map(|(p, &c)| self.op_cost_table[c as usize][p])
                    .collect();
                let sum: f64 = costs.iter().sum();
                let inter: f64 = (0..ch.len() - 1)
                    .map(|p| self.kappa(ch[p], ch[p + 1]) * (costs[p] + costs[p + 1]) / 2.0)
                    .sum();
                (sum + inter).max(0.0)
            }
        };
        self.fixed_overhead + self.skeleton_ms + body
    }

    fn cell_time(&self, ops: &[u8], stage: usize) -> f64 {
        let cost: Vec<f64> = ops
            .iter()
            .enumerate()
            .map(|(e, &o)| {
                if o == 0 {
                    0.0
                } else {
                    self.op_cost_table[o as usize][stage]
                        * self.edge_scale.get(e).copied().unwrap_or(1.0)
                }
            })
            .collect();
        let sum: f64 = cost.iter().sum();

        // edges are stored so every edge into node i precedes every edge out of it
        let mut finish = [0.0f64; 4];
        let mut reached = [true, false, false, false];
        for (e, &(src, dst)) in CELL_EDGES.iter().enumerate() {
            if ops[e] != 0 && reached[src] {
                finish[dst] = finish[dst].max(finish[src] + cost[e]);
                reached[dst] = true;
            }
        }
        let critical = finish[3];

        let inter: f64 = CELL_ADJACENT_EDGES
            .iter()
            .filter(|&&(a, b)| ops[a] != 0 && ops[b] != 0)
            .map(|&(a, b)| self.kappa(ops[a], ops[b]) * (cost[a] + cost[b]) / 2.0)
            .sum();

        let pi = self.parallelism_factor;
        ((1.0 - pi) * sum + pi * critical + inter).max(0.0)
    }

    /// Mean of [`MEASUREMENT_REPEATS`] draws of `latency · LogNormal` with unit
    /// mean and coefficient of variation `noise_cv`.
    pub fn measure(&self, arch: &Architecture, seed: u64) -> f64 {
        let clean = self.latency(arch);
        if self.noise_cv <= 0.0 {
            return clean;
        }
        let sigma2 = (1.0 + self.noise_cv * self.noise_cv).ln();
        let dist = LogNormal::new(-sigma2 / 2.0, sigma2.sqrt()).expect("valid lognormal");
        let mut r = rng::rng(seed);
        let total: f64 = (0..MEASUREMENT_REPEATS).map(|_| dist.sample(&mut r)).sum();
        clean * total / MEASUREMENT_REPEATS as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::{CellArchitecture, CellOp};

    fn table() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0, 0.0],
            vec![0.01, 0.02, 0.03],
            vec![0.10, 0.12, 0.15],
            vec![0.50, 0.60, 0.70],
            vec![0.05, 0.04, 0.03],
        ]
    }

    fn cell(ops: [u8; 6]) -> Architecture {
        Architecture::Cell(CellArchitecture::new(ops).unwrap())
    }

    #[test]
    fn zeroize_cell_is_overhead_plus_skeleton() {
        let d = SyntheticDevice::additive_cell(table(), 1.25, 3.5);
        assert_eq!(d.measure(&cell([0; 6]), 9), 1.25 + 3.5);
    }

    #[test]
    fn additive_latency_matches_hand_sum() {
        let d = SyntheticDevice::additive_cell(table(), 1.0, 2.0);
        let ops = [3, 1, 2, 4, 0, 3];
        // per stage: conv3 + skip + conv1 + pool + 0 + conv3
        let s0 = 0.50 + 0.01 + 0.10 + 0.05 + 0.50;
        let s1 = 0.60 + 0.02 + 0.12 + 0.04 + 0.60;
        let s2 = 0.70 + 0.03 + 0.15 + 0.03 + 0.70;
        let want = 1.0 + 2.0 + 5.0 * (s0 + s1 + s2);
        assert!((d.measure(&cell(ops), 0) - want).abs() < 1e-12);
    }

    #[test]
    fn full_parallelism_uses_critical_path() {
        let mut d = SyntheticDevice::additive_cell(table(), 0.0, 0.0);
        d.parallelism_factor = 1.0;
        d.cells_per_stage = 1;
        // only edges 0->3 (conv3) and 0->1 (conv1), 1->3 (skip) active
        let ops = [2, 0, 0, 3, 1, 0];
        let want: f64 = (0..3)
            .map(|s| {
                let direct = table()[3][s];
                let via_1 = table()[2][s] + table()[1][s];
                direct.max(via_1)
            })
            .sum();
        assert!((d.latency(&cell(ops)) - want).abs() < 1e-12);
    }

    #[test]
    fn interactions_apply_to_adjacent_active_pairs_only() {
        let mut d = SyntheticDevice::additive_cell(table(), 0.0, 0.0);
        d.cells_per_stage = 1;
        d.interaction_coeffs = vec![InteractionCoeff {
            first: 3,
            second: 3,
            coeff: 0.5,
        }];
        // edge 0 (0->1) and edge 2 (1->2) adjacent, both conv3
        let adjacent = cell([3, 0, 3, 0, 0, 0]);
        // edge 0 and edge 1 (0->2) are siblings, not adjacent
        let siblings = cell([3, 3, 0, 0, 0, 0]);
        let bonus: f64 = (0..3).map(|s| 0.5 * table()[3][s]).sum();
        let base: f64 = (0..3).map(|s| 2.0 * table()[3][s]).sum();
        assert!((d.latency(&adjacent) - (base + bonus)).abs() < 1e-12);
        assert!((d.latency(&siblings) - base).abs() < 1e-12);
    }

    #[test]
    fn noise_is_seeded_and_unbiased() {
        let mut d = SyntheticDevice::additive_cell(table(), 1.0, 1.0);
        d.noise_cv = 0.02;
        let a = cell([3, 3, 3, 3, 3, 3]);
        assert_eq!(d.measure(&a, 5), d.measure(&a, 5));
        assert_ne!(d.measure(&a, 5), d.measure(&a, 6));
        let clean = d.latency(&a);
        let n = 2000;
        let m: f64 = (0..n).map(|s| d.measure(&a, s)).sum::<f64>() / n as f64;
        // averaged CV is 0.02/√50 ≈ 0.0028; the mean of 2000 has sd ≈ 6e-5·clean
        assert!((m / clean - 1.0).abs() < 5e-4);
    }

    #[test]
    fn adding_ops_never_decreases_additive_latency() {
        let mut d = SyntheticDevice::additive_cell(table(), 0.5, 0.5);
        d.parallelism_factor = 0.7;
        for idx in (0..15625).step_by(7) {
            let c = CellArchitecture::from_index(idx).unwrap();
            let base = d.latency(&Architecture::Cell(c));
            for e in 0..6 {
                if c.op(e) == CellOp::Zeroize {
                    for op in [
                        CellOp::Skip,
                        CellOp::Conv1x1,
                        CellOp::Conv3x3,
                        CellOp::AvgPool3x3,
                    ] {
                        let more = d.latency(&Architecture::Cell(c.with_op(e, op)));
                        assert!(more >= base - 1e-12);
                    }
                }
            }
        }
    }
}
