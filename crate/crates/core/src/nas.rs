//! Latency-constrained architecture search.
//!
//! A searcher sees only predicted latencies and returns the most accurate
//! architecture whose prediction fits the constraint; the true latency of
//! the winner is reported next to it.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archspace::{enumerate_cells, Architecture, SearchSpace, CELL_EDGES};
use crate::devicesim::{DeviceError, DeviceProfile};
use crate::metalearn::{LatencyPredictor, MetaError};
use crate::rng;

#[derive(Debug, Error)]
pub enum NasError {
    #[error(transparent)]
    Predictor(#[from] MetaError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("no accuracy for {0}")]
    MissingAccuracy(String),
    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("accuracy {value} for {arch} is outside [0, 100]")]
    InvalidAccuracy { arch: String, value: f64 },
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Anything that scores architectures in accuracy percent.
pub trait AccuracyModel: Sync {
    fn space(&self) -> SearchSpace;
    fn accuracy(&self, a: &Architecture) -> Result<f64, NasError>;
}

/// Accuracy (%) per architecture, either stored or generated on demand.
#[derive(Clone, Debug)]
pub enum AccuracyTable {
    Stored {
        space: SearchSpace,
        entries: HashMap<Architecture, f64>,
    },
    Synthetic(SyntheticAccuracy),
}

#[derive(Serialize, Deserialize)]
struct AccuracyRow {
    arch: Architecture,
    accuracy: f64,
}

impl AccuracyModel for AccuracyTable {
    fn space(&self) -> SearchSpace {
        match self {
            Self::Stored { space, .. } => *space,
            Self::Synthetic(s) => s.space,
        }
    }

    fn accuracy(&self, a: &Architecture) -> Result<f64, NasError> {
        match self {
            Self::Stored { entries, .. } => entries
                .get(a)
                .copied()
                .ok_or_else(|| NasError::MissingAccuracy(a.to_string())),
            Self::Synthetic(s) => Ok(s.accuracy(a)),
        }
    }
}

impl AccuracyTable {
    pub fn from_entries(
        space: SearchSpace,
        rows: impl IntoIterator<Item = (Architecture, f64)>,
    ) -> Result<Self, NasError> {
        let mut entries = HashMap::new();
        for (a, v) in rows {
            if a.space() != space {
                return Err(NasError::Config(format!("{a} is not in the {space} space")));
            }
            if !(0.0..=100.0).contains(&v) {
                return Err(NasError::InvalidAccuracy {
                    arch: a.to_string(),
                    value: v,
                });
            }
            entries.insert(a, v);
        }
        Ok(Self::Stored { space, entries })
    }

    /// JSON lines of `{"arch": {...}, "accuracy": 71.3}`.
    pub fn parse_jsonl(text: &str, origin: &str) -> Result<Self, NasError> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: AccuracyRow = serde_json::from_str(line).map_err(|e| NasError::Parse {
                origin: origin.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })?;
            rows.push((r.arch, r.accuracy));
        }
        let space = rows
            .first()
            .map(|r| r.0.space())
            .ok_or_else(|| NasError::Config(format!("{origin}: accuracy table is empty")))?;
        Self::from_entries(space, rows)
    }

    pub fn load(path: &Path) -> Result<Self, NasError> {
        let text = std::fs::read_to_string(path).map_err(|e| NasError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_jsonl(&text, &path.display().to_string())
    }

    /// Writes `archs` with their accuracies as JSON lines.
    pub fn save(&self, path: &Path, archs: &[Architecture]) -> Result<(), NasError> {
        let mut s = String::new();
        for a in archs {
            let row = AccuracyRow {
                arch: *a,
                accuracy: self.accuracy(a)?,
            };
            s.push_str(&serde_json::to_string(&row).expect("row serialization"));
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| NasError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// `base + Σ bonus(position, op) − congestion·heavy² + N(0, σ²)`, clamped
/// to `[0, 100]`, with the noise drawn from a per-architecture seed.
/// Cells whose output is unreachable from the input score `base − 50`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticAccuracy {
    pub space: SearchSpace,
    pub base: f64,
    /// `[position][op]` accuracy points.
    pub bonus: Vec<Vec<f64>>,
    /// Ops counted by the congestion penalty.
    pub heavy_ops: Vec<u8>,
    pub congestion: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SyntheticAccuracy {
    pub fn new(space: SearchSpace, seed: u64) -> Self {
        let mut r = rng::child_rng(seed, "accuracy-model", 0);
        let (base, per_op, heavy_ops, congestion): (f64, Vec<f64>, Vec<u8>, f64) = match space {
            // zeroize, skip, conv1x1, conv3x3, avgpool
            SearchSpace::Cell => (60.0, vec![0.0, 0.9, 1.7, 2.6, 0.5], vec![3], 0.22),
            // k3_e1, k3_e1_g2, k3_e3, k3_e6, k5_e1, k5_e1_g2, k5_e3, k5_e6, skip
            SearchSpace::Layerwise => (
                60.0,
                vec![0.30, 0.26, 0.45, 0.55, 0.38, 0.33, 0.52, 0.62, 0.0],
                vec![3, 7],
                0.012,
            ),
        };
        let bonus = (0..space.positions())
            .map(|_| {
                let w = r.random_range(0.7..1.3);
                per_op.iter().map(|b| b * w).collect()
            })
            .collect();
        Self {
            space,
            base,
            bonus,
            heavy_ops,
            congestion,
            noise_sd: 0.3,
            seed,
        }
    }

    fn connected(ops: &[u8]) -> bool {
        let mut reached = [true, false, false, false];
        for (e, &(s, d)) in CELL_EDGES.iter().enumerate() {
            if ops[e] != 0 && reached[s] {
                reached[d] = true;
            }
        }
        reached[3]
    }

    pub fn accuracy(&self, a: &Architecture) -> f64 {
        let ops = a.ops();
        let mut acc = self.base;
        for (p, &o) in ops.iter().enumerate() {
            acc += self.bonus[p][o as usize];
        }
        let heavy = ops.iter().filter(|o| self.heavy_ops.contains(o)).count() as f64;
        acc -= self.congestion * heavy * heavy;
        if self.space == SearchSpace::Cell && !Self::connected(ops) {
            acc = self.base - 50.0;
        }
        let mut r = rng::rng(rng::derive(self.seed, &a.op_string(), 0));
        let noise = Normal::new(0.0, self.noise_sd)
            .expect("valid normal")
            .sample(&mut r);
        (acc + noise).clamp(0.0, 100.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub arch: Option<Architecture>,
    pub predicted_ms: Option<f64>,
    pub true_ms: Option<f64>,
    pub accuracy: Option<f64>,
    pub constraint_ms: f64,
    pub wall_s: f64,
    pub predictor_samples: usize,
    pub evaluated: usize,
    /// Set when nothing satisfied the constraint.
    pub diagnostics: Option<String>,
}

impl SearchResult {
    pub fn is_empty(&self) -> bool {
        self.arch.is_none()
    }

    fn empty(
        constraint_ms: f64,
        predictor_samples: usize,
        evaluated: usize,
        wall_s: f64,
        why: String,
    ) -> Self {
        Self {
            arch: None,
            predicted_ms: None,
            true_ms: None,
            accuracy: None,
            constraint_ms,
            wall_s,
            predictor_samples,
            evaluated,
            diagnostics: Some(why),
        }
    }
}

pub const RESULT_CSV_HEADER: &str =
    "constraint_ms,arch,predicted_ms,true_ms,accuracy,predictor_samples,evaluated,wall_s";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

pub fn results_to_csv(rows: &[SearchResult]) -> String {
    let mut s = format!("{RESULT_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:?},{},{},{},{},{},{},{:.3}",
            r.constraint_ms,
            r.arch.map(|a| a.op_string()).unwrap_or_default(),
            opt(r.predicted_ms),
            opt(r.true_ms),
            opt(r.accuracy),
            r.predictor_samples,
            r.evaluated,
            r.wall_s
        );
    }
    s
}

/// Orders candidates: higher accuracy, then lower predicted latency, then
/// lexicographically smaller ops.
fn better(a: (f64, f64, &Architecture), b: (f64, f64, &Architecture)) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => match a.1.total_cmp(&b.1) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => a.2.ops() < b.2.ops(),
        },
    }
}

/// Predicted latency and accuracy of every cell architecture, computed once
/// and reused across constraints.
pub struct CellScan {
    pub archs: Vec<Architecture>,
    pub predicted_ms: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub predictor_samples: usize,
    pub scan_s: f64,
}

impl CellScan {
    pub fn new(
        predictor: &dyn LatencyPredictor,
        acc: &dyn AccuracyModel,
    ) -> Result<Self, NasError> {
        if acc.space() != SearchSpace::Cell {
            return Err(NasError::Config(
                "exhaustive search needs a cell-space accuracy table".into(),
            ));
        }
        let started = Instant::now();
        let archs: Vec<Architecture> = enumerate_cells().map(Architecture::Cell).collect();
        let predicted_ms = predictor.predict_ms(&archs)?;
        let accuracy = archs
            .iter()
            .map(|a| acc.accuracy(a))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            archs,
            predicted_ms,
            accuracy,
            predictor_samples: predictor.sample_count(),
            scan_s: started.elapsed().as_secs_f64(),
        })
    }

    /// Best architecture whose predicted latency fits `constraint_ms`.
    pub fn search(
        &self,
        device: &DeviceProfile,
        constraint_ms: f64,
    ) -> Result<SearchResult, NasError> {
        let started = Instant::now();
        let mut best: Option<usize> = None;
        for i in 0..self.archs.len() {
            if self.predicted_ms[i] > constraint_ms {
                continue;
            }
            let cand = (self.accuracy[i], self.predicted_ms[i], &self.archs[i]);
            if best.is_none_or(|b| {
                better(
                    cand,
                    (self.accuracy[b], self.predicted_ms[b], &self.archs[b]),
                )
            }) {
                best = Some(i);
            }
        }
        let wall_s = self.scan_s + started.elapsed().as_secs_f64();
        Ok(match best {
            None => SearchResult::empty(
                constraint_ms,
                self.predictor_samples,
                self.archs.len(),
                wall_s,
                format!(
                    "no architecture predicted within {constraint_ms} ms (fastest prediction {:.4} ms)",
                    self.predicted_ms.iter().copied().fold(f64::INFINITY, f64::min)
                ),
            ),
            Some(i) => SearchResult {
                arch: Some(self.archs[i]),
                predicted_ms: Some(self.predicted_ms[i]),
                true_ms: Some(device.true_latency(&self.archs[i])?),
                accuracy: Some(self.accuracy[i]),
                constraint_ms,
                wall_s,
                predictor_samples: self.predictor_samples,
                evaluated: self.archs.len(),
                diagnostics: None,
            },
        })
    }
}

/// Scans all 15625 cells once for the given constraint.
pub fn exhaustive_search(
    predictor: &dyn LatencyPredictor,
    acc: &dyn AccuracyModel,
    device: &DeviceProfile,
    constraint_ms: f64,
) -> Result<SearchResult, NasError> {
    CellScan::new(predictor, acc)?.search(device, constraint_ms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population: usize,
    pub tournament: usize,
    /// Total predictor evaluations, initial population included.
    pub budget: usize,
    pub seed: u64,
    /// Positions allowed to vary; every other position keeps `base`'s op.
    pub free_positions: Option<Vec<usize>>,
    pub base: Option<Architecture>,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 64,
            tournament: 8,
            budget: 2000,
            seed: 0,
            free_positions: None,
            base: None,
        }
    }
}

struct Individual {
    arch: Architecture,
    predicted: f64,
    accuracy: f64,
}

/// Regularized evolution: tournament selection, single-position mutation,
/// oldest individual retired, children over the constraint rejected.
pub fn evolutionary_search(
    space: SearchSpace,
    predictor: &dyn LatencyPredictor,
    acc: &dyn AccuracyModel,
    device: &DeviceProfile,
    constraint_ms: f64,
    cfg: &EvolutionConfig,
) -> Result<SearchResult, NasError> {
    if cfg.population == 0 || cfg.tournament == 0 || cfg.tournament > cfg.population {
        return Err(NasError::Config("need 0 < tournament ≤ population".into()));
    }
    if cfg.budget < cfg.population {
        return Err(NasError::Config(format!(
            "budget {} is smaller than the population {}",
            cfg.budget, cfg.population
        )));
    }
    if acc.space() != space {
        return Err(NasError::Config(format!(
            "accuracy table is for the {} space",
            acc.space()
        )));
    }
    let started = Instant::now();
    let positions = cfg
        .free_positions
        .clone()
        .unwrap_or_else(|| (0..space.positions()).collect());
    if positions.is_empty() || positions.iter().any(|&p| p >= space.positions()) {
        return Err(NasError::Config("free positions out of range".into()));
    }
    let base: Vec<u8> = match cfg.base {
        Some(b) if b.space() == space => b.ops().to_vec(),
        Some(_) => {
            return Err(NasError::Config(
                "base architecture is in another space".into(),
            ))
        }
        None => vec![0; space.positions()],
    };
    let choices = space.choices() as u8;
    let mut r = rng::child_rng(cfg.seed, "evolution", 0);
    let mut evaluated = 0;
    let mut best: Option<Individual> = None;
    let consider = |best: &mut Option<Individual>, ind: &Individual| {
        let cand = (ind.accuracy, ind.predicted, &ind.arch);
        if best
            .as_ref()
            .is_none_or(|b| better(cand, (b.accuracy, b.predicted, &b.arch)))
        {
            *best = Some(Individual { ..*ind });
        }
    };
    let evaluate = |ops: &[u8], evaluated: &mut usize| -> Result<Individual, NasError> {
        let arch =
            Architecture::from_ops(space, ops).map_err(|e| NasError::Config(e.to_string()))?;
        *evaluated += 1;
        let predicted = predictor.predict_ms(std::slice::from_ref(&arch))?[0];
        Ok(Individual {
            arch,
            predicted,
            accuracy: acc.accuracy(&arch)?,
        })
    };

    let mut population: std::collections::VecDeque<Individual> = Default::default();
    while population.len() < cfg.population && evaluated < cfg.budget {
        let mut ops = base.clone();
        for &p in &positions {
            ops[p] = r.random_range(0..choices);
        }
        let ind = evaluate(&ops, &mut evaluated)?;
        if ind.predicted <= constraint_ms {
            consider(&mut best, &ind);
            population.push_back(ind);
        }
    }
    while evaluated < cfg.budget && !population.is_empty() {
        let mut parent: Option<&Individual> = None;
        for _ in 0..cfg.tournament {
            let c = &population[r.random_range(0..population.len())];
            if parent.is_none_or(|p| c.accuracy > p.accuracy) {
                parent = Some(c);
            }
        }
        let mut ops = parent.expect("tournament is non-empty").arch.ops().to_vec();
        let p = positions[r.random_range(0..positions.len())];
        let shift = r.random_range(1..choices);
        ops[p] = (ops[p] + shift) % choices;
        let child = evaluate(&ops, &mut evaluated)?;
        if child.predicted <= constraint_ms {
            consider(&mut best, &child);
            population.push_back(child);
            population.pop_front();
        }
    }
    let wall_s = started.elapsed().as_secs_f64();
    Ok(match best {
        None => SearchResult::empty(
            constraint_ms,
            predictor.sample_count(),
            evaluated,
            wall_s,
            format!("no feasible individual among {evaluated} evaluations"),
        ),
        Some(b) => SearchResult {
            arch: Some(b.arch),
            predicted_ms: Some(b.predicted),
            true_ms: Some(device.true_latency(&b.arch)?),
            accuracy: Some(b.accuracy),
            constraint_ms,
            wall_s,
            predictor_samples: predictor.sample_count(),
            evaluated,
            diagnostics: None,
        },
    })
}

/// The true accuracy-latency frontier of the cell space on `device`:
/// points sorted by latency, each strictly more accurate than every faster one.
pub fn true_frontier(
    acc: &dyn AccuracyModel,
    device: &DeviceProfile,
) -> Result<Vec<(f64, f64, Architecture)>, NasError> {
    let mut pts: Vec<(f64, f64, Architecture)> = enumerate_cells()
        .map(Architecture::Cell)
        .map(|a| Ok((device.true_latency(&a)?, acc.accuracy(&a)?, a)))
        .collect::<Result<_, NasError>>()?;
    pts.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.1.total_cmp(&x.1)));
    let mut out: Vec<(f64, f64, Architecture)> = Vec::new();
    for p in pts {
        if out.last().is_none_or(|l| p.1 > l.1) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Whether `(latency, accuracy)` is strictly dominated by some frontier point.
pub fn is_dominated(frontier: &[(f64, f64, Architecture)], latency: f64, accuracy: f64) -> bool {
    frontier
        .iter()
        .any(|&(l, a, _)| l <= latency && a >= accuracy && (l < latency || a > accuracy))
}

pub struct Sweep {
    pub results: Vec<SearchResult>,
    pub frontier: Vec<(f64, f64, Architecture)>,
}

pub const SWEEP_CSV_HEADER: &str = "constraint_ms,true_latency_ms,accuracy";

impl Sweep {
    /// `(constraint, true latency, accuracy)` rows; empty results leave blanks.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_CSV_HEADER}\n");
        for r in &self.results {
            let _ = writeln!(
                s,
                "{:?},{},{}",
                r.constraint_ms,
                opt(r.true_ms),
                opt(r.accuracy)
            );
        }
        s
    }

    pub fn frontier_csv(&self) -> String {
        let mut s = String::from("true_latency_ms,accuracy,arch\n");
        for (l, a, arch) in &self.frontier {
            let _ = writeln!(s, "{l:?},{a:?},{}", arch.op_string());
        }
        s
    }
}

/// Runs the exhaustive searcher per constraint and attaches the true frontier.
pub fn pareto_sweep(
    predictor: &dyn LatencyPredictor,
    acc: &dyn AccuracyModel,
    device: &DeviceProfile,
    constraints: &[f64],
) -> Result<Sweep, NasError> {
    let frontier = true_frontier(acc, device)?;
    if constraints.is_empty() {
        return Ok(Sweep {
            results: Vec::new(),
            frontier,
        });
    }
    let scan = CellScan::new(predictor, acc)?;
    let results = constraints
        .iter()
        .map(|&c| scan.search(device, c))
        .collect::<Result<_, _>>()?;
    Ok(Sweep { results, frontier })
}

/// Latency as an affine function of MACs fitted on measured samples, so the
/// MAC proxy can be held to a millisecond constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedFlops {
    pub ms_per_mmac: f64,
    pub intercept_ms: f64,
}

impl CalibratedFlops {
    pub fn fit(rows: &[(Architecture, f64)]) -> Result<Self, NasError> {
        if rows.len() < 2 {
            return Err(NasError::Config(
                "MAC calibration needs at least two samples".into(),
            ));
        }
        let xs: Vec<f64> = rows.iter().map(|r| r.0.macs() as f64 / 1e6).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        Ok(Self {
            ms_per_mmac: slope,
            intercept_ms: my - slope * mx,
        })
    }
}

impl LatencyPredictor for CalibratedFlops {
    fn predict_ms(&self, archs: &[Architecture]) -> Result<Vec<f64>, MetaError> {
        Ok(archs
            .iter()
            .map(|a| self.intercept_ms + self.ms_per_mmac * a.macs() as f64 / 1e6)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_accuracies_span_the_expected_band() {
        let acc = SyntheticAccuracy::new(SearchSpace::Cell, 0);
        let v: Vec<f64> = enumerate_cells()
            .map(|c| acc.accuracy(&Architecture::Cell(c)))
            .filter(|&x| x > 20.0)
            .collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= 59.0 && hi <= 76.0 && hi - lo > 8.0, "{lo}..{hi}");
    }

    #[test]
    fn disconnected_cells_score_low() {
        let acc = SyntheticAccuracy::new(SearchSpace::Cell, 0);
        let a = Architecture::from_op_string(SearchSpace::Cell, "333000").unwrap();
        assert!(acc.accuracy(&a) < 15.0);
    }

    #[test]
    fn tie_break_prefers_lower_latency_then_ops() {
        let a = Architecture::from_op_string(SearchSpace::Cell, "111111").unwrap();
        let b = Architecture::from_op_string(SearchSpace::Cell, "222222").unwrap();
        assert!(better((70.0, 1.0, &b), (70.0, 2.0, &a)));
        assert!(better((70.0, 1.0, &a), (70.0, 1.0, &b)));
        assert!(!better((69.0, 0.5, &a), (70.0, 9.0, &b)));
    }
}
