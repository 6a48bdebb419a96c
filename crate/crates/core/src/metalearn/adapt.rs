use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::archspace::{
    enumerate_cells, sample_architectures, Architecture, ReferenceSet, SearchSpace,
};
use crate::devicesim::{measurement_seed, DeviceProfile};
use crate::embedding::{compute_embedding, HardwareEmbedding};
use crate::nnet::{ParamSet, Shape, Tensor};
use crate::predictor::{HelpModel, ModelConfig};
use crate::{rng, stats};

use super::baselines::{baseline_flops, baseline_layerwise, baseline_scratch, ScratchConfig};
use super::{adapted_theta, conditioning_row, InnerScope, InnerSettings, MetaError, Variant};

/// Anything that maps architectures to latency estimates in milliseconds.
pub trait LatencyPredictor: Sync {
    fn predict_ms(&self, archs: &[Architecture]) -> Result<Vec<f64>, MetaError>;

    /// Latency measurements the predictor consumed on the target device.
    fn sample_count(&self) -> usize {
        0
    }
}

/// The device's own noise-free latency.
pub struct OraclePredictor<'a>(pub &'a DeviceProfile);

impl LatencyPredictor for OraclePredictor<'_> {
    fn predict_ms(&self, archs: &[Architecture]) -> Result<Vec<f64>, MetaError> {
        archs.iter().map(|a| Ok(self.0.true_latency(a)?)).collect()
    }
}

/// MAC count used as a latency proxy.
pub struct FlopsPredictor;

impl LatencyPredictor for FlopsPredictor {
    fn predict_ms(&self, archs: &[Architecture]) -> Result<Vec<f64>, MetaError> {
        Ok(archs.iter().map(|a| a.macs() as f64).collect())
    }
}

/// Predictor parameters after adaptation to one device.
#[derive(Clone, Debug)]
pub struct AdaptedPredictor {
    model: HelpModel,
    theta: Vec<Tensor>,
    v_row: Tensor,
    pub embedding: HardwareEmbedding,
    pub support: Vec<Architecture>,
    pub adapt_ms: f64,
}

impl AdaptedPredictor {
    pub fn predict_standardized(&self, archs: &[Architecture]) -> Result<Vec<f64>, MetaError> {
        Ok(self
            .model
            .predict_with(&self.theta, archs, self.v_row.data())?)
    }

    pub fn theta(&self) -> &[Tensor] {
        &self.theta
    }
}

impl LatencyPredictor for AdaptedPredictor {
    fn predict_ms(&self, archs: &[Architecture]) -> Result<Vec<f64>, MetaError> {
        self.predict_standardized(archs)?
            .into_iter()
            .map(|p| Ok(self.embedding.destandardize(p)?))
            .collect()
    }

    fn sample_count(&self) -> usize {
        self.support.len() + self.embedding.d()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub n_test: usize,
    pub inner_steps: usize,
    pub inner_scope: InnerScope,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    /// Baselines to run next to the adapted predictor: `flops`, `layerwise`, `scratch`.
    pub baselines: Vec<String>,
    /// Training rows given to the layer-wise baseline.
    pub layerwise_samples: usize,
    pub scratch: ScratchConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 10,
            n_test: 1000,
            inner_steps: 2,
            inner_scope: InnerScope::All,
            variant: Variant::Full,
            seeds: (0..5).collect(),
            baselines: Vec::new(),
            layerwise_samples: 900,
            scratch: ScratchConfig::default(),
        }
    }
}

pub const BASELINE_NAMES: [&str; 3] = ["flops", "layerwise", "scratch"];

impl EvalConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        if self.n_samples == 0 {
            return Err(MetaError::Config("n_samples must be at least 1".into()));
        }
        if self.n_test < 2 {
            return Err(MetaError::Config("n_test must be at least 2".into()));
        }
        if self.seeds.is_empty() {
            return Err(MetaError::Config("at least one seed is required".into()));
        }
        if let Some(b) = self
            .baselines
            .iter()
            .find(|b| !BASELINE_NAMES.contains(&b.as_str()))
        {
            return Err(MetaError::Config(format!(
                "unknown baseline `{b}` (expected one of {})",
                BASELINE_NAMES.join(", ")
            )));
        }
        Ok(())
    }
}

/// Measures `archs` on `device` under per-architecture seeds derived from `seed`.
pub fn measure_all(
    device: &DeviceProfile,
    archs: &[Architecture],
    seed: u64,
) -> Result<Vec<f64>, MetaError> {
    archs
        .iter()
        .map(|a| Ok(device.measure(a, measurement_seed(seed, &device.device_id, a))?))
        .collect()
}

/// A test set of `n_test` architectures and a disjoint candidate pool for
/// support sampling. The cell space is split exhaustively; the layer-wise
/// space is sampled.
pub fn split_test_archs(
    space: SearchSpace,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<Architecture>, Vec<Architecture>), MetaError> {
    let mut all: Vec<Architecture> = match space {
        SearchSpace::Cell => enumerate_cells().map(Architecture::Cell).collect(),
        SearchSpace::Layerwise => sample_architectures(space, n_test + 20_000, seed)?,
    };
    all.shuffle(&mut rng::child_rng(seed, "test-split", 0));
    if n_test >= all.len() {
        return Err(MetaError::Config(format!(
            "n_test {n_test} leaves no candidates in a pool of {}",
            all.len()
        )));
    }
    let candidates = all.split_off(n_test);
    Ok((all, candidates))
}

/// Fingerprints `device`, measures `n_samples` support architectures drawn
/// from `candidates`, and runs the inner loop without meta-gradients.
#[allow(clippy::too_many_arguments)]
pub fn adapt(
    model: &HelpModel,
    params: &ParamSet,
    device: &DeviceProfile,
    refset: &ReferenceSet,
    candidates: &[Architecture],
    n_samples: usize,
    settings: &InnerSettings,
    variant: Variant,
    seed: u64,
) -> Result<AdaptedPredictor, MetaError> {
    if n_samples == 0 {
        return Err(MetaError::EmptySupport);
    }
    if n_samples > candidates.len() {
        return Err(MetaError::Config(format!(
            "{n_samples} support samples requested from {} candidates",
            candidates.len()
        )));
    }
    let started = Instant::now();
    let embedding = compute_embedding(device, refset, rng::derive(seed, "embedding", 0))?;
    let mut r = rng::child_rng(seed, "adapt-support", 0);
    let support: Vec<Architecture> = index::sample(&mut r, candidates.len(), n_samples)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    let ms = measure_all(device, &support, rng::derive(seed, "adapt-measure", 0))?;
    let ys = ms
        .iter()
        .map(|&y| embedding.standardize(y))
        .collect::<Result<Vec<_>, _>>()?;
    let v_row = conditioning_row(model, &embedding.values, variant)?;
    let batch = model.batch(&support)?;
    let y = Tensor::new(Shape::new(ys.len(), 1), ys);
    let (theta, _) = adapted_theta(model, params, &batch, &y, &v_row, settings)?;
    Ok(AdaptedPredictor {
        model: model.clone(),
        theta,
        v_row,
        embedding,
        support,
        adapt_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Spearman ρ between `predictor` and measured latencies on `test_archs`.
pub fn evaluate(
    predictor: &dyn LatencyPredictor,
    device: &DeviceProfile,
    test_archs: &[Architecture],
    seed: u64,
) -> Result<f64, MetaError> {
    let truth = measure_all(device, test_archs, rng::derive(seed, "test-measure", 0))?;
    let pred = predictor.predict_ms(test_archs)?;
    Ok(stats::spearman(&pred, &truth)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceEval {
    pub device_id: String,
    pub seed: u64,
    pub variant: Variant,
    pub n_samples: usize,
    pub n_test: usize,
    pub rho: f64,
    pub adapt_ms: f64,
    pub baselines: BTreeMap<String, f64>,
}

/// Adapts to `device` and scores it (plus any requested baselines) for one seed.
pub fn evaluate_device(
    model: &HelpModel,
    params: &ParamSet,
    device: &DeviceProfile,
    refset: &ReferenceSet,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<DeviceEval, MetaError> {
    cfg.validate()?;
    let (test, candidates) = split_test_archs(model.space(), cfg.n_test, seed)?;
    let settings = InnerSettings::for_variant(cfg.variant, cfg.inner_steps, cfg.inner_scope, false);
    let adapted = adapt(
        model,
        params,
        device,
        refset,
        &candidates,
        cfg.n_samples,
        &settings,
        cfg.variant,
        seed,
    )?;
    let rho = evaluate(&adapted, device, &test, seed)?;
    let mut baselines = BTreeMap::new();
    for b in &cfg.baselines {
        let value = match b.as_str() {
            "flops" => baseline_flops(&test, device, seed)?,
            "layerwise" => {
                let n = cfg.layerwise_samples.min(candidates.len());
                let train = &candidates[..n];
                let ms = measure_all(device, train, rng::derive(seed, "layerwise-measure", 0))?;
                let rows: Vec<(Architecture, f64)> = train.iter().copied().zip(ms).collect();
                baseline_layerwise(&rows, &test, device, seed)?
            }
            "scratch" => {
                let ms = measure_all(
                    device,
                    &adapted.support,
                    rng::derive(seed, "adapt-measure", 0),
                )?;
                let rows: Vec<(Architecture, f64)> =
                    adapted.support.iter().copied().zip(ms).collect();
                let mcfg = ModelConfig {
                    d: refset.d(),
                    ..model.config().clone()
                };
                baseline_scratch(
                    &mcfg,
                    &cfg.scratch,
                    &rows,
                    &adapted.embedding,
                    &test,
                    device,
                    seed,
                )?
            }
            other => unreachable!("validated baseline {other}"),
        };
        baselines.insert(b.clone(), value);
    }
    Ok(DeviceEval {
        device_id: device.device_id.clone(),
        seed,
        variant: cfg.variant,
        n_samples: cfg.n_samples,
        n_test: cfg.n_test,
        rho,
        adapt_ms: adapted.adapt_ms,
        baselines,
    })
}

/// Per-(device, seed) rows plus per-device mean and spread.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<DeviceEval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSummary {
    pub device_id: String,
    pub n_samples: usize,
    pub mean_rho: f64,
    pub std_rho: f64,
    pub baselines: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn summaries(&self) -> Vec<DeviceSummary> {
        let mut groups: BTreeMap<(String, usize), Vec<&DeviceEval>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.device_id.clone(), r.n_samples))
                .or_default()
                .push(r);
        }
        groups
            .into_iter()
            .map(|((device_id, n_samples), rows)| {
                let rhos: Vec<f64> = rows.iter().map(|r| r.rho).collect();
                let mut baselines = BTreeMap::new();
                for name in rows[0].baselines.keys() {
                    let v: Vec<f64> = rows
                        .iter()
                        .filter_map(|r| r.baselines.get(name).copied())
                        .collect();
                    baselines.insert(name.clone(), stats::mean(&v));
                }
                DeviceSummary {
                    device_id,
                    n_samples,
                    mean_rho: stats::mean(&rhos),
                    std_rho: stats::std_dev(&rhos),
                    baselines,
                }
            })
            .collect()
    }

    /// Mean ρ over every row.
    pub fn mean_rho(&self) -> f64 {
        stats::mean(&self.rows.iter().map(|r| r.rho).collect::<Vec<_>>())
    }

    pub fn mean_baseline(&self, name: &str) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter_map(|r| r.baselines.get(name).copied())
            .collect();
        (!v.is_empty()).then(|| stats::mean(&v))
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            rows: &'a [DeviceEval],
            summary: Vec<DeviceSummary>,
        }
        serde_json::to_string_pretty(&Out {
            rows: &self.rows,
            summary: self.summaries(),
        })
        .expect("report serialization")
    }

    /// One row per (device, seed); timing in the last column.
    pub fn to_csv(&self) -> String {
        let names: Vec<String> = {
            let mut v: Vec<String> = self
                .rows
                .iter()
                .flat_map(|r| r.baselines.keys().cloned())
                .collect();
            v.sort();
            v.dedup();
            v
        };
        let mut s = String::from("device_id,seed,variant,n_samples,n_test,rho");
        for n in &names {
            let _ = write!(s, ",{n}_rho");
        }
        s.push_str(",adapt_ms\n");
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{},{},{:?}",
                r.device_id, r.seed, r.variant, r.n_samples, r.n_test, r.rho
            );
            for n in &names {
                match r.baselines.get(n) {
                    Some(v) => {
                        let _ = write!(s, ",{v:?}");
                    }
                    None => s.push(','),
                }
            }
            let _ = writeln!(s, ",{:.3}", r.adapt_ms);
        }
        s
    }

    pub fn save(&self, json: &Path, csv: &Path) -> Result<(), MetaError> {
        std::fs::write(json, self.to_json()).map_err(|e| MetaError::io(json, e))?;
        std::fs::write(csv, self.to_csv()).map_err(|e| MetaError::io(csv, e))
    }
}
