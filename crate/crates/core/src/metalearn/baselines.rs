//! Reference predictors: MAC count, a summed per-operation cost table, and
//! the HELP network trained per device from random initialization.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::archspace::{Architecture, SearchSpace};
use crate::devicesim::DeviceProfile;
use crate::embedding::HardwareEmbedding;
use crate::nnet::{adam_step, AdamConfig, AdamState, ParamSet, Shape, Tape, Tensor};
use crate::predictor::{HelpModel, ModelConfig};
use crate::rng;

use super::adapt::{evaluate, FlopsPredictor, LatencyPredictor};
use super::MetaError;

pub fn baseline_flops(
    test_archs: &[Architecture],
    device: &DeviceProfile,
    seed: u64,
) -> Result<f64, MetaError> {
    evaluate(&FlopsPredictor, device, test_archs, seed)
}

/// Latency as an intercept plus one fitted cost per (position, op) slot.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerwisePredictor {
    space: SearchSpace,
    weights: Vec<f64>,
    pub rank_deficient: bool,
}

/// Indicator features with op 0 of every position folded into the intercept.
fn features(a: &Architecture) -> Vec<f64> {
    let space = a.space();
    let per = space.choices() - 1;
    let mut x = vec![0.0; 1 + space.positions() * per];
    x[0] = 1.0;
    for (p, &o) in a.ops().iter().enumerate() {
        if o > 0 {
            x[1 + p * per + (o as usize - 1)] = 1.0;
        }
    }
    x
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and row-major eigenvectors as columns.
fn symmetric_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let scale: f64 = (0..n)
            .map(|i| a[i * n + i] * a[i * n + i])
            .sum::<f64>()
            .max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

impl LayerwisePredictor {
    /// Least-squares fit through the pseudo-inverse of the normal equations.
    pub fn fit(rows: &[(Architecture, f64)]) -> Result<Self, MetaError> {
        let Some((first, _)) = rows.first() else {
            return Err(MetaError::Config(
                "layer-wise baseline needs training rows".into(),
            ));
        };
        let space = first.space();
        let n = features(first).len();
        let mut xtx = vec![0.0; n * n];
        let mut xty = vec![0.0; n];
        for (a, y) in rows {
            if a.space() != space {
                return Err(MetaError::Config("training rows mix search spaces".into()));
            }
            let x = features(a);
            let active: Vec<usize> = (0..n).filter(|&i| x[i] != 0.0).collect();
            for &i in &active {
                xty[i] += y;
                for &j in &active {
                    xtx[i * n + j] += 1.0;
                }
            }
        }
        let (vals, vecs) = symmetric_eigen(xtx, n);
        let max = vals.iter().copied().fold(0.0f64, f64::max);
        let tol = max * n as f64 * 1e-12;
        let rank = vals.iter().filter(|&&l| l > tol).count();
        let rank_deficient = rank < n;
        if rank_deficient {
            log::warn!(
                "layer-wise fit is rank deficient ({rank} of {n}); using the pseudo-inverse"
            );
        }
        let mut weights = vec![0.0; n];
        for (k, &l) in vals.iter().enumerate() {
            if l <= tol {
                continue;
            }
            let proj: f64 = (0..n).map(|i| vecs[i * n + k] * xty[i]).sum::<f64>() / l;
            for i in 0..n {
                weights[i] += proj * vecs[i * n + k];
            }
        }
        Ok(Self {
            space,
            weights,
            rank_deficient,
        })
    }

    pub fn predict_one(&self, a: &Architecture) -> f64 {
        features(a)
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| x * w)
            .sum()
    }
}

impl LatencyPredictor for LayerwisePredictor {
    fn predict_ms(&self, archs: &[Architecture]) -> Result<Vec<f64>, MetaError> {
        if let Some(a) = archs.iter().find(|a| a.space() != self.space) {
            return Err(MetaError::Config(format!(
                "{a} is not in the fitted space {}",
                self.space
            )));
        }
        Ok(archs.iter().map(|a| self.predict_one(a)).collect())
    }
}

pub fn baseline_layerwise(
    train: &[(Architecture, f64)],
    test_archs: &[Architecture],
    device: &DeviceProfile,
    seed: u64,
) -> Result<f64, MetaError> {
    evaluate(&LayerwisePredictor::fit(train)?, device, test_archs, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScratchConfig {
    pub max_steps: usize,
    /// Stop after this many steps without a new best training loss.
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for ScratchConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            patience: 200,
            lr: 1e-3,
            batch_size: 128,
        }
    }
}

/// The predictor network trained from random weights on one device.
pub struct ScratchPredictor {
    model: HelpModel,
    params: ParamSet,
    embedding: HardwareEmbedding,
    pub steps: usize,
    samples: usize,
}

impl ScratchPredictor {
    pub fn train(
        config: &ModelConfig,
        cfg: &ScratchConfig,
        rows: &[(Architecture, f64)],
        embedding: &HardwareEmbedding,
        seed: u64,
    ) -> Result<Self, MetaError> {
        if rows.is_empty() {
            return Err(MetaError::EmptySupport);
        }
        let (model, full_params) =
            HelpModel::init(config.clone(), 0.0, rng::derive(seed, "scratch-init", 0))?;
        // only θ is trained, so the modulator and α stay out of the optimizer
        let mut params = ParamSet::new();
        for &i in model.predictor_indices() {
            let p = &full_params.params()[i];
            params.insert(p.name.clone(), p.group, p.tensor.clone())?;
        }
        let archs: Vec<Architecture> = rows.iter().map(|r| r.0).collect();
        let ys = rows
            .iter()
            .map(|r| embedding.standardize(r.1))
            .collect::<Result<Vec<_>, _>>()?;
        let v_row = model.embedding_row(&embedding.values)?;
        let mut adam = AdamState::new(&params);
        let acfg = AdamConfig::with_lr(cfg.lr);
        let mut r = rng::child_rng(seed, "scratch-batches", 0);
        let bs = cfg.batch_size.max(1).min(rows.len());
        let full = model.batch(&archs)?;
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        let mut steps = 0;
        for _ in 0..cfg.max_steps {
            let (batch, y) = if bs == rows.len() {
                (full.clone(), ys.clone())
            } else {
                let pick = index::sample(&mut r, rows.len(), bs).into_vec();
                let a: Vec<Architecture> = pick.iter().map(|&i| archs[i]).collect();
                (model.batch(&a)?, pick.iter().map(|&i| ys[i]).collect())
            };
            let mut tape = Tape::new();
            let theta = params
                .iter()
                .map(|p| tape.param(p.tensor.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            let v = tape.constant(v_row.clone())?;
            let pred = model.forward(&mut tape, &theta, &batch, v)?;
            let target = tape.constant(Tensor::new(Shape::new(y.len(), 1), y))?;
            let loss = tape.mse(pred, target)?;
            let lv = tape.value(loss).item();
            let grads = tape.gradients(loss, &theta)?;
            adam_step(&mut params, &grads, &mut adam, &acfg)?;
            steps += 1;
            if lv < best {
                best = lv;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
        Ok(Self {
            model,
            params,
            embedding: embedding.clone(),
            steps,
            samples: rows.len(),
        })
    }
}

impl LatencyPredictor for ScratchPredictor {
    fn predict_ms(&self, archs: &[Architecture]) -> Result<Vec<f64>, MetaError> {
        let theta: Vec<Tensor> = self.params.iter().map(|p| p.tensor.clone()).collect();
        self.model
            .predict_with(&theta, archs, &self.embedding.values)?
            .into_iter()
            .map(|p| Ok(self.embedding.destandardize(p)?))
            .collect()
    }

    fn sample_count(&self) -> usize {
        self.samples
    }
}

pub fn baseline_scratch(
    config: &ModelConfig,
    cfg: &ScratchConfig,
    train: &[(Architecture, f64)],
    embedding: &HardwareEmbedding,
    test_archs: &[Architecture],
    device: &DeviceProfile,
    seed: u64,
) -> Result<f64, MetaError> {
    let p = ScratchPredictor::train(config, cfg, train, embedding, seed)?;
    evaluate(&p, device, test_archs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let (mut vals, _) = symmetric_eigen(vec![2.0, 1.0, 1.0, 2.0], 2);
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_fit_is_rank_deficient_but_exact() {
        let a = Architecture::from_op_string(SearchSpace::Cell, "123401").unwrap();
        let p = LayerwisePredictor::fit(&[(a, 4.5)]).unwrap();
        assert!(p.rank_deficient);
        assert!((p.predict_one(&a) - 4.5).abs() < 1e-9);
    }
}
