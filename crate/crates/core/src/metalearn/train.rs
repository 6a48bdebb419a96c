use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::TaskSource;
use crate::nnet::{adam_step, AdamConfig, AdamState, ParamSet, Tensor};
use crate::predictor::HelpModel;
use crate::rng;

use super::{
    episode_gradient_with_z, EpisodeGrad, EpisodeTensors, InnerScope, InnerSettings, MetaError,
    Variant,
};

pub const TRAIN_LOG_HEADER: &str = "iteration,mean_support_loss,mean_query_loss,wall_ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaTrainConfig {
    pub meta_batch: usize,
    pub inner_steps: usize,
    /// Outer iterations, each over one meta-batch.
    pub episodes: usize,
    /// `None` picks the space default.
    pub meta_lr: Option<f64>,
    pub k_shot: usize,
    pub query_size: usize,
    pub seed: u64,
    pub first_order: bool,
    pub inner_scope: InnerScope,
    pub variant: Variant,
    pub alpha_init: f64,
    pub workers: usize,
    pub checkpoint_every: usize,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            meta_batch: 8,
            inner_steps: 2,
            episodes: 2000,
            meta_lr: None,
            k_shot: 10,
            query_size: 128,
            seed: 0,
            first_order: false,
            inner_scope: InnerScope::All,
            variant: Variant::Full,
            alpha_init: 1e-2,
            workers: 1,
            checkpoint_every: 100,
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        let fail = |m: &str| Err(MetaError::Config(m.to_owned()));
        if self.inner_steps == 0 {
            return fail("inner_steps must be at least 1");
        }
        if self.episodes == 0 {
            return fail("episodes must be at least 1");
        }
        if self.meta_batch == 0 || self.k_shot == 0 || self.query_size == 0 {
            return fail("meta_batch, k_shot and query_size must be positive");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        if let Some(lr) = self.meta_lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                return fail("meta_lr must be a finite non-negative number");
            }
        }
        if !self.alpha_init.is_finite() {
            return fail("alpha_init must be finite");
        }
        Ok(())
    }

    pub fn lr(&self, model: &HelpModel) -> f64 {
        self.meta_lr
            .unwrap_or_else(|| super::default_meta_lr(model.space()))
    }

    pub fn inner_settings(&self) -> InnerSettings {
        InnerSettings::for_variant(
            self.variant,
            self.inner_steps,
            self.inner_scope,
            !self.first_order,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub mean_support_loss: f64,
    pub mean_query_loss: f64,
    pub wall_ms: f64,
}

/// Everything needed to continue training: parameters, Adam moments and
/// the next iteration index.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub iteration: usize,
    pub params: ParamSet,
    pub adam: AdamState,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    iteration: usize,
    adam_step: u64,
}

fn moments_as_params(params: &ParamSet, moments: &[Tensor]) -> ParamSet {
    let mut out = ParamSet::new();
    for (p, m) in params.iter().zip(moments) {
        out.insert(p.name.clone(), p.group, m.clone())
            .expect("unique names");
    }
    out
}

impl TrainState {
    pub fn new(params: ParamSet) -> Self {
        let adam = AdamState::new(&params);
        Self {
            iteration: 0,
            params,
            adam,
        }
    }

    /// Writes `params.bin`, `adam_m.bin`, `adam_v.bin` and `state.json`
    /// into `dir`, replacing earlier files.
    pub fn save(&self, dir: &Path) -> Result<(), MetaError> {
        fs::create_dir_all(dir).map_err(|e| MetaError::io(dir, e))?;
        self.params.save(&dir.join("params.bin"))?;
        moments_as_params(&self.params, &self.adam.m).save(&dir.join("adam_m.bin"))?;
        moments_as_params(&self.params, &self.adam.v).save(&dir.join("adam_v.bin"))?;
        let state = StateFile {
            iteration: self.iteration,
            adam_step: self.adam.step,
        };
        let path = dir.join("state.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(&state).expect("state serialization"),
        )
        .map_err(|e| MetaError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, MetaError> {
        let path = dir.join("state.json");
        let text = fs::read_to_string(&path).map_err(|e| MetaError::io(&path, e))?;
        let state: StateFile = serde_json::from_str(&text).map_err(|e| MetaError::io(&path, e))?;
        let params = ParamSet::load(&dir.join("params.bin"))?;
        let m = ParamSet::load(&dir.join("adam_m.bin"))?;
        let v = ParamSet::load(&dir.join("adam_v.bin"))?;
        params.check_compatible(&m)?;
        params.check_compatible(&v)?;
        Ok(Self {
            iteration: state.iteration,
            params,
            adam: AdamState {
                step: state.adam_step,
                m: m.iter().map(|p| p.tensor.clone()).collect(),
                v: v.iter().map(|p| p.tensor.clone()).collect(),
            },
        })
    }
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<LogRow>,
}

/// Reads a training log CSV.
pub fn read_log(path: &Path) -> Result<Vec<LogRow>, MetaError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| MetaError::io(path, e))?;
    rd.deserialize()
        .map(|r| r.map_err(|e| MetaError::io(path, e)))
        .collect()
}

struct LogWriter {
    path: PathBuf,
    file: fs::File,
}

impl LogWriter {
    /// Opens the log, keeping only rows before `from_iteration`.
    fn open(path: &Path, from_iteration: usize) -> Result<Self, MetaError> {
        let kept = if from_iteration > 0 && path.exists() {
            read_log(path)?
                .into_iter()
                .filter(|r| r.iteration < from_iteration)
                .collect()
        } else {
            Vec::new()
        };
        let mut file = fs::File::create(path).map_err(|e| MetaError::io(path, e))?;
        writeln!(file, "{TRAIN_LOG_HEADER}").map_err(|e| MetaError::io(path, e))?;
        let mut w = Self {
            path: path.to_owned(),
            file,
        };
        for r in &kept {
            w.write(r)?;
        }
        Ok(w)
    }

    fn write(&mut self, r: &LogRow) -> Result<(), MetaError> {
        writeln!(
            self.file,
            "{},{:?},{:?},{:.3}",
            r.iteration, r.mean_support_loss, r.mean_query_loss, r.wall_ms
        )
        .map_err(|e| MetaError::io(&self.path, e))
    }
}

/// Meta-trains from `state` until `cfg.episodes` iterations are done.
///
/// With `out_dir`, the log goes to `train_log.csv` and the state is saved
/// under `checkpoint/` every `checkpoint_every` iterations and at the end.
/// A non-finite loss saves the last good state before returning the error.
pub fn meta_train(
    model: &HelpModel,
    source: &TaskSource,
    train_ids: &[String],
    cfg: &MetaTrainConfig,
    state: TrainState,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, MetaError> {
    cfg.validate()?;
    if train_ids.is_empty() {
        return Err(MetaError::NoTrainDevices);
    }
    let mut state = state;
    let adam = AdamConfig::with_lr(cfg.lr(model));
    let settings = cfg.inner_settings();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| MetaError::Config(e.to_string()))?;
    let mut writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| MetaError::io(dir, e))?;
            Some(LogWriter::open(
                &dir.join("train_log.csv"),
                state.iteration,
            )?)
        }
        None => None,
    };
    let checkpoint_dir = out_dir.map(|d| d.join("checkpoint"));
    let mut log = Vec::new();

    while state.iteration < cfg.episodes {
        let it = state.iteration;
        let started = Instant::now();
        let batch = source.build_meta_batch(
            train_ids,
            cfg.meta_batch,
            cfg.k_shot,
            cfg.query_size,
            rng::derive(cfg.seed, "iteration", it as u64),
        )?;
        let tensors = batch
            .iter()
            .map(|ep| EpisodeTensors::new(model, ep, cfg.variant))
            .collect::<Result<Vec<_>, _>>()?;
        let pass = settings.use_modulator.then(|| {
            let rows: Vec<&Tensor> = tensors.iter().map(|t| &t.v_h).collect();
            model.modulator_forward(&state.params, &Tensor::vstack(&rows))
        });
        let run = |(e, t): (usize, &EpisodeTensors)| -> Result<EpisodeGrad, MetaError> {
            let z = pass.as_ref().map(|p| p.z.select_rows(e, 1));
            episode_gradient_with_z(model, &state.params, t, &settings, z.as_ref())
        };
        let results: Vec<Result<EpisodeGrad, MetaError>> = if cfg.workers == 1 {
            tensors.iter().enumerate().map(run).collect()
        } else {
            pool.install(|| tensors.par_iter().enumerate().map(run).collect())
        };

        let mut sum: Vec<Option<Tensor>> = vec![None; state.params.len()];
        let (mut s_loss, mut q_loss) = (0.0, 0.0);
        let mut dz_rows = Vec::new();
        for (e, r) in results.into_iter().enumerate() {
            let mut g = r?;
            let finite = g.query_loss.is_finite()
                && g.grads.iter().flatten().chain(&g.dz).all(Tensor::is_finite);
            if !finite {
                if let Some(dir) = &checkpoint_dir {
                    state.save(dir)?;
                }
                return Err(MetaError::NonFiniteLoss {
                    iteration: it,
                    episode: e,
                    device: batch[e].device_id.clone(),
                });
            }
            s_loss += g.support_loss;
            q_loss += g.query_loss;
            dz_rows.extend(g.dz.take());
            for (acc, gi) in sum.iter_mut().zip(g.grads) {
                match (acc.as_mut(), gi) {
                    (Some(a), Some(gi)) => a.add_assign(&gi),
                    (None, Some(gi)) => *acc = Some(gi),
                    _ => {}
                }
            }
        }
        if let Some(pass) = &pass {
            let refs: Vec<&Tensor> = dz_rows.iter().collect();
            for (i, g) in model.modulator_backward(&state.params, pass, &Tensor::vstack(&refs)) {
                sum[i] = Some(g);
            }
        }
        let n = cfg.meta_batch as f64;
        let grads: Vec<Tensor> = sum
            .into_iter()
            .zip(state.params.iter())
            .map(|(g, p)| match g {
                Some(g) => g.map(|x| x / n),
                None => Tensor::zeros(p.tensor.shape()),
            })
            .collect();
        adam_step(&mut state.params, &grads, &mut state.adam, &adam)?;
        state.iteration += 1;

        let row = LogRow {
            iteration: it,
            mean_support_loss: s_loss / n,
            mean_query_loss: q_loss / n,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        log::debug!(
            "iteration {it}: support {:.5} query {:.5}",
            row.mean_support_loss,
            row.mean_query_loss
        );
        if let Some(w) = writer.as_mut() {
            w.write(&row)?;
        }
        log.push(row);
        if let Some(dir) = &checkpoint_dir {
            if cfg.checkpoint_every > 0 && state.iteration.is_multiple_of(cfg.checkpoint_every) {
                state.save(dir)?;
            }
        }
    }
    if let Some(dir) = &checkpoint_dir {
        state.save(dir)?;
    }
    Ok(TrainOutcome { state, log })
}
