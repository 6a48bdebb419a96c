use serde::{Deserialize, Serialize};

use crate::archspace::ReferenceSet;
use crate::devicesim::DeviceProfile;
use crate::embedding::TaskSource;
use crate::predictor::{HelpModel, ModelConfig};
use crate::{rng, stats};

use super::adapt::{evaluate_device, EvalConfig};
use super::train::{meta_train, MetaTrainConfig, TrainState};
use super::{MetaError, Variant};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: MetaTrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    /// Mean over devices of each evaluation seed.
    pub seed_means: Vec<f64>,
    pub mean_rho: f64,
    pub std_rho: f64,
    pub final_query_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn get(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Whether mean ρ is non-decreasing along the tower.
    pub fn is_ordered(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].mean_rho <= w[1].mean_rho)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,mean_rho,std_rho,final_query_loss\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:?},{:?},{:?}\n",
                r.variant, r.mean_rho, r.std_rho, r.final_query_loss
            ));
        }
        s
    }
}

/// Meta-trains each variant from the same initialization and episode
/// stream, then adapts and scores it on `test_devices` under every
/// evaluation seed.
pub fn ablation_suite(
    source: &TaskSource,
    train_ids: &[String],
    test_devices: &[&DeviceProfile],
    refset: &ReferenceSet,
    cfg: &AblationConfig,
    variants: &[Variant],
) -> Result<AblationReport, MetaError> {
    let mut rows = Vec::new();
    for &variant in variants {
        let (model, params) = HelpModel::init(
            cfg.model.clone(),
            cfg.train.alpha_init,
            rng::derive(cfg.train.seed, "init", 0),
        )?;
        let tcfg = MetaTrainConfig {
            variant,
            ..cfg.train.clone()
        };
        let out = meta_train(
            &model,
            source,
            train_ids,
            &tcfg,
            TrainState::new(params),
            None,
        )?;
        let ecfg = EvalConfig {
            variant,
            inner_steps: cfg.train.inner_steps,
            inner_scope: cfg.train.inner_scope,
            ..cfg.eval.clone()
        };
        let mut seed_means = Vec::new();
        for &seed in &ecfg.seeds {
            let mut rhos = Vec::new();
            for d in test_devices {
                rhos.push(evaluate_device(&model, &out.state.params, d, refset, &ecfg, seed)?.rho);
            }
            seed_means.push(stats::mean(&rhos));
        }
        let tail = out.log.len().saturating_sub(100);
        let final_q: Vec<f64> = out.log[tail..].iter().map(|r| r.mean_query_loss).collect();
        log::info!("ablation {variant}: per-seed ρ {seed_means:?}");
        rows.push(AblationRow {
            variant,
            mean_rho: stats::mean(&seed_means),
            std_rho: stats::std_dev(&seed_means),
            seed_means,
            final_query_loss: stats::mean(&final_q),
        });
    }
    Ok(AblationReport { rows })
}
