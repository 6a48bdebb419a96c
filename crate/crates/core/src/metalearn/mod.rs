//! Episodic meta-training, few-shot adaptation, evaluation and baselines.
//!
//! Each episode starts from the modulated initialization and takes `T`
//! Meta-SGD steps on the support loss,
//!
//! ```text
//! θ_{t+1} = θ_t − α ⊙ ∇_θ MSE(f(X_s, v_h; θ_t), Y_s)
//! ```
//!
//! and the query loss at the adapted parameters is minimized over
//! `(θ, φ, α)` with Adam, averaged over the meta-batch.

mod ablation;
mod adapt;
mod baselines;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archspace::{ArchError, SearchSpace};
use crate::devicesim::DeviceError;
use crate::embedding::{EmbeddingError, Episode};
use crate::nnet::{NnetError, ParamSet, Shape, Tape, Tensor, Var};
use crate::predictor::{ArchBatch, HelpModel, PredictorError};
use crate::stats::StatsError;

pub use ablation::{ablation_suite, AblationConfig, AblationReport, AblationRow};
pub use adapt::{
    adapt, evaluate, evaluate_device, measure_all, split_test_archs, AdaptedPredictor, DeviceEval,
    DeviceSummary, EvalConfig, EvalReport, FlopsPredictor, LatencyPredictor, OraclePredictor,
    BASELINE_NAMES,
};
pub use baselines::{
    baseline_flops, baseline_layerwise, baseline_scratch, LayerwisePredictor, ScratchConfig,
    ScratchPredictor,
};
pub use train::{
    meta_train, read_log, LogRow, MetaTrainConfig, TrainOutcome, TrainState, TRAIN_LOG_HEADER,
};

#[derive(Debug, Error)]
pub enum MetaError {
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("non-finite loss at iteration {iteration}, episode {episode} (device `{device}`)")]
    NonFiniteLoss {
        iteration: usize,
        episode: usize,
        device: String,
    },
    #[error("support set is empty")]
    EmptySupport,
    #[error("no meta-train devices")]
    NoTrainDevices,
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl MetaError {
    pub(crate) fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Which predictor parameters the inner loop updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerScope {
    Header,
    #[default]
    All,
}

impl FromStr for InnerScope {
    type Err = MetaError;
    fn from_str(s: &str) -> Result<Self, MetaError> {
        match s {
            "header" => Ok(Self::Header),
            "all" => Ok(Self::All),
            _ => Err(MetaError::Config(format!(
                "unknown inner_scope `{s}` (header|all)"
            ))),
        }
    }
}

/// The four rungs of the ablation tower; `Full` is the complete model.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// No device conditioning (zero `v_h`) and no adaptation.
    Amortization,
    /// `v_h` conditioning, no inner steps, no modulator.
    HwCondition,
    /// Conditioning plus `T` inner steps, no modulator.
    FewShot,
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Amortization,
        Variant::HwCondition,
        Variant::FewShot,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Amortization => "amortization",
            Self::HwCondition => "hw_condition",
            Self::FewShot => "few_shot",
            Self::Full => "full",
        }
    }

    pub fn uses_embedding(self) -> bool {
        self != Self::Amortization
    }

    pub fn uses_modulator(self) -> bool {
        self == Self::Full
    }

    /// Inner steps actually taken when the configuration asks for `t`.
    pub fn steps(self, t: usize) -> usize {
        match self {
            Self::Amortization | Self::HwCondition => 0,
            Self::FewShot | Self::Full => t,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = MetaError;
    fn from_str(s: &str) -> Result<Self, MetaError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| MetaError::Config(format!("unknown variant `{s}`")))
    }
}

pub fn default_meta_lr(space: SearchSpace) -> f64 {
    match space {
        SearchSpace::Cell => 1e-4,
        SearchSpace::Layerwise => 1e-3,
    }
}

/// How the inner loop runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerSettings {
    pub steps: usize,
    pub use_modulator: bool,
    pub scope: InnerScope,
    /// Record second-order terms so the meta-gradient flows through each step.
    pub create_graph: bool,
}

impl InnerSettings {
    pub fn for_variant(
        variant: Variant,
        steps: usize,
        scope: InnerScope,
        create_graph: bool,
    ) -> Self {
        Self {
            steps: variant.steps(steps),
            use_modulator: variant.uses_modulator(),
            scope,
            create_graph,
        }
    }
}

/// An episode turned into tensors: standardized targets and the `v_h` row the
/// variant sees.
#[derive(Clone, Debug)]
pub struct EpisodeTensors {
    pub support: ArchBatch,
    pub support_y: Tensor,
    pub query: ArchBatch,
    pub query_y: Tensor,
    pub v_h: Tensor,
}

fn column(values: Vec<f64>) -> Tensor {
    let n = values.len();
    Tensor::new(Shape::new(n, 1), values)
}

impl EpisodeTensors {
    pub fn new(model: &HelpModel, ep: &Episode, variant: Variant) -> Result<Self, MetaError> {
        let standardize = |ys: &[f64]| -> Result<Tensor, MetaError> {
            Ok(column(
                ys.iter()
                    .map(|&y| ep.v_h.standardize(y))
                    .collect::<Result<_, _>>()?,
            ))
        };
        Ok(Self {
            support: model.batch(&ep.support_archs)?,
            support_y: standardize(&ep.support_ms)?,
            query: model.batch(&ep.query_archs)?,
            query_y: standardize(&ep.query_ms)?,
            v_h: conditioning_row(model, &ep.v_h.values, variant)?,
        })
    }
}

/// The embedding row fed to the model: zeros for the amortized variant.
pub fn conditioning_row(
    model: &HelpModel,
    v_h: &[f64],
    variant: Variant,
) -> Result<Tensor, MetaError> {
    let row = model.embedding_row(v_h)?;
    Ok(if variant.uses_embedding() {
        row
    } else {
        Tensor::zeros(row.shape())
    })
}

/// Adapted predictor parameters on the tape plus the support losses seen
/// before each step (or at θ₀ when there are no steps).
pub struct InnerResult {
    pub theta: Vec<Var>,
    pub support_loss: f64,
}

/// Runs the inner loop on `tape` from θ, modulated by the `z` row when given.
///
/// `theta` and `alpha` are tape handles in the model's predictor order.
#[allow(clippy::too_many_arguments)]
pub fn inner_adapt(
    model: &HelpModel,
    tape: &mut Tape,
    theta: &[Var],
    z: Option<Var>,
    alpha: &[Var],
    support_x: Var,
    support_n: usize,
    support_y: Var,
    v_h: Var,
    settings: &InnerSettings,
) -> Result<InnerResult, MetaError> {
    if support_n == 0 && settings.steps > 0 {
        return Err(MetaError::EmptySupport);
    }
    let mut current = match z {
        Some(z) => model.apply_modulation(tape, theta, z)?,
        None => theta.to_vec(),
    };
    let scope: Vec<usize> = match settings.scope {
        InnerScope::All => (0..current.len()).collect(),
        InnerScope::Header => model.header_positions(),
    };
    let mut support_loss = f64::NAN;
    if settings.steps == 0 && support_n > 0 {
        let mark = tape.len();
        let pred = model.forward_var(tape, &current, support_x, support_n, v_h)?;
        let loss = tape.mse(pred, support_y)?;
        support_loss = tape.value(loss).item();
        tape.truncate(mark);
    }
    for step in 0..settings.steps {
        let pred = model.forward_var(tape, &current, support_x, support_n, v_h)?;
        let loss = tape.mse(pred, support_y)?;
        if step == 0 {
            support_loss = tape.value(loss).item();
        }
        let wrt: Vec<Var> = scope.iter().map(|&i| current[i]).collect();
        let grads = tape.backward(loss, &wrt, settings.create_graph)?;
        for (&i, g) in scope.iter().zip(grads) {
            let step_var = tape.mul(alpha[i], g)?;
            current[i] = tape.sub(current[i], step_var)?;
        }
    }
    Ok(InnerResult {
        theta: current,
        support_loss,
    })
}

/// Meta-gradient of one episode's query loss.
///
/// `grads` is indexed like the parameter set and covers θ and α; the
/// modulator's share arrives as `dz`, the gradient with respect to its
/// output row, to be pushed through [`HelpModel::modulator_backward`].
pub struct EpisodeGrad {
    pub grads: Vec<Option<Tensor>>,
    pub dz: Option<Tensor>,
    pub support_loss: f64,
    pub query_loss: f64,
}

/// Query loss at the adapted parameters and its gradient, given the
/// episode's modulator output `z` (required when the settings use it).
pub fn episode_gradient_with_z(
    model: &HelpModel,
    params: &ParamSet,
    ep: &EpisodeTensors,
    settings: &InnerSettings,
    z: Option<&Tensor>,
) -> Result<EpisodeGrad, MetaError> {
    let mut tape = Tape::new();
    let theta = model.predictor_vars(&mut tape, params)?;
    let alpha = if settings.steps > 0 {
        model.alpha_vars(&mut tape, params)?
    } else {
        Vec::new()
    };
    let z = match (settings.use_modulator, z) {
        (true, Some(z)) => Some(tape.param(z.clone())?),
        (true, None) => return Err(MetaError::Config("modulator output missing".into())),
        (false, _) => None,
    };
    let v_h = tape.constant(ep.v_h.clone())?;
    let sx = tape.constant(ep.support.features.clone())?;
    let sy = tape.constant(ep.support_y.clone())?;
    let inner = inner_adapt(
        model,
        &mut tape,
        &theta,
        z,
        &alpha,
        sx,
        ep.support.len,
        sy,
        v_h,
        settings,
    )?;
    let qx = tape.constant(ep.query.features.clone())?;
    let qy = tape.constant(ep.query_y.clone())?;
    let pred = model.forward_var(&mut tape, &inner.theta, qx, ep.query.len, v_h)?;
    let loss = tape.mse(pred, qy)?;
    let query_loss = tape.value(loss).item();

    let mut wrt = theta.clone();
    wrt.extend(&alpha);
    wrt.extend(z);
    let mut gs = tape.gradients(loss, &wrt)?;
    let dz = z.map(|_| gs.pop().expect("z gradient"));
    let mut grads: Vec<Option<Tensor>> = vec![None; params.len()];
    let idx = model.predictor_indices().iter().chain(if alpha.is_empty() {
        &[][..]
    } else {
        model.alpha_indices()
    });
    for (&i, g) in idx.zip(gs) {
        grads[i] = Some(g);
    }
    Ok(EpisodeGrad {
        grads,
        dz,
        support_loss: inner.support_loss,
        query_loss,
    })
}

/// As [`episode_gradient_with_z`], running the modulator itself and folding
/// its gradients into `grads`.
pub fn episode_gradient(
    model: &HelpModel,
    params: &ParamSet,
    ep: &EpisodeTensors,
    settings: &InnerSettings,
) -> Result<EpisodeGrad, MetaError> {
    if !settings.use_modulator {
        return episode_gradient_with_z(model, params, ep, settings, None);
    }
    let pass = model.modulator_forward(params, &ep.v_h);
    let mut g = episode_gradient_with_z(model, params, ep, settings, Some(&pass.z))?;
    let dz = g.dz.take().expect("modulator in use");
    for (i, t) in model.modulator_backward(params, &pass, &dz) {
        g.grads[i] = Some(t);
    }
    Ok(g)
}

/// Predictor tensors after the inner loop, computed without meta-gradient
/// recording.
pub fn adapted_theta(
    model: &HelpModel,
    params: &ParamSet,
    support: &ArchBatch,
    support_y: &Tensor,
    v_h: &Tensor,
    settings: &InnerSettings,
) -> Result<(Vec<Tensor>, f64), MetaError> {
    let settings = InnerSettings {
        create_graph: false,
        ..*settings
    };
    let mut tape = Tape::new();
    let theta = model.predictor_vars(&mut tape, params)?;
    let alpha = model
        .alpha_indices()
        .iter()
        .map(|&i| tape.constant(params.tensor(i).clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let z = if settings.use_modulator {
        Some(tape.constant(model.modulator_forward(params, v_h).z)?)
    } else {
        None
    };
    let v = tape.constant(v_h.clone())?;
    let sx = tape.constant(support.features.clone())?;
    let sy = tape.constant(support_y.clone())?;
    let inner = inner_adapt(
        model,
        &mut tape,
        &theta,
        z,
        &alpha,
        sx,
        support.len,
        sy,
        v,
        &settings,
    )?;
    let out = inner.theta.iter().map(|&v| tape.value(v).clone()).collect();
    Ok((out, inner.support_loss))
}
