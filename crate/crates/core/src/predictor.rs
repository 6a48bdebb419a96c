//! The hardware-conditioned latency predictor and its initialization modulator.
//!
//! `f(x, v_h; θ)` encodes the architecture (GCN for cells, MLP for the
//! layer-wise space) and the device embedding separately, concatenates both
//! and regresses a standardized latency through a 3-layer header. The
//! modulator `g(v_h; φ)` emits one scale per header weight and one shift per
//! header bias:
//!
//! ```text
//! θ₀ = θ_w ∘ z_w,   θ₀ = θ_b + z_b,   z = g(v_h; φ)
//! ```
//!
//! and `α` holds one inner-loop learning rate per predictor scalar.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archspace::{
    cell_op_graph_adjacency, encode_cell, encode_layerwise, Architecture, SearchSpace,
    CELL_FEATURE_DIM, CELL_GRAPH_NODES, COMPACT_LAYERWISE_DIM,
};
use crate::embedding::{EmbeddingError, HardwareEmbedding};
use crate::nnet::{self, NnetError, ParamGroup, ParamSet, Shape, Tape, Tensor, Var};
use crate::rng;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("architecture from the {found} space given to a {expected} model")]
    WrongSpace {
        expected: SearchSpace,
        found: SearchSpace,
    },
    #[error("device embedding has {found} values, model expects {expected}")]
    EmbeddingDim { expected: usize, found: usize },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub space: SearchSpace,
    /// Reference-set size.
    pub d: usize,
    pub arch_hidden: usize,
    /// GCN depth for cells; the layer-wise encoder always has two layers.
    pub gcn_layers: usize,
    pub layerwise_dim: usize,
    pub device_hidden: usize,
    pub header_hidden: usize,
    pub modulator_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::Cell,
            d: 10,
            arch_hidden: 100,
            gcn_layers: 4,
            layerwise_dim: COMPACT_LAYERWISE_DIM,
            device_hidden: 100,
            header_hidden: 200,
            modulator_hidden: 100,
        }
    }
}

impl ModelConfig {
    pub fn for_space(space: SearchSpace) -> Self {
        Self {
            space,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), PredictorError> {
        let sizes = [
            ("d", self.d),
            ("arch_hidden", self.arch_hidden),
            ("gcn_layers", self.gcn_layers),
            ("layerwise_dim", self.layerwise_dim),
            ("device_hidden", self.device_hidden),
            ("header_hidden", self.header_hidden),
            ("modulator_hidden", self.modulator_hidden),
        ];
        match sizes.iter().find(|(_, v)| *v == 0) {
            Some((k, _)) => Err(PredictorError::Config(format!("{k} must be positive"))),
            None => Ok(()),
        }
    }
}

/// Shape summary written next to checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub config: ModelConfig,
    pub header_param_count: usize,
    pub groups: BTreeMap<String, usize>,
}

/// Architecture inputs for one forward pass.
#[derive(Clone, Debug)]
pub struct ArchBatch {
    pub features: Tensor,
    pub len: usize,
}

/// Modulator activations for a stack of embedding rows, computed off the
/// tape. Its output layer is the widest matrix in the model, so training
/// evaluates it once per meta-batch instead of once per episode.
#[derive(Clone, Debug)]
pub struct ModulatorPass {
    pub v: Tensor,
    pub pre: Tensor,
    pub hidden: Tensor,
    /// One row of `z` per embedding row.
    pub z: Tensor,
}

fn add_row(mut m: Tensor, b: &Tensor) -> Tensor {
    let c = m.cols();
    for row in m.data_mut().chunks_mut(c) {
        for (x, y) in row.iter_mut().zip(b.data()) {
            *x += y;
        }
    }
    m
}

fn column_sums(m: &Tensor) -> Tensor {
    let mut out = vec![0.0; m.cols()];
    for row in m.data().chunks(m.cols().max(1)) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Tensor::row(out)
}

/// Where each predictor parameter lives in the tape.
pub type ParamVars = Vec<Var>;

#[derive(Clone, Debug)]
pub struct HelpModel {
    config: ModelConfig,
    adjacency: Arc<Tensor>,
    arch: Vec<(usize, Option<usize>)>,
    device: Vec<(usize, usize)>,
    header: Vec<(usize, usize)>,
    modulator: Vec<(usize, usize)>,
    /// Predictor parameter indices in forward order (arch, device, header).
    predictor: Vec<usize>,
    /// `alpha[i]` is the rate tensor of `predictor[i]`.
    alpha: Vec<usize>,
    header_count: usize,
}

fn cell_adjacency() -> Arc<Tensor> {
    static NORM: OnceLock<Arc<Tensor>> = OnceLock::new();
    NORM.get_or_init(|| Arc::new(nnet::normalized_adjacency(cell_op_graph_adjacency(), true)))
        .clone()
}

fn uniform_tensor(r: &mut rng::Rng, rows: usize, cols: usize, limit: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| r.random_range(-limit..limit))
        .collect();
    Tensor::new(Shape::new(rows, cols), data)
}

impl HelpModel {
    /// Builds the model description and a freshly initialized parameter set.
    ///
    /// Hidden ReLU layers use He-uniform weights, the scalar output layer
    /// Glorot-uniform, all biases start at zero. The modulator's output layer
    /// starts at zero weight with bias 1 on weight slots and 0 on bias slots,
    /// so `θ₀ = θ` exactly. Every `α` entry starts at `alpha_init`.
    pub fn init(
        config: ModelConfig,
        alpha_init: f64,
        seed: u64,
    ) -> Result<(Self, ParamSet), PredictorError> {
        config.validate()?;
        let mut r = rng::child_rng(seed, "model-init", 0);
        let mut ps = ParamSet::new();
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();

        let mut arch = Vec::new();
        match config.space {
            SearchSpace::Cell => {
                let mut fan_in = CELL_FEATURE_DIM;
                for l in 0..config.gcn_layers {
                    let w = uniform_tensor(&mut r, fan_in, config.arch_hidden, he(fan_in));
                    arch.push((
                        ps.insert(format!("arch.gcn{l}.w"), ParamGroup::ArchEncoder, w)?,
                        None,
                    ));
                    fan_in = config.arch_hidden;
                }
            }
            SearchSpace::Layerwise => {
                let mut fan_in = config.layerwise_dim;
                for l in 0..2 {
                    let w = uniform_tensor(&mut r, fan_in, config.arch_hidden, he(fan_in));
                    let wi = ps.insert(format!("arch.fc{l}.w"), ParamGroup::ArchEncoder, w)?;
                    let b = Tensor::zeros(Shape::new(1, config.arch_hidden));
                    let bi = ps.insert(format!("arch.fc{l}.b"), ParamGroup::ArchEncoder, b)?;
                    arch.push((wi, Some(bi)));
                    fan_in = config.arch_hidden;
                }
            }
        }

        let mut device = Vec::new();
        let mut fan_in = config.d;
        for l in 0..2 {
            let w = uniform_tensor(&mut r, fan_in, config.device_hidden, he(fan_in));
            let wi = ps.insert(format!("dev.fc{l}.w"), ParamGroup::DeviceEncoder, w)?;
            let b = Tensor::zeros(Shape::new(1, config.device_hidden));
            let bi = ps.insert(format!("dev.fc{l}.b"), ParamGroup::DeviceEncoder, b)?;
            device.push((wi, bi));
            fan_in = config.device_hidden;
        }

        let mut header = Vec::new();
        let dims = [
            config.arch_hidden + config.device_hidden,
            config.header_hidden,
            config.header_hidden,
            1,
        ];
        for l in 0..3 {
            let (i, o) = (dims[l], dims[l + 1]);
            let limit = if o == 1 {
                (6.0 / (i + o) as f64).sqrt()
            } else {
                he(i)
            };
            let w = uniform_tensor(&mut r, i, o, limit);
            let wi = ps.insert(format!("head.fc{l}.w"), ParamGroup::HeaderWeights, w)?;
            let bi = ps.insert(
                format!("head.fc{l}.b"),
                ParamGroup::HeaderBiases,
                Tensor::zeros(Shape::new(1, o)),
            )?;
            header.push((wi, bi));
        }
        let header_count: usize = header
            .iter()
            .map(|&(w, b)| ps.tensor(w).shape().len() + ps.tensor(b).shape().len())
            .sum();

        let mut modulator = Vec::new();
        let w0 = uniform_tensor(&mut r, config.d, config.modulator_hidden, he(config.d));
        let w0i = ps.insert("mod.fc0.w", ParamGroup::Modulator, w0)?;
        let b0i = ps.insert(
            "mod.fc0.b",
            ParamGroup::Modulator,
            Tensor::zeros(Shape::new(1, config.modulator_hidden)),
        )?;
        modulator.push((w0i, b0i));
        let w1 = Tensor::zeros(Shape::new(config.modulator_hidden, header_count));
        let mut bias = Vec::with_capacity(header_count);
        for &(w, b) in &header {
            bias.extend(std::iter::repeat_n(1.0, ps.tensor(w).shape().len()));
            bias.extend(std::iter::repeat_n(0.0, ps.tensor(b).shape().len()));
        }
        let w1i = ps.insert("mod.fc1.w", ParamGroup::Modulator, w1)?;
        let b1i = ps.insert("mod.fc1.b", ParamGroup::Modulator, Tensor::row(bias))?;
        modulator.push((w1i, b1i));

        let mut predictor: Vec<usize> = Vec::new();
        for &(w, b) in &arch {
            predictor.push(w);
            predictor.extend(b);
        }
        for &(w, b) in device.iter().chain(&header) {
            predictor.push(w);
            predictor.push(b);
        }
        let mut alpha = Vec::with_capacity(predictor.len());
        for &p in &predictor {
            let name = format!("alpha.{}", ps.params()[p].name);
            let t = Tensor::filled(ps.tensor(p).shape(), alpha_init);
            alpha.push(ps.insert(name, ParamGroup::Alpha, t)?);
        }

        let adjacency = cell_adjacency();
        Ok((
            Self {
                config,
                adjacency,
                arch,
                device,
                header,
                modulator,
                predictor,
                alpha,
                header_count,
            },
            ps,
        ))
    }

    /// Rebuilds the description for a loaded parameter set, checking names and shapes.
    pub fn for_params(config: ModelConfig, params: &ParamSet) -> Result<Self, PredictorError> {
        let (model, fresh) = Self::init(config, 0.0, 0)?;
        fresh
            .check_compatible(params)
            .map_err(|e| PredictorError::Incompatible(e.to_string()))?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn space(&self) -> SearchSpace {
        self.config.space
    }

    /// Total weight and bias scalars of the header, from the parameter shapes.
    pub fn header_param_count(&self) -> usize {
        self.header_count
    }

    /// Parameter-set indices of θ in forward order.
    pub fn predictor_indices(&self) -> &[usize] {
        &self.predictor
    }

    pub fn alpha_indices(&self) -> &[usize] {
        &self.alpha
    }

    pub fn modulator_indices(&self) -> Vec<usize> {
        self.modulator.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Positions within [`Self::predictor_indices`] that belong to the header.
    pub fn header_positions(&self) -> Vec<usize> {
        let first = self.predictor.len() - 2 * self.header.len();
        (first..self.predictor.len()).collect()
    }

    pub fn manifest(&self, params: &ParamSet) -> ModelManifest {
        let groups = [
            ParamGroup::ArchEncoder,
            ParamGroup::DeviceEncoder,
            ParamGroup::HeaderWeights,
            ParamGroup::HeaderBiases,
            ParamGroup::Modulator,
            ParamGroup::Alpha,
        ]
        .into_iter()
        .map(|g| (g.to_string(), params.group_scalar_count(g)))
        .collect();
        ModelManifest {
            config: self.config.clone(),
            header_param_count: self.header_count,
            groups,
        }
    }

    /// Checks a stored manifest against this model.
    pub fn check_manifest(&self, other: &ModelManifest) -> Result<(), PredictorError> {
        if other.config != self.config || other.header_param_count != self.header_count {
            return Err(PredictorError::Incompatible(format!(
                "checkpoint built for {:?} (header {}), model is {:?} (header {})",
                other.config, other.header_param_count, self.config, self.header_count
            )));
        }
        Ok(())
    }

    /// Stacked encodings of `archs`.
    pub fn batch(&self, archs: &[Architecture]) -> Result<ArchBatch, PredictorError> {
        if let Some(a) = archs.iter().find(|a| a.space() != self.config.space) {
            return Err(PredictorError::WrongSpace {
                expected: self.config.space,
                found: a.space(),
            });
        }
        let parts: Vec<Tensor> = archs
            .iter()
            .map(|a| match a {
                Architecture::Cell(c) => Ok(encode_cell(c).features().clone()),
                Architecture::Layerwise(l) => encode_layerwise(l, self.config.layerwise_dim),
            })
            .collect::<Result<_, crate::archspace::ArchError>>()
            .map_err(|e| PredictorError::Config(e.to_string()))?;
        let refs: Vec<&Tensor> = parts.iter().collect();
        let features = if refs.is_empty() {
            let cols = match self.config.space {
                SearchSpace::Cell => CELL_FEATURE_DIM,
                SearchSpace::Layerwise => self.config.layerwise_dim,
            };
            Tensor::zeros(Shape::new(0, cols))
        } else {
            Tensor::vstack(&refs)
        };
        Ok(ArchBatch {
            features,
            len: archs.len(),
        })
    }

    pub fn embedding_row(&self, v_h: &[f64]) -> Result<Tensor, PredictorError> {
        if v_h.len() != self.config.d {
            return Err(PredictorError::EmbeddingDim {
                expected: self.config.d,
                found: v_h.len(),
            });
        }
        Ok(Tensor::row(v_h.to_vec()))
    }

    /// Places θ (the predictor parameters) on `tape` as differentiable leaves.
    pub fn predictor_vars(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
    ) -> Result<ParamVars, PredictorError> {
        self.vars_for(tape, params, &self.predictor)
    }

    pub fn alpha_vars(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
    ) -> Result<ParamVars, PredictorError> {
        self.vars_for(tape, params, &self.alpha)
    }

    pub fn modulator_vars(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
    ) -> Result<ParamVars, PredictorError> {
        self.vars_for(tape, params, &self.modulator_indices())
    }

    fn vars_for(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        idx: &[usize],
    ) -> Result<ParamVars, PredictorError> {
        idx.iter()
            .map(|&i| Ok(tape.param(params.tensor(i).clone())?))
            .collect()
    }

    /// Architecture embeddings, `N × arch_hidden`.
    pub fn encode_archs(
        &self,
        tape: &mut Tape,
        theta: &[Var],
        x: Var,
        n: usize,
    ) -> Result<Var, PredictorError> {
        let mut h = x;
        match self.config.space {
            SearchSpace::Cell => {
                for l in 0..self.arch.len() {
                    h = nnet::gcn_layer(tape, h, &self.adjacency, theta[l])?;
                }
                let pooled = tape.group_sum(h, CELL_GRAPH_NODES)?;
                h = tape.scale(pooled, 1.0 / CELL_GRAPH_NODES as f64)?;
            }
            SearchSpace::Layerwise => {
                for l in 0..self.arch.len() {
                    let z = tape.linear(h, theta[2 * l], theta[2 * l + 1])?;
                    h = tape.relu(z)?;
                }
            }
        }
        debug_assert_eq!(tape.shape(h).rows, n);
        Ok(h)
    }

    fn arch_param_count(&self) -> usize {
        self.arch
            .iter()
            .map(|(_, b)| 1 + b.is_some() as usize)
            .sum()
    }

    /// Device embedding, `1 × device_hidden`.
    pub fn encode_device(
        &self,
        tape: &mut Tape,
        theta: &[Var],
        v_h: Var,
    ) -> Result<Var, PredictorError> {
        let base = self.arch_param_count();
        let mut h = v_h;
        for l in 0..self.device.len() {
            let z = tape.linear(h, theta[base + 2 * l], theta[base + 2 * l + 1])?;
            h = tape.relu(z)?;
        }
        Ok(h)
    }

    /// Standardized latency predictions, `N × 1`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        theta: &[Var],
        batch: &ArchBatch,
        v_h: Var,
    ) -> Result<Var, PredictorError> {
        let x = tape.constant(batch.features.clone())?;
        self.forward_var(tape, theta, x, batch.len, v_h)
    }

    /// As [`Self::forward`] with the architecture features already on the tape.
    pub fn forward_var(
        &self,
        tape: &mut Tape,
        theta: &[Var],
        x: Var,
        n: usize,
        v_h: Var,
    ) -> Result<Var, PredictorError> {
        let a = self.encode_archs(tape, theta, x, n)?;
        let dv = self.encode_device(tape, theta, v_h)?;
        let dv = tape.repeat_rows(dv, n)?;
        let mut h = tape.concat_cols(a, dv)?;
        let base = self.predictor.len() - 2 * self.header.len();
        for l in 0..self.header.len() {
            h = tape.linear(h, theta[base + 2 * l], theta[base + 2 * l + 1])?;
            if l + 1 < self.header.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// `z = g(v_h; φ)`, a `1 × header_param_count` row.
    pub fn modulator_output(
        &self,
        tape: &mut Tape,
        phi: &[Var],
        v_h: Var,
    ) -> Result<Var, PredictorError> {
        let h = tape.linear(v_h, phi[0], phi[1])?;
        let h = tape.relu(h)?;
        Ok(tape.linear(h, phi[2], phi[3])?)
    }

    /// `g(v; φ)` for every row of `v` without recording.
    pub fn modulator_forward(&self, params: &ParamSet, v: &Tensor) -> ModulatorPass {
        let [(w0, b0), (w1, b1)] = [self.modulator[0], self.modulator[1]];
        let pre = add_row(
            nnet::gemm(v, false, params.tensor(w0), false),
            params.tensor(b0),
        );
        let hidden = pre.map(|x| x.max(0.0));
        let z = add_row(
            nnet::gemm(&hidden, false, params.tensor(w1), false),
            params.tensor(b1),
        );
        ModulatorPass {
            v: v.clone(),
            pre,
            hidden,
            z,
        }
    }

    /// Gradients of the modulator parameters given `dz` (one row per row of
    /// the pass), summed over rows, as `(parameter index, gradient)` pairs.
    pub fn modulator_backward(
        &self,
        params: &ParamSet,
        pass: &ModulatorPass,
        dz: &Tensor,
    ) -> Vec<(usize, Tensor)> {
        let [(w0, b0), (w1, b1)] = [self.modulator[0], self.modulator[1]];
        let dw1 = nnet::gemm(&pass.hidden, true, dz, false);
        let db1 = column_sums(dz);
        let dh = nnet::gemm(dz, false, params.tensor(w1), true);
        let dpre = dh.zip_map(&pass.pre, |g, p| if p > 0.0 { g } else { 0.0 });
        let dw0 = nnet::gemm(&pass.v, true, &dpre, false);
        let db0 = column_sums(&dpre);
        vec![(w0, dw0), (b0, db0), (w1, dw1), (b1, db1)]
    }

    /// θ₀: header weights scaled by `z_w`, header biases shifted by `z_b`,
    /// encoders passed through.
    pub fn modulate(
        &self,
        tape: &mut Tape,
        theta: &[Var],
        phi: &[Var],
        v_h: Var,
    ) -> Result<ParamVars, PredictorError> {
        let z = self.modulator_output(tape, phi, v_h)?;
        self.apply_modulation(tape, theta, z)
    }

    /// Applies a given `z` row to the header of θ.
    pub fn apply_modulation(
        &self,
        tape: &mut Tape,
        theta: &[Var],
        z: Var,
    ) -> Result<ParamVars, PredictorError> {
        let mut out = theta.to_vec();
        let mut offset = 0;
        for pos in self.header_positions() {
            let shape = tape.shape(theta[pos]);
            let zi = tape.slice_cols(z, offset, shape.len())?;
            let zi = tape.reshape(zi, shape)?;
            offset += shape.len();
            // header positions alternate weight, bias
            let is_weight = (pos - self.header_positions()[0]).is_multiple_of(2);
            out[pos] = if is_weight {
                tape.mul(theta[pos], zi)?
            } else {
                tape.add(theta[pos], zi)?
            };
        }
        Ok(out)
    }

    /// Standardized predictions for `archs` under plain θ, without recording.
    pub fn predict_standardized(
        &self,
        params: &ParamSet,
        archs: &[Architecture],
        v_h: &[f64],
    ) -> Result<Vec<f64>, PredictorError> {
        let theta: Vec<Tensor> = self
            .predictor
            .iter()
            .map(|&i| params.tensor(i).clone())
            .collect();
        self.predict_with(&theta, archs, v_h)
    }

    /// Standardized predictions under explicit predictor tensors (e.g. adapted θ).
    pub fn predict_with(
        &self,
        theta: &[Tensor],
        archs: &[Architecture],
        v_h: &[f64],
    ) -> Result<Vec<f64>, PredictorError> {
        let mut out = Vec::with_capacity(archs.len());
        let vrow = self.embedding_row(v_h)?;
        for chunk in archs.chunks(1024) {
            let mut tape = Tape::new();
            let vars = theta
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            let batch = self.batch(chunk)?;
            let v = tape.constant(vrow.clone())?;
            let y = self.forward(&mut tape, &vars, &batch, v)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    /// Latency in milliseconds, de-standardized with the embedding's anchors.
    pub fn predict_latency_ms(
        &self,
        params: &ParamSet,
        arch: &Architecture,
        emb: &HardwareEmbedding,
    ) -> Result<f64, PredictorError> {
        let p = self.predict_standardized(params, std::slice::from_ref(arch), &emb.values)?[0];
        Ok(emb.destandardize(p)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(space: SearchSpace) -> ModelConfig {
        ModelConfig {
            space,
            arch_hidden: 6,
            device_hidden: 5,
            header_hidden: 7,
            modulator_hidden: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn header_count_matches_shapes() {
        for (cfg, want) in [
            (
                ModelConfig::default(),
                200 * 200 + 200 + 200 * 200 + 200 + 200 + 1,
            ),
            (small(SearchSpace::Cell), 11 * 7 + 7 + 7 * 7 + 7 + 7 + 1),
        ] {
            let (m, ps) = HelpModel::init(cfg, 1e-2, 0).unwrap();
            assert_eq!(m.header_param_count(), want);
            let z_len = ps.get("mod.fc1.b").unwrap().shape().cols;
            assert_eq!(z_len, want);
            let hw = ps.group_scalar_count(ParamGroup::HeaderWeights);
            let hb = ps.group_scalar_count(ParamGroup::HeaderBiases);
            assert_eq!(hw + hb, want);
        }
    }

    #[test]
    fn alpha_covers_every_predictor_scalar() {
        let (m, ps) = HelpModel::init(small(SearchSpace::Layerwise), 1e-2, 0).unwrap();
        let theta: usize = m
            .predictor_indices()
            .iter()
            .map(|&i| ps.tensor(i).shape().len())
            .sum();
        assert_eq!(ps.group_scalar_count(ParamGroup::Alpha), theta);
        for &a in m.alpha_indices() {
            assert!(ps.tensor(a).data().iter().all(|&x| x == 1e-2));
        }
    }

    #[test]
    fn manifest_rejects_other_space() {
        let (m, ps) = HelpModel::init(small(SearchSpace::Cell), 1e-2, 0).unwrap();
        let (lw, _) = HelpModel::init(small(SearchSpace::Layerwise), 1e-2, 0).unwrap();
        assert!(m.check_manifest(&m.manifest(&ps)).is_ok());
        assert!(lw.check_manifest(&m.manifest(&ps)).is_err());
        assert!(HelpModel::for_params(small(SearchSpace::Layerwise), &ps).is_err());
    }
}
