use super::params::ParamSet;
use super::tensor::Tensor;
use super::NnetError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.tensor.shape()))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. `grads` is indexed like `params`.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NnetError> {
    assert_eq!(grads.len(), params.len(), "one gradient per parameter");
    for (p, g) in params.iter().zip(grads) {
        if g.shape() != p.tensor.shape() {
            return Err(NnetError::ShapeMismatch {
                op: "adam_step",
                left: p.tensor.shape(),
                right: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(NnetError::NonFiniteGradient {
                name: p.name.clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let w = params.tensor_mut(i).data_mut();
        for j in 0..w.len() {
            let gj = g.data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            w[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{ParamGroup, Shape};

    fn single(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", ParamGroup::HeaderWeights, Tensor::scalar(w))
            .unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params_and_moments_untouched() {
        let mut p = single(0.7);
        let mut st = AdamState::new(&p);
        adam_step(
            &mut p,
            &[Tensor::zeros(Shape::new(1, 1))],
            &mut st,
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.7);
        assert_eq!(st.m[0].item(), 0.0);
        assert_eq!(st.v[0].item(), 0.0);
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut p = single(1.0);
        let mut st = AdamState::new(&p);
        let g = 2.0 * p.get("w").unwrap().item();
        adam_step(
            &mut p,
            &[Tensor::scalar(g)],
            &mut st,
            &AdamConfig::with_lr(0.1),
        )
        .unwrap();
        assert!(p.get("w").unwrap().item() < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w) = (w - 0)^2, minimum at 0
        let mut p = single(1.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::with_lr(0.01);
        for _ in 0..1000 {
            let g = 2.0 * p.get("w").unwrap().item();
            adam_step(&mut p, &[Tensor::scalar(g)], &mut st, &cfg).unwrap();
        }
        assert!(p.get("w").unwrap().item().abs() < 1e-3);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = single(1.0);
        let mut st = AdamState::new(&p);
        let err = adam_step(
            &mut p,
            &[Tensor::scalar(f64::NAN)],
            &mut st,
            &AdamConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(p.get("w").unwrap().item(), 1.0);
    }
}
