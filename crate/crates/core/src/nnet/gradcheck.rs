//! Finite-difference checks for the tape.
//!
//! Each [`OpCase`] wraps one differentiable operation. [`check_op`] compares
//! its reverse-mode gradient, and the gradient of that gradient, against
//! central differences of the scalar objective `Σ o ⊙ (W + o)` where `o` is
//! the op's output and `W` a fixed random weight.

use std::sync::Arc;

use rand::Rng;

use super::{gcn_layer, normalized_adjacency, NnetError, Shape, Tape, Tensor, Var};
use crate::rng;

type Build = fn(&mut Tape, &[Var]) -> Result<Var, NnetError>;

#[derive(Clone)]
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Shape>,
    pub build: Build,
}

const fn s(rows: usize, cols: usize) -> Shape {
    Shape::new(rows, cols)
}

fn small_graph() -> Arc<Tensor> {
    let adj = Tensor::from_rows(&[
        vec![0.0, 1.0, 1.0],
        vec![0.0, 0.0, 1.0],
        vec![0.0, 0.0, 0.0],
    ]);
    Arc::new(normalized_adjacency(&adj, true))
}

/// Every differentiable operation the predictor uses.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            inputs: vec![s(3, 4), s(4, 2)],
            build: |t, v| t.matmul(v[0], v[1]),
        },
        OpCase {
            name: "matmul_ta",
            inputs: vec![s(4, 3), s(4, 2)],
            build: |t, v| t.matmul_t(v[0], true, v[1], false),
        },
        OpCase {
            name: "matmul_tb",
            inputs: vec![s(3, 4), s(2, 4)],
            build: |t, v| t.matmul_t(v[0], false, v[1], true),
        },
        OpCase {
            name: "matmul_tab",
            inputs: vec![s(4, 3), s(2, 4)],
            build: |t, v| t.matmul_t(v[0], true, v[1], true),
        },
        OpCase {
            name: "add",
            inputs: vec![s(3, 4), s(3, 4)],
            build: |t, v| t.add(v[0], v[1]),
        },
        OpCase {
            name: "sub",
            inputs: vec![s(3, 4), s(3, 4)],
            build: |t, v| t.sub(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            inputs: vec![s(3, 4), s(3, 4)],
            build: |t, v| t.mul(v[0], v[1]),
        },
        OpCase {
            name: "scale",
            inputs: vec![s(3, 4)],
            build: |t, v| t.scale(v[0], -1.7),
        },
        OpCase {
            name: "relu",
            inputs: vec![s(3, 4)],
            build: |t, v| t.relu(v[0]),
        },
        OpCase {
            name: "repeat_rows",
            inputs: vec![s(1, 4)],
            build: |t, v| t.repeat_rows(v[0], 3),
        },
        OpCase {
            name: "sum_rows",
            inputs: vec![s(3, 4)],
            build: |t, v| t.sum_rows(v[0]),
        },
        OpCase {
            name: "concat_cols",
            inputs: vec![s(3, 2), s(3, 3)],
            build: |t, v| t.concat_cols(v[0], v[1]),
        },
        OpCase {
            name: "slice_cols",
            inputs: vec![s(3, 5)],
            build: |t, v| t.slice_cols(v[0], 1, 3),
        },
        OpCase {
            name: "pad_cols",
            inputs: vec![s(3, 2)],
            build: |t, v| t.pad_cols(v[0], 1, 5),
        },
        OpCase {
            name: "reshape",
            inputs: vec![s(3, 4)],
            build: |t, v| t.reshape(v[0], s(2, 6)),
        },
        OpCase {
            name: "graph_aggregate",
            inputs: vec![s(6, 2)],
            build: |t, v| t.graph_aggregate(v[0], &small_graph()),
        },
        OpCase {
            name: "group_sum",
            inputs: vec![s(6, 2)],
            build: |t, v| t.group_sum(v[0], 3),
        },
        OpCase {
            name: "group_expand",
            inputs: vec![s(2, 3)],
            build: |t, v| t.group_expand(v[0], 3),
        },
        OpCase {
            name: "sum_all",
            inputs: vec![s(3, 4)],
            build: |t, v| t.sum_all(v[0]),
        },
        OpCase {
            name: "fill",
            inputs: vec![s(1, 1)],
            build: |t, v| t.fill(v[0], s(2, 3)),
        },
        OpCase {
            name: "linear",
            inputs: vec![s(3, 4), s(4, 2), s(1, 2)],
            build: |t, v| t.linear(v[0], v[1], v[2]),
        },
        OpCase {
            name: "mse",
            inputs: vec![s(3, 2), s(3, 2)],
            build: |t, v| t.mse(v[0], v[1]),
        },
        OpCase {
            name: "gcn_layer",
            inputs: vec![s(6, 3), s(3, 2)],
            build: |t, v| gcn_layer(t, v[0], &small_graph(), v[1]),
        },
    ]
}

/// Values in `±[0.1, 1]`, away from the ReLU kink.
pub fn random_tensor(r: &mut rng::Rng, shape: Shape) -> Tensor {
    let data = (0..shape.len())
        .map(|_| {
            let m = r.random_range(0.1..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data)
}

/// Central differences of `f` with respect to every input scalar.
pub fn central_difference(
    f: &dyn Fn(&[Tensor]) -> Result<f64, NnetError>,
    inputs: &[Tensor],
    h: f64,
) -> Result<Vec<Tensor>, NnetError> {
    let mut x = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..x.len() {
        let mut g = Tensor::zeros(x[i].shape());
        for j in 0..x[i].data().len() {
            let orig = x[i].data()[j];
            x[i].data_mut()[j] = orig + h;
            let up = f(&x)?;
            x[i].data_mut()[j] = orig - h;
            let down = f(&x)?;
            x[i].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-8)` over all tensors jointly.
pub fn relative_error(a: &[Tensor], b: &[Tensor]) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.data().iter().zip(y.data()) {
            diff += (p - q) * (p - q);
            na += p * p;
            nb += q * q;
        }
    }
    diff.sqrt() / (na.sqrt() + nb.sqrt()).max(1e-8)
}

#[derive(Clone, Debug)]
pub struct OpReport {
    pub name: &'static str,
    /// Relative error of the gradient.
    pub first_order: f64,
    /// Relative error of the gradient of `Σ ∇L ⊙ U` (double backward).
    pub second_order: f64,
}

struct Objective {
    w: Tensor,
    u: Vec<Tensor>,
}

impl Objective {
    fn loss(&self, tape: &mut Tape, case: &OpCase, vars: &[Var]) -> Result<Var, NnetError> {
        let o = (case.build)(tape, vars)?;
        let w = tape.constant(self.w.clone())?;
        let wo = tape.add(w, o)?;
        let prod = tape.mul(o, wo)?;
        tape.sum_all(prod)
    }

    fn value(&self, case: &OpCase, x: &[Tensor]) -> Result<f64, NnetError> {
        let mut tape = Tape::new();
        let vars = x
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let l = self.loss(&mut tape, case, &vars)?;
        Ok(tape.value(l).item())
    }

    /// `Σ_i ⟨∇_i L, U_i⟩`, and its gradient when `grad` is set.
    fn directional(
        &self,
        case: &OpCase,
        x: &[Tensor],
        grad: bool,
    ) -> Result<(f64, Vec<Tensor>), NnetError> {
        let mut tape = Tape::new();
        let vars = x
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let l = self.loss(&mut tape, case, &vars)?;
        let gs = tape.backward(l, &vars, true)?;
        let mut total: Option<Var> = None;
        for (g, u) in gs.iter().zip(&self.u) {
            let u = tape.constant(u.clone())?;
            let p = tape.mul(*g, u)?;
            let p = tape.sum_all(p)?;
            total = Some(match total {
                Some(t) => tape.add(t, p)?,
                None => p,
            });
        }
        let total = total.expect("at least one input");
        let value = tape.value(total).item();
        let grads = if grad {
            tape.gradients(total, &vars)?
        } else {
            Vec::new()
        };
        Ok((value, grads))
    }
}

/// Checks one op at random inputs drawn from `seed`.
pub fn check_op(case: &OpCase, seed: u64) -> Result<OpReport, NnetError> {
    let mut r = rng::child_rng(seed, case.name, 0);
    let x: Vec<Tensor> = case
        .inputs
        .iter()
        .map(|&sh| random_tensor(&mut r, sh))
        .collect();
    let out_shape = {
        let mut tape = Tape::new();
        let vars = x
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let o = (case.build)(&mut tape, &vars)?;
        tape.shape(o)
    };
    let obj = Objective {
        w: random_tensor(&mut r, out_shape),
        u: case
            .inputs
            .iter()
            .map(|&sh| random_tensor(&mut r, sh))
            .collect(),
    };
    let h = 1e-6;

    let analytic = {
        let mut tape = Tape::new();
        let vars = x
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let l = obj.loss(&mut tape, case, &vars)?;
        tape.gradients(l, &vars)?
    };
    let numeric = central_difference(&|x| obj.value(case, x), &x, h)?;
    let first_order = relative_error(&analytic, &numeric);

    let (_, analytic2) = obj.directional(case, &x, true)?;
    let numeric2 = central_difference(&|x| Ok(obj.directional(case, x, false)?.0), &x, h)?;
    let second_order = relative_error(&analytic2, &numeric2);

    Ok(OpReport {
        name: case.name,
        first_order,
        second_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_of_equal_tensors_is_zero() {
        let a = vec![Tensor::row(vec![1.0, -2.0])];
        assert_eq!(relative_error(&a, &a), 0.0);
        let zero = vec![Tensor::zeros(s(1, 2))];
        assert_eq!(relative_error(&zero, &zero), 0.0);
    }

    #[test]
    fn central_difference_of_a_quadratic() {
        let f = |x: &[Tensor]| Ok(x[0].data().iter().map(|v| v * v).sum::<f64>());
        let g = central_difference(&f, &[Tensor::row(vec![1.5, -0.5])], 1e-5).unwrap();
        assert!(g[0].max_abs_diff(&Tensor::row(vec![3.0, -1.0])) < 1e-8);
    }
}
