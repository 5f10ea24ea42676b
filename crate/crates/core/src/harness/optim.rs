//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{GradientSet, GroundingModel, TENSOR_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps.is_finite()
            && self.eps > 0.0
            && self.weight_decay.is_finite()
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer hyperparameters {self:?}")))
        }
    }
}

/// First and second moments, laid out like [`GroundingModel::tensors`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(model: &GroundingModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn check_shapes(&self, model: &GroundingModel) -> Result<()> {
        let tensors = model.tensors();
        if self.m.len() != tensors.len() || self.v.len() != tensors.len() {
            return Err(Error::invalid("optimizer state has the wrong number of tensors"));
        }
        for (i, t) in tensors.iter().enumerate() {
            if self.m[i].len() != t.len() || self.v[i].len() != t.len() {
                return Err(Error::invalid(format!(
                    "optimizer moments for {} do not match the model shape",
                    TENSOR_NAMES[i]
                )));
            }
        }
        Ok(())
    }
}

/// One AdamW update of every model tensor.
pub fn adamw_step(
    model: &mut GroundingModel,
    grads: &GradientSet,
    state: &mut OptimizerState,
    hyper: &AdamWHyper,
) -> Result<()> {
    state.check_shapes(model)?;
    if !grads.is_finite() {
        return Err(Error::numeric("adamw_step", "non-finite gradient"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let grads = grads.tensors();
    for (i, theta) in model.tensors_mut().into_iter().enumerate() {
        let (m, v, g) = (&mut state.m[i], &mut state.v[i], grads[i]);
        if g.len() != theta.len() {
            return Err(Error::invalid(format!("gradient shape mismatch for {}", TENSOR_NAMES[i])));
        }
        for j in 0..theta.len() {
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            theta[j] -= hyper.lr * (m_hat / (v_hat.sqrt() + hyper.eps) + hyper.weight_decay * theta[j]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::ModelDims;

    fn model() -> GroundingModel {
        GroundingModel::init(ModelDims::default(), 4).unwrap()
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut m = model();
        let before = m.clone();
        let mut st = OptimizerState::new(&m);
        let hyper = AdamWHyper {
            weight_decay: 0.0,
            ..AdamWHyper::default()
        };
        let g = m.zero_grads();
        adamw_step(&mut m, &g, &mut st, &hyper).unwrap();
        assert_eq!(m, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_grad_decay_only() {
        let mut m = model();
        let before = m.clone();
        let mut st = OptimizerState::new(&m);
        let hyper = AdamWHyper {
            lr: 0.01,
            weight_decay: 0.1,
            ..AdamWHyper::default()
        };
        let g = m.zero_grads();
        adamw_step(&mut m, &g, &mut st, &hyper).unwrap();
        for (a, b) in m.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y * (1.0 - 0.001)).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut m = model();
        m.head_bias = 0.0;
        let mut g = m.zero_grads();
        g.head_bias = 1.0;
        let mut st = OptimizerState::new(&m);
        let hyper = AdamWHyper {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamWHyper::default()
        };
        adamw_step(&mut m, &g, &mut st, &hyper).unwrap();
        // m_hat = 1, v_hat = 1 at t = 1.
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((m.head_bias - expected).abs() < 1e-15);
        assert!((m.head_bias + 0.1).abs() < 1e-8);
    }

    #[test]
    fn step_opposes_first_moment() {
        let mut m = model();
        let before = m.clone();
        let mut g = m.zero_grads();
        for (k, t) in g.tensors_mut().into_iter().enumerate() {
            for (j, v) in t.iter_mut().enumerate() {
                *v = ((k * 31 + j * 7) % 11) as f64 - 5.0;
            }
        }
        let mut st = OptimizerState::new(&m);
        let hyper = AdamWHyper {
            weight_decay: 0.0,
            ..AdamWHyper::default()
        };
        adamw_step(&mut m, &g, &mut st, &hyper).unwrap();
        for k in 0..10 {
            for j in 0..st.m[k].len() {
                let delta = m.tensors()[k][j] - before.tensors()[k][j];
                let mom = st.m[k][j];
                assert!(mom == 0.0 && delta == 0.0 || delta * mom < 0.0);
            }
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut m = model();
        let mut g = m.zero_grads();
        g.head[0] = f64::NAN;
        let mut st = OptimizerState::new(&m);
        let err = adamw_step(&mut m, &g, &mut st, &AdamWHyper::default()).unwrap_err();
        assert!(matches!(err, Error::NumericFailure { .. }));
    }
}
