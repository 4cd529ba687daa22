use serde::{Deserialize, Serialize};

use crate::error::DiffError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Outcome of one optimizer update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct Parameter {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

/// Named trainable tensors with gradient buffers and Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    step: u64,
}

/// Serialized form of one parameter and its optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let len = value.len();
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad: vec![0.0; len],
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &[f64]) {
        for (acc, v) in self.params[id.0].grad.iter_mut().zip(g) {
            *acc += v;
        }
    }

    pub fn set_grad(&mut self, id: ParamId, g: &[f64]) {
        self.params[id.0].grad.copy_from_slice(g);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// L2 norm over the gradients of all parameters jointly.
    pub fn global_grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Clips the global gradient norm to `clip_norm`, applies one
    /// bias-corrected Adam update, then zeroes the gradients.
    pub fn adam_step(
        &mut self,
        adam: &AdamConfig,
        lr: f64,
        clip_norm: f64,
    ) -> Result<StepStats, DiffError> {
        for p in &self.params {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(DiffError::NonFiniteGradient(p.name.clone()));
            }
        }
        let grad_norm = self.global_grad_norm();
        let clipped = grad_norm > clip_norm;
        let factor = if clipped { clip_norm / grad_norm } else { 1.0 };

        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - adam.beta1.powf(t);
        let bc2 = 1.0 - adam.beta2.powf(t);
        for p in &mut self.params {
            let values = p.value.values_mut();
            for i in 0..values.len() {
                let g = p.grad[i] * factor;
                let m = adam.beta1 * p.first_moment[i] + (1.0 - adam.beta1) * g;
                let v = adam.beta2 * p.second_moment[i] + (1.0 - adam.beta2) * g * g;
                p.first_moment[i] = m;
                p.second_moment[i] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + adam.eps);
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(StepStats { grad_norm, clipped })
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.values().to_vec(),
                adam_m: p.first_moment.clone(),
                adam_v: p.second_moment.clone(),
            })
            .collect()
    }

    /// Restores values and optimizer moments from serialized tensors.
    /// Names and shapes must match this store exactly.
    pub fn load_named(&mut self, tensors: &[NamedTensor], step: u64) -> Result<(), DiffError> {
        if tensors.len() != self.params.len() {
            return Err(DiffError::ShapeMismatch {
                op: "load",
                expected: vec![self.params.len()],
                got: vec![tensors.len()],
            });
        }
        for (p, t) in self.params.iter_mut().zip(tensors) {
            if p.name != t.name {
                return Err(DiffError::UnknownParameter(t.name.clone()));
            }
            let len = p.value.len();
            if p.value.shape() != t.shape.as_slice()
                || t.values.len() != len
                || t.adam_m.len() != len
                || t.adam_v.len() != len
            {
                return Err(DiffError::ShapeMismatch {
                    op: "load",
                    expected: p.value.shape().to_vec(),
                    got: t.shape.clone(),
                });
            }
            p.value = Tensor::new(t.shape.clone(), t.values.clone())?;
            p.first_moment.clone_from(&t.adam_m);
            p.second_moment.clone_from(&t.adam_v);
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.step = step;
        Ok(())
    }
}
