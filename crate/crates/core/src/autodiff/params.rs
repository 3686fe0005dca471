use std::collections::HashMap;

use super::{AutodiffError, Tensor};

/// Handle to a tensor registered in a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct MomentState {
    first: Tensor,
    second: Tensor,
    steps: u64,
}

/// Named learnable tensors plus their adaptive-moment optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    moments: Vec<MomentState>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let id = self.values.len();
        let (r, c) = value.shape();
        self.moments.push(MomentState {
            first: Tensor::zeros(r, c),
            second: Tensor::zeros(r, c),
            steps: 0,
        });
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Overwrites a parameter value; the shape is fixed at registration.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), AutodiffError> {
        let current = &self.values[id.0];
        if current.shape() != value.shape() {
            return Err(AutodiffError::ParameterShape {
                name: self.names[id.0].clone(),
                expected: current.shape(),
                found: value.shape(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn set_by_name(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        let id = self
            .id(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        self.set(id, value)
    }

    /// Number of optimizer updates applied to `id`.
    pub fn steps(&self, id: ParamId) -> u64 {
        self.moments[id.0].steps
    }

    /// Clears optimizer moments and step counters.
    pub fn reset_optimizer(&mut self) {
        for m in &mut self.moments {
            m.first.data_mut().iter_mut().for_each(|v| *v = 0.0);
            m.second.data_mut().iter_mut().for_each(|v| *v = 0.0);
            m.steps = 0;
        }
    }
}

/// Gradients produced by one backward pass, aligned with a parameter store.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) params: Vec<Option<Tensor>>,
    pub(crate) inputs: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            params: vec![None; store.len()],
            inputs: HashMap::new(),
        }
    }

    /// Gradient for a parameter; `None` when the loss did not depend on it.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for a parameter, zeros when it was untouched.
    pub fn param_or_zeros(&self, store: &ParameterStore, id: ParamId) -> Tensor {
        self.param(id).cloned().unwrap_or_else(|| {
            let (r, c) = store.get(id).shape();
            Tensor::zeros(r, c)
        })
    }

    /// Gradient with respect to a grad-requiring input leaf.
    pub fn input(&self, var: super::Var) -> Option<&Tensor> {
        self.inputs.get(&var.0)
    }

    pub fn global_norm(&self) -> f64 {
        self.params.iter().flatten().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales all parameter gradients so their joint L2 norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.params.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    /// Adds another gradient set in place.
    pub fn accumulate(&mut self, other: Gradients) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (mine, theirs) in self.params.iter_mut().zip(other.params) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(&t),
                (None, Some(t)) => *mine = Some(t),
                _ => {}
            }
        }
        for (k, t) in other.inputs {
            match self.inputs.get_mut(&k) {
                Some(m) => m.add_assign(&t),
                None => {
                    self.inputs.insert(k, t);
                }
            }
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// Applies one update to every parameter that received a gradient.
    pub fn step(&self, store: &mut ParameterStore, grads: &Gradients) -> Result<(), AutodiffError> {
        for (i, g) in grads.params.iter().enumerate() {
            let Some(g) = g else { continue };
            if i >= store.len() || store.values[i].shape() != g.shape() {
                return Err(AutodiffError::ParameterShape {
                    name: store.names.get(i).cloned().unwrap_or_default(),
                    expected: store.values.get(i).map_or((0, 0), Tensor::shape),
                    found: g.shape(),
                });
            }
        }
        for (i, g) in grads.params.iter().enumerate() {
            let Some(g) = g else { continue };
            let state = &mut store.moments[i];
            state.steps += 1;
            let t = state.steps as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let value = &mut store.values[i];
            let m = state.first.data_mut();
            let v = state.second.data_mut();
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
