use std::collections::HashMap;

use crate::error::{Error, Result};

use super::Matrix;

/// Handle to a slot in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub m: Matrix,
    pub v: Matrix,
}

/// Named trainable parameters with gradient and Adam moment buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: Vec<Slot>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate parameter {name:?}")));
        }
        let (r, c) = value.shape();
        let id = self.slots.len();
        self.index.insert(name.clone(), id);
        self.slots.push(Slot {
            name,
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total scalar parameter count.
    pub fn size(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, id: ParamId) -> &Slot {
        &self.slots[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.slots[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId) -> &mut Slot {
        &mut self.slots[id.0]
    }

    /// Zeroed gradient buffers matching every slot.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            mats: self
                .slots
                .iter()
                .map(|s| Matrix::zeros(s.value.rows(), s.value.cols()))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        if grads.mats.len() != self.slots.len() {
            return Err(Error::InvalidInput(format!(
                "gradient set has {} entries, store has {}",
                grads.mats.len(),
                self.slots.len()
            )));
        }
        for (s, g) in self.slots.iter_mut().zip(&grads.mats) {
            s.grad.add_assign(g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.slots.iter_mut().for_each(|s| s.grad.fill(0.0));
    }

    /// Copies parameter values only.
    pub fn snapshot(&self) -> Vec<Matrix> {
        self.slots.iter().map(|s| s.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Matrix]) {
        for (s, v) in self.slots.iter_mut().zip(values) {
            s.value.clone_from(v);
        }
    }

    /// `name=norm` list used in divergence diagnostics.
    pub fn norms_summary(&self) -> String {
        self.slots
            .iter()
            .map(|s| format!("{}={:.4e}", s.name, s.value.norm()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Applies one Adam step with the store's own step counter and clears
    /// the gradients.
    pub fn adam_update(&mut self, cfg: &AdamConfig) {
        let t = self.step + 1;
        adam_step(self, t, cfg);
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    mats: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.mats[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.mats[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.mats.iter()
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            a.add_assign(b).expect("aligned gradients");
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.mats.iter_mut().for_each(|m| m.scale(s));
    }

    pub fn clear(&mut self) {
        self.mats.iter_mut().for_each(|m| m.fill(0.0));
    }

    pub fn max_abs(&self) -> f64 {
        self.mats.iter().fold(0.0, |m, g| m.max(g.max_abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed to freeze a model
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid Adam config {self:?}")))
        }
    }
}

/// Bias-corrected Adam update for step `t >= 1`, applied in place; the
/// gradients are zeroed afterwards.
pub fn adam_step(params: &mut ParamStore, t: u64, cfg: &AdamConfig) {
    assert!(t >= 1, "Adam step index starts at 1");
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for s in &mut params.slots {
        let (value, grad, m, v) = (
            s.value.data_mut(),
            s.grad.data_mut(),
            s.m.data_mut(),
            s.v.data_mut(),
        );
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            grad[i] = 0.0;
        }
    }
    params.step = t;
}
