use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Slot {
    value: Tensor,
    grad: Option<Tensor>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

/// Named trainable parameters, their gradient slots and Adam state.
///
/// Iteration order is by name so that serialization and hashing are stable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate parameter `{name}`")));
        }
        let n = value.len();
        self.slots.insert(
            name,
            Slot {
                value,
                grad: None,
                first_moment: vec![0.0; n],
                second_moment: vec![0.0; n],
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    /// Overwrites a parameter value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{name}`")))?;
        if slot.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "param_set",
                detail: format!("{name}: {:?} vs {:?}", slot.value.shape(), value.shape()),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).and_then(|s| s.grad.as_ref())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    /// Total number of scalar coordinates.
    pub fn coordinate_count(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Gives every parameter without a gradient a zero gradient.
    pub fn ensure_grads(&mut self) {
        for slot in self.slots.values_mut() {
            if slot.grad.is_none() {
                slot.grad = Some(Tensor::zeros(slot.value.shape()));
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad = Some(Tensor::zeros(slot.value.shape()));
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{name}`")))?;
        if g.shape() != slot.value.shape() {
            return Err(Error::Shape {
                op: "accumulate_grad",
                detail: format!("{name}: {:?} vs {:?}", slot.value.shape(), g.shape()),
            });
        }
        let acc = slot
            .grad
            .get_or_insert_with(|| Tensor::zeros(slot.value.shape()));
        for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
            *a += x;
        }
        Ok(())
    }

    /// One bias-corrected Adam update over all parameters, then zeroes gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some((name, _)) = self.slots.iter().find(|(_, s)| s.grad.is_none()) {
            return Err(Error::InvalidInput(format!("missing gradient for `{name}`")));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for slot in self.slots.values_mut() {
            let grad = slot.grad.as_mut().expect("checked above");
            for (i, g) in grad.data_mut().iter_mut().enumerate() {
                let m = &mut slot.first_moment[i];
                let v = &mut slot.second_moment[i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * *g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * *g * *g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                slot.value.data_mut()[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                *g = 0.0;
            }
            if !slot.value.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
        Ok(())
    }

    /// Drops every parameter whose name fails `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.slots.retain(|name, _| keep(name));
    }

    /// Copy of the values only, with fresh optimizer state.
    pub fn values_only(&self) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, value) in self.iter() {
            out.insert(name, value.clone()).expect("names are unique");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn scalar_store(w: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![w])).unwrap();
        p
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = scalar_store(1.0);
        assert!(p.insert("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = scalar_store(1.0);
        assert!(p.adam_step(&AdamConfig::default()).is_err());
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_store(0.75);
        p.zero_grads();
        p.adam_step(&AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.75]);
        assert_eq!(p.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02, 150.0] {
            let mut p = scalar_store(1.0);
            p.zero_grads();
            p.accumulate_grad("w", &Tensor::vector(vec![g])).unwrap();
            p.adam_step(&AdamConfig::with_lr(0.1)).unwrap();
            let moved = (p.get("w").unwrap().data()[0] - 1.0).abs();
            assert!((moved - 0.1).abs() < 1e-6, "g={g} moved {moved}");
            assert_eq!(p.grad("w").unwrap().data(), &[0.0]);
        }
    }

    /// Independent scalar Adam written out longhand.
    fn reference_adam(mut w: f64, lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        let mut out = vec![];
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
            out.push(w);
        }
        out
    }

    #[test]
    fn three_steps_on_square_decrease() {
        let expected = reference_adam(1.0, 0.1, 3);
        assert!(expected.windows(2).all(|p| p[1].abs() < p[0].abs()));
        assert!(expected[0].abs() < 1.0);

        let mut p = scalar_store(1.0);
        let mut got = vec![];
        for _ in 0..3 {
            let mut tape = Tape::new();
            let w = tape.param(&p, "w").unwrap();
            let sq = tape.mul(w, w).unwrap();
            let loss = tape.sum(sq).unwrap();
            tape.backward_into(loss, &mut p).unwrap();
            p.adam_step(&AdamConfig::with_lr(0.1)).unwrap();
            got.push(p.get("w").unwrap().data()[0]);
        }
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_accumulate_until_step() {
        let mut p = scalar_store(2.0);
        for _ in 0..2 {
            let mut tape = Tape::new();
            let w = tape.param(&p, "w").unwrap();
            let loss = tape.sum(w).unwrap();
            tape.backward_into(loss, &mut p).unwrap();
        }
        assert_eq!(p.grad("w").unwrap().data(), &[2.0]);
    }
}
