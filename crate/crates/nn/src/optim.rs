//! Named parameter storage, the Adam optimizer with decoupled weight decay,
//! and the reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Ordered, named collection of trainable tensors. The order is the manifest
/// order used for checkpoints and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F: Real> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.entries.push((name.into(), tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Adam moment estimates, aligned with a [`ParamSet`] by position.
#[derive(Clone, Debug)]
pub struct AdamState<F: Real> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParamSet<F>) -> Self {
        Self {
            m: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            v: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            t: 0,
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
        }
    }
}

/// One bias-corrected Adam step with decoupled weight decay:
/// `theta <- theta - lr * m_hat/(sqrt(v_hat)+eps) - lr * wd * theta`.
///
/// `grads[i]` may be `None` when no gradient reached that parameter this step
/// (its moments still decay).
pub fn adam_step<F: Real>(
    params: &mut ParamSet<F>,
    grads: &[Option<Tensor<F>>],
    state: &mut AdamState<F>,
    lr: F,
    weight_decay: F,
) {
    assert_eq!(grads.len(), params.len(), "gradient list misaligned");
    state.t += 1;
    let t = state.t as i32;
    let bc1 = F::ONE - state.beta1.powi(t);
    let bc2 = F::ONE - state.beta2.powi(t);
    for (idx, theta) in params.tensors_mut().enumerate() {
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let zero = Tensor::zeros(theta.shape());
        let g = grads[idx].as_ref().unwrap_or(&zero);
        assert_eq!(g.shape(), theta.shape(), "gradient shape mismatch at {}", idx);
        let md = m.data_mut();
        let vd = v.data_mut();
        let td = theta.data_mut();
        let gd = g.data();
        for i in 0..td.len() {
            md[i] = state.beta1 * md[i] + (F::ONE - state.beta1) * gd[i];
            vd[i] = state.beta2 * vd[i] + (F::ONE - state.beta2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            td[i] -= lr * m_hat / (v_hat.sqrt() + state.eps) + lr * weight_decay * td[i];
        }
    }
}

/// Reduce-on-plateau schedule: the rate starts at `initial`, drops by
/// `factor` after `patience` consecutive epochs without metric improvement
/// (higher is better) and never falls below `floor`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub rate: f64,
    pub factor: f64,
    pub patience: usize,
    pub floor: f64,
    pub threshold: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self::new(1e-4, 0.2, 15, 1e-8)
    }
}

impl PlateauSchedule {
    pub fn new(initial: f64, factor: f64, patience: usize, floor: f64) -> Self {
        Self {
            rate: initial,
            factor,
            patience,
            floor,
            threshold: 1e-4,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Feed one epoch's metric; returns the learning rate to use next.
    pub fn update(&mut self, metric: f64) -> f64 {
        let improved = self.best.is_none_or(|best| metric > best + self.threshold);
        if improved {
            self.best = Some(metric);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.rate = (self.rate * self.factor).max(self.floor);
                self.bad_epochs = 0;
            }
        }
        self.rate
    }
}
