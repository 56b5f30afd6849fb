use rand::Rng as _;

use super::{masked_max, Controller, QStore, RlError, TrainConfig};
use crate::envs::{DiscreteEnv, Rng, TransitionRecord};
use crate::feasibility::ActionMask;
use crate::nn::{Adam, Mlp};

/// A transition plus the mask that applies in its successor state (`None`
/// when the backup is unmasked).
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayItem {
    pub record: TransitionRecord,
    pub next_mask: Option<ActionMask>,
}

/// Fixed-capacity ring buffer.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<ReplayItem>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity: capacity.max(1), items: Vec::new(), next: 0 }
    }

    pub fn push(&mut self, item: ReplayItem) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `n` items drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<ReplayItem> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| self.items[rng.gen_range(0..self.items.len())].clone()).collect()
    }
}

/// A controller together with its optimizer state.
#[derive(Clone, Debug)]
pub struct Learner {
    pub controller: Controller,
    gamma: f64,
    learning_rate: f64,
    target_sync: usize,
    adam: Option<Adam>,
    target: Option<Mlp>,
    updates: usize,
}

impl Learner {
    pub fn new(controller: Controller, cfg: &TrainConfig) -> Self {
        let (adam, target) = match &controller.store {
            QStore::Fitted { net, .. } => (Some(Adam::new(net.params().len(), cfg.learning_rate)), Some(net.clone())),
            QStore::Tabular { .. } => (None, None),
        };
        Learner {
            controller,
            gamma: cfg.gamma,
            learning_rate: cfg.learning_rate,
            target_sync: cfg.target_sync,
            adam,
            target,
            updates: 0,
        }
    }

    /// Adopts the step sizes of `cfg`, keeping values and optimizer state.
    pub fn reconfigure(&mut self, cfg: &TrainConfig) {
        self.gamma = cfg.gamma;
        self.learning_rate = cfg.learning_rate;
        self.target_sync = cfg.target_sync;
        if let Some(adam) = &mut self.adam {
            adam.lr = cfg.learning_rate;
        }
    }

    pub fn into_controller(self) -> Controller {
        self.controller
    }

    /// One temporal-difference update on `batch`; returns the mean squared
    /// TD error before the update. Terminal transitions do not bootstrap.
    pub fn train_step<E: DiscreteEnv + ?Sized>(&mut self, env: &E, batch: &[ReplayItem]) -> Result<f64, RlError> {
        if batch.is_empty() {
            return Err(RlError::EmptyBatch);
        }
        self.updates += 1;
        let g = self.gamma;
        let n = batch.len() as f64;
        let loss = match &mut self.controller.store {
            QStore::Tabular { num_actions, q, .. } => {
                let na = *num_actions;
                let mut loss = 0.0;
                for item in batch {
                    let r = &item.record;
                    let bootstrap = if r.terminated {
                        0.0
                    } else {
                        let k = r.next_state as usize * na;
                        g * masked_max(&q[k..k + na], item.next_mask.as_ref())
                    };
                    let idx = r.state as usize * na + r.action;
                    let td = r.reward + bootstrap - q[idx];
                    q[idx] += self.learning_rate * td;
                    loss += td * td / n;
                }
                loss
            }
            QStore::Fitted { net, mean, scale } => {
                let target = self.target.as_ref().expect("fitted learner has a target");
                let norm = |x: Vec<f64>| -> Vec<f64> { x.iter().zip(&*mean).zip(&*scale).map(|((x, m), k)| (x - m) / k).collect() };
                let mut grad = vec![0.0; net.params().len()];
                let mut loss = 0.0;
                for item in batch {
                    let r = &item.record;
                    let bootstrap = if r.terminated {
                        0.0
                    } else {
                        g * masked_max(&target.forward(&norm(env.state_vector(r.next_state))), item.next_mask.as_ref())
                    };
                    let trace = net.forward_trace(&norm(env.state_vector(r.state)));
                    let err = trace.output()[r.action] - (r.reward + bootstrap);
                    let mut out_grad = vec![0.0; net.output_size()];
                    out_grad[r.action] = err / n;
                    net.backward(&trace, &out_grad, &mut grad);
                    loss += err * err / n;
                }
                if loss.is_finite() {
                    self.adam.as_mut().expect("fitted learner has an optimizer").step(net.params_mut(), &grad);
                    if self.updates.is_multiple_of(self.target_sync) {
                        self.target = Some(net.clone());
                    }
                }
                loss
            }
        };
        if !loss.is_finite() {
            return Err(RlError::NonFinite { loss, update: self.updates });
        }
        Ok(loss)
    }
}
