use rand::seq::index::sample;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{EstimatorStore, FeasibilityError, FeasibilityEstimator, FeatureMap, LabelFunction};
use crate::envs::{DiscreteEnv, Rng, TransitionRecord};
use crate::exec::ExecMode;
use crate::nn::{Adam, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Gradient steps between target-network refreshes.
    pub target_sync: usize,
    pub seed: u64,
    pub mode: ExecMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            gamma: 0.9,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            batch_size: 256,
            steps: 20_000,
            target_sync: 500,
            seed: 0,
            mode: ExecMode::Parallel,
        }
    }
}

/// One transition prepared for fitting.
#[derive(Clone, Debug, PartialEq)]
pub struct FitSample {
    pub x: Vec<f64>,
    pub action: usize,
    pub label: f64,
    pub next_x: Vec<f64>,
    pub next_label: f64,
    /// The successor is absorbing, so its value equals its label.
    pub next_absorbing: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Mean squared residual over the last few minibatches.
    pub final_loss: f64,
    pub steps: usize,
}

pub fn samples_from_records<E: DiscreteEnv + ?Sized>(
    env: &E,
    records: &[TransitionRecord],
    label: &LabelFunction,
    features: &FeatureMap,
) -> Vec<FitSample> {
    records
        .iter()
        .map(|r| FitSample {
            x: features.features(env, r.state),
            action: r.action,
            label: label.label(env.valuation(r.state)),
            next_x: features.features(env, r.next_state),
            next_label: label.label(env.valuation(r.next_state)),
            next_absorbing: env.is_absorbing(r.next_state),
        })
        .collect()
}

fn normalizer(samples: &[FitSample]) -> (Vec<f64>, Vec<f64>) {
    let d = samples[0].x.len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(&s.x) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; d];
    for s in samples {
        for ((v, x), m) in var.iter_mut().zip(&s.x).zip(&mean) {
            *v += (x - m).powi(2) / n;
        }
    }
    let scale = var.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
    (mean, scale)
}

fn normalize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((x, m), s)| (x - m) / s).collect()
}

/// Fits `Q(x, ·)` to the reach-avoid Bellman equation by minibatch SGD on
/// the squared residual, bootstrapping from a periodically synchronized
/// target copy. One-hot features with no hidden layers give an exact table.
pub fn fit(
    samples: &[FitSample],
    num_actions: usize,
    constraint: &str,
    features: FeatureMap,
    cfg: &FitConfig,
) -> Result<(FeasibilityEstimator, FitReport), FeasibilityError> {
    if samples.is_empty() {
        return Err(FeasibilityError::EmptyDataset);
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) || cfg.batch_size == 0 || cfg.target_sync == 0 || num_actions == 0 {
        return Err(FeasibilityError::InvalidConfig(
            "need gamma in (0, 1) and positive batch size, target sync and action count".into(),
        ));
    }
    if let Some(bad) = samples.iter().find(|s| s.action >= num_actions || s.x.len() != samples[0].x.len()) {
        return Err(FeasibilityError::InvalidConfig(format!("inconsistent sample (action {})", bad.action)));
    }
    let (mean, scale) = normalizer(samples);
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = cfg
        .mode
        .map_range(samples.len(), |i| (normalize(&samples[i].x, &mean, &scale), normalize(&samples[i].next_x, &mean, &scale)));

    let mut sizes = vec![samples[0].x.len()];
    sizes.extend(&cfg.hidden);
    sizes.push(num_actions);
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut net = Mlp::new(&sizes, &mut rng);
    let mut target = net.clone();
    let mut opt = Adam::new(net.params().len(), cfg.learning_rate);
    let batch = cfg.batch_size.min(samples.len());
    let g = cfg.gamma;
    let mut recent = Vec::new();

    for step in 0..cfg.steps {
        if step % cfg.target_sync == 0 {
            target = net.clone();
        }
        let idx: Vec<usize> = if batch == samples.len() {
            (0..batch).collect()
        } else {
            sample(&mut rng, samples.len(), batch).into_vec()
        };
        let per_sample = cfg.mode.map_range(idx.len(), |k| {
            let i = idx[k];
            let s = &samples[i];
            let next_v = if s.next_absorbing {
                s.next_label
            } else {
                target.forward(&inputs[i].1).into_iter().fold(f64::NEG_INFINITY, f64::max).clamp(-1.0, 1.0)
            };
            let y = (1.0 - g) * s.label + g * s.label.min(next_v);
            let trace = net.forward_trace(&inputs[i].0);
            let err = trace.output()[s.action] - y;
            let mut out_grad = vec![0.0; num_actions];
            out_grad[s.action] = err / idx.len() as f64;
            let mut grad = vec![0.0; net.params().len()];
            net.backward(&trace, &out_grad, &mut grad);
            (err * err, grad)
        });
        let mut grad = vec![0.0; net.params().len()];
        let mut loss = 0.0;
        for (l, g_i) in &per_sample {
            loss += l / idx.len() as f64;
            for (a, b) in grad.iter_mut().zip(g_i) {
                *a += b;
            }
        }
        if !loss.is_finite() {
            return Err(FeasibilityError::Divergent(format!("loss {loss} at step {step}")));
        }
        recent.push(loss);
        if recent.len() > 50 {
            recent.remove(0);
        }
        opt.step(net.params_mut(), &grad);
    }
    if net.params().iter().any(|p| !p.is_finite()) {
        return Err(FeasibilityError::Divergent("non-finite parameters".into()));
    }
    let final_loss = if recent.is_empty() { f64::NAN } else { recent.iter().sum::<f64>() / recent.len() as f64 };
    let est = FeasibilityEstimator {
        constraint: constraint.to_string(),
        gamma: g,
        store: EstimatorStore::Fitted { net, features, mean, scale },
        provenance: format!("fitted on {} transitions, {} steps, seed {}", samples.len(), cfg.steps, cfg.seed),
    };
    Ok((est, FitReport { final_loss, steps: cfg.steps }))
}
