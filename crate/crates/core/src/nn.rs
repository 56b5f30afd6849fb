//! Small multilayer perceptron with manual backpropagation and Adam.
//!
//! Used by the fitted feasibility estimator and the fitted Q-learner. Hidden
//! layers use `tanh`; the output layer is linear. With no hidden layers and
//! one-hot inputs the network is exactly a table.

use rand::Rng as _;

use crate::envs::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations recorded by [`Mlp::forward_trace`].
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output layer")
    }
}

impl Mlp {
    /// Uniform Glorot initialization, zero biases.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        let mut net = Self::zeros(sizes);
        let mut offset = 0;
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = rng.gen_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Mlp { sizes: sizes.to_vec(), params: vec![0.0; n] }
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        let net = Self::zeros(&sizes);
        (net.params.len() == params.len()).then_some(Mlp { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let mut offset = 0;
        let last = self.sizes.len() - 2;
        for l in 0..=last {
            act = self.layer(l, offset, &act, l < last);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        act
    }

    fn layer(&self, l: usize, offset: usize, input: &[f64], hidden: bool) -> Vec<f64> {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        (0..n_out)
            .map(|o| {
                let z = b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
                if hidden {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut acts = vec![x.to_vec()];
        let mut offset = 0;
        let last = self.sizes.len() - 2;
        for l in 0..=last {
            let next = self.layer(l, offset, &acts[l], l < last);
            acts.push(next);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        Trace { acts }
    }

    /// Adds `d loss / d params` to `grad`, given `d loss / d output`.
    pub fn backward(&self, trace: &Trace, out_grad: &[f64], grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for l in 0..n_layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = out_grad.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &trace.acts[l];
            let off = offsets[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                delta = (0..n_in)
                    .map(|i| {
                        let back: f64 = (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum();
                        let a = input[i];
                        back * (1.0 - a * a)
                    })
                    .collect();
            }
        }
    }
}

/// Adam optimizer state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 5, 4, 2], &mut rng);
        let x = [0.3, -0.7, 1.1];
        let loss = |n: &Mlp| {
            let y = n.forward(&x);
            0.5 * (y[0] - 0.2).powi(2) + 0.5 * (y[1] + 0.4).powi(2)
        };
        let trace = net.forward_trace(&x);
        let y = trace.output();
        let mut grad = vec![0.0; net.params().len()];
        net.backward(&trace, &[y[0] - 0.2, y[1] + 0.4], &mut grad);
        for (i, &g) in grad.iter().enumerate() {
            let mut p = net.clone();
            p.params_mut()[i] += 1e-6;
            let mut m = net.clone();
            m.params_mut()[i] -= 1e-6;
            let fd = (loss(&p) - loss(&m)) / 2e-6;
            assert!((fd - g).abs() < 1e-6, "param {i}: {fd} vs {g}");
        }
        assert_eq!(net.forward(&x), trace.output());
    }

    #[test]
    fn adam_fits_a_line() {
        let mut rng = Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[1, 1], &mut rng);
        let mut opt = Adam::new(net.params().len(), 0.05);
        for _ in 0..2000 {
            let mut grad = vec![0.0; 2];
            for k in 0..5 {
                let x = [k as f64 / 4.0];
                let tr = net.forward_trace(&x);
                let err = tr.output()[0] - (2.0 * x[0] - 1.0);
                net.backward(&tr, &[err], &mut grad);
            }
            opt.step(net.params_mut(), &grad);
        }
        assert!((net.forward(&[0.5])[0] - 0.0).abs() < 1e-3);
    }
}
