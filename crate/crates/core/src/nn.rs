//! Dense multilayer perceptrons over a flat parameter vector, plus the
//! optimizers and gradient clipping used by the learners.
//!
//! Layers are stored input-major (`w[i * out + o]`) so a sparse input row
//! (one-hot features, ReLU zeros) touches only the rows it needs.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations recorded by [`Mlp::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has an output")
    }
}

impl Mlp {
    /// Hidden layers get He-uniform weights; the output layer is zeroed when
    /// `zero_output` is set, otherwise it is initialized like the others.
    pub fn new<R: Rng>(sizes: &[usize], zero_output: bool, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let count = Self::param_count(sizes);
        let mut params = vec![0.0; count];
        let mut offset = 0;
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (inp, out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / inp as f64).sqrt();
            let last = l + 1 == layers;
            if !(last && zero_output) {
                for w in &mut params[offset..offset + inp * out] {
                    *w = rng.random_range(-bound..bound);
                }
            }
            offset += inp * out + out;
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == Self::param_count(sizes)).then(|| Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut cur = input.to_vec();
        let mut offset = 0;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let next = self.layer(l, offset, &cur, l + 1 < layers);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
            cur = next;
        }
        cur
    }

    pub fn forward_trace(&self, input: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        let mut offset = 0;
        let layers = self.sizes.len() - 1;
        for l in 0..layers {
            let next = self.layer(l, offset, &acts[l], l + 1 < layers);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
            acts.push(next);
        }
        Trace { acts }
    }

    fn layer(&self, l: usize, offset: usize, x: &[f64], relu: bool) -> Vec<f64> {
        let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
        debug_assert_eq!(x.len(), inp);
        let w = &self.params[offset..offset + inp * out];
        let mut y = self.params[offset + inp * out..offset + inp * out + out].to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (yo, wo) in y.iter_mut().zip(&w[i * out..(i + 1) * out]) {
                *yo += xi * wo;
            }
        }
        if relu {
            for v in &mut y {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        y
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &trace.acts[l];
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (g, d) in grads[off + i * out..off + (i + 1) * out].iter_mut().zip(&delta) {
                    *g += xi * d;
                }
            }
            for (g, d) in grads[off + inp * out..off + inp * out + out].iter_mut().zip(&delta) {
                *g += d;
            }
            if l > 0 {
                let w = &self.params[off..off + inp * out];
                let mut prev = vec![0.0; inp];
                for (i, p) in prev.iter_mut().enumerate() {
                    // ReLU gate on the previous layer's output.
                    if x[i] <= 0.0 {
                        continue;
                    }
                    *p = w[i * out..(i + 1) * out]
                        .iter()
                        .zip(&delta)
                        .map(|(a, b)| a * b)
                        .sum();
                }
                delta = prev;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    /// Lazy Adam: moments and parameters move only where the gradient is
    /// non-zero. Suits one-hot inputs, where a batch touches few rows.
    SparseAdam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(5e-4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        let moments = !matches!(config, OptimizerConfig::Sgd { .. });
        Optimizer {
            config,
            m: if moments { vec![0.0; num_params] } else { Vec::new() },
            v: if moments { vec![0.0; num_params] } else { Vec::new() },
            t: 0,
        }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, m: Vec<f64>, v: Vec<f64>, t: u64) {
        self.m = m;
        self.v = v;
        self.t = t;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                let moments = self.m.iter_mut().zip(self.v.iter_mut());
                for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(moments) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                }
            }
            OptimizerConfig::SparseAdam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (i, &g) in grads.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    params[i] -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                }
            }
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(mlp: &Mlp, x: &[f64], target: &[f64]) -> f64 {
        mlp.forward(x)
            .iter()
            .zip(target)
            .map(|(a, b)| 0.5 * (a - b) * (a - b))
            .sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::new(&[5, 7, 3], false, &mut rng);
        let x = [0.3, -1.2, 0.0, 0.8, 2.0];
        let target = [0.1, -0.4, 0.9];
        let trace = mlp.forward_trace(&x);
        let grad_out: Vec<f64> = trace.output().iter().zip(&target).map(|(a, b)| a - b).collect();
        let mut grads = vec![0.0; mlp.params().len()];
        mlp.backward(&trace, &grad_out, &mut grads);
        let h = 1e-6;
        for i in 0..grads.len() {
            let orig = mlp.params()[i];
            mlp.params_mut()[i] = orig + h;
            let up = loss(&mlp, &x, &target);
            mlp.params_mut()[i] = orig - h;
            let down = loss(&mlp, &x, &target);
            mlp.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads[i]).abs() < 1e-6, "param {i}: {fd} vs {}", grads[i]);
        }
    }

    #[test]
    fn zero_output_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&[4, 8, 6], true, &mut rng);
        assert!(mlp.forward(&[1.0, 2.0, 3.0, 4.0]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n <= 1.0 + 1e-12);
        let mut small = vec![0.1, 0.1];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.1]);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1), 2);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|v| v.abs() < 0.05), "{p:?}");
    }

    #[test]
    fn sparse_adam_leaves_untouched_entries() {
        let sparse = OptimizerConfig::SparseAdam {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut dense_p = vec![1.0, 1.0];
        let mut sparse_p = dense_p.clone();
        let mut dense = Optimizer::new(OptimizerConfig::adam(0.1), 2);
        let mut lazy = Optimizer::new(sparse, 2);
        dense.step(&mut dense_p, &[0.5, 0.5]);
        lazy.step(&mut sparse_p, &[0.5, 0.5]);
        assert_eq!(dense_p, sparse_p);
        dense.step(&mut dense_p, &[0.5, 0.0]);
        lazy.step(&mut sparse_p, &[0.5, 0.0]);
        assert_eq!(dense_p[0], sparse_p[0]);
        // Dense Adam keeps moving on stale momentum; the lazy variant does not.
        assert!(dense_p[1] < sparse_p[1]);
        assert_eq!(sparse_p[1], 1.0 - 0.1 * (0.05 / 0.1) / ((0.00025f64 / 0.001).sqrt() + 1e-8));
    }
}
