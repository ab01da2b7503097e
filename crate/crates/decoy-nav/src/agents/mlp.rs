//! Minimal fully-connected network with tanh hidden layers, a linear output
//! layer and hand-written backprop over a flat parameter vector.
//!
//! Tanh keeps every loss smooth in the parameters, which the finite-difference
//! gradient verification relies on.

use rand::{Rng, RngCore};

/// Layer sizes and a flat parameter vector. For each layer the weights
/// (`out x in`, row-major by output) precede the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Forward-pass activations kept for backprop: the input and each layer's
/// post-activation output.
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Xavier-uniform initialization.
    pub fn new(dims: &[usize], rng: &mut dyn RngCore) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let n = Self::param_count_for(dims);
        let mut params = Vec::with_capacity(n);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Mlp {
            dims: dims.to_vec(),
            params,
        }
    }

    pub fn param_count_for(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.params.len());
        self.params.copy_from_slice(p);
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Self {
        assert_eq!(params.len(), Self::param_count_for(dims));
        Mlp {
            dims: dims.to_vec(),
            params,
        }
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        assert_eq!(x.len(), self.in_dim());
        let n_layers = self.dims.len() - 1;
        let mut acts = Vec::with_capacity(n_layers);
        let mut cur = x.to_vec();
        let mut off = 0usize;
        for (l, w) in self.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[off..off + fan_in * fan_out];
            let biases = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let mut next = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut acc = biases[o];
                for (wi, xi) in row.iter().zip(&cur) {
                    acc += wi * xi;
                }
                next[o] = if l + 1 < n_layers { acc.tanh() } else { acc };
            }
            acts.push(next.clone());
            cur = next;
        }
        (
            cur,
            MlpCache {
                input: x.to_vec(),
                acts,
            },
        )
    }

    /// Backprop for one cached forward pass. Accumulates parameter gradients
    /// into `grads` and returns the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad_out.len(), self.out_dim());
        assert_eq!(grads.len(), self.params.len());
        let n_layers = self.dims.len() - 1;

        // Per-layer parameter offsets.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0usize;
        for w in self.dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }

        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            // Output layer is linear; hidden layers apply tanh.
            if l + 1 < n_layers {
                for (d, a) in delta.iter_mut().zip(&cache.acts[l]) {
                    *d *= 1.0 - a * a;
                }
            }
            let prev: &[f64] = if l == 0 { &cache.input } else { &cache.acts[l - 1] };
            let base = offsets[l];
            let mut grad_prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                let wrow = base + o * fan_in;
                for i in 0..fan_in {
                    grads[wrow + i] += d * prev[i];
                    grad_prev[i] += d * self.params[wrow + i];
                }
                grads[base + fan_in * fan_out + o] += d;
            }
            delta = grad_prev;
        }
        delta
    }

    /// Polyak blend: `self = rho * online + (1 - rho) * self`.
    pub fn blend_from(&mut self, online: &Mlp, rho: f64) {
        assert_eq!(self.dims, online.dims);
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = rho * o + (1.0 - rho) * *t;
        }
    }
}

/// Adaptive-moment stochastic gradient optimizer.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[3, 8, 8, 2], &mut rng);
        let x = [0.3, -0.7, 1.1];
        // Scalar loss: weighted sum of outputs.
        let wl = [0.9, -1.3];
        let loss = |net: &Mlp| -> f64 {
            let y = net.forward(&x);
            y.iter().zip(&wl).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = net.forward_cached(&x);
        let mut grads = net.zero_grads();
        net.backward(&cache, &wl, &mut grads);
        let h = 1e-6;
        let mut perturbed = net.clone();
        for i in (0..net.n_params()).step_by(7) {
            let orig = net.params()[i];
            perturbed.params_mut()[i] = orig + h;
            let up = loss(&perturbed);
            perturbed.params_mut()[i] = orig - h;
            let down = loss(&perturbed);
            perturbed.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - grads[i]).abs() < 1e-6 * fd.abs().max(1.0),
                "param {i}: fd {fd} vs analytic {}",
                grads[i]
            );
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[2, 6, 1], &mut rng);
        let x = [0.4, -0.2];
        let (_, cache) = net.forward_cached(&x);
        let mut grads = net.zero_grads();
        let gin = net.backward(&cache, &[1.0], &mut grads);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            xp[i] += h;
            let up = net.forward(&xp)[0];
            xp[i] -= 2.0 * h;
            let down = net.forward(&xp)[0];
            let fd = (up - down) / (2.0 * h);
            assert!((fd - gin[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn blend_is_exact_polyak_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let online = Mlp::new(&[2, 4, 2], &mut rng);
        let mut target = Mlp::new(&[2, 4, 2], &mut rng);
        let before = target.params().to_vec();
        target.blend_from(&online, 0.01);
        for i in 0..before.len() {
            let expected = 0.01 * online.params()[i] + 0.99 * before[i];
            assert_eq!(target.params()[i], expected);
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut opt = Adam::new(0.05, 2);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|&x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|&x| x.abs() < 1e-2), "{p:?}");
    }
}
