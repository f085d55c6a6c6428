//! Small dense-math kernels shared by the prompt MLP and the LM, plus the
//! AdamW optimizer. Matrices are row-major `Vec<f64>` with shape carried by
//! the caller; weights for a linear map are `[out, in]`.

use alloc::vec::Vec;

use crate::math;

/// y = W x, W: [out, in].
pub fn linear(w: &[f64], x: &[f64], out_dim: usize, in_dim: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(x.len(), in_dim);
    (0..out_dim)
        .map(|o| {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            row.iter().zip(x).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// dW += dy x^T.
pub fn linear_grad_w(dw: &mut [f64], dy: &[f64], x: &[f64], out_dim: usize, in_dim: usize) {
    debug_assert_eq!(dw.len(), out_dim * in_dim);
    for o in 0..out_dim {
        let g = dy[o];
        if g == 0.0 {
            continue;
        }
        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
        for (slot, xv) in row.iter_mut().zip(x) {
            *slot += g * xv;
        }
    }
}

/// dx += W^T dy.
pub fn linear_grad_x(dx: &mut [f64], dy: &[f64], w: &[f64], out_dim: usize, in_dim: usize) {
    debug_assert_eq!(dx.len(), in_dim);
    for o in 0..out_dim {
        let g = dy[o];
        if g == 0.0 {
            continue;
        }
        let row = &w[o * in_dim..(o + 1) * in_dim];
        for (slot, wv) in dx.iter_mut().zip(row) {
            *slot += g * wv;
        }
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|&v| math::exp(v - max)).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / sum).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = x.iter().map(|&v| math::exp(v - max)).sum();
    let log_z = max + math::ln(sum);
    x.iter().map(|&v| v - log_z).collect()
}

/// RMS normalization without gain. Returns (normed, inverse_rms) so the
/// backward pass can reuse the scale.
pub fn rmsnorm(x: &[f64]) -> (Vec<f64>, f64) {
    let ms: f64 = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / math::sqrt(ms + 1e-8);
    (x.iter().map(|v| v * inv).collect(), inv)
}

pub fn rmsnorm_backward(dy: &[f64], x: &[f64], inv: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let dot: f64 = dy.iter().zip(x).map(|(a, b)| a * b).sum();
    dy.iter()
        .zip(x)
        .map(|(dy_i, x_i)| inv * dy_i - (inv * inv * inv / n) * dot * x_i)
        .collect()
}

/// AdamW: Adam moments plus decoupled weight decay, with linear warmup to
/// the configured rate and a constant rate afterwards.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    /// `shapes` are the flat lengths of the parameter tensors, in the same
    /// order `step` will receive them.
    pub fn new(learning_rate: f64, weight_decay: f64, warmup_steps: usize, shapes: &[usize]) -> Self {
        Self {
            learning_rate,
            weight_decay,
            warmup_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        if self.warmup_steps == 0 || self.step >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * self.step as f64 / self.warmup_steps as f64
        }
    }

    /// One optimizer step over parallel (param, grad) tensor lists.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let lr = self.current_lr();
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(param.len(), grad.len());
            for i in 0..param.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                param[i] -= lr * (m_hat / (math::sqrt(v_hat) + self.eps) + self.weight_decay * param[i]);
            }
        }
    }
}
