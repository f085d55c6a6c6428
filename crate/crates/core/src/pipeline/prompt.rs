//! The unified user prompt model: one MLP shared by all users, mapping a
//! k-dimensional n-gram feature vector to a K x d prefix prompt.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::featurizer::UserFeatureVector;
use crate::hash;
use crate::math;
use crate::nn;
use crate::rng::Rng;

use super::PrefixPrompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => math::tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative in terms of the pre-activation.
    fn derivative(&self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = math::tanh(pre);
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Feature vector dimension (the dictionary size k).
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Prefix length K.
    pub prompt_len: usize,
    /// LM embedding width d.
    pub model_dim: usize,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(input_dim: usize, prompt_len: usize, model_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: alloc::vec![256],
            prompt_len,
            model_dim,
            activation: Activation::Tanh,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.prompt_len * self.model_dim);
        dims
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.input_dim == 0 || self.prompt_len == 0 || self.model_dim == 0 {
            return Err(Error::InvalidConfig("MLP dimensions must be nonzero".into()));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("MLP hidden widths must be nonzero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DenseLayer {
    w: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

/// Parameters of the prompt MLP (the tunable theta of prompt-tuning).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptModelParams {
    pub config: MlpConfig,
    layers: Vec<DenseLayer>,
}

/// Forward activations needed by the backward pass.
pub struct MlpCache {
    /// Input followed by each layer's post-activation output.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Vec<f64>>,
}

/// Gradient buffers mirroring [`PromptModelParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn scale(&mut self, factor: f64) {
        for t in self.w.iter_mut().chain(self.b.iter_mut()) {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.w
            .iter()
            .zip(&self.b)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

impl PromptModelParams {
    /// Hidden layers get 1/sqrt(fan_in) gaussian weights; the output layer is
    /// zero so an untrained model emits the all-zero prefix.
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let dims = config.dims();
        let mut rng = Rng::derive(seed, &[0x4d4c50]);
        let last = dims.len() - 2;
        let layers = (0..dims.len() - 1)
            .map(|l| {
                let (in_dim, out_dim) = (dims[l], dims[l + 1]);
                let w = if l == last {
                    alloc::vec![0.0; in_dim * out_dim]
                } else {
                    let std = 1.0 / math::sqrt(in_dim as f64);
                    (0..in_dim * out_dim).map(|_| rng.gauss(std)).collect()
                };
                DenseLayer { w, b: alloc::vec![0.0; out_dim], in_dim, out_dim }
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn forward(&self, input: &[f64]) -> Result<(PrefixPrompt, MlpCache), Error> {
        if input.len() != self.config.input_dim {
            return Err(Error::ShapeMismatch { expected: self.config.input_dim, got: input.len() });
        }
        let mut activations = alloc::vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = nn::linear(&layer.w, activations.last().unwrap(), layer.out_dim, layer.in_dim);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            pre.push(z.clone());
            let out = if l + 1 == self.layers.len() {
                z
            } else {
                z.iter().map(|&v| self.config.activation.apply(v)).collect()
            };
            activations.push(out);
        }
        let prefix = PrefixPrompt::new(
            self.config.prompt_len,
            self.config.model_dim,
            activations.last().unwrap().clone(),
        )?;
        Ok((prefix, MlpCache { activations, pre }))
    }

    /// Accumulates parameter gradients for the scalar objective whose
    /// gradient w.r.t. the prefix entries is `d_prefix`.
    pub fn backward(&self, cache: &MlpCache, d_prefix: &[f64], grads: &mut MlpGrads) {
        debug_assert_eq!(d_prefix.len(), self.config.prompt_len * self.config.model_dim);
        let mut dz = d_prefix.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            // Output layer is linear; hidden layers apply the activation.
            if l + 1 != self.layers.len() {
                for (d, p) in dz.iter_mut().zip(&cache.pre[l]) {
                    *d *= self.config.activation.derivative(*p);
                }
            }
            let input = &cache.activations[l];
            nn::linear_grad_w(&mut grads.w[l], &dz, input, layer.out_dim, layer.in_dim);
            for (gb, d) in grads.b[l].iter_mut().zip(&dz) {
                *gb += d;
            }
            if l > 0 {
                let mut dx = alloc::vec![0.0; layer.in_dim];
                nn::linear_grad_x(&mut dx, &dz, &layer.w, layer.out_dim, layer.in_dim);
                dz = dx;
            }
        }
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w: self.layers.iter().map(|l| alloc::vec![0.0; l.w.len()]).collect(),
            b: self.layers.iter().map(|l| alloc::vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn tensor_shapes(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut named: Vec<(String, &[f64])> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            named.push((alloc::format!("mlp.{i}.w"), l.w.as_slice()));
            named.push((alloc::format!("mlp.{i}.b"), l.b.as_slice()));
        }
        let borrowed: Vec<(&str, &[f64])> = named.iter().map(|(n, d)| (n.as_str(), *d)).collect();
        hash::hash_tensors(&borrowed)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.config.validate()?;
        let dims = self.config.dims();
        if self.layers.len() + 1 != dims.len() {
            return Err(Error::InvalidConfig("MLP layer count disagrees with config".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.in_dim != dims[l] || layer.out_dim != dims[l + 1] {
                return Err(Error::InvalidConfig(alloc::format!("MLP layer {l} has wrong shape")));
            }
            if layer.w.len() != layer.in_dim * layer.out_dim || layer.b.len() != layer.out_dim {
                return Err(Error::InvalidConfig(alloc::format!("MLP layer {l} has wrong size")));
            }
            if layer.w.iter().chain(&layer.b).any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("MLP weights contain non-finite values".into()));
            }
        }
        Ok(())
    }
}

/// The pipeline's user-conditioning step: P = MLP(u).
pub fn prompt_from_vector(
    u: &UserFeatureVector,
    params: &PromptModelParams,
) -> Result<PrefixPrompt, Error> {
    let (prefix, _) = params.forward(&u.values)?;
    Ok(prefix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn feature(values: Vec<f64>) -> UserFeatureVector {
        UserFeatureVector { values, dictionary_id: 0 }
    }

    #[test]
    fn output_shape_is_prompt_by_dim() {
        let cfg = MlpConfig::new(8, 4, 16);
        let params = PromptModelParams::init(cfg, 1).unwrap();
        let u = feature(vec![0.125; 8]);
        let p = prompt_from_vector(&u, &params).unwrap();
        assert_eq!(p.prompt_len(), 4);
        assert_eq!(p.model_dim(), 16);
        assert_eq!(p.data().len(), 64);
    }

    #[test]
    fn untrained_model_emits_zero_prefix() {
        let params = PromptModelParams::init(MlpConfig::new(8, 4, 16), 3).unwrap();
        let p = prompt_from_vector(&feature(vec![0.5; 8]), &params).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let params = PromptModelParams::init(MlpConfig::new(8, 4, 16), 1).unwrap();
        let err = prompt_from_vector(&feature(vec![0.1; 5]), &params).unwrap_err();
        assert_eq!(err, Error::ShapeMismatch { expected: 8, got: 5 });
    }

    #[test]
    fn tanh_mlp_is_nonlinear_in_scale() {
        // Train one step away from the zero output layer, then scaling the
        // input must not scale the output linearly.
        let cfg = MlpConfig::new(6, 2, 8);
        let mut params = PromptModelParams::init(cfg, 7).unwrap();
        let u = feature(vec![0.3, 0.1, 0.2, 0.05, 0.15, 0.2]);
        let (_, cache) = params.forward(&u.values).unwrap();
        let mut grads = params.zero_grads();
        params.backward(&cache, &vec![1.0; 16], &mut grads);
        {
            let tensors = grads.tensors();
            let mut opt = nn::AdamW::new(0.5, 0.0, 0, &params.tensor_shapes());
            let mut slices = params.tensors_mut();
            opt.step(&mut slices, &tensors);
        }
        let p1 = prompt_from_vector(&u, &params).unwrap();
        let doubled = feature(u.values.iter().map(|v| v * 2.0).collect());
        let p2 = prompt_from_vector(&doubled, &params).unwrap();
        assert!(!p1.is_zero());
        let linear_scaled: Vec<f64> = p1.data().iter().map(|v| v * 2.0).collect();
        let diff: f64 = p2
            .data()
            .iter()
            .zip(&linear_scaled)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6, "tanh MLP behaved linearly (diff {diff})");
    }

    #[test]
    fn forward_is_deterministic() {
        let params = PromptModelParams::init(MlpConfig::new(5, 3, 4), 11).unwrap();
        let u = feature(vec![0.2, 0.3, 0.1, 0.25, 0.15]);
        let a = prompt_from_vector(&u, &params).unwrap();
        let b = prompt_from_vector(&u, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = MlpConfig { hidden_dims: vec![7], ..MlpConfig::new(5, 2, 3) };
        let mut params = PromptModelParams::init(cfg, 13).unwrap();
        // Give the zero output layer some structure first.
        {
            let shapes = params.tensor_shapes();
            let mut rng = Rng::new(5);
            for t in params.tensors_mut() {
                for v in t.iter_mut() {
                    *v += rng.gauss(0.3);
                }
            }
            assert_eq!(shapes.len(), 4);
        }
        let u = vec![0.1, -0.4, 0.3, 0.7, -0.2];
        // Objective: weighted sum of prefix entries.
        let weights: Vec<f64> = (0..6).map(|i| 0.5 - 0.17 * i as f64).collect();
        let objective = |p: &PromptModelParams| -> f64 {
            let (prefix, _) = p.forward(&u).unwrap();
            prefix.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = params.forward(&u).unwrap();
        let mut grads = params.zero_grads();
        params.backward(&cache, &weights, &mut grads);
        let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();

        let h = 1e-6;
        let mut idx = 0;
        let n_tensors = params.tensor_shapes().len();
        for t in 0..n_tensors {
            let len = params.tensor_shapes()[t];
            for i in 0..len {
                let mut plus = params.clone();
                plus.tensors_mut()[t][i] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[t][i] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let a = analytic[idx];
                let denom = (fd.abs() + a.abs()).max(1e-8);
                assert!(
                    (fd - a).abs() / denom < 1e-5,
                    "tensor {t} element {i}: fd {fd} vs analytic {a}"
                );
                idx += 1;
            }
        }
    }
}
