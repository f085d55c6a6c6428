//! Small decoder-only causal transformer.
//!
//! Pre-norm blocks: RMSNorm -> multi-head causal attention -> residual,
//! RMSNorm -> squared-ReLU MLP -> residual. The prefix prompt enters as K
//! static rows that every layer's attention can read: each layer projects
//! the normalized prefix rows through its own key/value maps and prepends
//! them to the attended sequence. Token positions are unaffected by the
//! prefix (positional embeddings index token order), so a pipeline serves
//! tokens at the same positions whether or not a prefix is attached, and a
//! base LM pretrained without prefixes keeps its behavior.
//!
//! Two execution paths share the same arithmetic: a full-sequence forward
//! that caches activations for backprop, and an incremental [`DecodeState`]
//! that feeds one row at a time for generation.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::hash;
use crate::math;
use crate::nn;
use crate::rng::Rng;
use crate::text::{TokenId, Vocab};

use super::PrefixPrompt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub model_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_window: usize,
    /// Tied: the embedding matrix doubles as the output head.
    pub tied_head: bool,
}

impl LmConfig {
    pub fn toy_default() -> Self {
        Self { model_dim: 64, n_layers: 2, n_heads: 4, context_window: 128, tied_head: true }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.model_dim == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return Err(Error::InvalidConfig("LM dimensions must be nonzero".into()));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(Error::InvalidConfig("model_dim must be divisible by n_heads".into()));
        }
        if self.context_window < 4 {
            return Err(Error::InvalidConfig("context window too small".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    fn ff_dim(&self) -> usize {
        4 * self.model_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerParams {
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
    fc1: Vec<f64>,
    fc2: Vec<f64>,
}

/// Weights, vocabulary, and architecture of the base LM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmParams {
    pub config: LmConfig,
    pub vocab: Vocab,
    wte: Vec<f64>,
    wpe: Vec<f64>,
    layers: Vec<LayerParams>,
    /// Present only when `config.tied_head` is false.
    head: Option<Vec<f64>>,
}

/// Gradient buffers mirroring [`LmParams`].
#[derive(Debug, Clone)]
pub struct LmGrads {
    wte: Vec<f64>,
    wpe: Vec<f64>,
    layers: Vec<LayerParams>,
    head: Option<Vec<f64>>,
}

impl LmGrads {
    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_flat_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    fn tensors_flat_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = alloc::vec![&mut self.wte, &mut self.wpe];
        for l in &mut self.layers {
            out.extend([&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.fc1, &mut l.fc2]);
        }
        if let Some(h) = &mut self.head {
            out.push(h);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = alloc::vec![&self.wte, &self.wpe];
        for l in &self.layers {
            out.extend([
                l.wq.as_slice(),
                l.wk.as_slice(),
                l.wv.as_slice(),
                l.wo.as_slice(),
                l.fc1.as_slice(),
                l.fc2.as_slice(),
            ]);
        }
        if let Some(h) = &self.head {
            out.push(h);
        }
        out
    }
}

/// Normalized prefix rows and their per-layer key/value projections.
struct PrefixState {
    /// rmsnorm of each prefix row: [K][d].
    normed: Vec<Vec<f64>>,
    /// Inverse RMS per row, for the backward pass.
    inv: Vec<f64>,
    /// Per layer: keys and values per row: [L][K][d].
    keys: Vec<Vec<Vec<f64>>>,
    vals: Vec<Vec<Vec<f64>>>,
}

struct LayerCache {
    x_in: Vec<Vec<f64>>,
    xn_attn: Vec<Vec<f64>>,
    inv_attn: Vec<f64>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// attn[h][i]: softmax weights of query i over [K prefix rows] ++
    /// [token rows 0..=i].
    attn: Vec<Vec<Vec<f64>>>,
    ho: Vec<Vec<f64>>,
    x_mid: Vec<Vec<f64>>,
    xn_mlp: Vec<Vec<f64>>,
    inv_mlp: Vec<f64>,
    h1: Vec<Vec<f64>>,
    h1a: Vec<Vec<f64>>,
    x_out: Vec<Vec<f64>>,
}

/// Activations of one full-sequence forward pass.
pub struct ForwardCache {
    prefix_len: usize,
    tokens: Vec<TokenId>,
    prefix: Option<PrefixState>,
    layers: Vec<LayerCache>,
}

impl LmParams {
    pub fn init(config: LmConfig, vocab: Vocab, seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let d = config.model_dim;
        let v = vocab.len();
        let mut rng = Rng::derive(seed, &[0x4c4d]);
        let mut gauss = |n: usize, std: f64| -> Vec<f64> { (0..n).map(|_| rng.gauss(std)).collect() };
        let wte = gauss(v * d, 0.02);
        let wpe = gauss(config.context_window * d, 0.02);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: gauss(d * d, 0.02),
                wk: gauss(d * d, 0.02),
                wv: gauss(d * d, 0.02),
                // Zero-initialized output projections keep early training stable.
                wo: alloc::vec![0.0; d * d],
                fc1: gauss(config.ff_dim() * d, 0.02),
                fc2: alloc::vec![0.0; d * config.ff_dim()],
            })
            .collect();
        let head = if config.tied_head { None } else { Some(gauss(v * d, 0.02)) };
        Ok(Self { config, vocab, wte, wpe, layers, head })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn head_matrix(&self) -> &[f64] {
        match &self.head {
            Some(h) => h,
            None => &self.wte,
        }
    }

    pub fn zero_grads(&self) -> LmGrads {
        LmGrads {
            wte: alloc::vec![0.0; self.wte.len()],
            wpe: alloc::vec![0.0; self.wpe.len()],
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: alloc::vec![0.0; l.wq.len()],
                    wk: alloc::vec![0.0; l.wk.len()],
                    wv: alloc::vec![0.0; l.wv.len()],
                    wo: alloc::vec![0.0; l.wo.len()],
                    fc1: alloc::vec![0.0; l.fc1.len()],
                    fc2: alloc::vec![0.0; l.fc2.len()],
                })
                .collect(),
            head: self.head.as_ref().map(|h| alloc::vec![0.0; h.len()]),
        }
    }

    pub fn tensor_shapes(&self) -> Vec<usize> {
        let mut shapes = alloc::vec![self.wte.len(), self.wpe.len()];
        for l in &self.layers {
            shapes.extend([l.wq.len(), l.wk.len(), l.wv.len(), l.wo.len(), l.fc1.len(), l.fc2.len()]);
        }
        if let Some(h) = &self.head {
            shapes.push(h.len());
        }
        shapes
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = alloc::vec![self.wte.as_mut_slice(), self.wpe.as_mut_slice()];
        for l in &mut self.layers {
            out.extend([
                l.wq.as_mut_slice(),
                l.wk.as_mut_slice(),
                l.wv.as_mut_slice(),
                l.wo.as_mut_slice(),
                l.fc1.as_mut_slice(),
                l.fc2.as_mut_slice(),
            ]);
        }
        if let Some(h) = &mut self.head {
            out.push(h.as_mut_slice());
        }
        out
    }

    pub fn fingerprint(&self) -> u64 {
        let mut named: Vec<(String, &[f64])> =
            alloc::vec![("wte".into(), self.wte.as_slice()), ("wpe".into(), self.wpe.as_slice())];
        for (i, l) in self.layers.iter().enumerate() {
            named.push((alloc::format!("l{i}.wq"), l.wq.as_slice()));
            named.push((alloc::format!("l{i}.wk"), l.wk.as_slice()));
            named.push((alloc::format!("l{i}.wv"), l.wv.as_slice()));
            named.push((alloc::format!("l{i}.wo"), l.wo.as_slice()));
            named.push((alloc::format!("l{i}.fc1"), l.fc1.as_slice()));
            named.push((alloc::format!("l{i}.fc2"), l.fc2.as_slice()));
        }
        if let Some(h) = &self.head {
            named.push(("head".into(), h.as_slice()));
        }
        let borrowed: Vec<(&str, &[f64])> = named.iter().map(|(n, d)| (n.as_str(), *d)).collect();
        let mut acc = hash::Fnv1a::new();
        acc.write_u64(hash::hash_tensors(&borrowed));
        acc.write_u64(self.vocab.fingerprint());
        acc.finish()
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.config.validate()?;
        let d = self.config.model_dim;
        let v = self.vocab.len();
        let checks = [
            (self.wte.len(), v * d),
            (self.wpe.len(), self.config.context_window * d),
        ];
        for (got, expected) in checks {
            if got != expected {
                return Err(Error::ShapeMismatch { expected, got });
            }
        }
        if self.layers.len() != self.config.n_layers {
            return Err(Error::InvalidConfig("layer count disagrees with config".into()));
        }
        match (&self.head, self.config.tied_head) {
            (Some(h), false) => {
                if h.len() != v * d {
                    return Err(Error::ShapeMismatch { expected: v * d, got: h.len() });
                }
            }
            (None, true) => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "head presence disagrees with tied_head declaration".into(),
                ))
            }
        }
        for l in &self.layers {
            for (t, want) in [
                (&l.wq, d * d),
                (&l.wk, d * d),
                (&l.wv, d * d),
                (&l.wo, d * d),
                (&l.fc1, self.config.ff_dim() * d),
                (&l.fc2, d * self.config.ff_dim()),
            ] {
                if t.len() != want {
                    return Err(Error::ShapeMismatch { expected: want, got: t.len() });
                }
                if t.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidConfig("LM weights contain non-finite values".into()));
                }
            }
        }
        Ok(())
    }

    fn check_lengths(&self, prefix: Option<&PrefixPrompt>, n_tokens: usize) -> Result<usize, Error> {
        let prefix_len = match prefix {
            Some(p) => {
                if p.model_dim() != self.config.model_dim {
                    return Err(Error::ShapeMismatch {
                        expected: self.config.model_dim,
                        got: p.model_dim(),
                    });
                }
                p.prompt_len()
            }
            None => 0,
        };
        if n_tokens == 0 {
            return Err(Error::InvalidConfig("forward requires at least one token".into()));
        }
        let needed = prefix_len + n_tokens;
        if needed > self.config.context_window {
            return Err(Error::ContextOverflow { needed, window: self.config.context_window });
        }
        Ok(prefix_len)
    }

    /// Normalize the prefix rows and project them through every layer's
    /// key/value maps.
    fn prefix_state(&self, prefix: &PrefixPrompt) -> PrefixState {
        let d = self.config.model_dim;
        let k_rows = prefix.prompt_len();
        let mut normed = Vec::with_capacity(k_rows);
        let mut inv = Vec::with_capacity(k_rows);
        for r in 0..k_rows {
            let (n, i) = nn::rmsnorm(prefix.row(r));
            normed.push(n);
            inv.push(i);
        }
        let mut keys = Vec::with_capacity(self.layers.len());
        let mut vals = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            keys.push(normed.iter().map(|n| nn::linear(&layer.wk, n, d, d)).collect());
            vals.push(normed.iter().map(|n| nn::linear(&layer.wv, n, d, d)).collect());
        }
        PrefixState { normed, inv, keys, vals }
    }

    fn embed_tokens(&self, tokens: &[TokenId]) -> Vec<Vec<f64>> {
        let d = self.config.model_dim;
        tokens
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                let tok = tok as usize;
                let pe = &self.wpe[t * d..(t + 1) * d];
                let emb = &self.wte[tok * d..(tok + 1) * d];
                emb.iter().zip(pe).map(|(a, b)| a + b).collect()
            })
            .collect()
    }

    /// One transformer block over all token rows. `prefix_kv` supplies this
    /// layer's prefix keys/values (attended before the token keys).
    fn run_layer(
        &self,
        layer: &LayerParams,
        x: Vec<Vec<f64>>,
        prefix_kv: Option<(&[Vec<f64>], &[Vec<f64>])>,
    ) -> LayerCache {
        let cfg = &self.config;
        let d = cfg.model_dim;
        let hd = cfg.head_dim();
        let scale = math::sqrt(hd as f64);
        let total = x.len();
        let k_rows = prefix_kv.map_or(0, |(pk, _)| pk.len());

        let mut xn_attn = Vec::with_capacity(total);
        let mut inv_attn = Vec::with_capacity(total);
        let mut q = Vec::with_capacity(total);
        let mut k = Vec::with_capacity(total);
        let mut v = Vec::with_capacity(total);
        for row in &x {
            let (norm, inv) = nn::rmsnorm(row);
            q.push(nn::linear(&layer.wq, &norm, d, d));
            k.push(nn::linear(&layer.wk, &norm, d, d));
            v.push(nn::linear(&layer.wv, &norm, d, d));
            xn_attn.push(norm);
            inv_attn.push(inv);
        }

        let mut attn: Vec<Vec<Vec<f64>>> = alloc::vec![Vec::with_capacity(total); cfg.n_heads];
        let mut ho = alloc::vec![alloc::vec![0.0; d]; total];
        for h in 0..cfg.n_heads {
            let lo = h * hd;
            let hi = lo + hd;
            for i in 0..total {
                let qi = &q[i][lo..hi];
                let mut scores = Vec::with_capacity(k_rows + i + 1);
                if let Some((pk, _)) = prefix_kv {
                    for row in pk {
                        scores.push(
                            qi.iter().zip(&row[lo..hi]).map(|(a, b)| a * b).sum::<f64>() / scale,
                        );
                    }
                }
                for kj in k.iter().take(i + 1) {
                    scores
                        .push(qi.iter().zip(&kj[lo..hi]).map(|(a, b)| a * b).sum::<f64>() / scale);
                }
                let probs = nn::softmax(&scores);
                if let Some((_, pv)) = prefix_kv {
                    for (r, row) in pv.iter().enumerate() {
                        let p = probs[r];
                        for (slot, vv) in ho[i][lo..hi].iter_mut().zip(&row[lo..hi]) {
                            *slot += p * vv;
                        }
                    }
                }
                for (j, vj) in v.iter().take(i + 1).enumerate() {
                    let p = probs[k_rows + j];
                    for (slot, vv) in ho[i][lo..hi].iter_mut().zip(&vj[lo..hi]) {
                        *slot += p * vv;
                    }
                }
                attn[h].push(probs);
            }
        }

        let mut x_mid = Vec::with_capacity(total);
        for (row, h_row) in x.iter().zip(&ho) {
            let proj = nn::linear(&layer.wo, h_row, d, d);
            x_mid.push(row.iter().zip(&proj).map(|(a, b)| a + b).collect::<Vec<f64>>());
        }

        let ff = cfg.ff_dim();
        let mut xn_mlp = Vec::with_capacity(total);
        let mut inv_mlp = Vec::with_capacity(total);
        let mut h1 = Vec::with_capacity(total);
        let mut h1a = Vec::with_capacity(total);
        let mut x_out = Vec::with_capacity(total);
        for row in &x_mid {
            let (norm, inv) = nn::rmsnorm(row);
            let z = nn::linear(&layer.fc1, &norm, ff, d);
            let za: Vec<f64> = z.iter().map(|&t| if t > 0.0 { t * t } else { 0.0 }).collect();
            let proj = nn::linear(&layer.fc2, &za, d, ff);
            x_out.push(row.iter().zip(&proj).map(|(a, b)| a + b).collect::<Vec<f64>>());
            xn_mlp.push(norm);
            inv_mlp.push(inv);
            h1.push(z);
            h1a.push(za);
        }

        LayerCache { x_in: x, xn_attn, inv_attn, q, k, v, attn, ho, x_mid, xn_mlp, inv_mlp, h1, h1a, x_out }
    }

    /// Final hidden state for every token row.
    fn forward_hidden(
        &self,
        prefix: Option<&PrefixPrompt>,
        tokens: &[TokenId],
    ) -> Result<ForwardCache, Error> {
        let prefix_len = self.check_lengths(prefix, tokens.len())?;
        let prefix_state = prefix.map(|p| self.prefix_state(p));
        let mut x = self.embed_tokens(tokens);
        let mut layers = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let kv = prefix_state
                .as_ref()
                .map(|s| (s.keys[li].as_slice(), s.vals[li].as_slice()));
            let cache = self.run_layer(layer, x, kv);
            x = cache.x_out.clone();
            layers.push(cache);
        }
        Ok(ForwardCache { prefix_len, tokens: tokens.to_vec(), prefix: prefix_state, layers })
    }

    /// Logits over the vocabulary from one hidden row.
    pub fn head_logits(&self, hidden: &[f64]) -> Vec<f64> {
        nn::linear(self.head_matrix(), hidden, self.vocab.len(), self.config.model_dim)
    }

    fn hidden_row<'c>(&self, cache: &'c ForwardCache, t: usize) -> &'c [f64] {
        &cache.layers.last().expect("n_layers >= 1").x_out[t]
    }

    /// Per-token-position logits: `logits[t]` scores the token following
    /// token `t`. Shape is tokens.len() x vocab_size.
    pub fn forward_logits(
        &self,
        prefix: Option<&PrefixPrompt>,
        tokens: &[TokenId],
    ) -> Result<(Vec<Vec<f64>>, ForwardCache), Error> {
        let cache = self.forward_hidden(prefix, tokens)?;
        let logits = (0..tokens.len()).map(|t| self.head_logits(self.hidden_row(&cache, t))).collect();
        Ok((logits, cache))
    }

    /// Logits at selected token positions only (the trainer skips masked-out
    /// positions; roughly half the head work on typical examples).
    pub fn forward_logits_at(
        &self,
        prefix: Option<&PrefixPrompt>,
        tokens: &[TokenId],
        positions: &[usize],
    ) -> Result<(Vec<Vec<f64>>, ForwardCache), Error> {
        let cache = self.forward_hidden(prefix, tokens)?;
        let logits = positions
            .iter()
            .map(|&t| self.head_logits(self.hidden_row(&cache, t)))
            .collect();
        Ok((logits, cache))
    }

    /// Backpropagate from per-position logit gradients. `d_logits` pairs a
    /// token position with the gradient of the scalar objective w.r.t. that
    /// position's logits. When `train_lm` is false, LM parameter gradients
    /// are skipped but the prefix gradient is still produced.
    ///
    /// Returns the gradient w.r.t. the prefix entries (flat K x d; empty when
    /// no prefix was used).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &[(usize, Vec<f64>)],
        grads: &mut LmGrads,
        train_lm: bool,
    ) -> Vec<f64> {
        let cfg = &self.config;
        let d = cfg.model_dim;
        let hd = cfg.head_dim();
        let ff = cfg.ff_dim();
        let scale = math::sqrt(hd as f64);
        let total = cache.tokens.len();
        let k_rows = cache.prefix_len;
        let v_size = self.vocab.len();

        // Head backward into the final hidden states.
        let mut dx = alloc::vec![alloc::vec![0.0; d]; total];
        let head = self.head_matrix();
        for (t, dl) in d_logits {
            debug_assert_eq!(dl.len(), v_size);
            let hidden = self.hidden_row(cache, *t);
            nn::linear_grad_x(&mut dx[*t], dl, head, v_size, d);
            if train_lm {
                let target = match (&mut grads.head, cfg.tied_head) {
                    (Some(h), _) => h,
                    (None, true) => &mut grads.wte,
                    (None, false) => unreachable!("validated: untied head has a matrix"),
                };
                nn::linear_grad_w(target, dl, hidden, v_size, d);
            }
        }

        // Gradient w.r.t. the normalized prefix rows, accumulated across
        // layers and positions.
        let mut d_prefix_normed = alloc::vec![alloc::vec![0.0; d]; k_rows];

        for lg_idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[lg_idx];
            let lc = &cache.layers[lg_idx];
            // MLP block.
            let mut dx_mid = alloc::vec![alloc::vec![0.0; d]; total];
            for pos in 0..total {
                let dy = &dx[pos];
                if train_lm {
                    nn::linear_grad_w(&mut grads.layers[lg_idx].fc2, dy, &lc.h1a[pos], d, ff);
                }
                let mut d_h1a = alloc::vec![0.0; ff];
                nn::linear_grad_x(&mut d_h1a, dy, &layer.fc2, d, ff);
                let d_h1: Vec<f64> = d_h1a
                    .iter()
                    .zip(&lc.h1[pos])
                    .map(|(g, &z)| if z > 0.0 { g * 2.0 * z } else { 0.0 })
                    .collect();
                if train_lm {
                    nn::linear_grad_w(&mut grads.layers[lg_idx].fc1, &d_h1, &lc.xn_mlp[pos], ff, d);
                }
                let mut d_norm = alloc::vec![0.0; d];
                nn::linear_grad_x(&mut d_norm, &d_h1, &layer.fc1, ff, d);
                let d_res = nn::rmsnorm_backward(&d_norm, &lc.x_mid[pos], lc.inv_mlp[pos]);
                for i in 0..d {
                    dx_mid[pos][i] = dx[pos][i] + d_res[i];
                }
            }

            // Attention block.
            let mut d_ho = alloc::vec![alloc::vec![0.0; d]; total];
            for pos in 0..total {
                if train_lm {
                    nn::linear_grad_w(&mut grads.layers[lg_idx].wo, &dx_mid[pos], &lc.ho[pos], d, d);
                }
                nn::linear_grad_x(&mut d_ho[pos], &dx_mid[pos], &layer.wo, d, d);
            }

            let prefix_state = cache.prefix.as_ref();
            let mut d_q = alloc::vec![alloc::vec![0.0; d]; total];
            let mut d_k = alloc::vec![alloc::vec![0.0; d]; total];
            let mut d_v = alloc::vec![alloc::vec![0.0; d]; total];
            let mut d_pk = alloc::vec![alloc::vec![0.0; d]; k_rows];
            let mut d_pv = alloc::vec![alloc::vec![0.0; d]; k_rows];
            for h in 0..cfg.n_heads {
                let lo = h * hd;
                let hi = lo + hd;
                for i in 0..total {
                    let probs = &lc.attn[h][i];
                    let dho = &d_ho[i][lo..hi];
                    let n_slots = k_rows + i + 1;
                    debug_assert_eq!(probs.len(), n_slots);
                    // d wrt attention probabilities: dot of d_ho with each
                    // attended value.
                    let mut d_probs = Vec::with_capacity(n_slots);
                    for r in 0..k_rows {
                        let pv = &prefix_state.expect("prefix rows cached").vals[lg_idx][r][lo..hi];
                        d_probs.push(dho.iter().zip(pv).map(|(a, b)| a * b).sum::<f64>());
                    }
                    for j in 0..=i {
                        let vj = &lc.v[j][lo..hi];
                        d_probs.push(dho.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>());
                    }
                    let dot: f64 = probs.iter().zip(&d_probs).map(|(p, g)| p * g).sum();
                    let qi = &lc.q[i][lo..hi];
                    for (slot, (&p, &dp)) in probs.iter().zip(&d_probs).enumerate() {
                        let d_score = p * (dp - dot) / scale;
                        if slot < k_rows {
                            let state = prefix_state.expect("prefix rows cached");
                            if d_score != 0.0 {
                                let pk = &state.keys[lg_idx][slot][lo..hi];
                                for t in 0..hd {
                                    d_q[i][lo + t] += d_score * pk[t];
                                    d_pk[slot][lo + t] += d_score * qi[t];
                                }
                            }
                            if p != 0.0 {
                                for t in 0..hd {
                                    d_pv[slot][lo + t] += p * dho[t];
                                }
                            }
                        } else {
                            let j = slot - k_rows;
                            if d_score != 0.0 {
                                let kj = &lc.k[j][lo..hi];
                                for t in 0..hd {
                                    d_q[i][lo + t] += d_score * kj[t];
                                    d_k[j][lo + t] += d_score * qi[t];
                                }
                            }
                            if p != 0.0 {
                                for t in 0..hd {
                                    d_v[j][lo + t] += p * dho[t];
                                }
                            }
                        }
                    }
                }
            }

            // Prefix side: project d_pk/d_pv back into the normalized rows.
            if let Some(state) = prefix_state {
                for r in 0..k_rows {
                    nn::linear_grad_x(&mut d_prefix_normed[r], &d_pk[r], &layer.wk, d, d);
                    nn::linear_grad_x(&mut d_prefix_normed[r], &d_pv[r], &layer.wv, d, d);
                    if train_lm {
                        let lg = &mut grads.layers[lg_idx];
                        nn::linear_grad_w(&mut lg.wk, &d_pk[r], &state.normed[r], d, d);
                        nn::linear_grad_w(&mut lg.wv, &d_pv[r], &state.normed[r], d, d);
                    }
                }
            }

            // Token side: project through wq/wk/wv, the norm, the residual.
            for pos in 0..total {
                let mut d_norm = alloc::vec![0.0; d];
                nn::linear_grad_x(&mut d_norm, &d_q[pos], &layer.wq, d, d);
                nn::linear_grad_x(&mut d_norm, &d_k[pos], &layer.wk, d, d);
                nn::linear_grad_x(&mut d_norm, &d_v[pos], &layer.wv, d, d);
                if train_lm {
                    let lg = &mut grads.layers[lg_idx];
                    nn::linear_grad_w(&mut lg.wq, &d_q[pos], &lc.xn_attn[pos], d, d);
                    nn::linear_grad_w(&mut lg.wk, &d_k[pos], &lc.xn_attn[pos], d, d);
                    nn::linear_grad_w(&mut lg.wv, &d_v[pos], &lc.xn_attn[pos], d, d);
                }
                let d_res = nn::rmsnorm_backward(&d_norm, &lc.x_in[pos], lc.inv_attn[pos]);
                for i in 0..d {
                    dx[pos][i] = dx_mid[pos][i] + d_res[i];
                }
            }
        }

        // Embedding-level gradients (wpe rows pair with token order).
        if train_lm {
            for (t, &tok) in cache.tokens.iter().enumerate() {
                for i in 0..d {
                    grads.wpe[t * d + i] += dx[t][i];
                }
                let row = &mut grads.wte[tok as usize * d..(tok as usize + 1) * d];
                for i in 0..d {
                    row[i] += dx[t][i];
                }
            }
        }

        // Through the prefix rows' own normalization.
        let mut d_prefix = Vec::with_capacity(k_rows * d);
        if let Some(state) = cache.prefix.as_ref() {
            for r in 0..k_rows {
                // rmsnorm_backward needs the raw row; reconstruct it from the
                // normalized row and the stored inverse RMS.
                let raw: Vec<f64> = state.normed[r].iter().map(|&n| n / state.inv[r]).collect();
                let d_raw = nn::rmsnorm_backward(&d_prefix_normed[r], &raw, state.inv[r]);
                d_prefix.extend_from_slice(&d_raw);
            }
        }
        d_prefix
    }
}

/// Incremental generation state: grows one token at a time, reusing cached
/// keys/values. Prefix keys/values are computed once at prefill. Arithmetic
/// is identical to the full-sequence forward.
#[derive(Clone)]
pub struct DecodeState<'a> {
    lm: &'a LmParams,
    prefix_rows: usize,
    prefix_keys: Vec<Vec<Vec<f64>>>,
    prefix_vals: Vec<Vec<Vec<f64>>>,
    keys: Vec<Vec<Vec<f64>>>,
    vals: Vec<Vec<Vec<f64>>>,
    token_pos: usize,
}

impl<'a> DecodeState<'a> {
    pub fn new(lm: &'a LmParams) -> Self {
        let n = lm.config.n_layers;
        Self {
            lm,
            prefix_rows: 0,
            prefix_keys: alloc::vec![Vec::new(); n],
            prefix_vals: alloc::vec![Vec::new(); n],
            keys: alloc::vec![Vec::new(); n],
            vals: alloc::vec![Vec::new(); n],
            token_pos: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.token_pos
    }

    pub fn is_empty(&self) -> bool {
        self.token_pos == 0
    }

    fn push_token(&mut self, token: TokenId) -> Vec<f64> {
        let cfg = &self.lm.config;
        let d = cfg.model_dim;
        let hd = cfg.head_dim();
        let scale = math::sqrt(hd as f64);
        let emb = &self.lm.wte[token as usize * d..(token as usize + 1) * d];
        let pe = &self.lm.wpe[self.token_pos * d..(self.token_pos + 1) * d];
        let mut x: Vec<f64> = emb.iter().zip(pe).map(|(a, b)| a + b).collect();
        self.token_pos += 1;

        for (l, layer) in self.lm.layers.iter().enumerate() {
            let (norm, _) = nn::rmsnorm(&x);
            let q = nn::linear(&layer.wq, &norm, d, d);
            let k = nn::linear(&layer.wk, &norm, d, d);
            let v = nn::linear(&layer.wv, &norm, d, d);
            self.keys[l].push(k);
            self.vals[l].push(v);
            let t_len = self.keys[l].len();

            let mut ho = alloc::vec![0.0; d];
            for h in 0..cfg.n_heads {
                let lo = h * hd;
                let hi = lo + hd;
                let qi = &q[lo..hi];
                let mut scores = Vec::with_capacity(self.prefix_rows + t_len);
                for row in &self.prefix_keys[l] {
                    scores
                        .push(qi.iter().zip(&row[lo..hi]).map(|(a, b)| a * b).sum::<f64>() / scale);
                }
                for kj in &self.keys[l] {
                    scores
                        .push(qi.iter().zip(&kj[lo..hi]).map(|(a, b)| a * b).sum::<f64>() / scale);
                }
                let probs = nn::softmax(&scores);
                for (r, row) in self.prefix_vals[l].iter().enumerate() {
                    let p = probs[r];
                    for (slot, vv) in ho[lo..hi].iter_mut().zip(&row[lo..hi]) {
                        *slot += p * vv;
                    }
                }
                for (j, vj) in self.vals[l].iter().enumerate() {
                    let p = probs[self.prefix_rows + j];
                    for (slot, vv) in ho[lo..hi].iter_mut().zip(&vj[lo..hi]) {
                        *slot += p * vv;
                    }
                }
            }
            let proj = nn::linear(&layer.wo, &ho, d, d);
            let x_mid: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();

            let (norm, _) = nn::rmsnorm(&x_mid);
            let z = nn::linear(&layer.fc1, &norm, cfg.ff_dim(), d);
            let za: Vec<f64> = z.iter().map(|&t| if t > 0.0 { t * t } else { 0.0 }).collect();
            let proj = nn::linear(&layer.fc2, &za, d, cfg.ff_dim());
            x = x_mid.iter().zip(&proj).map(|(a, b)| a + b).collect();
        }
        x
    }

    fn ensure_capacity(&self, extra: usize) -> Result<(), Error> {
        let needed = self.prefix_rows + self.token_pos + extra;
        if needed > self.lm.config.context_window {
            return Err(Error::ContextOverflow { needed, window: self.lm.config.context_window });
        }
        Ok(())
    }

    /// Feed the prefix and the conditioning tokens; returns logits for the
    /// first generated token.
    pub fn prefill(
        &mut self,
        prefix: Option<&PrefixPrompt>,
        tokens: &[TokenId],
    ) -> Result<Vec<f64>, Error> {
        let prefix_len = self.lm.check_lengths(prefix, tokens.len())?;
        self.ensure_capacity(prefix_len + tokens.len())?;
        if let Some(p) = prefix {
            let state = self.lm.prefix_state(p);
            self.prefix_rows = prefix_len;
            self.prefix_keys = state.keys;
            self.prefix_vals = state.vals;
        }
        let mut hidden = Vec::new();
        for &tok in tokens {
            hidden = self.push_token(tok);
        }
        Ok(self.lm.head_logits(&hidden))
    }

    /// Append one generated token; returns logits for the next one.
    pub fn step(&mut self, token: TokenId) -> Result<Vec<f64>, Error> {
        self.ensure_capacity(1)?;
        if self.token_pos >= self.lm.config.context_window {
            return Err(Error::ContextOverflow {
                needed: self.token_pos + 1,
                window: self.lm.config.context_window,
            });
        }
        let hidden = self.push_token(token);
        Ok(self.lm.head_logits(&hidden))
    }
}
