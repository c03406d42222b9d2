//! Attention and transformer decoder layers built on [`Graph`].
//!
//! Layers are stateless: parameters live in a [`ParamStore`] under a name
//! prefix, registered once with [`DecoderLayerSpec::register`] and looked up by
//! name on every forward pass.
//!
//! ```text
//! x ─ LN ─ self-attn ─ drop ─(+)─ LN ─ cross-attn ─ drop ─(+)─ LN ─ FFN ─ drop ─(+)─ out
//! └───────────────────────────┘ └─────────────────────────┘ └──────────────────┘
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttentionMask, Graph, Matrix, NodeId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Train/inference switch plus the generator that drives dropout.
#[derive(Clone, Debug)]
pub struct ForwardMode {
    train: bool,
    rng: ChaCha8Rng,
}

impl ForwardMode {
    pub fn inference() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn dropout<T: Scalar>(&mut self, g: &mut Graph<'_, T>, x: NodeId, rate: f64) -> NodeId {
        if self.train && rate > 0.0 {
            g.dropout(x, rate, &mut self.rng)
        } else {
            x
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderLayerSpec {
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout_rate: f64,
}

impl DecoderLayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.ff_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Scalars in one attention block: `wq, wk, wv, wo` plus `bq, bv, bo`.
    pub fn attention_param_count(&self) -> usize {
        4 * self.d_model * self.d_model + 3 * self.d_model
    }

    /// Scalars in one decoder layer (three norms, two attention blocks, FFN).
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        3 * 2 * d + 2 * self.attention_param_count() + 2 * d * self.ff_dim + self.ff_dim + d
    }

    pub fn register<T: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut R,
    ) -> Result<()> {
        self.validate()?;
        let d = self.d_model;
        for ln in ["ln1", "ln2", "ln3"] {
            register_layer_norm(store, &format!("{prefix}.{ln}"), d)?;
        }
        for attn in ["self_attn", "cross_attn"] {
            register_attention(store, &format!("{prefix}.{attn}"), d, rng)?;
        }
        register_linear(store, &format!("{prefix}.ff1"), d, self.ff_dim, rng)?;
        register_linear(store, &format!("{prefix}.ff2"), self.ff_dim, d, rng)?;
        Ok(())
    }
}

pub fn register_layer_norm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, d: usize) -> Result<()> {
    store.insert(format!("{prefix}.g"), Matrix::filled(1, d, T::one()))?;
    store.insert(format!("{prefix}.b"), Matrix::zeros(1, d))?;
    Ok(())
}

pub fn register_linear<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert_uniform(format!("{prefix}.w"), d_in, d_out, d_in, rng)?;
    store.insert_uniform(format!("{prefix}.b"), 1, d_out, d_in, rng)?;
    Ok(())
}

/// Key projection carries no bias: a per-query constant shift of the logits
/// cancels in the softmax, so such a bias would never receive gradient.
pub fn register_attention<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert_uniform(format!("{prefix}.wq"), d, d, d, rng)?;
    store.insert_uniform(format!("{prefix}.bq"), 1, d, d, rng)?;
    store.insert_uniform(format!("{prefix}.wk"), d, d, d, rng)?;
    store.insert_uniform(format!("{prefix}.wv"), d, d, d, rng)?;
    store.insert_uniform(format!("{prefix}.bv"), 1, d, d, rng)?;
    store.insert_uniform(format!("{prefix}.wo"), d, d, d, rng)?;
    store.insert_uniform(format!("{prefix}.bo"), 1, d, d, rng)?;
    Ok(())
}

pub fn linear<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, prefix: &str) -> Result<NodeId> {
    let w = g.param(&format!("{prefix}.w"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

pub fn layer_norm<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, prefix: &str) -> Result<NodeId> {
    let gamma = g.param(&format!("{prefix}.g"))?;
    let beta = g.param(&format!("{prefix}.b"))?;
    g.layer_norm(x, gamma, beta)
}

/// Scaled dot-product attention with `heads` heads. Rows of `key`/`value`
/// hidden from every query by `mask` have no influence on the output.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    query: NodeId,
    key: NodeId,
    value: NodeId,
    mask: &AttentionMask,
    prefix: &str,
    heads: usize,
) -> Result<NodeId> {
    let (q_rows, d) = g.value(query).shape();
    let (k_rows, k_cols) = g.value(key).shape();
    let (v_rows, v_cols) = g.value(value).shape();
    if k_rows != v_rows || k_rows != mask.key_len() || q_rows != mask.query_len() {
        return Err(Error::shape(format!(
            "attention q {q_rows} rows, k {k_rows}, v {v_rows}, mask {}x{}",
            mask.query_len(),
            mask.key_len()
        )));
    }
    if k_cols != d || v_cols != d || heads == 0 || d % heads != 0 {
        return Err(Error::shape(format!(
            "attention widths q {d}, k {k_cols}, v {v_cols} with {heads} heads"
        )));
    }
    let dh = d / heads;
    let wq = g.param(&format!("{prefix}.wq"))?;
    let bq = g.param(&format!("{prefix}.bq"))?;
    let wk = g.param(&format!("{prefix}.wk"))?;
    let wv = g.param(&format!("{prefix}.wv"))?;
    let bv = g.param(&format!("{prefix}.bv"))?;
    let wo = g.param(&format!("{prefix}.wo"))?;
    let bo = g.param(&format!("{prefix}.bo"))?;

    let q = g.matmul(query, wq)?;
    let q = g.add_row(q, bq)?;
    let k = g.matmul(key, wk)?;
    let v = g.matmul(value, wv)?;
    let v = g.add_row(v, bv)?;

    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let scores = g.matmul_bt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let weights = g.masked_softmax(scores, mask)?;
        head_outputs.push(g.matmul(weights, vh)?);
    }
    let merged = if heads == 1 {
        head_outputs[0]
    } else {
        g.concat_cols(&head_outputs)?
    };
    let out = g.matmul(merged, wo)?;
    g.add_row(out, bo)
}

/// Pre-norm transformer decoder layer. `memory = None` disables the
/// cross-attention sub-block entirely.
#[allow(clippy::too_many_arguments)]
pub fn transformer_decoder_layer<T: Scalar>(
    g: &mut Graph<'_, T>,
    query_seq: NodeId,
    memory: Option<(NodeId, &AttentionMask)>,
    self_mask: &AttentionMask,
    spec: &DecoderLayerSpec,
    prefix: &str,
    mode: &mut ForwardMode,
) -> Result<NodeId> {
    let (rows, d) = g.value(query_seq).shape();
    if d != spec.d_model {
        return Err(Error::shape(format!(
            "decoder layer expects width {}, got {d}",
            spec.d_model
        )));
    }
    if self_mask.query_len() != rows || self_mask.key_len() != rows {
        return Err(Error::shape("self mask does not match query sequence"));
    }

    let h = layer_norm(g, query_seq, &format!("{prefix}.ln1"))?;
    let a = multi_head_attention(g, h, h, h, self_mask, &format!("{prefix}.self_attn"), spec.heads)?;
    let a = mode.dropout(g, a, spec.dropout_rate);
    let mut x = g.add(query_seq, a)?;

    if let Some((mem, cross_mask)) = memory {
        let h = layer_norm(g, x, &format!("{prefix}.ln2"))?;
        let c = multi_head_attention(g, h, mem, mem, cross_mask, &format!("{prefix}.cross_attn"), spec.heads)?;
        let c = mode.dropout(g, c, spec.dropout_rate);
        x = g.add(x, c)?;
    }

    let h = layer_norm(g, x, &format!("{prefix}.ln3"))?;
    let f = linear(g, h, &format!("{prefix}.ff1"))?;
    let f = g.gelu(f);
    let f = linear(g, f, &format!("{prefix}.ff2"))?;
    let f = mode.dropout(g, f, spec.dropout_rate);
    g.add(x, f)
}
