use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, TrainConfig, Variant, WindowInput, WindowTargets};
use crate::error::{Error, Result};
use crate::nn::{
    layer_norm, linear, register_layer_norm, register_linear, transformer_decoder_layer,
    AttentionMask, ForwardMode, Gradients, Graph, Matrix, NodeId, ParamStore,
};
use crate::scalar::Scalar;

/// Per-window logits. Rows run from the oldest short-term frame to the
/// current frame `T`, then anticipation offsets `1..=δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<T = f64> {
    pub frame_logits: Matrix<T>,
    pub refined_logits: Option<Matrix<T>>,
    pub near_future_logits: Option<Matrix<T>>,
}

impl<T: Scalar> ModelOutput<T> {
    /// Logits of the final head: refined when present.
    pub fn final_logits(&self) -> &Matrix<T> {
        self.refined_logits.as_ref().unwrap_or(&self.frame_logits)
    }
}

/// Struggle probability (class 1) of a 2-logit row.
pub fn struggle_prob<T: Scalar>(logits: &[T]) -> T {
    let (a, b) = (logits[0], logits[1]);
    // softmax over two classes is the logistic of the margin
    T::one() / (T::one() + (a - b).exp())
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardNodes {
    pub frame_logits: NodeId,
    pub refined_logits: Option<NodeId>,
    pub near_future_logits: Option<NodeId>,
}

impl ForwardNodes {
    pub fn final_logits(&self) -> NodeId {
        self.refined_logits.unwrap_or(self.frame_logits)
    }
}

/// Fixed sinusoidal position table.
pub fn positional_encoding<T: Scalar>(rows: usize, d: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(rows, d);
    for p in 0..rows {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = p as f64 / rate;
            m.set(p, i, T::lit(if i % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct Model<T = f64> {
    config: ModelConfig,
    params: ParamStore<T>,
    pe_long: Matrix<T>,
    pe_short: Matrix<T>,
}

impl<T: Scalar> Model<T> {
    /// Registers freshly initialised parameters for `config`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Self::register(&config, seed)?;
        Ok(Self::assemble(config, params))
    }

    fn register(config: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let spec = config.layer_spec();
        register_linear(&mut store, "fusion", config.d_total(), d, &mut rng)?;
        store.insert_uniform("latent.q", config.n_latent, d, d, &mut rng)?;
        for i in 0..config.enc_layers {
            spec.register(&mut store, &format!("enc.{i}"), &mut rng)?;
        }
        register_layer_norm(&mut store, "enc.ln", d)?;
        if config.anticipation_len > 0 {
            store.insert_uniform("anticip.shared", 1, d, d, &mut rng)?;
            store.insert_uniform("anticip.offsets", config.anticipation_len, d, d, &mut rng)?;
        }
        for i in 0..config.dec_layers {
            spec.register(&mut store, &format!("dec.{i}"), &mut rng)?;
        }
        register_layer_norm(&mut store, "dec.ln", d)?;
        if config.variant == Variant::Cmert {
            store.insert_uniform("future.q", config.near_future_len, d, d, &mut rng)?;
            for i in 0..config.future_layers {
                spec.register(&mut store, &format!("future.{i}"), &mut rng)?;
            }
            register_layer_norm(&mut store, "future.ln", d)?;
            for i in 0..config.dec_layers {
                spec.register(&mut store, &format!("refine.{i}"), &mut rng)?;
            }
            register_layer_norm(&mut store, "refine.ln", d)?;
        }
        register_linear(&mut store, "cls", d, 2, &mut rng)?;
        Ok(store)
    }

    /// Wraps existing parameters, checking names and shapes against `config`.
    pub fn from_parts(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let reference = Self::register(&config, 0)?;
        if reference.len() != params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, config needs {}",
                params.len(),
                reference.len()
            )));
        }
        for p in reference.iter() {
            let v = params.get(&p.name)?;
            if v.shape() != p.value.shape() {
                return Err(Error::shape(format!(
                    "parameter `{}` is {:?}, expected {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(Self::assemble(config, params))
    }

    fn assemble(config: ModelConfig, params: ParamStore<T>) -> Self {
        let lt = config.long_tokens();
        let short_rows = config.near_past() + config.short_len;
        Self {
            pe_long: positional_encoding(lt, config.d_model),
            pe_short: positional_encoding(short_rows, config.d_model),
            config,
            params,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Projects raw `[slow | fast]` rows to the model width.
    pub fn fuse_rows(&self, frames: &Matrix<T>) -> Result<Matrix<T>> {
        if frames.cols() != self.config.d_total() {
            return Err(Error::shape(format!(
                "fusion expects {} + {} columns, got {}",
                self.config.d_slow,
                self.config.d_fast,
                frames.cols()
            )));
        }
        frames
            .matmul(self.params.get("fusion.w")?)?
            .add_row(self.params.get("fusion.b")?)
    }

    /// Forward pass on raw feature rows.
    pub fn forward(&self, input: &WindowInput<T>, mode: &mut ForwardMode) -> Result<ModelOutput<T>> {
        let mut g = Graph::new(&self.params);
        let nodes = self.build(&mut g, input, false, mode)?;
        Ok(Self::collect(&g, &nodes))
    }

    /// Forward pass on rows already passed through [`Model::fuse_rows`].
    pub fn forward_fused(
        &self,
        input: &WindowInput<T>,
        mode: &mut ForwardMode,
    ) -> Result<ModelOutput<T>> {
        let mut g = Graph::new(&self.params);
        let nodes = self.build(&mut g, input, true, mode)?;
        Ok(Self::collect(&g, &nodes))
    }

    fn collect(g: &Graph<'_, T>, nodes: &ForwardNodes) -> ModelOutput<T> {
        ModelOutput {
            frame_logits: g.value(nodes.frame_logits).clone(),
            refined_logits: nodes.refined_logits.map(|n| g.value(n).clone()),
            near_future_logits: nodes.near_future_logits.map(|n| g.value(n).clone()),
        }
    }

    /// Total loss of one window and its parameter gradients; `None` when the
    /// window has no valid target.
    pub fn loss_and_gradients(
        &self,
        input: &WindowInput<T>,
        targets: &WindowTargets,
        train: &TrainConfig,
        mode: &mut ForwardMode,
    ) -> Result<Option<(T, Gradients<T>)>> {
        let mut g = Graph::new(&self.params);
        let nodes = self.build(&mut g, input, false, mode)?;
        let Some(loss) = self.loss_node(&mut g, &nodes, targets, train)? else {
            return Ok(None);
        };
        let value = g.value(loss).get(0, 0);
        Ok(Some((value, g.backward(loss)?)))
    }

    /// `L_final + w₁·L_initial + w₂·L_future` (the last two for CMeRT only).
    pub fn loss_node(
        &self,
        g: &mut Graph<'_, T>,
        nodes: &ForwardNodes,
        targets: &WindowTargets,
        train: &TrainConfig,
    ) -> Result<Option<NodeId>> {
        let Some(final_loss) = g.cross_entropy(nodes.final_logits(), &targets.frames)? else {
            return Ok(None);
        };
        let mut terms = vec![(final_loss, T::one())];
        if nodes.refined_logits.is_some() {
            if let Some(l) = g.cross_entropy(nodes.frame_logits, &targets.frames)? {
                terms.push((l, T::lit(train.initial_head_loss_weight)));
            }
        }
        if let Some(nf) = nodes.near_future_logits {
            if let Some(l) = g.cross_entropy(nf, &targets.near_future)? {
                terms.push((l, T::lit(train.near_future_loss_weight)));
            }
        }
        if terms.len() == 1 {
            return Ok(Some(final_loss));
        }
        g.weighted_sum(&terms).map(Some)
    }

    fn check_input(&self, input: &WindowInput<T>, fused: bool) -> Result<()> {
        let c = &self.config;
        let width = if fused { c.d_model } else { c.d_total() };
        let parts = [
            ("long", &input.long_mem, input.long_valid.len(), c.long_tokens()),
            ("near-past", &input.near_past, input.near_valid.len(), c.near_past()),
            ("short", &input.short_mem, input.short_valid.len(), c.short_len),
        ];
        for (name, m, valid, rows) in parts {
            if m.rows() != rows || valid != rows || (rows > 0 && m.cols() != width) {
                return Err(Error::shape(format!(
                    "{name} memory is {:?} with {valid} flags, expected {rows} x {width}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }

    fn tokens(&self, g: &mut Graph<'_, T>, rows: &Matrix<T>, fused: bool) -> Result<NodeId> {
        let c = g.constant(rows.clone());
        if fused {
            Ok(c)
        } else {
            linear(g, c, "fusion")
        }
    }

    /// Latent summary `M_L'` (`n_latent x d_model`) of one long memory.
    /// Padded tokens are masked; with no valid token cross-attention is skipped.
    pub fn compress_long_memory(
        &self,
        long_mem: &Matrix<T>,
        long_valid: &[bool],
        fused: bool,
        mode: &mut ForwardMode,
    ) -> Result<Matrix<T>> {
        let width = if fused { self.config.d_model } else { self.config.d_total() };
        if long_mem.rows() != self.config.long_tokens()
            || long_valid.len() != long_mem.rows()
            || long_mem.cols() != width
        {
            return Err(Error::shape(format!(
                "long memory is {:?}, expected {} x {width}",
                long_mem.shape(),
                self.config.long_tokens()
            )));
        }
        let mut g = Graph::new(&self.params);
        let node = self.memory_node(&mut g, long_mem, long_valid, fused, mode)?;
        Ok(g.value(node).clone())
    }

    fn memory_node(
        &self,
        g: &mut Graph<'_, T>,
        long_mem: &Matrix<T>,
        long_valid: &[bool],
        fused: bool,
        mode: &mut ForwardMode,
    ) -> Result<NodeId> {
        let c = &self.config;
        let n = c.n_latent;
        let spec = c.layer_spec();
        let long = self.tokens(g, long_mem, fused)?;
        let pe = g.constant(self.pe_long.clone());
        let long = g.add(long, pe)?;
        let cross = if long_valid.iter().any(|&v| v) {
            Some(AttentionMask::from_key_validity(n, long_valid)?)
        } else {
            None
        };
        let full_latent = AttentionMask::full(n, n);
        let mut latent = g.param("latent.q")?;
        for i in 0..c.enc_layers {
            latent = transformer_decoder_layer(
                g,
                latent,
                cross.as_ref().map(|mask| (long, mask)),
                &full_latent,
                &spec,
                &format!("enc.{i}"),
                mode,
            )?;
        }
        layer_norm(g, latent, "enc.ln")
    }

    /// Records the forward pass of either variant on `g`.
    pub fn build(
        &self,
        g: &mut Graph<'_, T>,
        input: &WindowInput<T>,
        fused: bool,
        mode: &mut ForwardMode,
    ) -> Result<ForwardNodes> {
        self.check_input(input, fused)?;
        let c = &self.config;
        let spec = c.layer_spec();
        let n = c.n_latent;
        let np = c.near_past();
        let m = c.short_len;
        let delta = c.anticipation_len;

        let memory = self.memory_node(g, &input.long_mem, &input.long_valid, fused, mode)?;

        // observed queries with positions, then anticipation tokens
        let observed = if np > 0 {
            Matrix::concat_rows(&[&input.near_past, &input.short_mem])?
        } else {
            input.short_mem.clone()
        };
        let observed = self.tokens(g, &observed, fused)?;
        let pe = g.constant(self.pe_short.clone());
        let observed = g.add(observed, pe)?;
        let antic = if delta > 0 {
            let shared = g.param("anticip.shared")?;
            let offsets = g.param("anticip.offsets")?;
            Some(g.add_row(offsets, shared)?)
        } else {
            None
        };
        let query = match antic {
            Some(a) => g.concat_rows(&[observed, a])?,
            None => observed,
        };
        let valid: Vec<bool> = input
            .near_valid
            .iter()
            .chain(&input.short_valid)
            .copied()
            .chain(std::iter::repeat(true).take(delta))
            .collect();
        let self_mask = AttentionMask::causal_with_validity(&valid);
        let to_memory = AttentionMask::full(valid.len(), n);
        let mut x = query;
        for i in 0..c.dec_layers {
            x = transformer_decoder_layer(
                g,
                x,
                Some((memory, &to_memory)),
                &self_mask,
                &spec,
                &format!("dec.{i}"),
                mode,
            )?;
        }
        let x = if np > 0 { g.slice_rows(x, np, m + delta)? } else { x };
        let h = layer_norm(g, x, "dec.ln")?;
        let frame_logits = linear(g, h, "cls")?;
        if c.variant == Variant::Lstr {
            return Ok(ForwardNodes {
                frame_logits,
                refined_logits: None,
                near_future_logits: None,
            });
        }

        // near-future features
        let f = c.near_future_len;
        let causal_f = AttentionMask::causal(f);
        let future_to_memory = AttentionMask::full(f, n);
        let mut fut = g.param("future.q")?;
        for i in 0..c.future_layers {
            fut = transformer_decoder_layer(
                g,
                fut,
                Some((memory, &future_to_memory)),
                &causal_f,
                &spec,
                &format!("future.{i}"),
                mode,
            )?;
        }
        let future = layer_norm(g, fut, "future.ln")?;
        let near_future_logits = if mode.is_train() {
            Some(linear(g, future, "cls")?)
        } else {
            None
        };

        // refinement over [M_L' | M_F' | short | anticipation]
        let short = g.slice_rows(observed, np, m)?;
        let mut kv_parts = vec![memory, future, short];
        kv_parts.extend(antic);
        let kv = g.concat_rows(&kv_parts)?;
        let rows = m + delta;
        let sa_valid = &valid[np..];
        let fixed = n + f;
        let mut allowed = Vec::with_capacity(rows * (fixed + rows));
        for i in 0..rows {
            allowed.extend(std::iter::repeat(true).take(fixed));
            allowed.extend((0..rows).map(|j| j <= i && sa_valid[j]));
        }
        let refine_cross = AttentionMask::new(rows, fixed + rows, allowed)?;
        let refine_self = AttentionMask::causal_with_validity(sa_valid);
        let mut y = x;
        for i in 0..c.dec_layers {
            y = transformer_decoder_layer(
                g,
                y,
                Some((kv, &refine_cross)),
                &refine_self,
                &spec,
                &format!("refine.{i}"),
                mode,
            )?;
        }
        let h = layer_norm(g, y, "refine.ln")?;
        let refined = linear(g, h, "cls")?;
        Ok(ForwardNodes {
            frame_logits,
            refined_logits: Some(refined),
            near_future_logits,
        })
    }
}
