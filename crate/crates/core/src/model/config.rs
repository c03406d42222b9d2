use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DecoderLayerSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "LSTR")]
    Lstr,
    #[serde(rename = "CMERT")]
    Cmert,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Lstr => "LSTR",
            Variant::Cmert => "CMERT",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LSTR" => Ok(Variant::Lstr),
            "CMERT" => Ok(Variant::Cmert),
            _ => Err(Error::Config(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    /// Layers compressing the long memory into latents.
    pub enc_layers: usize,
    /// Layers of the detection decoder (and of the refinement stage).
    pub dec_layers: usize,
    /// Layers of the near-future decoder.
    #[serde(default = "default_future_layers")]
    pub future_layers: usize,
    pub n_latent: usize,
    /// Frames of history before subsampling.
    pub long_len: usize,
    pub long_sample_rate: usize,
    pub short_len: usize,
    pub near_past_len: usize,
    pub anticipation_len: usize,
    pub near_future_len: usize,
    pub dropout: f64,
    pub d_slow: usize,
    pub d_fast: usize,
}

fn default_future_layers() -> usize {
    1
}

impl ModelConfig {
    /// Laptop-sized configuration used throughout the tests.
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            d_model: 32,
            heads: 4,
            ff_dim: 64,
            enc_layers: 2,
            dec_layers: 1,
            future_layers: 1,
            n_latent: 8,
            long_len: 64,
            long_sample_rate: 4,
            short_len: 8,
            near_past_len: 4,
            anticipation_len: 6,
            near_future_len: 8,
            dropout: 0.1,
            d_slow: 24,
            d_fast: 8,
        }
    }

    /// Published geometry on 2048 + 256 dimensional features.
    pub fn full_scale(variant: Variant) -> Self {
        Self {
            variant,
            d_model: 1024,
            heads: 16,
            ff_dim: 1024,
            enc_layers: 2,
            dec_layers: 2,
            future_layers: 2,
            n_latent: 16,
            long_len: 1600,
            long_sample_rate: 4,
            short_len: 25,
            near_past_len: 12,
            anticipation_len: 6,
            near_future_len: 48,
            dropout: 0.2,
            d_slow: 2048,
            d_fast: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.ff_dim == 0 || self.n_latent == 0 || self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("ff_dim, n_latent, enc_layers and dec_layers must be positive");
        }
        if self.short_len == 0 {
            return bad("short_len must be positive");
        }
        if self.long_sample_rate == 0 || self.long_len < self.long_sample_rate {
            return bad("long_len must hold at least one sample");
        }
        if self.d_slow + self.d_fast == 0 {
            return bad("feature width must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.variant == Variant::Cmert {
            if self.near_future_len == 0 || self.future_layers == 0 {
                return bad("CMeRT needs near_future_len and future_layers >= 1");
            }
            if self.near_future_len < self.anticipation_len {
                return bad("near_future_len must be at least anticipation_len");
            }
        }
        Ok(())
    }

    pub fn d_total(&self) -> usize {
        self.d_slow + self.d_fast
    }

    /// Long-memory tokens after subsampling.
    pub fn long_tokens(&self) -> usize {
        self.long_len / self.long_sample_rate
    }

    /// Near-past frames actually used (zero for LSTR).
    pub fn near_past(&self) -> usize {
        match self.variant {
            Variant::Lstr => 0,
            Variant::Cmert => self.near_past_len,
        }
    }

    /// Output rows: short window plus anticipation offsets.
    pub fn output_rows(&self) -> usize {
        self.short_len + self.anticipation_len
    }

    pub fn layer_spec(&self) -> DecoderLayerSpec {
        DecoderLayerSpec {
            d_model: self.d_model,
            heads: self.heads,
            ff_dim: self.ff_dim,
            dropout_rate: self.dropout,
        }
    }

    /// Closed-form number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let layer = self.layer_spec().param_count();
        let norm = 2 * d;
        let mut n = self.d_total() * d + d // fusion
            + self.n_latent * d // latent queries
            + self.enc_layers * layer + norm
            + self.dec_layers * layer + norm
            + 2 * d + 2; // classifier
        if self.anticipation_len > 0 {
            n += d + self.anticipation_len * d;
        }
        if self.variant == Variant::Cmert {
            n += self.near_future_len * d + self.future_layers * layer + norm;
            n += self.dec_layers * layer + norm;
        }
        n
    }

    /// Multiply-adds of one streaming step (matrix products only).
    pub fn step_macs(&self) -> usize {
        let d = self.d_model;
        let ff = self.ff_dim;
        let attn = |q: usize, k: usize| 2 * q * d * d + 2 * k * d * d + 2 * q * k * d;
        let layer = |q: usize, mem: usize| attn(q, q) + attn(q, mem) + 2 * q * d * ff;
        let lt = self.long_tokens();
        let np = self.near_past();
        let q = np + self.short_len + self.anticipation_len;
        let mut macs = (lt + np + self.short_len) * self.d_total() * d
            + self.enc_layers * layer(self.n_latent, lt)
            + self.dec_layers * layer(q, self.n_latent)
            + q * d * 2;
        if self.variant == Variant::Cmert {
            let f = self.near_future_len;
            let kv = self.n_latent + f + self.output_rows();
            macs += self.future_layers * layer(f, self.n_latent);
            macs += self.dec_layers * layer(self.output_rows(), kv);
            macs += self.output_rows() * d * 2;
        }
        macs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub warmup_start_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub near_future_loss_weight: f64,
    pub initial_head_loss_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 16,
            base_lr: 2e-3,
            warmup_epochs: 3,
            warmup_start_lr: 2e-4,
            weight_decay: 5e-4,
            seed: 0,
            near_future_loss_weight: 1.0,
            initial_head_loss_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config("warmup_epochs must be below epochs".into()));
        }
        if !(self.base_lr > 0.0) || !(self.warmup_start_lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.near_future_loss_weight >= 0.0) || !(self.initial_head_loss_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate at fractional epoch `progress` in `[0, epochs]`: linear
    /// warmup to `base_lr`, then half-cosine decay to zero.
    pub fn lr_at(&self, progress: f64) -> f64 {
        let w = self.warmup_epochs as f64;
        let e = self.epochs as f64;
        let p = progress.clamp(0.0, e);
        if p < w {
            self.warmup_start_lr + (self.base_lr - self.warmup_start_lr) * p / w
        } else {
            let t = (p - w) / (e - w);
            0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_configs_validate() {
        ModelConfig::desk(Variant::Lstr).validate().unwrap();
        ModelConfig::desk(Variant::Cmert).validate().unwrap();
        ModelConfig::full_scale(Variant::Cmert).validate().unwrap();
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn schedule_endpoints() {
        let t = TrainConfig::default();
        assert_eq!(t.lr_at(0.0), t.warmup_start_lr);
        assert!((t.lr_at(t.warmup_epochs as f64) - t.base_lr).abs() < 1e-15);
        assert!(t.lr_at(t.epochs as f64).abs() < 1e-15);
        let mid = (t.warmup_epochs + t.epochs) as f64 / 2.0;
        assert!((t.lr_at(mid) - t.base_lr / 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::desk(Variant::Cmert);
        c.near_future_len = 2;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(Variant::Lstr);
        c.heads = 5;
        assert!(c.validate().is_err());
        let t = TrainConfig {
            warmup_epochs: 15,
            ..TrainConfig::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("cmert".parse::<Variant>().unwrap(), Variant::Cmert);
        assert_eq!("LSTR".parse::<Variant>().unwrap(), Variant::Lstr);
        assert!("mat".parse::<Variant>().is_err());
    }
}
