use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    save_checkpoint, training_window_ends, Model, ModelConfig, TrainConfig, WindowInput,
    WindowTargets,
};
use crate::error::{Error, Result};
use crate::nn::{ForwardMode, Gradients, Matrix, ParamStore};
use crate::scalar::Scalar;
use crate::synth::splitmix64;

/// Adam with L2 weight decay added to the gradient.
#[derive(Clone, Debug)]
pub struct Adam<T = f64> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update; parameters without a gradient are treated as having zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::shape("gradient count does not match parameters"));
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - T::lit(self.beta1.powi(self.step));
        let c2 = T::one() - T::lit(self.beta2.powi(self.step));
        let (lr, eps, wd) = (T::lit(lr), T::lit(self.eps), T::lit(self.weight_decay));
        for id in 0..params.len() {
            let grad = grads.get(id);
            let value = params.param_mut(id).value.as_mut_slice();
            let m = self.m[id].as_mut_slice();
            let v = self.v[id].as_mut_slice();
            for k in 0..value.len() {
                let g = grad.map_or(T::zero(), |g| g.as_slice()[k]) + wd * value[k];
                m[k] = b1 * m[k] + (T::one() - b1) * g;
                v[k] = b2 * v[k] + (T::one() - b2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One labelled training video.
#[derive(Clone, Copy, Debug)]
pub struct TrainingVideo<'a, T = f64> {
    pub frames: &'a Matrix<T>,
    pub labels: &'a [u8],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub steps: usize,
    pub val_cap: Option<f64>,
}

pub struct TrainOutcome<T = f64> {
    pub model: Model<T>,
    pub log: Vec<EpochLog>,
}

/// Per-epoch validation score, e.g. held-out detection cAP.
pub type Validator<'a, T> = dyn Fn(&Model<T>) -> Result<f64> + Sync + 'a;

fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |h, &p| splitmix64(h ^ p))
}

/// Mini-batch training with warmup plus cosine decay. Windows of a batch run
/// in parallel and their gradients are reduced in batch order.
pub fn train<T: Scalar>(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    videos: &[TrainingVideo<'_, T>],
    validator: Option<&Validator<'_, T>>,
    out_path: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    model_config.validate()?;
    train_config.validate()?;
    if videos.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    for (i, v) in videos.iter().enumerate() {
        if v.frames.rows() != v.labels.len() || v.frames.rows() == 0 {
            return Err(Error::Data(format!("training video {i}: bad frames or labels")));
        }
        if v.frames.cols() != model_config.d_total() {
            return Err(Error::shape(format!(
                "training video {i} has {} features, model expects {}",
                v.frames.cols(),
                model_config.d_total()
            )));
        }
    }

    let seed = train_config.seed;
    let mut model = Model::<T>::new(model_config.clone(), mix(&[seed, 1]))?;
    let mut adam = Adam::new(model.params(), train_config.weight_decay);
    let mut log = Vec::with_capacity(train_config.epochs);

    for epoch in 0..train_config.epochs {
        let mut items: Vec<(usize, usize)> = videos
            .iter()
            .enumerate()
            .flat_map(|(vi, v)| {
                training_window_ends(
                    model_config,
                    v.frames.rows(),
                    mix(&[seed, 2, epoch as u64, vi as u64]),
                )
                .into_iter()
                .map(move |t| (vi, t))
            })
            .collect();
        items.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[seed, 3, epoch as u64])));
        let batches: Vec<&[(usize, usize)]> = items.chunks(train_config.batch_size).collect();
        let steps = batches.len();
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        let mut lr = train_config.lr_at(epoch as f64);

        for (step, batch) in batches.iter().enumerate() {
            lr = train_config.lr_at(epoch as f64 + step as f64 / steps as f64);
            let current = &model;
            let results: Vec<Option<(T, Gradients<T>)>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &(vi, t))| {
                    let v = &videos[vi];
                    let input = WindowInput::from_frames(model_config, v.frames, t)?;
                    let targets = WindowTargets::new(model_config, v.labels, t);
                    let mut mode =
                        ForwardMode::train(mix(&[seed, 4, epoch as u64, step as u64, j as u64]));
                    current.loss_and_gradients(&input, &targets, train_config, &mut mode)
                })
                .collect::<Result<_>>()?;

            let mut total: Option<Gradients<T>> = None;
            let mut batch_loss = 0.0;
            let mut used = 0usize;
            for (loss, grads) in results.into_iter().flatten() {
                let l = loss.as_f64();
                if !l.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        loss: l,
                    });
                }
                batch_loss += l;
                used += 1;
                match total.as_mut() {
                    None => total = Some(grads),
                    Some(acc) => acc.add_scaled(&grads, T::one())?,
                }
            }
            let Some(mut grads) = total else { continue };
            let inv = T::lit(1.0 / used as f64);
            let mut scaled = Gradients::empty(grads.len());
            scaled.add_scaled(&grads, inv)?;
            grads = scaled;
            adam.step(model.params_mut(), &grads, lr)?;
            loss_sum += batch_loss / used as f64;
            loss_count += 1;
        }

        let train_loss = if loss_count > 0 {
            loss_sum / loss_count as f64
        } else {
            f64::NAN
        };
        let val_cap = validator.map(|f| f(&model)).transpose()?;
        log::info!(
            "epoch {epoch}: lr {lr:.3e} loss {train_loss:.5} val cAP {}",
            val_cap.map_or("-".to_string(), |c| format!("{c:.4}"))
        );
        log.push(EpochLog {
            epoch,
            lr,
            train_loss,
            steps,
            val_cap,
        });
    }

    if let Some(path) = out_path {
        save_checkpoint(&model, path)?;
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Matrix::row_vector(&[1.0, -2.0])).unwrap();
        let mut adam = Adam::new(&store, 0.0);
        let grads = Gradients::from_vec(vec![Some(Matrix::row_vector(&[0.5, -3.0]))]);
        adam.step(&mut store, &grads, 0.1).unwrap();
        // bias-corrected first step is lr * sign(g) up to eps
        let w = store.get("w").unwrap();
        assert!((w.get(0, 0) - 0.9).abs() < 1e-7);
        assert!((w.get(0, 1) + 1.9).abs() < 1e-7);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.insert("x", Matrix::row_vector(&[3.0, -4.0])).unwrap();
        let mut adam = Adam::new(&store, 0.0);
        for _ in 0..2000 {
            let x = store.get("x").unwrap().clone();
            let grads = Gradients::from_vec(vec![Some(x.scale(2.0))]);
            adam.step(&mut store, &grads, 0.05).unwrap();
        }
        assert!(store.get("x").unwrap().as_slice().iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Matrix::row_vector(&[1.0])).unwrap();
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store, &Gradients::empty(1), 0.01).unwrap();
        assert!(store.get("w").unwrap().get(0, 0) < 1.0);
    }
}
