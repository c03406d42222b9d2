use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares analytic gradients against central differences
/// `(f(p+eps) - f(p-eps)) / 2eps` on `samples` coordinates drawn uniformly from
/// all parameters. Relative error uses `max(|analytic|, |numeric|, 1e-8)`.
///
/// `loss_fn` must be deterministic (no dropout).
pub fn gradient_check<T, F>(
    mut loss_fn: F,
    params: &mut ParamStore<T>,
    eps: T,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&ParamStore<T>) -> Result<(T, Gradients<T>)>,
{
    if eps <= T::zero() {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss}")));
    }
    let sizes: Vec<usize> = params
        .iter()
        .map(|p| p.value.rows() * p.value.cols())
        .collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for _ in 0..samples {
        let mut flat = rng.gen_range(0..total);
        let mut id = 0;
        while flat >= sizes[id] {
            flat -= sizes[id];
            id += 1;
        }
        let original = params.param(id).value.as_slice()[flat];

        params.param_mut(id).value.as_mut_slice()[flat] = original + eps;
        let (plus, _) = loss_fn(params)?;
        params.param_mut(id).value.as_mut_slice()[flat] = original - eps;
        let (minus, _) = loss_fn(params)?;
        params.param_mut(id).value.as_mut_slice()[flat] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "perturbed loss for `{}`",
                params.param(id).name
            )));
        }

        let numeric = ((plus - minus) / (eps + eps)).as_f64();
        let a = analytic.coord(id, flat).as_f64();
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((params.param(id).name.clone(), flat, a, numeric));
        }
    }
    Ok(report)
}
