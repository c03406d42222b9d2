use std::collections::HashMap;

use rand::Rng;

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Matrix<T>,
    pub grad: Matrix<T>,
}

/// Named trainable tensors in registration order, each with a gradient buffer of
/// the same shape.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f64> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix<T>) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let id = self.params.len();
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, value, grad });
        Ok(id)
    }

    /// Registers a parameter drawn uniformly from `[-1/√fan_in, 1/√fan_in]`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<usize> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.gen_range(-bound..=bound)))
            .collect();
        self.insert(name, Matrix::from_vec(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries over all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.value.rows() * p.value.cols())
            .sum()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Matrix<T>> {
        Ok(&self.params[self.id(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix<T>> {
        let id = self.id(name)?;
        Ok(&mut self.params[id].value)
    }

    pub fn param(&self, id: usize) -> &Param<T> {
        &self.params[id]
    }

    pub fn param_mut(&mut self, id: usize) -> &mut Param<T> {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = Matrix::zeros(p.value.rows(), p.value.cols());
        }
    }

    /// Adds `scale · grads` into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>, scale: T) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::shape("gradient set does not match parameter store"));
        }
        for (p, g) in self.params.iter_mut().zip(grads.iter()) {
            if let Some(g) = g {
                if g.shape() != p.grad.shape() {
                    return Err(Error::shape(format!("gradient shape for `{}`", p.name)));
                }
                for (acc, &v) in p.grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *acc += v * scale;
                }
            }
        }
        Ok(())
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`]; `None` means the
/// parameter did not take part in the computation.
#[derive(Clone, Debug)]
pub struct Gradients<T = f64> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn empty(n: usize) -> Self {
        Self {
            grads: vec![None; n],
        }
    }

    pub(crate) fn from_vec(grads: Vec<Option<Matrix<T>>>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Matrix<T>> {
        self.grads[id].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = Option<&Matrix<T>>> {
        self.grads.iter().map(Option::as_ref)
    }

    /// Gradient entry for a flat coordinate, zero when the parameter is unused.
    pub fn coord(&self, id: usize, flat: usize) -> T {
        self.grads[id]
            .as_ref()
            .map_or(T::zero(), |g| g.as_slice()[flat])
    }

    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::shape("gradient sets differ in length"));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(b) = b {
                match a {
                    Some(a) => {
                        for (x, &y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                            *x += y * scale;
                        }
                    }
                    None => *a = Some(b.scale(scale)),
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut store = ParamStore::<f64>::new();
        store.insert("b", Matrix::zeros(1, 2)).unwrap();
        store.insert("a", Matrix::zeros(2, 2)).unwrap();
        assert!(matches!(
            store.insert("a", Matrix::zeros(1, 1)),
            Err(Error::DuplicateParam(_))
        ));
        assert_eq!(store.names().collect::<Vec<_>>(), ["b", "a"]);
        assert_eq!(store.num_scalars(), 6);
        for p in store.iter() {
            assert_eq!(p.grad.shape(), p.value.shape());
        }
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f32>::new();
        store.insert_uniform("w", 16, 16, 16, &mut rng).unwrap();
        let w = store.get("w").unwrap();
        assert!(w.as_slice().iter().all(|v| v.abs() <= 0.25));
        assert!(w.as_slice().iter().any(|v| v.abs() > 0.1));
    }
}
