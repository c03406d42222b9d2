use crate::error::{Error, Result};

/// Boolean query × key grid; `true` marks an allowed attention edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    query_len: usize,
    key_len: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Builds a mask and checks that every query row keeps at least one key.
    pub fn new(query_len: usize, key_len: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != query_len * key_len {
            return Err(Error::shape(format!(
                "mask {query_len}x{key_len} needs {} entries, got {}",
                query_len * key_len,
                allowed.len()
            )));
        }
        let mask = Self {
            query_len,
            key_len,
            allowed,
        };
        for q in 0..query_len {
            if !mask.row(q).iter().any(|&a| a) {
                return Err(Error::EmptyAttentionRow { row: q });
            }
        }
        Ok(mask)
    }

    pub fn full(query_len: usize, key_len: usize) -> Self {
        Self {
            query_len,
            key_len,
            allowed: vec![true; query_len * key_len],
        }
    }

    /// Lower-triangular mask: query `i` sees keys `0..=i`.
    pub fn causal(len: usize) -> Self {
        Self::causal_with_validity(&vec![true; len])
    }

    /// Causal mask where invalid (padded) keys are hidden from every other query.
    /// A padded query still sees itself so the row is never empty; its output is
    /// never consumed by valid positions.
    pub fn causal_with_validity(valid: &[bool]) -> Self {
        let n = valid.len();
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allowed[i * n + j] = valid[j] || i == j;
            }
        }
        Self {
            query_len: n,
            key_len: n,
            allowed,
        }
    }

    /// Every query sees exactly the valid keys. Fails when no key is valid.
    pub fn from_key_validity(query_len: usize, key_valid: &[bool]) -> Result<Self> {
        let mut allowed = Vec::with_capacity(query_len * key_valid.len());
        for _ in 0..query_len {
            allowed.extend_from_slice(key_valid);
        }
        Self::new(query_len, key_valid.len(), allowed)
    }

    #[inline]
    pub fn query_len(&self) -> usize {
        self.query_len
    }

    #[inline]
    pub fn key_len(&self) -> usize {
        self.key_len
    }

    #[inline]
    pub fn row(&self, q: usize) -> &[bool] {
        &self.allowed[q * self.key_len..(q + 1) * self.key_len]
    }

    #[inline]
    pub fn is_allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.key_len + k]
    }

    /// True when key `k` is hidden from every query.
    pub fn key_fully_masked(&self, k: usize) -> bool {
        (0..self.query_len).all(|q| !self.is_allowed(q, k))
    }
}
