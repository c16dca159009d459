//! Small dense and sparse vector helpers shared by every module.
//!
//! Dense vectors are plain `Vec<f64>` / `&[f64]`. Sparse vectors keep their
//! entries sorted by index with no duplicates.

use alloc::vec::Vec;

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).fold(0.0, |acc, v| acc + v)
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from arbitrary `(index, value)` pairs, summing duplicates and
    /// dropping explicit zeros.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|&(_, v)| v != 0.0);
        Self { entries }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest index + 1, or 0 when empty.
    pub fn min_dim(&self) -> usize {
        self.entries.last().map_or(0, |&(i, _)| i as usize + 1)
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |pos| self.entries[pos].1)
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut acc = 0.0;
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            if i == j {
                acc += x * y;
                a.next();
                b.next();
            } else if i < j {
                a.next();
            } else {
                b.next();
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.entries.iter().map(|&(_, v)| v * v).fold(0.0, |a, v| a + v))
    }

    /// Element-wise sum.
    pub fn add(&self, other: &SparseVec) -> SparseVec {
        let mut out = Vec::with_capacity(self.nnz() + other.nnz());
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&(i, x)), Some(&&(j, y))) => {
                    if i == j {
                        out.push((i, x + y));
                        a.next();
                        b.next();
                    } else if i < j {
                        out.push((i, x));
                        a.next();
                    } else {
                        out.push((j, y));
                        b.next();
                    }
                }
                (Some(&&e), None) => {
                    out.push(e);
                    a.next();
                }
                (None, Some(&&e)) => {
                    out.push(e);
                    b.next();
                }
                (None, None) => break,
            }
        }
        out.retain(|&(_, v)| v != 0.0);
        SparseVec { entries: out }
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }

    pub fn map_values(&self, mut f: impl FnMut(u32, f64) -> f64) -> SparseVec {
        SparseVec::from_pairs(self.entries.iter().map(|&(i, v)| (i, f(i, v))).collect())
    }
}
