//! Minimal neural building blocks with exact analytic gradients.
//!
//! Every learnable structure implements [`ParamSet`]. A gradient is a value of
//! the same type as the parameters it differentiates (see [`GradSet`]), so
//! shape congruence is enforced by construction and re-checked by
//! [`ParamSet::check_congruent`] before any update.

mod dense;
mod gradcheck;
mod lstm;

pub use dense::{Activation, Dense, DenseCache, FeedForward, FfCache, Input};
pub use gradcheck::{grad_check, rel_error};
pub use lstm::{shared_steps, visit_shared, BiLstm, BiLstmCache, LstmCell};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng as _;

use crate::{Error, Result};

/// Gradients share the parameter type.
pub type GradSet<P> = P;

/// Read-only view of one named parameter array.
#[derive(Debug)]
pub struct Tensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// A collection of named, shaped `f64` arrays.
///
/// Implementors list their arrays in a fixed order; everything else
/// (flattening, updates, congruence checks) is derived from that listing.
pub trait ParamSet {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>);

    fn tensors(&self) -> Vec<Tensor<'_>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for t in self.tensors() {
            flat.extend_from_slice(t.data);
        }
        flat
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let count = self.param_count();
        if flat.len() != count {
            return Err(Error::Dimension {
                what: "flat parameter vector",
                expected: count,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_congruent(&self, other: &Self) -> Result<()> {
        let (a, b) = (self.tensors(), other.tensors());
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors vs {} tensors",
                a.len(),
                b.len()
            )));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.name != y.name || x.shape != y.shape || x.data.len() != y.data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{}{:?} vs {}{:?}",
                    x.name, x.shape, y.name, y.shape
                )));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`
    fn add_scaled(&mut self, other: &Self, alpha: f64) -> Result<()> {
        self.check_congruent(other)?;
        let src = other.tensors();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            crate::math::axpy(alpha, s.data, dst.data);
        }
        Ok(())
    }

    fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = value);
        }
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| crate::math::all_finite(t.data))
    }

    fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl<P: ParamSet> ParamSet for Option<P> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        if let Some(p) = self {
            p.collect(prefix, out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        if let Some(p) = self {
            p.collect_mut(prefix, out);
        }
    }
}

/// Plain SGD: `p <- p - eta * g` for every parameter.
pub fn sgd_step<P: ParamSet>(params: &mut P, grads: &GradSet<P>, eta: f64) -> Result<()> {
    params.add_scaled(grads, -eta)
}

/// Initialisation half-width for every learnable array.
pub const INIT_SCALE: f64 = 0.1;

pub(crate) fn uniform_vec(len: usize, rng: &mut crate::Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sgd_arithmetic() {
        let mut layer = Dense::from_parts(1, 1, vec![1.0], vec![0.0], Activation::Identity).unwrap();
        let grads = Dense::from_parts(1, 1, vec![0.5], vec![0.0], Activation::Identity).unwrap();
        sgd_step(&mut layer, &grads, 0.000001).unwrap();
        assert_eq!(layer.weights()[0], 0.9999995);
    }

    #[test]
    fn sgd_identity_cases() {
        let mut rng = crate::rng_from_seed(3);
        let net = FeedForward::new(5, &[4, 4], 3, &mut rng).unwrap();
        let mut grads = net.zeros_like();
        let mut p = net.clone();
        sgd_step(&mut p, &grads, 0.3).unwrap();
        assert_eq!(p.flatten(), net.flatten());
        grads.fill(1.7);
        sgd_step(&mut p, &grads, 0.0).unwrap();
        assert_eq!(p.flatten(), net.flatten());
    }

    #[test]
    fn sgd_rejects_shape_mismatch() {
        let mut rng = crate::rng_from_seed(3);
        let mut a = FeedForward::new(5, &[4], 3, &mut rng).unwrap();
        let b = FeedForward::new(5, &[6], 3, &mut rng).unwrap();
        assert!(matches!(sgd_step(&mut a, &b, 0.1), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = crate::rng_from_seed(9);
        let net = FeedForward::new(3, &[2], 2, &mut rng).unwrap();
        let flat = net.flatten();
        let mut other = net.zeros_like();
        other.assign_flat(&flat).unwrap();
        assert_eq!(other.flatten(), flat);
        assert!(other.assign_flat(&flat[1..]).is_err());
        let names: Vec<_> = net.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names, ["0.weight", "0.bias", "1.weight", "1.bias"]);
    }
}
