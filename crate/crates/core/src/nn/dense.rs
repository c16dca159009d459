//! Dense layers and feed-forward stacks.
//!
//! A layer computes `y = act(W x + b)` with `W` stored row-major as
//! `(out_dim, in_dim)`. Inputs may be dense slices or sparse bag-of-words
//! vectors; the sparse path touches only the non-zero columns.

use alloc::vec;
use alloc::vec::Vec;

use super::{join, uniform_vec, ParamSet, Tensor, TensorMut};
use crate::math::{tanh, SparseVec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Dense(&'a [f64]),
    Sparse(&'a SparseVec),
}

#[derive(Debug, Clone)]
enum CachedInput {
    Dense(Vec<f64>),
    Sparse(SparseVec),
}

impl CachedInput {
    fn fits(&self, in_dim: usize) -> bool {
        match self {
            CachedInput::Dense(x) => x.len() == in_dim,
            CachedInput::Sparse(x) => x.min_dim() <= in_dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: CachedInput,
    output: Vec<f64>,
}

impl DenseCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut crate::Rng) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig("layer dims must be > 0".into()));
        }
        let weights = uniform_vec(in_dim * out_dim, rng);
        let bias = uniform_vec(out_dim, rng);
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim {
            return Err(Error::Dimension {
                what: "dense weights",
                expected: in_dim * out_dim,
                actual: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::Dimension {
                what: "dense bias",
                expected: out_dim,
                actual: bias.len(),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn check_input(&self, x: Input<'_>) -> Result<()> {
        match x {
            Input::Dense(v) if v.len() != self.in_dim => Err(Error::Dimension {
                what: "dense layer input",
                expected: self.in_dim,
                actual: v.len(),
            }),
            Input::Sparse(v) if v.min_dim() > self.in_dim => Err(Error::Dimension {
                what: "sparse layer input",
                expected: self.in_dim,
                actual: v.min_dim(),
            }),
            _ => Ok(()),
        }
    }

    /// Forward pass without keeping a cache.
    pub fn apply(&self, x: Input<'_>) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut z = self.bias.clone();
        match x {
            Input::Dense(v) => {
                for (o, zo) in z.iter_mut().enumerate() {
                    let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                    *zo += crate::math::dot(row, v);
                }
            }
            Input::Sparse(v) => {
                for &(i, xi) in v.entries() {
                    let i = i as usize;
                    for (o, zo) in z.iter_mut().enumerate() {
                        *zo += self.weights[o * self.in_dim + i] * xi;
                    }
                }
            }
        }
        for zo in &mut z {
            *zo = self.activation.apply(*zo);
        }
        Ok(z)
    }

    pub fn forward(&self, x: Input<'_>) -> Result<DenseCache> {
        let output = self.apply(x)?;
        let input = match x {
            Input::Dense(v) => CachedInput::Dense(v.to_vec()),
            Input::Sparse(v) => CachedInput::Sparse(v.clone()),
        };
        Ok(DenseCache { input, output })
    }

    /// Accumulates parameter gradients of `output . d_out` into `grads` and
    /// returns the input gradient when `need_input` is set.
    pub fn backward(
        &self,
        cache: &DenseCache,
        d_out: &[f64],
        grads: &mut Dense,
        need_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        if cache.output.len() != self.out_dim || !cache.input.fits(self.in_dim) {
            return Err(Error::StaleCache("dense layer"));
        }
        if d_out.len() != self.out_dim {
            return Err(Error::Dimension {
                what: "dense output gradient",
                expected: self.out_dim,
                actual: d_out.len(),
            });
        }
        if grads.in_dim != self.in_dim || grads.out_dim != self.out_dim {
            return Err(Error::ShapeMismatch("dense gradient accumulator".into()));
        }
        let d_z: Vec<f64> = d_out
            .iter()
            .zip(&cache.output)
            .map(|(g, &y)| g * self.activation.derivative_from_output(y))
            .collect();
        for (gb, dz) in grads.bias.iter_mut().zip(&d_z) {
            *gb += dz;
        }
        match &cache.input {
            CachedInput::Dense(x) => {
                for (o, &dz) in d_z.iter().enumerate() {
                    if dz == 0.0 {
                        continue;
                    }
                    let row = &mut grads.weights[o * self.in_dim..(o + 1) * self.in_dim];
                    crate::math::axpy(dz, x, row);
                }
            }
            CachedInput::Sparse(x) => {
                for &(i, xi) in x.entries() {
                    let i = i as usize;
                    for (o, &dz) in d_z.iter().enumerate() {
                        grads.weights[o * self.in_dim + i] += dz * xi;
                    }
                }
            }
        }
        if !need_input {
            return Ok(None);
        }
        let mut d_x = vec![0.0; self.in_dim];
        for (o, &dz) in d_z.iter().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            crate::math::axpy(dz, row, &mut d_x);
        }
        Ok(Some(d_x))
    }
}

impl ParamSet for Dense {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        out.push(Tensor {
            name: join(prefix, "weight"),
            shape: vec![self.out_dim, self.in_dim],
            data: &self.weights,
        });
        out.push(Tensor {
            name: join(prefix, "bias"),
            shape: vec![self.out_dim],
            data: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        out.push(TensorMut {
            name: join(prefix, "weight"),
            shape: vec![self.out_dim, self.in_dim],
            data: &mut self.weights,
        });
        out.push(TensorMut {
            name: join(prefix, "bias"),
            shape: vec![self.out_dim],
            data: &mut self.bias,
        });
    }
}

/// Stack of dense layers: tanh hidden layers, identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct FfCache {
    layers: Vec<DenseCache>,
}

impl FfCache {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map_or(&[], |c| c.output())
    }
}

impl FeedForward {
    /// Hidden dimension used for every encoder.
    pub const HIDDEN: usize = 20;

    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize, rng: &mut crate::Rng) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(in_dim);
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let act = if l == last {
                    Activation::Identity
                } else {
                    Activation::Tanh
                };
                Dense::new(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    /// Two tanh hidden layers of width 20 and an identity output layer.
    pub fn standard(in_dim: usize, out_dim: usize, rng: &mut crate::Rng) -> Result<Self> {
        Self::new(in_dim, &[Self::HIDDEN, Self::HIDDEN], out_dim, rng)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("feed-forward layers"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Dimension {
                    what: "layer chain",
                    expected: w[0].out_dim(),
                    actual: w[1].in_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn apply(&self, x: Input<'_>) -> Result<Vec<f64>> {
        let mut h = self.layers[0].apply(x)?;
        for layer in &self.layers[1..] {
            h = layer.apply(Input::Dense(&h))?;
        }
        Ok(h)
    }

    pub fn forward(&self, x: Input<'_>) -> Result<(Vec<f64>, FfCache)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        caches.push(self.layers[0].forward(x)?);
        for layer in &self.layers[1..] {
            let prev = caches.last().expect("non-empty").output();
            let c = layer.forward(Input::Dense(prev))?;
            caches.push(c);
        }
        let out = caches.last().expect("non-empty").output().to_vec();
        Ok((out, FfCache { layers: caches }))
    }

    /// Accumulates gradients into `grads`; returns the input gradient when asked.
    pub fn backward(
        &self,
        cache: &FfCache,
        d_out: &[f64],
        grads: &mut FeedForward,
        need_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache("feed-forward depth"));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("feed-forward gradient accumulator".into()));
        }
        let mut d = d_out.to_vec();
        let n = self.layers.len();
        for l in (0..n).rev() {
            let need = l > 0 || need_input;
            match self.layers[l].backward(&cache.layers[l], &d, &mut grads.layers[l], need)? {
                Some(dx) => d = dx,
                None => return Ok(None),
            }
        }
        Ok(Some(d))
    }

    /// Fresh gradients of `output . d_out` and the input gradient.
    pub fn gradients(&self, cache: &FfCache, d_out: &[f64]) -> Result<(FeedForward, Vec<f64>)> {
        let mut grads = self.zeros_like();
        let d_in = self
            .backward(cache, d_out, &mut grads, true)?
            .expect("input gradient requested");
        Ok((grads, d_in))
    }
}

impl ParamSet for FeedForward {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.collect(&join(prefix, &alloc::format!("{l}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.collect_mut(&join(prefix, &alloc::format!("{l}")), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, ParamSet};

    fn random_input(dim: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = crate::rng_from_seed(seed);
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Straight-line reimplementation: explicit loops, no shared helpers.
    fn oracle_forward(net: &FeedForward, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in net.layers() {
            let w = layer.weights();
            let mut next = Vec::new();
            for o in 0..layer.out_dim() {
                let mut z = layer.bias()[o];
                for i in 0..layer.in_dim() {
                    z += w[o * layer.in_dim() + i] * h[i];
                }
                next.push(match layer.activation() {
                    Activation::Tanh => libm::tanh(z),
                    Activation::Identity => z,
                });
            }
            h = next;
        }
        h
    }

    #[test]
    fn zero_net_gives_zero() {
        let mut rng = crate::rng_from_seed(1);
        let mut net = FeedForward::standard(7, 5, &mut rng).unwrap();
        net.fill(0.0);
        let out = net.apply(Input::Dense(&random_input(7, 2))).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_is_identity() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let layer = Dense::from_parts(3, 3, w, vec![0.0; 3], Activation::Identity).unwrap();
        let net = FeedForward::from_layers(vec![layer]).unwrap();
        let x = [0.3, -2.0, 5.5];
        assert_eq!(net.apply(Input::Dense(&x)).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_matches_oracle() {
        for seed in 0..20 {
            let mut rng = crate::rng_from_seed(seed);
            let net = FeedForward::standard(11, 20, &mut rng).unwrap();
            let x = random_input(11, seed + 100);
            let (out, cache) = net.forward(Input::Dense(&x)).unwrap();
            let expect = oracle_forward(&net, &x);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(cache.output(), out.as_slice());
            // bit-identical determinism
            assert_eq!(net.apply(Input::Dense(&x)).unwrap(), out);
        }
    }

    #[test]
    fn sparse_matches_dense() {
        let mut rng = crate::rng_from_seed(5);
        let net = FeedForward::standard(10, 4, &mut rng).unwrap();
        let sv = SparseVec::from_pairs(vec![(1, 2.0), (7, 1.0), (9, 3.0)]);
        let dense = sv.to_dense(10);
        let a = net.apply(Input::Sparse(&sv)).unwrap();
        let b = net.apply(Input::Dense(&dense)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let (_, cs) = net.forward(Input::Sparse(&sv)).unwrap();
        let (_, cd) = net.forward(Input::Dense(&dense)).unwrap();
        let d_out = [0.5, -1.0, 0.25, 2.0];
        let (gs, ds) = net.gradients(&cs, &d_out).unwrap();
        let (gd, dd) = net.gradients(&cd, &d_out).unwrap();
        for (x, y) in gs.flatten().iter().zip(gd.flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in ds.iter().zip(&dd) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        let mut rng = crate::rng_from_seed(5);
        let net = FeedForward::standard(4, 2, &mut rng).unwrap();
        assert!(matches!(
            net.apply(Input::Dense(&[1.0; 3])),
            Err(Error::Dimension { .. })
        ));
        let sv = SparseVec::from_pairs(vec![(4, 1.0)]);
        assert!(net.apply(Input::Sparse(&sv)).is_err());
        let other = FeedForward::standard(6, 2, &mut rng).unwrap();
        let (_, cache) = other.forward(Input::Dense(&[0.1; 6])).unwrap();
        assert!(matches!(
            net.gradients(&cache, &[1.0, 1.0]),
            Err(Error::StaleCache(_))
        ));
        let shallow = FeedForward::new(4, &[], 2, &mut rng).unwrap();
        let (_, cache) = shallow.forward(Input::Dense(&[0.1; 4])).unwrap();
        assert!(matches!(net.gradients(&cache, &[1.0, 1.0]), Err(Error::StaleCache(_))));
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let mut rng = crate::rng_from_seed(8);
        let net = FeedForward::standard(6, 3, &mut rng).unwrap();
        let (_, cache) = net.forward(Input::Dense(&random_input(6, 1))).unwrap();
        let (g, d) = net.gradients(&cache, &[0.0; 3]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_scalar_gradient_is_input() {
        let layer = Dense::from_parts(3, 1, vec![0.2, -0.4, 0.9], vec![0.1], Activation::Identity).unwrap();
        let net = FeedForward::from_layers(vec![layer]).unwrap();
        let x = [1.5, -2.0, 0.25];
        let (_, cache) = net.forward(Input::Dense(&x)).unwrap();
        let (g, d) = net.gradients(&cache, &[1.0]).unwrap();
        assert_eq!(g.layers()[0].weights(), &x);
        assert_eq!(g.layers()[0].bias(), &[1.0]);
        assert_eq!(d, vec![0.2, -0.4, 0.9]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = crate::rng_from_seed(seed);
            let net = FeedForward::standard(6, 4, &mut rng).unwrap();
            let x = random_input(6, seed + 50);
            let w = random_input(4, seed + 70);
            let (_, cache) = net.forward(Input::Dense(&x)).unwrap();
            let (g, _) = net.gradients(&cache, &w).unwrap();
            let loss = |p: &FeedForward| crate::math::dot(&p.apply(Input::Dense(&x)).unwrap(), &w);
            assert!(grad_check(&net, &g, loss, 1e-5, 0) < 1e-4);
        }
    }
}
