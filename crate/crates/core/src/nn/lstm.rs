//! LSTM cells and a bidirectional sequence summariser.
//!
//! Gate pre-activations are laid out as `[input, forget, output, candidate]`,
//! each block `hidden` wide:
//!
//! ```text
//! z = W_x x + b + W_h h_prev
//! c = sigmoid(z_f) * c_prev + sigmoid(z_i) * tanh(z_g)
//! h = sigmoid(z_o) * tanh(c)
//! ```
//!
//! The input projection `W_x x + b` is exposed separately so callers scoring
//! many subsets of the same items can compute it once per item.

use alloc::vec;
use alloc::vec::Vec;

use super::{join, uniform_vec, ParamSet, Tensor, TensorMut};
use crate::math::{sigmoid, tanh};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    input_dim: usize,
    hidden_dim: usize,
    w_x: Vec<f64>,
    w_h: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, o, g]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut crate::Rng) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidConfig("lstm dims must be > 0".into()));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            w_x: uniform_vec(4 * hidden_dim * input_dim, rng),
            w_h: uniform_vec(4 * hidden_dim * hidden_dim, rng),
            bias: uniform_vec(4 * hidden_dim, rng),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// `W_x x + b`, length `4 * hidden`.
    pub fn project_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                what: "lstm input",
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        let mut z = self.bias.clone();
        for (r, zr) in z.iter_mut().enumerate() {
            *zr += crate::math::dot(&self.w_x[r * self.input_dim..(r + 1) * self.input_dim], x);
        }
        Ok(z)
    }

    /// One recurrence step from a precomputed input projection. Returns the
    /// activated gates, the new cell state and the new hidden state.
    fn step(&self, proj: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim;
        let mut gates = proj.to_vec();
        for (r, zr) in gates.iter_mut().enumerate() {
            *zr += crate::math::dot(&self.w_h[r * hd..(r + 1) * hd], h_prev);
        }
        for (r, g) in gates.iter_mut().enumerate() {
            *g = if r < 3 * hd { sigmoid(*g) } else { tanh(*g) };
        }
        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, o, g) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * tanh(c[j]);
        }
        (gates, c, h)
    }

    /// Final hidden states of many sequences over the same projected items;
    /// `seqs[i]` lists indices into `proj` in consumption order. Shared
    /// prefixes are run once and every state is bit-identical to
    /// [`LstmCell::run_projected`] on its own sequence. Also returns the
    /// number of recurrence steps taken.
    pub fn run_shared(&self, proj: &[Vec<f64>], seqs: &[&[usize]]) -> (Vec<Vec<f64>>, usize) {
        let hd = self.hidden_dim;
        let zero = (vec![0.0; hd], vec![0.0; hd]);
        let mut out = vec![Vec::new(); seqs.len()];
        // stack[d] is the state after the first d + 1 items of the current path.
        let mut stack: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let steps = visit_shared(seqs, |i, keep| {
            stack.truncate(keep);
            for &item in &seqs[i][keep..] {
                let (h, c) = stack.last().unwrap_or(&zero);
                let (_, c_new, h_new) = self.step(&proj[item], h, c);
                stack.push((h_new, c_new));
            }
            out[i] = stack.last().map_or_else(|| zero.0.clone(), |(h, _)| h.clone());
        });
        (out, steps)
    }

    /// Final hidden state after consuming the projections in order.
    pub fn run_projected<'a>(&self, projections: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
        let hd = self.hidden_dim;
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        for proj in projections {
            let (_, c_new, h_new) = self.step(proj, &h, &c);
            h = h_new;
            c = c_new;
        }
        h
    }

    fn run_cached<'a>(&self, seq: impl Iterator<Item = &'a [f64]>) -> Result<(Vec<f64>, Vec<StepCache>)> {
        let hd = self.hidden_dim;
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        let mut steps = Vec::new();
        for x in seq {
            let proj = self.project_input(x)?;
            let (gates, c_new, h_new) = self.step(&proj, &h, &c);
            let tanh_c = c_new.iter().map(|&v| tanh(v)).collect();
            steps.push(StepCache {
                x: x.to_vec(),
                h_prev: core::mem::replace(&mut h, h_new),
                c_prev: core::mem::replace(&mut c, c_new),
                gates,
                tanh_c,
            });
        }
        Ok((h, steps))
    }

    /// Backprop through time given the gradient on the final hidden state.
    /// Returns input gradients in processing order.
    fn backward_steps(&self, steps: &[StepCache], d_h_final: &[f64], grads: &mut LstmCell) -> Vec<Vec<f64>> {
        let hd = self.hidden_dim;
        let dim = self.input_dim;
        let mut d_h = d_h_final.to_vec();
        let mut d_c = vec![0.0; hd];
        let mut d_xs = vec![Vec::new(); steps.len()];
        let mut d_z = vec![0.0; 4 * hd];
        for (t, s) in steps.iter().enumerate().rev() {
            for j in 0..hd {
                let (i, f, o, g) = (s.gates[j], s.gates[hd + j], s.gates[2 * hd + j], s.gates[3 * hd + j]);
                let tc = s.tanh_c[j];
                let d_o = d_h[j] * tc;
                let dc = d_h[j] * o * (1.0 - tc * tc) + d_c[j];
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * s.c_prev[j];
                d_c[j] = dc * f;
                d_z[j] = d_i * i * (1.0 - i);
                d_z[hd + j] = d_f * f * (1.0 - f);
                d_z[2 * hd + j] = d_o * o * (1.0 - o);
                d_z[3 * hd + j] = d_g * (1.0 - g * g);
            }
            let mut d_x = vec![0.0; dim];
            let mut d_h_prev = vec![0.0; hd];
            for (r, &dz) in d_z.iter().enumerate() {
                grads.bias[r] += dz;
                if dz == 0.0 {
                    continue;
                }
                crate::math::axpy(dz, &s.x, &mut grads.w_x[r * dim..(r + 1) * dim]);
                crate::math::axpy(dz, &s.h_prev, &mut grads.w_h[r * hd..(r + 1) * hd]);
                crate::math::axpy(dz, &self.w_x[r * dim..(r + 1) * dim], &mut d_x);
                crate::math::axpy(dz, &self.w_h[r * hd..(r + 1) * hd], &mut d_h_prev);
            }
            d_xs[t] = d_x;
            d_h = d_h_prev;
        }
        d_xs
    }
}

impl ParamSet for LstmCell {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        let (h4, d, h) = (4 * self.hidden_dim, self.input_dim, self.hidden_dim);
        out.push(Tensor {
            name: join(prefix, "w_x"),
            shape: vec![h4, d],
            data: &self.w_x,
        });
        out.push(Tensor {
            name: join(prefix, "w_h"),
            shape: vec![h4, h],
            data: &self.w_h,
        });
        out.push(Tensor {
            name: join(prefix, "bias"),
            shape: vec![h4],
            data: &self.bias,
        });
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        let (h4, d, h) = (4 * self.hidden_dim, self.input_dim, self.hidden_dim);
        out.push(TensorMut {
            name: join(prefix, "w_x"),
            shape: vec![h4, d],
            data: &mut self.w_x,
        });
        out.push(TensorMut {
            name: join(prefix, "w_h"),
            shape: vec![h4, h],
            data: &mut self.w_h,
        });
        out.push(TensorMut {
            name: join(prefix, "bias"),
            shape: vec![h4],
            data: &mut self.bias,
        });
    }
}

/// Bidirectional LSTM whose summary is `[h_forward_last, h_backward_last]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
}

/// Visits `seqs` in lexicographic order, passing each index with the length
/// of the prefix it shares with the previously visited sequence. Returns
/// the total number of items beyond the shared prefixes.
pub fn visit_shared(seqs: &[&[usize]], mut f: impl FnMut(usize, usize)) -> usize {
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by(|&a, &b| seqs[a].cmp(seqs[b]));
    let mut prev: &[usize] = &[];
    let mut steps = 0;
    for i in order {
        let keep = prev.iter().zip(seqs[i]).take_while(|(a, b)| a == b).count();
        steps += seqs[i].len() - keep;
        f(i, keep);
        prev = seqs[i];
    }
    steps
}

/// Recurrence steps (both directions) that [`BiLstm::summaries_shared`]
/// takes for these member lists.
pub fn shared_steps(sets: &[&[usize]]) -> usize {
    let rev: Vec<Vec<usize>> = sets.iter().map(|s| s.iter().rev().copied().collect()).collect();
    let rev: Vec<&[usize]> = rev.iter().map(|s| s.as_slice()).collect();
    visit_shared(sets, |_, _| {}) + visit_shared(&rev, |_, _| {})
}

impl BiLstm {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut crate::Rng) -> Result<Self> {
        Ok(Self {
            forward: LstmCell::new(input_dim, hidden_dim, rng)?,
            backward: LstmCell::new(input_dim, hidden_dim, rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim
    }

    pub fn summary_dim(&self) -> usize {
        2 * self.forward.hidden_dim
    }

    pub fn forward<S: AsRef<[f64]>>(&self, seq: &[S]) -> Result<(Vec<f64>, BiLstmCache)> {
        if seq.is_empty() {
            return Err(Error::EmptyInput("bilstm sequence"));
        }
        let (h_f, fwd) = self.forward.run_cached(seq.iter().map(|x| x.as_ref()))?;
        let (h_b, bwd) = self.backward.run_cached(seq.iter().rev().map(|x| x.as_ref()))?;
        let mut summary = h_f;
        summary.extend_from_slice(&h_b);
        Ok((summary, BiLstmCache { fwd, bwd }))
    }

    /// Summary from per-element input projections (`forward.project_input`
    /// and `backward.project_input`), in sequence order. Bit-identical to
    /// [`BiLstm::forward`].
    pub fn summary_projected(&self, fwd_proj: &[&[f64]], bwd_proj: &[&[f64]]) -> Vec<f64> {
        let mut summary = self.forward.run_projected(fwd_proj.iter().copied());
        summary.extend(self.backward.run_projected(bwd_proj.iter().rev().copied()));
        summary
    }

    /// Summaries of many member lists over the same items, from per-item
    /// projections. The forward direction shares prefixes and the backward
    /// direction shares suffixes; each summary is bit-identical to
    /// [`BiLstm::summary_projected`]. Also returns the steps taken.
    pub fn summaries_shared(&self, fwd_proj: &[Vec<f64>], bwd_proj: &[Vec<f64>], sets: &[&[usize]]) -> (Vec<Vec<f64>>, usize) {
        let rev: Vec<Vec<usize>> = sets.iter().map(|s| s.iter().rev().copied().collect()).collect();
        let rev: Vec<&[usize]> = rev.iter().map(|s| s.as_slice()).collect();
        let (mut out, f_steps) = self.forward.run_shared(fwd_proj, sets);
        let (back, b_steps) = self.backward.run_shared(bwd_proj, &rev);
        for (o, b) in out.iter_mut().zip(back) {
            o.extend(b);
        }
        (out, f_steps + b_steps)
    }

    /// Accumulates gradients of `summary . d_summary`; returns per-element
    /// input gradients in sequence order.
    pub fn backward(&self, cache: &BiLstmCache, d_summary: &[f64], grads: &mut BiLstm) -> Result<Vec<Vec<f64>>> {
        let hd = self.hidden_dim();
        if d_summary.len() != 2 * hd {
            return Err(Error::Dimension {
                what: "bilstm summary gradient",
                expected: 2 * hd,
                actual: d_summary.len(),
            });
        }
        let fits = |steps: &[StepCache], cell: &LstmCell| {
            steps
                .iter()
                .all(|s| s.x.len() == cell.input_dim && s.h_prev.len() == cell.hidden_dim)
        };
        if cache.fwd.len() != cache.bwd.len()
            || cache.fwd.is_empty()
            || !fits(&cache.fwd, &self.forward)
            || !fits(&cache.bwd, &self.backward)
        {
            return Err(Error::StaleCache("bilstm"));
        }
        if grads.hidden_dim() != hd || grads.input_dim() != self.input_dim() {
            return Err(Error::ShapeMismatch("bilstm gradient accumulator".into()));
        }
        let mut d_seq = self.forward.backward_steps(&cache.fwd, &d_summary[..hd], &mut grads.forward);
        let d_rev = self.backward.backward_steps(&cache.bwd, &d_summary[hd..], &mut grads.backward);
        for (d, r) in d_seq.iter_mut().zip(d_rev.iter().rev()) {
            crate::math::axpy(1.0, r, d);
        }
        Ok(d_seq)
    }

    pub fn gradients(&self, cache: &BiLstmCache, d_summary: &[f64]) -> Result<(BiLstm, Vec<Vec<f64>>)> {
        let mut grads = self.zeros_like();
        let d_seq = self.backward(cache, d_summary, &mut grads)?;
        Ok((grads, d_seq))
    }
}

impl ParamSet for BiLstm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        self.forward.collect(&join(prefix, "fwd"), out);
        self.backward.collect(&join(prefix, "bwd"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        self.forward.collect_mut(&join(prefix, "fwd"), out);
        self.backward.collect_mut(&join(prefix, "bwd"), out);
    }
}
