//! Per-step cost of candidate evaluation under each search strategy.
//!
//! States are recorded from random rollouts first; only candidate
//! evaluation is timed, never environment stepping. Timing does not depend
//! on parameter values, so freshly initialized networks are used.
//!
//! All strategies score their subsets with one batched call, which runs
//! the LSTM once per distinct prefix (forward) and suffix (backward). The
//! full-space cost is checked against an operation-count model built from
//! unit costs measured on one- and five-comment sets:
//! `prep + C(N, K) · set + steps(K) · step`, where `prep` builds the
//! per-state scorer, `set` is the fixed cost of scoring one subset, `step`
//! is one LSTM step in one direction and `steps(K)` is the number of steps
//! the batched call takes over all K-subsets.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use anyhow::Result;
use karmatrack_core::agent::{argmax, Environment};
use karmatrack_core::env::{Episode, EpisodeConfig};
use karmatrack_core::nn::shared_steps;
use karmatrack_core::qnet::{Drrn, DrrnBiLstm, QNetwork, StateFeatures};
use karmatrack_core::search::{binomial, for_each_subset, random_subsample, top_m_actions};
use karmatrack_core::math::SparseVec;
use rand::Rng as _;
use serde::Serialize;

use crate::config::RunConfig;

pub struct RecordedState {
    pub state: StateFeatures,
    pub candidates: Vec<SparseVec>,
}

/// States with a full candidate list, from random rollouts over the
/// training trees.
pub fn record_states(env: &Environment, cfg: EpisodeConfig, count: usize, seed: u64) -> Result<Vec<RecordedState>> {
    let mut rng = karmatrack_core::rng_from_seed(seed);
    let mut out = Vec::with_capacity(count);
    let mut misses = 0usize;
    while out.len() < count && misses < 10 * count.max(1) {
        let (tree, enc) = &env.train[rng.gen_range(0..env.train.len())];
        let (mut ep, mut step) = Episode::reset(tree, cfg)?;
        let mut bow = enc.bows[0].clone();
        if step.terminal {
            misses += 1;
            continue;
        }
        while !step.terminal && out.len() < count {
            let idx = ep.candidate_indices().to_vec();
            if idx.len() == cfg.n {
                out.push(RecordedState {
                    state: env.state_features(&bow, tree.node(idx[0]).ts),
                    candidates: idx.iter().map(|&i| enc.bows[i].clone()).collect(),
                });
            }
            let pick = karmatrack_core::search::unrank_subset(idx.len(), cfg.k, rng.gen_range(0..binomial(idx.len(), cfg.k)));
            for &p in &pick {
                bow = bow.add(&enc.bows[idx[p]]);
            }
            step = ep.step_positions(&pick)?;
        }
    }
    if out.is_empty() {
        anyhow::bail!("no state with {} candidates in the corpus", cfg.n);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub k: usize,
    pub subsets: u64,
    /// Microseconds per step.
    pub random_subsample_us: f64,
    pub two_stage_us: f64,
    pub full_space_us: f64,
    pub model_full_space_us: f64,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        self.full_space_us / self.two_stage_us
    }

    /// Relative deviation of the measured full-space cost from the model.
    pub fn model_error(&self) -> f64 {
        (self.full_space_us - self.model_full_space_us) / self.model_full_space_us
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub prep_us: f64,
    pub set_us: f64,
    pub step_us: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Largest over smallest two-stage cost across the measured K.
    pub fn two_stage_spread(&self) -> f64 {
        let t: Vec<f64> = self.rows.iter().map(|r| r.two_stage_us).collect();
        t.iter().cloned().fold(f64::MIN, f64::max) / t.iter().cloned().fold(f64::MAX, f64::min)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "unit costs (us): scorer prep {:.2}, per set {:.3}, per LSTM step {:.3}",
            self.prep_us, self.set_us, self.step_us
        );
        let _ = writeln!(
            out,
            "{:>2} {:>6} {:>12} {:>12} {:>12} {:>12} {:>8} {:>8}",
            "K", "C(N,K)", "random_us", "two_stage_us", "full_us", "model_us", "model%", "speedup"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>2} {:>6} {:>12.2} {:>12.2} {:>12.2} {:>12.2} {:>+8.1} {:>7.1}x",
                r.k,
                r.subsets,
                r.random_subsample_us,
                r.two_stage_us,
                r.full_space_us,
                r.model_full_space_us,
                100.0 * r.model_error(),
                r.speedup()
            );
        }
        let _ = writeln!(out, "two-stage cost spread across K: {:.2}x", self.two_stage_spread());
        out
    }
}

/// Comments per set in the long calibration job.
const CALIBRATION_SIZE: usize = 5;

type Job<'a> = Box<dyn FnMut(&RecordedState, &[&SparseVec]) -> f64 + 'a>;

/// Microseconds per state of each job: the fastest of `repeats` passes
/// over the states. Passes are interleaved across jobs, so a slow spell on
/// a shared machine hits every job alike and the minimum filters it out.
fn time_jobs(states: &[RecordedState], repeats: usize, jobs: &mut [Job<'_>]) -> Vec<f64> {
    let refs: Vec<Vec<&SparseVec>> = states.iter().map(|s| s.candidates.iter().collect()).collect();
    let pass = |job: &mut Job<'_>| {
        let t = Instant::now();
        for (s, r) in states.iter().zip(&refs) {
            black_box(job(s, r));
        }
        t.elapsed().as_secs_f64()
    };
    // One untimed pass warms caches and the allocator.
    for job in jobs.iter_mut() {
        pass(job);
    }
    let mut best = vec![f64::INFINITY; jobs.len()];
    for _ in 0..repeats {
        for (b, job) in best.iter_mut().zip(jobs.iter_mut()) {
            *b = b.min(pass(job));
        }
    }
    best.into_iter().map(|b| b * 1e6 / states.len() as f64).collect()
}

/// Times the three strategies for every K in `cfg.bench.ks`. Each cost is
/// the median over `cfg.bench.trials` independent timings.
pub fn bench_search(env: &Environment, cfg: &RunConfig) -> Result<BenchReport> {
    let n = cfg.agent.n;
    let mut init = karmatrack_core::rng_from_seed(cfg.seed);
    let q1 = Drrn::new(env.vocab_dim(), cfg.knowledge, &mut init)?;
    let q2 = DrrnBiLstm::new(env.vocab_dim(), cfg.knowledge, &mut init)?;
    let t1 = q1.doc_table(env.store.as_ref())?;
    let t2 = q2.doc_table(env.store.as_ref())?;
    let (q1, q2, t1, t2) = (&q1, &q2, t1.as_ref(), t2.as_ref());
    for &k in &cfg.bench.ks {
        EpisodeConfig::new(n, k)?;
    }
    // Every strategy and K is timed on the same states, so state size does
    // not vary with K.
    let states = record_states(env, EpisodeConfig::new(n, 1)?, cfg.bench.states, cfg.seed)?;
    let scorer = move |s: &RecordedState, c: &[&SparseVec]| q2.scorer(&s.state, c, t2).expect("recorded states fit");

    // Unit costs: scorer preparation, then N sets of one comment and N of
    // `CALIBRATION_SIZE` comments.
    let mut jobs: Vec<Job<'_>> = vec![Box::new(move |s, c| scorer(s, c).h_s[0])];
    for size in [1usize, CALIBRATION_SIZE] {
        // Rotations share no prefix or suffix: exactly 2 · size · N steps.
        let sets: Vec<Vec<usize>> = (0..n).map(|i| (0..size).map(|j| (i + j) % n).collect()).collect();
        jobs.push(Box::new(move |s, c| q2.score_batch(&scorer(s, c), &sets).iter().sum()));
    }
    let mut steps = Vec::new();
    for &k in &cfg.bench.ks {
        let m = cfg.agent.m.min(binomial(n, k) as usize);
        let mut rng = karmatrack_core::rng_from_seed(cfg.seed);
        jobs.push(Box::new(move |s, c| {
            let b = random_subsample(n, k, m, &mut rng).expect("valid K and m");
            let q = q2.score_batch(&scorer(s, c), &b);
            q[argmax(&q)]
        }));
        jobs.push(Box::new(move |s, c| {
            let s1 = q1.scorer(&s.state, c, t1).expect("recorded states fit");
            let b: Vec<Vec<usize>> = top_m_actions(&s1.q, k, m)
                .expect("valid K and m")
                .into_iter()
                .map(|a| a.members)
                .collect();
            let q = q2.score_batch(&scorer(s, c), &b);
            q[argmax(&q)]
        }));
        let mut all = Vec::new();
        for_each_subset(n, k, |a| all.push(a.to_vec()));
        steps.push(shared_steps(&all.iter().map(|a| a.as_slice()).collect::<Vec<_>>()));
        jobs.push(Box::new(move |s, c| {
            let q = q2.score_batch(&scorer(s, c), &all);
            q[argmax(&q)]
        }));
    }
    let trials: Vec<Vec<f64>> = (0..cfg.bench.trials.max(1))
        .map(|_| time_jobs(&states, cfg.bench.repeats.max(1), &mut jobs))
        .collect();
    let t: Vec<f64> = (0..jobs.len())
        .map(|j| {
            let mut v: Vec<f64> = trials.iter().map(|t| t[j]).collect();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        })
        .collect();

    let prep_us = t[0];
    let per_set = |total: f64| (total - prep_us) / n as f64;
    let (one, long) = (per_set(t[1]), per_set(t[2]));
    let step_us = ((long - one) / (2 * (CALIBRATION_SIZE - 1)) as f64).max(0.0);
    let set_us = (one - 2.0 * step_us).max(0.0);
    let rows = cfg
        .bench
        .ks
        .iter()
        .zip(&steps)
        .zip(t[3..].chunks(3))
        .map(|((&k, &steps), t)| {
            let subsets = binomial(n, k);
            BenchRow {
                k,
                subsets,
                random_subsample_us: t[0],
                two_stage_us: t[1],
                full_space_us: t[2],
                model_full_space_us: prep_us + subsets as f64 * set_us + steps as f64 * step_us,
            }
        })
        .collect();
    Ok(BenchReport {
        prep_us,
        set_us,
        step_us,
        rows,
    })
}
