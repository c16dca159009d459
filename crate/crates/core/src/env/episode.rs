use alloc::format;
use alloc::vec::Vec;

use super::DiscussionTree;
use crate::{Error, Result};

/// `N` candidates per step, `K` tracked per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeConfig {
    pub n: usize,
    pub k: usize,
}

impl EpisodeConfig {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        let cfg = Self { n, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("N must be positive".into()));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::InvalidConfig(format!("K={} must lie in 1..=N={}", self.k, self.n)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    /// Exactly `N` comment ids in `(timestamp, id)` order; empty when terminal.
    pub candidates: Vec<i64>,
    pub reward: i64,
    pub terminal: bool,
}

/// One pass over a tree.
///
/// The tracked set starts as the post alone. Candidates are the earliest `N`
/// comments that have never been offered and lie strictly inside the subtree
/// of some tracked comment; the episode ends when fewer than `N` remain.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    tree: &'a DiscussionTree,
    cfg: EpisodeConfig,
    history: Vec<Vec<usize>>,
    offered: Vec<bool>,
    candidates: Vec<usize>,
    terminal: bool,
}

impl<'a> Episode<'a> {
    pub fn reset(tree: &'a DiscussionTree, cfg: EpisodeConfig) -> Result<(Self, StepOutcome)> {
        cfg.validate()?;
        let mut ep = Self {
            tree,
            cfg,
            history: alloc::vec![alloc::vec![0]],
            offered: alloc::vec![false; tree.len()],
            candidates: Vec::new(),
            terminal: false,
        };
        ep.offered[0] = true;
        ep.refresh_candidates();
        let out = ep.outcome(0);
        Ok((ep, out))
    }

    pub fn tree(&self) -> &'a DiscussionTree {
        self.tree
    }

    pub fn config(&self) -> EpisodeConfig {
        self.cfg
    }

    /// Steps taken so far.
    pub fn t(&self) -> usize {
        self.history.len() - 1
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Tracked sets `M_0..M_t` as node indices.
    pub fn history(&self) -> &[Vec<usize>] {
        &self.history
    }

    pub fn tracked(&self) -> &[usize] {
        self.history.last().expect("history starts with the post")
    }

    /// Current candidate node indices in offering order.
    pub fn candidate_indices(&self) -> &[usize] {
        &self.candidates
    }

    pub fn candidate_ids(&self) -> Vec<i64> {
        self.candidates.iter().map(|&i| self.tree.node(i).id).collect()
    }

    fn refresh_candidates(&mut self) {
        let tracked = self.tracked();
        let picked: Vec<usize> = (1..self.tree.len())
            .filter(|&v| !self.offered[v])
            .filter(|&v| tracked.iter().any(|&u| self.tree.is_strict_descendant(v, u)))
            .take(self.cfg.n)
            .collect();
        if picked.len() < self.cfg.n {
            self.candidates.clear();
            self.terminal = true;
        } else {
            for &v in &picked {
                self.offered[v] = true;
            }
            self.candidates = picked;
        }
    }

    fn outcome(&self, reward: i64) -> StepOutcome {
        StepOutcome {
            candidates: self.candidate_ids(),
            reward,
            terminal: self.terminal,
        }
    }

    /// Tracks the comments with the given ids.
    pub fn step(&mut self, action: &[i64]) -> Result<StepOutcome> {
        let positions = action
            .iter()
            .map(|id| {
                self.candidates
                    .iter()
                    .position(|&c| self.tree.node(c).id == *id)
                    .ok_or_else(|| Error::InvalidAction(format!("comment {id} is not a candidate")))
            })
            .collect::<Result<Vec<_>>>()?;
        self.step_positions(&positions)
    }

    /// Tracks the candidates at the given positions of the current list.
    pub fn step_positions(&mut self, positions: &[usize]) -> Result<StepOutcome> {
        if self.terminal {
            return Err(Error::InvalidAction("episode already terminated".into()));
        }
        if positions.len() != self.cfg.k {
            return Err(Error::InvalidAction(format!(
                "expected {} comments, got {}",
                self.cfg.k,
                positions.len()
            )));
        }
        for (i, &p) in positions.iter().enumerate() {
            if p >= self.candidates.len() {
                return Err(Error::InvalidAction(format!("candidate position {p} out of range")));
            }
            if positions[..i].contains(&p) {
                return Err(Error::InvalidAction("duplicate comment in action".into()));
            }
        }
        let mut chosen: Vec<usize> = positions.iter().map(|&p| self.candidates[p]).collect();
        chosen.sort_unstable();
        let reward = chosen.iter().map(|&v| self.tree.node(v).karma).sum();
        self.history.push(chosen);
        self.refresh_candidates();
        Ok(self.outcome(reward))
    }
}

/// Total reward of a policy that picks a uniformly random `K`-subset at
/// every step.
pub fn random_rollout(tree: &DiscussionTree, cfg: EpisodeConfig, seed: u64) -> Result<i64> {
    let mut rng = crate::rng_from_seed(seed);
    let (mut ep, mut out) = Episode::reset(tree, cfg)?;
    let mut total = 0;
    while !out.terminal {
        let positions = rand::seq::index::sample(&mut rng, cfg.n, cfg.k).into_vec();
        out = ep.step_positions(&positions)?;
        total += out.reward;
    }
    Ok(total)
}
