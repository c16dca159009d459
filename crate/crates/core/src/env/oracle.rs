use alloc::vec;
use alloc::vec::Vec;

use super::{DiscussionTree, Episode, EpisodeConfig};
use crate::search::for_each_subset;
use crate::{Error, Result};

pub const DEFAULT_MAX_LEAVES: usize = 64;

/// Best summed karma over the union of `k` root-to-leaf threads, each
/// comment counted once.
///
/// The post itself is not part of any thread's value: policies are never
/// rewarded for it. Trees with more than `max_leaves` leaves are refused.
/// When the tree has fewer than `k` leaves all of them are used.
pub fn oracle_upper_bound(tree: &DiscussionTree, k: usize, max_leaves: usize) -> Result<i64> {
    let leaves = tree.leaves();
    if leaves.len() > max_leaves {
        return Err(Error::TooLarge {
            what: "oracle leaf set",
            size: leaves.len(),
            limit: max_leaves,
        });
    }
    let paths: Vec<Vec<usize>> = leaves.iter().map(|&l| tree.path_to_root(l)).collect();
    let k = k.min(paths.len());
    let karma: Vec<i64> = tree.nodes().iter().map(|c| c.karma).collect();
    let mut search = Search {
        paths: &paths,
        karma: &karma,
        cover: vec![0u32; tree.len()],
        best: i64::MIN,
    };
    search.run(0, k, 0);
    Ok(if search.best == i64::MIN { 0 } else { search.best })
}

struct Search<'a> {
    paths: &'a [Vec<usize>],
    karma: &'a [i64],
    cover: Vec<u32>,
    best: i64,
}

impl Search<'_> {
    fn run(&mut self, start: usize, remaining: usize, value: i64) {
        if remaining == 0 {
            self.best = self.best.max(value);
            return;
        }
        for i in start..=self.paths.len() - remaining {
            let mut gained = 0;
            for &v in &self.paths[i] {
                if self.cover[v] == 0 {
                    gained += self.karma[v];
                }
                self.cover[v] += 1;
            }
            self.run(i + 1, remaining - 1, value + gained);
            for &v in &self.paths[i] {
                self.cover[v] -= 1;
            }
        }
    }
}

/// Best total reward of any action sequence in the episode dynamics,
/// by exhaustive search over at most `max_search_nodes` steps.
pub fn best_policy_reward(tree: &DiscussionTree, cfg: EpisodeConfig, max_search_nodes: usize) -> Result<i64> {
    let (ep, out) = Episode::reset(tree, cfg)?;
    if out.terminal {
        return Ok(0);
    }
    let mut budget = max_search_nodes;
    policy_search(&ep, &mut budget, max_search_nodes)
}

fn policy_search(ep: &Episode<'_>, budget: &mut usize, limit: usize) -> Result<i64> {
    let cfg = ep.config();
    let mut best = i64::MIN;
    let mut failure = None;
    for_each_subset(cfg.n, cfg.k, |positions| {
        if failure.is_some() {
            return;
        }
        if *budget == 0 {
            failure = Some(Error::TooLarge {
                what: "policy search",
                size: limit + 1,
                limit,
            });
            return;
        }
        *budget -= 1;
        let mut next = ep.clone();
        let result = next.step_positions(positions).and_then(|out| {
            if out.terminal {
                Ok(out.reward)
            } else {
                policy_search(&next, budget, limit).map(|rest| out.reward + rest)
            }
        });
        match result {
            Ok(v) => best = best.max(v),
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(best),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Comment;

    fn c(id: i64, parent: Option<i64>, karma: i64) -> Comment {
        Comment {
            id,
            parent,
            text: alloc::string::String::new(),
            karma,
            ts: id,
        }
    }

    #[test]
    fn single_thread_sums_everything_but_the_post() {
        let t = DiscussionTree::from_comments(vec![c(0, None, 50), c(1, Some(0), 3), c(2, Some(1), -1), c(3, Some(2), 4)]).unwrap();
        for k in 1..4 {
            assert_eq!(oracle_upper_bound(&t, k, 10).unwrap(), 6);
        }
    }

    #[test]
    fn disjoint_branches() {
        let t = DiscussionTree::from_comments(vec![
            c(0, None, 0),
            c(1, Some(0), 3),
            c(2, Some(1), 4),
            c(3, Some(0), 5),
        ])
        .unwrap();
        assert_eq!(oracle_upper_bound(&t, 2, 10).unwrap(), 12);
        assert_eq!(oracle_upper_bound(&t, 1, 10).unwrap(), 7);
    }

    #[test]
    fn leaf_guard() {
        let mut cs = vec![c(0, None, 0)];
        for i in 1..=5 {
            cs.push(c(i, Some(0), 1));
        }
        let t = DiscussionTree::from_comments(cs).unwrap();
        assert!(matches!(oracle_upper_bound(&t, 2, 4), Err(Error::TooLarge { .. })));
        assert_eq!(oracle_upper_bound(&t, 2, 5).unwrap(), 2);
    }

    #[test]
    fn post_only_tree() {
        let t = DiscussionTree::from_comments(vec![c(0, None, 9)]).unwrap();
        assert_eq!(oracle_upper_bound(&t, 3, 10).unwrap(), 0);
    }

    #[test]
    fn policy_search_picks_best_sequence() {
        // Post, then 1 -> {3, 4}, 2 -> {5}; N=2, K=1.
        let t = DiscussionTree::from_comments(vec![
            c(0, None, 0),
            c(1, Some(0), 2),
            c(2, Some(0), 5),
            c(3, Some(1), 4),
            c(4, Some(1), 4),
            c(5, Some(2), 1),
        ])
        .unwrap();
        let cfg = EpisodeConfig::new(2, 1).unwrap();
        // Tracking 1 unlocks {3, 4} for 2 + 4; tracking 2 ends at 5.
        assert_eq!(best_policy_reward(&t, cfg, 100).unwrap(), 6);
        assert!(best_policy_reward(&t, cfg, 1).is_err());
    }
}
