//! Seeded generator for planted-signal discussion corpora.
//!
//! Comments are bags of pseudo-words. A fixed set of topic words carries a
//! karma bonus; when `hot_topics > 0` a rotating subset of them is "hot" for
//! each epoch and earns `hot_bonus` on top. A matching stream of external
//! knowledge posts mentions the hot topics of the epoch it was posted in.
//! With probability `duplicate_rate` a reply is a near-copy of an existing
//! sibling and earns only noise karma.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{Comment, DiscussionTree};
use crate::knowledge::{KnowledgeComment, KnowledgePost};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SynthConfig {
    pub trees: usize,
    /// Mean number of comments per tree (excluding the post); sizes are
    /// uniform in `[mean/2, 3*mean/2]`.
    pub mean_size: usize,
    /// Preferential-attachment strength: a node attracts replies with
    /// weight `1 + branching * max(karma, 0)`.
    pub branching: f64,
    pub topic_words: usize,
    /// Expected number of topic-word mentions per comment (at most 3).
    pub topic_rate: f64,
    pub topic_bonus: i64,
    /// Topics that are hot at any time; 0 disables drift.
    pub hot_topics: usize,
    pub hot_bonus: i64,
    /// Base karma is uniform in `[0, karma_noise]`.
    pub karma_noise: i64,
    pub duplicate_rate: f64,
    /// Number of background words.
    pub vocab_size: usize,
    pub words_per_comment: usize,
    pub knowledge_per_epoch: usize,
    pub epoch_secs: i64,
    pub epochs: usize,
    pub start_ts: i64,
    /// Mean seconds between consecutive comments in a tree.
    pub reply_gap: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            trees: 200,
            mean_size: 120,
            branching: 0.1,
            topic_words: 8,
            topic_rate: 0.6,
            topic_bonus: 20,
            hot_topics: 0,
            hot_bonus: 0,
            karma_noise: 10,
            duplicate_rate: 0.0,
            vocab_size: 400,
            words_per_comment: 8,
            knowledge_per_epoch: 4,
            epoch_secs: 86_400,
            epochs: 30,
            start_ts: 1_400_000_000,
            reply_gap: 60,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synth: {m}")));
        if self.mean_size < 2 {
            return bad("mean_size must be >= 2");
        }
        if !(self.branching >= 0.0 && self.branching.is_finite()) {
            return bad("branching must be finite and >= 0");
        }
        if !(0.0..=3.0).contains(&self.topic_rate) {
            return bad("topic_rate must lie in [0, 3]");
        }
        if self.topic_rate > 0.0 && self.topic_words == 0 {
            return bad("topic_rate > 0 needs topic_words > 0");
        }
        if self.hot_topics > self.topic_words {
            return bad("hot_topics exceeds topic_words");
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) {
            return bad("duplicate_rate must lie in [0, 1]");
        }
        if self.karma_noise < 0 || self.topic_bonus < 0 || self.hot_bonus < 0 {
            return bad("karma parameters must be >= 0");
        }
        if self.vocab_size < 16 || self.words_per_comment == 0 {
            return bad("need vocab_size >= 16 and words_per_comment >= 1");
        }
        if self.epoch_secs <= 0 || self.epochs < 2 || self.reply_gap <= 0 {
            return bad("epoch_secs and reply_gap must be positive, epochs >= 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub trees: Vec<DiscussionTree>,
    pub knowledge: Vec<KnowledgePost>,
    pub topic_words: Vec<String>,
    /// Hot topic indices per epoch (empty lists when drift is off).
    pub hot_schedule: Vec<Vec<usize>>,
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "pu", "ge", "do", "fi", "ba", "ho", "ly",
];

const TOPICS: [&str; 16] = [
    "mars", "comet", "vaccine", "glacier", "quantum", "volcano", "neutrino", "coral", "eclipse", "fusion",
    "genome", "tsunami", "asteroid", "enzyme", "magnet", "orbit",
];

fn background_word(i: usize) -> String {
    // Three syllables from a 16-symbol alphabet, never a topic word.
    let mut w = String::new();
    let mut v = i;
    for _ in 0..3 {
        w.push_str(SYLLABLES[v % 16]);
        v /= 16;
    }
    if v > 0 {
        w.push_str(&format!("{v}"));
    }
    w
}

fn topic_word(i: usize) -> String {
    if i < TOPICS.len() {
        String::from(TOPICS[i])
    } else {
        format!("topic{i}")
    }
}

/// `|A ∩ B| / max(|A|, |B|)` over distinct tokens.
pub fn token_overlap(a: &str, b: &str) -> f64 {
    let mut x: Vec<&str> = a.split_whitespace().collect();
    let mut y: Vec<&str> = b.split_whitespace().collect();
    x.sort_unstable();
    x.dedup();
    y.sort_unstable();
    y.dedup();
    let denom = x.len().max(y.len());
    if denom == 0 {
        return 0.0;
    }
    let shared = x.iter().filter(|t| y.binary_search(t).is_ok()).count();
    shared as f64 / denom as f64
}

struct Generator<'c> {
    cfg: &'c SynthConfig,
    rng: crate::Rng,
    background: Vec<String>,
    topics: Vec<String>,
    hot: Vec<Vec<usize>>,
}

impl Generator<'_> {
    fn epoch_of(&self, ts: i64) -> usize {
        (((ts - self.cfg.start_ts) / self.cfg.epoch_secs).max(0) as usize).min(self.cfg.epochs - 1)
    }

    fn background_tokens(&mut self, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| self.background[self.rng.gen_range(0..self.background.len())].clone())
            .collect()
    }

    /// Fresh comment text and the topic indices it mentions.
    fn comment_text(&mut self) -> (String, Vec<usize>) {
        let mut tokens = self.background_tokens(self.cfg.words_per_comment);
        let mut mentioned = Vec::new();
        if !self.topics.is_empty() {
            for _ in 0..3 {
                if self.rng.gen_bool(self.cfg.topic_rate / 3.0) {
                    let t = self.rng.gen_range(0..self.topics.len());
                    mentioned.push(t);
                    let at = self.rng.gen_range(0..=tokens.len());
                    tokens.insert(at, self.topics[t].clone());
                }
            }
        }
        (tokens.join(" "), mentioned)
    }

    fn karma_for(&mut self, mentioned: &[usize], ts: i64) -> i64 {
        let mut karma = self.rng.gen_range(0..=self.cfg.karma_noise);
        let hot = &self.hot[self.epoch_of(ts)];
        for t in mentioned {
            karma += self.cfg.topic_bonus;
            if hot.contains(t) {
                karma += self.cfg.hot_bonus;
            }
        }
        karma
    }

    fn near_copy(&mut self, text: &str) -> String {
        let mut tokens: Vec<String> = text.split_whitespace().map(String::from).collect();
        let background: Vec<usize> = (0..tokens.len()).filter(|&i| !self.topics.contains(&tokens[i])).collect();
        if let Some(&i) = background.as_slice().choose(&mut self.rng) {
            tokens[i] = self.background_tokens(1).remove(0);
        }
        tokens.join(" ")
    }

    fn tree(&mut self, tree_idx: usize) -> Result<DiscussionTree> {
        let cfg = self.cfg;
        let base_id = (tree_idx as i64 + 1) * 1_000_000;
        let span = cfg.epoch_secs * cfg.epochs as i64;
        let post_ts = cfg.start_ts + self.rng.gen_range(cfg.epoch_secs..span - cfg.epoch_secs / 4);
        let size = self.rng.gen_range(cfg.mean_size / 2..=cfg.mean_size + cfg.mean_size / 2);

        let post_text = self.background_tokens(cfg.words_per_comment + 4).join(" ");
        let post_karma = self.rng.gen_range(0..=cfg.karma_noise);
        let mut comments = vec![Comment {
            id: base_id,
            parent: None,
            text: post_text,
            karma: post_karma,
            ts: post_ts,
        }];
        let mut weights = vec![1.0 + cfg.branching * post_karma.max(0) as f64];
        let mut children: Vec<Vec<usize>> = vec![Vec::new()];
        let mut is_copy = vec![false];
        let mut ts = post_ts;
        for j in 1..=size {
            ts += self.rng.gen_range(1..=2 * cfg.reply_gap);
            let total: f64 = weights.iter().sum();
            let mut pick = self.rng.gen_range(0.0..total);
            let mut parent = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if pick < *w {
                    parent = i;
                    break;
                }
                pick -= w;
            }
            let originals: Vec<usize> = children[parent].iter().copied().filter(|&s| !is_copy[s]).collect();
            let duplicate = !originals.is_empty() && self.rng.gen_bool(cfg.duplicate_rate);
            let (text, karma) = if duplicate {
                let source = *originals.as_slice().choose(&mut self.rng).expect("non-empty");
                let text = self.near_copy(&comments[source].text);
                (text, self.rng.gen_range(0..=cfg.karma_noise))
            } else {
                let (mut text, mut mentioned) = self.comment_text();
                for _ in 0..16 {
                    if children[parent].iter().all(|&s| token_overlap(&text, &comments[s].text) <= 0.8) {
                        break;
                    }
                    (text, mentioned) = self.comment_text();
                }
                let karma = self.karma_for(&mentioned, ts);
                (text, karma)
            };
            comments.push(Comment {
                id: base_id + j as i64,
                parent: Some(comments[parent].id),
                text,
                karma,
                ts,
            });
            weights.push(1.0 + cfg.branching * karma.max(0) as f64);
            children.push(Vec::new());
            children[parent].push(j);
            is_copy.push(duplicate);
        }
        DiscussionTree::from_comments(comments)
    }

    fn knowledge(&mut self) -> Vec<KnowledgePost> {
        let cfg = self.cfg;
        let mut posts = Vec::new();
        for epoch in 0..cfg.epochs {
            for _ in 0..cfg.knowledge_per_epoch {
                let ts = cfg.start_ts + epoch as i64 * cfg.epoch_secs + self.rng.gen_range(0..cfg.epoch_secs);
                let focus: Vec<usize> = if self.hot[epoch].is_empty() {
                    if self.topics.is_empty() {
                        Vec::new()
                    } else {
                        vec![self.rng.gen_range(0..self.topics.len())]
                    }
                } else {
                    self.hot[epoch].clone()
                };
                let text_with_topics = |g: &mut Self, n: usize| {
                    let mut tokens = g.background_tokens(n);
                    for &t in &focus {
                        tokens.push(g.topics[t].clone());
                    }
                    tokens.shuffle(&mut g.rng);
                    tokens.join(" ")
                };
                let text = text_with_topics(self, 6);
                let comments = (0..6)
                    .map(|_| KnowledgeComment {
                        text: text_with_topics(self, 5),
                        karma: self.rng.gen_range(0..=100),
                    })
                    .collect();
                posts.push(KnowledgePost {
                    id: 0,
                    ts,
                    text,
                    karma: self.rng.gen_range(0..=500),
                    comments,
                });
            }
        }
        posts.sort_by_key(|p| p.ts);
        for (i, p) in posts.iter_mut().enumerate() {
            p.id = i as i64 + 1;
        }
        posts
    }
}

/// Deterministic for a given config (the seed lives in the config).
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let mut rng = crate::rng_from_seed(cfg.seed);
    let topics: Vec<String> = (0..cfg.topic_words).map(topic_word).collect();
    let hot: Vec<Vec<usize>> = (0..cfg.epochs)
        .map(|_| {
            let mut h = rand::seq::index::sample(&mut rng, cfg.topic_words, cfg.hot_topics).into_vec();
            h.sort_unstable();
            h
        })
        .collect();
    let mut gen = Generator {
        cfg,
        rng,
        background: (0..cfg.vocab_size).map(background_word).collect(),
        topics,
        hot,
    };
    let knowledge = gen.knowledge();
    let trees = (0..cfg.trees).map(|i| gen.tree(i)).collect::<Result<Vec<_>>>()?;
    Ok(SyntheticWorld {
        trees,
        knowledge,
        topic_words: gen.topics,
        hot_schedule: gen.hot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            trees: 20,
            mean_size: 40,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        for (x, y) in a.trees.iter().zip(&b.trees) {
            assert_eq!(x.nodes(), y.nodes());
        }
        assert_eq!(a.knowledge, b.knowledge);
    }

    #[test]
    fn no_near_duplicates_without_duplicate_rate() {
        let w = generate_synthetic(&small()).unwrap();
        for t in &w.trees {
            for v in 0..t.len() {
                let kids = t.children(v);
                for (i, &a) in kids.iter().enumerate() {
                    for &b in &kids[i + 1..] {
                        assert!(token_overlap(&t.node(a).text, &t.node(b).text) <= 0.8);
                    }
                }
            }
        }
    }

    #[test]
    fn duplicates_appear_when_requested() {
        let cfg = SynthConfig {
            duplicate_rate: 0.5,
            ..small()
        };
        let w = generate_synthetic(&cfg).unwrap();
        let mut dupes = 0;
        for t in &w.trees {
            for v in 0..t.len() {
                let kids = t.children(v);
                for (i, &a) in kids.iter().enumerate() {
                    for &b in &kids[i + 1..] {
                        if token_overlap(&t.node(a).text, &t.node(b).text) > 0.8 {
                            dupes += 1;
                        }
                    }
                }
            }
        }
        assert!(dupes > 50, "{dupes}");
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SynthConfig {
                duplicate_rate: 1.5,
                ..small()
            },
            SynthConfig {
                hot_topics: 9,
                ..small()
            },
            SynthConfig {
                mean_size: 1,
                ..small()
            },
            SynthConfig {
                karma_noise: -1,
                ..small()
            },
        ] {
            assert!(generate_synthetic(&cfg).is_err());
        }
    }

    #[test]
    fn knowledge_is_chronological_and_topical() {
        let cfg = SynthConfig {
            hot_topics: 2,
            hot_bonus: 30,
            ..small()
        };
        let w = generate_synthetic(&cfg).unwrap();
        assert_eq!(w.knowledge.len(), cfg.epochs * cfg.knowledge_per_epoch);
        assert!(w.knowledge.windows(2).all(|p| p[0].ts <= p[1].ts));
        for p in &w.knowledge {
            let e = ((p.ts - cfg.start_ts) / cfg.epoch_secs) as usize;
            for &t in &w.hot_schedule[e] {
                assert!(p.text.contains(&w.topic_words[t]));
            }
        }
    }

    #[test]
    fn background_words_never_collide_with_topics() {
        for i in 0..5000 {
            assert!(!TOPICS.contains(&background_word(i).as_str()));
        }
    }
}
