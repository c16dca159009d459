//! External knowledge: a chronological document store, relevance features,
//! softmax attention and rule-based retrieval.
//!
//! A state at time `t` may only look at documents with timestamp `< t`.
//! For each visible document the relevance features are
//! `[ind_day, ind_wk, u_sem, u_pop]`; the attention weights are
//! `softmax(f . beta)` and the world embedding is `o = sum_i p_i d_i`, where
//! `d_i` is a learned embedding of the document's bag of words.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::env::Comment;
use crate::math::{axpy, exp, SparseVec};
use crate::nn::{join, Activation, Dense, FeedForward, FfCache, Input, ParamSet, Tensor, TensorMut};
use crate::text::{cosine, BowVector, TextEncoder};
use crate::{Error, Result};

pub const DAY_SECS: i64 = 86_400;
pub const WEEK_SECS: i64 = 7 * DAY_SECS;
/// Comments kept per document.
pub const TOP_COMMENTS: usize = 5;
/// Documents kept by the top-10 rules.
pub const RULE_TOP: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KnowledgeComment {
    pub text: String,
    pub karma: i64,
}

/// A raw external post with its comments, as read from a corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KnowledgePost {
    pub id: i64,
    pub ts: i64,
    #[cfg_attr(feature = "serde", serde(rename = "post_text"))]
    pub text: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub karma: i64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub comments: Vec<KnowledgeComment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeDoc {
    pub id: i64,
    pub ts: i64,
    /// Post text followed by the kept comments, space separated.
    pub text: String,
    /// Post karma plus the karma of the kept comments.
    pub raw_popularity: i64,
    pub bow: BowVector,
    pub tfidf: SparseVec,
}

/// Keeps the `TOP_COMMENTS` highest-karma entries; `order` breaks ties.
fn top_comments<'c, T>(items: &'c [T], karma: impl Fn(&T) -> i64, order: impl Fn(usize, &T) -> i64) -> Vec<&'c T> {
    let mut ranked: Vec<(usize, &T)> = items.iter().enumerate().collect();
    ranked.sort_by_key(|&(i, c)| (core::cmp::Reverse(karma(c)), order(i, c)));
    ranked.into_iter().take(TOP_COMMENTS).map(|(_, c)| c).collect()
}

/// Append-only, timestamp-ordered document collection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeStore {
    docs: Vec<KnowledgeDoc>,
}

impl KnowledgeStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn docs(&self) -> &[KnowledgeDoc] {
        &self.docs
    }

    fn push(&mut self, id: i64, ts: i64, parts: Vec<&str>, raw_popularity: i64, enc: &TextEncoder) -> Result<&KnowledgeDoc> {
        if let Some(tail) = self.docs.last() {
            if ts < tail.ts {
                return Err(Error::OutOfOrder { ts, tail: tail.ts });
            }
        }
        let text = parts.into_iter().filter(|p| !p.trim().is_empty()).collect::<Vec<_>>().join(" ");
        if text.is_empty() {
            return Err(Error::EmptyInput("knowledge document text"));
        }
        let bow = enc.bow(&text);
        let tfidf = enc.tfidf.vector(&bow);
        self.docs.push(KnowledgeDoc {
            id,
            ts,
            text,
            raw_popularity,
            bow,
            tfidf,
        });
        Ok(self.docs.last().expect("just pushed"))
    }

    /// Builds a document from a post and its comments (top five by karma,
    /// ties by id) and appends it.
    pub fn ingest(&mut self, post: &Comment, comments: &[Comment], enc: &TextEncoder) -> Result<&KnowledgeDoc> {
        let kept = top_comments(comments, |c| c.karma, |_, c| c.id);
        let mut parts = vec![post.text.as_str()];
        parts.extend(kept.iter().map(|c| c.text.as_str()));
        let pop = post.karma + kept.iter().map(|c| c.karma).sum::<i64>();
        self.push(post.id, post.ts, parts, pop, enc)
    }

    /// Same as [`KnowledgeStore::ingest`] for a raw post; ties by list order.
    pub fn ingest_post(&mut self, post: &KnowledgePost, enc: &TextEncoder) -> Result<&KnowledgeDoc> {
        let kept = top_comments(&post.comments, |c| c.karma, |i, _| i as i64);
        let mut parts = vec![post.text.as_str()];
        parts.extend(kept.iter().map(|c| c.text.as_str()));
        let pop = post.karma + kept.iter().map(|c| c.karma).sum::<i64>();
        self.push(post.id, post.ts, parts, pop, enc)
    }

    /// Ingests posts in timestamp order (stable for equal timestamps).
    pub fn from_posts(posts: &[KnowledgePost], enc: &TextEncoder) -> Result<Self> {
        let mut sorted: Vec<&KnowledgePost> = posts.iter().collect();
        sorted.sort_by_key(|p| p.ts);
        let mut store = Self::new();
        for p in sorted {
            store.ingest_post(p, enc)?;
        }
        Ok(store)
    }

    pub fn popularity(&self) -> Vec<i64> {
        self.docs.iter().map(|d| d.raw_popularity).collect()
    }

    /// Number of documents with timestamp strictly before `t`.
    pub fn visible_count(&self, t: i64) -> usize {
        self.docs.partition_point(|d| d.ts < t)
    }

    pub fn visible(&self, t: i64) -> &[KnowledgeDoc] {
        &self.docs[..self.visible_count(t)]
    }

    /// Relevance features of every document visible at `t_now`.
    pub fn relevance(&self, state_tfidf: &SparseVec, t_now: i64) -> Relevance {
        let visible = self.visible(t_now);
        let max_pop = visible.iter().map(|d| d.raw_popularity).max().unwrap_or(0);
        Relevance {
            features: visible.iter().map(|d| features(state_tfidf, d, t_now, max_pop)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceFeatures {
    pub ind_day: f64,
    pub ind_wk: f64,
    pub u_sem: f64,
    pub u_pop: f64,
}

impl RelevanceFeatures {
    pub fn to_array(self) -> [f64; 4] {
        [self.ind_day, self.ind_wk, self.u_sem, self.u_pop]
    }

    pub fn score(self, beta: &[f64]) -> f64 {
        let f = self.to_array();
        f[0] * beta[0] + f[1] * beta[1] + f[2] * beta[2] + f[3] * beta[3]
    }
}

/// Features of one document for a state observed at `t_now`.
///
/// `max_visible_pop <= 0` yields `u_pop = 0`; negative popularity is
/// clamped to 0 so that `u_pop` stays in `[0, 1]`.
pub fn features(state_tfidf: &SparseVec, doc: &KnowledgeDoc, t_now: i64, max_visible_pop: i64) -> RelevanceFeatures {
    let age = t_now - doc.ts;
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let u_pop = if max_visible_pop <= 0 {
        0.0
    } else {
        (doc.raw_popularity as f64 / max_visible_pop as f64).max(0.0)
    };
    RelevanceFeatures {
        ind_day: ind(age <= DAY_SECS),
        ind_wk: ind(age <= WEEK_SECS),
        u_sem: cosine(state_tfidf, &doc.tfidf),
        u_pop,
    }
}

/// Features of the documents visible to one state, in store order. The
/// visible documents are always a prefix of the store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relevance {
    pub features: Vec<RelevanceFeatures>,
}

impl Relevance {
    pub fn visible(&self) -> usize {
        self.features.len()
    }
}

/// `softmax(f_i . beta)` with max subtraction.
pub fn attention(features: &[RelevanceFeatures], beta: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != 4 {
        return Err(Error::Dimension {
            what: "attention beta",
            expected: 4,
            actual: beta.len(),
        });
    }
    if features.is_empty() {
        return Err(Error::EmptyInput("attention over an empty document set"));
    }
    let scores: Vec<f64> = features.iter().map(|f| f.score(beta)).collect();
    Ok(softmax(&scores))
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| exp(s - max)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `o = sum_i p_i d_i`.
pub fn world_embedding<S: AsRef<[f64]>>(p: &[f64], docs: &[S]) -> Result<Vec<f64>> {
    if p.len() != docs.len() {
        return Err(Error::Dimension {
            what: "attention weights vs documents",
            expected: docs.len(),
            actual: p.len(),
        });
    }
    let Some(first) = docs.first() else {
        return Err(Error::EmptyInput("world embedding over no documents"));
    };
    let mut o = vec![0.0; first.as_ref().len()];
    for (w, d) in p.iter().zip(docs) {
        if d.as_ref().len() != o.len() {
            return Err(Error::ShapeMismatch("document embeddings differ in length".into()));
        }
        axpy(*w, d.as_ref(), &mut o);
    }
    Ok(o)
}

/// Gradients of `o . d_o` through the convex combination and the softmax:
/// returns `(d_beta, d_docs)`.
pub fn attention_backward<S: AsRef<[f64]>>(
    features: &[RelevanceFeatures],
    p: &[f64],
    docs: &[S],
    d_o: &[f64],
) -> Result<([f64; 4], Vec<Vec<f64>>)> {
    if p.len() != features.len() || p.len() != docs.len() {
        return Err(Error::StaleCache("attention"));
    }
    let g: Vec<f64> = docs.iter().map(|d| crate::math::dot(d.as_ref(), d_o)).collect();
    let g_bar: f64 = p.iter().zip(&g).map(|(p, g)| p * g).sum();
    let mut d_beta = [0.0; 4];
    for ((f, &pi), &gi) in features.iter().zip(p).zip(&g) {
        let ds = pi * (gi - g_bar);
        for (db, fv) in d_beta.iter_mut().zip(f.to_array()) {
            *db += ds * fv;
        }
    }
    let d_docs = p.iter().map(|&pi| d_o.iter().map(|v| pi * v).collect()).collect();
    Ok((d_beta, d_docs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    PastDay,
    PastWeek,
    Top10Similar,
    Top10Popular,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::PastDay, Rule::PastWeek, Rule::Top10Similar, Rule::Top10Popular];

    pub fn name(self) -> &'static str {
        match self {
            Rule::PastDay => "past_day",
            Rule::PastWeek => "past_week",
            Rule::Top10Similar => "top10_similar",
            Rule::Top10Popular => "top10_popular",
        }
    }

    /// Indices of the visible documents selected by the rule, in store
    /// order. `popularity` holds raw popularity by store index.
    pub fn select(self, relevance: &Relevance, popularity: &[i64]) -> Vec<usize> {
        let f = &relevance.features;
        let top = |key: &dyn Fn(usize) -> f64| {
            let mut idx: Vec<usize> = (0..f.len()).collect();
            // Stable: equal keys keep store order.
            idx.sort_by(|&a, &b| key(b).total_cmp(&key(a)));
            idx.truncate(RULE_TOP);
            idx.sort_unstable();
            idx
        };
        match self {
            Rule::PastDay => (0..f.len()).filter(|&i| f[i].ind_day == 1.0).collect(),
            Rule::PastWeek => (0..f.len()).filter(|&i| f[i].ind_wk == 1.0).collect(),
            Rule::Top10Similar => top(&|i| f[i].u_sem),
            Rule::Top10Popular => top(&|i| popularity[i] as f64),
        }
    }
}

/// Uniform average of the rule's selected document embeddings; zero when
/// nothing is selected. `doc_embeddings` is indexed like the store.
pub fn rule_retrieval<S: AsRef<[f64]>>(
    store: &KnowledgeStore,
    state_tfidf: &SparseVec,
    t_now: i64,
    rule: Rule,
    doc_embeddings: &[S],
    dim: usize,
) -> Result<Vec<f64>> {
    let relevance = store.relevance(state_tfidf, t_now);
    let chosen = rule.select(&relevance, &store.popularity());
    let mut o = vec![0.0; dim];
    if chosen.is_empty() {
        return Ok(o);
    }
    let w = 1.0 / chosen.len() as f64;
    for i in chosen {
        let d = doc_embeddings.get(i).ok_or(Error::ShapeMismatch("missing document embedding".into()))?;
        if d.as_ref().len() != dim {
            return Err(Error::ShapeMismatch("document embedding length".into()));
        }
        axpy(w, d.as_ref(), &mut o);
    }
    Ok(o)
}

/// How a network turns external knowledge into its state embedding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum KnowledgeMode {
    #[default]
    None,
    Rule(Rule),
    Attention,
}

impl KnowledgeMode {
    pub const ALL: [KnowledgeMode; 6] = [
        KnowledgeMode::None,
        KnowledgeMode::Rule(Rule::PastDay),
        KnowledgeMode::Rule(Rule::PastWeek),
        KnowledgeMode::Rule(Rule::Top10Similar),
        KnowledgeMode::Rule(Rule::Top10Popular),
        KnowledgeMode::Attention,
    ];

    pub fn enabled(self) -> bool {
        self != KnowledgeMode::None
    }
}

impl fmt::Display for KnowledgeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnowledgeMode::None => f.write_str("none"),
            KnowledgeMode::Rule(r) => write!(f, "rule:{}", r.name()),
            KnowledgeMode::Attention => f.write_str("attention"),
        }
    }
}

impl FromStr for KnowledgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KnowledgeMode::ALL
            .into_iter()
            .find(|m| {
                let mut buf = String::new();
                fmt::write(&mut buf, format_args!("{m}")).is_ok() && buf == s
            })
            .ok_or_else(|| Error::InvalidConfig(alloc::format!("unknown knowledge mode `{s}`")))
    }
}

/// Learnable knowledge pieces owned by one network: the attention weights,
/// the document encoder and the projection of `[h_s, o]` back to the
/// embedding size.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeParams {
    pub mode: KnowledgeMode,
    pub beta: Vec<f64>,
    pub doc_net: FeedForward,
    pub projection: Dense,
}

impl KnowledgeParams {
    pub fn new(mode: KnowledgeMode, vocab_dim: usize, embed_dim: usize, rng: &mut crate::Rng) -> Result<Self> {
        if !mode.enabled() {
            return Err(Error::InvalidConfig("knowledge parameters need an enabled mode".into()));
        }
        Ok(Self {
            mode,
            beta: crate::nn::uniform_vec(4, rng),
            doc_net: FeedForward::standard(vocab_dim, embed_dim, rng)?,
            projection: Dense::new(2 * embed_dim, embed_dim, Activation::Identity, rng)?,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.doc_net.out_dim()
    }

    /// Embeds every document of the store with the current document encoder.
    pub fn doc_table(&self, store: &KnowledgeStore) -> Result<DocTable> {
        let mut emb = Vec::with_capacity(store.len());
        let mut caches = Vec::with_capacity(store.len());
        for d in store.docs() {
            let (e, c) = self.doc_net.forward(Input::Sparse(d.bow.as_sparse()))?;
            emb.push(e);
            caches.push(c);
        }
        Ok(DocTable {
            emb,
            caches,
            popularity: store.popularity(),
        })
    }

    /// World embedding of one state.
    pub fn world(&self, relevance: &Relevance, table: &DocTable) -> Result<(Vec<f64>, WorldCache)> {
        let dim = self.embed_dim();
        if relevance.visible() > table.len() {
            return Err(Error::StaleCache("document table shorter than the visible prefix"));
        }
        let (weights, attention_p) = match self.mode {
            KnowledgeMode::None => return Err(Error::InvalidConfig("knowledge disabled".into())),
            KnowledgeMode::Attention if relevance.visible() > 0 => {
                let p = attention(&relevance.features, &self.beta)?;
                ((0..p.len()).zip(p.iter().copied()).collect(), Some(p))
            }
            KnowledgeMode::Attention => (Vec::new(), None),
            KnowledgeMode::Rule(rule) => {
                let chosen = rule.select(relevance, &table.popularity);
                let w = 1.0 / chosen.len().max(1) as f64;
                (chosen.into_iter().map(|i| (i, w)).collect(), None)
            }
        };
        let mut o = vec![0.0; dim];
        for &(i, w) in &weights {
            axpy(w, &table.emb[i], &mut o);
        }
        Ok((
            o,
            WorldCache {
                weights,
                attention_p,
                features: relevance.features.clone(),
            },
        ))
    }

    /// Backward through the world embedding: beta gradients go to `grads`,
    /// per-document gradients to `docs` (applied later by
    /// [`DocTable::backward`]).
    pub fn world_backward(
        &self,
        cache: &WorldCache,
        table: &DocTable,
        d_o: &[f64],
        grads: &mut KnowledgeParams,
        docs: &mut DocGrads,
    ) -> Result<()> {
        if let Some(p) = &cache.attention_p {
            let g: Vec<f64> = (0..p.len()).map(|i| crate::math::dot(&table.emb[i], d_o)).collect();
            let g_bar: f64 = p.iter().zip(&g).map(|(p, g)| p * g).sum();
            for ((f, &pi), &gi) in cache.features.iter().zip(p).zip(&g) {
                let ds = pi * (gi - g_bar);
                for (db, fv) in grads.beta.iter_mut().zip(f.to_array()) {
                    *db += ds * fv;
                }
            }
        }
        for &(i, w) in &cache.weights {
            docs.add(i, w, d_o, table.len());
        }
        Ok(())
    }
}

impl ParamSet for KnowledgeParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        out.push(Tensor {
            name: join(prefix, "beta"),
            shape: vec![4],
            data: &self.beta,
        });
        self.doc_net.collect(&join(prefix, "doc_net"), out);
        self.projection.collect(&join(prefix, "projection"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        out.push(TensorMut {
            name: join(prefix, "beta"),
            shape: vec![4],
            data: &mut self.beta,
        });
        self.doc_net.collect_mut(&join(prefix, "doc_net"), out);
        self.projection.collect_mut(&join(prefix, "projection"), out);
    }
}

/// Document embeddings under one set of encoder parameters, with the
/// activations needed to backpropagate into the encoder.
#[derive(Debug, Clone)]
pub struct DocTable {
    emb: Vec<Vec<f64>>,
    caches: Vec<FfCache>,
    popularity: Vec<i64>,
}

impl DocTable {
    pub fn len(&self) -> usize {
        self.emb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emb.is_empty()
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.emb
    }

    /// Pushes accumulated per-document gradients through the encoder.
    pub fn backward(&self, params: &KnowledgeParams, docs: &DocGrads, grads: &mut KnowledgeParams) -> Result<()> {
        for (i, d) in docs.grads.iter().enumerate() {
            if let Some(d) = d {
                let cache = self.caches.get(i).ok_or(Error::StaleCache("document table"))?;
                params.doc_net.backward(cache, d, &mut grads.doc_net, false)?;
            }
        }
        Ok(())
    }
}

/// Per-document gradient accumulator. Encoder backward is linear in the
/// output gradient, so summing first and backpropagating once per document
/// is exact.
#[derive(Debug, Clone, Default)]
pub struct DocGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl DocGrads {
    pub fn new() -> Self {
        Self::default()
    }

    fn add(&mut self, i: usize, w: f64, d_o: &[f64], len: usize) {
        if self.grads.len() < len {
            self.grads.resize(len, None);
        }
        let slot = self.grads[i].get_or_insert_with(|| vec![0.0; d_o.len()]);
        axpy(w, d_o, slot);
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }
}

#[derive(Debug, Clone)]
pub struct WorldCache {
    weights: Vec<(usize, f64)>,
    attention_p: Option<Vec<f64>>,
    features: Vec<RelevanceFeatures>,
}

impl WorldCache {
    /// Attention weights over the visible documents, if attention was used.
    pub fn attention_weights(&self) -> Option<&[f64]> {
        self.attention_p.as_deref()
    }

    /// `(document index, weight)` pairs that formed the embedding.
    pub fn weights(&self) -> &[(usize, f64)] {
        &self.weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use alloc::string::ToString;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn encoder() -> TextEncoder {
        TextEncoder::fit(&["mars rover lands", "comet tail glows", "rover finds water on mars"], 100)
    }

    fn comment(id: i64, karma: i64, text: &str) -> Comment {
        Comment {
            id,
            parent: Some(0),
            text: text.to_string(),
            karma,
            ts: 0,
        }
    }

    fn post(id: i64, ts: i64, karma: i64, text: &str) -> KnowledgePost {
        KnowledgePost {
            id,
            ts,
            text: text.to_string(),
            karma,
            comments: Vec::new(),
        }
    }

    #[test]
    fn ingest_keeps_top_five() {
        let enc = encoder();
        let mut store = KnowledgeStore::new();
        let p = Comment {
            id: 0,
            parent: None,
            text: "mars".into(),
            karma: 10,
            ts: 100,
        };
        let cs: Vec<Comment> = [5, 4, 3, 2, 1, 0]
            .iter()
            .enumerate()
            .map(|(i, &k)| comment(i as i64 + 1, k, &alloc::format!("c{k}")))
            .collect();
        let doc = store.ingest(&p, &cs, &enc).unwrap();
        assert_eq!(doc.raw_popularity, 25);
        assert!(!doc.text.contains("c0"));
        assert!(doc.text.contains("c1"));

        let doc = store.ingest(&Comment { ts: 200, ..p.clone() }, &cs[..2], &enc).unwrap();
        assert_eq!(doc.raw_popularity, 19);
        assert_eq!(doc.text, "mars c5 c4");
    }

    #[test]
    fn ingest_ties_by_id_and_rejects_out_of_order() {
        let enc = encoder();
        let mut store = KnowledgeStore::new();
        let p = Comment {
            id: 0,
            parent: None,
            text: "mars".into(),
            karma: 0,
            ts: 100,
        };
        let cs: Vec<Comment> = (0..7).rev().map(|i| comment(i + 1, 1, &alloc::format!("x{i}"))).collect();
        let doc = store.ingest(&p, &cs, &enc).unwrap();
        assert_eq!(doc.text, "mars x0 x1 x2 x3 x4");
        let late = Comment { ts: 99, ..p };
        assert!(matches!(store.ingest(&late, &[], &enc), Err(Error::OutOfOrder { ts: 99, tail: 100 })));
    }

    #[test]
    fn visibility_is_strict() {
        let enc = encoder();
        let store = KnowledgeStore::from_posts(&[post(1, 10, 1, "mars"), post(2, 20, 1, "comet")], &enc).unwrap();
        assert!(store.visible(10).is_empty());
        assert_eq!(store.visible(11).len(), 1);
        assert_eq!(store.visible(20).len(), 1);
        assert_eq!(store.visible(1000).len(), 2);
        assert!(store.visible(-5).is_empty());
    }

    #[test]
    fn feature_examples() {
        let enc = encoder();
        let store =
            KnowledgeStore::from_posts(&[post(1, 0, 4, "mars rover"), post(2, 0, 8, "comet")], &enc).unwrap();
        let q = enc.tfidf.vector(&enc.bow("mars"));
        let d = &store.docs()[0];
        let f = features(&q, d, 10 * 3600, 8);
        assert_eq!((f.ind_day, f.ind_wk), (1.0, 1.0));
        let f = features(&q, d, 3 * DAY_SECS, 8);
        assert_eq!((f.ind_day, f.ind_wk), (0.0, 1.0));
        assert_eq!(f.u_pop, 0.5);
        assert!(f.u_sem > 0.0);
        let rel = store.relevance(&q, 1);
        assert_eq!(rel.features[1].u_pop, 1.0);
        assert_eq!(features(&q, d, 1, 0).u_pop, 0.0);
        assert_eq!(features(&q, d, 1, -3).u_pop, 0.0);
    }

    fn rf(score_day: f64) -> RelevanceFeatures {
        RelevanceFeatures {
            ind_day: score_day,
            ind_wk: 0.0,
            u_sem: 0.0,
            u_pop: 0.0,
        }
    }

    #[test]
    fn attention_examples() {
        let p = attention(&[rf(1.0), rf(0.0), rf(0.3)], &[0.0; 4]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(attention(&[rf(0.7)], &[2.0, 0.0, 0.0, 0.0]).unwrap(), vec![1.0]);
        let p = attention(&[rf(core::f64::consts::LN_2), rf(0.0)], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-9 && (p[1] - 1.0 / 3.0).abs() < 1e-9);
        assert!(attention(&[], &[0.0; 4]).is_err());
        assert!(attention(&[rf(0.0)], &[0.0; 3]).is_err());
        // Large scores do not overflow.
        let p = attention(&[rf(1.0), rf(0.0)], &[1e4, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn world_embedding_examples() {
        let d = [vec![3.0, 0.0], vec![0.0, 3.0]];
        assert_eq!(world_embedding(&[0.0, 1.0], &d).unwrap(), vec![0.0, 3.0]);
        let o = world_embedding(&[2.0 / 3.0, 1.0 / 3.0], &d).unwrap();
        assert!((o[0] - 2.0).abs() < 1e-12 && (o[1] - 1.0).abs() < 1e-12);
        let same = [vec![1.5, -2.0], vec![1.5, -2.0], vec![1.5, -2.0]];
        assert_eq!(world_embedding(&[0.2, 0.3, 0.5], &same).unwrap(), vec![1.5, -2.0]);
        assert!(world_embedding(&[1.0], &d).is_err());
    }

    #[test]
    fn attention_backward_trivial_cases() {
        let f = [rf(1.0), rf(0.0)];
        let p = attention(&f, &[0.5, 0.0, 0.0, 0.0]).unwrap();
        let d = [vec![1.0, 2.0], vec![-1.0, 0.5]];
        let (db, dd) = attention_backward(&f, &p, &d, &[0.0, 0.0]).unwrap();
        assert_eq!(db, [0.0; 4]);
        assert!(dd.iter().flatten().all(|&v| v == 0.0));
        let (db, _) = attention_backward(&f[..1], &[1.0], &d[..1], &[0.3, -0.7]).unwrap();
        assert_eq!(db, [0.0; 4]);
    }

    fn random_features(rng: &mut crate::Rng, n: usize) -> Vec<RelevanceFeatures> {
        (0..n)
            .map(|_| {
                let day = rng.gen_bool(0.3);
                RelevanceFeatures {
                    ind_day: day as u8 as f64,
                    ind_wk: (day || rng.gen_bool(0.5)) as u8 as f64,
                    u_sem: rng.gen_range(0.0..1.0),
                    u_pop: rng.gen_range(0.0..1.0),
                }
            })
            .collect()
    }

    #[test]
    fn attention_backward_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = crate::rng_from_seed(seed);
            let n = rng.gen_range(1..6);
            let f = random_features(&mut rng, n);
            let beta: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let docs: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let d_o: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = attention(&f, &beta).unwrap();
            let (db, dd) = attention_backward(&f, &p, &docs, &d_o).unwrap();
            let loss = |beta: &[f64], docs: &[Vec<f64>]| {
                let p = attention(&f, beta).unwrap();
                crate::math::dot(&world_embedding(&p, docs).unwrap(), &d_o)
            };
            let h = 1e-5;
            for j in 0..4 {
                let (mut up, mut down) = (beta.clone(), beta.clone());
                up[j] += h;
                down[j] -= h;
                let num = (loss(&up, &docs) - loss(&down, &docs)) / (2.0 * h);
                assert!((num - db[j]).abs() < 1e-8, "beta {j}: {num} vs {}", db[j]);
            }
            for i in 0..n {
                for j in 0..3 {
                    let (mut up, mut down) = (docs.clone(), docs.clone());
                    up[i][j] += h;
                    down[i][j] -= h;
                    let num = (loss(&beta, &up) - loss(&beta, &down)) / (2.0 * h);
                    assert!((num - dd[i][j]).abs() < 1e-8);
                }
            }
        }
    }

    fn fixture_store() -> (TextEncoder, KnowledgeStore) {
        let enc = encoder();
        let posts = [
            post(1, 0, 50, "mars rover"),
            post(2, 5 * DAY_SECS, 10, "comet tail"),
            post(3, 9 * DAY_SECS, 30, "water on mars"),
            post(4, 9 * DAY_SECS + 3600, 20, "comet glows"),
            post(5, 20 * DAY_SECS, 99, "future mars"),
        ];
        let store = KnowledgeStore::from_posts(&posts, &enc).unwrap();
        (enc, store)
    }

    #[test]
    fn rule_selection_fixture() {
        let (enc, store) = fixture_store();
        let q = enc.tfidf.vector(&enc.bow("mars water"));
        let t = 10 * DAY_SECS;
        let rel = store.relevance(&q, t);
        assert_eq!(rel.visible(), 4);
        let pop = store.popularity();
        // Doc 2 is exactly one day old: the window is inclusive.
        assert_eq!(Rule::PastDay.select(&rel, &pop), vec![2, 3]);
        assert_eq!(Rule::PastWeek.select(&rel, &pop), vec![1, 2, 3]);
        assert_eq!(Rule::Top10Similar.select(&rel, &pop), vec![0, 1, 2, 3]);
        assert_eq!(Rule::Top10Popular.select(&rel, &pop), vec![0, 1, 2, 3]);

        let emb: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0]).collect();
        let o = rule_retrieval(&store, &q, t, Rule::PastWeek, &emb, 2).unwrap();
        assert_eq!(o, vec![2.0, 1.0]);
        let o = rule_retrieval(&store, &q, 0, Rule::Top10Similar, &emb, 2).unwrap();
        assert_eq!(o, vec![0.0, 0.0]);
        let o = rule_retrieval(&store, &q, 3, Rule::Top10Similar, &emb, 2).unwrap();
        assert_eq!(o, vec![0.0, 1.0]);
    }

    #[test]
    fn top10_rules_truncate_with_store_order_ties() {
        let enc = encoder();
        let posts: Vec<KnowledgePost> = (0..14).map(|i| post(i, i, (i % 3) as i64, "mars")).collect();
        let store = KnowledgeStore::from_posts(&posts, &enc).unwrap();
        let rel = store.relevance(&enc.tfidf.vector(&enc.bow("comet")), 100);
        let chosen = Rule::Top10Popular.select(&rel, &store.popularity());
        assert_eq!(chosen, vec![1, 2, 4, 5, 7, 8, 10, 11, 13, 0]
            .into_iter()
            .collect::<alloc::collections::BTreeSet<_>>()
            .into_iter()
            .collect::<Vec<_>>());
        // No similarity at all: first ten in store order.
        assert_eq!(Rule::Top10Similar.select(&rel, &store.popularity()), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in KnowledgeMode::ALL {
            assert_eq!(m.to_string().parse::<KnowledgeMode>().unwrap(), m);
        }
        assert!("rule:yesterday".parse::<KnowledgeMode>().is_err());
    }

    #[test]
    fn world_gradients_match_finite_differences() {
        let (enc, store) = fixture_store();
        let q = enc.tfidf.vector(&enc.bow("mars water"));
        let rel = store.relevance(&q, 10 * DAY_SECS);
        for mode in [KnowledgeMode::Attention, KnowledgeMode::Rule(Rule::PastWeek)] {
            let mut rng = crate::rng_from_seed(11);
            let mut params = KnowledgeParams::new(mode, enc.dim(), 4, &mut rng).unwrap();
            params.beta = vec![1.5, -0.7, 2.0, 0.4];
            let d_o = [0.3, -1.1, 0.8, 0.2];
            let loss = |p: &KnowledgeParams| {
                let table = p.doc_table(&store).unwrap();
                crate::math::dot(&p.world(&rel, &table).unwrap().0, &d_o)
            };
            let table = params.doc_table(&store).unwrap();
            let (_, cache) = params.world(&rel, &table).unwrap();
            let mut grads = params.zeros_like();
            let mut docs = DocGrads::new();
            params.world_backward(&cache, &table, &d_o, &mut grads, &mut docs).unwrap();
            table.backward(&params, &docs, &mut grads).unwrap();
            let err = grad_check(&params, &grads, loss, 1e-5, 0);
            assert!(err < 1e-4, "{mode}: {err}");
        }
    }

    proptest! {
        #[test]
        fn attention_is_a_distribution_and_shift_invariant(
            seed in any::<u64>(),
            n in 1usize..30,
            shift in -50.0f64..50.0,
        ) {
            let mut rng = crate::rng_from_seed(seed);
            let f = random_features(&mut rng, n);
            let beta: Vec<f64> = (0..4).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let p = attention(&f, &beta).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let scores: Vec<f64> = f.iter().map(|x| x.score(&beta) + shift).collect();
            let shifted = softmax(&scores);
            for (a, b) in p.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for x in &f {
                prop_assert!(x.ind_day <= x.ind_wk);
            }
        }
    }
}
