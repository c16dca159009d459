//! Value functions over a state and a set of candidate comments.
//!
//! - [`Drrn`]: `Q0(s, c) = h_s . h_c` with separate state and action
//!   encoders. Read additively over a set, the same parameters give
//!   `Q1(s, a) = sum_{c in a} Q0(s, c)`.
//! - [`DrrnBiLstm`]: `Q2(s, a) = h_s . W [h_fwd, h_bwd]` where the BiLSTM
//!   runs over the comment embeddings of `a` in timestamp order.
//!
//! Both optionally augment the state embedding with a world embedding `o`
//! from the knowledge store: `h_s = P [h_raw, o]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::knowledge::{DocGrads, DocTable, KnowledgeMode, KnowledgeParams, KnowledgeStore, Relevance, WorldCache};
use crate::math::{dot, SparseVec};
use crate::nn::{join, Activation, BiLstm, BiLstmCache, Dense, DenseCache, FeedForward, FfCache, Input, ParamSet, Tensor, TensorMut};
use crate::search::subset_value;
use crate::{Error, Result};

/// Embedding size shared by states, comments and documents.
pub const EMBED_DIM: usize = 20;
/// BiLSTM hidden size.
pub const LSTM_HIDDEN: usize = 20;

/// What a network sees of a state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateFeatures {
    /// Bag of words of the post and every comment tracked so far.
    pub bow: SparseVec,
    pub tfidf: SparseVec,
    /// Time the state is observed at; only earlier documents are visible.
    pub t_now: i64,
    /// Relevance features of the visible documents (empty without a store).
    pub relevance: Relevance,
}

impl StateFeatures {
    pub fn new(bow: SparseVec, tfidf: SparseVec, t_now: i64, store: Option<&KnowledgeStore>) -> Self {
        let relevance = store.map(|s| s.relevance(&tfidf, t_now)).unwrap_or_default();
        Self {
            bow,
            tfidf,
            t_now,
            relevance,
        }
    }
}

/// State encoder plus optional knowledge augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTower {
    pub net: FeedForward,
    pub knowledge: Option<KnowledgeParams>,
}

#[derive(Debug, Clone)]
pub struct TowerCache {
    net: FfCache,
    world: Option<(DenseCache, WorldCache)>,
}

impl StateTower {
    pub fn new(vocab_dim: usize, mode: KnowledgeMode, rng: &mut crate::Rng) -> Result<Self> {
        let net = FeedForward::standard(vocab_dim, EMBED_DIM, rng)?;
        let knowledge = if mode.enabled() {
            Some(KnowledgeParams::new(mode, vocab_dim, EMBED_DIM, rng)?)
        } else {
            None
        };
        Ok(Self { net, knowledge })
    }

    pub fn mode(&self) -> KnowledgeMode {
        self.knowledge.as_ref().map_or(KnowledgeMode::None, |k| k.mode)
    }

    pub fn embed_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn doc_table(&self, store: Option<&KnowledgeStore>) -> Result<Option<DocTable>> {
        match (&self.knowledge, store) {
            (Some(k), Some(s)) => Ok(Some(k.doc_table(s)?)),
            (Some(_), None) => Err(Error::InvalidConfig("knowledge mode needs a document store".into())),
            (None, _) => Ok(None),
        }
    }

    /// `state_net(bow)`, projected together with `world` when given.
    pub fn embed_with_world(&self, bow: &SparseVec, world: Option<&[f64]>) -> Result<Vec<f64>> {
        let h = self.net.apply(Input::Sparse(bow))?;
        match (world, &self.knowledge) {
            (None, None) => Ok(h),
            (Some(o), Some(k)) => {
                let mut joint = h;
                joint.extend_from_slice(o);
                k.projection.apply(Input::Dense(&joint))
            }
            (Some(_), None) => Err(Error::InvalidConfig("world embedding given but augmentation is off".into())),
            (None, Some(_)) => Err(Error::InvalidConfig("augmentation is on but no world embedding given".into())),
        }
    }

    pub fn embed(&self, state: &StateFeatures, table: Option<&DocTable>) -> Result<Vec<f64>> {
        Ok(self.forward(state, table)?.0)
    }

    pub fn forward(&self, state: &StateFeatures, table: Option<&DocTable>) -> Result<(Vec<f64>, TowerCache)> {
        let (h, net) = self.net.forward(Input::Sparse(&state.bow))?;
        let Some(k) = &self.knowledge else {
            return Ok((h, TowerCache { net, world: None }));
        };
        let table = table.ok_or(Error::StaleCache("knowledge mode needs a document table"))?;
        let (o, wc) = k.world(&state.relevance, table)?;
        let mut joint = h;
        joint.extend_from_slice(&o);
        let pc = k.projection.forward(Input::Dense(&joint))?;
        let out = pc.output().to_vec();
        Ok((
            out,
            TowerCache {
                net,
                world: Some((pc, wc)),
            },
        ))
    }

    /// Accumulates gradients of `h_s . d_h`. Document-encoder gradients are
    /// collected in `docs` and applied by [`StateTower::finish`].
    pub fn backward(
        &self,
        cache: &TowerCache,
        d_h: &[f64],
        table: Option<&DocTable>,
        grads: &mut StateTower,
        docs: &mut DocGrads,
    ) -> Result<()> {
        match (&self.knowledge, &cache.world, &mut grads.knowledge) {
            (None, None, None) => {
                self.net.backward(&cache.net, d_h, &mut grads.net, false)?;
            }
            (Some(k), Some((pc, wc)), Some(gk)) => {
                let table = table.ok_or(Error::StaleCache("knowledge mode needs a document table"))?;
                let d_joint = k
                    .projection
                    .backward(pc, d_h, &mut gk.projection, true)?
                    .expect("input gradient requested");
                let e = self.embed_dim();
                self.net.backward(&cache.net, &d_joint[..e], &mut grads.net, false)?;
                k.world_backward(wc, table, &d_joint[e..], gk, docs)?;
            }
            _ => return Err(Error::StaleCache("state tower")),
        }
        Ok(())
    }

    /// Backpropagates the accumulated document gradients into the encoder.
    pub fn finish(&self, table: Option<&DocTable>, docs: &DocGrads, grads: &mut StateTower) -> Result<()> {
        if docs.is_empty() {
            return Ok(());
        }
        match (&self.knowledge, table, &mut grads.knowledge) {
            (Some(k), Some(t), Some(gk)) => t.backward(k, docs, gk),
            _ => Err(Error::StaleCache("document gradients without knowledge parameters")),
        }
    }
}

impl ParamSet for StateTower {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        self.net.collect(&join(prefix, "net"), out);
        self.knowledge.collect(&join(prefix, "knowledge"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        self.net.collect_mut(&join(prefix, "net"), out);
        self.knowledge.collect_mut(&join(prefix, "knowledge"), out);
    }
}

/// Interface the training loop needs from a value function over K-subsets.
pub trait QNetwork: ParamSet + Clone {
    /// Per-step precomputation for scoring many subsets of one candidate list.
    type Scorer;
    type Cache;

    fn tower(&self) -> &StateTower;
    fn tower_mut(&mut self) -> &mut StateTower;

    fn scorer(&self, state: &StateFeatures, candidates: &[&SparseVec], table: Option<&DocTable>) -> Result<Self::Scorer>;

    /// Value of the subset at the given (sorted) candidate positions.
    fn score(&self, scorer: &Self::Scorer, members: &[usize]) -> f64;

    /// Values of several subsets, each equal to [`QNetwork::score`].
    fn score_batch(&self, scorer: &Self::Scorer, sets: &[Vec<usize>]) -> Vec<f64> {
        sets.iter().map(|s| self.score(scorer, s)).collect()
    }

    fn forward(&self, state: &StateFeatures, action: &[&SparseVec], table: Option<&DocTable>) -> Result<(f64, Self::Cache)>;

    /// Accumulates gradients of `d_q * Q` into `grads` and `docs`.
    fn backward(
        &self,
        cache: &Self::Cache,
        d_q: f64,
        table: Option<&DocTable>,
        grads: &mut Self,
        docs: &mut DocGrads,
    ) -> Result<()>;

    fn doc_table(&self, store: Option<&KnowledgeStore>) -> Result<Option<DocTable>> {
        self.tower().doc_table(store)
    }

    fn value(&self, state: &StateFeatures, action: &[&SparseVec], table: Option<&DocTable>) -> Result<f64> {
        Ok(self.forward(state, action, table)?.0)
    }

    /// Fresh gradients of `Q(s, a)` including the document encoder.
    fn gradients(&self, state: &StateFeatures, action: &[&SparseVec], table: Option<&DocTable>) -> Result<(f64, Self)>
    where
        Self: Sized;
}

/// DRRN: separate state and comment encoders joined by a dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct Drrn {
    pub state: StateTower,
    pub action_net: FeedForward,
}

#[derive(Debug, Clone)]
pub struct DrrnCache {
    tower: TowerCache,
    h_s: Vec<f64>,
    actions: Vec<(Vec<f64>, FfCache)>,
}

/// State embedding and the per-candidate `Q0` values of one step.
#[derive(Debug, Clone)]
pub struct DrrnScorer {
    pub h_s: Vec<f64>,
    pub q: Vec<f64>,
    /// Comment encoder passes spent on `q`.
    pub passes: usize,
}

impl Drrn {
    pub fn new(vocab_dim: usize, mode: KnowledgeMode, rng: &mut crate::Rng) -> Result<Self> {
        Ok(Self {
            state: StateTower::new(vocab_dim, mode, rng)?,
            action_net: FeedForward::standard(vocab_dim, EMBED_DIM, rng)?,
        })
    }

    pub fn q0(&self, state: &StateFeatures, comment: &SparseVec, table: Option<&DocTable>) -> Result<f64> {
        let h_s = self.state.embed(state, table)?;
        self.q0_embedded(&h_s, comment)
    }

    pub fn q0_embedded(&self, h_s: &[f64], comment: &SparseVec) -> Result<f64> {
        let h_a = self.action_net.apply(Input::Sparse(comment))?;
        Ok(dot(h_s, &h_a))
    }

    /// `sum_i Q0(s, c_i)` with the state embedded once.
    pub fn q1_sum(&self, state: &StateFeatures, comments: &[&SparseVec], table: Option<&DocTable>) -> Result<f64> {
        if comments.is_empty() {
            return Err(Error::EmptyInput("q1 over an empty action"));
        }
        let h_s = self.state.embed(state, table)?;
        let q = comments
            .iter()
            .map(|c| self.q0_embedded(&h_s, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(subset_value(&q, &(0..q.len()).collect::<Vec<_>>()))
    }
}

/// The additive value function is the trained single-comment network read
/// over sets; the copy is independent of the original.
pub fn transfer_q0_to_q1(q0: &Drrn) -> Drrn {
    q0.clone()
}

impl QNetwork for Drrn {
    type Scorer = DrrnScorer;
    type Cache = DrrnCache;

    fn tower(&self) -> &StateTower {
        &self.state
    }

    fn tower_mut(&mut self) -> &mut StateTower {
        &mut self.state
    }

    fn scorer(&self, state: &StateFeatures, candidates: &[&SparseVec], table: Option<&DocTable>) -> Result<DrrnScorer> {
        let h_s = self.state.embed(state, table)?;
        let mut passes = 0;
        let q = candidates
            .iter()
            .map(|c| {
                passes += 1;
                self.q0_embedded(&h_s, c)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DrrnScorer { h_s, q, passes })
    }

    fn score(&self, scorer: &DrrnScorer, members: &[usize]) -> f64 {
        subset_value(&scorer.q, members)
    }

    fn forward(&self, state: &StateFeatures, action: &[&SparseVec], table: Option<&DocTable>) -> Result<(f64, DrrnCache)> {
        if action.is_empty() {
            return Err(Error::EmptyInput("q over an empty action"));
        }
        let (h_s, tower) = self.state.forward(state, table)?;
        let actions = action
            .iter()
            .map(|c| self.action_net.forward(Input::Sparse(c)))
            .collect::<Result<Vec<_>>>()?;
        let q: Vec<f64> = actions.iter().map(|(h_a, _)| dot(&h_s, h_a)).collect();
        let value = subset_value(&q, &(0..q.len()).collect::<Vec<_>>());
        Ok((value, DrrnCache { tower, h_s, actions }))
    }

    fn backward(
        &self,
        cache: &DrrnCache,
        d_q: f64,
        table: Option<&DocTable>,
        grads: &mut Drrn,
        docs: &mut DocGrads,
    ) -> Result<()> {
        let e = cache.h_s.len();
        let mut d_h_s = vec![0.0; e];
        let d_h_a: Vec<f64> = cache.h_s.iter().map(|v| d_q * v).collect();
        for (h_a, ac) in &cache.actions {
            if h_a.len() != e {
                return Err(Error::StaleCache("drrn action embedding"));
            }
            crate::math::axpy(d_q, h_a, &mut d_h_s);
            self.action_net.backward(ac, &d_h_a, &mut grads.action_net, false)?;
        }
        self.state.backward(&cache.tower, &d_h_s, table, &mut grads.state, docs)
    }

    fn gradients(&self, state: &StateFeatures, action: &[&SparseVec], table: Option<&DocTable>) -> Result<(f64, Drrn)> {
        let (q, cache) = self.forward(state, action, table)?;
        let mut grads = self.zeros_like();
        let mut docs = DocGrads::new();
        self.backward(&cache, 1.0, table, &mut grads, &mut docs)?;
        self.state.finish(table, &docs, &mut grads.state)?;
        Ok((q, grads))
    }
}

impl ParamSet for Drrn {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        self.state.collect(&join(prefix, "state"), out);
        self.action_net.collect(&join(prefix, "action_net"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        self.state.collect_mut(&join(prefix, "state"), out);
        self.action_net.collect_mut(&join(prefix, "action_net"), out);
    }
}

/// DRRN-BiLSTM: the comment embeddings of a set are summarised by a
/// BiLSTM, projected to the embedding size and dotted with `h_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrrnBiLstm {
    pub state: StateTower,
    pub comment_net: FeedForward,
    pub bilstm: BiLstm,
    pub output: Dense,
}

#[derive(Debug, Clone)]
pub struct BiLstmQCache {
    tower: TowerCache,
    h_s: Vec<f64>,
    comments: Vec<FfCache>,
    bilstm: BiLstmCache,
    output: DenseCache,
}

/// Per-candidate embeddings and LSTM input projections of one step, so each
/// scored subset only pays for the recurrent part.
#[derive(Debug, Clone)]
pub struct BiLstmScorer {
    pub h_s: Vec<f64>,
    fwd_proj: Vec<Vec<f64>>,
    bwd_proj: Vec<Vec<f64>>,
}

impl DrrnBiLstm {
    pub fn new(vocab_dim: usize, mode: KnowledgeMode, rng: &mut crate::Rng) -> Result<Self> {
        Ok(Self {
            state: StateTower::new(vocab_dim, mode, rng)?,
            comment_net: FeedForward::standard(vocab_dim, EMBED_DIM, rng)?,
            bilstm: BiLstm::new(EMBED_DIM, LSTM_HIDDEN, rng)?,
            output: Dense::new(2 * LSTM_HIDDEN, EMBED_DIM, Activation::Identity, rng)?,
        })
    }

    /// `Q2(s, a)` for comments already in timestamp order.
    pub fn q2(&self, state: &StateFeatures, comments: &[&SparseVec], table: Option<&DocTable>) -> Result<f64> {
        self.value(state, comments, table)
    }

    /// Scores a subset given a state embedding and per-member input
    /// projections; used by [`QNetwork::score`].
    fn score_projected(&self, h_s: &[f64], fwd: &[&[f64]], bwd: &[&[f64]]) -> f64 {
        let summary = self.bilstm.summary_projected(fwd, bwd);
        let z = self.output.apply(Input::Dense(&summary)).expect("summary width fixed at construction");
        dot(h_s, &z)
    }
}

impl QNetwork for DrrnBiLstm {
    type Scorer = BiLstmScorer;
    type Cache = BiLstmQCache;

    fn tower(&self) -> &StateTower {
        &self.state
    }

    fn tower_mut(&mut self) -> &mut StateTower {
        &mut self.state
    }

    fn scorer(&self, state: &StateFeatures, candidates: &[&SparseVec], table: Option<&DocTable>) -> Result<BiLstmScorer> {
        let h_s = self.state.embed(state, table)?;
        let mut fwd_proj = Vec::with_capacity(candidates.len());
        let mut bwd_proj = Vec::with_capacity(candidates.len());
        for c in candidates {
            let e = self.comment_net.apply(Input::Sparse(c))?;
            fwd_proj.push(self.bilstm.forward.project_input(&e)?);
            bwd_proj.push(self.bilstm.backward.project_input(&e)?);
        }
        Ok(BiLstmScorer { h_s, fwd_proj, bwd_proj })
    }

    fn score(&self, scorer: &BiLstmScorer, members: &[usize]) -> f64 {
        let fwd: Vec<&[f64]> = members.iter().map(|&i| scorer.fwd_proj[i].as_slice()).collect();
        let bwd: Vec<&[f64]> = members.iter().map(|&i| scorer.bwd_proj[i].as_slice()).collect();
        self.score_projected(&scorer.h_s, &fwd, &bwd)
    }

    /// Runs the recurrence once per distinct prefix (forward) and suffix
    /// (backward) across `sets`.
    fn score_batch(&self, scorer: &BiLstmScorer, sets: &[Vec<usize>]) -> Vec<f64> {
        let refs: Vec<&[usize]> = sets.iter().map(|s| s.as_slice()).collect();
        let (summaries, _) = self.bilstm.summaries_shared(&scorer.fwd_proj, &scorer.bwd_proj, &refs);
        summaries
            .iter()
            .map(|s| {
                let z = self.output.apply(Input::Dense(s)).expect("summary width fixed at construction");
                dot(&scorer.h_s, &z)
            })
            .collect()
    }

    fn forward(&self, state: &StateFeatures, action: &[&SparseVec], table: Option<&DocTable>) -> Result<(f64, BiLstmQCache)> {
        if action.is_empty() {
            return Err(Error::EmptyInput("q2 over an empty action"));
        }
        let (h_s, tower) = self.state.forward(state, table)?;
        let mut embs = Vec::with_capacity(action.len());
        let mut comments = Vec::with_capacity(action.len());
        for c in action {
            let (e, cache) = self.comment_net.forward(Input::Sparse(c))?;
            embs.push(e);
            comments.push(cache);
        }
        let (summary, bilstm) = self.bilstm.forward(&embs)?;
        let output = self.output.forward(Input::Dense(&summary))?;
        let q = dot(&h_s, output.output());
        Ok((
            q,
            BiLstmQCache {
                tower,
                h_s,
                comments,
                bilstm,
                output,
            },
        ))
    }

    fn backward(
        &self,
        cache: &BiLstmQCache,
        d_q: f64,
        table: Option<&DocTable>,
        grads: &mut DrrnBiLstm,
        docs: &mut DocGrads,
    ) -> Result<()> {
        let z = cache.output.output();
        if z.len() != cache.h_s.len() {
            return Err(Error::StaleCache("q2 output"));
        }
        let d_z: Vec<f64> = cache.h_s.iter().map(|v| d_q * v).collect();
        let d_h_s: Vec<f64> = z.iter().map(|v| d_q * v).collect();
        let d_summary = self
            .output
            .backward(&cache.output, &d_z, &mut grads.output, true)?
            .expect("input gradient requested");
        let d_seq = self.bilstm.backward(&cache.bilstm, &d_summary, &mut grads.bilstm)?;
        if d_seq.len() != cache.comments.len() {
            return Err(Error::StaleCache("q2 comment sequence"));
        }
        for (c, d) in cache.comments.iter().zip(&d_seq) {
            self.comment_net.backward(c, d, &mut grads.comment_net, false)?;
        }
        self.state.backward(&cache.tower, &d_h_s, table, &mut grads.state, docs)
    }

    fn gradients(&self, state: &StateFeatures, action: &[&SparseVec], table: Option<&DocTable>) -> Result<(f64, DrrnBiLstm)> {
        let (q, cache) = self.forward(state, action, table)?;
        let mut grads = self.zeros_like();
        let mut docs = DocGrads::new();
        self.backward(&cache, 1.0, table, &mut grads, &mut docs)?;
        self.state.finish(table, &docs, &mut grads.state)?;
        Ok((q, grads))
    }
}

impl ParamSet for DrrnBiLstm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a>>) {
        self.state.collect(&join(prefix, "state"), out);
        self.comment_net.collect(&join(prefix, "comment_net"), out);
        self.bilstm.collect(&join(prefix, "bilstm"), out);
        self.output.collect(&join(prefix, "output"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a>>) {
        self.state.collect_mut(&join(prefix, "state"), out);
        self.comment_net.collect_mut(&join(prefix, "comment_net"), out);
        self.bilstm.collect_mut(&join(prefix, "bilstm"), out);
        self.output.collect_mut(&join(prefix, "output"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{KnowledgePost, Rule};
    use crate::nn::grad_check;
    use crate::text::TextEncoder;
    use alloc::string::ToString;
    use rand::Rng as _;

    const V: usize = 12;

    fn random_bow(rng: &mut crate::Rng) -> SparseVec {
        let n = rng.gen_range(1..5);
        SparseVec::from_pairs((0..n).map(|_| (rng.gen_range(0..V as u32), rng.gen_range(1..3) as f64)).collect())
    }

    fn plain_state(rng: &mut crate::Rng) -> StateFeatures {
        let bow = random_bow(rng);
        StateFeatures {
            tfidf: bow.clone(),
            bow,
            t_now: 0,
            relevance: Relevance::default(),
        }
    }

    /// Twelve-word vocabulary plus a store of six documents, two days apart.
    fn knowledge_world() -> (TextEncoder, KnowledgeStore) {
        let words = "a b c d e f g h i j k l";
        let enc = TextEncoder::fit(&[words], V);
        let posts: Vec<KnowledgePost> = (0..6)
            .map(|i| KnowledgePost {
                id: i,
                ts: i * 2 * 86_400,
                text: words.split(' ').skip(i as usize).take(4).collect::<Vec<_>>().join(" "),
                karma: 10 * i + 3,
                comments: Vec::new(),
            })
            .collect();
        let store = KnowledgeStore::from_posts(&posts, &enc).unwrap();
        (enc, store)
    }

    fn knowledge_state(rng: &mut crate::Rng, store: &KnowledgeStore) -> StateFeatures {
        let bow = random_bow(rng);
        StateFeatures::new(bow.clone(), bow, rng.gen_range(86_400..12 * 86_400), Some(store))
    }

    fn constant_net(out: Vec<f64>) -> FeedForward {
        let e = out.len();
        FeedForward::from_layers(vec![Dense::from_parts(V, e, vec![0.0; V * e], out, Activation::Identity).unwrap()])
            .unwrap()
    }

    #[test]
    fn embed_state_cases() {
        let mut rng = crate::rng_from_seed(1);
        let plain = StateTower::new(V, KnowledgeMode::None, &mut rng).unwrap();
        let s = plain_state(&mut rng);
        assert_eq!(plain.embed(&s, None).unwrap(), plain.net.apply(Input::Sparse(&s.bow)).unwrap());
        assert_eq!(plain.embed_with_world(&s.bow, None).unwrap(), plain.net.apply(Input::Sparse(&s.bow)).unwrap());
        assert!(plain.embed_with_world(&s.bow, Some(&[0.0; EMBED_DIM])).is_err());

        let mut aug = StateTower::new(V, KnowledgeMode::Attention, &mut rng).unwrap();
        let e = EMBED_DIM;
        let mut w = vec![0.0; e * 2 * e];
        for i in 0..e {
            w[i * 2 * e + i] = 1.0;
        }
        aug.knowledge.as_mut().unwrap().projection = Dense::from_parts(2 * e, e, w, vec![0.0; e], Activation::Identity).unwrap();
        let raw = aug.net.apply(Input::Sparse(&s.bow)).unwrap();
        assert_eq!(aug.embed_with_world(&s.bow, Some(&[0.0; EMBED_DIM])).unwrap(), raw);
        assert!(aug.embed_with_world(&s.bow, None).is_err());
    }

    #[test]
    fn embed_state_matches_composition() {
        let (_, store) = knowledge_world();
        let mut rng = crate::rng_from_seed(2);
        let tower = StateTower::new(V, KnowledgeMode::Attention, &mut rng).unwrap();
        let s = knowledge_state(&mut rng, &store);
        let k = tower.knowledge.as_ref().unwrap();
        let table = k.doc_table(&store).unwrap();
        let p = crate::knowledge::attention(&s.relevance.features, &k.beta).unwrap();
        let o = crate::knowledge::world_embedding(&p, &table.embeddings()[..p.len()]).unwrap();
        let expected = tower.embed_with_world(&s.bow, Some(&o)).unwrap();
        let got = tower.embed(&s, Some(&table)).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn q0_cases() {
        let mut rng = crate::rng_from_seed(3);
        let mut net = Drrn::new(V, KnowledgeMode::None, &mut rng).unwrap();
        let s = plain_state(&mut rng);
        let c = random_bow(&mut rng);
        let h_s = net.state.embed(&s, None).unwrap();
        let h_a = net.action_net.apply(Input::Sparse(&c)).unwrap();
        assert_eq!(net.q0(&s, &c, None).unwrap(), dot(&h_s, &h_a));

        let mut e1 = vec![0.0; EMBED_DIM];
        e1[0] = 1.0;
        net.state.net = constant_net(e1.clone());
        net.action_net = constant_net(e1);
        assert_eq!(net.q0(&s, &c, None).unwrap(), 1.0);
        net.action_net = constant_net(vec![0.0; EMBED_DIM]);
        assert_eq!(net.q0(&s, &c, None).unwrap(), 0.0);
    }

    #[test]
    fn q1_is_additive_and_order_free() {
        let mut rng = crate::rng_from_seed(4);
        let q0 = Drrn::new(V, KnowledgeMode::None, &mut rng).unwrap();
        let q1 = transfer_q0_to_q1(&q0);
        for _ in 0..200 {
            let s = plain_state(&mut rng);
            let cs: Vec<SparseVec> = (0..5).map(|_| random_bow(&mut rng)).collect();
            assert_eq!(q1.q1_sum(&s, &[&cs[0]], None).unwrap(), q0.q0(&s, &cs[0], None).unwrap());
            let refs: Vec<&SparseVec> = cs.iter().collect();
            let singles: Vec<f64> = cs.iter().map(|c| q0.q0(&s, c, None).unwrap()).collect();
            let total = q1.q1_sum(&s, &refs, None).unwrap();
            assert_eq!(total, subset_value(&singles, &[0, 1, 2, 3, 4]));
            let rev: Vec<&SparseVec> = cs.iter().rev().collect();
            assert_eq!(q1.q1_sum(&s, &rev, None).unwrap(), total);
            assert_eq!(q1.value(&s, &refs, None).unwrap(), total);
        }
        let mut copy = transfer_q0_to_q1(&q0);
        copy.action_net.layers_mut()[0].bias_mut()[0] += 1.0;
        assert_ne!(copy, q0);
        assert!(q0.q1_sum(&plain_state(&mut rng), &[], None).is_err());
    }

    #[test]
    fn q1_additivity_example() {
        let q = [0.5, -0.2];
        assert!((subset_value(&q, &[0, 1]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn q2_zero_params_and_determinism() {
        let mut rng = crate::rng_from_seed(5);
        let mut net = DrrnBiLstm::new(V, KnowledgeMode::None, &mut rng).unwrap();
        let s = plain_state(&mut rng);
        let cs: Vec<SparseVec> = (0..3).map(|_| random_bow(&mut rng)).collect();
        let refs: Vec<&SparseVec> = cs.iter().collect();
        assert!(net.q2(&s, &[], None).is_err());

        let mut mirrored = net.clone();
        mirrored.bilstm.backward = mirrored.bilstm.forward.clone();
        let a = mirrored.q2(&s, &refs[..1], None).unwrap();
        assert_eq!(a, mirrored.q2(&s, &refs[..1], None).unwrap());

        net.comment_net.fill(0.0);
        net.bilstm.fill(0.0);
        net.output.bias_mut().fill(0.0);
        assert_eq!(net.q2(&s, &refs, None).unwrap(), 0.0);
    }

    #[test]
    fn q2_sees_redundancy() {
        let mut rng = crate::rng_from_seed(6);
        // Q0 that depends only on the number of words in a comment.
        let mut q0 = Drrn::new(V, KnowledgeMode::None, &mut rng).unwrap();
        let row: Vec<f64> = (0..EMBED_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = row.iter().flat_map(|&r| core::iter::repeat(r).take(V)).collect();
        q0.action_net =
            FeedForward::from_layers(vec![Dense::from_parts(V, EMBED_DIM, w, vec![0.0; EMBED_DIM], Activation::Identity).unwrap()])
                .unwrap();
        let q2 = DrrnBiLstm::new(V, KnowledgeMode::None, &mut rng).unwrap();
        let s = plain_state(&mut rng);
        let c = SparseVec::from_pairs(vec![(0, 1.0), (1, 1.0)]);
        let d1 = SparseVec::from_pairs(vec![(2, 1.0), (3, 1.0)]);
        let d2 = SparseVec::from_pairs(vec![(4, 1.0), (5, 1.0)]);
        let same = q0.q1_sum(&s, &[&c, &c], None).unwrap();
        let distinct = q0.q1_sum(&s, &[&d1, &d2], None).unwrap();
        assert!((same - distinct).abs() < 1e-12);
        let dup = q2.q2(&s, &[&c, &c], None).unwrap();
        let pair = q2.q2(&s, &[&d1, &d2], None).unwrap();
        assert!((dup - pair).abs() > 1e-9, "{dup} vs {pair}");
    }

    #[test]
    fn scorers_agree_with_forward() {
        let (_, store) = knowledge_world();
        let mut rng = crate::rng_from_seed(7);
        for mode in [KnowledgeMode::None, KnowledgeMode::Attention, KnowledgeMode::Rule(Rule::Top10Similar)] {
            let q0 = Drrn::new(V, mode, &mut rng).unwrap();
            let q2 = DrrnBiLstm::new(V, mode, &mut rng).unwrap();
            let s = knowledge_state(&mut rng, &store);
            let cs: Vec<SparseVec> = (0..6).map(|_| random_bow(&mut rng)).collect();
            let refs: Vec<&SparseVec> = cs.iter().collect();
            let t0 = q0.doc_table(Some(&store)).unwrap();
            let t2 = q2.doc_table(Some(&store)).unwrap();
            let s0 = q0.scorer(&s, &refs, t0.as_ref()).unwrap();
            let s2 = q2.scorer(&s, &refs, t2.as_ref()).unwrap();
            for members in [vec![0], vec![1, 3], vec![0, 2, 5], vec![1, 2, 3, 4, 5]] {
                let action: Vec<&SparseVec> = members.iter().map(|&i| refs[i]).collect();
                assert_eq!(q0.score(&s0, &members), q0.value(&s, &action, t0.as_ref()).unwrap());
                assert_eq!(q2.score(&s2, &members), q2.value(&s, &action, t2.as_ref()).unwrap());
            }
        }
    }

    #[test]
    fn batch_scoring_is_bit_identical() {
        use crate::search::for_each_subset;
        let mut rng = crate::rng_from_seed(21);
        let q2 = DrrnBiLstm::new(V, KnowledgeMode::None, &mut rng).unwrap();
        let s = plain_state(&mut rng);
        let cs: Vec<SparseVec> = (0..10).map(|_| random_bow(&mut rng)).collect();
        let refs: Vec<&SparseVec> = cs.iter().collect();
        let sc = q2.scorer(&s, &refs, None).unwrap();
        for k in 1..=5 {
            let mut sets = Vec::new();
            for_each_subset(10, k, |a| sets.push(a.to_vec()));
            // Unsorted order, a repeat and an unrelated length.
            sets.reverse();
            sets.push(sets[3].clone());
            sets.push(vec![2, 7]);
            let batch = q2.score_batch(&sc, &sets);
            for (set, v) in sets.iter().zip(&batch) {
                assert_eq!(v.to_bits(), q2.score(&sc, set).to_bits(), "{set:?}");
            }
        }
    }

    #[test]
    fn shared_steps_count_distinct_prefixes() {
        use crate::nn::shared_steps;
        // Forward: [0,1,2] 3, [0,1,3] 1, [0,4] 1. Backward over [2,1,0],
        // [3,1,0], [4,0]: nothing shared, 3 + 3 + 2.
        let sets: [&[usize]; 3] = [&[0, 1, 3], &[0, 4], &[0, 1, 2]];
        assert_eq!(shared_steps(&sets), 5 + 8);
        assert_eq!(shared_steps(&[&[1, 2], &[1, 2]]), 4);
        assert_eq!(shared_steps(&[]), 0);
    }

    #[test]
    fn zero_output_gradient() {
        let (_, store) = knowledge_world();
        let mut rng = crate::rng_from_seed(8);
        let q2 = DrrnBiLstm::new(V, KnowledgeMode::Attention, &mut rng).unwrap();
        let s = knowledge_state(&mut rng, &store);
        let cs: Vec<SparseVec> = (0..3).map(|_| random_bow(&mut rng)).collect();
        let refs: Vec<&SparseVec> = cs.iter().collect();
        let table = q2.doc_table(Some(&store)).unwrap();
        let (_, cache) = q2.forward(&s, &refs, table.as_ref()).unwrap();
        let mut grads = q2.zeros_like();
        let mut docs = DocGrads::new();
        q2.backward(&cache, 0.0, table.as_ref(), &mut grads, &mut docs).unwrap();
        q2.state.finish(table.as_ref(), &docs, &mut grads.state).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    fn check_network<Q: QNetwork>(net: &Q, store: &KnowledgeStore, k: usize, seed: u64) -> f64 {
        let mut rng = crate::rng_from_seed(seed);
        let s = knowledge_state(&mut rng, store);
        let cs: Vec<SparseVec> = (0..k).map(|_| random_bow(&mut rng)).collect();
        let refs: Vec<&SparseVec> = cs.iter().collect();
        let table = net.doc_table(Some(store)).unwrap();
        let (_, grads) = net.gradients(&s, &refs, table.as_ref()).unwrap();
        let loss = |p: &Q| {
            let t = p.doc_table(Some(store)).unwrap();
            p.value(&s, &refs, t.as_ref()).unwrap()
        };
        grad_check(net, &grads, loss, 1e-5, 400)
    }

    /// A large constant in `Q2` swamps the central differences of the
    /// smallest recurrent gradients, so checks run with a zero output bias.
    fn unbiased(mut net: DrrnBiLstm) -> DrrnBiLstm {
        net.output.bias_mut().fill(0.0);
        net
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (_, store) = knowledge_world();
        for seed in 0..8 {
            let mut rng = crate::rng_from_seed(100 + seed);
            for mode in [KnowledgeMode::None, KnowledgeMode::Attention, KnowledgeMode::Rule(Rule::PastWeek)] {
                let q0 = Drrn::new(V, mode, &mut rng).unwrap();
                let err = check_network(&q0, &store, 1, seed);
                assert!(err < 1e-4, "q0 {mode}: {err}");
                let err = check_network(&q0, &store, 3, seed);
                assert!(err < 1e-4, "q1 {mode}: {err}");
                let q2 = unbiased(DrrnBiLstm::new(V, mode, &mut rng).unwrap());
                let err = check_network(&q2, &store, 3, seed);
                assert!(err < 1e-4, "q2 {mode}: {err}");
            }
        }
    }

    #[test]
    fn future_documents_have_no_influence() {
        let (enc, store) = knowledge_world();
        let mut rng = crate::rng_from_seed(9);
        let q2 = DrrnBiLstm::new(V, KnowledgeMode::Attention, &mut rng).unwrap();
        let s = knowledge_state(&mut rng, &store);
        let cs: Vec<SparseVec> = (0..2).map(|_| random_bow(&mut rng)).collect();
        let refs: Vec<&SparseVec> = cs.iter().collect();
        let before = q2.value(&s, &refs, q2.doc_table(Some(&store)).unwrap().as_ref()).unwrap();

        let mut posts: Vec<KnowledgePost> = store
            .docs()
            .iter()
            .map(|d| KnowledgePost {
                id: d.id,
                ts: d.ts,
                text: d.text.clone(),
                karma: d.raw_popularity,
                comments: Vec::new(),
            })
            .collect();
        for p in posts.iter_mut().filter(|p| p.ts >= s.t_now) {
            p.text = "l l l k".to_string();
            p.karma = 10_000;
        }
        let changed = KnowledgeStore::from_posts(&posts, &enc).unwrap();
        let s2 = StateFeatures::new(s.bow.clone(), s.tfidf.clone(), s.t_now, Some(&changed));
        assert_eq!(s2.relevance, s.relevance);
        let after = q2.value(&s2, &refs, q2.doc_table(Some(&changed)).unwrap().as_ref()).unwrap();
        assert_eq!(before, after);
    }
}
