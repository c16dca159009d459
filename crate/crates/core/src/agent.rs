//! Replay, TD targets and the two-phase training loop.
//!
//! Phase 1 trains a [`Drrn`] on the single-comment task. Its parameters,
//! frozen and read additively, rank the whole K-subset space; phase 2 trains
//! a [`DrrnBiLstm`] that picks among the top `m` of that ranking.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::env::{DiscussionTree, Episode, EpisodeConfig};
use crate::knowledge::{DocGrads, DocTable, KnowledgeMode, KnowledgePost, KnowledgeStore};
use crate::math::SparseVec;
use crate::nn::sgd_step;
use crate::qnet::{Drrn, DrrnBiLstm, QNetwork, StateFeatures};
use crate::search::{binomial, random_subsample, top_m_actions};
use crate::text::{TextEncoder, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AgentConfig {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    pub episodes_per_replay: usize,
    /// Minibatch updates per replay round; `None` means one per transition
    /// collected in the round.
    pub updates_per_replay: Option<usize>,
    /// Rewards are multiplied by this before entering TD targets.
    pub reward_scale: f64,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            n: 10,
            k: 1,
            m: 10,
            gamma: 0.9,
            epsilon: 0.1,
            eta: 1e-6,
            batch: 100,
            replay_capacity: 10_000,
            episodes_per_replay: 500,
            updates_per_replay: None,
            reward_scale: 1.0,
            episodes: 2000,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        EpisodeConfig::new(self.n, self.k)?;
        let space = binomial(self.n, self.k);
        if self.m == 0 || self.m as u64 > space {
            return bad(format!("m={} must lie in 1..=C({}, {})={space}", self.m, self.n, self.k));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma={} must lie in [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon={} must lie in [0, 1]", self.epsilon));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta={} must be finite and >= 0", self.eta));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive".into());
        }
        if self.batch == 0 || self.replay_capacity == 0 || self.episodes_per_replay == 0 {
            return bad("batch, replay_capacity and episodes_per_replay must be positive".into());
        }
        Ok(())
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig { n: self.n, k: self.k }
    }

    /// The single-comment task used for phase 1.
    pub fn phase1(&self) -> Self {
        Self {
            k: 1,
            m: self.m.min(self.n),
            ..self.clone()
        }
    }
}

/// Comment bags of words of one tree, indexed like its nodes.
#[derive(Debug, Clone)]
pub struct EncodedTree {
    pub bows: Vec<SparseVec>,
}

/// Trees with their encodings, the text encoder fitted on the training
/// split, and the optional knowledge store.
#[derive(Debug, Clone)]
pub struct Environment {
    pub encoder: TextEncoder,
    pub store: Option<KnowledgeStore>,
    pub train: Vec<(DiscussionTree, EncodedTree)>,
    pub test: Vec<(DiscussionTree, EncodedTree)>,
}

impl Environment {
    /// Fits the vocabulary and IDF table on the training trees only.
    pub fn new(
        train: Vec<DiscussionTree>,
        test: Vec<DiscussionTree>,
        knowledge: Option<&[KnowledgePost]>,
        max_vocab: usize,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("training trees"));
        }
        let texts: Vec<&str> = train
            .iter()
            .flat_map(|t| t.nodes().iter().map(|c| c.text.as_str()))
            .collect();
        let encoder = TextEncoder::fit(&texts, max_vocab);
        let store = knowledge.map(|k| KnowledgeStore::from_posts(k, &encoder)).transpose()?;
        let encode = |t: DiscussionTree| {
            let bows = t.nodes().iter().map(|c| encoder.bow(&c.text).0).collect();
            (t, EncodedTree { bows })
        };
        let train = train.into_iter().map(encode).collect();
        let test = test.into_iter().map(encode).collect();
        Ok(Self {
            encoder,
            store,
            train,
            test,
        })
    }

    /// Splits `trees` so the last `test_fraction` of them are held out.
    pub fn split(
        trees: Vec<DiscussionTree>,
        test_fraction: f64,
        knowledge: Option<&[KnowledgePost]>,
        max_vocab: usize,
    ) -> Result<Self> {
        let n_test = ((trees.len() as f64) * test_fraction.clamp(0.0, 1.0) + 0.5) as usize;
        let mut train = trees;
        let test = train.split_off(train.len() - n_test.min(train.len().saturating_sub(1)));
        Self::new(train, test, knowledge, max_vocab)
    }

    pub fn vocab_dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.encoder.vocab
    }

    /// Features of a state whose accumulated bag of words is `bow`.
    pub fn state_features(&self, bow: &SparseVec, t_now: i64) -> StateFeatures {
        let tfidf = bow.map_values(|i, c| c * self.encoder.tfidf.idf(i));
        StateFeatures::new(bow.clone(), tfidf, t_now, self.store.as_ref())
    }
}

/// One stored experience: `(s, a, r, s', B')`.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: StateFeatures,
    /// Bags of words of the chosen comments in timestamp order.
    pub action: Vec<SparseVec>,
    pub reward: i64,
    pub next_state: StateFeatures,
    pub next_candidates: Vec<SparseVec>,
    /// Candidate list at the next state, as candidate positions.
    pub next_actions: Vec<Vec<usize>>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO experience memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `batch` transitions drawn uniformly with replacement.
    pub fn sample(&self, batch: usize, rng: &mut crate::Rng) -> Vec<&Transition> {
        (0..batch)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

/// `r` when terminal, else `r + gamma * max(next_values)`.
pub fn td_target(r: f64, next_values: &[f64], gamma: f64, terminal: bool) -> Result<f64> {
    if terminal {
        return Ok(r);
    }
    let best = next_values
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or(Error::EmptyInput("candidate list of a non-terminal next state"))?;
    Ok(r + gamma * best)
}

/// TD target of a stored transition under `net`.
pub fn transition_target<Q: QNetwork>(
    net: &Q,
    t: &Transition,
    gamma: f64,
    reward_scale: f64,
    table: Option<&DocTable>,
) -> Result<f64> {
    let r = t.reward as f64 * reward_scale;
    if t.terminal || gamma == 0.0 {
        return td_target(r, &[], gamma, true);
    }
    let cands: Vec<&SparseVec> = t.next_candidates.iter().collect();
    let scorer = net.scorer(&t.next_state, &cands, table)?;
    let values = net.score_batch(&scorer, &t.next_actions);
    td_target(r, &values, gamma, false)
}

/// Index into a candidate list: uniform with probability `epsilon`, else
/// the first maximiser of `values`, which is only evaluated when needed.
pub fn epsilon_greedy(len: usize, epsilon: f64, rng: &mut crate::Rng, values: impl FnOnce() -> Vec<f64>) -> usize {
    if len <= 1 {
        return 0;
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..len);
    }
    argmax(&values())
}

/// First index of the largest value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice from `B_t` by `net`, as a position in `actions`.
pub fn select_action<Q: QNetwork>(
    net: &Q,
    scorer: &Q::Scorer,
    actions: &[Vec<usize>],
    epsilon: f64,
    rng: &mut crate::Rng,
) -> Result<usize> {
    if actions.is_empty() {
        return Err(Error::EmptyInput("candidate action list"));
    }
    Ok(epsilon_greedy(actions.len(), epsilon, rng, || net.score_batch(scorer, actions)))
}

/// Mean over the batch of `(y - Q(s, a))^2`.
pub fn batch_loss<Q: QNetwork>(net: &Q, batch: &[&Transition], targets: &[f64], table: Option<&DocTable>) -> Result<f64> {
    let mut total = 0.0;
    for (t, y) in batch.iter().zip(targets) {
        let action: Vec<&SparseVec> = t.action.iter().collect();
        let err = net.value(&t.state, &action, table)? - y;
        total += err * err;
    }
    Ok(total / batch.len() as f64)
}

/// Batch loss and its gradient with the targets held fixed.
pub fn batch_loss_gradients<Q: QNetwork>(
    net: &Q,
    batch: &[&Transition],
    targets: &[f64],
    table: Option<&DocTable>,
) -> Result<(f64, Q)> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(Error::EmptyInput("replay batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = net.zeros_like();
    let mut docs = DocGrads::new();
    let mut total = 0.0;
    for (t, y) in batch.iter().zip(targets) {
        let action: Vec<&SparseVec> = t.action.iter().collect();
        let (q, cache) = net.forward(&t.state, &action, table)?;
        let err = q - y;
        total += err * err;
        // Only the stored action is differentiated.
        net.backward(&cache, 2.0 * err * scale, table, &mut grads, &mut docs)?;
    }
    let mut tower_grads = grads.tower().clone();
    net.tower().finish(table, &docs, &mut tower_grads)?;
    *grads.tower_mut() = tower_grads;
    Ok((total * scale, grads))
}

/// One minibatch SGD step on the replay loss. Returns the batch's mean
/// squared TD error, or `None` when the buffer holds fewer than `batch`
/// transitions.
#[allow(clippy::too_many_arguments)]
pub fn replay_update<Q: QNetwork>(
    buffer: &ReplayBuffer,
    net: &mut Q,
    batch: usize,
    gamma: f64,
    eta: f64,
    reward_scale: f64,
    store: Option<&KnowledgeStore>,
    rng: &mut crate::Rng,
) -> Result<Option<f64>> {
    if buffer.len() < batch || batch == 0 {
        return Ok(None);
    }
    let sample = buffer.sample(batch, rng);
    let table = net.doc_table(store)?;
    let targets = sample
        .iter()
        .map(|t| transition_target(net, t, gamma, reward_scale, table.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let (loss, grads) = batch_loss_gradients(net, &sample, &targets, table.as_ref())?;
    if !grads.all_finite() {
        return Err(Error::InvalidConfig("non-finite gradient; lower eta or reward_scale".into()));
    }
    sgd_step(net, &grads, eta)?;
    Ok(Some(loss))
}

/// Where an episode's candidate list `B_t` comes from.
#[derive(Debug, Clone, Copy)]
pub enum CandidateSource<'a> {
    /// Singletons ranked by the acting network itself (K = 1 only).
    Own,
    /// Top-m subsets under a frozen additive network.
    Frozen(&'a Drrn, Option<&'a DocTable>),
    /// `m` uniformly sampled subsets.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    RandomSubsample,
    FullSumOnly,
    TwoStage,
}

impl SearchMode {
    pub const ALL: [SearchMode; 3] = [SearchMode::RandomSubsample, SearchMode::FullSumOnly, SearchMode::TwoStage];

    pub fn name(self) -> &'static str {
        match self {
            SearchMode::RandomSubsample => "random_subsample",
            SearchMode::FullSumOnly => "full_sum_only",
            SearchMode::TwoStage => "two_stage",
        }
    }
}

impl core::str::FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SearchMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown search mode `{s}`")))
    }
}

impl core::fmt::Display for SearchMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// `B_t` and the number of `Q0` forward passes spent building it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateList {
    pub actions: Vec<Vec<usize>>,
    pub q0_passes: usize,
}

/// Builds `B_t` for the current candidates.
///
/// The frozen source evaluates `Q0` once per candidate and searches sums;
/// it never scores a subset with a network.
pub fn build_candidates<Q: QNetwork>(
    source: CandidateSource<'_>,
    net: &Q,
    scorer: &Q::Scorer,
    state: &StateFeatures,
    candidates: &[&SparseVec],
    k: usize,
    m: usize,
    rng: &mut crate::Rng,
) -> Result<CandidateList> {
    let ranked = |q: &[f64], k| -> Result<Vec<Vec<usize>>> {
        Ok(top_m_actions(q, k, m)?.into_iter().map(|s| s.members).collect())
    };
    match source {
        CandidateSource::Own => {
            if k != 1 {
                return Err(Error::InvalidConfig("self-ranked candidates need K = 1".into()));
            }
            let q: Vec<f64> = (0..candidates.len()).map(|i| net.score(scorer, &[i])).collect();
            Ok(CandidateList {
                actions: ranked(&q, 1)?,
                q0_passes: 0,
            })
        }
        CandidateSource::Frozen(q1, table) => {
            let s = q1.scorer(state, candidates, table)?;
            Ok(CandidateList {
                actions: ranked(&s.q, k)?,
                q0_passes: s.passes,
            })
        }
        CandidateSource::Random => Ok(CandidateList {
            actions: random_subsample(candidates.len(), k, m, rng)?,
            q0_passes: 0,
        }),
    }
}

/// Outcome of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub steps: usize,
    pub total_reward: i64,
}

/// Plays one episode. Each transition is handed to `sink`.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<Q: QNetwork>(
    env: &Environment,
    tree: &(DiscussionTree, EncodedTree),
    net: &Q,
    table: Option<&DocTable>,
    source: CandidateSource<'_>,
    cfg: EpisodeConfig,
    m: usize,
    epsilon: f64,
    rng: &mut crate::Rng,
    mut sink: impl FnMut(Transition),
) -> Result<EpisodeStats> {
    let (tree, enc) = tree;
    let (mut ep, mut out) = Episode::reset(tree, cfg)?;
    let mut stats = EpisodeStats {
        steps: 0,
        total_reward: 0,
    };
    if out.terminal {
        return Ok(stats);
    }
    let mut bow = enc.bows[0].clone();
    let observe = |ep: &Episode<'_>, bow: &SparseVec| {
        let first = ep.candidate_indices()[0];
        env.state_features(bow, tree.node(first).ts)
    };
    let mut state = observe(&ep, &bow);
    let mut cand_bows: Vec<SparseVec> = ep.candidate_indices().iter().map(|&i| enc.bows[i].clone()).collect();
    let mut scorer = {
        let refs: Vec<&SparseVec> = cand_bows.iter().collect();
        net.scorer(&state, &refs, table)?
    };
    let mut actions = {
        let refs: Vec<&SparseVec> = cand_bows.iter().collect();
        build_candidates(source, net, &scorer, &state, &refs, cfg.k, m, rng)?.actions
    };
    loop {
        let pick = select_action(net, &scorer, &actions, epsilon, rng)?;
        let chosen = actions.swap_remove(pick);
        let cand_idx = ep.candidate_indices().to_vec();
        out = ep.step_positions(&chosen)?;
        stats.steps += 1;
        stats.total_reward += out.reward;
        let action: Vec<SparseVec> = chosen.iter().map(|&p| cand_bows[p].clone()).collect();
        for &p in &chosen {
            bow = bow.add(&enc.bows[cand_idx[p]]);
        }
        if out.terminal {
            sink(Transition {
                state,
                action,
                reward: out.reward,
                next_state: StateFeatures::default(),
                next_candidates: Vec::new(),
                next_actions: Vec::new(),
                terminal: true,
            });
            return Ok(stats);
        }
        let next_state = observe(&ep, &bow);
        let next_bows: Vec<SparseVec> = ep.candidate_indices().iter().map(|&i| enc.bows[i].clone()).collect();
        let refs: Vec<&SparseVec> = next_bows.iter().collect();
        let next_scorer = net.scorer(&next_state, &refs, table)?;
        let next_actions = build_candidates(source, net, &next_scorer, &next_state, &refs, cfg.k, m, rng)?.actions;
        sink(Transition {
            state,
            action,
            reward: out.reward,
            next_state: next_state.clone(),
            next_candidates: next_bows.clone(),
            next_actions: next_actions.clone(),
            terminal: false,
        });
        state = next_state;
        cand_bows = next_bows;
        scorer = next_scorer;
        actions = next_actions;
    }
}

/// Per-episode training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: i64,
    /// Mean squared TD error of the replay round that followed this
    /// episode, if one did.
    pub mean_td_error: Option<f64>,
}

/// Independent RNG streams of one run.
pub struct RunRngs {
    pub init: crate::Rng,
    pub env: crate::Rng,
    pub replay: crate::Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = crate::rng_from_seed(seed);
            r.set_stream(s);
            r
        };
        Self {
            init: stream(1),
            env: stream(2),
            replay: stream(3),
        }
    }
}

/// Trains `net` with ε-greedy episodes over the training trees and replay
/// rounds every `episodes_per_replay` episodes.
pub fn train<Q: QNetwork>(
    env: &Environment,
    net: &mut Q,
    source: CandidateSource<'_>,
    cfg: &AgentConfig,
    rngs: &mut RunRngs,
    mut log: impl FnMut(EpisodeLog),
) -> Result<()> {
    cfg.validate()?;
    let store = env.store.as_ref();
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut table = net.doc_table(store)?;
    let mut collected = 0usize;
    for episode in 0..cfg.episodes {
        let tree = &env.train[rngs.env.gen_range(0..env.train.len())];
        let stats = run_episode(
            env,
            tree,
            net,
            table.as_ref(),
            source,
            cfg.episode_config(),
            cfg.m,
            cfg.epsilon,
            &mut rngs.env,
            |t| {
                buffer.push(t);
                collected += 1;
            },
        )?;
        let mut record = EpisodeLog {
            episode,
            steps: stats.steps,
            total_reward: stats.total_reward,
            mean_td_error: None,
        };
        if (episode + 1) % cfg.episodes_per_replay == 0 {
            let updates = cfg.updates_per_replay.unwrap_or(collected);
            let mut sum = 0.0;
            let mut done = 0usize;
            for _ in 0..updates {
                let loss = replay_update(
                    &buffer,
                    net,
                    cfg.batch,
                    cfg.gamma,
                    cfg.eta,
                    cfg.reward_scale,
                    store,
                    &mut rngs.replay,
                )?;
                if let Some(l) = loss {
                    sum += l;
                    done += 1;
                }
            }
            if done > 0 {
                record.mean_td_error = Some(sum / done as f64);
            }
            collected = 0;
            table = net.doc_table(store)?;
        }
        log(record);
    }
    Ok(())
}

/// Phase 1: the single-comment DRRN, ranking and choosing by itself.
pub fn train_phase1(
    env: &Environment,
    cfg: &AgentConfig,
    mode: KnowledgeMode,
    rngs: &mut RunRngs,
    log: impl FnMut(EpisodeLog),
) -> Result<Drrn> {
    let cfg = cfg.phase1();
    let mut net = Drrn::new(env.vocab_dim(), mode, &mut rngs.init)?;
    train(env, &mut net, CandidateSource::Own, &cfg, rngs, log)?;
    Ok(net)
}

/// Phase 2: DRRN-BiLSTM over candidate lists from the frozen `q1`
/// (two-stage) or from random subsampling (`q1 = None`).
pub fn train_phase2(
    env: &Environment,
    q1: Option<&Drrn>,
    cfg: &AgentConfig,
    mode: KnowledgeMode,
    rngs: &mut RunRngs,
    log: impl FnMut(EpisodeLog),
) -> Result<DrrnBiLstm> {
    let mut net = DrrnBiLstm::new(env.vocab_dim(), mode, &mut rngs.init)?;
    let q1_table = match q1 {
        Some(q) => q.doc_table(env.store.as_ref())?,
        None => None,
    };
    let source = match q1 {
        Some(q) => CandidateSource::Frozen(q, q1_table.as_ref()),
        None => CandidateSource::Random,
    };
    train(env, &mut net, source, cfg, rngs, log)?;
    Ok(net)
}

/// Total reward of each of `episodes` test episodes (test trees in order,
/// cycling). The acting network's choice is ε-greedy over `B_t`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<Q: QNetwork>(
    env: &Environment,
    net: &Q,
    source: CandidateSource<'_>,
    cfg: EpisodeConfig,
    m: usize,
    epsilon: f64,
    episodes: usize,
    rng: &mut crate::Rng,
) -> Result<Vec<i64>> {
    let trees = if env.test.is_empty() { &env.train } else { &env.test };
    let table = net.doc_table(env.store.as_ref())?;
    (0..episodes)
        .map(|e| {
            let tree = &trees[e % trees.len()];
            run_episode(env, tree, net, table.as_ref(), source, cfg, m, epsilon, rng, |_| {})
                .map(|s| s.total_reward)
        })
        .collect()
}

/// Random-policy rewards on the same test episodes as [`evaluate`].
pub fn evaluate_random(env: &Environment, cfg: EpisodeConfig, episodes: usize, seed: u64) -> Result<Vec<i64>> {
    let trees = if env.test.is_empty() { &env.train } else { &env.test };
    (0..episodes)
        .map(|e| crate::env::random_rollout(&trees[e % trees.len()].0, cfg, seed.wrapping_add(e as u64)))
        .collect()
}
