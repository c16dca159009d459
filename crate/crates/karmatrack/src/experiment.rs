//! Multi-run training and evaluation, the ablation matrix and bound reports.
//!
//! Output directory of [`run_experiment`]:
//!
//! - `episodes.csv`: one row per training episode
//! - `eval.csv`: one row per evaluation episode, with the random baseline
//! - `summary.csv`, `summary.txt`
//! - `timing.txt`: wall-clock per phase (the only non-reproducible file)
//! - `vocab.txt`, `runs/run<r>/` checkpoints with `manifest.toml`
//!
//! CSV files start with the effective config as `#` comment lines.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use karmatrack_core::agent::{
    evaluate, evaluate_random, train_phase1, train_phase2, CandidateSource, EpisodeLog, Environment, RunRngs,
    SearchMode,
};
use karmatrack_core::env::{generate_synthetic, oracle_upper_bound, random_rollout, DiscussionTree, EpisodeConfig, SynthConfig};
use karmatrack_core::knowledge::{KnowledgeMode, KnowledgePost};
use karmatrack_core::qnet::{Drrn, DrrnBiLstm, QNetwork};
use serde::Serialize;

use crate::checkpoint::{self, Architecture, Manifest};
use crate::config::RunConfig;
use crate::io;
use crate::stats::{format_mean_std, mean, sample_std};

/// RNG stream of evaluation episodes; training uses streams 1 to 3.
const EVAL_STREAM: u64 = 4;

pub struct Corpus {
    pub trees: Vec<DiscussionTree>,
    pub knowledge: Option<Vec<KnowledgePost>>,
}

pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    if let Some(files) = &cfg.corpus {
        let trees = io::read_trees(&files.trees)?;
        let knowledge = files.knowledge.as_deref().map(io::read_knowledge).transpose()?;
        return Ok(Corpus { trees, knowledge });
    }
    let synth = cfg.synth.clone().unwrap_or_default();
    let world = generate_synthetic(&synth)?;
    Ok(Corpus {
        trees: world.trees,
        knowledge: Some(world.knowledge),
    })
}

/// The knowledge store is built only when the mode uses it.
pub fn build_environment(cfg: &RunConfig, corpus: &Corpus) -> Result<Environment> {
    let knowledge = if cfg.knowledge.enabled() {
        match &corpus.knowledge {
            Some(k) => Some(k.as_slice()),
            None => bail!("knowledge mode `{}` needs a knowledge corpus", cfg.knowledge),
        }
    } else {
        None
    };
    Ok(Environment::split(corpus.trees.clone(), cfg.test_fraction, knowledge, cfg.max_vocab)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Phase1,
    Phase2,
    Eval,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Phase1 => "phase1",
            Phase::Phase2 => "phase2",
            Phase::Eval => "eval",
        }
    }
}

pub struct RunOutput {
    pub run: usize,
    pub seed: u64,
    pub log: Vec<(Phase, EpisodeLog)>,
    pub eval: Vec<i64>,
    pub random: Vec<i64>,
    pub q1: Option<Drrn>,
    pub q2: Option<DrrnBiLstm>,
    pub secs: Vec<(Phase, f64)>,
}

impl RunOutput {
    pub fn mean_reward(&self) -> f64 {
        self.eval.iter().sum::<i64>() as f64 / self.eval.len() as f64
    }
}

fn eval_rng(seed: u64) -> karmatrack_core::Rng {
    let mut rng = karmatrack_core::rng_from_seed(seed);
    rng.set_stream(EVAL_STREAM);
    rng
}

/// Evaluates trained networks the way `search` acts.
pub fn evaluate_networks(
    env: &Environment,
    cfg: &RunConfig,
    q1: Option<&Drrn>,
    q2: Option<&DrrnBiLstm>,
    seed: u64,
) -> Result<Vec<i64>> {
    let ep = cfg.agent.episode_config();
    let (m, eps, n) = (cfg.agent.m, cfg.eval_epsilon, cfg.eval_episodes);
    let mut rng = eval_rng(seed);
    let store = env.store.as_ref();
    Ok(match (cfg.search, q1, q2) {
        (SearchMode::FullSumOnly, Some(q1), _) => {
            let table = q1.doc_table(store)?;
            evaluate(env, q1, CandidateSource::Frozen(q1, table.as_ref()), ep, m, eps, n, &mut rng)?
        }
        (SearchMode::TwoStage, Some(q1), Some(q2)) => {
            let table = q1.doc_table(store)?;
            evaluate(env, q2, CandidateSource::Frozen(q1, table.as_ref()), ep, m, eps, n, &mut rng)?
        }
        (SearchMode::RandomSubsample, _, Some(q2)) => {
            evaluate(env, q2, CandidateSource::Random, ep, m, eps, n, &mut rng)?
        }
        (mode, _, _) => bail!("search mode `{mode}` is missing a trained network"),
    })
}

/// Trains and evaluates run `run` of `cfg`.
pub fn run_one(env: &Environment, cfg: &RunConfig, run: usize) -> Result<RunOutput> {
    let seed = cfg.run_seed(run);
    let agent = karmatrack_core::agent::AgentConfig {
        seed,
        ..cfg.agent.clone()
    };
    let mut rngs = RunRngs::new(seed);
    let mut log = Vec::new();
    let mut secs = Vec::new();
    let mut q1 = None;
    if cfg.search != SearchMode::RandomSubsample {
        let t = Instant::now();
        q1 = Some(train_phase1(env, &agent, cfg.knowledge, &mut rngs, |l| log.push((Phase::Phase1, l)))?);
        secs.push((Phase::Phase1, t.elapsed().as_secs_f64()));
    }
    let mut q2 = None;
    if cfg.search != SearchMode::FullSumOnly {
        let t = Instant::now();
        q2 = Some(train_phase2(env, q1.as_ref(), &agent, cfg.knowledge, &mut rngs, |l| {
            log.push((Phase::Phase2, l))
        })?);
        secs.push((Phase::Phase2, t.elapsed().as_secs_f64()));
    }
    let t = Instant::now();
    let eval = evaluate_networks(env, cfg, q1.as_ref(), q2.as_ref(), seed)?;
    let random = evaluate_random(env, agent.episode_config(), cfg.eval_episodes, seed)?;
    secs.push((Phase::Eval, t.elapsed().as_secs_f64()));
    Ok(RunOutput {
        run,
        seed,
        log,
        eval,
        random,
        q1,
        q2,
        secs,
    })
}

/// Runs every seed of `cfg`, spreading runs over worker threads. Results
/// come back in run order whatever the scheduling.
pub fn run_all(env: &Environment, cfg: &RunConfig) -> Result<Vec<RunOutput>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunOutput>>>> = Mutex::new((0..cfg.runs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..cfg.worker_threads() {
            s.spawn(|| loop {
                let run = next.fetch_add(1, Ordering::Relaxed);
                if run >= cfg.runs {
                    break;
                }
                let out = run_one(env, cfg, run);
                slots.lock().expect("no worker panics while holding the lock")[run] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every run was claimed"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub label: String,
    pub search: String,
    pub knowledge: String,
    pub runs: usize,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub random_mean: f64,
    #[serde(skip)]
    pub run_means: Vec<f64>,
    #[serde(skip)]
    pub warnings: Vec<String>,
    /// Mean wall-clock seconds per phase over runs.
    #[serde(skip)]
    pub phase_secs: Vec<(Phase, f64)>,
}

impl MetricsSummary {
    pub fn from_runs(label: &str, cfg: &RunConfig, runs: &[RunOutput]) -> Self {
        let run_means: Vec<f64> = runs.iter().map(RunOutput::mean_reward).collect();
        let random_means: Vec<f64> = runs
            .iter()
            .map(|r| r.random.iter().sum::<i64>() as f64 / r.random.len() as f64)
            .collect();
        let mut phase_secs = Vec::new();
        for phase in [Phase::Phase1, Phase::Phase2, Phase::Eval] {
            let t: Vec<f64> = runs
                .iter()
                .flat_map(|r| r.secs.iter().filter(|(p, _)| *p == phase).map(|&(_, s)| s))
                .collect();
            if !t.is_empty() {
                phase_secs.push((phase, mean(&t)));
            }
        }
        Self {
            label: label.into(),
            search: cfg.search.to_string(),
            knowledge: cfg.knowledge.to_string(),
            runs: runs.len(),
            train_episodes: cfg.agent.episodes,
            eval_episodes: cfg.eval_episodes,
            mean: mean(&run_means),
            std: sample_std(&run_means),
            random_mean: mean(&random_means),
            warnings: config_warnings(cfg),
            run_means,
            phase_secs,
        }
    }

    /// `mean (std)`, the way results tables print them.
    pub fn display(&self) -> String {
        format_mean_std(&self.run_means)
    }
}

pub fn config_warnings(cfg: &RunConfig) -> Vec<String> {
    let mut w = Vec::new();
    if cfg.runs == 1 {
        w.push("runs=1: std reported as 0".to_string());
    }
    if cfg.search == SearchMode::TwoStage && cfg.agent.k == 1 {
        w.push("two_stage with K=1 degenerates to ranking by the phase-1 network".to_string());
    }
    w
}

fn config_header(cfg: &RunConfig) -> String {
    let mut out = String::new();
    for line in cfg.to_toml().lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}

fn csv_writer(path: &Path, cfg: &RunConfig) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    file.write_all(config_header(cfg).as_bytes())?;
    Ok(csv::Writer::from_writer(file))
}

#[derive(Serialize)]
struct EpisodeRow {
    run: usize,
    seed: u64,
    phase: &'static str,
    episode: usize,
    steps: usize,
    total_reward: i64,
    mean_td_error: Option<f64>,
}

#[derive(Serialize)]
struct EvalRow {
    run: usize,
    seed: u64,
    episode: usize,
    reward: i64,
    random_reward: i64,
}

fn write_episode_csv(path: &Path, cfg: &RunConfig, runs: &[RunOutput]) -> Result<()> {
    let mut w = csv_writer(path, cfg)?;
    for r in runs {
        for (phase, l) in &r.log {
            w.serialize(EpisodeRow {
                run: r.run,
                seed: r.seed,
                phase: phase.name(),
                episode: l.episode,
                steps: l.steps,
                total_reward: l.total_reward,
                mean_td_error: l.mean_td_error,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_eval_csv(path: &Path, cfg: &RunConfig, runs: &[RunOutput]) -> Result<()> {
    let mut w = csv_writer(path, cfg)?;
    for r in runs {
        for (episode, (&reward, &random_reward)) in r.eval.iter().zip(&r.random).enumerate() {
            w.serialize(EvalRow {
                run: r.run,
                seed: r.seed,
                episode,
                reward,
                random_reward,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_summaries(path: &Path, cfg: &RunConfig, rows: &[MetricsSummary]) -> Result<()> {
    let mut w = csv_writer(path, cfg)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn summary_text(s: &MetricsSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}: search={} knowledge={}", s.label, s.search, s.knowledge);
    let _ = writeln!(
        out,
        "  mean reward {} over {} runs ({} training episodes, {} evaluation episodes each)",
        s.display(),
        s.runs,
        s.train_episodes,
        s.eval_episodes
    );
    let _ = writeln!(out, "  random policy {:.1}", s.random_mean);
    let means: Vec<String> = s.run_means.iter().map(|m| format!("{m:.1}")).collect();
    let _ = writeln!(out, "  run means {}", means.join(" "));
    for w in &s.warnings {
        let _ = writeln!(out, "  warning: {w}");
    }
    out
}

fn timing_text(s: &MetricsSummary) -> String {
    let mut out = String::new();
    for (phase, secs) in &s.phase_secs {
        let _ = writeln!(out, "{} {} {secs:.3}", s.label, phase.name());
    }
    out
}

fn save_checkpoints(dir: &Path, env: &Environment, runs: &[RunOutput]) -> Result<()> {
    io::write_vocab(&dir.join("vocab.txt"), env.vocabulary())?;
    for r in runs {
        let run_dir = dir.join("runs").join(format!("run{}", r.run));
        fs::create_dir_all(&run_dir)?;
        let mut manifest = Manifest::default();
        if let Some(q1) = &r.q1 {
            checkpoint::save_network(&run_dir, &mut manifest, "q1", Architecture::Drrn, env.vocab_dim(), q1)?;
        }
        if let Some(q2) = &r.q2 {
            checkpoint::save_network(&run_dir, &mut manifest, "q2", Architecture::DrrnBilstm, env.vocab_dim(), q2)?;
        }
        manifest.write(&run_dir)?;
    }
    Ok(())
}

/// Runs, evaluates and writes every artifact of one configuration.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<MetricsSummary> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    run_experiment_on(cfg, &corpus, out, "experiment")
}

pub fn run_experiment_on(cfg: &RunConfig, corpus: &Corpus, out: &Path, label: &str) -> Result<MetricsSummary> {
    cfg.validate()?;
    let env = build_environment(cfg, corpus)?;
    let runs = run_all(&env, cfg)?;
    let summary = MetricsSummary::from_runs(label, cfg, &runs);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_episode_csv(&out.join("episodes.csv"), cfg, &runs)?;
    write_eval_csv(&out.join("eval.csv"), cfg, &runs)?;
    write_summaries(&out.join("summary.csv"), cfg, std::slice::from_ref(&summary))?;
    fs::write(out.join("summary.txt"), summary_text(&summary))?;
    fs::write(out.join("timing.txt"), timing_text(&summary))?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    save_checkpoints(out, &env, &runs)?;
    Ok(summary)
}

/// Re-evaluates the checkpoints written by [`run_experiment`] in `dir`.
pub fn evaluate_saved(cfg: &RunConfig, dir: &Path) -> Result<MetricsSummary> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let env = build_environment(cfg, &corpus)?;
    let saved = io::read_vocab(&dir.join("vocab.txt"))?;
    if saved.tokens() != env.vocabulary().tokens() {
        bail!("{}: vocabulary differs from the one rebuilt from this config", dir.display());
    }
    let mut runs = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let run_dir = dir.join("runs").join(format!("run{run}"));
        let manifest = Manifest::read(&run_dir)?;
        let q1 = manifest.entry("q1").map(|e| checkpoint::load_drrn(&run_dir, e)).transpose()?;
        let q2 = manifest.entry("q2").map(|e| checkpoint::load_bilstm(&run_dir, e)).transpose()?;
        for net in [q1.as_ref().map(|q| q.tower().mode()), q2.as_ref().map(|q| q.tower().mode())]
            .into_iter()
            .flatten()
        {
            if net != cfg.knowledge {
                bail!("{}: checkpoint knowledge mode `{net}` differs from config `{}`", run_dir.display(), cfg.knowledge);
            }
        }
        let seed = cfg.run_seed(run);
        let t = Instant::now();
        let eval = evaluate_networks(&env, cfg, q1.as_ref(), q2.as_ref(), seed)?;
        let random = evaluate_random(&env, cfg.agent.episode_config(), cfg.eval_episodes, seed)?;
        runs.push(RunOutput {
            run,
            seed,
            log: Vec::new(),
            eval,
            random,
            q1,
            q2,
            secs: vec![(Phase::Eval, t.elapsed().as_secs_f64())],
        });
    }
    Ok(MetricsSummary::from_runs("eval", cfg, &runs))
}

pub struct AblationCell {
    pub knowledge: bool,
    pub two_stage: bool,
    pub config: RunConfig,
    pub summary: MetricsSummary,
}

/// The four cells {±knowledge} × {±two_stage} on one corpus and seed set.
/// Without two-stage the BiLSTM network acts on randomly subsampled
/// candidate lists. With knowledge the base mode is used, or attention if
/// the base has none.
pub fn ablation_configs(base: &RunConfig) -> Vec<(String, bool, bool, RunConfig)> {
    let with = if base.knowledge.enabled() {
        base.knowledge
    } else {
        KnowledgeMode::Attention
    };
    let mut cells = Vec::new();
    for knowledge in [false, true] {
        for two_stage in [false, true] {
            let mut cfg = base.clone();
            cfg.knowledge = if knowledge { with } else { KnowledgeMode::None };
            cfg.search = if two_stage {
                SearchMode::TwoStage
            } else {
                SearchMode::RandomSubsample
            };
            let label = format!(
                "{}{}",
                if knowledge { "knowledge" } else { "base" },
                if two_stage { "+two_stage" } else { "" }
            );
            cells.push((label, knowledge, two_stage, cfg));
        }
    }
    cells
}

pub fn run_ablation(base: &RunConfig, out: &Path) -> Result<Vec<AblationCell>> {
    base.validate()?;
    let corpus = load_corpus(base)?;
    let mut cells = Vec::new();
    for (label, knowledge, two_stage, cfg) in ablation_configs(base) {
        let dir = out.join(&label);
        let summary = run_experiment_on(&cfg, &corpus, &dir, &label)?;
        cells.push(AblationCell {
            knowledge,
            two_stage,
            config: cfg,
            summary,
        });
    }
    let rows: Vec<MetricsSummary> = cells.iter().map(|c| c.summary.clone()).collect();
    write_summaries(&out.join("ablation.csv"), base, &rows)?;
    let mut text = String::new();
    let _ = writeln!(text, "{:<22} {:>18} {:>10}", "cell", "mean (std)", "seeds");
    for c in &cells {
        let seeds = format!("{}..{}", c.config.seed, c.config.run_seed(c.config.runs - 1));
        let _ = writeln!(text, "{:<22} {:>18} {:>10}", c.summary.label, c.summary.display(), seeds);
    }
    let _ = writeln!(text, "each cell directory holds the config.toml that reproduces it");
    fs::write(out.join("ablation.txt"), text)?;
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub tree: usize,
    pub post_id: i64,
    pub comments: usize,
    /// `None` when the oracle's leaf guard skipped the tree.
    pub oracle: Option<i64>,
    pub random_mean: f64,
}

pub struct BoundsReport {
    pub rows: Vec<BoundRow>,
    pub skipped: usize,
}

impl BoundsReport {
    /// Mean oracle and mean random reward over the trees the oracle covered.
    pub fn means(&self) -> (f64, f64) {
        let covered: Vec<&BoundRow> = self.rows.iter().filter(|r| r.oracle.is_some()).collect();
        let oracle: Vec<f64> = covered.iter().map(|r| r.oracle.unwrap_or(0) as f64).collect();
        let random: Vec<f64> = covered.iter().map(|r| r.random_mean).collect();
        (mean(&oracle), mean(&random))
    }
}

/// Oracle bound and mean random-policy reward (`rollouts` episodes) per tree.
pub fn report_bounds(
    trees: &[DiscussionTree],
    cfg: EpisodeConfig,
    max_leaves: usize,
    rollouts: usize,
    seed: u64,
) -> Result<BoundsReport> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(trees.len());
    let mut skipped = 0;
    for (i, tree) in trees.iter().enumerate() {
        let oracle = match oracle_upper_bound(tree, cfg.k, max_leaves) {
            Ok(v) => Some(v),
            Err(karmatrack_core::Error::TooLarge { .. }) => {
                skipped += 1;
                None
            }
            Err(e) => return Err(e.into()),
        };
        let mut total = 0i64;
        for r in 0..rollouts {
            total += random_rollout(tree, cfg, seed.wrapping_add((i * rollouts + r) as u64))?;
        }
        rows.push(BoundRow {
            tree: i,
            post_id: tree.root().id,
            comments: tree.comment_count(),
            oracle,
            random_mean: total as f64 / rollouts.max(1) as f64,
        });
    }
    Ok(BoundsReport { rows, skipped })
}

pub fn write_bounds(out: &Path, cfg: &RunConfig, report: &BoundsReport) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut w = csv_writer(&out.join("bounds.csv"), cfg)?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let (oracle, random) = report.means();
    let text = format!(
        "random {random:.1} vs upper bound {oracle:.1} over {} trees ({} skipped by the leaf guard)\n",
        report.rows.len() - report.skipped,
        report.skipped
    );
    fs::write(out.join("bounds.txt"), text)?;
    Ok(())
}

/// Writes a generated corpus as `trees.jsonl` and `knowledge.jsonl`.
pub fn synth_gen(cfg: &SynthConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    cfg.validate()?;
    let world = generate_synthetic(cfg)?;
    fs::create_dir_all(out)?;
    let trees = out.join("trees.jsonl");
    let knowledge = out.join("knowledge.jsonl");
    io::write_trees(&trees, &world.trees)?;
    io::write_knowledge(&knowledge, &world.knowledge)?;
    Ok((trees, knowledge))
}

#[cfg(test)]
mod tests {
    use super::*;
    use karmatrack_core::agent::AgentConfig;

    fn tiny() -> RunConfig {
        RunConfig {
            runs: 2,
            eval_episodes: 6,
            threads: 2,
            synth: Some(SynthConfig {
                trees: 10,
                mean_size: 30,
                vocab_size: 60,
                epochs: 3,
                ..SynthConfig::default()
            }),
            agent: AgentConfig {
                k: 2,
                m: 4,
                episodes: 12,
                episodes_per_replay: 4,
                batch: 8,
                updates_per_replay: Some(2),
                eta: 1e-3,
                ..AgentConfig::default()
            },
            ..RunConfig::default()
        }
    }

    fn read(dir: &Path, name: &str) -> String {
        fs::read_to_string(dir.join(name)).unwrap()
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        let s1 = run_experiment(&cfg, a.path()).unwrap();
        let s2 = run_experiment(&cfg, b.path()).unwrap();
        assert_eq!(s1.run_means, s2.run_means);
        for f in ["episodes.csv", "eval.csv", "summary.csv", "summary.txt", "runs/run1/q2.ckpt"] {
            assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
        }
        // The thread count only shows up in the header.
        cfg.threads = 1;
        run_experiment(&cfg, c.path()).unwrap();
        let rows = |dir: &Path| read(dir, "episodes.csv").lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
        assert_eq!(rows(a.path()), rows(c.path()));
        let episodes = read(a.path(), "episodes.csv");
        assert!(episodes.starts_with("# seed = 0\n"));
        assert!(episodes.contains("run,seed,phase,episode,steps,total_reward,mean_td_error\n"));
        // 12 episodes per phase, two phases, two runs.
        assert_eq!(episodes.lines().filter(|l| l.starts_with("1,1,phase")).count(), 24);
        assert_eq!(read(a.path(), "eval.csv").lines().filter(|l| !l.starts_with('#')).count(), 13);
    }

    #[test]
    fn checkpoints_reproduce_the_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.knowledge = KnowledgeMode::Attention;
        let trained = run_experiment(&cfg, dir.path()).unwrap();
        let again = evaluate_saved(&cfg, dir.path()).unwrap();
        assert_eq!(trained.run_means, again.run_means);
        cfg.knowledge = KnowledgeMode::None;
        assert!(evaluate_saved(&cfg, dir.path()).is_err());
    }

    #[test]
    fn every_search_mode_runs() {
        for search in SearchMode::ALL {
            let dir = tempfile::tempdir().unwrap();
            let cfg = RunConfig { search, runs: 1, ..tiny() };
            let s = run_experiment(&cfg, dir.path()).unwrap();
            assert_eq!(s.std, 0.0);
            assert!(s.warnings.iter().any(|w| w.contains("runs=1")));
            let manifest = Manifest::read(&dir.path().join("runs/run0")).unwrap();
            assert_eq!(manifest.entry("q1").is_some(), search != SearchMode::RandomSubsample);
            assert_eq!(manifest.entry("q2").is_some(), search != SearchMode::FullSumOnly);
        }
    }

    #[test]
    fn single_comment_two_stage_warns() {
        let mut cfg = tiny();
        cfg.agent.k = 1;
        assert!(config_warnings(&cfg).iter().any(|w| w.contains("K=1")));
    }

    #[test]
    fn ablation_has_four_cells() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = tiny();
        base.runs = 1;
        base.agent.episodes = 4;
        let cells = run_ablation(&base, dir.path()).unwrap();
        assert_eq!(cells.len(), 4);
        let labels: Vec<&str> = cells.iter().map(|c| c.summary.label.as_str()).collect();
        assert_eq!(labels, ["base", "base+two_stage", "knowledge", "knowledge+two_stage"]);
        for c in &cells {
            assert!(c.summary.mean.is_finite());
            let saved = RunConfig::read(&dir.path().join(&c.summary.label).join("config.toml")).unwrap();
            assert_eq!(saved, c.config);
        }
        assert_eq!(cells[3].config.knowledge, KnowledgeMode::Attention);
        assert!(read(dir.path(), "ablation.txt").contains("knowledge+two_stage"));
    }

    #[test]
    fn bounds_cover_random_rollouts() {
        let world = generate_synthetic(&SynthConfig {
            trees: 6,
            mean_size: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        let ep = EpisodeConfig::new(10, 2).unwrap();
        let report = report_bounds(&world.trees, ep, 64, 5, 1).unwrap();
        assert_eq!(report.rows.len(), 6);
        for row in &report.rows {
            if let Some(o) = row.oracle {
                assert!(o as f64 >= row.random_mean, "{row:?}");
            }
        }
        let guarded = report_bounds(&world.trees, ep, 1, 1, 1).unwrap();
        assert_eq!(guarded.skipped, 6);
    }

    #[test]
    fn missing_knowledge_corpus_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let (trees, _) = synth_gen(&SynthConfig { trees: 4, mean_size: 10, ..SynthConfig::default() }, dir.path()).unwrap();
        let cfg = RunConfig {
            knowledge: KnowledgeMode::Attention,
            corpus: Some(crate::config::CorpusFiles { trees, knowledge: None }),
            ..tiny()
        };
        let cfg = RunConfig { synth: None, ..cfg };
        let corpus = load_corpus(&cfg).unwrap();
        assert_eq!(corpus.trees.len(), 4);
        assert!(build_environment(&cfg, &corpus).is_err());
    }
}
