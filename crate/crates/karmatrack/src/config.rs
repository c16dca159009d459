//! Run configuration files (TOML).
//!
//! ```toml
//! seed = 0
//! runs = 5
//! knowledge = "attention"      # none | rule:past_day | ... | attention
//! search = "two_stage"         # random_subsample | full_sum_only | two_stage
//!
//! [synth]                      # or: [corpus] trees = "...", knowledge = "..."
//! trees = 200
//!
//! [agent]
//! k = 3
//! episodes = 2000
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use karmatrack_core::agent::{AgentConfig, SearchMode};
use karmatrack_core::env::SynthConfig;
use karmatrack_core::knowledge::KnowledgeMode;
use serde::{Deserialize, Serialize};

/// Serde through `Display` / `FromStr`.
mod text_form {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusFiles {
    pub trees: PathBuf,
    #[serde(default)]
    pub knowledge: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub ks: Vec<usize>,
    /// Recorded states timed per K.
    pub states: usize,
    /// Timed passes over the recorded states; the fastest counts.
    pub repeats: usize,
    /// Independent timings; the median counts.
    pub trials: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ks: vec![2, 3, 4, 5],
            states: 50,
            repeats: 20,
            trials: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub runs: usize,
    #[serde(with = "text_form")]
    pub knowledge: KnowledgeMode,
    #[serde(with = "text_form")]
    pub search: SearchMode,
    /// Fraction of trees held out for evaluation.
    pub test_fraction: f64,
    pub max_vocab: usize,
    pub eval_episodes: usize,
    pub eval_epsilon: f64,
    /// Worker threads for independent runs; 0 uses every core.
    pub threads: usize,
    /// Skipped trees with more leaves than this when computing bounds.
    pub oracle_max_leaves: usize,
    pub corpus: Option<CorpusFiles>,
    pub synth: Option<SynthConfig>,
    pub agent: AgentConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 5,
            knowledge: KnowledgeMode::None,
            search: SearchMode::TwoStage,
            test_fraction: 0.2,
            max_vocab: karmatrack_core::text::Vocabulary::DEFAULT_MAX_SIZE,
            eval_episodes: 500,
            eval_epsilon: 0.0,
            threads: 0,
            oracle_max_leaves: karmatrack_core::env::DEFAULT_MAX_LEAVES,
            corpus: None,
            synth: None,
            agent: AgentConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative corpus paths resolve against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let (Some(files), Some(base)) = (cfg.corpus.as_mut(), path.parent()) {
            files.trees = base.join(&files.trees);
            files.knowledge = files.knowledge.as_ref().map(|k| base.join(k));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            bail!("runs must be at least 1");
        }
        if self.corpus.is_some() && self.synth.is_some() {
            bail!("give either [corpus] files or a [synth] generator, not both");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            bail!("test_fraction must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            bail!("eval_epsilon must lie in [0, 1]");
        }
        if self.eval_episodes == 0 {
            bail!("eval_episodes must be positive");
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        self.agent.validate()?;
        Ok(())
    }

    /// Seed of run `r`.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }

    pub fn worker_threads(&self) -> usize {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        let wanted = if self.threads == 0 { cores } else { self.threads };
        wanted.clamp(1, self.runs)
    }
}
