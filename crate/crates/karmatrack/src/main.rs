use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use karmatrack::config::{CorpusFiles, RunConfig};
use karmatrack::experiment::{self, MetricsSummary};
use karmatrack::bench;
use karmatrack_core::agent::SearchMode;
use karmatrack_core::knowledge::KnowledgeMode;

/// Comment-tracking Q-learning experiments.
#[derive(Parser)]
#[command(name = "karmatrack", version)]
struct Cli {
    /// Run configuration (TOML); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Training episodes per phase.
    #[arg(long, global = true)]
    episodes: Option<usize>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// none, rule:past_day, rule:past_week, rule:top10_similar,
    /// rule:top10_popular or attention.
    #[arg(long, global = true)]
    knowledge: Option<KnowledgeMode>,
    /// random_subsample, full_sum_only or two_stage.
    #[arg(long, global = true)]
    search: Option<SearchMode>,
    #[arg(long, global = true)]
    eval_episodes: Option<usize>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Tree corpus file or directory (replaces the generator).
    #[arg(long, global = true)]
    trees: Option<PathBuf>,
    /// Knowledge corpus file, used with --trees.
    #[arg(long, global = true)]
    knowledge_corpus: Option<PathBuf>,
    /// Number of generated trees.
    #[arg(long, global = true)]
    synth_trees: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated corpus (trees.jsonl, knowledge.jsonl).
    SynthGen,
    /// Train and evaluate every run.
    Train,
    /// Re-evaluate saved checkpoints.
    Eval {
        /// Directory written by `train` (defaults to --out).
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// The {±knowledge} × {±two_stage} matrix.
    Ablate,
    /// Time candidate evaluation per search strategy.
    Bench {
        /// Comma-separated K values.
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Oracle upper bound and random-policy reward per tree.
    Bounds {
        /// Random rollouts per tree.
        #[arg(long, default_value_t = 20)]
        rollouts: usize,
    },
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$($field)+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(episodes => agent.episodes);
        set!(runs => runs);
        set!(k => agent.k);
        set!(m => agent.m);
        set!(eta => agent.eta);
        set!(knowledge => knowledge);
        set!(search => search);
        set!(eval_episodes => eval_episodes);
        set!(threads => threads);
        if let Some(trees) = &self.trees {
            cfg.synth = None;
            cfg.corpus = Some(CorpusFiles {
                trees: trees.clone(),
                knowledge: self.knowledge_corpus.clone(),
            });
        } else if self.knowledge_corpus.is_some() {
            anyhow::bail!("--knowledge-corpus needs --trees");
        }
        if let Some(n) = self.synth_trees {
            cfg.synth.get_or_insert_with(Default::default).trees = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn print_summary(s: &MetricsSummary) {
    println!("{}: {} runs, mean reward {}, random {:.1}", s.label, s.runs, s.display(), s.random_mean);
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::SynthGen => {
            let mut synth = cfg.synth.clone().unwrap_or_default();
            if let Some(seed) = cli.seed {
                synth.seed = seed;
            }
            let (trees, knowledge) = experiment::synth_gen(&synth, &cli.out("corpus"))?;
            println!("wrote {} and {}", trees.display(), knowledge.display());
        }
        Command::Train => {
            let out = cli.out("out");
            let s = experiment::run_experiment(&cfg, &out)?;
            print_summary(&s);
            println!("artifacts in {}", out.display());
        }
        Command::Eval { from } => {
            let dir = from.clone().unwrap_or_else(|| cli.out("out"));
            print_summary(&experiment::evaluate_saved(&cfg, &dir)?);
        }
        Command::Ablate => {
            let out = cli.out("ablation");
            experiment::run_ablation(&cfg, &out)?;
            print!("{}", std::fs::read_to_string(out.join("ablation.txt"))?);
        }
        Command::Bench { ks } => {
            let mut cfg = cfg;
            if let Some(ks) = ks {
                cfg.bench.ks = ks.clone();
            }
            let corpus = experiment::load_corpus(&cfg)?;
            let env = experiment::build_environment(&cfg, &corpus)?;
            let text = bench::bench_search(&env, &cfg)?.to_text();
            print!("{text}");
            if let Some(out) = &cli.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("bench.txt"), text)?;
            }
        }
        Command::Bounds { rollouts } => {
            let corpus = experiment::load_corpus(&cfg)?;
            let report = experiment::report_bounds(
                &corpus.trees,
                cfg.agent.episode_config(),
                cfg.oracle_max_leaves,
                *rollouts,
                cfg.seed,
            )?;
            for row in report.rows.iter().filter(|r| r.oracle.is_none()) {
                eprintln!("notice: tree {} (post {}) skipped by the oracle leaf guard", row.tree, row.post_id);
            }
            let out = cli.out("bounds");
            experiment::write_bounds(&out, &cfg, &report)?;
            print!("{}", std::fs::read_to_string(out.join("bounds.txt"))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    use clap::error::ErrorKind;
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({ "error": first, "kind": "usage" }));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", serde_json::json!({ "error": chain[0], "kind": "runtime", "causes": &chain[1..] }));
            ExitCode::FAILURE
        }
    }
}
