//! The discussion-tracking environment.
//!
//! A [`DiscussionTree`] is an immutable, validated tree of timestamped,
//! karma-scored comments. An [`Episode`] walks one tree: at every step the
//! agent sees `N` new comments from the subtrees of the currently tracked
//! comments and picks `K` of them to track next; the reward is their summed
//! karma.

mod episode;
mod oracle;
mod synth;
mod tree;

pub use episode::{random_rollout, Episode, EpisodeConfig, StepOutcome};
pub use oracle::{best_policy_reward, oracle_upper_bound, DEFAULT_MAX_LEAVES};
pub use synth::{generate_synthetic, token_overlap, SynthConfig, SyntheticWorld};
pub use tree::{Comment, DiscussionTree};
