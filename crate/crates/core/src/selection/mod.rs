//! Device-selection policies: uniform random subsets and a recurrent
//! Q-network over the partially observed device states.

mod agent;
mod combin;
mod pseudo;

pub use agent::{AgentConfig, DrqnAgent, ReplayBuffer, ReplayItem};
pub use combin::{action_count, action_decode, action_encode, binomial, ActionIndex};
pub use pseudo::{Observation, PseudoState, PseudoStateTracker};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::defense::{Verdict, VerdictLabel};
use crate::error::Result;

/// Largest Q-head the agent will build.
pub const MAX_ACTION_COUNT: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    Random,
    Drqn,
}

impl SelectionPolicy {
    pub fn name(self) -> &'static str {
        match self {
            SelectionPolicy::Random => "random",
            SelectionPolicy::Drqn => "drqn",
        }
    }
}

/// Benign uploads received minus fees paid for the round.
pub fn compute_reward(verdicts: &[Verdict], fees: &[f64]) -> f64 {
    let benign = verdicts.iter().filter(|v| v.label == VerdictLabel::Benign).count();
    benign as f64 - fees.iter().sum::<f64>()
}

/// Uniform over all `C(m, k)` subsets.
pub fn select_random<R: Rng + ?Sized>(rng: &mut R, m: usize, k: usize) -> ActionIndex {
    ActionIndex(rng.random_range(0..action_count(m, k)))
}

pub fn select_drqn<R: Rng + ?Sized>(
    agent: &DrqnAgent,
    pseudo_state: &PseudoState,
    epsilon: f64,
    rng: &mut R,
) -> Result<ActionIndex> {
    agent.select(pseudo_state, epsilon, rng)
}
