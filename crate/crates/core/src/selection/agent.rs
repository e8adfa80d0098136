//! DRQN agent: online and target networks, replay memory, epsilon-greedy
//! action choice and temporal-difference learning.

use std::collections::VecDeque;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::combin::{action_count, ActionIndex};
use super::pseudo::PseudoState;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, drqn_batch_backward, drqn_forward, read_checkpoint, write_checkpoint, AdamConfig, AdamState,
    DrqnSpec, ParamVector,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Learn calls between target-network copies.
    pub target_sync: u64,
    pub learn_per_round: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Rounds over which epsilon falls linearly from start to end.
    pub epsilon_anneal_rounds: u64,
    pub lstm_units: usize,
    pub fc_units: usize,
    pub sequence_len: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.9,
            learning_rate: 1e-3,
            replay_capacity: 10_000,
            batch_size: 32,
            target_sync: 100,
            learn_per_round: 1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_rounds: 3_000,
            lstm_units: 32,
            fc_units: 200,
            sequence_len: 3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            errs.push(format!("agent gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.learning_rate > 0.0) {
            errs.push(format!("agent learning_rate {} must be > 0", self.learning_rate));
        }
        for (name, v) in [
            ("replay_capacity", self.replay_capacity),
            ("batch_size", self.batch_size),
            ("lstm_units", self.lstm_units),
            ("fc_units", self.fc_units),
            ("sequence_len", self.sequence_len),
        ] {
            if v == 0 {
                errs.push(format!("agent {name} must be >= 1"));
            }
        }
        if self.batch_size > self.replay_capacity {
            errs.push(format!(
                "agent batch_size {} exceeds replay_capacity {}",
                self.batch_size, self.replay_capacity
            ));
        }
        if self.target_sync == 0 {
            errs.push("agent target_sync must be >= 1".into());
        }
        for (name, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("agent {name} {v} outside [0, 1]"));
            }
        }
        errs
    }

    /// Exploration rate after `rounds` completed rounds.
    pub fn epsilon(&self, rounds: u64) -> f64 {
        if rounds >= self.epsilon_anneal_rounds {
            return self.epsilon_end;
        }
        let frac = rounds as f64 / self.epsilon_anneal_rounds as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayItem {
    pub pseudo_state: PseudoState,
    pub action: ActionIndex,
    pub reward: f64,
    pub next_pseudo_state: PseudoState,
    pub terminal: bool,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<ReplayItem>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, item: ReplayItem) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
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

    pub fn iter(&self) -> impl Iterator<Item = &ReplayItem> {
        self.items.iter()
    }

    /// `n` distinct items chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&ReplayItem> {
        rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

pub struct DrqnAgent {
    pub spec: DrqnSpec,
    pub config: AgentConfig,
    pub online: ParamVector,
    pub target: ParamVector,
    adam: AdamState,
    pub replay: ReplayBuffer,
    pub learn_calls: u64,
    pub ed_count: usize,
    pub select_count: usize,
}

impl DrqnAgent {
    pub fn new<R: Rng + ?Sized>(ed_count: usize, select_count: usize, config: AgentConfig, rng: &mut R) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::ConfigViolations(errs));
        }
        let spec = DrqnSpec {
            obs_action_dim: 2 * ed_count,
            lstm_units: config.lstm_units,
            fc_units: config.fc_units,
            action_count: action_count(ed_count, select_count),
            sequence_len: config.sequence_len,
        };
        spec.validate()?;
        let online = spec.init(rng);
        Ok(DrqnAgent {
            target: online.clone(),
            adam: AdamState::new(&online, AdamConfig::with_learning_rate(config.learning_rate)),
            replay: ReplayBuffer::new(config.replay_capacity),
            online,
            spec,
            config,
            learn_calls: 0,
            ed_count,
            select_count,
        })
    }

    pub fn q_values(&self, pseudo_state: &PseudoState) -> Result<Vec<f64>> {
        drqn_forward(&self.online, &self.spec, pseudo_state.view())
    }

    pub fn target_q_values(&self, pseudo_state: &PseudoState) -> Result<Vec<f64>> {
        drqn_forward(&self.target, &self.spec, pseudo_state.view())
    }

    /// Epsilon-greedy over all actions; greedy ties go to the lowest index.
    pub fn select<R: Rng + ?Sized>(&self, pseudo_state: &PseudoState, epsilon: f64, rng: &mut R) -> Result<ActionIndex> {
        if rng.random::<f64>() < epsilon {
            return Ok(ActionIndex(rng.random_range(0..self.spec.action_count)));
        }
        let q = self.q_values(pseudo_state)?;
        let mut best = 0;
        for (i, &v) in q.iter().enumerate() {
            if v > q[best] {
                best = i;
            }
        }
        Ok(ActionIndex(best))
    }

    pub fn observe(&mut self, item: ReplayItem) {
        self.replay.push(item);
    }

    /// One gradient step on a replay batch; `None` until the buffer holds a batch.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        let n = self.config.batch_size;
        if self.replay.len() < n {
            return Ok(None);
        }
        let batch = self.replay.sample(n, rng);
        let mut samples: Vec<(ArrayView2<f64>, f64, usize)> = Vec::with_capacity(n);
        for item in &batch {
            let y = if item.terminal {
                item.reward
            } else {
                let next = self.target_q_values(&item.next_pseudo_state)?;
                item.reward + self.config.gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            samples.push((item.pseudo_state.view(), y, item.action.0));
        }
        let (loss, grad) = drqn_batch_backward(&self.online, &self.spec, &samples)?;
        adam_step(&mut self.online, &grad, &mut self.adam)?;
        self.learn_calls += 1;
        if self.learn_calls % self.config.target_sync == 0 {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    /// Writes `agent.ckpt` (online network) and `agent.toml` (hyperparameters
    /// and learning position) into `dir`.
    pub fn save(&self, dir: &Path, rounds_seen: u64) -> Result<()> {
        let ckpt = dir.join("agent.ckpt");
        let file = fs::File::create(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        write_checkpoint(std::io::BufWriter::new(file), &self.online).map_err(|e| Error::io(&ckpt, e))?;
        let sidecar = AgentSidecar {
            ed_count: self.ed_count,
            select_count: self.select_count,
            learn_calls: self.learn_calls,
            rounds_seen,
            epsilon: self.config.epsilon(rounds_seen),
            config: self.config.clone(),
        };
        let text = toml::to_string(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join("agent.toml");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Restores a saved agent; returns it with the saved round position.
    /// Replay memory and optimiser moments start empty.
    pub fn load(dir: &Path) -> Result<(Self, u64)> {
        let path = dir.join("agent.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: AgentSidecar = toml::from_str(&text).map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        let ckpt = dir.join("agent.ckpt");
        let file = fs::File::open(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        let online = read_checkpoint(BufReader::new(file))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut agent = DrqnAgent::new(sidecar.ed_count, sidecar.select_count, sidecar.config, &mut rng)?;
        agent.online.check_shape(&online, "agent checkpoint")?;
        agent.online = online;
        agent.sync_target();
        agent.learn_calls = sidecar.learn_calls;
        Ok((agent, sidecar.rounds_seen))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentSidecar {
    ed_count: usize,
    select_count: usize,
    learn_calls: u64,
    rounds_seen: u64,
    epsilon: f64,
    config: AgentConfig,
}
