//! Seeded execution of learning tasks and metrics persistence.
//!
//! A run directory holds:
//!
//! * `manifest.toml`: code version, master seed and the full config echo.
//! * `rounds.csv`: one row per round, columns [`ROUND_COLUMNS`].
//! * `tasks.csv`: one row per learning task, columns [`TASK_COLUMNS`].
//! * `agent/`: the trained agent, when `run.save_agent` is set.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig};
use crate::data::{load_idx, partition_equal, BlobGenerator, LabeledDataset};
use crate::defense::VerdictLabel;
use crate::error::{Error, Result};
use crate::federation::{EdKind, EdProfile, Federation, RoundOutcome};
use crate::nn::{read_checkpoint, MlpSpec};
use crate::par;
use crate::seed::{self, tags};
use crate::selection::{
    action_decode, compute_reward, select_drqn, select_random, ActionIndex, DrqnAgent, Observation,
    PseudoStateTracker, ReplayItem, SelectionPolicy,
};
use crate::threat::AttackVector;

pub const CODE_VERSION: &str = concat!("fedshield ", env!("CARGO_PKG_VERSION"));

pub const ROUND_COLUMNS: [&str; 13] = [
    "task_id",
    "round",
    "selected",
    "verdicts",
    "poisoned",
    "accuracy",
    "fees_paid",
    "benign_count",
    "utility",
    "epsilon",
    "agent_loss",
    "geomed_nonconverged",
    "wall_time_ms",
];

pub const TASK_COLUMNS: [&str; 11] = [
    "task_id",
    "rounds",
    "final_accuracy",
    "mean_utility",
    "mean_benign_count",
    "mean_fees_paid",
    "poisoned_uploads",
    "poisoned_rejected",
    "clean_uploads",
    "clean_rejected",
    "geomed_nonconverged",
];

/// One row of `rounds.csv`. `selected` is `;`-separated ids; `verdicts`
/// holds one `B`/`P`/`L` code per selected device and `poisoned` one
/// `0`/`1` ground-truth flag, both aligned with `selected`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub task_id: u64,
    pub round: u64,
    pub selected: String,
    pub verdicts: String,
    pub poisoned: String,
    pub accuracy: f64,
    pub fees_paid: f64,
    pub benign_count: usize,
    pub utility: f64,
    pub epsilon: Option<f64>,
    pub agent_loss: Option<f64>,
    pub geomed_nonconverged: bool,
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: u64,
    pub rounds: u64,
    pub final_accuracy: f64,
    pub mean_utility: f64,
    pub mean_benign_count: f64,
    pub mean_fees_paid: f64,
    pub poisoned_uploads: usize,
    pub poisoned_rejected: usize,
    pub clean_uploads: usize,
    pub clean_rejected: usize,
    pub geomed_nonconverged: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// What a finished run produced, for callers that want it in memory.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub tasks: Vec<TaskSummary>,
    /// Per-round rewards in execution order across all tasks.
    pub rewards: Vec<f64>,
}

impl RunReport {
    pub fn mean_reward_last(&self, n: usize) -> f64 {
        let tail = &self.rewards[self.rewards.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// Training and auxiliary sets for the configured source.
pub fn load_data(config: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    match &config.data {
        DataSource::Synthetic {
            class_count,
            dim,
            train_samples,
            aux_samples,
        } => {
            let data_seed = seed::derive(config.run.seed, &[tags::DATA]);
            let blobs = BlobGenerator::new(*class_count, *dim, data_seed)?;
            let train = blobs.sample(train_samples / class_count, seed::derive(data_seed, &[tags::BLOB_SAMPLES]))?;
            let aux = blobs.sample(aux_samples / class_count, seed::derive(data_seed, &[tags::BLOB_TEST]))?;
            Ok((train, aux))
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            if train.dim() != test.dim() {
                return Err(Error::Consistency(format!(
                    "train images have {} features, test images {}",
                    train.dim(),
                    test.dim()
                )));
            }
            let classes = train.class_count().max(test.class_count());
            Ok((train.with_class_count(classes)?, test.with_class_count(classes)?))
        }
    }
}

fn roster(config: &ExperimentConfig, shards: Vec<Vec<usize>>) -> Vec<EdProfile> {
    let t = &config.topology;
    let first_vulnerable = t.ed_count - t.vulnerable_count;
    shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| {
            let vulnerable = id >= first_vulnerable;
            EdProfile {
                id,
                kind: if vulnerable { EdKind::Vulnerable } else { EdKind::SecureBenign },
                price: if vulnerable { t.vulnerable_price } else { t.secure_price },
                shard,
                schedule: vulnerable.then_some(config.schedule),
            }
        })
        .collect()
}

enum Selector {
    Random,
    Drqn(Box<DrqnAgent>),
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

fn record_of(task_id: u64, outcome: &RoundOutcome, utility: f64) -> RoundRecord {
    RoundRecord {
        task_id,
        round: outcome.round,
        selected: join_ids(&outcome.selected),
        verdicts: outcome.verdicts.iter().map(|v| v.label.code()).collect(),
        poisoned: outcome.poisoned.iter().map(|&p| if p { '1' } else { '0' }).collect(),
        accuracy: outcome.accuracy,
        fees_paid: outcome.ledger.fees_paid,
        benign_count: outcome.ledger.benign_count,
        utility,
        epsilon: None,
        agent_loss: None,
        geomed_nonconverged: outcome.geomed_iteration_limit,
        wall_time_ms: None,
    }
}

#[derive(Default)]
struct TaskTally {
    rounds: u64,
    utility: f64,
    benign: usize,
    fees: f64,
    final_accuracy: f64,
    poisoned_uploads: usize,
    poisoned_rejected: usize,
    clean_uploads: usize,
    clean_rejected: usize,
    geomed_nonconverged: usize,
}

impl TaskTally {
    fn add(&mut self, outcome: &RoundOutcome) {
        self.rounds += 1;
        self.utility += outcome.ledger.utility;
        self.benign += outcome.ledger.benign_count;
        self.fees += outcome.ledger.fees_paid;
        self.final_accuracy = outcome.accuracy;
        for (v, &p) in outcome.verdicts.iter().zip(&outcome.poisoned) {
            let rejected = v.label != VerdictLabel::Benign;
            if p {
                self.poisoned_uploads += 1;
                self.poisoned_rejected += usize::from(rejected);
            } else {
                self.clean_uploads += 1;
                self.clean_rejected += usize::from(rejected);
            }
        }
        self.geomed_nonconverged += usize::from(outcome.geomed_iteration_limit);
    }

    fn summary(&self, task_id: u64) -> TaskSummary {
        let n = self.rounds.max(1) as f64;
        TaskSummary {
            task_id,
            rounds: self.rounds,
            final_accuracy: self.final_accuracy,
            mean_utility: self.utility / n,
            mean_benign_count: self.benign as f64 / n,
            mean_fees_paid: self.fees / n,
            poisoned_uploads: self.poisoned_uploads,
            poisoned_rejected: self.poisoned_rejected,
            clean_uploads: self.clean_uploads,
            clean_rejected: self.clean_rejected,
            geomed_nonconverged: self.geomed_nonconverged,
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(true).from_writer(file))
}

fn flush(writer: &mut csv::Writer<fs::File>, path: &Path) -> Result<()> {
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Runs every task of `config` into `out_dir`, using at most `workers`
/// threads for local training and verification (`None` = all cores).
/// Output bytes do not depend on `workers`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, workers: Option<usize>) -> Result<RunReport> {
    config.validate()?;
    par::with_workers(workers, || run_inner(config, out_dir))
}

fn run_inner(config: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = Manifest {
        code_version: CODE_VERSION.to_string(),
        seed: config.run.seed,
        config: config.clone(),
    };
    let manifest_path = out_dir.join("manifest.toml");
    let manifest_text =
        toml::to_string(&manifest).map_err(|e| Error::Config(format!("cannot serialise manifest: {e}")))?;
    fs::write(&manifest_path, manifest_text).map_err(|e| Error::io(&manifest_path, e))?;

    let master = config.run.seed;
    let (train, aux) = load_data(config)?;
    let attack_errs = config.attack.vector.validate(train.class_count());
    if !attack_errs.is_empty() {
        return Err(Error::ConfigViolations(attack_errs));
    }
    let spec = MlpSpec {
        input_dim: train.dim(),
        hidden_layers: config.model.hidden_layers.clone(),
        output_dim: train.class_count(),
        activation: config.model.activation,
    };
    spec.validate()?;
    let t = &config.topology;
    let partition = partition_equal(&train, t.ed_count, seed::derive(master, &[tags::PARTITION]))?;
    let eds = roster(config, partition.shards);
    let init = |task: u64| spec.init(&mut ChaCha8Rng::seed_from_u64(seed::derive(master, &[tags::MODEL_INIT, task])));

    let mut federation = Federation::new(
        spec.clone(),
        Arc::new(train),
        Arc::new(aux),
        eds,
        seed::derive(master, &[tags::ED_SCHEDULE]),
        config.defense.clone(),
        config.attack.clone(),
        config.training,
        t.select_count,
        init(0),
    )?;
    if let AttackVector::ModelReplacement {
        checkpoint: Some(path), ..
    } = &config.attack.vector
    {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let target = read_checkpoint(std::io::BufReader::new(file))?;
        federation.global.params.check_shape(&target, "replacement checkpoint")?;
        federation.replacement_target = Some(target);
    }

    let mut selector = match config.selection.policy {
        SelectionPolicy::Random => Selector::Random,
        SelectionPolicy::Drqn => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master, &[tags::AGENT_INIT]));
            Selector::Drqn(Box::new(DrqnAgent::new(
                t.ed_count,
                t.select_count,
                config.agent.clone(),
                &mut rng,
            )?))
        }
    };
    let mut explore_rng = ChaCha8Rng::seed_from_u64(seed::derive(master, &[tags::EXPLORATION]));
    let mut replay_rng = ChaCha8Rng::seed_from_u64(seed::derive(master, &[tags::AGENT_REPLAY]));
    let mut tracker = PseudoStateTracker::new(t.ed_count, config.agent.sequence_len);

    let rounds_path = out_dir.join("rounds.csv");
    let tasks_path = out_dir.join("tasks.csv");
    let mut rounds_csv = csv_writer(&rounds_path)?;
    let mut tasks_csv = csv_writer(&tasks_path)?;
    if config.run.rounds_per_task == 0 || config.run.task_count == 0 {
        return Err(Error::Config("nothing to run".into()));
    }

    let mut report = RunReport {
        out_dir: out_dir.to_path_buf(),
        tasks: Vec::new(),
        rewards: Vec::new(),
    };
    let mut rounds_seen: u64 = 0;
    let last_round = config.run.rounds_per_task - 1;

    for task in 0..config.run.task_count {
        if task > 0 {
            federation.reset_model(init(task));
        }
        tracker.reset();
        let mut tally = TaskTally::default();
        let result = (|| -> Result<()> {
            for r in 0..config.run.rounds_per_task {
                let started = config.run.record_wall_time.then(Instant::now);
                let state = tracker.state();
                let (action, epsilon) = match &selector {
                    Selector::Random => (select_random(&mut explore_rng, t.ed_count, t.select_count), None),
                    Selector::Drqn(agent) => {
                        let eps = agent.config.epsilon(rounds_seen);
                        (select_drqn(agent, &state, eps, &mut explore_rng)?, Some(eps))
                    }
                };
                let subset = action_decode(action, t.ed_count, t.select_count)?;
                let round_seed = seed::derive(master, &[tags::ROUND, task, r]);
                let outcome = federation.run_round(&subset, round_seed)?;
                let fees: Vec<f64> = subset.iter().map(|&id| federation.eds[id].price).collect();
                let reward = compute_reward(&outcome.verdicts, &fees);
                debug_assert!((reward - outcome.ledger.utility).abs() < 1e-9);
                tracker.record(&subset, Observation::from_verdicts(t.ed_count, &outcome.verdicts));

                let mut loss = None;
                if let Selector::Drqn(agent) = &mut selector {
                    agent.observe(ReplayItem {
                        pseudo_state: state,
                        action: ActionIndex(action.0),
                        reward,
                        next_pseudo_state: tracker.state(),
                        terminal: r == last_round,
                    });
                    for _ in 0..agent.config.learn_per_round {
                        if let Some(l) = agent.learn(&mut replay_rng)? {
                            loss = Some(l);
                        }
                    }
                }
                rounds_seen += 1;

                let mut record = record_of(task, &outcome, reward);
                record.epsilon = epsilon;
                record.agent_loss = loss;
                record.wall_time_ms = started.map(|s| s.elapsed().as_secs_f64() * 1e3);
                rounds_csv.serialize(&record)?;
                tally.add(&outcome);
                report.rewards.push(reward);
            }
            Ok(())
        })();
        if let Err(e) = result {
            flush(&mut rounds_csv, &rounds_path)?;
            return Err(e);
        }
        let summary = tally.summary(task);
        tasks_csv.serialize(&summary)?;
        flush(&mut rounds_csv, &rounds_path)?;
        flush(&mut tasks_csv, &tasks_path)?;
        report.tasks.push(summary);
    }

    if let (Selector::Drqn(agent), true) = (&selector, config.run.save_agent) {
        let dir = out_dir.join("agent");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        agent.save(&dir, rounds_seen)?;
    }
    Ok(report)
}
