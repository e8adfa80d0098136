//! The federated round protocol: devices train locally from the global
//! model and upload increments, the server pays fees, verifies or robustly
//! aggregates, and advances the global model.

use std::borrow::Cow;
use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::defense::{self, DefenseConfig, Strategy, Verdict, VerdictLabel};
use crate::error::{Error, Result};
use crate::nn::{adam_step, argmax, mlp_backward, mlp_forward, AdamConfig, AdamState, MlpSpec, ParamVector};
use crate::par;
use crate::seed;
use crate::threat::{poison_data, poison_update, AttackConfig, AttackContext, Schedule, ScheduleKind};

/// Number of recent global increments kept for the lazy-device check.
pub const INCREMENT_HISTORY_DEPTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdKind {
    SecureBenign,
    Vulnerable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdProfile {
    pub id: usize,
    pub kind: EdKind,
    pub price: f64,
    pub shard: Vec<usize>,
    /// Present exactly for vulnerable devices.
    pub schedule: Option<ScheduleKind>,
}

impl EdProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.price > 0.0) {
            return Err(Error::Config(format!("ED {} price {} must be positive", self.id, self.price)));
        }
        match (self.kind, &self.schedule) {
            (EdKind::SecureBenign, Some(_)) => Err(Error::Config(format!(
                "ED {} is secure-benign but has an attack schedule",
                self.id
            ))),
            (EdKind::Vulnerable, None) => Err(Error::Config(format!("ED {} is vulnerable without a schedule", self.id))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub ed_id: usize,
    pub round: u64,
    pub delta: ParamVector,
    pub fee: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub params: ParamVector,
    pub round: u64,
    pub last_accuracy: f64,
    pub increment_history: VecDeque<ParamVector>,
}

impl GlobalModel {
    pub fn new(params: ParamVector) -> Self {
        GlobalModel {
            params,
            round: 0,
            last_accuracy: 0.0,
            increment_history: VecDeque::with_capacity(INCREMENT_HISTORY_DEPTH),
        }
    }

    /// Adds `increment` to the parameters and records it; `None` only advances the round.
    pub fn advance(&self, increment: Option<ParamVector>) -> Result<GlobalModel> {
        let mut next = self.clone();
        next.round += 1;
        if let Some(inc) = increment {
            next.params.add_scaled(&inc, 1.0)?;
            if next.increment_history.len() == INCREMENT_HISTORY_DEPTH {
                next.increment_history.pop_front();
            }
            next.increment_history.push_back(inc);
        }
        Ok(next)
    }

    pub fn last_increment(&self) -> Option<&ParamVector> {
        self.increment_history.back()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: u64,
    pub fees_paid: f64,
    pub benign_count: usize,
    pub utility: f64,
}

impl LedgerEntry {
    pub fn new(round: u64, fees_paid: f64, benign_count: usize) -> Self {
        LedgerEntry {
            round,
            fees_paid,
            benign_count,
            utility: benign_count as f64 - fees_paid,
        }
    }
}

/// Local optimisation settings; Adam state is fresh every round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalTraining {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LocalTraining {
    fn default() -> Self {
        LocalTraining {
            batch_size: 100,
            epochs: 1,
            learning_rate: 1e-3,
        }
    }
}

/// A device's training data: rows of `dataset` at `indices`, with `labels`
/// aligned to `indices` (possibly poisoned copies).
#[derive(Debug, Clone)]
pub struct ShardView<'a> {
    pub dataset: &'a LabeledDataset,
    pub indices: &'a [usize],
    pub labels: Cow<'a, [usize]>,
}

impl<'a> ShardView<'a> {
    pub fn new(dataset: &'a LabeledDataset, indices: &'a [usize]) -> Self {
        ShardView {
            dataset,
            indices,
            labels: Cow::Owned(indices.iter().map(|&i| dataset.labels()[i]).collect()),
        }
    }
}

/// Trains a copy of the global model on the shard and returns the increment.
pub fn local_train(
    global_params: &ParamVector,
    spec: &MlpSpec,
    ed: &EdProfile,
    shard: &ShardView<'_>,
    hyper: &LocalTraining,
    round: u64,
    seed: u64,
) -> Result<ModelUpdate> {
    if shard.indices.is_empty() {
        return Err(Error::Config(format!("ED {} has an empty shard", ed.id)));
    }
    if hyper.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut params = global_params.clone();
    let mut adam = AdamState::new(&params, AdamConfig::with_learning_rate(hyper.learning_rate));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..shard.indices.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let rows: Vec<usize> = chunk.iter().map(|&p| shard.indices[p]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&p| shard.labels[p]).collect();
            let batch = shard.dataset.features().select(Axis(0), &rows);
            let (_, grad) = mlp_backward(&params, spec, batch.view(), &labels)?;
            adam_step(&mut params, &grad, &mut adam)?;
        }
    }
    Ok(ModelUpdate {
        ed_id: ed.id,
        round,
        delta: params.sub(global_params)?,
        fee: ed.price,
    })
}

/// Componentwise mean of the deltas, summed in ascending `ed_id` order so
/// the result does not depend on arrival order.
pub fn mean_delta(updates: &[&ModelUpdate]) -> Result<Option<ParamVector>> {
    let Some(first) = updates.first() else {
        return Ok(None);
    };
    let mut ordered: Vec<&ModelUpdate> = updates.to_vec();
    ordered.sort_by_key(|u| u.ed_id);
    let mut sum = first.delta.zeros_like();
    for u in ordered {
        sum.add_scaled(&u.delta, 1.0)?;
    }
    sum.scale(1.0 / updates.len() as f64);
    Ok(Some(sum))
}

/// FedAvg: adds the mean increment to the global model. An empty update
/// list leaves the parameters alone but still advances the round.
pub fn aggregate_mean(global: &GlobalModel, updates: &[ModelUpdate]) -> Result<GlobalModel> {
    let refs: Vec<&ModelUpdate> = updates.iter().collect();
    global.advance(mean_delta(&refs)?)
}

/// Top-1 accuracy, argmax ties to the lowest class.
pub fn evaluate(params: &ParamVector, spec: &MlpSpec, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty dataset".into()));
    }
    const CHUNK: usize = 256;
    let mut correct = 0usize;
    let features = dataset.features();
    for (c, block) in features.axis_chunks_iter(Axis(0), CHUNK).enumerate() {
        let logits = mlp_forward(params, spec, block)?;
        let labels = &dataset.labels()[c * CHUNK..];
        correct += logits
            .rows()
            .into_iter()
            .zip(labels)
            .filter(|(row, &y)| argmax(row.view()) == y)
            .count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// One selected device's upload together with simulator-only ground truth.
#[derive(Debug, Clone)]
pub struct Upload {
    pub update: ModelUpdate,
    pub poisoned: bool,
}

/// Everything that happened in one round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub round: u64,
    pub selected: Vec<usize>,
    /// Ground truth per selected device: was the upload poisoned?
    pub poisoned: Vec<bool>,
    pub verdicts: Vec<Verdict>,
    pub accuracy: f64,
    pub ledger: LedgerEntry,
    pub geomed_iteration_limit: bool,
}

/// Server-side state shared across rounds of one run: device roster,
/// data, hidden schedules and the current global model.
pub struct Federation {
    pub spec: MlpSpec,
    pub train: Arc<LabeledDataset>,
    pub auxiliary: Arc<LabeledDataset>,
    pub eds: Vec<EdProfile>,
    pub schedules: Vec<Option<Schedule>>,
    pub global: GlobalModel,
    pub defense: DefenseConfig,
    pub attack: AttackConfig,
    pub training: LocalTraining,
    pub select_count: usize,
    pub replacement_target: Option<ParamVector>,
    baseline_fresh: bool,
}

impl Federation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spec: MlpSpec,
        train: Arc<LabeledDataset>,
        auxiliary: Arc<LabeledDataset>,
        eds: Vec<EdProfile>,
        schedule_seed: u64,
        defense: DefenseConfig,
        attack: AttackConfig,
        training: LocalTraining,
        select_count: usize,
        initial_params: ParamVector,
    ) -> Result<Self> {
        for ed in &eds {
            ed.validate()?;
        }
        if select_count == 0 || select_count > eds.len() {
            return Err(Error::Config(format!(
                "select_count {select_count} must be in 1..={}",
                eds.len()
            )));
        }
        let schedules = eds
            .iter()
            .map(|ed| ed.schedule.map(|k| Schedule::new(k, seed::derive(schedule_seed, &[ed.id as u64]))))
            .collect();
        Ok(Federation {
            spec,
            train,
            auxiliary,
            eds,
            schedules,
            global: GlobalModel::new(initial_params),
            defense,
            attack,
            training,
            select_count,
            replacement_target: None,
            baseline_fresh: false,
        })
    }

    /// Starts a new learning task from `params`; schedules keep running.
    pub fn reset_model(&mut self, params: ParamVector) {
        self.global = GlobalModel::new(params);
        self.baseline_fresh = false;
    }

    fn validate_selection(&self, selection: &[usize]) -> Result<()> {
        if selection.len() != self.select_count {
            return Err(Error::Config(format!(
                "selected {} devices, configured per-round count is {}",
                selection.len(),
                self.select_count
            )));
        }
        let mut seen = vec![false; self.eds.len()];
        for &id in selection {
            match seen.get_mut(id) {
                None => return Err(Error::Config(format!("unknown ED id {id}"))),
                Some(true) => return Err(Error::Config(format!("ED id {id} selected twice"))),
                Some(s) => *s = true,
            }
        }
        Ok(())
    }

    /// Local training of every selected device, with attacks applied.
    fn collect_uploads(&self, selection: &[usize], attacked: &[bool], round_seed: u64) -> Result<Vec<Upload>> {
        let round = self.global.round;
        let global = &self.global;
        let results = par::map(selection, |&id| -> Result<Upload> {
            let ed = &self.eds[id];
            let poisoned = attacked[id];
            let mut attack_rng = ChaCha8Rng::seed_from_u64(seed::derive(round_seed, &[seed::tags::ATTACK, id as u64]));
            let mut shard = ShardView::new(&self.train, &ed.shard);
            if poisoned && self.attack.vector.poisons_data() {
                shard.labels = Cow::Owned(poison_data(
                    &shard.labels,
                    self.train.class_count(),
                    &self.attack.vector,
                    &mut attack_rng,
                )?);
            }
            let train_seed = seed::derive(round_seed, &[seed::tags::ED_TRAINING, id as u64]);
            let mut update = local_train(&global.params, &self.spec, ed, &shard, &self.training, round, train_seed)?;
            if poisoned {
                let ctx = AttackContext {
                    global_params: &global.params,
                    last_increment: global.last_increment(),
                    replacement_target: self.replacement_target.as_ref(),
                    selected_count: selection.len(),
                };
                update.delta = poison_update(&update.delta, &ctx, &self.attack, &mut attack_rng)?;
            }
            Ok(Upload { update, poisoned })
        });
        results.into_iter().collect()
    }

    /// Pays, trains, defends and aggregates one round.
    pub fn run_round(&mut self, selection: &[usize], round_seed: u64) -> Result<RoundOutcome> {
        self.validate_selection(selection)?;

        // hidden patterns advance for every device, selected or not
        let attacked: Vec<bool> = self
            .schedules
            .iter_mut()
            .map(|s| s.as_mut().is_some_and(Schedule::step))
            .collect();

        let fees_paid: f64 = selection.iter().map(|&id| self.eds[id].price).sum();
        let uploads = self.collect_uploads(selection, &attacked, round_seed)?;
        let poisoned: Vec<bool> = uploads.iter().map(|u| u.poisoned).collect();
        let updates: Vec<ModelUpdate> = uploads.into_iter().map(|u| u.update).collect();

        let mut geomed_iteration_limit = false;
        let (next, verdicts) = match self.defense.strategy {
            Strategy::Vba => {
                let full = Arc::clone(&self.auxiliary);
                let aux = verification_set(&full, self.defense.aux_subsample, round_seed);
                if !self.baseline_fresh || self.defense.aux_subsample.is_some() {
                    self.global.last_accuracy = evaluate(&self.global.params, &self.spec, &aux)?;
                }
                let verdicts = defense::vba_verify(&self.global, &updates, &aux, &self.spec, &self.defense)?;
                (defense::vba_aggregate(&self.global, &updates, &verdicts)?, verdicts)
            }
            strategy => {
                let delta = match strategy {
                    Strategy::FedAvg => mean_delta(&updates.iter().collect::<Vec<_>>())?,
                    Strategy::Comed => Some(defense::agg_comed(&updates)?),
                    Strategy::Geomed => {
                        let r = defense::agg_geomed(&updates, self.defense.geomed_tol, self.defense.geomed_max_iter)?;
                        geomed_iteration_limit = !r.converged;
                        Some(r.median)
                    }
                    Strategy::Cotmed => {
                        let trim = self.defense.trim_count.unwrap_or_else(|| defense::default_trim(updates.len()));
                        Some(defense::agg_cotmed(&updates, trim)?)
                    }
                    Strategy::Krum => Some(defense::agg_krum(&updates, self.defense.krum_f)?),
                    Strategy::NormBound => Some(defense::agg_normbound(&updates, self.defense.norm_cap)?),
                    Strategy::Rsa => Some(defense::agg_rsa(&updates, self.defense.rsa_step)?),
                    Strategy::Vba => unreachable!("handled above"),
                };
                // unverified strategies: the ledger counts ground-truth clean uploads
                let verdicts = updates
                    .iter()
                    .zip(&poisoned)
                    .map(|(u, &p)| Verdict::unverified(u.ed_id, p))
                    .collect();
                (self.global.advance(delta)?, verdicts)
            }
        };

        let accuracy = evaluate(&next.params, &self.spec, &self.auxiliary)?;
        let round = self.global.round;
        self.global = next;
        self.global.last_accuracy = accuracy;
        self.baseline_fresh = true;

        let benign_count = verdicts.iter().filter(|v| v.label == VerdictLabel::Benign).count();
        Ok(RoundOutcome {
            round,
            selected: selection.to_vec(),
            poisoned,
            verdicts,
            accuracy,
            ledger: LedgerEntry::new(round, fees_paid, benign_count),
            geomed_iteration_limit,
        })
    }

}

fn verification_set(auxiliary: &LabeledDataset, subsample: Option<usize>, round_seed: u64) -> Cow<'_, LabeledDataset> {
    match subsample {
        Some(k) if k < auxiliary.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(round_seed, &[seed::tags::AUX_SUBSAMPLE]));
            let idx = rand::seq::index::sample(&mut rng, auxiliary.len(), k).into_vec();
            Cow::Owned(auxiliary.select(&idx))
        }
        _ => Cow::Borrowed(auxiliary),
    }
}
