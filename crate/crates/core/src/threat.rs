//! Attack models: hidden per-device schedules, data poisoning by label
//! flipping, and model poisoning transforms of finished updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// When a vulnerable device is under attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    /// Independent coin per round.
    Bernoulli { p: f64 },
    /// Attacked on rounds `t` with `(t + phase) % period < duty`.
    Periodic { period: u64, phase: u64, duty: u64 },
    /// Two-state chain over {safe, attacked}.
    Markov { p_stay_safe: f64, p_stay_attacked: f64 },
}

impl ScheduleKind {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let prob = |name: &str, p: f64, errs: &mut Vec<String>| {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("schedule {name} = {p} outside [0, 1]"));
            }
        };
        match *self {
            ScheduleKind::Bernoulli { p } => prob("p", p, &mut errs),
            ScheduleKind::Periodic { period, duty, .. } => {
                if period == 0 {
                    errs.push("schedule period must be >= 1".into());
                }
                if duty > period {
                    errs.push(format!("schedule duty {duty} exceeds period {period}"));
                }
            }
            ScheduleKind::Markov {
                p_stay_safe,
                p_stay_attacked,
            } => {
                prob("p_stay_safe", p_stay_safe, &mut errs);
                prob("p_stay_attacked", p_stay_attacked, &mut errs);
            }
        }
        errs
    }

    /// Long-run fraction of attacked rounds.
    pub fn stationary_attack_rate(&self) -> f64 {
        match *self {
            ScheduleKind::Bernoulli { p } => p,
            ScheduleKind::Periodic { period, duty, .. } => duty as f64 / period as f64,
            ScheduleKind::Markov {
                p_stay_safe,
                p_stay_attacked,
            } => {
                let leave_safe = 1.0 - p_stay_safe;
                let leave_attacked = 1.0 - p_stay_attacked;
                if leave_safe + leave_attacked == 0.0 {
                    0.0
                } else {
                    leave_safe / (leave_safe + leave_attacked)
                }
            }
        }
    }
}

/// Live schedule state for one device. Stepped once per round whether or
/// not the device is selected.
#[derive(Debug, Clone)]
pub struct Schedule {
    kind: ScheduleKind,
    rng: ChaCha8Rng,
    round: u64,
    attacked: bool,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attacked = match kind {
            ScheduleKind::Markov { .. } => rng.random_bool(kind.stationary_attack_rate().clamp(0.0, 1.0)),
            _ => false,
        };
        Schedule {
            kind,
            rng,
            round: 0,
            attacked,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Advances one round and reports whether this round's upload is poisoned.
    pub fn step(&mut self) -> bool {
        let t = self.round;
        self.round += 1;
        self.attacked = match self.kind {
            ScheduleKind::Bernoulli { p } => self.rng.random_bool(p),
            ScheduleKind::Periodic { period, phase, duty } => (t + phase) % period < duty,
            ScheduleKind::Markov {
                p_stay_safe,
                p_stay_attacked,
            } => {
                if t == 0 {
                    // first round reports the stationary draw made at construction
                    self.attacked
                } else if self.attacked {
                    self.rng.random_bool(p_stay_attacked)
                } else {
                    !self.rng.random_bool(p_stay_safe)
                }
            }
        };
        self.attacked
    }
}

/// How a poisoned upload is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackVector {
    LabelFlipRandom,
    /// `(source, target)` class pairs; other classes keep their labels.
    LabelFlipTargeted { map: Vec<(usize, usize)> },
    GaussianNoise { sigma: f64 },
    SignFlip,
    NegativeIncrement,
    /// Pushes the global model toward a compromised model. Without a
    /// checkpoint the target is the all-zero model; without a boost the
    /// number of selected devices is used.
    ModelReplacement {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        boost: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint: Option<std::path::PathBuf>,
    },
}

impl AttackVector {
    pub fn poisons_data(&self) -> bool {
        matches!(self, AttackVector::LabelFlipRandom | AttackVector::LabelFlipTargeted { .. })
    }

    pub fn validate(&self, class_count: usize) -> Vec<String> {
        let mut errs = Vec::new();
        match self {
            AttackVector::LabelFlipRandom if class_count < 2 => {
                errs.push("random label flipping needs at least 2 classes".into())
            }
            AttackVector::LabelFlipTargeted { map } => {
                for &(s, t) in map {
                    if s == t {
                        errs.push(format!("targeted flip maps class {s} onto itself"));
                    }
                    if s >= class_count || t >= class_count {
                        errs.push(format!("targeted flip {s}->{t} outside {class_count} classes"));
                    }
                }
                let mut sources: Vec<usize> = map.iter().map(|p| p.0).collect();
                sources.sort_unstable();
                if sources.windows(2).any(|w| w[0] == w[1]) {
                    errs.push("targeted flip lists a source class twice".into());
                }
            }
            AttackVector::GaussianNoise { sigma } if !(*sigma >= 0.0 && sigma.is_finite()) => {
                errs.push(format!("gaussian sigma {sigma} must be finite and >= 0"))
            }
            AttackVector::ModelReplacement { boost: Some(b), .. } if !(b.is_finite() && *b > 0.0) => {
                errs.push(format!("replacement boost {b} must be positive"))
            }
            _ => {}
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub vector: AttackVector,
    pub scale_factor: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            vector: AttackVector::LabelFlipRandom,
            scale_factor: 20.0,
        }
    }
}

/// Labels a poisoned device trains on. The input slice is left untouched.
pub fn poison_data<R: Rng + ?Sized>(
    labels: &[usize],
    class_count: usize,
    vector: &AttackVector,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match vector {
        AttackVector::LabelFlipRandom => {
            if class_count < 2 {
                return Err(Error::Config("random label flipping needs at least 2 classes".into()));
            }
            Ok(labels
                .iter()
                .map(|&y| (y + 1 + rng.random_range(0..class_count - 1)) % class_count)
                .collect())
        }
        AttackVector::LabelFlipTargeted { map } => {
            if let Some(&(s, _)) = map.iter().find(|(s, t)| s == t) {
                return Err(Error::Config(format!("targeted flip maps class {s} onto itself")));
            }
            Ok(labels
                .iter()
                .map(|&y| map.iter().find(|(s, _)| *s == y).map_or(y, |&(_, t)| t))
                .collect())
        }
        other => Err(Error::Config(format!("{other:?} does not poison training data"))),
    }
}

/// Server-side facts a model-poisoning attacker is assumed to know.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub global_params: &'a ParamVector,
    pub last_increment: Option<&'a ParamVector>,
    pub replacement_target: Option<&'a ParamVector>,
    pub selected_count: usize,
}

/// Turns a finished benign (or data-poisoned) delta into the uploaded one.
pub fn poison_update<R: Rng + ?Sized>(
    delta: &ParamVector,
    ctx: &AttackContext<'_>,
    attack: &AttackConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    delta.check_shape(ctx.global_params, "poison_update")?;
    let scale = attack.scale_factor;
    let out = match &attack.vector {
        AttackVector::LabelFlipRandom | AttackVector::LabelFlipTargeted { .. } => delta.scaled(scale),
        AttackVector::SignFlip => delta.scaled(-scale),
        AttackVector::GaussianNoise { sigma } => {
            let normal = Normal::new(0.0, *sigma).map_err(|e| Error::Config(format!("gaussian sigma: {e}")))?;
            let mut noise = delta.zeros_like();
            noise.values_mut().iter_mut().for_each(|v| *v = normal.sample(rng) * scale);
            noise
        }
        AttackVector::NegativeIncrement => match ctx.last_increment {
            Some(inc) => {
                inc.check_shape(delta, "poison_update increment")?;
                inc.scaled(-scale)
            }
            None => delta.scaled(-scale),
        },
        AttackVector::ModelReplacement { boost, .. } => {
            let boost = boost.unwrap_or(ctx.selected_count as f64);
            let zeros;
            let target = match ctx.replacement_target {
                Some(t) => t,
                None => {
                    zeros = delta.zeros_like();
                    &zeros
                }
            };
            target.sub(ctx.global_params)?.scaled(boost)
        }
    };
    Ok(out)
}
