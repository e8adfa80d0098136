//! Experiment configuration: a TOML file with one table per concern.
//!
//! ```toml
//! [topology]
//! ed_count = 10
//! select_count = 5
//! vulnerable_count = 9
//! secure_price = 0.9
//! vulnerable_price = 0.3
//!
//! [data]
//! source = "synthetic"
//! class_count = 4
//! dim = 8
//! train_samples = 2000
//! aux_samples = 500
//!
//! [model]
//! hidden_layers = [32]
//!
//! [run]
//! rounds_per_task = 300
//! seed = 7
//!
//! [schedule]
//! kind = "markov"
//! p_stay_safe = 0.9
//! p_stay_attacked = 0.8
//! ```
//!
//! Omitted tables take their defaults. Unknown keys are rejected. Relative
//! data and checkpoint paths are resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::defense::DefenseConfig;
use crate::error::{Error, Result};
use crate::federation::LocalTraining;
use crate::nn::Activation;
use crate::selection::{action_count, AgentConfig, SelectionPolicy, MAX_ACTION_COUNT};
use crate::threat::{AttackConfig, AttackVector, ScheduleKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Topology {
    pub ed_count: usize,
    pub select_count: usize,
    /// The last `vulnerable_count` device ids are vulnerable.
    pub vulnerable_count: usize,
    pub secure_price: f64,
    pub vulnerable_price: f64,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            ed_count: 10,
            select_count: 5,
            vulnerable_count: 9,
            secure_price: 0.9,
            vulnerable_price: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian blobs; both sample counts must be multiples of `class_count`.
    Synthetic {
        class_count: usize,
        dim: usize,
        train_samples: usize,
        aux_samples: usize,
    },
    /// IDX files; the test split doubles as the auxiliary set.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            class_count: 4,
            dim: 8,
            train_samples: 2000,
            aux_samples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_layers: vec![32],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rounds_per_task: u64,
    pub task_count: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Fill the `wall_time_ms` column. Off by default because timings make
    /// otherwise identical runs differ byte-for-byte.
    pub record_wall_time: bool,
    /// Write the trained agent to `<output_dir>/agent/` at the end.
    pub save_agent: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rounds_per_task: 300,
            task_count: 1,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            record_wall_time: false,
            save_agent: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub policy: SelectionPolicy,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            policy: SelectionPolicy::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: Topology,
    pub data: DataSource,
    pub model: ModelConfig,
    pub training: LocalTraining,
    pub run: RunConfig,
    pub defense: DefenseConfig,
    pub attack: AttackConfig,
    pub schedule: ScheduleKind,
    pub selection: SelectionConfig,
    pub agent: AgentConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            topology: Topology::default(),
            data: DataSource::default(),
            model: ModelConfig::default(),
            training: LocalTraining::default(),
            run: RunConfig::default(),
            defense: DefenseConfig::default(),
            attack: AttackConfig::default(),
            schedule: ScheduleKind::Markov {
                p_stay_safe: 0.9,
                p_stay_attacked: 0.8,
            },
            selection: SelectionConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

/// The desk-scale reference scenario, as shipped in `configs/canonical.toml`.
pub const CANONICAL_TOML: &str = include_str!("../../../../configs/canonical.toml");

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parses without semantic validation; paths are left as written.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    pub fn canonical() -> Self {
        Self::from_toml_str(CANONICAL_TOML).expect("bundled canonical config parses")
    }

    /// Rewrites relative data and checkpoint paths as `base/path`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } = &mut self.data
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                fix(p);
            }
        }
        if let AttackVector::ModelReplacement {
            checkpoint: Some(p), ..
        } = &mut self.attack.vector
        {
            fix(p);
        }
    }

    /// Every semantic violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let t = &self.topology;
        if t.ed_count == 0 {
            errs.push("topology.ed_count must be >= 1".into());
        }
        if t.select_count == 0 {
            errs.push("topology.select_count must be >= 1".into());
        }
        if t.select_count > t.ed_count {
            errs.push(format!(
                "topology.select_count K = {} exceeds ed_count M = {}",
                t.select_count, t.ed_count
            ));
        }
        if t.vulnerable_count > t.ed_count {
            errs.push(format!(
                "topology.vulnerable_count = {} exceeds ed_count M = {}",
                t.vulnerable_count, t.ed_count
            ));
        }
        for (name, p) in [("secure_price", t.secure_price), ("vulnerable_price", t.vulnerable_price)] {
            if !(p > 0.0 && p.is_finite()) {
                errs.push(format!("topology.{name} = {p} must be positive"));
            }
        }

        let class_count = match &self.data {
            DataSource::Synthetic {
                class_count,
                dim,
                train_samples,
                aux_samples,
            } => {
                if *class_count < 2 {
                    errs.push(format!("data.class_count = {class_count} must be >= 2"));
                }
                if *dim == 0 {
                    errs.push("data.dim must be >= 1".into());
                }
                for (name, n) in [("train_samples", *train_samples), ("aux_samples", *aux_samples)] {
                    if n == 0 || (*class_count > 0 && n % class_count != 0) {
                        errs.push(format!(
                            "data.{name} = {n} must be a positive multiple of class_count {class_count}"
                        ));
                    }
                }
                if *train_samples < t.ed_count {
                    errs.push(format!(
                        "data.train_samples = {train_samples} leaves some of the {} devices without data",
                        t.ed_count
                    ));
                }
                Some(*class_count)
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    if !p.is_file() {
                        errs.push(format!("data file {} does not exist", p.display()));
                    }
                }
                None
            }
        };

        if self.model.hidden_layers.contains(&0) {
            errs.push(format!("model.hidden_layers {:?} contains a zero width", self.model.hidden_layers));
        }
        let tr = &self.training;
        if tr.batch_size == 0 {
            errs.push("training.batch_size must be >= 1".into());
        }
        if tr.epochs == 0 {
            errs.push("training.epochs must be >= 1".into());
        }
        if !(tr.learning_rate > 0.0 && tr.learning_rate.is_finite()) {
            errs.push(format!("training.learning_rate = {} must be positive", tr.learning_rate));
        }
        if self.run.rounds_per_task == 0 {
            errs.push("run.rounds_per_task must be >= 1".into());
        }
        if self.run.task_count == 0 {
            errs.push("run.task_count must be >= 1".into());
        }

        errs.extend(self.defense.validate(t.select_count).into_iter().map(|e| format!("defense: {e}")));
        if !(self.attack.scale_factor > 0.0 && self.attack.scale_factor.is_finite()) {
            errs.push(format!("attack.scale_factor = {} must be positive", self.attack.scale_factor));
        }
        // IDX class counts are only known after loading; the runner re-checks.
        let attack_classes = class_count.unwrap_or(usize::MAX);
        errs.extend(self.attack.vector.validate(attack_classes).into_iter().map(|e| format!("attack: {e}")));
        if let AttackVector::ModelReplacement {
            checkpoint: Some(p), ..
        } = &self.attack.vector
        {
            if !p.is_file() {
                errs.push(format!("attack checkpoint {} does not exist", p.display()));
            }
        }
        errs.extend(self.schedule.validate().into_iter().map(|e| format!("schedule: {e}")));

        if self.selection.policy == SelectionPolicy::Drqn {
            let actions = action_count(t.ed_count, t.select_count);
            if actions > MAX_ACTION_COUNT || actions == 0 {
                errs.push(format!(
                    "C({}, {}) = {actions} actions is outside the supported range 1..={MAX_ACTION_COUNT}",
                    t.ed_count, t.select_count
                ));
            }
            errs.extend(self.agent.validate());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigViolations(errs))
        }
    }
}

/// Reads, resolves and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = ExperimentConfig::from_toml_str(&text)?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_values() {
        let c = ExperimentConfig::canonical();
        assert_eq!((c.topology.ed_count, c.topology.select_count), (10, 5));
        assert_eq!((c.topology.secure_price, c.topology.vulnerable_price), (0.9, 0.3));
        assert_eq!(c.defense.vba_threshold, 0.005);
        assert_eq!(c.attack.scale_factor, 20.0);
        assert!(c.violations().is_empty(), "{:?}", c.violations());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "[topology]\ned_count = 10\nselect_count = \"five\"\n";
        match ExperimentConfig::from_toml_str(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let unknown = "[run]\nrounds_per_task = 3\n\n[defense]\nthreshold = 0.1\n";
        match ExperimentConfig::from_toml_str(unknown) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("threshold"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn k_above_m_names_both_values() {
        let mut c = ExperimentConfig::default();
        c.topology.select_count = 12;
        let errs = c.violations();
        assert!(errs.iter().any(|e| e.contains("K = 12") && e.contains("M = 10")), "{errs:?}");
    }

    #[test]
    fn violations_are_exhaustive() {
        let mut c = ExperimentConfig::default();
        c.topology.select_count = 11;
        c.training.learning_rate = -1.0;
        c.run.task_count = 0;
        c.attack.scale_factor = 0.0;
        assert!(c.violations().len() >= 4, "{:?}", c.violations());
    }
}
