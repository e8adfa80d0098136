//! Server-side defenses: robust aggregation baselines and the
//! verify-before-aggregate procedure.

mod robust;
mod vba;

pub use robust::{
    agg_comed, agg_cotmed, agg_geomed, agg_krum, agg_normbound, agg_rsa, default_trim, GeomedResult,
};
pub use vba::{cosine_similarity, vba_aggregate, vba_lazy_check, vba_verify};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FedAvg,
    Comed,
    Geomed,
    Cotmed,
    Krum,
    NormBound,
    Rsa,
    Vba,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fed_avg",
            Strategy::Comed => "comed",
            Strategy::Geomed => "geomed",
            Strategy::Cotmed => "cotmed",
            Strategy::Krum => "krum",
            Strategy::NormBound => "norm_bound",
            Strategy::Rsa => "rsa",
            Strategy::Vba => "vba",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormCapRule {
    /// Cap at the median norm of the round's updates.
    MedianOfNorms,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    pub strategy: Strategy,
    pub vba_threshold: f64,
    pub lazy_check: bool,
    pub lazy_cosine_threshold: f64,
    /// Evaluate VBA on `k` random auxiliary samples per round instead of the full set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_subsample: Option<usize>,
    /// Defaults to `ceil(m / 4)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trim_count: Option<usize>,
    pub krum_f: usize,
    pub norm_cap: NormCapRule,
    pub rsa_step: f64,
    pub geomed_tol: f64,
    pub geomed_max_iter: usize,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        DefenseConfig {
            strategy: Strategy::Vba,
            vba_threshold: 0.005,
            lazy_check: true,
            lazy_cosine_threshold: 0.99,
            aux_subsample: None,
            trim_count: None,
            krum_f: 1,
            norm_cap: NormCapRule::MedianOfNorms,
            rsa_step: 0.01,
            geomed_tol: 1e-8,
            geomed_max_iter: 200,
        }
    }
}

impl DefenseConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        DefenseConfig {
            strategy,
            ..Default::default()
        }
    }

    /// All violations for rounds with `update_count` uploads.
    pub fn validate(&self, update_count: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.vba_threshold > 0.0) {
            errs.push(format!("vba_threshold {} must be > 0", self.vba_threshold));
        }
        if !(-1.0..=1.0).contains(&self.lazy_cosine_threshold) {
            errs.push(format!("lazy_cosine_threshold {} outside [-1, 1]", self.lazy_cosine_threshold));
        }
        if self.aux_subsample == Some(0) {
            errs.push("aux_subsample must be positive".into());
        }
        match self.strategy {
            Strategy::Cotmed => {
                let trim = self.trim_count.unwrap_or_else(|| default_trim(update_count));
                if 2 * trim >= update_count {
                    errs.push(format!("cotmed needs 2 * trim_count ({trim}) < updates per round ({update_count})"));
                }
            }
            Strategy::Krum if update_count < self.krum_f + 3 => {
                errs.push(format!(
                    "krum needs updates per round ({update_count}) >= krum_f + 3 ({})",
                    self.krum_f + 3
                ));
            }
            Strategy::NormBound => {
                if let NormCapRule::Fixed(cap) = self.norm_cap {
                    if !(cap > 0.0) {
                        errs.push(format!("norm cap {cap} must be > 0"));
                    }
                }
            }
            Strategy::Rsa if !(self.rsa_step > 0.0) => {
                errs.push(format!("rsa_step {} must be > 0", self.rsa_step));
            }
            Strategy::Geomed => {
                if !(self.geomed_tol > 0.0) {
                    errs.push("geomed_tol must be > 0".into());
                }
                if self.geomed_max_iter == 0 {
                    errs.push("geomed_max_iter must be >= 1".into());
                }
            }
            _ => {}
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictLabel {
    Benign,
    Poisoned,
    Lazy,
}

impl VerdictLabel {
    pub fn code(self) -> char {
        match self {
            VerdictLabel::Benign => 'B',
            VerdictLabel::Poisoned => 'P',
            VerdictLabel::Lazy => 'L',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub ed_id: usize,
    pub label: VerdictLabel,
    /// NaN when no verification ran.
    pub temp_accuracy: f64,
    pub accuracy_drop: f64,
}

impl Verdict {
    /// Label taken from simulator ground truth, for strategies that do not verify.
    pub fn unverified(ed_id: usize, poisoned: bool) -> Self {
        Verdict {
            ed_id,
            label: if poisoned { VerdictLabel::Poisoned } else { VerdictLabel::Benign },
            temp_accuracy: f64::NAN,
            accuracy_drop: f64::NAN,
        }
    }
}
