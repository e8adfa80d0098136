//! Partial observations and the sliding pseudo-state window fed to the
//! recurrent Q-network.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::defense::{Verdict, VerdictLabel};

/// Per-device status after a round: `+1` benign, `-1` poisoned or lazy,
/// `0` not selected.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn empty(ed_count: usize) -> Self {
        Observation(vec![0.0; ed_count])
    }

    pub fn from_verdicts(ed_count: usize, verdicts: &[Verdict]) -> Self {
        let mut obs = vec![0.0; ed_count];
        for v in verdicts {
            obs[v.ed_id] = if v.label == VerdictLabel::Benign { 1.0 } else { -1.0 };
        }
        Observation(obs)
    }
}

fn membership(ed_count: usize, subset: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; ed_count];
    for &id in subset {
        m[id] = 1.0;
    }
    m
}

/// `L x 2M` matrix: each row is an observation followed by the membership
/// vector of the action taken after it, oldest row first.
pub type PseudoState = Array2<f64>;

/// Keeps the last `L - 1` (observation, action) pairs plus the latest
/// observation, whose action slot is zero until an action is taken.
#[derive(Debug, Clone)]
pub struct PseudoStateTracker {
    ed_count: usize,
    len: usize,
    past: VecDeque<(Vec<f64>, Vec<f64>)>,
    current: Vec<f64>,
}

impl PseudoStateTracker {
    pub fn new(ed_count: usize, len: usize) -> Self {
        assert!(len >= 1, "pseudo-state length must be positive");
        PseudoStateTracker {
            ed_count,
            len,
            past: VecDeque::with_capacity(len),
            current: vec![0.0; ed_count],
        }
    }

    pub fn width(&self) -> usize {
        2 * self.ed_count
    }

    pub fn reset(&mut self) {
        self.past.clear();
        self.current = vec![0.0; self.ed_count];
    }

    pub fn state(&self) -> PseudoState {
        let mut out = Array2::zeros((self.len, self.width()));
        let pad = self.len - 1 - self.past.len();
        for (r, (obs, act)) in self.past.iter().enumerate() {
            let mut row = out.row_mut(pad + r);
            for (j, &v) in obs.iter().chain(act).enumerate() {
                row[j] = v;
            }
        }
        let mut last = out.row_mut(self.len - 1);
        for (j, &v) in self.current.iter().enumerate() {
            last[j] = v;
        }
        out
    }

    /// Commits the action taken on the current observation and moves on to
    /// the observation it produced.
    pub fn record(&mut self, action: &[usize], next: Observation) {
        let obs = std::mem::replace(&mut self.current, next.0);
        if self.len > 1 {
            if self.past.len() == self.len - 1 {
                self.past.pop_front();
            }
            self.past.push_back((obs, membership(self.ed_count, action)));
        }
    }
}
