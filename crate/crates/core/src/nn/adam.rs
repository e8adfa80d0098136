use serde::{Deserialize, Serialize};

use super::param::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::with_learning_rate(1e-3)
    }
}

/// Moment accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: ParamVector,
    pub second_moment: ParamVector,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &ParamVector, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
        }
    }
}

/// Bias-corrected Adam update applied in place.
///
/// On error neither `params` nor `state` is modified.
pub fn adam_step(params: &mut ParamVector, grad: &ParamVector, state: &mut AdamState) -> Result<()> {
    params.check_shape(grad, "adam_step gradient")?;
    params.check_shape(&state.first_moment, "adam_step moments")?;
    if let Some((index, value)) = grad.first_non_finite() {
        return Err(Error::Numerical { index, value });
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let m = state.first_moment.values_mut();
    let v = state.second_moment.values_mut();
    for (((p, &g), m), v) in params.values_mut().iter_mut().zip(grad.values()).zip(m).zip(v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}
