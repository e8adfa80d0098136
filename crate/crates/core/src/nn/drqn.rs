//! Recurrent Q-network: one LSTM layer over the input sequence, a ReLU
//! fully-connected layer on the final hidden state, then a linear Q head.
//!
//! Flat layout:
//!
//! | name          | dims            |
//! |---------------|-----------------|
//! | `lstm.w_ih`   | `[4H, D]`       |
//! | `lstm.w_hh`   | `[4H, H]`       |
//! | `lstm.bias`   | `[4H]`          |
//! | `fc.weight`   | `[F, H]`        |
//! | `fc.bias`     | `[F]`           |
//! | `head.weight` | `[A, F]`        |
//! | `head.bias`   | `[A]`           |
//!
//! Gate blocks inside every `4H` axis are ordered input, forget, cell, output.

use std::sync::Arc;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{LayerShape, ParamVector, ShapeMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrqnSpec {
    pub obs_action_dim: usize,
    pub lstm_units: usize,
    pub fc_units: usize,
    pub action_count: usize,
    pub sequence_len: usize,
}

impl DrqnSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.obs_action_dim,
            self.lstm_units,
            self.fc_units,
            self.action_count,
            self.sequence_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Validation(format!("DRQN dimensions must all be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn shape_map(&self) -> ShapeMap {
        let (d, h, f, a) = (self.obs_action_dim, self.lstm_units, self.fc_units, self.action_count);
        ShapeMap::new(vec![
            LayerShape::new("lstm.w_ih", &[4 * h, d]),
            LayerShape::new("lstm.w_hh", &[4 * h, h]),
            LayerShape::new("lstm.bias", &[4 * h]),
            LayerShape::new("fc.weight", &[f, h]),
            LayerShape::new("fc.bias", &[f]),
            LayerShape::new("head.weight", &[a, f]),
            LayerShape::new("head.bias", &[a]),
        ])
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector::zeros(Arc::new(self.shape_map()))
    }

    /// Glorot-uniform weights, zero biases except the forget gate (1.0).
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut params = self.zeros();
        let shape = params.shape().clone();
        for layer in shape.layers() {
            let slice = params.layer_mut(&layer.name).expect("own layout");
            if layer.dims.len() == 2 {
                let limit = (6.0 / (layer.dims[0] + layer.dims[1]) as f64).sqrt();
                slice.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
            }
        }
        let h = self.lstm_units;
        params.layer_mut("lstm.bias").expect("own layout")[h..2 * h].fill(1.0);
        params
    }

    fn check(&self, params: &ParamVector, sequence: &ArrayView2<f64>) -> Result<()> {
        let expected = self.shape_map();
        if *params.shape().as_ref() != expected {
            let got = params.shape().layers();
            let bad = expected
                .layers()
                .iter()
                .enumerate()
                .find(|(i, l)| got.get(*i) != Some(l))
                .map(|(_, l)| l.name.clone())
                .unwrap_or_else(|| "trailing layers".into());
            return Err(Error::shape(format!("DRQN layer {bad}"), &expected, params.shape().as_ref()));
        }
        if sequence.nrows() != self.sequence_len {
            return Err(Error::shape("DRQN sequence length", self.sequence_len, sequence.nrows()));
        }
        if sequence.ncols() != self.obs_action_dim {
            return Err(Error::shape("DRQN timestep width", self.obs_action_dim, sequence.ncols()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Borrowed views of each block of a DRQN parameter (or gradient) vector.
struct Blocks<'a> {
    w_ih: &'a [f64],
    w_hh: &'a [f64],
    bias: &'a [f64],
    fc_w: &'a [f64],
    fc_b: &'a [f64],
    head_w: &'a [f64],
    head_b: &'a [f64],
}

fn split<'a>(values: &'a [f64], spec: &DrqnSpec) -> Blocks<'a> {
    let (d, h, f, a) = (spec.obs_action_dim, spec.lstm_units, spec.fc_units, spec.action_count);
    let (w_ih, rest) = values.split_at(4 * h * d);
    let (w_hh, rest) = rest.split_at(4 * h * h);
    let (bias, rest) = rest.split_at(4 * h);
    let (fc_w, rest) = rest.split_at(f * h);
    let (fc_b, rest) = rest.split_at(f);
    let (head_w, head_b) = rest.split_at(a * f);
    Blocks {
        w_ih,
        w_hh,
        bias,
        fc_w,
        fc_b,
        head_w,
        head_b,
    }
}

/// Intermediate values kept for backpropagation through time.
struct Trace {
    /// Hidden and cell states, index 0 is the zero initial state.
    hidden: Vec<Vec<f64>>,
    cell: Vec<Vec<f64>>,
    /// Post-nonlinearity gate values `[i, f, g, o]` per timestep.
    gates: Vec<Vec<f64>>,
    fc_pre: Vec<f64>,
    fc_out: Vec<f64>,
    q: Vec<f64>,
}

fn forward_trace(b: &Blocks<'_>, spec: &DrqnSpec, seq: &ArrayView2<f64>) -> Trace {
    let (d, h) = (spec.obs_action_dim, spec.lstm_units);
    let mut hidden = vec![vec![0.0; h]];
    let mut cell = vec![vec![0.0; h]];
    let mut gates = Vec::with_capacity(spec.sequence_len);
    let mut x = vec![0.0; d];
    for row in seq.rows() {
        x.iter_mut().zip(row.iter()).for_each(|(dst, &v)| *dst = v);
        let h_prev = hidden.last().expect("initial state");
        let c_prev = cell.last().expect("initial state");
        let mut z = b.bias.to_vec();
        for (r, zr) in z.iter_mut().enumerate() {
            let wi = &b.w_ih[r * d..(r + 1) * d];
            let wh = &b.w_hh[r * h..(r + 1) * h];
            *zr += wi.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>()
                + wh.iter().zip(h_prev).map(|(w, v)| w * v).sum::<f64>();
        }
        let mut g = vec![0.0; 4 * h];
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for k in 0..h {
            let ig = sigmoid(z[k]);
            let fg = sigmoid(z[h + k]);
            let cg = z[2 * h + k].tanh();
            let og = sigmoid(z[3 * h + k]);
            c[k] = fg * c_prev[k] + ig * cg;
            hn[k] = og * c[k].tanh();
            g[k] = ig;
            g[h + k] = fg;
            g[2 * h + k] = cg;
            g[3 * h + k] = og;
        }
        gates.push(g);
        cell.push(c);
        hidden.push(hn);
    }

    let h_last = hidden.last().expect("initial state");
    let fc_pre: Vec<f64> = (0..spec.fc_units)
        .map(|r| {
            b.fc_b[r]
                + b.fc_w[r * h..(r + 1) * h]
                    .iter()
                    .zip(h_last)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        })
        .collect();
    let fc_out: Vec<f64> = fc_pre.iter().map(|v| v.max(0.0)).collect();
    let f = spec.fc_units;
    let q = (0..spec.action_count)
        .map(|a| {
            b.head_b[a]
                + b.head_w[a * f..(a + 1) * f]
                    .iter()
                    .zip(&fc_out)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
        })
        .collect();
    Trace {
        hidden,
        cell,
        gates,
        fc_pre,
        fc_out,
        q,
    }
}

/// Q-value for every action given a `sequence_len x obs_action_dim` input.
pub fn drqn_forward(params: &ParamVector, spec: &DrqnSpec, sequence: ArrayView2<f64>) -> Result<Vec<f64>> {
    spec.check(params, &sequence)?;
    Ok(forward_trace(&split(params.values(), spec), spec, &sequence).q)
}

/// Accumulates `dL/dparams` into `grad` given `dL/dq` for a single sequence.
fn backward_into(
    b: &Blocks<'_>,
    spec: &DrqnSpec,
    seq: &ArrayView2<f64>,
    trace: &Trace,
    dq: &[f64],
    grad: &mut [f64],
) {
    let (d, h, f, a) = (spec.obs_action_dim, spec.lstm_units, spec.fc_units, spec.action_count);
    let (g_wih, rest) = grad.split_at_mut(4 * h * d);
    let (g_whh, rest) = rest.split_at_mut(4 * h * h);
    let (g_bias, rest) = rest.split_at_mut(4 * h);
    let (g_fcw, rest) = rest.split_at_mut(f * h);
    let (g_fcb, rest) = rest.split_at_mut(f);
    let (g_hw, g_hb) = rest.split_at_mut(a * f);

    let mut d_fc = vec![0.0; f];
    for (act, &dqa) in dq.iter().enumerate() {
        if dqa == 0.0 {
            continue;
        }
        g_hb[act] += dqa;
        let row = &b.head_w[act * f..(act + 1) * f];
        for j in 0..f {
            g_hw[act * f + j] += dqa * trace.fc_out[j];
            d_fc[j] += dqa * row[j];
        }
    }
    let h_last = trace.hidden.last().expect("initial state");
    let mut dh = vec![0.0; h];
    for j in 0..f {
        if trace.fc_pre[j] <= 0.0 {
            continue;
        }
        let dz = d_fc[j];
        g_fcb[j] += dz;
        for k in 0..h {
            g_fcw[j * h + k] += dz * h_last[k];
            dh[k] += dz * b.fc_w[j * h + k];
        }
    }

    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..spec.sequence_len).rev() {
        let g = &trace.gates[t];
        let c = &trace.cell[t + 1];
        let c_prev = &trace.cell[t];
        let h_prev = &trace.hidden[t];
        for k in 0..h {
            let (ig, fg, cg, og) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
            let tc = c[k].tanh();
            dc[k] += dh[k] * og * (1.0 - tc * tc);
            dz[k] = dc[k] * cg * ig * (1.0 - ig);
            dz[h + k] = dc[k] * c_prev[k] * fg * (1.0 - fg);
            dz[2 * h + k] = dc[k] * ig * (1.0 - cg * cg);
            dz[3 * h + k] = dh[k] * tc * og * (1.0 - og);
            dc[k] *= fg;
        }
        let x = seq.row(t);
        dh.iter_mut().for_each(|v| *v = 0.0);
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            g_bias[r] += dzr;
            for (j, &xv) in x.iter().enumerate() {
                g_wih[r * d + j] += dzr * xv;
            }
            let wh = &b.w_hh[r * h..(r + 1) * h];
            for k in 0..h {
                g_whh[r * h + k] += dzr * h_prev[k];
                dh[k] += dzr * wh[k];
            }
        }
    }
}

/// Squared temporal-difference error `(Q(sequence)[action] - target)^2` and its gradient.
pub fn drqn_backward(
    params: &ParamVector,
    spec: &DrqnSpec,
    sequence: ArrayView2<f64>,
    target: f64,
    action: usize,
) -> Result<(f64, ParamVector)> {
    drqn_batch_backward(params, spec, &[(sequence, target, action)])
}

/// Mean squared TD error over `(sequence, target, action)` samples and its gradient.
pub fn drqn_batch_backward(
    params: &ParamVector,
    spec: &DrqnSpec,
    samples: &[(ArrayView2<f64>, f64, usize)],
) -> Result<(f64, ParamVector)> {
    if samples.is_empty() {
        return Err(Error::Validation("drqn backward needs at least one sample".into()));
    }
    let mut grad = params.zeros_like();
    let blocks = split(params.values(), spec);
    let scale = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    let mut dq = vec![0.0; spec.action_count];
    for (seq, target, action) in samples {
        spec.check(params, seq)?;
        if *action >= spec.action_count {
            return Err(Error::Validation(format!(
                "action {action} outside [0, {})",
                spec.action_count
            )));
        }
        let trace = forward_trace(&blocks, spec, seq);
        let residual = trace.q[*action] - target;
        loss += residual * residual * scale;
        dq.iter_mut().for_each(|v| *v = 0.0);
        dq[*action] = 2.0 * residual * scale;
        backward_into(&blocks, spec, seq, &trace, &dq, grad.values_mut());
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> DrqnSpec {
        DrqnSpec {
            obs_action_dim: 3,
            lstm_units: 2,
            fc_units: 3,
            action_count: 4,
            sequence_len: 3,
        }
    }

    #[test]
    fn zero_params_give_zero_q() {
        let spec = tiny();
        let seq = Array2::from_elem((3, 3), 0.7);
        let q = drqn_forward(&spec.zeros(), &spec, seq.view()).unwrap();
        assert_eq!(q, vec![0.0; 4]);
    }

    #[test]
    fn timestep_order_matters() {
        let spec = tiny();
        let p = spec.init(&mut ChaCha8Rng::seed_from_u64(11));
        let seq = array![[1.0, 0.0, -1.0], [0.0, 1.0, 0.5], [-1.0, 1.0, 0.0]];
        let mut rev = seq.clone();
        rev.invert_axis(ndarray::Axis(0));
        let q1 = drqn_forward(&p, &spec, seq.view()).unwrap();
        let q2 = drqn_forward(&p, &spec, rev.view()).unwrap();
        assert_ne!(q1, q2);
    }

    #[test]
    fn single_unit_matches_hand_expansion() {
        let spec = DrqnSpec {
            obs_action_dim: 1,
            lstm_units: 1,
            fc_units: 1,
            action_count: 1,
            sequence_len: 2,
        };
        // gates (i, f, g, o): input weights, recurrent weights, biases
        let w_ih = [0.5, -0.3, 0.8, 0.2];
        let w_hh = [0.1, 0.4, -0.6, 0.9];
        let bias = [0.05, 1.0, -0.1, 0.2];
        let mut values = Vec::new();
        values.extend(w_ih);
        values.extend(w_hh);
        values.extend(bias);
        values.extend([1.5, 0.25]); // fc weight, bias
        values.extend([-2.0, 0.3]); // head weight, bias
        let p = ParamVector::from_values(Arc::new(spec.shape_map()), values).unwrap();
        let xs = [0.7, -1.2];

        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        for x in xs {
            let i = s(w_ih[0] * x + w_hh[0] * h + bias[0]);
            let f = s(w_ih[1] * x + w_hh[1] * h + bias[1]);
            let g = (w_ih[2] * x + w_hh[2] * h + bias[2]).tanh();
            let o = s(w_ih[3] * x + w_hh[3] * h + bias[3]);
            c = f * c + i * g;
            h = o * c.tanh();
        }
        let expected = -2.0 * (1.5 * h + 0.25f64).max(0.0) + 0.3;

        let seq = Array2::from_shape_vec((2, 1), xs.to_vec()).unwrap();
        let q = drqn_forward(&p, &spec, seq.view()).unwrap();
        assert!((q[0] - expected).abs() < 1e-14, "{} vs {expected}", q[0]);
    }

    #[test]
    fn zero_residual_gives_zero_loss_and_grad() {
        let spec = tiny();
        let p = spec.init(&mut ChaCha8Rng::seed_from_u64(5));
        let seq = Array2::from_elem((3, 3), 0.3);
        let q = drqn_forward(&p, &spec, seq.view()).unwrap();
        let (loss, grad) = drqn_backward(&p, &spec, seq.view(), q[2], 2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_is_quadratic_in_residual() {
        let spec = tiny();
        let p = spec.init(&mut ChaCha8Rng::seed_from_u64(6));
        let seq = Array2::from_elem((3, 3), -0.4);
        let q = drqn_forward(&p, &spec, seq.view()).unwrap()[1];
        let (l1, _) = drqn_backward(&p, &spec, seq.view(), q + 0.5, 1).unwrap();
        let (l2, _) = drqn_backward(&p, &spec, seq.view(), q + 1.0, 1).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let spec = tiny();
        let p = spec.init(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.layer("lstm.bias").unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn wrong_sequence_length_is_structural() {
        let spec = tiny();
        let seq = Array2::zeros((2, 3));
        assert!(matches!(
            drqn_forward(&spec.zeros(), &spec, seq.view()),
            Err(Error::Shape { .. })
        ));
        let seq = Array2::zeros((3, 3));
        assert!(drqn_backward(&spec.zeros(), &spec, seq.view(), 0.0, 4).is_err());
    }
}
