//! Fully-connected ReLU classifier with softmax cross-entropy loss.
//!
//! Flat layout per layer `l`: `fc{l}.weight` as `[out, in]` row-major, then
//! `fc{l}.bias` as `[out]`.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{LayerShape, ParamVector, ShapeMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_layers: &[usize], output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden_layers: hidden_layers.to_vec(),
            output_dim,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_layers.contains(&0) {
            return Err(Error::Validation(format!(
                "MLP dimensions must all be >= 1, got {} -> {:?} -> {}",
                self.input_dim, self.hidden_layers, self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every dense layer, input to output.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_layers);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn shape_map(&self) -> ShapeMap {
        let mut layers = Vec::new();
        for (l, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            layers.push(LayerShape::new(format!("fc{l}.weight"), &[fan_out, fan_in]));
            layers.push(LayerShape::new(format!("fc{l}.bias"), &[fan_out]));
        }
        ShapeMap::new(layers)
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector::zeros(Arc::new(self.shape_map()))
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut params = self.zeros();
        let mut offset = 0;
        let values = params.values_mut();
        for (fan_in, fan_out) in self.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut values[offset..offset + fan_in * fan_out] {
                *v = rng.random_range(-limit..limit);
            }
            offset += (fan_in + 1) * fan_out;
        }
        params
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        let expected = self.shape_map();
        if *params.shape().as_ref() == expected {
            return Ok(());
        }
        let got = params.shape().layers();
        for (i, layer) in expected.layers().iter().enumerate() {
            match got.get(i) {
                Some(g) if g == layer => continue,
                Some(g) => return Err(Error::shape(format!("layer {}", layer.name), layer, g)),
                None => return Err(Error::shape(format!("layer {}", layer.name), layer, "missing")),
            }
        }
        Err(Error::shape("MLP parameters", &expected, params.shape().as_ref()))
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim {
            return Err(Error::shape("layer fc0.weight (input columns)", self.input_dim, batch.ncols()));
        }
        Ok(())
    }
}

struct Dense<'a> {
    weight: ArrayView2<'a, f64>,
    bias: ArrayView1<'a, f64>,
}

fn dense_layers<'a>(spec: &MlpSpec, params: &'a ParamVector) -> Vec<Dense<'a>> {
    let mut offset = 0;
    let values = params.values();
    spec.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let w = &values[offset..offset + fan_in * fan_out];
            offset += fan_in * fan_out;
            let b = &values[offset..offset + fan_out];
            offset += fan_out;
            Dense {
                weight: ArrayView2::from_shape((fan_out, fan_in), w).expect("layout checked"),
                bias: ArrayView1::from(b),
            }
        })
        .collect()
}

/// Pre-activations of every layer; the last entry is the logits.
fn forward_trace(layers: &[Dense<'_>], batch: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let mut pre = Vec::with_capacity(layers.len());
    let mut act = batch.to_owned();
    for (l, layer) in layers.iter().enumerate() {
        let z = act.dot(&layer.weight.t()) + &layer.bias;
        if l + 1 < layers.len() {
            act = z.mapv(|v| v.max(0.0));
        }
        pre.push(z);
    }
    pre
}

/// Logits for each row of `batch`.
pub fn mlp_forward(params: &ParamVector, spec: &MlpSpec, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
    spec.check_params(params)?;
    spec.check_batch(&batch)?;
    let layers = dense_layers(spec, params);
    Ok(forward_trace(&layers, batch).pop().expect("at least one layer"))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean softmax cross-entropy over the batch and its gradient.
pub fn mlp_backward(
    params: &ParamVector,
    spec: &MlpSpec,
    batch: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, ParamVector)> {
    spec.check_params(params)?;
    spec.check_batch(&batch)?;
    let n = batch.nrows();
    if n == 0 {
        return Err(Error::Validation("mlp_backward requires a nonempty batch".into()));
    }
    if labels.len() != n {
        return Err(Error::shape("labels", n, labels.len()));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= spec.output_dim) {
        return Err(Error::Validation(format!(
            "label {y} at row {i} outside [0, {})",
            spec.output_dim
        )));
    }

    let layers = dense_layers(spec, params);
    let pre = forward_trace(&layers, batch);
    let logits = pre.last().expect("at least one layer");

    let mut loss = 0.0;
    let mut dz = Array2::<f64>::zeros(logits.raw_dim());
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for (j, &v) in row.iter().enumerate() {
            dz[[i, j]] = (v - lse).exp() / n as f64;
        }
        dz[[i, y]] -= 1.0 / n as f64;
    }
    loss /= n as f64;

    let mut grad = params.zeros_like();
    let offsets = params.shape().offsets();
    let g = grad.values_mut();
    for l in (0..layers.len()).rev() {
        let input: Array2<f64> = if l == 0 {
            batch.to_owned()
        } else {
            pre[l - 1].mapv(|v| v.max(0.0))
        };
        let dw = dz.t().dot(&input);
        let db: Array1<f64> = dz.sum_axis(Axis(0));
        let (w_off, b_off) = (offsets[2 * l], offsets[2 * l + 1]);
        g[w_off..w_off + dw.len()].copy_from_slice(dw.as_standard_layout().as_slice().expect("standard layout"));
        g[b_off..b_off + db.len()].copy_from_slice(db.as_slice().expect("contiguous"));
        if l > 0 {
            let mut da = dz.dot(&layers[l].weight);
            ndarray::Zip::from(&mut da)
                .and(&pre[l - 1])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            dz = da;
        }
    }
    Ok((loss, grad))
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
