use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// One named block of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl LayerShape {
    pub fn new(name: impl Into<String>, dims: &[usize]) -> Self {
        LayerShape {
            name: name.into(),
            dims: dims.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for LayerShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}:{}", self.name, dims.join("x"))
    }
}

/// Ordered layout describing how a flat vector decomposes into layers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ShapeMap {
    layers: Vec<LayerShape>,
}

impl ShapeMap {
    pub fn new(layers: Vec<LayerShape>) -> Self {
        ShapeMap { layers }
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(LayerShape::len).sum()
    }

    /// Start offset of each layer in the flat vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.layers
            .iter()
            .map(|l| {
                let start = acc;
                acc += l.len();
                start
            })
            .collect()
    }
}

impl fmt::Display for ShapeMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.layers.iter().map(|l| l.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Flat real-valued vector (weights, gradients or increments) with its layer layout.
///
/// Two vectors combine only when their shape maps are identical.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    shape: Arc<ShapeMap>,
}

impl ParamVector {
    pub fn zeros(shape: Arc<ShapeMap>) -> Self {
        let n = shape.total_len();
        ParamVector {
            values: vec![0.0; n],
            shape,
        }
    }

    pub fn from_values(shape: Arc<ShapeMap>, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.total_len() {
            return Err(Error::shape(
                "ParamVector::from_values",
                shape.total_len(),
                values.len(),
            ));
        }
        Ok(ParamVector { values, shape })
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector::zeros(self.shape.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn shape(&self) -> &Arc<ShapeMap> {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.shape, &other.shape) || *self.shape == *other.shape
    }

    pub fn check_shape(&self, other: &ParamVector, context: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(context, &*self.shape, &*other.shape))
        }
    }

    /// Slice of the named layer.
    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        let (start, len) = self.locate(name)?;
        Some(&self.values[start..start + len])
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (start, len) = self.locate(name)?;
        Some(&mut self.values[start..start + len])
    }

    fn locate(&self, name: &str) -> Option<(usize, usize)> {
        let mut start = 0;
        for l in self.shape.layers() {
            if l.name == name {
                return Some((start, l.len()));
            }
            start += l.len();
        }
        None
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.add_scaled(other, 1.0)?;
        Ok(out)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.add_scaled(other, -1.0)?;
        Ok(out)
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &ParamVector, alpha: f64) -> Result<()> {
        self.check_shape(other, "ParamVector::add_scaled")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn scaled(&self, alpha: f64) -> ParamVector {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_shape(other, "ParamVector::dot")?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        self.check_shape(other, "ParamVector::distance")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Index and value of the first NaN/Inf component, if any.
    pub fn first_non_finite(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
            .map(|(i, v)| (i, *v))
    }
}
