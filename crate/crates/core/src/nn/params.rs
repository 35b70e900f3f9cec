use std::ops::Range;

use crate::error::{invalid, Result};
use crate::nn::net::{Layer, NetSpec};
use crate::rng::Generator;

/// Directory entry for one named slice of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceInfo {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl SliceInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named, shaped slices laid end to end over one flat parameter vector.
///
/// Slices are appended in order, so a group of slices added back to back
/// (for example all layers of one network) occupies a contiguous range.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    values: Vec<f64>,
    slices: Vec<SliceInfo>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a store from a flat vector and its slice directory.
    pub fn from_parts(values: Vec<f64>, slices: Vec<SliceInfo>) -> Result<Self> {
        let mut store = Self::new();
        for s in &slices {
            if s.offset != store.values.len() {
                return Err(invalid(format!("slice '{}' is not contiguous", s.name)));
            }
            let end = s.offset + s.len();
            if end > values.len() {
                return Err(invalid(format!("slice '{}' overruns the vector", s.name)));
            }
            store.push(&s.name, s.rows, s.cols, &values[s.range()])?;
        }
        if store.values.len() != values.len() {
            return Err(invalid("slice directory does not cover the parameter vector"));
        }
        Ok(store)
    }

    pub fn push(&mut self, name: &str, rows: usize, cols: usize, values: &[f64]) -> Result<Range<usize>> {
        if values.len() != rows * cols {
            return Err(invalid(format!(
                "slice '{name}': {} values for shape {rows}x{cols}",
                values.len()
            )));
        }
        if self.slices.iter().any(|s| s.name == name) {
            return Err(invalid(format!("duplicate slice name '{name}'")));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("slice '{name}' holds non-finite value {v}")));
        }
        let offset = self.values.len();
        self.values.extend_from_slice(values);
        self.slices.push(SliceInfo { name: name.to_string(), offset, rows, cols });
        Ok(offset..offset + values.len())
    }

    /// Appends every affine layer of `spec` as `prefix.{i}.w` / `prefix.{i}.b`.
    ///
    /// Weights are Glorot-uniform; the final affine layer is scaled by
    /// `out_gain`. Returns the contiguous range holding the network.
    pub fn push_net(&mut self, prefix: &str, spec: &NetSpec, gen: &mut Generator, out_gain: f64) -> Result<Range<usize>> {
        let start = self.values.len();
        let n_affine = spec.layers().iter().filter(|l| matches!(l, Layer::Affine { .. })).count();
        let mut seen = 0;
        for (i, layer) in spec.layers().iter().enumerate() {
            if let Layer::Affine { input, output } = *layer {
                seen += 1;
                let gain = if seen == n_affine { out_gain } else { 1.0 };
                let limit = gain * (6.0 / (input + output) as f64).sqrt();
                let w: Vec<f64> = (0..input * output).map(|_| gen.uniform_in(-limit, limit)).collect();
                self.push(&format!("{prefix}.{i}.w"), input, output, &w)?;
                self.push(&format!("{prefix}.{i}.b"), output, 1, &vec![0.0; output])?;
            }
        }
        Ok(start..self.values.len())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slices(&self) -> &[SliceInfo] {
        &self.slices
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.info(name).map(|s| &self.values[s.range()])
    }

    pub fn info(&self, name: &str) -> Option<&SliceInfo> {
        self.slices.iter().find(|s| s.name == name)
    }
}
