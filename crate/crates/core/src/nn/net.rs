//! Fixed-topology feed-forward networks with hand-written reverse passes.
//!
//! Parameters for a network live in one flat slice. Each affine layer stores
//! its weight as an `input x output` row-major matrix followed by an
//! `output`-length bias, so `y = x W + b`. All evaluation is batched: `rows`
//! independent inputs are pushed through together, which is what the
//! point-cloud encoder needs for its shared per-point network.

use crate::error::{ensure_width, invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Affine { input: usize, output: usize },
    Activation { kind: Activation, width: usize },
}

impl Layer {
    pub fn input_width(&self) -> usize {
        match *self {
            Layer::Affine { input, .. } => input,
            Layer::Activation { width, .. } => width,
        }
    }

    pub fn output_width(&self) -> usize {
        match *self {
            Layer::Affine { output, .. } => output,
            Layer::Activation { width, .. } => width,
        }
    }

    fn param_count(&self) -> usize {
        match *self {
            Layer::Affine { input, output } => input * output + output,
            Layer::Activation { .. } => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetSpec {
    layers: Vec<Layer>,
}

/// Intermediate values of a batched forward pass, kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct Trace {
    rows: usize,
    /// `acts[k]` is the input of layer `k`; the last entry is the output.
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace always holds the input")
    }
}

impl NetSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.input_width() == 0 || l.output_width() == 0 {
                return Err(invalid(format!("layer {i} has zero width")));
            }
            if i > 0 && layers[i - 1].output_width() != l.input_width() {
                return Err(invalid(format!(
                    "layer {i} expects width {} but layer {} emits {}",
                    l.input_width(),
                    i - 1,
                    layers[i - 1].output_width()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Affine layers through `widths`, `hidden` after each inner layer and
    /// `output` after the last (omitted when it is the identity).
    pub fn mlp(widths: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(invalid("mlp needs an input and an output width"));
        }
        let mut layers = Vec::new();
        for (k, w) in widths.windows(2).enumerate() {
            layers.push(Layer::Affine { input: w[0], output: w[1] });
            let act = if k + 2 == widths.len() { output } else { hidden };
            if act != Activation::Identity {
                layers.push(Layer::Activation { kind: act, width: w[1] });
            }
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Single-input forward pass.
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        ensure_width("network input", self.input_width(), input.len())?;
        let trace = self.forward_batch(params, input, 1)?;
        Ok(trace.acts.into_iter().last().unwrap_or_default())
    }

    /// Single-input reverse pass: `(parameter gradient, input gradient)`.
    pub fn backward(&self, params: &[f64], input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        ensure_width("network input", self.input_width(), input.len())?;
        let trace = self.forward_batch(params, input, 1)?;
        let mut grad = vec![0.0; self.param_count()];
        let dx = self.backward_batch(params, &trace, upstream, &mut grad)?;
        Ok((grad, dx))
    }

    /// Forward pass over `rows` inputs stored row-major in `input`.
    pub fn forward_batch(&self, params: &[f64], input: &[f64], rows: usize) -> Result<Trace> {
        ensure_width("network parameters", self.param_count(), params.len())?;
        if input.len() != rows * self.input_width() {
            return Err(invalid(format!(
                "network input: {} values for {rows} rows of width {}",
                input.len(),
                self.input_width()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let mut offset = 0;
        for layer in &self.layers {
            let x = acts.last().unwrap();
            let y = match *layer {
                Layer::Affine { input: nin, output: nout } => {
                    let (w, b) = params[offset..offset + nin * nout + nout].split_at(nin * nout);
                    offset += nin * nout + nout;
                    affine_forward(w, b, x, rows, nin, nout)
                }
                Layer::Activation { kind, .. } => activate(kind, x),
            };
            acts.push(y);
        }
        Ok(Trace { rows, acts })
    }

    /// Reverse pass for a batched trace. Parameter gradients are *added*
    /// into `grad`; the returned vector is the gradient w.r.t. the inputs.
    pub fn backward_batch(&self, params: &[f64], trace: &Trace, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        ensure_width("network parameters", self.param_count(), params.len())?;
        ensure_width("parameter gradient", self.param_count(), grad.len())?;
        if upstream.len() != trace.rows * self.output_width() {
            return Err(invalid(format!(
                "upstream gradient: {} values for {} rows of width {}",
                upstream.len(),
                trace.rows,
                self.output_width()
            )));
        }
        let rows = trace.rows;
        let mut delta = upstream.to_vec();
        let mut offset = self.param_count();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[k];
            let y = &trace.acts[k + 1];
            match *layer {
                Layer::Affine { input: nin, output: nout } => {
                    offset -= nin * nout + nout;
                    let (w, _) = params[offset..offset + nin * nout + nout].split_at(nin * nout);
                    let (gw, gb) = grad[offset..offset + nin * nout + nout].split_at_mut(nin * nout);
                    delta = affine_backward(w, x, &delta, gw, gb, rows, nin, nout);
                }
                Layer::Activation { kind, .. } => activate_backward(kind, x, y, &mut delta),
            }
        }
        Ok(delta)
    }
}

fn affine_forward(w: &[f64], b: &[f64], x: &[f64], rows: usize, nin: usize, nout: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * nout];
    for r in 0..rows {
        let xr = &x[r * nin..(r + 1) * nin];
        let yr = &mut out[r * nout..(r + 1) * nout];
        yr.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            // Zero inputs (common after relu) contribute nothing.
            if xi == 0.0 {
                continue;
            }
            let wrow = &w[i * nout..(i + 1) * nout];
            for (y, &wv) in yr.iter_mut().zip(wrow) {
                *y += xi * wv;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn affine_backward(
    w: &[f64],
    x: &[f64],
    dz: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    rows: usize,
    nin: usize,
    nout: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * nin];
    for r in 0..rows {
        let xr = &x[r * nin..(r + 1) * nin];
        let dzr = &dz[r * nout..(r + 1) * nout];
        // Rows without upstream gradient (points that lost every max-pool
        // channel) add nothing and leave dx at zero.
        if dzr.iter().all(|&d| d == 0.0) {
            continue;
        }
        for (g, &d) in gb.iter_mut().zip(dzr) {
            *g += d;
        }
        let dxr = &mut dx[r * nin..(r + 1) * nin];
        for i in 0..nin {
            let wrow = &w[i * nout..(i + 1) * nout];
            dxr[i] = wrow.iter().zip(dzr).map(|(a, b)| a * b).sum();
            let xi = xr[i];
            if xi != 0.0 {
                for (g, &d) in gw[i * nout..(i + 1) * nout].iter_mut().zip(dzr) {
                    *g += xi * d;
                }
            }
        }
    }
    dx
}

fn activate(kind: Activation, x: &[f64]) -> Vec<f64> {
    match kind {
        Activation::Relu => x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        Activation::Tanh => x.iter().map(|v| v.tanh()).collect(),
        Activation::Identity => x.to_vec(),
    }
}

fn activate_backward(kind: Activation, x: &[f64], y: &[f64], delta: &mut [f64]) {
    match kind {
        Activation::Relu => {
            for (d, &v) in delta.iter_mut().zip(x) {
                if v <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for (d, &t) in delta.iter_mut().zip(y) {
                *d *= 1.0 - t * t;
            }
        }
        Activation::Identity => {}
    }
}

/// Rejects gradients containing NaN or infinities.
pub fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what}[{i}] = {}", values[i]))),
        None => Ok(()),
    }
}
