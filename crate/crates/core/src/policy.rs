//! Encoder-backed Gaussian policy with a value head.
//!
//! One [`ParamStore`] holds four named groups: the encoder (`encoder.point.*`,
//! `encoder.post.*`), the linear mean head (`mean.*`), a state-independent
//! `log_std` vector, and the value head (`value.*`). Both heads read the same
//! encoder output.

use std::f64::consts::PI;
use std::ops::Range;

use crate::encoder::{encode_backward_trace, encode_trace, EncoderSpec, EncoderTrace, PointCloudObs};
use crate::envs::{TaskId, ACTION_DIM, POINT_WIDTH};
use crate::error::{ensure_width, invalid, Result};
use crate::nn::{Activation, NetSpec, ParamStore, Trace};
use crate::rng::Generator;

/// `log_std` at initialisation.
pub const INITIAL_LOG_STD: f64 = -0.5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicySpec {
    pub encoder: EncoderSpec,
    pub mean_head: NetSpec,
    pub value_head: NetSpec,
}

impl PolicySpec {
    pub fn new(encoder: EncoderSpec, value_hidden: &[usize], action_dim: usize) -> Result<Self> {
        let feat = encoder.output_width();
        let mean_head = NetSpec::mlp(&[feat, action_dim], Activation::Identity, Activation::Identity)?;
        let mut widths = vec![feat];
        widths.extend_from_slice(value_hidden);
        widths.push(1);
        let value_head = NetSpec::mlp(&widths, Activation::Tanh, Activation::Identity)?;
        Ok(Self { encoder, mean_head, value_head })
    }

    /// Default encoder for the task and a `64 -> 64 -> 1` value head.
    pub fn default_for(task: TaskId) -> Self {
        let enc = EncoderSpec::default_for(POINT_WIDTH, task.proprio_width());
        Self::new(enc, &[64], ACTION_DIM).expect("default policy widths are consistent")
    }

    pub fn action_dim(&self) -> usize {
        self.mean_head.output_width()
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.mean_head.param_count() + self.action_dim() + self.value_head.param_count()
    }

    pub fn layout(&self) -> Layout {
        let e = self.encoder.param_count();
        let m = e + self.mean_head.param_count();
        let s = m + self.action_dim();
        let v = s + self.value_head.param_count();
        Layout { encoder: 0..e, mean: e..m, log_std: m..s, value: s..v }
    }

    /// Fresh parameters: Glorot weights, a mean head scaled down by 0.01 so
    /// initial actions sit near zero, and `log_std` = [`INITIAL_LOG_STD`].
    pub fn init(&self, gen: &mut Generator) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        store.push_net("encoder.point", self.encoder.point_net(), gen, 1.0)?;
        store.push_net("encoder.post", self.encoder.post_net(), gen, 1.0)?;
        store.push_net("mean", &self.mean_head, gen, 0.01)?;
        let a = self.action_dim();
        store.push("log_std", a, 1, &vec![INITIAL_LOG_STD; a])?;
        store.push_net("value", &self.value_head, gen, 1.0)?;
        debug_assert_eq!(store.len(), self.param_count());
        Ok(store)
    }
}

/// Offsets of each parameter group in the flat vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub encoder: Range<usize>,
    pub mean: Range<usize>,
    pub log_std: Range<usize>,
    pub value: Range<usize>,
}

/// Gaussian log-density of `x` under independent `N(mean, exp(log_std)^2)`.
pub fn gaussian_log_prob(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let mut lp = 0.0;
    for ((&xi, &mu), &ls) in x.iter().zip(mean).zip(log_std) {
        let z = (xi - mu) * (-ls).exp();
        lp += -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln();
    }
    lp
}

/// Differential entropy `sum(log_std + 0.5 ln(2 pi e))`.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    let c = 0.5 * (2.0 * PI * std::f64::consts::E).ln();
    log_std.iter().map(|ls| ls + c).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSample {
    /// Clamped to the action box; what the environment receives.
    pub action: Vec<f64>,
    /// The pre-clamp Gaussian draw.
    pub raw: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

/// Forward intermediates for a batch of observations.
pub struct BatchTrace {
    encoders: Vec<EncoderTrace>,
    mean: Trace,
    value: Trace,
}

impl BatchTrace {
    pub fn rows(&self) -> usize {
        self.encoders.len()
    }

    /// Row-major `rows x action_dim` means.
    pub fn means(&self) -> &[f64] {
        self.mean.output()
    }

    pub fn values(&self) -> &[f64] {
        self.value.output()
    }
}

impl PolicySpec {
    pub fn forward(&self, params: &[f64], obs: &[&PointCloudObs]) -> Result<BatchTrace> {
        ensure_width("policy parameters", self.param_count(), params.len())?;
        if obs.is_empty() {
            return Err(invalid("empty observation batch"));
        }
        let lay = self.layout();
        let enc_params = &params[lay.encoder.clone()];
        let width = self.encoder.output_width();
        let mut encoders = Vec::with_capacity(obs.len());
        let mut features = Vec::with_capacity(obs.len() * width);
        for o in obs {
            let t = encode_trace(enc_params, &self.encoder, o)?;
            features.extend_from_slice(t.output());
            encoders.push(t);
        }
        let mean = self.mean_head.forward_batch(&params[lay.mean], &features, obs.len())?;
        let value = self.value_head.forward_batch(&params[lay.value], &features, obs.len())?;
        Ok(BatchTrace { encoders, mean, value })
    }

    /// Adds into `grad` the parameter gradient of a loss whose derivatives
    /// w.r.t. the means (`rows x action_dim`) and values (`rows`) are given.
    /// `log_std` gradients are the caller's business.
    pub fn backward(&self, params: &[f64], trace: &BatchTrace, d_mean: &[f64], d_value: &[f64], grad: &mut [f64]) -> Result<()> {
        ensure_width("policy gradient", self.param_count(), grad.len())?;
        let lay = self.layout();
        let rows = trace.rows();
        let width = self.encoder.output_width();
        let mut d_feat = self.mean_head.backward_batch(&params[lay.mean.clone()], &trace.mean, d_mean, &mut grad[lay.mean])?;
        let dv = self.value_head.backward_batch(&params[lay.value.clone()], &trace.value, d_value, &mut grad[lay.value])?;
        for (a, b) in d_feat.iter_mut().zip(&dv) {
            *a += b;
        }
        let enc_params = &params[lay.encoder.clone()];
        let enc_grad = &mut grad[lay.encoder];
        for r in 0..rows {
            let up = &d_feat[r * width..(r + 1) * width];
            if up.iter().all(|&v| v == 0.0) {
                continue;
            }
            encode_backward_trace(enc_params, &self.encoder, &trace.encoders[r], up, enc_grad)?;
        }
        Ok(())
    }

    /// Mean action (unclamped) and value estimate for one observation.
    pub fn evaluate(&self, params: &[f64], obs: &PointCloudObs) -> Result<(Vec<f64>, f64)> {
        let t = self.forward(params, &[obs])?;
        Ok((t.means().to_vec(), t.values()[0]))
    }

    /// The deterministic policy: mean action clamped to the box.
    pub fn act_deterministic(&self, params: &[f64], obs: &PointCloudObs) -> Result<Vec<f64>> {
        let (mean, _) = self.evaluate(params, obs)?;
        Ok(mean.iter().map(|m| m.clamp(-1.0, 1.0)).collect())
    }

    /// Draws `mean + exp(log_std) * z` with `z` standard normal, then clamps.
    pub fn sample_action(&self, params: &[f64], obs: &PointCloudObs, gen: &mut Generator) -> Result<ActionSample> {
        let (mean, value) = self.evaluate(params, obs)?;
        let log_std = &params[self.layout().log_std];
        let raw: Vec<f64> = mean.iter().zip(log_std).map(|(m, ls)| m + ls.exp() * gen.normal()).collect();
        let log_prob = gaussian_log_prob(&raw, &mean, log_std);
        let action = raw.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Ok(ActionSample { action, raw, log_prob, value })
    }
}
