//! Permutation-invariant point-cloud encoder.
//!
//! A shared per-point network maps every point to `F` features, a max over
//! points pools them into one global feature, and a post network consumes
//! that feature concatenated with the proprioceptive vector:
//!
//! ```text
//! out = post( [ max_i point(p_i) , proprio ] )
//! ```
//!
//! Each point is processed independently and the pooled value of a channel is
//! an exact maximum, so reordering or duplicating points never changes a bit
//! of the output. In the reverse pass a pooled channel routes its gradient to
//! the single point attaining the maximum, the lowest index on ties.

use crate::error::{ensure_width, invalid, Result};
use crate::nn::{Activation, NetSpec, Trace};

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudObs {
    /// `n_points` rows of `spatial_dims + channels` values, row-major.
    pub points: Vec<f64>,
    pub n_points: usize,
    pub spatial_dims: usize,
    pub channels: usize,
    pub proprio: Vec<f64>,
}

impl PointCloudObs {
    pub fn new(points: Vec<f64>, spatial_dims: usize, channels: usize, proprio: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&spatial_dims) {
            return Err(invalid(format!("points must be 2-D or 3-D, got {spatial_dims}")));
        }
        let width = spatial_dims + channels;
        if points.is_empty() || points.len() % width != 0 {
            return Err(invalid(format!("{} point values do not form rows of width {width}", points.len())));
        }
        if points.iter().chain(&proprio).any(|v| !v.is_finite()) {
            return Err(invalid("observation holds a non-finite value"));
        }
        Ok(Self { n_points: points.len() / width, points, spatial_dims, channels, proprio })
    }

    pub fn point_width(&self) -> usize {
        self.spatial_dims + self.channels
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let w = self.point_width();
        &self.points[i * w..(i + 1) * w]
    }

    /// Returns a copy with the points reordered: row `k` is old row `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut points = Vec::with_capacity(order.len() * self.point_width());
        for &i in order {
            points.extend_from_slice(self.point(i));
        }
        Self { points, n_points: order.len(), ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    point_net: NetSpec,
    post_net: NetSpec,
    proprio_width: usize,
}

/// Forward intermediates of [`encode_trace`].
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    point: Trace,
    /// Winning point index per pooled channel.
    argmax: Vec<usize>,
    post: Trace,
}

impl EncoderTrace {
    pub fn point_trace(&self) -> &Trace {
        &self.point
    }

    pub fn post_trace(&self) -> &Trace {
        &self.post
    }

    pub fn output(&self) -> &[f64] {
        self.post.output()
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

impl EncoderSpec {
    pub fn new(point_net: NetSpec, post_net: NetSpec, proprio_width: usize) -> Result<Self> {
        let f = point_net.output_width();
        if post_net.input_width() != f + proprio_width {
            return Err(invalid(format!(
                "post network takes {} inputs but pooled feature {f} + proprio {proprio_width} = {}",
                post_net.input_width(),
                f + proprio_width
            )));
        }
        Ok(Self { point_net, post_net, proprio_width })
    }

    /// Point network `width -> hidden.. -> feature` (relu throughout) and
    /// post network `feature + proprio -> post..` (tanh).
    pub fn with_widths(point_width: usize, proprio_width: usize, hidden: &[usize], feature: usize, post: &[usize]) -> Result<Self> {
        let mut pw = vec![point_width];
        pw.extend_from_slice(hidden);
        pw.push(feature);
        let mut qw = vec![feature + proprio_width];
        qw.extend_from_slice(post);
        Self::new(
            NetSpec::mlp(&pw, Activation::Relu, Activation::Relu)?,
            NetSpec::mlp(&qw, Activation::Tanh, Activation::Tanh)?,
            proprio_width,
        )
    }

    /// `(d+c) -> 32 -> 64`, max-pool, `(64 + proprio) -> 64`.
    pub fn default_for(point_width: usize, proprio_width: usize) -> Self {
        Self::with_widths(point_width, proprio_width, &[32], 64, &[64]).expect("default widths are consistent")
    }

    pub fn point_net(&self) -> &NetSpec {
        &self.point_net
    }

    pub fn post_net(&self) -> &NetSpec {
        &self.post_net
    }

    pub fn point_width(&self) -> usize {
        self.point_net.input_width()
    }

    pub fn proprio_width(&self) -> usize {
        self.proprio_width
    }

    pub fn feature_width(&self) -> usize {
        self.point_net.output_width()
    }

    pub fn output_width(&self) -> usize {
        self.post_net.output_width()
    }

    pub fn param_count(&self) -> usize {
        self.point_net.param_count() + self.post_net.param_count()
    }

    /// Point-net and post-net halves of a flat parameter vector.
    pub fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.point_net.param_count())
    }

    fn check(&self, params: &[f64], obs: &PointCloudObs) -> Result<()> {
        ensure_width("encoder parameters", self.param_count(), params.len())?;
        if obs.n_points == 0 {
            return Err(invalid("point cloud has no points"));
        }
        ensure_width("point", self.point_width(), obs.point_width())?;
        ensure_width("proprio", self.proprio_width, obs.proprio.len())
    }
}

pub fn encode(params: &[f64], spec: &EncoderSpec, obs: &PointCloudObs) -> Result<Vec<f64>> {
    Ok(encode_trace(params, spec, obs)?.output().to_vec())
}

pub fn encode_trace(params: &[f64], spec: &EncoderSpec, obs: &PointCloudObs) -> Result<EncoderTrace> {
    spec.check(params, obs)?;
    let (pp, qp) = spec.split(params);
    let point = spec.point_net.forward_batch(pp, &obs.points, obs.n_points)?;
    let f = spec.feature_width();
    let feats = point.output();
    let mut pooled = feats[..f].to_vec();
    let mut argmax = vec![0usize; f];
    for i in 1..obs.n_points {
        let row = &feats[i * f..(i + 1) * f];
        for c in 0..f {
            if row[c] > pooled[c] {
                pooled[c] = row[c];
                argmax[c] = i;
            }
        }
    }
    pooled.extend_from_slice(&obs.proprio);
    let post = spec.post_net.forward_batch(qp, &pooled, 1)?;
    Ok(EncoderTrace { point, argmax, post })
}

/// Adds the encoder parameter gradient for `upstream` into `grad`.
pub fn encode_backward_trace(
    params: &[f64],
    spec: &EncoderSpec,
    trace: &EncoderTrace,
    upstream: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    ensure_width("encoder parameter gradient", spec.param_count(), grad.len())?;
    let (pp, qp) = spec.split(params);
    let (gp, gq) = grad.split_at_mut(spec.point_net.param_count());
    let d_in = spec.post_net.backward_batch(qp, &trace.post, upstream, gq)?;
    let f = spec.feature_width();
    let mut d_feats = vec![0.0; trace.point.rows() * f];
    for (c, &i) in trace.argmax.iter().enumerate() {
        d_feats[i * f + c] = d_in[c];
    }
    spec.point_net.backward_batch(pp, &trace.point, &d_feats, gp)?;
    Ok(())
}

pub fn encode_backward(params: &[f64], spec: &EncoderSpec, obs: &PointCloudObs, upstream: &[f64]) -> Result<Vec<f64>> {
    let trace = encode_trace(params, spec, obs)?;
    let mut grad = vec![0.0; spec.param_count()];
    encode_backward_trace(params, spec, &trace, upstream, &mut grad)?;
    Ok(grad)
}
