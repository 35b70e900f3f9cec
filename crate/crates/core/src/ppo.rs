//! Proximal policy optimisation: rollouts, GAE and clipped-surrogate updates.

use crate::encoder::PointCloudObs;
use crate::envs::{reset, EnvConfig};
use crate::error::{invalid, Error, Result};
use crate::nn::{adam_step, AdamState};
use crate::persistence::TrainerKind;
use crate::policy::{gaussian_entropy, gaussian_log_prob, PolicySpec};
use crate::rng::Generator;
use crate::train::{train, EvalRecord, Flow, RunOutput, Sizes, TrainState, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    /// Transitions collected per iteration (S).
    pub samples_per_step: usize,
    /// Minibatch size (B).
    pub batch: usize,
    pub epochs: usize,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    /// Environment steps to train for.
    pub total_steps: u64,
    /// Evaluate whenever this many environment steps have elapsed.
    pub eval_period: u64,
    pub eval_episodes: usize,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            samples_per_step: 2048,
            batch: 64,
            epochs: 4,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            value_coef: 0.5,
            entropy_coef: 0.01,
            lr: 1e-3,
            total_steps: 200_000,
            eval_period: 10_240,
            eval_episodes: 20,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 1 || self.batch > self.samples_per_step {
            return Err(invalid(format!("ppo batch {} must lie in [1, {}]", self.batch, self.samples_per_step)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.clip > 0.0) {
            return Err(invalid("clip must be positive"));
        }
        if self.epochs == 0 || self.eval_period == 0 || self.eval_episodes == 0 {
            return Err(invalid("epochs, eval period and eval episodes must be positive"));
        }
        if !(self.lr >= 0.0) || !(self.value_coef >= 0.0) || !(self.entropy_coef >= 0.0) {
            return Err(invalid("learning rate and loss coefficients must be non-negative"));
        }
        Ok(())
    }
}

/// `S` on-policy transitions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub obs: Vec<PointCloudObs>,
    /// Pre-clamp actions; log-probabilities refer to these.
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// The transition ended its episode (success or horizon).
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Value of the state after the last transition; used when that
    /// transition did not end its episode.
    pub last_value: f64,
    /// Reset seed of every episode started, in order. A reset right after
    /// the final transition is included.
    pub episode_seeds: Vec<u64>,
    pub episodes_finished: usize,
    pub successes: usize,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Gathers exactly `samples` transitions. The first episode and every
/// episode after a `done` start from a fresh seed drawn from `gen`.
pub fn collect_rollout(
    spec: &PolicySpec,
    params: &[f64],
    env: &EnvConfig,
    samples: usize,
    gen: &mut Generator,
) -> Result<RolloutBuffer> {
    if samples == 0 {
        return Err(invalid("rollout needs at least one sample"));
    }
    let mut buf = RolloutBuffer::default();
    buf.episode_seeds.push(gen.next_u64());
    let (mut state, mut obs) = reset(env, buf.episode_seeds[0])?;
    for _ in 0..samples {
        let s = spec.sample_action(params, &obs, gen)?;
        let r = state.step(&s.action)?;
        buf.actions.push(s.raw);
        buf.log_probs.push(s.log_prob);
        buf.values.push(s.value);
        buf.rewards.push(r.reward);
        buf.dones.push(r.done);
        buf.obs.push(std::mem::replace(&mut obs, r.obs));
        if r.done {
            buf.episodes_finished += 1;
            buf.successes += r.success as usize;
            let seed = gen.next_u64();
            buf.episode_seeds.push(seed);
            let (st, o) = reset(env, seed)?;
            state = st;
            obs = o;
        }
    }
    buf.last_value = if *buf.dones.last().expect("non-empty") { 0.0 } else { spec.evaluate(params, &obs)?.1 };
    Ok(buf)
}

/// Fills advantages and returns, right to left:
/// `delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t`,
/// `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`, `R_t = A_t + V_t`.
/// Returns use the raw advantages; normalisation (if asked) happens after.
pub fn compute_gae(buf: &mut RolloutBuffer, gamma: f64, lambda: f64, normalize: bool) {
    let n = buf.len();
    buf.advantages = vec![0.0; n];
    buf.returns = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = buf.last_value;
    for t in (0..n).rev() {
        let live = if buf.dones[t] { 0.0 } else { 1.0 };
        let delta = buf.rewards[t] + gamma * next_value * live - buf.values[t];
        let adv = delta + gamma * lambda * live * next_adv;
        buf.advantages[t] = adv;
        buf.returns[t] = adv + buf.values[t];
        next_adv = adv;
        next_value = buf.values[t];
    }
    if normalize {
        normalize_in_place(&mut buf.advantages);
    }
}

/// Shifts to zero mean and scales to unit (population) variance.
pub fn normalize_in_place(xs: &mut [f64]) {
    let n = xs.len();
    if n < 2 {
        return;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    for x in xs.iter_mut() {
        *x = (*x - mean) * scale;
    }
}

/// Averages over the minibatches of one update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Loss terms of one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct MinibatchLoss {
    /// `policy + value_coef * value - entropy_coef * entropy`.
    pub total: f64,
    pub policy: f64,
    /// Mean squared value error (uncoefficiented).
    pub value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate loss and its gradient on the samples `idx` of `buf`.
///
/// A sample's surrogate is treated as clipped (no gradient) once the ratio
/// has moved past `1 ± clip` in the direction its advantage rewards, and also
/// exactly at that boundary, so `clip = 0` freezes the policy.
pub fn ppo_loss(
    spec: &PolicySpec,
    params: &[f64],
    buf: &RolloutBuffer,
    idx: &[usize],
    cfg: &PpoConfig,
    grad: &mut [f64],
) -> Result<MinibatchLoss> {
    if idx.is_empty() {
        return Err(invalid("empty minibatch"));
    }
    let n = idx.len() as f64;
    let a_dim = spec.action_dim();
    let lay = spec.layout();
    let obs: Vec<&PointCloudObs> = idx.iter().map(|&i| &buf.obs[i]).collect();
    let trace = spec.forward(params, &obs)?;
    let log_std = &params[lay.log_std.clone()];
    let inv_var: Vec<f64> = log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let mut d_mean = vec![0.0; idx.len() * a_dim];
    let mut d_value = vec![0.0; idx.len()];
    let mut d_log_std = vec![0.0; a_dim];
    let (mut pol, mut val, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0usize);
    for (k, &i) in idx.iter().enumerate() {
        let mean = &trace.means()[k * a_dim..(k + 1) * a_dim];
        let x = &buf.actions[i];
        let lp = gaussian_log_prob(x, mean, log_std);
        let ratio = (lp - buf.log_probs[i]).exp();
        let adv = buf.advantages[i];
        let lo = 1.0 - cfg.clip;
        let hi = 1.0 + cfg.clip;
        pol -= (ratio * adv).min(ratio.clamp(lo, hi) * adv);
        kl += buf.log_probs[i] - lp;
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1;
        }
        let active = !((adv > 0.0 && ratio >= hi) || (adv < 0.0 && ratio <= lo));
        if active {
            // d(-ratio * A)/d(log p) = -ratio * A
            let g = -ratio * adv / n;
            for j in 0..a_dim {
                let diff = x[j] - mean[j];
                d_mean[k * a_dim + j] += g * diff * inv_var[j];
                d_log_std[j] += g * (diff * diff * inv_var[j] - 1.0);
            }
        }
        let v = trace.values()[k];
        let err = v - buf.returns[i];
        val += err * err;
        d_value[k] = 2.0 * cfg.value_coef * err / n;
    }
    let entropy = gaussian_entropy(log_std);
    for d in &mut d_log_std {
        *d -= cfg.entropy_coef;
    }
    spec.backward(params, &trace, &d_mean, &d_value, grad)?;
    for (g, d) in grad[lay.log_std].iter_mut().zip(&d_log_std) {
        *g += d;
    }
    let policy = pol / n;
    let value = val / n;
    Ok(MinibatchLoss {
        total: policy + cfg.value_coef * value - cfg.entropy_coef * entropy,
        policy,
        value,
        entropy,
        approx_kl: kl / n,
        clip_fraction: clipped as f64 / n,
    })
}

/// `epochs` passes over shuffled minibatches of `batch` samples (the last one
/// may be short), one Adam step each.
pub fn ppo_update(
    spec: &PolicySpec,
    params: &mut [f64],
    adam: &mut AdamState,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    batch: usize,
    gen: &mut Generator,
) -> Result<UpdateStats> {
    if buf.advantages.len() != buf.len() || buf.is_empty() {
        return Err(invalid("buffer has no advantages; run compute_gae first"));
    }
    if batch == 0 {
        return Err(invalid("minibatch size must be positive"));
    }
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..buf.len()).collect();
    let mut grad = vec![0.0; params.len()];
    for _ in 0..cfg.epochs {
        gen.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = ppo_loss(spec, params, buf, chunk, cfg, &mut grad)?;
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::AbortUpdate { minibatch: stats.minibatches });
            }
            adam_step(params, &grad, adam)?;
            stats.policy_loss += loss.policy;
            stats.value_loss += loss.value;
            stats.entropy += loss.entropy;
            stats.approx_kl += loss.approx_kl;
            stats.clip_fraction += loss.clip_fraction;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.approx_kl /= m;
    stats.clip_fraction /= m;
    Ok(stats)
}

/// PPO bound to one environment and policy shape. Steps count environment
/// transitions.
#[derive(Clone, Debug)]
pub struct PpoTrainer {
    pub cfg: PpoConfig,
    pub env: EnvConfig,
    pub policy: PolicySpec,
}

impl PpoTrainer {
    pub fn new(cfg: PpoConfig, env: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        env.validate()?;
        let policy = PolicySpec::default_for(env.task);
        Ok(Self { cfg, env, policy })
    }
}

impl Trainer for PpoTrainer {
    fn kind(&self) -> TrainerKind {
        TrainerKind::Ppo
    }

    fn env(&self) -> &EnvConfig {
        &self.env
    }

    fn policy(&self) -> &PolicySpec {
        &self.policy
    }

    fn base_sizes(&self) -> Sizes {
        Sizes { batch: self.cfg.batch, samples: self.cfg.samples_per_step }
    }

    fn lr(&self) -> f64 {
        self.cfg.lr
    }

    fn total_steps(&self) -> u64 {
        self.cfg.total_steps
    }

    fn eval_period(&self) -> u64 {
        self.cfg.eval_period
    }

    fn eval_episodes(&self) -> usize {
        self.cfg.eval_episodes
    }

    fn step_cost(&self, sizes: Sizes) -> u64 {
        sizes.samples as u64
    }

    fn check_sizes(&self, sizes: Sizes) -> Result<()> {
        if sizes.batch < 1 || sizes.batch > sizes.samples {
            return Err(invalid(format!("batch {} must lie in [1, samples {}]", sizes.batch, sizes.samples)));
        }
        Ok(())
    }

    fn iterate(&self, state: &mut TrainState, sizes: Sizes) -> Result<()> {
        let mut buf = collect_rollout(&self.policy, state.params.values(), &self.env, sizes.samples, &mut state.gen)?;
        compute_gae(&mut buf, self.cfg.gamma, self.cfg.lambda, self.cfg.normalize_advantages);
        ppo_update(&self.policy, state.params.values_mut(), &mut state.adam, &buf, &self.cfg, sizes.batch, &mut state.gen)?;
        Ok(())
    }
}

/// Trains from `seed` for `cfg.total_steps` environment steps and returns
/// the evaluation history. With `out`, every evaluation is logged and
/// checkpointed there.
pub fn train_ppo(cfg: &PpoConfig, env: &EnvConfig, seed: u64, out: Option<&RunOutput>) -> Result<Vec<EvalRecord>> {
    let trainer = PpoTrainer::new(cfg.clone(), env.clone())?;
    let mut state = trainer.init_state(seed)?;
    train(&trainer, &mut state, out, |_| Flow::Continue)
}
