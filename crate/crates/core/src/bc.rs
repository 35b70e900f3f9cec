//! Behaviour cloning: mean-squared regression of expert actions.

use crate::encoder::PointCloudObs;
use crate::envs::{DemoFile, DemoTrajectory, EnvConfig};
use crate::error::{invalid, Error, Result};
use crate::nn::adam_step;
use crate::persistence::{SamplerState, TrainerKind};
use crate::policy::PolicySpec;
use crate::rng::Generator;
use crate::train::{train, EvalRecord, Flow, RunOutput, Sizes, TrainState, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct BcConfig {
    /// Minibatch size (B).
    pub batch: usize,
    /// Demo pairs consumed per training step (S).
    pub samples_per_step: usize,
    pub total_steps: u64,
    pub lr: f64,
    pub eval_period: u64,
    pub eval_episodes: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self { batch: 64, samples_per_step: 256, total_steps: 12_500, lr: 1e-3, eval_period: 500, eval_episodes: 20 }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 1 || self.batch > self.samples_per_step {
            return Err(invalid(format!("bc batch {} must lie in [1, {}]", self.batch, self.samples_per_step)));
        }
        if self.eval_period == 0 || self.eval_episodes == 0 {
            return Err(invalid("eval period and eval episodes must be positive"));
        }
        if !(self.lr >= 0.0) {
            return Err(invalid("learning rate must be non-negative"));
        }
        Ok(())
    }

    /// Minibatch updates in one full step.
    pub fn updates_per_step(&self) -> usize {
        self.samples_per_step.div_ceil(self.batch)
    }
}

/// Observation, action pairs pooled over trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub obs: Vec<PointCloudObs>,
    pub actions: Vec<Vec<f64>>,
    pub config_hash: u64,
}

impl DemoDataset {
    pub fn from_trajectories(trajectories: &[DemoTrajectory], config_hash: u64) -> Result<Self> {
        let mut obs = Vec::new();
        let mut actions = Vec::new();
        for t in trajectories {
            obs.extend(t.obs.iter().cloned());
            actions.extend(t.actions.iter().cloned());
        }
        if obs.is_empty() {
            return Err(Error::EmptyDataset("demonstrations hold no pairs".into()));
        }
        let first = &obs[0];
        let a = actions[0].len();
        let consistent = obs.len() == actions.len()
            && obs.iter().all(|o| o.n_points == first.n_points && o.point_width() == first.point_width() && o.proprio.len() == first.proprio.len())
            && actions.iter().all(|x| x.len() == a);
        if !consistent {
            return Err(invalid("demonstration pairs differ in shape"));
        }
        Ok(Self { obs, actions, config_hash })
    }

    pub fn from_file(file: &DemoFile) -> Result<Self> {
        Self::from_trajectories(&file.trajectories, file.config_hash)
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Mean over pairs of `||mean(obs) - action||^2`; the gradient is added into
/// `grad`.
pub fn bc_loss(spec: &PolicySpec, params: &[f64], data: &DemoDataset, idx: &[usize], grad: &mut [f64]) -> Result<f64> {
    if idx.is_empty() {
        return Err(invalid("empty minibatch"));
    }
    let a_dim = spec.action_dim();
    if let Some(i) = idx.iter().find(|&&i| i >= data.len() || data.actions[i].len() != a_dim) {
        return Err(invalid(format!("pair {i} is missing or has the wrong action width")));
    }
    let obs: Vec<&PointCloudObs> = idx.iter().map(|&i| &data.obs[i]).collect();
    let trace = spec.forward(params, &obs)?;
    let n = idx.len() as f64;
    let mut d_mean = vec![0.0; idx.len() * a_dim];
    let mut loss = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        for j in 0..a_dim {
            let e = trace.means()[k * a_dim + j] - data.actions[i][j];
            loss += e * e;
            d_mean[k * a_dim + j] = 2.0 * e / n;
        }
    }
    spec.backward(params, &trace, &d_mean, &vec![0.0; idx.len()], grad)?;
    Ok(loss / n)
}

/// Behaviour cloning on a fixed dataset. A step draws `S` pairs without
/// replacement from the current epoch's permutation; the last step of an
/// epoch takes whatever is left, so every epoch visits every pair once.
#[derive(Clone, Debug)]
pub struct BcTrainer {
    pub cfg: BcConfig,
    pub env: EnvConfig,
    pub policy: PolicySpec,
    pub data: DemoDataset,
}

impl BcTrainer {
    pub fn new(cfg: BcConfig, env: EnvConfig, data: DemoDataset) -> Result<Self> {
        cfg.validate()?;
        env.validate()?;
        if data.config_hash != env.hash() {
            return Err(invalid("demonstrations were recorded under a different task configuration"));
        }
        if cfg.samples_per_step > data.len() {
            return Err(invalid(format!(
                "samples per step {} exceeds the {} demonstration pairs",
                cfg.samples_per_step,
                data.len()
            )));
        }
        let policy = PolicySpec::default_for(env.task);
        Ok(Self { cfg, env, policy, data })
    }

    /// Pair order of `epoch` for a run whose generator has `seed`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        Generator::with_stream(seed, 1 + epoch).shuffle(&mut order);
        order
    }

    /// Indices drawn by the next step and the sampler position after it.
    pub fn draw(&self, seed: u64, sampler: SamplerState, samples: usize) -> (Vec<usize>, SamplerState) {
        let n = self.data.len() as u64;
        let order = self.epoch_order(seed, sampler.epoch);
        let start = sampler.cursor.min(n) as usize;
        let end = (start + samples).min(n as usize);
        let idx = order[start..end].to_vec();
        let next = if end as u64 >= n {
            SamplerState { epoch: sampler.epoch + 1, cursor: 0 }
        } else {
            SamplerState { epoch: sampler.epoch, cursor: end as u64 }
        };
        (idx, next)
    }
}

impl Trainer for BcTrainer {
    fn kind(&self) -> TrainerKind {
        TrainerKind::Bc
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

    fn step_cost(&self, _sizes: Sizes) -> u64 {
        1
    }

    fn check_sizes(&self, sizes: Sizes) -> Result<()> {
        if sizes.batch < 1 || sizes.batch > sizes.samples || sizes.samples > self.data.len() {
            return Err(invalid(format!(
                "need 1 <= batch {} <= samples {} <= pairs {}",
                sizes.batch,
                sizes.samples,
                self.data.len()
            )));
        }
        Ok(())
    }

    fn iterate(&self, state: &mut TrainState, sizes: Sizes) -> Result<()> {
        let (idx, next) = self.draw(state.gen.seed(), state.sampler, sizes.samples);
        let mut grad = vec![0.0; state.params.len()];
        for (k, chunk) in idx.chunks(sizes.batch).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = bc_loss(&self.policy, state.params.values(), &self.data, chunk, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::AbortUpdate { minibatch: k });
            }
            adam_step(state.params.values_mut(), &grad, &mut state.adam)?;
        }
        state.sampler = next;
        Ok(())
    }
}

pub fn train_bc(cfg: &BcConfig, data: DemoDataset, env: &EnvConfig, seed: u64, out: Option<&RunOutput>) -> Result<Vec<EvalRecord>> {
    let trainer = BcTrainer::new(cfg.clone(), env.clone(), data)?;
    let mut state = trainer.init_state(seed)?;
    train(&trainer, &mut state, out, |_| Flow::Continue)
}
