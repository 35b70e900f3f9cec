//! The loop shared by both trainers: iterate, evaluate on both splits,
//! log, checkpoint.

use std::path::{Path, PathBuf};

use crate::envs::{reset, EnvConfig, Split};
use crate::error::{invalid, Error, Result};
use crate::nn::{AdamState, ParamStore};
use crate::persistence::{
    append_metrics, load_checkpoint, now_seconds, save_checkpoint, Checkpoint, MetricsRecord, SamplerState,
    TrainerKind, TrendPoint,
};
use crate::policy::PolicySpec;
use crate::rng::Generator;

/// Minibatch size and samples per step, the pair the second stage rescales.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Sizes {
    pub batch: usize,
    pub samples: usize,
}

/// One evaluation of the deterministic policy on both splits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub train_success: f64,
    pub test_success: f64,
}

/// Mutable state of one run. Together with the trainer's configuration this
/// determines every future record.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ParamStore,
    pub adam: AdamState,
    pub gen: Generator,
    pub step: u64,
    pub sampler: SamplerState,
    pub last_eval: Option<EvalRecord>,
}

impl TrainState {
    pub fn to_checkpoint(&self, run_id: &str, kind: TrainerKind, env_hash: u64) -> Checkpoint {
        Checkpoint {
            run_id: run_id.to_string(),
            kind,
            step: self.step,
            env_hash,
            params: self.params.clone(),
            adam: self.adam.clone(),
            generator: self.gen.state(),
            sampler: self.sampler,
            rates: self.last_eval.map(|e| (e.train_success, e.test_success)),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Self {
            last_eval: ckpt.rates.map(|(tr, te)| EvalRecord { step: ckpt.step, train_success: tr, test_success: te }),
            params: ckpt.params,
            adam: ckpt.adam,
            gen: Generator::from_state(ckpt.generator),
            step: ckpt.step,
            sampler: ckpt.sampler,
        }
    }
}

/// What PPO and behaviour cloning have in common.
pub trait Trainer: Sync {
    fn kind(&self) -> TrainerKind;
    fn env(&self) -> &EnvConfig;
    fn policy(&self) -> &PolicySpec;
    fn base_sizes(&self) -> Sizes;
    fn lr(&self) -> f64;
    /// Training length in this trainer's step unit.
    fn total_steps(&self) -> u64;
    fn eval_period(&self) -> u64;
    fn eval_episodes(&self) -> usize;
    /// Steps one iteration with `sizes` advances the counter by.
    fn step_cost(&self, sizes: Sizes) -> u64;
    fn check_sizes(&self, sizes: Sizes) -> Result<()>;
    /// One iteration; must not touch `state.step`.
    fn iterate(&self, state: &mut TrainState, sizes: Sizes) -> Result<()>;

    fn init_state(&self, seed: u64) -> Result<TrainState> {
        let mut gen = Generator::new(seed);
        let params = self.policy().init(&mut gen)?;
        let adam = AdamState::new(params.len(), self.lr());
        Ok(TrainState { params, adam, gen, step: 0, sampler: SamplerState::default(), last_eval: None })
    }
}

/// Success rate of the mean policy over episodes `0..episodes` of `env`.
pub fn success_rate(spec: &PolicySpec, params: &[f64], env: &EnvConfig, episodes: usize) -> Result<f64> {
    if episodes == 0 {
        return Err(invalid("need at least one evaluation episode"));
    }
    let mut wins = 0;
    for ep in 0..episodes as u64 {
        let (mut state, mut obs) = reset(env, ep)?;
        while !state.done() {
            let a = spec.act_deterministic(params, &obs)?;
            obs = state.step(&a)?.obs;
        }
        wins += state.success() as usize;
    }
    Ok(wins as f64 / episodes as f64)
}

pub fn evaluate<T: Trainer + ?Sized>(trainer: &T, state: &TrainState) -> Result<EvalRecord> {
    let env = trainer.env();
    let n = trainer.eval_episodes();
    let p = state.params.values();
    Ok(EvalRecord {
        step: state.step,
        train_success: success_rate(trainer.policy(), p, &env.with_split(Split::Train), n)?,
        test_success: success_rate(trainer.policy(), p, &env.with_split(Split::Test), n)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Runs iterations while the next one fits under `until`, evaluating each
/// time the step counter crosses a multiple of the evaluation period.
/// `on_eval` sees every evaluation and may stop the run early.
pub fn advance<T, F>(trainer: &T, state: &mut TrainState, sizes: Sizes, until: u64, mut on_eval: F) -> Result<()>
where
    T: Trainer + ?Sized,
    F: FnMut(&TrainState, &EvalRecord) -> Result<Flow>,
{
    trainer.check_sizes(sizes)?;
    let period = trainer.eval_period();
    let cost = trainer.step_cost(sizes);
    while state.step + cost <= until {
        let before = state.step / period;
        trainer.iterate(state, sizes)?;
        state.step += cost;
        if state.step / period > before {
            let rec = evaluate(trainer, state)?;
            state.last_eval = Some(rec);
            if on_eval(state, &rec)? == Flow::Stop {
                break;
            }
        }
    }
    Ok(())
}

/// Where a run writes its metrics and checkpoints.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub run_id: String,
}

impl RunOutput {
    pub fn new(dir: impl Into<PathBuf>, run_id: impl Into<String>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, run_id: run_id.into() })
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.dir.join(format!("ckpt-{step}.bin"))
    }

    /// Logs `rec` (at `logged_step`) and checkpoints `state`.
    pub fn record<T: Trainer + ?Sized>(
        &self,
        trainer: &T,
        state: &TrainState,
        rec: &EvalRecord,
        logged_step: u64,
        stage: u8,
    ) -> Result<()> {
        append_metrics(
            &self.metrics_path(),
            &MetricsRecord {
                step: logged_step,
                train_success: rec.train_success,
                test_success: rec.test_success,
                stage,
                wall_clock: now_seconds(),
            },
        )?;
        let ckpt = state.to_checkpoint(&self.run_id, trainer.kind(), trainer.env().hash());
        save_checkpoint(&self.checkpoint_path(state.step), &ckpt)
    }
}

pub fn to_trend(history: &[EvalRecord], stage: u8) -> Vec<TrendPoint> {
    history
        .iter()
        .map(|e| TrendPoint { step: e.step, train_success: e.train_success, test_success: e.test_success, stage })
        .collect()
}

/// Evaluates `state` at its current step, records it and continues to the
/// trainer's total step count with the base sizes. Returns every evaluation,
/// the initial one included.
pub fn train<T, F>(trainer: &T, state: &mut TrainState, out: Option<&RunOutput>, mut on_eval: F) -> Result<Vec<EvalRecord>>
where
    T: Trainer + ?Sized,
    F: FnMut(&EvalRecord) -> Flow,
{
    let mut history = Vec::new();
    if state.last_eval.map(|e| e.step) != Some(state.step) {
        let rec = evaluate(trainer, state)?;
        state.last_eval = Some(rec);
        if let Some(o) = out {
            o.record(trainer, state, &rec, rec.step, 1)?;
        }
        history.push(rec);
        if on_eval(&rec) == Flow::Stop {
            return Ok(history);
        }
    }
    advance(trainer, state, trainer.base_sizes(), trainer.total_steps(), |st, rec| {
        if let Some(o) = out {
            o.record(trainer, st, rec, rec.step, 1)?;
        }
        history.push(*rec);
        Ok(on_eval(rec))
    })?;
    Ok(history)
}

/// Restores a run from a checkpoint written by this trainer's configuration.
pub fn resume<T: Trainer + ?Sized>(trainer: &T, path: &Path) -> Result<TrainState> {
    let ckpt = match load_checkpoint(path) {
        Err(Error::NotFound(p)) => return Err(Error::Resume(format!("checkpoint {} does not exist", p.display()))),
        other => other?,
    };
    if ckpt.kind != trainer.kind() {
        return Err(Error::Resume(format!("checkpoint is from a {} run", ckpt.kind.name())));
    }
    if ckpt.env_hash != trainer.env().hash() {
        return Err(Error::Resume("checkpoint was written for a different environment configuration".into()));
    }
    if ckpt.params.len() != trainer.policy().param_count() {
        return Err(Error::Resume("checkpoint parameters do not fit this policy".into()));
    }
    Ok(TrainState::from_checkpoint(ckpt))
}
