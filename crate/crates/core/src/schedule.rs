//! Two-stage fine-tuning: train, pick the checkpoint with the best test
//! success, resume from it with a smaller minibatch and fewer samples per
//! step. Also the sweep over scale pairs that fills a results table.

use std::path::{Path, PathBuf};

use crate::error::{invalid, Error, Result};
use crate::persistence::{export_trendline, TableRow, TrendPoint};
use crate::train::{advance, resume, to_trend, EvalRecord, Flow, RunOutput, Sizes, TrainState, Trainer};

/// Scale factors for the minibatch size (`alpha`) and samples per step (`beta`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalePair {
    pub alpha: f64,
    pub beta: f64,
}

impl ScalePair {
    pub const IDENTITY: ScalePair = ScalePair { alpha: 1.0, beta: 1.0 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{name} = {v} outside (0, 1]")));
            }
        }
        Ok(Self { alpha, beta })
    }
}

/// `max(1, round_half_up(scale * n))`.
fn scale_count(n: usize, scale: f64) -> usize {
    ((scale * n as f64 + 0.5).floor() as usize).max(1)
}

/// Scaled `(batch, samples)`; the batch is capped at the sample count.
pub fn scale_hyperparams(batch: usize, samples: usize, scales: ScalePair) -> (usize, usize) {
    let s = scale_count(samples, scales.beta);
    let b = scale_count(batch, scales.alpha).min(s);
    (b, s)
}

pub fn scale_sizes(base: Sizes, scales: ScalePair) -> Sizes {
    let (batch, samples) = scale_hyperparams(base.batch, base.samples, scales);
    Sizes { batch, samples }
}

/// The evaluation with the highest test success (earliest on ties).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestTracker {
    pub step: u64,
    pub train_success: f64,
    pub test_success: f64,
}

impl BestTracker {
    /// File name of the checkpoint written at the best evaluation.
    pub fn checkpoint_id(&self) -> String {
        format!("ckpt-{}.bin", self.step)
    }
}

pub fn track_best(history: &[EvalRecord]) -> Result<BestTracker> {
    let mut it = history.iter();
    let first = it.next().ok_or_else(|| invalid("no evaluations to choose from"))?;
    let mut best = *first;
    for e in it {
        if e.test_success > best.test_success {
            best = *e;
        }
    }
    Ok(BestTracker { step: best.step, train_success: best.train_success, test_success: best.test_success })
}

/// Stage lengths and resume options.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoStagePlan {
    /// Upper bound on stage one, in trainer steps.
    pub stage1_budget: u64,
    /// Stage one also ends after this many evaluations without a new best
    /// test success. Zero disables the rule.
    pub patience: usize,
    pub stage2_steps: u64,
    /// Start stage two with fresh optimizer moments.
    pub reset_optimizer: bool,
}

impl TwoStagePlan {
    pub fn validate(&self, eval_period: u64) -> Result<()> {
        if self.stage1_budget < eval_period {
            return Err(invalid(format!("stage one budget {} is shorter than the evaluation period {eval_period}", self.stage1_budget)));
        }
        if self.stage2_steps != 0 && self.stage2_steps < eval_period {
            return Err(invalid(format!("stage two length {} is shorter than the evaluation period {eval_period}", self.stage2_steps)));
        }
        Ok(())
    }
}

/// Outcome of stage one.
#[derive(Clone, Debug)]
pub struct StageOne {
    pub history: Vec<EvalRecord>,
    pub best: BestTracker,
    pub best_checkpoint: PathBuf,
    /// State where stage one stopped.
    pub final_state: TrainState,
}

impl StageOne {
    pub fn end_step(&self) -> u64 {
        self.final_state.step
    }
}

/// Trains with the base sizes until the budget or until test success stalls
/// for `plan.patience` evaluations. Every evaluation is checkpointed in `out`.
pub fn run_stage_one<T: Trainer + ?Sized>(trainer: &T, seed: u64, plan: &TwoStagePlan, out: &RunOutput) -> Result<StageOne> {
    plan.validate(trainer.eval_period())?;
    let mut state = trainer.init_state(seed)?;
    let mut history = Vec::new();
    let rec = crate::train::evaluate(trainer, &state)?;
    state.last_eval = Some(rec);
    out.record(trainer, &state, &rec, rec.step, 1)?;
    history.push(rec);
    let mut best = rec.test_success;
    let mut stale = 0;
    advance(trainer, &mut state, trainer.base_sizes(), plan.stage1_budget, |st, rec| {
        out.record(trainer, st, rec, rec.step, 1)?;
        history.push(*rec);
        if rec.test_success > best {
            best = rec.test_success;
            stale = 0;
        } else {
            stale += 1;
        }
        Ok(if plan.patience > 0 && stale >= plan.patience { Flow::Stop } else { Flow::Continue })
    })?;
    let best = track_best(&history)?;
    Ok(StageOne { best_checkpoint: out.dir.join(best.checkpoint_id()), history, best, final_state: state })
}

/// One finished configuration: a table row before numbering.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub scales: ScalePair,
    pub sizes: Sizes,
    pub train_success: f64,
    pub test_success: f64,
    pub seed: u64,
    pub stage2_steps: u64,
}

/// Stage two and what it produced.
#[derive(Clone, Debug)]
pub struct StageTwo {
    /// Stage-two evaluations with steps on the combined axis.
    pub history: Vec<EvalRecord>,
    pub record: RunRecord,
    pub final_state: TrainState,
}

fn best_or(history: &[EvalRecord], fallback: BestTracker) -> Result<BestTracker> {
    if history.is_empty() {
        Ok(fallback)
    } else {
        track_best(history)
    }
}

/// Resumes from stage one's best checkpoint (parameters, optimizer moments
/// and generator) and trains `stage2_steps` more steps with scaled sizes.
/// Logged steps continue from the end of stage one.
pub fn run_stage_two<T: Trainer + ?Sized>(
    trainer: &T,
    stage_one: &StageOne,
    scales: ScalePair,
    plan: &TwoStagePlan,
    seed: u64,
    out: Option<&RunOutput>,
) -> Result<StageTwo> {
    let mut state = resume(trainer, &stage_one.best_checkpoint)?;
    if state.step != stage_one.best.step {
        return Err(Error::Resume(format!(
            "checkpoint {} holds step {}, expected {}",
            stage_one.best_checkpoint.display(),
            state.step,
            stage_one.best.step
        )));
    }
    if plan.reset_optimizer {
        state.adam.reset();
    }
    let sizes = scale_sizes(trainer.base_sizes(), scales);
    let offset = stage_one.end_step() - stage_one.best.step;
    let mut history = Vec::new();
    advance(trainer, &mut state, sizes, stage_one.best.step + plan.stage2_steps, |st, rec| {
        let shifted = EvalRecord { step: rec.step + offset, ..*rec };
        if let Some(o) = out {
            o.record(trainer, st, rec, shifted.step, 2)?;
        }
        history.push(shifted);
        Ok(Flow::Continue)
    })?;
    let best = best_or(&history, stage_one.best)?;
    Ok(StageTwo {
        record: RunRecord {
            scales,
            sizes,
            train_success: best.train_success,
            test_success: best.test_success,
            seed,
            stage2_steps: plan.stage2_steps,
        },
        history,
        final_state: state,
    })
}

/// The single-stage comparison: stage one's final state keeps training with
/// the base sizes for `stage2_steps`, with no restart. Reports the best
/// evaluation in that window (the last stage-one evaluation if none).
pub fn run_baseline<T: Trainer + ?Sized>(
    trainer: &T,
    stage_one: &StageOne,
    plan: &TwoStagePlan,
    seed: u64,
    out: Option<&RunOutput>,
) -> Result<StageTwo> {
    let mut state = stage_one.final_state.clone();
    let start = state.step;
    let mut history = Vec::new();
    advance(trainer, &mut state, trainer.base_sizes(), start + plan.stage2_steps, |st, rec| {
        if let Some(o) = out {
            o.record(trainer, st, rec, rec.step, 1)?;
        }
        history.push(*rec);
        Ok(Flow::Continue)
    })?;
    let last = stage_one.history.last().expect("stage one always evaluates");
    let fallback = BestTracker { step: last.step, train_success: last.train_success, test_success: last.test_success };
    let best = best_or(&history, fallback)?;
    Ok(StageTwo {
        record: RunRecord {
            scales: ScalePair::IDENTITY,
            sizes: trainer.base_sizes(),
            train_success: best.train_success,
            test_success: best.test_success,
            seed,
            stage2_steps: plan.stage2_steps,
        },
        history,
        final_state: state,
    })
}

/// Result of [`run_two_stage`].
#[derive(Clone, Debug)]
pub struct TwoStageRun {
    pub stage_one: StageOne,
    pub stage_two: StageTwo,
    /// Both stages on one step axis, each point tagged with its stage.
    pub combined: Vec<TrendPoint>,
}

/// Stage one in `dir/stage1`, stage two in `dir/stage2`, and the combined
/// trend line in `dir/trendline.csv`.
pub fn run_two_stage<T: Trainer + ?Sized>(
    trainer: &T,
    scales: ScalePair,
    plan: &TwoStagePlan,
    seed: u64,
    dir: &Path,
) -> Result<TwoStageRun> {
    let s1 = run_stage_one(trainer, seed, plan, &RunOutput::new(dir.join("stage1"), format!("seed{seed}-stage1"))?)?;
    let out2 = RunOutput::new(dir.join("stage2"), format!("seed{seed}-stage2"))?;
    let s2 = run_stage_two(trainer, &s1, scales, plan, seed, Some(&out2))?;
    let mut combined = to_trend(&s1.history, 1);
    combined.extend(to_trend(&s2.history, 2));
    export_trendline(&combined, &dir.join("trendline.csv"))?;
    Ok(TwoStageRun { stage_one: s1, stage_two: s2, combined })
}

/// The sweep: scale lists, seeds and stage lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub plan: TwoStagePlan,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.betas.is_empty() {
            return Err(invalid("scale lists must be non-empty"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("grid needs at least one seed"));
        }
        for &a in &self.alphas {
            for &b in &self.betas {
                ScalePair::new(a, b)?;
            }
        }
        Ok(())
    }

    /// Cells in table order: for each beta in list order, alphas from
    /// largest to smallest.
    pub fn cells(&self) -> Vec<ScalePair> {
        let mut alphas = self.alphas.clone();
        alphas.sort_by(|a, b| b.total_cmp(a));
        self.betas.iter().flat_map(|&beta| alphas.iter().map(move |&alpha| ScalePair { alpha, beta })).collect()
    }
}

/// Runs the sweep under `dir`. Each seed trains stage one once; its
/// baseline and every cell branch from that shared run. Rows come back in
/// table order (baselines, then cells by [`GridSpec::cells`], seeds
/// innermost). A failing run becomes a failed row; the sweep goes on.
pub fn grid_search<T: Trainer + ?Sized>(trainer: &T, grid: &GridSpec, dir: &Path, workers: usize) -> Result<Vec<TableRow>> {
    grid.validate()?;
    grid.plan.validate(trainer.eval_period())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot start {workers} workers: {e}")))?;
    let base = trainer.base_sizes();
    let seed_dir = |seed: u64| dir.join(format!("seed-{seed}"));

    let stage_ones: Vec<Result<StageOne>> = pool.install(|| {
        use rayon::prelude::*;
        grid.seeds
            .par_iter()
            .map(|&seed| {
                let out = RunOutput::new(seed_dir(seed).join("stage1"), format!("seed{seed}-stage1"))?;
                run_stage_one(trainer, seed, &grid.plan, &out)
            })
            .collect()
    });

    let mut jobs: Vec<(Option<ScalePair>, usize)> = (0..grid.seeds.len()).map(|i| (None, i)).collect();
    for cell in grid.cells() {
        jobs.extend((0..grid.seeds.len()).map(|i| (Some(cell), i)));
    }
    let outcomes: Vec<Result<RunRecord>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(cell, i)| {
                let seed = grid.seeds[i];
                let s1 = stage_ones[i].as_ref().map_err(|e| Error::Resume(format!("stage one failed: {e}")))?;
                match cell {
                    None => {
                        let out = RunOutput::new(seed_dir(seed).join("baseline"), format!("seed{seed}-baseline"))?;
                        Ok(run_baseline(trainer, s1, &grid.plan, seed, Some(&out))?.record)
                    }
                    Some(sc) => {
                        let name = format!("a{}-b{}", sc.alpha, sc.beta);
                        let out = RunOutput::new(seed_dir(seed).join(&name), format!("seed{seed}-{name}"))?;
                        Ok(run_stage_two(trainer, s1, sc, &grid.plan, seed, Some(&out))?.record)
                    }
                }
            })
            .collect()
    });

    Ok(jobs
        .iter()
        .zip(outcomes)
        .enumerate()
        .map(|(row, (&(cell, i), outcome))| {
            let scales = cell.unwrap_or(ScalePair::IDENTITY);
            let sizes = if cell.is_some() { scale_sizes(base, scales) } else { base };
            TableRow {
                row: row + 1,
                alpha: scales.alpha,
                beta: scales.beta,
                batch: sizes.batch,
                samples: sizes.samples,
                seed: grid.seeds[i],
                stage2_steps: grid.plan.stage2_steps,
                outcome: outcome.map(|r| (r.train_success, r.test_success)).map_err(|e| e.to_string()),
            }
        })
        .collect())
}

/// The scale pair with the highest mean test success over seeds; ties go
/// to the larger alpha, then the larger beta. Failed rows are ignored.
pub fn recommend_scales(rows: &[TableRow]) -> Result<ScalePair> {
    let mut groups: Vec<(ScalePair, f64, usize)> = Vec::new();
    for r in rows {
        let Ok((_, test)) = r.outcome else { continue };
        let key = ScalePair { alpha: r.alpha, beta: r.beta };
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => {
                g.1 += test;
                g.2 += 1;
            }
            None => groups.push((key, test, 1)),
        }
    }
    groups
        .into_iter()
        .map(|(k, sum, n)| (k, sum / n as f64))
        .max_by(|a, b| {
            a.1.total_cmp(&b.1).then(a.0.alpha.total_cmp(&b.0.alpha)).then(a.0.beta.total_cmp(&b.0.beta))
        })
        .map(|(k, _)| k)
        .ok_or_else(|| invalid("no successful rows to recommend from"))
}
