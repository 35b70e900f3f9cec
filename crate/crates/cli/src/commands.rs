use std::fs;
use std::path::Path;

use twostage::bc::{BcTrainer, DemoDataset};
use twostage::envs::{generate_demos, load_demos, save_demos, EnvConfig, Split};
use twostage::persistence::{
    append_metrics, export_table, export_trendline, load_checkpoint, now_seconds, read_metrics, MetricsRecord,
    TrendPoint,
};
use twostage::ppo::PpoTrainer;
use twostage::schedule::{grid_search, recommend_scales, run_two_stage};
use twostage::train::{success_rate, to_trend, train, Flow, RunOutput, Trainer};

use crate::config::Resolved;
use crate::{Cli, CliError, Command};

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Train => "train",
        Command::TrainBc => "train-bc",
        Command::GenDemos => "gen-demos",
        Command::TwoStage => "two-stage",
        Command::Grid => "grid",
        Command::Eval => "eval",
        Command::Export => "export",
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = Resolved::load(&cli.config, &cli.overrides)?;
    if cli.workers == 0 {
        return Err(CliError::Config("--workers must be positive".into()));
    }
    cfg.check()?;
    let env = cfg.env()?;
    fs::create_dir_all(&cli.out).map_err(twostage::Error::from)?;
    fs::write(cli.out.join("manifest.conf"), cfg.manifest(command_name(cli.command), cli.seed))
        .map_err(twostage::Error::from)?;
    match cli.command {
        Command::Train => {
            let trainer = ppo_trainer(&cfg, env)?;
            train_and_report(&trainer, cli.seed, &cli.out)
        }
        Command::TrainBc => {
            let trainer = bc_trainer(&cfg, env, &cli.out)?;
            train_and_report(&trainer, cli.seed, &cli.out)
        }
        Command::GenDemos => {
            let demos = generate_demos(&env, cfg.demo_episodes()?, cfg.keep_only_success()?)?;
            let path = cli.out.join("demos.bin");
            save_demos(&path, &env, &demos)?;
            let pairs: usize = demos.iter().map(|d| d.len()).sum();
            println!("{} trajectories, {pairs} pairs -> {}", demos.len(), path.display());
            Ok(())
        }
        Command::TwoStage => {
            let trainer = scheduled_trainer(&cfg, env, &cli.out)?;
            let plan = cfg.plan()?;
            plan.validate(trainer.eval_period()).map_err(|e| CliError::Config(format!("[schedule]: {e}")))?;
            let run = run_two_stage(&*trainer, cfg.scales()?, &plan, cli.seed, &cli.out)?;
            let best = run.stage_one.best;
            let rec = run.stage_two.record;
            println!("stage one best: step {} train {} test {}", best.step, best.train_success, best.test_success);
            println!(
                "stage two (batch {}, samples {}): train {} test {}",
                rec.sizes.batch, rec.sizes.samples, rec.train_success, rec.test_success
            );
            Ok(())
        }
        Command::Grid => {
            let trainer = scheduled_trainer(&cfg, env, &cli.out)?;
            let grid = cfg.grid(cli.seed)?;
            grid.plan.validate(trainer.eval_period()).map_err(|e| CliError::Config(format!("[schedule]: {e}")))?;
            let rows = grid_search(&*trainer, &grid, &cli.out, cli.workers)?;
            export_table(&rows, &cli.out.join("table.csv"))?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            let best = recommend_scales(&rows)?;
            println!("{} rows ({failed} failed); recommended alpha {} beta {}", rows.len(), best.alpha, best.beta);
            Ok(())
        }
        Command::Eval => evaluate_checkpoint(&cfg, env, cli),
        Command::Export => {
            let mut points: Vec<TrendPoint> = Vec::new();
            for path in cfg.export_metrics()? {
                points.extend(read_metrics(&path)?.iter().map(|r| TrendPoint {
                    step: r.step,
                    train_success: r.train_success,
                    test_success: r.test_success,
                    stage: r.stage,
                }));
            }
            let path = cli.out.join("trendline.csv");
            export_trendline(&points, &path)?;
            println!("{} points -> {}", points.len(), path.display());
            Ok(())
        }
    }
}

fn ppo_trainer(cfg: &Resolved, env: EnvConfig) -> Result<PpoTrainer, CliError> {
    let mut trainer = PpoTrainer::new(cfg.ppo()?, env)?;
    trainer.policy = cfg.policy(trainer.env.task)?;
    Ok(trainer)
}

/// Demos from `demos.path`, or freshly generated ones saved to `out/demos.bin`.
fn bc_trainer(cfg: &Resolved, env: EnvConfig, out: &Path) -> Result<BcTrainer, CliError> {
    let data = match cfg.demo_path() {
        Some(path) => {
            let file = load_demos(&path)?;
            file.check_config(&env)?;
            DemoDataset::from_file(&file)?
        }
        None => {
            let demos = generate_demos(&env, cfg.demo_episodes()?, cfg.keep_only_success()?)?;
            save_demos(&out.join("demos.bin"), &env, &demos)?;
            DemoDataset::from_trajectories(&demos, env.hash())?
        }
    };
    let mut trainer = BcTrainer::new(cfg.bc()?, env, data)?;
    trainer.policy = cfg.policy(trainer.env.task)?;
    Ok(trainer)
}

fn scheduled_trainer(cfg: &Resolved, env: EnvConfig, out: &Path) -> Result<Box<dyn Trainer>, CliError> {
    Ok(match cfg.schedule_trainer()? {
        "ppo" => Box::new(ppo_trainer(cfg, env)?),
        _ => Box::new(bc_trainer(cfg, env, out)?),
    })
}

fn train_and_report<T: Trainer>(trainer: &T, seed: u64, out: &Path) -> Result<(), CliError> {
    let run = RunOutput::new(out, format!("{}-seed{seed}", trainer.kind().name()))?;
    let mut state = trainer.init_state(seed)?;
    let history = train(trainer, &mut state, Some(&run), |_| Flow::Continue)?;
    export_trendline(&to_trend(&history, 1), &out.join("trendline.csv"))?;
    let last = history.last().expect("train evaluates at least once");
    println!("step {} train {} test {}", last.step, last.train_success, last.test_success);
    Ok(())
}

fn evaluate_checkpoint(cfg: &Resolved, env: EnvConfig, cli: &Cli) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&cfg.eval_checkpoint()?)?;
    if ckpt.env_hash != env.hash() {
        return Err(CliError::Config(format!(
            "checkpoint was trained under config {:016x}, [env] resolves to {:016x}",
            ckpt.env_hash,
            env.hash()
        )));
    }
    let spec = cfg.policy(env.task)?;
    if ckpt.params.len() != spec.param_count() {
        return Err(CliError::Config(format!(
            "checkpoint holds {} parameters, [encoder] describes {}",
            ckpt.params.len(),
            spec.param_count()
        )));
    }
    let episodes = cfg.eval_episodes()?;
    let rate = |split| success_rate(&spec, ckpt.params.values(), &env.with_split(split), episodes);
    let (train_success, test_success) = (rate(Split::Train)?, rate(Split::Test)?);
    let record = MetricsRecord { step: ckpt.step, train_success, test_success, stage: 1, wall_clock: now_seconds() };
    append_metrics(&cli.out.join("metrics.jsonl"), &record)?;
    println!("step {} over {episodes} episodes: train {train_success} test {test_success}", ckpt.step);
    Ok(())
}
