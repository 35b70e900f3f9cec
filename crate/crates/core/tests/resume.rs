//! A run restored from an evaluation checkpoint must log exactly what the
//! uninterrupted run logged after that point.

use twostage::bc::{BcConfig, BcTrainer, DemoDataset};
use twostage::envs::{generate_demos, EnvConfig, TaskId};
use twostage::persistence::read_metrics;
use twostage::ppo::{PpoConfig, PpoTrainer};
use twostage::train::{resume, train, Flow, RunOutput, Trainer};
use twostage::Error;

fn check_resume<T: Trainer>(trainer: &T, seed: u64, resume_step: u64, further: usize) {
    let dir = tempfile::tempdir().unwrap();
    let full = RunOutput::new(dir.path().join("full"), "full").unwrap();
    let mut st = trainer.init_state(seed).unwrap();
    train(trainer, &mut st, Some(&full), |_| Flow::Continue).unwrap();
    let reference = read_metrics(&full.metrics_path()).unwrap();

    let mut resumed = resume(trainer, &full.checkpoint_path(resume_step)).unwrap();
    assert_eq!(resumed.step, resume_step);
    let part = RunOutput::new(dir.path().join("part"), "part").unwrap();
    train(trainer, &mut resumed, Some(&part), |_| Flow::Continue).unwrap();
    let tail = read_metrics(&part.metrics_path()).unwrap();

    let expected: Vec<_> = reference.iter().filter(|r| r.step > resume_step).map(|r| r.key()).collect();
    assert!(expected.len() >= further, "only {} evaluations after the resume point", expected.len());
    assert_eq!(tail.iter().map(|r| r.key()).collect::<Vec<_>>(), expected);
    assert_eq!(resumed.params, st.params);
    assert_eq!(resumed.adam, st.adam);
    assert_eq!(resumed.gen.state(), st.gen.state());
}

#[test]
fn ppo_resume_is_exact() {
    let cfg = PpoConfig { samples_per_step: 256, batch: 64, total_steps: 256 * 6, eval_period: 256, eval_episodes: 2, ..PpoConfig::default() };
    let trainer = PpoTrainer::new(cfg, EnvConfig::new(TaskId::Reach2d)).unwrap();
    check_resume(&trainer, 3, 512, 3);
}

#[test]
fn bc_resume_is_exact() {
    let env = EnvConfig::new(TaskId::Reach2d);
    let demos = generate_demos(&env, 4, true).unwrap();
    let data = DemoDataset::from_trajectories(&demos, env.hash()).unwrap();
    // 40 pairs per step over a dataset that is not a multiple of 40, so the
    // resume point sits mid-epoch.
    let cfg = BcConfig { batch: 16, samples_per_step: 40, total_steps: 30, eval_period: 5, eval_episodes: 2, lr: 1e-3 };
    let trainer = BcTrainer::new(cfg, env, data).unwrap();
    check_resume(&trainer, 8, 10, 3);
}

#[test]
fn resume_checks_the_checkpoint_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PpoConfig { samples_per_step: 64, batch: 32, total_steps: 64, eval_period: 64, eval_episodes: 1, ..PpoConfig::default() };
    let reach = PpoTrainer::new(cfg.clone(), EnvConfig::new(TaskId::Reach2d)).unwrap();
    let out = RunOutput::new(dir.path(), "r").unwrap();
    let mut st = reach.init_state(0).unwrap();
    train(&reach, &mut st, Some(&out), |_| Flow::Continue).unwrap();

    let path = out.checkpoint_path(64);
    let other_env = EnvConfig { seed: 99, ..EnvConfig::new(TaskId::Reach2d) };
    let mismatched = PpoTrainer::new(cfg, other_env).unwrap();
    assert!(matches!(resume(&mismatched, &path), Err(Error::Resume(_))));
    assert!(matches!(resume(&reach, &dir.path().join("ckpt-999.bin")), Err(Error::Resume(_))));
    assert!(resume(&reach, &path).is_ok());
}
