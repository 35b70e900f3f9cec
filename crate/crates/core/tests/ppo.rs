use proptest::prelude::*;
use twostage::envs::{reset, EnvConfig, TaskId};
use twostage::nn::fd::{finite_diff_grad, max_relative_error};
use twostage::ppo::*;
use twostage::policy::PolicySpec;
use twostage::rng::Generator;

fn random_buffer(g: &mut Generator, n: usize, done_prob: f64) -> RolloutBuffer {
    RolloutBuffer {
        rewards: (0..n).map(|_| g.uniform_in(-1.0, 1.0)).collect(),
        values: (0..n).map(|_| g.uniform_in(-1.0, 1.0)).collect(),
        dones: (0..n).map(|_| g.uniform() < done_prob).collect(),
        last_value: g.uniform_in(-1.0, 1.0),
        ..Default::default()
    }
}

/// `sum_k (gamma lambda)^k delta_{t+k}`, stopping after the first done.
fn brute_force_advantages(buf: &RolloutBuffer, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = buf.len();
    let value_after = |t: usize| if t + 1 < n { buf.values[t + 1] } else { buf.last_value };
    let delta = |t: usize| {
        let live = if buf.dones[t] { 0.0 } else { 1.0 };
        buf.rewards[t] + gamma * value_after(t) * live - buf.values[t]
    };
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for k in t..n {
                sum += w * delta(k);
                if buf.dones[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

#[test]
fn gae_matches_brute_force_on_grid() {
    let grid = [0.0, 0.5, 0.95, 1.0];
    let mut g = Generator::new(17);
    for _ in 0..100 {
        let base = random_buffer(&mut g, 10, 0.2);
        for &gamma in &grid {
            for &lambda in &grid {
                let mut buf = base.clone();
                compute_gae(&mut buf, gamma, lambda, false);
                let oracle = brute_force_advantages(&base, gamma, lambda);
                for t in 0..10 {
                    assert!((buf.advantages[t] - oracle[t]).abs() <= 1e-10, "gamma {gamma} lambda {lambda} t {t}");
                    assert_eq!(buf.returns[t], buf.advantages[t] + buf.values[t]);
                }
            }
        }
    }
}

#[test]
fn gae_lambda_zero_is_one_step_error() {
    let mut g = Generator::new(2);
    let base = random_buffer(&mut g, 10, 0.3);
    let mut buf = base.clone();
    compute_gae(&mut buf, 0.9, 0.0, false);
    for t in 0..10 {
        let next = if t + 1 < 10 { base.values[t + 1] } else { base.last_value };
        let live = if base.dones[t] { 0.0 } else { 1.0 };
        let delta = base.rewards[t] + 0.9 * next * live - base.values[t];
        assert!((buf.advantages[t] - delta).abs() < 1e-12);
    }
}

#[test]
fn gae_undiscounted_zero_value_is_reward_to_go() {
    let mut buf = RolloutBuffer {
        rewards: vec![1.0, 2.0, 3.0, 4.0],
        values: vec![0.0; 4],
        dones: vec![false, false, false, true],
        ..Default::default()
    };
    compute_gae(&mut buf, 1.0, 1.0, false);
    assert_eq!(buf.advantages, vec![10.0, 9.0, 7.0, 4.0]);
}

#[test]
fn normalisation_gives_zero_mean_unit_variance() {
    let mut g = Generator::new(8);
    let mut xs: Vec<f64> = (0..500).map(|_| g.uniform_in(-3.0, 7.0)).collect();
    normalize_in_place(&mut xs);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() <= 1e-10);
    assert!((var - 1.0).abs() <= 1e-8);
}

#[test]
fn normalising_a_single_value_leaves_it() {
    let mut xs = [3.5];
    normalize_in_place(&mut xs);
    assert_eq!(xs, [3.5]);
}

fn reach_setup(samples: usize, seed: u64) -> (PolicySpec, Vec<f64>, EnvConfig, RolloutBuffer) {
    let env = EnvConfig::new(TaskId::Reach2d);
    let spec = PolicySpec::default_for(env.task);
    let mut gen = Generator::new(seed);
    let params = spec.init(&mut gen).unwrap().values().to_vec();
    let mut buf = collect_rollout(&spec, &params, &env, samples, &mut gen).unwrap();
    compute_gae(&mut buf, 0.99, 0.95, true);
    (spec, params, env, buf)
}

#[test]
fn rollout_has_exactly_s_transitions() {
    let (_, _, _, buf) = reach_setup(250, 0);
    assert_eq!(buf.len(), 250);
    for v in [buf.obs.len(), buf.actions.len(), buf.log_probs.len(), buf.values.len(), buf.dones.len(), buf.advantages.len()] {
        assert_eq!(v, 250);
    }
    // Episodes never outlast the horizon of 100.
    let ends: Vec<usize> = (0..250).filter(|&t| buf.dones[t]).collect();
    let mut start = 0;
    for &e in &ends {
        assert!(e + 1 - start <= 100);
        start = e + 1;
    }
    assert_eq!(buf.episodes_finished, ends.len());
}

#[test]
fn rollout_replays_from_episode_seeds() {
    let (_, _, env, buf) = reach_setup(300, 3);
    let mut ep = 0;
    let (mut state, mut obs) = reset(&env, buf.episode_seeds[0]).unwrap();
    for t in 0..buf.len() {
        assert_eq!(obs, buf.obs[t], "observation {t}");
        let a: Vec<f64> = buf.actions[t].iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        let r = state.step(&a).unwrap();
        assert_eq!(r.reward, buf.rewards[t], "reward {t}");
        assert_eq!(r.done, buf.dones[t], "done {t}");
        obs = r.obs;
        if r.done {
            ep += 1;
            (state, obs) = reset(&env, buf.episode_seeds[ep]).unwrap();
        }
    }
}

#[test]
fn horizon_sized_deterministic_rollout_is_one_episode() {
    let env = EnvConfig::new(TaskId::Reach2d);
    let spec = PolicySpec::default_for(env.task);
    let mut gen = Generator::new(1);
    let mut params = spec.init(&mut gen).unwrap().values().to_vec();
    params[spec.layout().log_std].iter_mut().for_each(|v| *v = -20.0);
    let buf = collect_rollout(&spec, &params, &env, env.horizon, &mut gen).unwrap();
    let (mut state, mut obs) = reset(&env, buf.episode_seeds[0]).unwrap();
    // log_std = -20 leaves noise of order 1e-9 in the sampled actions.
    for t in 0..env.horizon {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6);
        assert!(close(&obs.points, &buf.obs[t].points) && close(&obs.proprio, &buf.obs[t].proprio), "step {t}");
        let a = spec.act_deterministic(&params, &obs).unwrap();
        obs = state.step(&a).unwrap().obs;
    }
    // A random initial policy does not reach the goal, so the episode runs
    // to the horizon and only the last transition is terminal.
    assert!(buf.dones[..env.horizon - 1].iter().all(|d| !d));
    assert!(buf.dones[env.horizon - 1]);
    assert_eq!(buf.episodes_finished, 1);
    assert_eq!(buf.last_value, 0.0);
}

#[test]
fn unchanged_parameters_give_unit_ratios() {
    let (spec, params, _, buf) = reach_setup(128, 4);
    let cfg = PpoConfig::default();
    let idx: Vec<usize> = (0..64).collect();
    let mut grad = vec![0.0; params.len()];
    let loss = ppo_loss(&spec, &params, &buf, &idx, &cfg, &mut grad).unwrap();
    assert_eq!(loss.approx_kl, 0.0);
    assert_eq!(loss.clip_fraction, 0.0);
    let mean_adv = idx.iter().map(|&i| buf.advantages[i]).sum::<f64>() / 64.0;
    assert!((loss.policy + mean_adv).abs() < 1e-12);
}

#[test]
fn zero_clip_freezes_the_policy() {
    let (spec, params, _, buf) = reach_setup(64, 5);
    let cfg = PpoConfig { clip: 0.0, value_coef: 0.0, entropy_coef: 0.0, ..PpoConfig::default() };
    let idx: Vec<usize> = (0..64).collect();
    let mut grad = vec![0.0; params.len()];
    let loss = ppo_loss(&spec, &params, &buf, &idx, &cfg, &mut grad).unwrap();
    assert!(grad.iter().all(|&g| g == 0.0));
    let mean_adv = idx.iter().map(|&i| buf.advantages[i]).sum::<f64>() / 64.0;
    assert!((loss.policy + mean_adv).abs() < 1e-12);
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let (spec, params, _, buf) = reach_setup(4, 6);
    // Move away from the collection parameters so ratios differ from one.
    let mut g = Generator::new(60);
    let mut store = spec.init(&mut Generator::new(6)).unwrap();
    assert_eq!(store.values(), &params[..]);
    for v in store.values_mut() {
        *v += 0.01 * g.normal();
    }
    let cfg = PpoConfig::default();
    let idx = [0, 1, 2, 3];
    let mut analytic = vec![0.0; params.len()];
    ppo_loss(&spec, store.values(), &buf, &idx, &cfg, &mut analytic).unwrap();
    let numeric = finite_diff_grad(
        |p| {
            let mut scratch = vec![0.0; p.len()];
            ppo_loss(&spec, p.values(), &buf, &idx, &cfg, &mut scratch).unwrap().total
        },
        &store,
        1e-5,
    )
    .unwrap();
    let err = max_relative_error(&analytic, &numeric);
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn update_statistics_are_averaged() {
    let (spec, mut params, _, buf) = reach_setup(100, 7);
    let cfg = PpoConfig { epochs: 2, ..PpoConfig::default() };
    let mut adam = twostage::nn::AdamState::new(params.len(), cfg.lr);
    let stats = ppo_update(&spec, &mut params, &mut adam, &buf, &cfg, 32, &mut Generator::new(1)).unwrap();
    // 100 samples in batches of 32: three full and one short, twice.
    assert_eq!(stats.minibatches, 8);
    assert_eq!(adam.t, 8);
    assert!((0.0..=1.0).contains(&stats.clip_fraction));
}

#[test]
fn update_rejects_buffer_without_advantages() {
    let env = EnvConfig::new(TaskId::Reach2d);
    let spec = PolicySpec::default_for(env.task);
    let mut gen = Generator::new(0);
    let mut params = spec.init(&mut gen).unwrap().values().to_vec();
    let buf = collect_rollout(&spec, &params, &env, 8, &mut gen).unwrap();
    let mut adam = twostage::nn::AdamState::new(params.len(), 1e-3);
    let cfg = PpoConfig::default();
    assert!(ppo_update(&spec, &mut params, &mut adam, &buf, &cfg, 4, &mut gen).is_err());
}

fn small_cfg() -> PpoConfig {
    PpoConfig { samples_per_step: 256, batch: 64, total_steps: 1024, eval_period: 512, eval_episodes: 2, ..PpoConfig::default() }
}

#[test]
fn short_budget_only_evaluates_once() {
    let cfg = PpoConfig { total_steps: 200, ..small_cfg() };
    let h = train_ppo(&cfg, &EnvConfig::new(TaskId::Reach2d), 0, None).unwrap();
    assert_eq!(h.len(), 1);
    assert_eq!(h[0].step, 0);
}

#[test]
fn training_is_deterministic() {
    let env = EnvConfig::new(TaskId::Reach2d);
    let a = train_ppo(&small_cfg(), &env, 42, None).unwrap();
    let b = train_ppo(&small_cfg(), &env, 42, None).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 512, 1024]);
}

#[test]
fn config_validation() {
    assert!(PpoConfig::default().validate().is_ok());
    assert!(PpoConfig { batch: 0, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { batch: 4096, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { gamma: 0.0, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { lambda: 1.5, ..PpoConfig::default() }.validate().is_err());
    assert!(PpoConfig { clip: 0.0, ..PpoConfig::default() }.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gae_returns_are_advantage_plus_value(seed in 0u64..1000, gamma in 0.01f64..=1.0, lambda in 0.0f64..=1.0) {
        let mut g = Generator::new(seed);
        let mut buf = random_buffer(&mut g, 12, 0.25);
        compute_gae(&mut buf, gamma, lambda, false);
        for t in 0..12 {
            prop_assert_eq!(buf.returns[t], buf.advantages[t] + buf.values[t]);
        }
        let oracle = brute_force_advantages(&buf, gamma, lambda);
        for t in 0..12 {
            prop_assert!((buf.advantages[t] - oracle[t]).abs() <= 1e-10);
        }
    }
}
