use proptest::prelude::*;
use twostage::envs::*;
use twostage::rng::Generator;
use twostage::Error;

const TASKS: [TaskId; 3] = [TaskId::Reach2d, TaskId::PushBox2d, TaskId::Gather2d];

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn expert_rate(cfg: &EnvConfig, episodes: u64) -> f64 {
    let mut wins = 0;
    for s in 0..episodes {
        let (mut st, _) = reset(cfg, s).unwrap();
        while !st.done() {
            let a = scripted_expert(&st);
            st.step(&a).unwrap();
        }
        wins += st.success() as u32;
    }
    wins as f64 / episodes as f64
}

#[test]
fn reset_is_deterministic() {
    for task in TASKS {
        let cfg = EnvConfig::new(task);
        let (_, a) = reset(&cfg, 17).unwrap();
        let (_, b) = reset(&cfg, 17).unwrap();
        assert_eq!(bits(&a.points), bits(&b.points));
        assert_eq!(bits(&a.proprio), bits(&b.proprio));
        let (_, c) = reset(&cfg, 18).unwrap();
        assert_ne!(bits(&a.points), bits(&c.points));
    }
}

#[test]
fn trajectories_are_deterministic() {
    for task in TASKS {
        let cfg = EnvConfig::new(task);
        let run = || {
            let (mut st, _) = reset(&cfg, 3).unwrap();
            let mut gen = Generator::new(11);
            let mut out = Vec::new();
            while !st.done() {
                let a = [gen.uniform_in(-1.0, 1.0), gen.uniform_in(-1.0, 1.0)];
                let r = st.step(&a).unwrap();
                out.extend(bits(&r.obs.points));
                out.push(r.reward.to_bits());
            }
            out
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn observation_shape_matches_task() {
    for task in TASKS {
        let cfg = EnvConfig::new(task);
        let (_, obs) = reset(&cfg, 0).unwrap();
        assert_eq!(obs.n_points, cfg.n_points);
        assert_eq!(obs.point_width(), POINT_WIDTH);
        assert_eq!(obs.proprio.len(), task.proprio_width());
    }
}

#[test]
fn reach_cloud_contains_goal_points() {
    let cfg = EnvConfig::new(TaskId::Reach2d);
    let (_, obs) = reset(&cfg, 5).unwrap();
    let goal_points = (0..obs.n_points).filter(|&i| obs.point(i)[2..] == [0.0, 0.0, 1.0]).count();
    assert!(goal_points > 0);
    for i in 0..obs.n_points {
        let seg = &obs.point(i)[2..];
        assert_eq!(seg.iter().sum::<f64>(), 1.0, "segmentation is one-hot");
    }
}

#[test]
fn zero_action_at_rest_changes_nothing() {
    for task in TASKS {
        let cfg = EnvConfig::new(task);
        let (mut st, obs) = reset(&cfg, 2).unwrap();
        let q = st.joints().q.clone();
        let r = st.step(&[0.0, 0.0]).unwrap();
        assert_eq!(st.joints().q, q);
        assert_eq!(bits(&r.obs.points), bits(&obs.points));
    }
}

#[test]
fn random_fuzz_stays_finite() {
    for task in TASKS {
        let cfg = EnvConfig::new(task);
        let mut gen = Generator::new(task.code());
        let mut episode = 0;
        let (mut st, _) = reset(&cfg, episode).unwrap();
        for _ in 0..1000 {
            let a = [gen.uniform_in(-1.0, 1.0), gen.uniform_in(-1.0, 1.0)];
            let r = st.step(&a).unwrap();
            assert!(r.reward.is_finite());
            assert!(r.obs.points.iter().chain(&r.obs.proprio).all(|v| v.is_finite()));
            assert_eq!(r.obs.n_points, cfg.n_points);
            assert_eq!(r.obs.proprio.len(), task.proprio_width());
            if r.done {
                episode += 1;
                st = reset(&cfg, episode).unwrap().0;
            }
        }
    }
}

#[test]
fn reach_success_pays_bonus_and_ends_episode() {
    let cfg = EnvConfig::new(TaskId::Reach2d);
    let (mut st, _) = reset(&cfg, 0).unwrap();
    let mut last = None;
    while !st.done() {
        let a = scripted_expert(&st);
        last = Some(st.step(&a).unwrap());
    }
    let last = last.unwrap();
    assert!(last.success && last.done);
    assert!(last.reward > SUCCESS_BONUS - 0.05 && last.reward <= SUCCESS_BONUS);
    assert!(matches!(st.step(&[0.0, 0.0]), Err(Error::InvalidInput(_))));
}

#[test]
fn success_never_reverts() {
    for task in TASKS {
        let cfg = EnvConfig::new(task);
        for s in 0..5 {
            let (mut st, _) = reset(&cfg, s).unwrap();
            let mut seen = false;
            while !st.done() {
                let a = scripted_expert(&st);
                let r = st.step(&a).unwrap();
                assert!(!seen, "episode continued after success");
                seen |= r.success;
                assert!(!r.success || r.done);
            }
        }
    }
}

#[test]
fn out_of_box_actions_rejected() {
    let cfg = EnvConfig::new(TaskId::PushBox2d);
    let (mut st, _) = reset(&cfg, 0).unwrap();
    for bad in [vec![1.5, 0.0], vec![0.0, -1.01], vec![f64::NAN, 0.0], vec![0.0], vec![0.0, 0.0, 0.0]] {
        assert!(matches!(st.step(&bad), Err(Error::InvalidInput(_))), "{bad:?}");
    }
    assert_eq!(st.t(), 0);
}

#[test]
fn invalid_configs_rejected() {
    let base = EnvConfig::new(TaskId::Reach2d);
    let mut c = base.clone();
    c.horizon = 0;
    assert!(reset(&c, 0).is_err());
    let mut c = base.clone();
    c.dt = 0.0;
    assert!(reset(&c, 0).is_err());
    let mut c = base.clone();
    c.test_range = VariantRange::new(1.0, 1.4);
    assert!(reset(&c, 0).is_err());
}

#[test]
fn config_hash_ignores_split_only() {
    let cfg = EnvConfig::new(TaskId::Gather2d);
    assert_eq!(cfg.hash(), cfg.with_split(Split::Test).hash());
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(cfg.hash(), other.hash());
    assert_ne!(cfg.hash(), EnvConfig::new(TaskId::Reach2d).hash());
}

#[test]
fn reach_expert_success_rate() {
    let rate = expert_rate(&EnvConfig::new(TaskId::Reach2d), 100);
    assert!(rate >= 0.95, "reach2d expert {rate}");
}

#[test]
fn gather_expert_success_rate() {
    let rate = expert_rate(&EnvConfig::new(TaskId::Gather2d), 100);
    assert!(rate >= 0.8, "gather2d expert {rate}");
}

#[test]
fn pushbox_expert_mostly_succeeds() {
    let rate = expert_rate(&EnvConfig::new(TaskId::PushBox2d), 100);
    assert!(rate >= 0.9, "pushbox2d expert {rate}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_draw_from_their_own_ranges(seed in any::<u64>(), ep in any::<u64>(), t in 0usize..3) {
        let mut cfg = EnvConfig::new(TASKS[t]);
        cfg.seed = seed;
        let (train, _) = reset(&cfg, ep).unwrap();
        let (test, _) = reset(&cfg.with_split(Split::Test), ep).unwrap();
        prop_assert!(cfg.train_range.contains(train.variant()));
        prop_assert!(!cfg.test_range.contains(train.variant()));
        prop_assert!(cfg.test_range.contains(test.variant()));
        prop_assert!(!cfg.train_range.contains(test.variant()));
    }

    #[test]
    fn expert_actions_stay_in_box(ep in 0u64..1000, t in 0usize..3, steps in 1usize..40) {
        let cfg = EnvConfig::new(TASKS[t]);
        let (mut st, _) = reset(&cfg, ep).unwrap();
        for _ in 0..steps {
            if st.done() {
                break;
            }
            let a = scripted_expert(&st);
            prop_assert_eq!(a.len(), ACTION_DIM);
            prop_assert!(a.iter().all(|v| v.abs() <= 1.0));
            st.step(&a).unwrap();
        }
    }
}

mod demos {
    use super::*;

    #[test]
    fn zero_episodes_rejected() {
        let cfg = EnvConfig::new(TaskId::Reach2d);
        assert!(matches!(generate_demos(&cfg, 0, false), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn reach_filtering_keeps_most() {
        let cfg = EnvConfig::new(TaskId::Reach2d);
        let demos = generate_demos(&cfg, 200, true).unwrap();
        assert!(demos.len() >= 190, "kept {}", demos.len());
        for d in &demos {
            assert!(d.success);
            assert!(!d.is_empty() && d.len() <= cfg.horizon);
            assert!(d.actions.iter().flatten().all(|a| a.abs() <= 1.0));
        }
    }

    #[test]
    fn unsolvable_filter_is_empty_dataset() {
        let mut cfg = EnvConfig::new(TaskId::PushBox2d);
        cfg.horizon = 2;
        assert!(matches!(generate_demos(&cfg, 3, true), Err(Error::EmptyDataset(_))));
        assert_eq!(generate_demos(&cfg, 3, false).unwrap().len(), 3);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = EnvConfig::new(TaskId::PushBox2d);
        assert_eq!(generate_demos(&cfg, 3, false).unwrap(), generate_demos(&cfg, 3, false).unwrap());
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.bin");
        let cfg = EnvConfig::new(TaskId::Reach2d);
        let demos = generate_demos(&cfg, 4, false).unwrap();
        save_demos(&path, &cfg, &demos).unwrap();
        let file = load_demos(&path).unwrap();
        assert_eq!(file.task, TaskId::Reach2d);
        assert_eq!(file.trajectories, demos);
        file.check_config(&cfg).unwrap();
        assert!(file.check_config(&EnvConfig::new(TaskId::PushBox2d)).is_err());

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(load_demos(&path), Err(Error::Integrity(_))));
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        std::fs::write(&path, &flipped).unwrap();
        assert!(matches!(load_demos(&path), Err(Error::Integrity(_))));
        let mut versioned = bytes.clone();
        versioned[12] = 9;
        std::fs::write(&path, &versioned).unwrap();
        assert!(matches!(load_demos(&path), Err(Error::Version { found: 9, .. })));
        assert!(matches!(load_demos(&dir.path().join("missing.bin")), Err(Error::NotFound(_))));
    }
}
