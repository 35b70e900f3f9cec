use std::f64::consts::PI;

use twostage::envs::{reset, EnvConfig, TaskId};
use twostage::policy::*;
use twostage::rng::Generator;

fn setup(task: TaskId, seed: u64) -> (PolicySpec, Vec<f64>, twostage::encoder::PointCloudObs) {
    let spec = PolicySpec::default_for(task);
    let params = spec.init(&mut Generator::new(seed)).unwrap();
    let (_, obs) = reset(&EnvConfig::new(task), seed).unwrap();
    (spec, params.values().to_vec(), obs)
}

/// Log density written out term by term.
fn density_oracle(x: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    let mut p = 1.0;
    for i in 0..x.len() {
        let s = log_std[i].exp();
        p *= (-(x[i] - mean[i]).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
    }
    p.ln()
}

#[test]
fn layout_covers_every_parameter_once() {
    let spec = PolicySpec::default_for(TaskId::Gather2d);
    let lay = spec.layout();
    assert_eq!(lay.encoder.start, 0);
    assert_eq!(lay.encoder.end, lay.mean.start);
    assert_eq!(lay.mean.end, lay.log_std.start);
    assert_eq!(lay.log_std.end, lay.value.start);
    assert_eq!(lay.value.end, spec.param_count());
    let p = spec.init(&mut Generator::new(0)).unwrap();
    assert_eq!(p.get("log_std").unwrap(), &[INITIAL_LOG_STD; 2]);
}

#[test]
fn log_prob_matches_density() {
    let mut g = Generator::new(3);
    for _ in 0..50 {
        let x: Vec<f64> = (0..2).map(|_| g.uniform_in(-2.0, 2.0)).collect();
        let m: Vec<f64> = (0..2).map(|_| g.uniform_in(-1.0, 1.0)).collect();
        let s: Vec<f64> = (0..2).map(|_| g.uniform_in(-1.5, 0.5)).collect();
        let a = gaussian_log_prob(&x, &m, &s);
        let b = density_oracle(&x, &m, &s);
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn entropy_closed_form() {
    let ls = [-0.5, 0.3];
    let expect: f64 = ls.iter().map(|l| l + 0.5 * (2.0 * PI * std::f64::consts::E).ln()).sum();
    assert!((gaussian_entropy(&ls) - expect).abs() < 1e-10);
}

#[test]
fn sampled_log_prob_refers_to_raw_draw() {
    let (spec, params, obs) = setup(TaskId::Reach2d, 1);
    let s = spec.sample_action(&params, &obs, &mut Generator::new(9)).unwrap();
    let (mean, value) = spec.evaluate(&params, &obs).unwrap();
    let ls = &params[spec.layout().log_std];
    assert!((s.log_prob - density_oracle(&s.raw, &mean, ls)).abs() < 1e-10);
    assert_eq!(s.value, value);
    for (a, r) in s.action.iter().zip(&s.raw) {
        assert_eq!(*a, r.clamp(-1.0, 1.0));
    }
}

#[test]
fn tiny_std_gives_clamped_mean() {
    let (spec, mut params, obs) = setup(TaskId::PushBox2d, 2);
    let lay = spec.layout();
    params[lay.log_std].iter_mut().for_each(|v| *v = -20.0);
    let s = spec.sample_action(&params, &obs, &mut Generator::new(4)).unwrap();
    let det = spec.act_deterministic(&params, &obs).unwrap();
    for (a, d) in s.action.iter().zip(&det) {
        assert!((a - d).abs() < 1e-8);
    }
}

#[test]
fn same_generator_same_action() {
    let (spec, params, obs) = setup(TaskId::Gather2d, 5);
    let a = spec.sample_action(&params, &obs, &mut Generator::new(11)).unwrap();
    let b = spec.sample_action(&params, &obs, &mut Generator::new(11)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fresh_mean_head_is_near_zero() {
    let (spec, params, obs) = setup(TaskId::Reach2d, 0);
    let (mean, _) = spec.evaluate(&params, &obs).unwrap();
    assert!(mean.iter().all(|m| m.abs() < 0.1), "{mean:?}");
}
