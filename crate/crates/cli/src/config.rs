//! Sectioned `key = value` configuration, resolved against the library
//! defaults. The resolved form doubles as the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use twostage::bc::BcConfig;
use twostage::encoder::EncoderSpec;
use twostage::envs::{EnvConfig, TaskId, VariantRange, ACTION_DIM, POINT_WIDTH};
use twostage::policy::PolicySpec;
use twostage::ppo::PpoConfig;
use twostage::schedule::{GridSpec, ScalePair, TwoStagePlan};

use crate::CliError;

const SECTIONS: [&str; 10] = ["env", "controller", "encoder", "ppo", "bc", "demos", "schedule", "grid", "eval", "export"];

/// Every key with its default, in manifest order. Environment defaults
/// depend on the task.
fn defaults(task: TaskId) -> Vec<(&'static str, String)> {
    let env = EnvConfig::new(task);
    let ppo = PpoConfig::default();
    let bc = BcConfig::default();
    vec![
        ("env.task", task.name().into()),
        ("env.seed", env.seed.to_string()),
        ("env.horizon", env.horizon.to_string()),
        ("env.dt", env.dt.to_string()),
        ("env.n_points", env.n_points.to_string()),
        ("env.train_range", format!("{},{}", env.train_range.lo, env.train_range.hi)),
        ("env.test_range", format!("{},{}", env.test_range.lo, env.test_range.hi)),
        ("controller.kp", env.gains.kp.to_string()),
        ("controller.kd", env.gains.kd.to_string()),
        ("controller.u_max", env.gains.u_max.to_string()),
        ("controller.dq_max", env.geom.dq_max.to_string()),
        ("controller.v_max", env.geom.v_max.to_string()),
        ("controller.dx_max", env.geom.dx_max.to_string()),
        ("controller.damping", env.geom.damping.to_string()),
        ("encoder.point_hidden", "32".into()),
        ("encoder.feature", "64".into()),
        ("encoder.post_hidden", "64".into()),
        ("encoder.value_hidden", "64".into()),
        ("ppo.samples", ppo.samples_per_step.to_string()),
        ("ppo.batch", ppo.batch.to_string()),
        ("ppo.epochs", ppo.epochs.to_string()),
        ("ppo.clip", ppo.clip.to_string()),
        ("ppo.gamma", ppo.gamma.to_string()),
        ("ppo.lambda", ppo.lambda.to_string()),
        ("ppo.value_coef", ppo.value_coef.to_string()),
        ("ppo.entropy_coef", ppo.entropy_coef.to_string()),
        ("ppo.lr", ppo.lr.to_string()),
        ("ppo.total_steps", ppo.total_steps.to_string()),
        ("ppo.eval_period", ppo.eval_period.to_string()),
        ("ppo.eval_episodes", ppo.eval_episodes.to_string()),
        ("ppo.normalize_advantages", ppo.normalize_advantages.to_string()),
        ("bc.samples", bc.samples_per_step.to_string()),
        ("bc.batch", bc.batch.to_string()),
        ("bc.lr", bc.lr.to_string()),
        ("bc.total_steps", bc.total_steps.to_string()),
        ("bc.eval_period", bc.eval_period.to_string()),
        ("bc.eval_episodes", bc.eval_episodes.to_string()),
        ("demos.episodes", "200".into()),
        ("demos.keep_only_success", "true".into()),
        ("demos.path", String::new()),
        ("schedule.trainer", "ppo".into()),
        ("schedule.alpha", "0.9".into()),
        ("schedule.beta", "0.875".into()),
        ("schedule.stage1_budget", ppo.total_steps.to_string()),
        ("schedule.patience", "3".into()),
        ("schedule.stage2_steps", (ppo.total_steps / 2).to_string()),
        ("schedule.reset_optimizer", "false".into()),
        ("grid.alphas", "0.9,0.8,0.7".into()),
        ("grid.betas", "1,0.875,0.75".into()),
        ("grid.seeds", String::new()),
        ("eval.checkpoint", String::new()),
        ("eval.episodes", "100".into()),
        ("export.metrics", String::new()),
    ]
}

/// Raw entries of a config file: `section.key -> (value, line)`.
fn parse_file(text: &str, path: &Path) -> Result<BTreeMap<String, (String, usize)>, CliError> {
    let err = |line: usize, msg: String| CliError::Config(format!("{}:{line}: {msg}", path.display()));
    let mut section: Option<&str> = None;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(err(n, format!("unknown section [{name}]")));
            }
            section = Some(SECTIONS.iter().find(|s| **s == name).copied().expect("listed"));
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(n, format!("expected key = value, got '{line}'")))?;
        let sec = section.ok_or_else(|| err(n, "key outside any [section]".into()))?;
        let key = format!("{sec}.{}", k.trim());
        let v = v.trim();
        match out.get(&key) {
            Some((prev, first)) if prev != v => {
                return Err(err(n, format!("conflicting duplicate key {key} (first set on line {first})")));
            }
            Some(_) => {}
            None => {
                out.insert(key, (v.to_string(), n));
            }
        }
    }
    Ok(out)
}

/// The fully resolved configuration: every known key has a value.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    values: BTreeMap<String, String>,
    order: Vec<&'static str>,
}

impl Resolved {
    /// File values, then `overrides` (`section.key=value`), over defaults.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file = parse_file(&text, path)?;
        let mut set: BTreeMap<String, String> = file.into_iter().map(|(k, (v, _))| (k, v)).collect();
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{o}' is not key=value")))?;
            set.insert(k.trim().to_string(), v.trim().to_string());
        }
        let task_name = set.get("env.task").map(String::as_str).unwrap_or("reach2d");
        let task = TaskId::parse(task_name).ok_or_else(|| CliError::Config(format!("unknown task '{task_name}'")))?;
        let defs = defaults(task);
        if let Some(k) = set.keys().find(|k| !defs.iter().any(|(d, _)| d == k)) {
            return Err(CliError::Config(format!("unknown key {k}")));
        }
        let order = defs.iter().map(|(k, _)| *k).collect();
        let mut values: BTreeMap<String, String> = defs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        values.extend(set);
        Ok(Self { values, order })
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("no key {key}"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key);
        v.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse '{v}'")))
    }

    fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let v = self.get(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| x.trim().parse().map_err(|_| CliError::Config(format!("{key}: cannot parse '{x}'"))))
            .collect()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    fn range(&self, key: &str) -> Result<VariantRange, CliError> {
        match self.parse_list::<f64>(key)?[..] {
            [lo, hi] => Ok(VariantRange::new(lo, hi)),
            _ => Err(CliError::Config(format!("{key}: expected lo,hi"))),
        }
    }

    /// The manifest: a config file that reproduces the run, headed by the
    /// command, seed and version.
    pub fn manifest(&self, command: &str, seed: u64) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# twostage {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# command = {command}");
        let _ = writeln!(out, "# seed = {seed}");
        let mut section = "";
        for key in &self.order {
            let (sec, name) = key.split_once('.').expect("dotted key");
            if sec != section {
                let _ = writeln!(out, "\n[{sec}]");
                section = sec;
            }
            let _ = writeln!(out, "{name} = {}", self.values[*key]);
        }
        out
    }

    /// Parses every section, so a bad value fails whichever command runs.
    pub fn check(&self) -> Result<(), CliError> {
        let env = self.env()?;
        self.policy(env.task)?;
        self.ppo()?;
        self.bc()?;
        self.demo_episodes()?;
        self.keep_only_success()?;
        self.schedule_trainer()?;
        self.scales()?;
        self.grid(0)?;
        self.eval_episodes()?;
        Ok(())
    }

    pub fn env(&self) -> Result<EnvConfig, CliError> {
        let task = TaskId::parse(self.get("env.task")).expect("checked at load");
        let mut env = EnvConfig::new(task);
        env.seed = self.parse("env.seed")?;
        env.horizon = self.parse("env.horizon")?;
        env.dt = self.parse("env.dt")?;
        env.n_points = self.parse("env.n_points")?;
        env.train_range = self.range("env.train_range")?;
        env.test_range = self.range("env.test_range")?;
        env.gains.kp = self.parse("controller.kp")?;
        env.gains.kd = self.parse("controller.kd")?;
        env.gains.u_max = self.parse("controller.u_max")?;
        env.geom.dq_max = self.parse("controller.dq_max")?;
        env.geom.v_max = self.parse("controller.v_max")?;
        env.geom.dx_max = self.parse("controller.dx_max")?;
        env.geom.damping = self.parse("controller.damping")?;
        env.validate().map_err(|e| CliError::Config(format!("[env]/[controller]: {e}")))?;
        Ok(env)
    }

    pub fn policy(&self, task: TaskId) -> Result<PolicySpec, CliError> {
        let enc = EncoderSpec::with_widths(
            POINT_WIDTH,
            task.proprio_width(),
            &self.parse_list::<usize>("encoder.point_hidden")?,
            self.parse("encoder.feature")?,
            &self.parse_list::<usize>("encoder.post_hidden")?,
        )
        .map_err(|e| CliError::Config(format!("[encoder]: {e}")))?;
        PolicySpec::new(enc, &self.parse_list::<usize>("encoder.value_hidden")?, ACTION_DIM)
            .map_err(|e| CliError::Config(format!("[encoder]: {e}")))
    }

    pub fn ppo(&self) -> Result<PpoConfig, CliError> {
        let cfg = PpoConfig {
            samples_per_step: self.parse("ppo.samples")?,
            batch: self.parse("ppo.batch")?,
            epochs: self.parse("ppo.epochs")?,
            clip: self.parse("ppo.clip")?,
            gamma: self.parse("ppo.gamma")?,
            lambda: self.parse("ppo.lambda")?,
            value_coef: self.parse("ppo.value_coef")?,
            entropy_coef: self.parse("ppo.entropy_coef")?,
            lr: self.parse("ppo.lr")?,
            total_steps: self.parse("ppo.total_steps")?,
            eval_period: self.parse("ppo.eval_period")?,
            eval_episodes: self.parse("ppo.eval_episodes")?,
            normalize_advantages: self.parse("ppo.normalize_advantages")?,
        };
        cfg.validate().map_err(|e| CliError::Config(format!("[ppo]: {e}")))?;
        Ok(cfg)
    }

    pub fn bc(&self) -> Result<BcConfig, CliError> {
        let cfg = BcConfig {
            batch: self.parse("bc.batch")?,
            samples_per_step: self.parse("bc.samples")?,
            total_steps: self.parse("bc.total_steps")?,
            lr: self.parse("bc.lr")?,
            eval_period: self.parse("bc.eval_period")?,
            eval_episodes: self.parse("bc.eval_episodes")?,
        };
        cfg.validate().map_err(|e| CliError::Config(format!("[bc]: {e}")))?;
        Ok(cfg)
    }

    pub fn demo_episodes(&self) -> Result<usize, CliError> {
        self.parse("demos.episodes")
    }

    pub fn keep_only_success(&self) -> Result<bool, CliError> {
        self.parse("demos.keep_only_success")
    }

    pub fn demo_path(&self) -> Option<PathBuf> {
        self.path("demos.path")
    }

    pub fn schedule_trainer(&self) -> Result<&str, CliError> {
        match self.get("schedule.trainer") {
            t @ ("ppo" | "bc") => Ok(t),
            t => Err(CliError::Config(format!("schedule.trainer: expected ppo or bc, got '{t}'"))),
        }
    }

    pub fn scales(&self) -> Result<ScalePair, CliError> {
        ScalePair::new(self.parse("schedule.alpha")?, self.parse("schedule.beta")?)
            .map_err(|e| CliError::Config(format!("[schedule]: {e}")))
    }

    pub fn plan(&self) -> Result<TwoStagePlan, CliError> {
        Ok(TwoStagePlan {
            stage1_budget: self.parse("schedule.stage1_budget")?,
            patience: self.parse("schedule.patience")?,
            stage2_steps: self.parse("schedule.stage2_steps")?,
            reset_optimizer: self.parse("schedule.reset_optimizer")?,
        })
    }

    /// Grid seeds default to the command-line seed.
    pub fn grid(&self, seed: u64) -> Result<GridSpec, CliError> {
        let mut seeds: Vec<u64> = self.parse_list("grid.seeds")?;
        if seeds.is_empty() {
            seeds.push(seed);
        }
        let grid = GridSpec { alphas: self.parse_list("grid.alphas")?, betas: self.parse_list("grid.betas")?, seeds, plan: self.plan()? };
        grid.validate().map_err(|e| CliError::Config(format!("[grid]: {e}")))?;
        Ok(grid)
    }

    pub fn eval_checkpoint(&self) -> Result<PathBuf, CliError> {
        self.path("eval.checkpoint").ok_or_else(|| CliError::Config("eval.checkpoint is not set".into()))
    }

    pub fn eval_episodes(&self) -> Result<usize, CliError> {
        let n: usize = self.parse("eval.episodes")?;
        if n == 0 {
            return Err(CliError::Config("eval.episodes must be positive".into()));
        }
        Ok(n)
    }

    pub fn export_metrics(&self) -> Result<Vec<PathBuf>, CliError> {
        let v = self.get("export.metrics");
        if v.is_empty() {
            return Err(CliError::Config("export.metrics is not set".into()));
        }
        Ok(v.split(',').map(|s| PathBuf::from(s.trim())).collect())
    }
}

