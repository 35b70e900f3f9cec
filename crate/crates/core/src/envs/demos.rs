//! Scripted-expert demonstrations and their file format.

use std::path::Path;

use crate::binfmt::{Reader, Writer, MAGIC_LEN};
use crate::encoder::PointCloudObs;
use crate::envs::{reset, scripted_expert, EnvConfig, TaskId, ACTION_DIM, CHANNELS, POINT_WIDTH, SPATIAL_DIMS};
use crate::error::{invalid, Error, Result};

const MAGIC: &[u8; MAGIC_LEN] = b"TWOSTAGEDEMO";
pub const DEMO_VERSION: u32 = 1;

/// One expert episode: observation, action pairs in time order.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoTrajectory {
    pub obs: Vec<PointCloudObs>,
    pub actions: Vec<Vec<f64>>,
    pub success: bool,
}

impl DemoTrajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Contents of a demo file.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoFile {
    pub task: TaskId,
    /// [`EnvConfig::hash`] of the generating configuration.
    pub config_hash: u64,
    pub trajectories: Vec<DemoTrajectory>,
}

impl DemoFile {
    pub fn pair_count(&self) -> usize {
        self.trajectories.iter().map(DemoTrajectory::len).sum()
    }

    /// Rejects demos recorded under a different task configuration.
    pub fn check_config(&self, cfg: &EnvConfig) -> Result<()> {
        if self.task != cfg.task || self.config_hash != cfg.hash() {
            return Err(invalid(format!(
                "demos were recorded for {} (config {:016x}), not {} (config {:016x})",
                self.task.name(),
                self.config_hash,
                cfg.task.name(),
                cfg.hash()
            )));
        }
        Ok(())
    }
}

/// Runs the scripted expert for episodes `0..n_episodes` of `cfg`.
pub fn generate_demos(cfg: &EnvConfig, n_episodes: usize, keep_only_success: bool) -> Result<Vec<DemoTrajectory>> {
    if n_episodes == 0 {
        return Err(invalid("need at least one demo episode"));
    }
    let mut out = Vec::new();
    for ep in 0..n_episodes as u64 {
        let (mut state, mut obs) = reset(cfg, ep)?;
        let mut traj = DemoTrajectory { obs: Vec::new(), actions: Vec::new(), success: false };
        while !state.done() {
            let action = scripted_expert(&state);
            let next = state.step(&action)?;
            traj.obs.push(std::mem::replace(&mut obs, next.obs));
            traj.actions.push(action);
        }
        traj.success = state.success();
        if traj.success || !keep_only_success {
            out.push(traj);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!("the expert solved none of {n_episodes} {} episodes", cfg.task.name())));
    }
    Ok(out)
}

pub fn save_demos(path: &Path, cfg: &EnvConfig, trajectories: &[DemoTrajectory]) -> Result<()> {
    let n_points = cfg.n_points;
    let proprio = cfg.task.proprio_width();
    let mut w = Writer::header(MAGIC, DEMO_VERSION);
    for v in [cfg.task.code(), cfg.hash(), trajectories.len() as u64, n_points as u64] {
        w.u64(v);
    }
    for v in [POINT_WIDTH, proprio, ACTION_DIM] {
        w.u64(v as u64);
    }
    for t in trajectories {
        if t.obs.len() != t.actions.len() {
            return Err(invalid("trajectory has unequal observation and action counts"));
        }
        w.u64(t.len() as u64);
        w.u64(t.success as u64);
        for (o, a) in t.obs.iter().zip(&t.actions) {
            if o.n_points != n_points || o.point_width() != POINT_WIDTH || o.proprio.len() != proprio {
                return Err(invalid("observation shape differs from the configuration"));
            }
            if a.len() != ACTION_DIM || a.iter().any(|v| !(v.abs() <= 1.0)) {
                return Err(invalid(format!("demo action {a:?} outside the unit box")));
            }
            w.f64s(&o.points);
            w.f64s(&o.proprio);
            w.f64s(a);
        }
    }
    std::fs::write(path, w.finish())?;
    Ok(())
}

pub fn load_demos(path: &Path) -> Result<DemoFile> {
    let data = match std::fs::read(path) {
        Ok(d) => d,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    let mut r = Reader::open(&data, MAGIC, DEMO_VERSION, "demo")?;
    let code = r.u64()?;
    let task = TaskId::from_code(code).ok_or_else(|| Error::Integrity(format!("unknown task code {code}")))?;
    let config_hash = r.u64()?;
    let count = r.usize()?;
    let n_points = r.usize()?;
    let point_width = r.usize()?;
    let proprio = r.usize()?;
    let action_dim = r.usize()?;
    if point_width != POINT_WIDTH || action_dim != ACTION_DIM || proprio != task.proprio_width() || n_points == 0 {
        return Err(Error::Integrity("demo header shape does not match the task".into()));
    }
    let mut trajectories = Vec::new();
    for _ in 0..count {
        let len = r.usize()?;
        let success = match r.u64()? {
            0 => false,
            1 => true,
            v => return Err(Error::Integrity(format!("bad success flag {v}"))),
        };
        let mut t = DemoTrajectory { obs: Vec::with_capacity(len), actions: Vec::with_capacity(len), success };
        for _ in 0..len {
            let points = r.f64s(n_points * point_width)?;
            let prop = r.f64s(proprio)?;
            let obs = PointCloudObs::new(points, SPATIAL_DIMS, CHANNELS, prop)
                .map_err(|e| Error::Integrity(format!("bad observation record: {e}")))?;
            t.obs.push(obs);
            t.actions.push(r.f64s(action_dim)?);
        }
        trajectories.push(t);
    }
    r.expect_end()?;
    Ok(DemoFile { task, config_hash, trajectories })
}
