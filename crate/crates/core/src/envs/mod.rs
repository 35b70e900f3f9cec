//! Deterministic toy manipulation tasks with point-cloud observations.
//!
//! Three tasks stand in for rigid and soft manipulation:
//!
//! | task        | controlled body             | controller           | varied parameter | train         | test          |
//! |-------------|-----------------------------|----------------------|------------------|---------------|---------------|
//! | `reach2d`   | 2-link arm                  | `pd_ee_delta_pose`   | goal radius      | `[0.5, 1.2)`  | `[1.2, 1.6)`  |
//! | `pushbox2d` | 2-link arm tip pushes a box | `pd_joint_delta_pos` | box side         | `[0.10,0.18)` | `[0.18,0.24)` |
//! | `gather2d`  | circular pusher, 2 DOF      | `pd_joint_delta_pos` | particle spread  | `[0.1, 0.2)`  | `[0.2, 0.3)`  |
//!
//! Ranges are half-open so the train and test splits never share a value.
//! Controller commands are joint accelerations integrated with
//! semi-implicit Euler. An episode ends on success or at the horizon.
//!
//! Every point carries `(x, y)` and a one-hot segmentation over
//! `(robot, object, goal)`. Where on a body its points sit is drawn once per
//! episode and then held fixed.

mod demos;
mod gather;
mod pushbox;
mod reach;

use crate::controllers::{ArmGeom, ControllerKind, JointState, PdGains};
use crate::encoder::PointCloudObs;
use crate::error::{invalid, Result};
use crate::rng::Generator;

pub use demos::{generate_demos, load_demos, save_demos, DemoFile, DemoTrajectory, DEMO_VERSION};

pub const SPATIAL_DIMS: usize = 2;
pub const CHANNELS: usize = 3;
pub const POINT_WIDTH: usize = SPATIAL_DIMS + CHANNELS;
pub const ACTION_DIM: usize = 2;

pub(crate) const SEG_ROBOT: [f64; 3] = [1.0, 0.0, 0.0];
pub(crate) const SEG_OBJECT: [f64; 3] = [0.0, 1.0, 0.0];
pub(crate) const SEG_GOAL: [f64; 3] = [0.0, 0.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskId {
    Reach2d,
    PushBox2d,
    Gather2d,
}

impl TaskId {
    pub fn name(self) -> &'static str {
        match self {
            TaskId::Reach2d => "reach2d",
            TaskId::PushBox2d => "pushbox2d",
            TaskId::Gather2d => "gather2d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [TaskId::Reach2d, TaskId::PushBox2d, TaskId::Gather2d].into_iter().find(|t| t.name() == s)
    }

    pub fn code(self) -> u64 {
        match self {
            TaskId::Reach2d => 0,
            TaskId::PushBox2d => 1,
            TaskId::Gather2d => 2,
        }
    }

    pub fn from_code(code: u64) -> Option<Self> {
        [TaskId::Reach2d, TaskId::PushBox2d, TaskId::Gather2d].into_iter().find(|t| t.code() == code)
    }

    pub fn controller(self) -> ControllerKind {
        match self {
            TaskId::Reach2d => ControllerKind::PdEeDeltaPose,
            TaskId::PushBox2d | TaskId::Gather2d => ControllerKind::PdJointDeltaPos,
        }
    }

    pub fn proprio_width(self) -> usize {
        match self {
            TaskId::Reach2d => reach::PROPRIO,
            TaskId::PushBox2d => pushbox::PROPRIO,
            TaskId::Gather2d => gather::PROPRIO,
        }
    }

    fn min_points(self) -> usize {
        match self {
            TaskId::Reach2d => reach::GOAL_POINTS + 2,
            TaskId::PushBox2d => pushbox::ARM_POINTS + pushbox::TARGET_POINTS + 4,
            TaskId::Gather2d => gather::PARTICLES + gather::PUSHER_POINTS + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Half-open interval `[lo, hi)` of a varied task parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariantRange {
    pub lo: f64,
    pub hi: f64,
}

impl VariantRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v < self.hi
    }

    fn disjoint(&self, other: &Self) -> bool {
        self.hi <= other.lo || other.hi <= self.lo
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub task: TaskId,
    pub split: Split,
    pub seed: u64,
    pub horizon: usize,
    /// Control period, seconds.
    pub dt: f64,
    pub n_points: usize,
    pub train_range: VariantRange,
    pub test_range: VariantRange,
    pub gains: PdGains,
    /// Arm geometry; for `gather2d` the two "joints" are the pusher's x and y.
    pub geom: ArmGeom,
}

impl EnvConfig {
    pub fn new(task: TaskId) -> Self {
        let (horizon, train, test, geom) = match task {
            TaskId::Reach2d => (100, (0.5, 1.2), (1.2, 1.6), ArmGeom::two_link()),
            TaskId::PushBox2d => (150, (0.10, 0.18), (0.18, 0.24), ArmGeom::two_link()),
            TaskId::Gather2d => (200, (0.1, 0.2), (0.2, 0.3), gather::pusher_geom()),
        };
        Self {
            task,
            split: Split::Train,
            seed: 0,
            horizon,
            dt: 0.05,
            n_points: 64,
            train_range: VariantRange::new(train.0, train.1),
            test_range: VariantRange::new(test.0, test.1),
            gains: PdGains::default(),
            geom,
        }
    }

    pub fn with_split(&self, split: Split) -> Self {
        Self { split, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        if self.n_points < self.task.min_points() {
            return Err(invalid(format!("{} needs at least {} points", self.task.name(), self.task.min_points())));
        }
        for r in [self.train_range, self.test_range] {
            if !(r.lo < r.hi) || !(r.lo > 0.0) {
                return Err(invalid(format!("bad variant range [{}, {})", r.lo, r.hi)));
            }
        }
        if !self.train_range.disjoint(&self.test_range) {
            return Err(invalid("train and test variant ranges overlap"));
        }
        if self.geom.n_joints() != 2 {
            return Err(invalid("toy tasks use a two-joint body"));
        }
        self.gains.validate()?;
        self.geom.validate()
    }

    pub fn variant_range(&self) -> VariantRange {
        match self.split {
            Split::Train => self.train_range,
            Split::Test => self.test_range,
        }
    }

    /// Stable 64-bit digest of every field except the split.
    pub fn hash(&self) -> u64 {
        use std::hash::Hasher;
        let canon = format!("{:?}", self.with_split(Split::Train));
        let mut h = fnv::FnvHasher::default();
        h.write(canon.as_bytes());
        h.finish()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: PointCloudObs,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

#[derive(Clone, Debug)]
enum World {
    Reach(reach::Reach),
    Push(pushbox::PushBox),
    Gather(gather::Gather),
}

/// Full state of one episode.
#[derive(Clone, Debug)]
pub struct EnvState {
    cfg: EnvConfig,
    t: usize,
    done: bool,
    success: bool,
    variant: f64,
    world: World,
}

/// Starts an episode. Equal `(cfg, episode_seed)` give identical episodes.
pub fn reset(cfg: &EnvConfig, episode_seed: u64) -> Result<(EnvState, PointCloudObs)> {
    cfg.validate()?;
    let mix = cfg.seed.wrapping_add(episode_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let stream = match cfg.split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut gen = Generator::with_stream(mix, stream);
    let range = cfg.variant_range();
    let variant = gen.uniform_in(range.lo, range.hi);
    let world = match cfg.task {
        TaskId::Reach2d => World::Reach(reach::Reach::new(cfg, variant, &mut gen)),
        TaskId::PushBox2d => World::Push(pushbox::PushBox::new(cfg, variant, &mut gen)),
        TaskId::Gather2d => World::Gather(gather::Gather::new(cfg, variant, &mut gen)),
    };
    let state = EnvState { cfg: cfg.clone(), t: 0, done: false, success: false, variant, world };
    let obs = state.observe();
    Ok((state, obs))
}

impl EnvState {
    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// The varied parameter drawn at reset.
    pub fn variant(&self) -> f64 {
        self.variant
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn success(&self) -> bool {
        self.success
    }

    pub fn joints(&self) -> &JointState {
        match &self.world {
            World::Reach(w) => &w.joints,
            World::Push(w) => &w.joints,
            World::Gather(w) => &w.joints,
        }
    }

    pub fn observe(&self) -> PointCloudObs {
        let (points, proprio) = match &self.world {
            World::Reach(w) => w.observe(&self.cfg),
            World::Push(w) => w.observe(&self.cfg),
            World::Gather(w) => w.observe(&self.cfg),
        };
        PointCloudObs::new(points, SPATIAL_DIMS, CHANNELS, proprio).expect("environment emits finite observations")
    }

    /// Advances one control period.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(invalid("episode already finished; reset first"));
        }
        if action.len() != ACTION_DIM || action.iter().any(|a| !(a.abs() <= 1.0)) {
            return Err(invalid(format!("action {action:?} outside the unit box")));
        }
        let (progress, success) = match &mut self.world {
            World::Reach(w) => w.step(&self.cfg, action)?,
            World::Push(w) => w.step(&self.cfg, action)?,
            World::Gather(w) => w.step(&self.cfg, action)?,
        };
        self.t += 1;
        self.success = success;
        self.done = success || self.t >= self.cfg.horizon;
        let reward = -progress * self.cfg.dt + if success { SUCCESS_BONUS } else { 0.0 };
        Ok(StepResult { obs: self.observe(), reward, done: self.done, success })
    }
}

pub const SUCCESS_BONUS: f64 = 10.0;

/// Deterministic closed-loop heuristic for the current task.
pub fn scripted_expert(state: &EnvState) -> Vec<f64> {
    let a = match &state.world {
        World::Reach(w) => w.expert(&state.cfg),
        World::Push(w) => w.expert(&state.cfg),
        World::Gather(w) => w.expert(&state.cfg),
    };
    a.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

/// Success rate of [`scripted_expert`] over episodes `0..episodes`.
pub fn expert_success_rate(cfg: &EnvConfig, episodes: usize) -> Result<f64> {
    if episodes == 0 {
        return Err(invalid("need at least one episode"));
    }
    let mut wins = 0;
    for ep in 0..episodes as u64 {
        let (mut st, _) = reset(cfg, ep)?;
        while !st.done() {
            let a = scripted_expert(&st);
            st.step(&a)?;
        }
        wins += st.success() as usize;
    }
    Ok(wins as f64 / episodes as f64)
}

/// Semi-implicit Euler on joint accelerations `u`, stopping at joint limits.
pub(crate) fn integrate_joints(js: &mut JointState, u: &[f64], geom: &ArmGeom, dt: f64) {
    for i in 0..js.q.len() {
        js.qdot[i] += u[i] * dt;
        js.q[i] += js.qdot[i] * dt;
        let (lo, hi) = geom.limits[i];
        if js.q[i] < lo {
            js.q[i] = lo;
            js.qdot[i] = js.qdot[i].max(0.0);
        } else if js.q[i] > hi {
            js.q[i] = hi;
            js.qdot[i] = js.qdot[i].min(0.0);
        }
    }
}

/// Joint positions `[base, joint 1, .., tip]` of a planar chain.
pub(crate) fn chain_points(q: &[f64], links: &[f64]) -> Vec<[f64; 2]> {
    let mut pts = vec![[0.0, 0.0]];
    let (mut x, mut y, mut phi) = (0.0, 0.0, 0.0);
    for (qi, l) in q.iter().zip(links) {
        phi += qi;
        x += l * phi.cos();
        y += l * phi.sin();
        pts.push([x, y]);
    }
    pts
}

/// Fills `out` with points spread along the arm at the fractions `offsets`
/// (each in `[0, n_links)`).
pub(crate) fn arm_points(q: &[f64], links: &[f64], offsets: &[f64], out: &mut Vec<f64>) {
    let joints = chain_points(q, links);
    for &o in offsets {
        let k = (o.floor() as usize).min(links.len() - 1);
        let f = o - k as f64;
        let (a, b) = (joints[k], joints[k + 1]);
        out.extend_from_slice(&[a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
        out.extend_from_slice(&SEG_ROBOT);
    }
}

pub(crate) fn ring_points(center: [f64; 2], radius: f64, angles: &[f64], seg: &[f64; 3], out: &mut Vec<f64>) {
    for a in angles {
        out.extend_from_slice(&[center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
        out.extend_from_slice(seg);
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub(crate) fn angles(gen: &mut Generator, n: usize) -> Vec<f64> {
    (0..n).map(|_| gen.uniform_in(-std::f64::consts::PI, std::f64::consts::PI)).collect()
}

