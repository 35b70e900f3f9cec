use crate::controllers::{forward_kinematics, pd_ee_delta_pose, JointState};
use crate::envs::{angles, arm_points, dist, integrate_joints, ring_points, EnvConfig, SEG_GOAL};
use crate::error::Result;
use crate::rng::Generator;

pub(crate) const GOAL_POINTS: usize = 16;
pub(crate) const PROPRIO: usize = 8;
pub(crate) const TOLERANCE: f64 = 0.05;
const GOAL_RING: f64 = 0.03;
/// Elbow angle that puts the tip 0.9 from the base with unit links.
const START_ELBOW: f64 = 2.208;

#[derive(Clone, Debug)]
pub(crate) struct Reach {
    pub(crate) joints: JointState,
    goal: [f64; 2],
    arm_offsets: Vec<f64>,
    goal_angles: Vec<f64>,
}

impl Reach {
    pub(crate) fn new(cfg: &EnvConfig, radius: f64, gen: &mut Generator) -> Self {
        let bearing = gen.uniform_in(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
        let goal = [radius * bearing.cos(), radius * bearing.sin()];
        let q = vec![-START_ELBOW / 2.0 + gen.uniform_in(-0.1, 0.1), START_ELBOW + gen.uniform_in(-0.1, 0.1)];
        let n_links = cfg.geom.n_joints() as f64;
        let arm_offsets = (0..cfg.n_points - GOAL_POINTS).map(|_| gen.uniform_in(0.0, n_links)).collect();
        let goal_angles = angles(gen, GOAL_POINTS);
        Self { joints: JointState::at_rest(q), goal, arm_offsets, goal_angles }
    }

    fn ee(&self, cfg: &EnvConfig) -> [f64; 2] {
        let p = forward_kinematics(&self.joints.q, &cfg.geom);
        [p.x, p.y]
    }

    pub(crate) fn observe(&self, cfg: &EnvConfig) -> (Vec<f64>, Vec<f64>) {
        let mut pts = Vec::with_capacity(cfg.n_points * 5);
        arm_points(&self.joints.q, &cfg.geom.links, &self.arm_offsets, &mut pts);
        ring_points(self.goal, GOAL_RING, &self.goal_angles, &SEG_GOAL, &mut pts);
        let ee = self.ee(cfg);
        let js = &self.joints;
        let proprio = vec![js.q[0], js.q[1], js.qdot[0], js.qdot[1], ee[0], ee[1], self.goal[0] - ee[0], self.goal[1] - ee[1]];
        (pts, proprio)
    }

    pub(crate) fn step(&mut self, cfg: &EnvConfig, action: &[f64]) -> Result<(f64, bool)> {
        let u = pd_ee_delta_pose(action, &self.joints, &cfg.gains, &cfg.geom)?;
        integrate_joints(&mut self.joints, &u, &cfg.geom, cfg.dt);
        let d = dist(self.ee(cfg), self.goal);
        Ok((d, d <= TOLERANCE))
    }

    /// Full-speed end-effector step straight at the goal.
    pub(crate) fn expert(&self, cfg: &EnvConfig) -> Vec<f64> {
        let ee = self.ee(cfg);
        (0..2).map(|i| ((self.goal[i] - ee[i]) / cfg.geom.dx_max).clamp(-1.0, 1.0)).collect()
    }
}
