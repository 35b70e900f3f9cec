use crate::controllers::{dls_step, forward_kinematics, jacobian, pd_joint_delta_pos, JointState};
use crate::envs::{angles, arm_points, dist, integrate_joints, ring_points, EnvConfig, SEG_GOAL, SEG_OBJECT};
use crate::error::Result;
use crate::rng::Generator;

pub(crate) const ARM_POINTS: usize = 16;
pub(crate) const TARGET_POINTS: usize = 16;
pub(crate) const PROPRIO: usize = 10;
pub(crate) const TOLERANCE: f64 = 0.05;
pub(crate) const TIP_RADIUS: f64 = 0.04;
const TARGET_RING: f64 = 0.05;
const SUBSTEPS: usize = 5;

/// Joint angles placing a two-link tip at `tip`, elbow bent counter-clockwise.
fn elbow_up_ik(tip: [f64; 2], links: &[f64]) -> Vec<f64> {
    let (l1, l2) = (links[0], links[1]);
    let r2 = tip[0] * tip[0] + tip[1] * tip[1];
    let q2 = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0).acos();
    let q1 = tip[1].atan2(tip[0]) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
    vec![q1, q2]
}

#[derive(Clone, Debug)]
pub(crate) struct PushBox {
    pub(crate) joints: JointState,
    center: [f64; 2],
    half: f64,
    target: [f64; 2],
    arm_offsets: Vec<f64>,
    /// Perimeter coordinates in `[0, 4)`, one unit per side.
    box_offsets: Vec<f64>,
    target_angles: Vec<f64>,
}

impl PushBox {
    pub(crate) fn new(cfg: &EnvConfig, side: f64, gen: &mut Generator) -> Self {
        let center = [0.8 + gen.uniform_in(-0.05, 0.05), gen.uniform_in(-0.1, 0.1)];
        let target = [1.4, gen.uniform_in(-0.1, 0.1)];
        // tip starts at x = 0.55, level with the box give or take a little
        let q = elbow_up_ik([0.55, center[1] + gen.uniform_in(-0.05, 0.05)], &cfg.geom.links);
        let n_links = cfg.geom.n_joints() as f64;
        let arm_offsets = (0..ARM_POINTS).map(|_| gen.uniform_in(0.0, n_links)).collect();
        let box_offsets = (0..cfg.n_points - ARM_POINTS - TARGET_POINTS).map(|_| gen.uniform_in(0.0, 4.0)).collect();
        let target_angles = angles(gen, TARGET_POINTS);
        Self { joints: JointState::at_rest(q), center, half: side / 2.0, target, arm_offsets, box_offsets, target_angles }
    }

    fn tip(&self, cfg: &EnvConfig) -> [f64; 2] {
        let p = forward_kinematics(&self.joints.q, &cfg.geom);
        [p.x, p.y]
    }

    fn push_dir(&self) -> [f64; 2] {
        let d = [self.target[0] - self.center[0], self.target[1] - self.center[1]];
        let n = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-9);
        [d[0] / n, d[1] / n]
    }

    /// Where the tip must sit to push the box straight at the target.
    fn behind(&self) -> [f64; 2] {
        let u = self.push_dir();
        let back = self.half + TIP_RADIUS;
        [self.center[0] - u[0] * back, self.center[1] - u[1] * back]
    }

    pub(crate) fn observe(&self, cfg: &EnvConfig) -> (Vec<f64>, Vec<f64>) {
        let mut pts = Vec::with_capacity(cfg.n_points * 5);
        arm_points(&self.joints.q, &cfg.geom.links, &self.arm_offsets, &mut pts);
        let h = self.half;
        for &o in &self.box_offsets {
            let side = o.floor();
            let f = 2.0 * (o - side) - 1.0;
            let (dx, dy) = match side as u8 {
                0 => (f * h, -h),
                1 => (h, f * h),
                2 => (-f * h, h),
                _ => (-h, -f * h),
            };
            pts.extend_from_slice(&[self.center[0] + dx, self.center[1] + dy]);
            pts.extend_from_slice(&SEG_OBJECT);
        }
        ring_points(self.target, TARGET_RING, &self.target_angles, &SEG_GOAL, &mut pts);
        let tip = self.tip(cfg);
        let js = &self.joints;
        let proprio = vec![
            js.q[0],
            js.q[1],
            js.qdot[0],
            js.qdot[1],
            tip[0],
            tip[1],
            self.center[0] - tip[0],
            self.center[1] - tip[1],
            self.target[0] - self.center[0],
            self.target[1] - self.center[1],
        ];
        (pts, proprio)
    }

    /// Quasi-static contact: the box translates just enough to clear the tip.
    fn resolve_contact(&mut self, tip: [f64; 2]) {
        let h = self.half;
        let c = self.center;
        let closest = [tip[0].clamp(c[0] - h, c[0] + h), tip[1].clamp(c[1] - h, c[1] + h)];
        let d = dist(tip, closest);
        if d >= TIP_RADIUS {
            return;
        }
        if d > 0.0 {
            let s = (TIP_RADIUS - d) / d;
            self.center[0] += (closest[0] - tip[0]) * s;
            self.center[1] += (closest[1] - tip[1]) * s;
        } else {
            // Tip inside the box: exit along the shallowest face.
            let pen = [h + TIP_RADIUS - (tip[0] - c[0]).abs(), h + TIP_RADIUS - (tip[1] - c[1]).abs()];
            let axis = if pen[0] <= pen[1] { 0 } else { 1 };
            let sign = if tip[axis] >= c[axis] { -1.0 } else { 1.0 };
            self.center[axis] += sign * pen[axis];
        }
    }

    pub(crate) fn step(&mut self, cfg: &EnvConfig, action: &[f64]) -> Result<(f64, bool)> {
        let u = pd_joint_delta_pos(action, &self.joints, &cfg.gains, &cfg.geom)?;
        let sub = cfg.dt / SUBSTEPS as f64;
        for _ in 0..SUBSTEPS {
            integrate_joints(&mut self.joints, &u, &cfg.geom, sub);
            let tip = self.tip(cfg);
            self.resolve_contact(tip);
        }
        let tip = self.tip(cfg);
        let to_target = dist(self.center, self.target);
        Ok((dist(tip, self.behind()) + 2.0 * to_target, to_target <= TOLERANCE))
    }

    /// Get behind the box, then push it along the box-to-target line.
    pub(crate) fn expert(&self, cfg: &EnvConfig) -> Vec<f64> {
        let tip = self.tip(cfg);
        let u = self.push_dir();
        let rel = [tip[0] - self.center[0], tip[1] - self.center[1]];
        let along = rel[0] * u[0] + rel[1] * u[1];
        let lateral = [rel[0] - along * u[0], rel[1] - along * u[1]];
        let lat = (lateral[0].powi(2) + lateral[1].powi(2)).sqrt();
        let step = cfg.geom.dx_max * 2.0;
        let dx = if along < -self.half && lat < 0.5 * self.half {
            [u[0] * step - lateral[0], u[1] * step - lateral[1]]
        } else {
            let staging = self.half + TIP_RADIUS + 0.04;
            let goal = [self.center[0] - u[0] * staging, self.center[1] - u[1] * staging];
            [goal[0] - tip[0], goal[1] - tip[1]]
        };
        let j = jacobian(&self.joints.q, &cfg.geom, false);
        let dq = dls_step(&j, &dx, cfg.geom.damping).unwrap_or_else(|_| vec![0.0; 2]);
        dq.iter().map(|v| (v / cfg.geom.dq_max).clamp(-1.0, 1.0)).collect()
    }
}
