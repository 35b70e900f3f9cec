//! Action-to-joint-command bridge for planar serial arms.
//!
//! Policies emit actions in the unit box. A controller turns an action plus
//! the current joint state into a joint command: a clamped PD acceleration
//! for the position-style controllers, a clamped velocity for
//! [`ControllerKind::PdJointVel`].

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    /// Joint angles, radians.
    pub q: Vec<f64>,
    /// Joint velocities, radians per second.
    pub qdot: Vec<f64>,
}

impl JointState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let qdot = vec![0.0; q.len()];
        Self { q, qdot }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
    /// Per-joint clamp on the command magnitude.
    pub u_max: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self { kp: 20.0, kd: 2.0, u_max: 10.0 }
    }
}

impl PdGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp > 0.0 && self.kd >= 0.0 && self.u_max > 0.0) {
            return Err(invalid(format!("bad PD gains {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    PdJointDeltaPos,
    PdJointVel,
    PdEeDeltaPose,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::PdJointDeltaPos => "pd_joint_delta_pos",
            ControllerKind::PdJointVel => "pd_joint_vel",
            ControllerKind::PdEeDeltaPose => "pd_ee_delta_pose",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::PdJointDeltaPos, Self::PdJointVel, Self::PdEeDeltaPose].into_iter().find(|k| k.name() == s)
    }
}

/// Geometry and per-step limits of a planar arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmGeom {
    pub links: Vec<f64>,
    /// `(lo, hi)` per joint, radians.
    pub limits: Vec<(f64, f64)>,
    /// Largest joint-target offset per step, radians.
    pub dq_max: f64,
    /// Velocity command clamp, radians per second.
    pub v_max: f64,
    /// Largest end-effector displacement per step.
    pub dx_max: f64,
    /// Damped-least-squares damping λ.
    pub damping: f64,
}

impl ArmGeom {
    pub fn new(links: Vec<f64>, limits: Vec<(f64, f64)>) -> Result<Self> {
        let g = Self { links, limits, dq_max: 0.1, v_max: 1.0, dx_max: 0.05, damping: 0.05 };
        g.validate()?;
        Ok(g)
    }

    /// Unit links; elbow kept on one side of the fully extended singularity.
    pub fn two_link() -> Self {
        let pi = std::f64::consts::PI;
        Self::new(vec![1.0, 1.0], vec![(-pi, pi), (0.1, 3.0)]).expect("valid default arm")
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() || self.links.len() != self.limits.len() {
            return Err(invalid("arm needs one limit pair per link"));
        }
        if self.links.iter().any(|&l| !(l > 0.0)) {
            return Err(invalid("link lengths must be positive"));
        }
        if self.limits.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(invalid("joint limits need lo < hi"));
        }
        if !(self.dq_max > 0.0 && self.v_max > 0.0 && self.dx_max > 0.0 && self.damping >= 0.0) {
            return Err(invalid("step limits must be positive"));
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.links.len()
    }

    /// Size of an end-effector action: orientation is controlled only with
    /// three or more joints.
    pub fn ee_dims(&self) -> usize {
        if self.n_joints() >= 3 {
            3
        } else {
            2
        }
    }

    pub fn clamp_to_limits(&self, q: &mut [f64]) {
        for (v, &(lo, hi)) in q.iter_mut().zip(&self.limits) {
            *v = v.clamp(lo, hi);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EePose {
    pub x: f64,
    pub y: f64,
    /// Sum of joint angles.
    pub theta: f64,
}

pub fn forward_kinematics(q: &[f64], geom: &ArmGeom) -> EePose {
    let (mut x, mut y, mut phi) = (0.0, 0.0, 0.0);
    for (qi, l) in q.iter().zip(&geom.links) {
        phi += qi;
        x += l * phi.cos();
        y += l * phi.sin();
    }
    EePose { x, y, theta: phi }
}

/// Analytic Jacobian of `(x, y[, θ])` w.r.t. `q`.
pub fn jacobian(q: &[f64], geom: &ArmGeom, with_orientation: bool) -> DMatrix<f64> {
    let n = q.len();
    let rows = if with_orientation { 3 } else { 2 };
    let mut phis = Vec::with_capacity(n);
    let mut acc = 0.0;
    for qi in q {
        acc += qi;
        phis.push(acc);
    }
    let mut j = DMatrix::zeros(rows, n);
    for i in 0..n {
        for k in i..n {
            j[(0, i)] -= geom.links[k] * phis[k].sin();
            j[(1, i)] += geom.links[k] * phis[k].cos();
        }
        if with_orientation {
            j[(2, i)] = 1.0;
        }
    }
    j
}

/// Damped least squares: `Δq = Jᵀ y` with `(J Jᵀ + λ² I) y = Δx`.
pub fn dls_step(j: &DMatrix<f64>, dx: &[f64], damping: f64) -> Result<Vec<f64>> {
    let y = dls_dual(j, dx, damping)?;
    Ok((j.transpose() * y).iter().copied().collect())
}

/// The `y` of [`dls_step`]; exposed so callers can check the residual.
pub fn dls_dual(j: &DMatrix<f64>, dx: &[f64], damping: f64) -> Result<DVector<f64>> {
    if dx.len() != j.nrows() {
        return Err(invalid(format!("task delta has {} entries, Jacobian {} rows", dx.len(), j.nrows())));
    }
    let a = j * j.transpose() + DMatrix::identity(j.nrows(), j.nrows()) * (damping * damping);
    let b = DVector::from_column_slice(dx);
    a.lu().solve(&b).ok_or_else(|| invalid("singular damped system; use damping > 0"))
}

fn check_action(action: &[f64], dims: usize) -> Result<()> {
    if action.len() != dims {
        return Err(invalid(format!("action has {} entries, controller expects {dims}", action.len())));
    }
    if let Some(a) = action.iter().find(|a| !(a.abs() <= 1.0)) {
        return Err(invalid(format!("action component {a} outside [-1, 1]")));
    }
    Ok(())
}

fn check_state(state: &JointState, geom: &ArmGeom) -> Result<()> {
    let n = geom.n_joints();
    if state.q.len() != n || state.qdot.len() != n {
        return Err(invalid(format!("joint state has {} / {} entries for {n} joints", state.q.len(), state.qdot.len())));
    }
    Ok(())
}

/// `clamp(kp (target − q) − kd q̇, ±u_max)` per joint.
fn pd_toward(target: &[f64], state: &JointState, gains: &PdGains) -> Vec<f64> {
    target
        .iter()
        .zip(&state.q)
        .zip(&state.qdot)
        .map(|((t, q), qd)| (gains.kp * (t - q) - gains.kd * qd).clamp(-gains.u_max, gains.u_max))
        .collect()
}

pub fn pd_joint_delta_pos(action: &[f64], state: &JointState, gains: &PdGains, geom: &ArmGeom) -> Result<Vec<f64>> {
    check_state(state, geom)?;
    check_action(action, geom.n_joints())?;
    let mut target: Vec<f64> = state.q.iter().zip(action).map(|(q, a)| q + geom.dq_max * a).collect();
    geom.clamp_to_limits(&mut target);
    Ok(pd_toward(&target, state, gains))
}

pub fn pd_joint_vel(action: &[f64], state: &JointState, geom: &ArmGeom) -> Result<Vec<f64>> {
    check_state(state, geom)?;
    check_action(action, geom.n_joints())?;
    Ok(action.iter().map(|a| (geom.v_max * a).clamp(-geom.v_max, geom.v_max)).collect())
}

/// Joint offset the end-effector controller targets for `action`.
pub fn ee_delta_to_joint_delta(action: &[f64], state: &JointState, geom: &ArmGeom) -> Result<Vec<f64>> {
    check_state(state, geom)?;
    check_action(action, geom.ee_dims())?;
    let dx: Vec<f64> = action.iter().map(|a| geom.dx_max * a).collect();
    if dx.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; geom.n_joints()]);
    }
    let j = jacobian(&state.q, geom, geom.ee_dims() == 3);
    dls_step(&j, &dx, geom.damping)
}

pub fn pd_ee_delta_pose(action: &[f64], state: &JointState, gains: &PdGains, geom: &ArmGeom) -> Result<Vec<f64>> {
    let dq = ee_delta_to_joint_delta(action, state, geom)?;
    let mut target: Vec<f64> = state.q.iter().zip(&dq).map(|(q, d)| q + d).collect();
    geom.clamp_to_limits(&mut target);
    Ok(pd_toward(&target, state, gains))
}

/// A controller, optionally driving a planar mobile base in front of the arm.
///
/// With a base the action is `[v_x, v_y, arm action..]`; the base part is
/// handled as a joint-velocity command over the two base coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Controller {
    pub kind: ControllerKind,
    pub mobile_base: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Command {
    pub base_velocity: Option<[f64; 2]>,
    /// Joint accelerations for the PD kinds, joint velocities for `PdJointVel`.
    pub joints: Vec<f64>,
}

impl Controller {
    pub fn new(kind: ControllerKind) -> Self {
        Self { kind, mobile_base: false }
    }

    pub fn action_dim(&self, geom: &ArmGeom) -> usize {
        let arm = match self.kind {
            ControllerKind::PdEeDeltaPose => geom.ee_dims(),
            _ => geom.n_joints(),
        };
        arm + if self.mobile_base { 2 } else { 0 }
    }

    pub fn command(&self, action: &[f64], state: &JointState, gains: &PdGains, geom: &ArmGeom) -> Result<Command> {
        if action.len() != self.action_dim(geom) {
            return Err(invalid(format!("action has {} entries, controller expects {}", action.len(), self.action_dim(geom))));
        }
        let (base, arm) = if self.mobile_base { action.split_at(2) } else { action.split_at(0) };
        let base_velocity = if self.mobile_base {
            check_action(base, 2)?;
            Some([geom.v_max * base[0], geom.v_max * base[1]])
        } else {
            None
        };
        let joints = match self.kind {
            ControllerKind::PdJointDeltaPos => pd_joint_delta_pos(arm, state, gains, geom)?,
            ControllerKind::PdJointVel => pd_joint_vel(arm, state, geom)?,
            ControllerKind::PdEeDeltaPose => pd_ee_delta_pose(arm, state, gains, geom)?,
        };
        Ok(Command { base_velocity, joints })
    }
}
