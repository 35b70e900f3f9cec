use crate::controllers::{pd_joint_delta_pos, ArmGeom, JointState};
use crate::envs::{angles, dist, integrate_joints, ring_points, EnvConfig, SEG_GOAL, SEG_OBJECT, SEG_ROBOT};
use crate::error::Result;
use crate::rng::Generator;

pub(crate) const PARTICLES: usize = 32;
pub(crate) const PUSHER_POINTS: usize = 8;
pub(crate) const PROPRIO: usize = 10;
pub(crate) const PUSHER_RADIUS: f64 = 0.25;
pub(crate) const TARGET_RADIUS: f64 = 0.4;
/// Half-width of the push corridor, as a fraction of the pusher radius.
const CORRIDOR: f64 = 0.8;
const ORBIT_MARGIN: f64 = 0.08;
pub(crate) const SUCCESS_FRACTION: f64 = 0.8;
const SUBSTEPS: usize = 5;

/// The pusher's planar coordinates, exposed as two prismatic "joints".
pub(crate) fn pusher_geom() -> ArmGeom {
    let mut geom = ArmGeom::new(vec![1.0, 1.0], vec![(-1.5, 1.5), (-1.5, 1.5)]).expect("valid pusher geometry");
    geom.dq_max = 0.15;
    geom
}

#[derive(Clone, Debug)]
pub(crate) struct Gather {
    /// Pusher position and velocity.
    pub(crate) joints: JointState,
    particles: Vec<[f64; 2]>,
    target: [f64; 2],
    pusher_angles: Vec<f64>,
    target_angles: Vec<f64>,
}

impl Gather {
    pub(crate) fn new(cfg: &EnvConfig, spread: f64, gen: &mut Generator) -> Self {
        let pile = [-0.35 + gen.uniform_in(-0.1, 0.1), gen.uniform_in(-0.1, 0.1)];
        let particles = (0..PARTICLES)
            .map(|_| [pile[0] + spread * gen.normal(), pile[1] + spread * gen.normal()])
            .collect();
        let target = [0.45, gen.uniform_in(-0.1, 0.1)];
        let start = vec![-1.0, gen.uniform_in(-0.3, 0.3)];
        let pusher_angles = angles(gen, PUSHER_POINTS);
        let target_angles = angles(gen, cfg.n_points - PARTICLES - PUSHER_POINTS);
        Self { joints: JointState::at_rest(start), particles, target, pusher_angles, target_angles }
    }

    fn pusher(&self) -> [f64; 2] {
        [self.joints.q[0], self.joints.q[1]]
    }

    fn inside(&self, p: &[f64; 2]) -> bool {
        dist(*p, self.target) <= TARGET_RADIUS
    }

    fn fraction_inside(&self) -> f64 {
        self.particles.iter().filter(|p| self.inside(p)).count() as f64 / PARTICLES as f64
    }

    fn stray(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.particles.iter().filter(|p| !self.inside(p))
    }

    /// Nearest particle still outside the target (the target centre if none).
    fn nearest_stray(&self) -> [f64; 2] {
        let p = self.pusher();
        self.stray()
            .min_by(|a, b| dist(**a, p).total_cmp(&dist(**b, p)))
            .copied()
            .unwrap_or(self.target)
    }

    /// Fraction of particles that lie between the pusher and the target, inside the push corridor.
    fn corridor_load(&self) -> f64 {
        let p = self.pusher();
        let to_t = [self.target[0] - p[0], self.target[1] - p[1]];
        let len = (to_t[0] * to_t[0] + to_t[1] * to_t[1]).sqrt().max(1e-9);
        let w = [to_t[0] / len, to_t[1] / len];
        let hits = self
            .stray()
            .filter(|s| {
                let r = [s[0] - p[0], s[1] - p[1]];
                let along = r[0] * w[0] + r[1] * w[1];
                let lat = (r[1] * w[0] - r[0] * w[1]).abs();
                along > 0.0 && along < len && lat < CORRIDOR * PUSHER_RADIUS
            })
            .count();
        hits as f64 / PARTICLES as f64
    }

    pub(crate) fn observe(&self, _cfg: &EnvConfig) -> (Vec<f64>, Vec<f64>) {
        let mut pts = Vec::new();
        for p in &self.particles {
            pts.extend_from_slice(p);
            pts.extend_from_slice(&SEG_OBJECT);
        }
        ring_points(self.pusher(), PUSHER_RADIUS, &self.pusher_angles, &SEG_ROBOT, &mut pts);
        ring_points(self.target, TARGET_RADIUS, &self.target_angles, &SEG_GOAL, &mut pts);
        let p = self.pusher();
        for pt in pts.chunks_mut(5) {
            pt[0] -= p[0];
            pt[1] -= p[1];
        }
        let n = self.nearest_stray();
        let proprio = vec![
            p[0],
            p[1],
            self.joints.qdot[0],
            self.joints.qdot[1],
            n[0] - p[0],
            n[1] - p[1],
            self.target[0] - p[0],
            self.target[1] - p[1],
            self.corridor_load(),
            self.fraction_inside(),
        ];
        (pts, proprio)
    }

    /// Particles touching the pusher move with it (full friction) and are then
    /// pushed out of its disk. Particles that reach the target are captured.
    pub(crate) fn step(&mut self, cfg: &EnvConfig, action: &[f64]) -> Result<(f64, bool)> {
        let u = pd_joint_delta_pos(action, &self.joints, &cfg.gains, &cfg.geom)?;
        let sub = cfg.dt / SUBSTEPS as f64;
        for _ in 0..SUBSTEPS {
            let before = self.pusher();
            integrate_joints(&mut self.joints, &u, &cfg.geom, sub);
            let p = self.pusher();
            let shift = [p[0] - before[0], p[1] - before[1]];
            let target = self.target;
            for q in self.particles.iter_mut().filter(|q| dist(**q, target) > TARGET_RADIUS) {
                if dist(*q, p) < PUSHER_RADIUS {
                    q[0] += shift[0];
                    q[1] += shift[1];
                }
                let d = dist(*q, p);
                if d < PUSHER_RADIUS {
                    let (dx, dy) = if d > 1e-12 { ((q[0] - p[0]) / d, (q[1] - p[1]) / d) } else { (1.0, 0.0) };
                    *q = [p[0] + dx * PUSHER_RADIUS, p[1] + dy * PUSHER_RADIUS];
                }
            }
        }
        let excess: f64 = self.particles.iter().map(|q| (dist(*q, self.target) - TARGET_RADIUS).max(0.0)).sum::<f64>()
            / PARTICLES as f64;
        Ok((excess, self.fraction_inside() >= SUCCESS_FRACTION))
    }

    /// Bulldoze: drive at the target while stray particles sit in the corridor
    /// ahead, otherwise get behind the nearest stray particle.
    pub(crate) fn expert(&self, cfg: &EnvConfig) -> Vec<f64> {
        let p = self.pusher();
        let gain = 0.75 / cfg.geom.dq_max;
        if self.fraction_inside() >= 1.0 {
            return vec![0.0, 0.0];
        }
        let v = if self.corridor_load() > 0.0 {
            let to_t = [self.target[0] - p[0], self.target[1] - p[1]];
            let len = (to_t[0] * to_t[0] + to_t[1] * to_t[1]).sqrt().max(1e-9);
            [to_t[0] / len, to_t[1] / len]
        } else {
            let t = self.nearest_stray();
            let to_t = [self.target[0] - t[0], self.target[1] - t[1]];
            let len = (to_t[0] * to_t[0] + to_t[1] * to_t[1]).sqrt().max(1e-9);
            let ut = [to_t[0] / len, to_t[1] / len];
            let r = [p[0] - t[0], p[1] - t[1]];
            let rn = (r[0] * r[0] + r[1] * r[1]).sqrt();
            let reach = PUSHER_RADIUS + ORBIT_MARGIN;
            if rn < reach && r[0] * ut[0] + r[1] * ut[1] > -0.5 * PUSHER_RADIUS {
                // Circle round the particle instead of dragging it sideways.
                let rad = [r[0] / rn.max(1e-9), r[1] / rn.max(1e-9)];
                let mut tang = [-rad[1], rad[0]];
                if tang[0] * ut[0] + tang[1] * ut[1] > 0.0 {
                    tang = [-tang[0], -tang[1]];
                }
                [0.1 * tang[0] + rad[0] * (reach - rn), 0.1 * tang[1] + rad[1] * (reach - rn)]
            } else {
                let back = PUSHER_RADIUS + 0.05;
                [t[0] - ut[0] * back - p[0], t[1] - ut[1] * back - p[1]]
            }
        };
        // Scale the whole vector so saturation keeps the heading.
        let peak = v.iter().fold(0.0f64, |m, x| m.max((x * gain).abs()));
        let k = if peak > 1.0 { gain / peak } else { gain };
        v.iter().map(|x| x * k).collect()
    }
}
