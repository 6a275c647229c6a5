//! Blob-world tabletop stand-ins: a point reaching task and a pick-and-place
//! task on a 4 × 4 lattice, rendered as small RGB images.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{ControlMode, EmbodimentTag, ImageBuffer, Observation};

/// Lattice points per axis; positions live in `[0, LATTICE − 1]²`.
pub const LATTICE: usize = 4;
pub const IMAGE_SIZE: usize = 64;
pub const BLOB: usize = 5;
pub const VIEW: &str = "front";

pub const GRIP_OPEN: f64 = 1.0;
pub const GRIP_CLOSED: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PointReach,
    PickPlace,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointReach => "point_reach",
            EnvKind::PickPlace => "pick_place",
        }
    }

    pub fn instruction(self) -> &'static str {
        match self {
            EnvKind::PointReach => "reach the red goal",
            EnvKind::PickPlace => "put the green block on the red goal",
        }
    }
}

/// Robot morphologies. Both record actions as deltas; the arm's controller
/// takes absolute position targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embodiment {
    /// `[dx, dy, grip]`.
    Point,
    /// `[x, y, j2, j3, j4, j5, grip]`; the four middle joints are inert.
    Arm7,
}

impl Embodiment {
    pub fn name(self) -> &'static str {
        match self {
            Embodiment::Point => "point",
            Embodiment::Arm7 => "arm7",
        }
    }

    pub fn native_dof(self) -> usize {
        match self {
            Embodiment::Point => 3,
            Embodiment::Arm7 => 7,
        }
    }

    pub fn gripper_dim(self) -> usize {
        self.native_dof() - 1
    }

    /// Tag describing the recorded action stream.
    pub fn tag(self) -> EmbodimentTag {
        EmbodimentTag::new(self.name(), self.native_dof(), ControlMode::Delta).expect("valid tag")
    }

    /// What the controller consumes.
    pub fn command_mode(self) -> ControlMode {
        match self {
            Embodiment::Point => ControlMode::Delta,
            Embodiment::Arm7 => ControlMode::Absolute,
        }
    }
}

fn default_max_steps() -> usize {
    48
}

fn default_eps() -> f64 {
    0.25
}

fn default_step_max() -> f64 {
    0.25
}

fn default_image() -> usize {
    IMAGE_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub embodiment: Embodiment,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_eps")]
    pub success_epsilon: f64,
    #[serde(default = "default_eps")]
    pub grasp_epsilon: f64,
    #[serde(default = "default_step_max")]
    pub step_max: f64,
    /// Rendered image side in pixels.
    #[serde(default = "default_image")]
    pub image_size: usize,
}

impl EnvSpec {
    pub fn new(kind: EnvKind, embodiment: Embodiment) -> Self {
        EnvSpec {
            kind,
            embodiment,
            max_steps: default_max_steps(),
            success_epsilon: default_eps(),
            grasp_epsilon: default_eps(),
            step_max: default_step_max(),
            image_size: default_image(),
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.kind.name(), self.embodiment.name())
    }
}

/// Goal and (for pick-and-place) object placement of one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskPlacement {
    pub goal: [f64; 2],
    pub object: Option<[f64; 2]>,
}

fn lattice_point(i: usize) -> [f64; 2] {
    [(i / LATTICE) as f64, (i % LATTICE) as f64]
}

impl TaskPlacement {
    /// Seeded task enumeration: goals follow a shuffled lattice order,
    /// objects are drawn away from the goal.
    pub fn enumerate(kind: EnvKind, n: usize, seed: u64) -> Vec<TaskPlacement> {
        let mut order: Vec<usize> = (0..LATTICE * LATTICE).collect();
        order.shuffle(&mut rng::keyed(&[seed, 0x7A5C]));
        (0..n)
            .map(|i| {
                let g = order[i % order.len()];
                let object = (kind == EnvKind::PickPlace).then(|| {
                    let mut r = rng::keyed(&[seed, 0x0B1, i as u64]);
                    loop {
                        let o = r.gen_range(0..LATTICE * LATTICE);
                        if o != g {
                            break lattice_point(o);
                        }
                    }
                });
                TaskPlacement {
                    goal: lattice_point(g),
                    object,
                }
            })
            .collect()
    }

    /// Uniform placement for data generation.
    pub fn random<R: Rng>(kind: EnvKind, r: &mut R) -> TaskPlacement {
        let g = r.gen_range(0..LATTICE * LATTICE);
        let object = (kind == EnvKind::PickPlace).then(|| loop {
            let o = r.gen_range(0..LATTICE * LATTICE);
            if o != g {
                break lattice_point(o);
            }
        });
        TaskPlacement {
            goal: lattice_point(g),
            object,
        }
    }
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub gripper_open: bool,
    pub object: Option<[f64; 2]>,
    pub holding: bool,
}

#[derive(Debug, Clone)]
pub struct ToyEnv {
    pub spec: EnvSpec,
    pub task: TaskPlacement,
    pub state: EnvState,
    pub t: usize,
    pub done: bool,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub done: bool,
    pub success: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl ToyEnv {
    pub fn new(spec: EnvSpec, task: TaskPlacement) -> Result<Self> {
        if task.object.is_some() != (spec.kind == EnvKind::PickPlace) {
            return Err(Error::Config(format!(
                "task placement does not fit {}",
                spec.kind.name()
            )));
        }
        Ok(ToyEnv {
            state: EnvState {
                pos: [0.0, 0.0],
                gripper_open: true,
                object: task.object,
                holding: false,
            },
            spec,
            task,
            t: 0,
            done: false,
            success: false,
        })
    }

    /// Starts an episode with the agent on a seeded lattice point away from
    /// the goal.
    pub fn reset(&mut self, episode_seed: u64) -> Observation {
        let mut r = rng::keyed(&[episode_seed, 0xE915]);
        let start = loop {
            let p = lattice_point(r.gen_range(0..LATTICE * LATTICE));
            if p != self.task.goal {
                break p;
            }
        };
        self.reset_to(start)
    }

    pub fn reset_to(&mut self, start: [f64; 2]) -> Observation {
        self.state = EnvState {
            pos: start,
            gripper_open: true,
            object: self.task.object,
            holding: false,
        };
        self.t = 0;
        self.done = false;
        self.success = false;
        self.observe()
    }

    pub fn is_success(&self) -> bool {
        match self.spec.kind {
            EnvKind::PointReach => dist(self.state.pos, self.task.goal) <= self.spec.success_epsilon,
            EnvKind::PickPlace => {
                let obj = self.state.object.expect("pick_place has an object");
                !self.state.holding
                    && self.state.gripper_open
                    && dist(obj, self.task.goal) <= self.spec.success_epsilon
            }
        }
    }

    /// Proprioceptive state in the native action layout.
    pub fn proprio(&self) -> Vec<f64> {
        let grip = if self.state.gripper_open { GRIP_OPEN } else { GRIP_CLOSED };
        let mut s = vec![0.0; self.spec.embodiment.native_dof()];
        s[0] = self.state.pos[0];
        s[1] = self.state.pos[1];
        *s.last_mut().expect("non-empty") = grip;
        s
    }

    /// Applies one native action row (delta or absolute per embodiment).
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::Protocol("step after episode end".into()));
        }
        let emb = self.spec.embodiment;
        if action.len() != emb.native_dof() {
            return Err(Error::shape(format!(
                "{} expects {} action values, got {}",
                emb.name(),
                emb.native_dof(),
                action.len()
            )));
        }
        if action.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerics("non-finite action".into()));
        }
        let open = action[emb.gripper_dim()] > 0.0;
        if let Some(obj) = self.state.object {
            if self.state.holding && open {
                self.state.holding = false;
            } else if !self.state.holding
                && !open
                && self.state.gripper_open
                && dist(self.state.pos, obj) <= self.spec.grasp_epsilon
            {
                self.state.holding = true;
            }
        }
        self.state.gripper_open = open;

        let mut delta = match emb.command_mode() {
            ControlMode::Delta => [action[0], action[1]],
            ControlMode::Absolute => [action[0] - self.state.pos[0], action[1] - self.state.pos[1]],
        };
        let hi = (LATTICE - 1) as f64;
        for (i, d) in delta.iter_mut().enumerate() {
            *d = d.clamp(-self.spec.step_max, self.spec.step_max);
            self.state.pos[i] = (self.state.pos[i] + *d).clamp(0.0, hi);
        }
        if self.state.holding {
            self.state.object = Some(self.state.pos);
        }
        self.t += 1;
        self.success = self.is_success();
        self.done = self.success || self.t >= self.spec.max_steps;
        Ok(StepResult {
            obs: self.observe(),
            done: self.done,
            success: self.success,
        })
    }

    /// Converts a recorded (delta) row into a command for this embodiment.
    pub fn command_from_delta(&self, delta_row: &[f64]) -> Vec<f64> {
        let mut cmd = delta_row.to_vec();
        if self.spec.embodiment.command_mode() == ControlMode::Absolute {
            cmd[0] += self.state.pos[0];
            cmd[1] += self.state.pos[1];
        }
        cmd
    }

    pub fn observe(&self) -> Observation {
        let n = self.spec.image_size;
        let mut px = vec![0u8; n * n * 3];
        let scale = n as f64 / LATTICE as f64;
        let mut blob = |p: [f64; 2], ch: usize, v: u8| {
            let cr = (scale * (p[0] + 0.5)).round() as i64;
            let cc = (scale * (p[1] + 0.5)).round() as i64;
            let h = (BLOB / 2) as i64;
            for r in cr - h..=cr + h {
                for c in cc - h..=cc + h {
                    if (0..n as i64).contains(&r) && (0..n as i64).contains(&c) {
                        let i = (r as usize * n + c as usize) * 3 + ch;
                        px[i] = px[i].saturating_add(v);
                    }
                }
            }
        };
        blob(self.task.goal, 0, 255);
        if let Some(o) = self.state.object {
            blob(o, 1, 255);
        }
        blob(self.state.pos, 2, if self.state.gripper_open { 255 } else { 128 });
        let mut obs = Observation::single_view(
            VIEW,
            ImageBuffer::new(n, n, px).expect("consistent size"),
            self.spec.kind.instruction(),
        )
        .with_state(self.proprio());
        obs.time_index = self.t as u64;
        obs
    }
}

/// The canonical observation: point-reach, agent at the origin, goal in the
/// far corner.
pub fn canonical_observation() -> Observation {
    let mut env = ToyEnv::new(
        EnvSpec::new(EnvKind::PointReach, Embodiment::Point),
        TaskPlacement {
            goal: [3.0, 3.0],
            object: None,
        },
    )
    .expect("valid task");
    env.reset_to([0.0, 0.0])
}
