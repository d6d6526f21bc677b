//! Built-in torque-controlled environments on top of the exact dynamics.
//!
//! Rewards, per control step, with `c(τ) = Σ_j (τ_j / τmax_j)²` and `h` the
//! world height of the configured point after the step:
//!
//! | kind           | reward                                          | terminates when    |
//! |----------------|-------------------------------------------------|--------------------|
//! | `balance`      | `w_up · h / h_ref − c_ctrl · c(τ)`              | `h < fall_height`  |
//! | `swingup`      | `w_up · (1 + h / h_ref) / 2 − c_ctrl · c(τ)`    | never              |
//! | `hop_forward`  | `alive + w_fwd · clip(ẋ, ±v_max) − c_ctrl · c(τ)` | `h < fall_height` |
//! | `regress_only` | `0`                                             | never              |
//!
//! Episodes are truncated (not terminated) after `horizon` control steps.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{enforce_limits, point_jacobian, step_semi_implicit, world_poses, DynamicsError, JointState};
use crate::morphology::{parse_native, JointKind, KinematicTree, MorphologyDoc, MorphologyError};
use crate::spatial::Vec3;

pub const PRESETS: [&str; 5] = [
    "double_pendulum_balance",
    "double_pendulum_swingup",
    "chain4_regress",
    "hopper_hop",
    "identity_synthetic",
];

fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "double_pendulum_balance" => include_str!("../assets/envs/double_pendulum_balance.json"),
        "double_pendulum_swingup" => include_str!("../assets/envs/double_pendulum_swingup.json"),
        "chain4_regress" => include_str!("../assets/envs/chain4_regress.json"),
        "hopper_hop" => include_str!("../assets/envs/hopper_hop.json"),
        "identity_synthetic" => include_str!("../assets/envs/identity_synthetic.json"),
        _ => return None,
    })
}

/// Morphology documents shipped with the crate.
pub fn builtin_morphology(name: &str) -> Option<&'static str> {
    Some(match name {
        "double_pendulum" => include_str!("../assets/morphologies/double_pendulum.json"),
        "chain4" => include_str!("../assets/morphologies/chain4.json"),
        "hopper" => include_str!("../assets/morphologies/hopper.json"),
        _ => return None,
    })
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("unknown preset `{0}` (valid: {valid})", valid = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error(transparent)]
    Morphology(#[from] MorphologyError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("non-finite action or state at step {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsKind {
    JointPos,
    /// `sin q, cos q` per revolute joint (prismatic joints contribute `q`).
    JointSinCos,
    JointVel,
    /// Previous applied torque divided by the torque limit.
    PrevAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsBlock {
    pub kind: ObsKind,
    /// Joints to include, in order. Defaults to every moving joint (or every
    /// actuated joint for `prev_action`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<Vec<String>>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Balance,
    Swingup,
    HopForward,
    RegressOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointRef {
    pub link: String,
    pub point: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub kind: RewardKind,
    #[serde(default)]
    pub height_point: Option<PointRef>,
    #[serde(default = "one")]
    pub reference_height: f64,
    #[serde(default)]
    pub upright_weight: f64,
    #[serde(default)]
    pub ctrl_cost: f64,
    #[serde(default)]
    pub fall_height: Option<f64>,
    #[serde(default)]
    pub forward_joint: Option<String>,
    #[serde(default)]
    pub forward_weight: f64,
    #[serde(default)]
    pub max_forward_velocity: f64,
    #[serde(default)]
    pub alive_bonus: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResetConfig {
    /// Mean joint position by joint name (zero if absent).
    #[serde(default)]
    pub q_nominal: BTreeMap<String, f64>,
    /// Half-width of the uniform position noise, rad or m.
    #[serde(default)]
    pub q_noise: f64,
    #[serde(default)]
    pub qd_noise: f64,
}

/// One-sided spring-damper contact between points and the plane `z = 0`,
/// with viscous friction capped by a Coulomb cone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    pub points: Vec<PointRef>,
    pub stiffness: f64,
    pub damping: f64,
    pub friction: f64,
    pub tangential_damping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    #[default]
    Physics,
    /// The state never changes; used for sanity-check regression datasets.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MorphologyRef {
    Inline(MorphologyDoc),
    /// A built-in morphology name, or a path relative to the config file.
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    pub morphology: MorphologyRef,
    #[serde(default)]
    pub dynamics: DynamicsMode,
    pub dt: f64,
    pub decimation: usize,
    pub horizon: usize,
    pub torque_limit: BTreeMap<String, f64>,
    pub obs_layout: Vec<ObsBlock>,
    #[serde(default = "one_usize")]
    pub history: usize,
    #[serde(default)]
    pub reset: ResetConfig,
    pub reward: RewardConfig,
    #[serde(default)]
    pub contact: Option<ContactConfig>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    /// Link whose mass is scaled in mass-shift evaluations.
    #[serde(default)]
    pub base_link: Option<String>,
}

fn one_usize() -> usize {
    1
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

impl EnvConfig {
    pub fn preset(name: &str) -> Result<Self, EnvError> {
        let text = preset_text(name).ok_or_else(|| EnvError::UnknownPreset(name.to_string()))?;
        serde_json::from_str(text).map_err(|e| EnvError::Config(format!("{name}: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        serde_json::from_str(text).map_err(|e| EnvError::Config(e.to_string()))
    }
}

/// A resolved observation block: which generalized coordinates it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedBlock {
    pub kind: ObsKind,
    pub offset: usize,
    pub len: usize,
    pub scale: f64,
    /// `(link index, dof index)` per joint, or action slot for `prev_action`.
    entries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub config: EnvConfig,
    pub tree: KinematicTree,
    pub gravity: Vec3,
    /// Per action slot: the link whose joint it drives and the dof index.
    pub actuators: Vec<(usize, usize)>,
    pub torque_limit: Vec<f64>,
    blocks: Vec<ResolvedBlock>,
    base_obs_dim: usize,
    height_point: Option<(usize, Vec3)>,
    forward_dof: Option<usize>,
    contacts: Vec<(usize, Vec3)>,
}

impl EnvSpec {
    pub fn preset(name: &str) -> Result<Self, EnvError> {
        Self::from_config(EnvConfig::preset(name)?, None)
    }

    /// Load a config file; named morphologies that are not built in resolve
    /// relative to the file.
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let cfg = EnvConfig::from_json(&std::fs::read_to_string(path)?)?;
        Self::from_config(cfg, path.parent())
    }

    /// A preset name or a config path.
    pub fn resolve(name_or_path: &str) -> Result<Self, EnvError> {
        if preset_text(name_or_path).is_some() {
            Self::preset(name_or_path)
        } else if Path::new(name_or_path).exists() {
            Self::load(Path::new(name_or_path))
        } else {
            Err(EnvError::UnknownPreset(name_or_path.to_string()))
        }
    }

    pub fn from_config(config: EnvConfig, base_dir: Option<&Path>) -> Result<Self, EnvError> {
        let tree = match &config.morphology {
            MorphologyRef::Inline(doc) => parse_native(doc)?,
            MorphologyRef::Named(name) => {
                let text = match builtin_morphology(name) {
                    Some(t) => t.to_string(),
                    None => {
                        let p = base_dir.map_or_else(|| PathBuf::from(name), |d| d.join(name));
                        std::fs::read_to_string(p)?
                    }
                };
                parse_native(&MorphologyDoc::from_json(&text)?)?
            }
        };
        Self::with_config_and_tree(config, tree)
    }

    /// The same task on a different tree (e.g. mass-shifted); joint names
    /// must resolve identically.
    pub fn with_tree(&self, tree: KinematicTree) -> Result<Self, EnvError> {
        Self::with_config_and_tree(self.config.clone(), tree)
    }

    fn with_config_and_tree(config: EnvConfig, tree: KinematicTree) -> Result<Self, EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if !(config.dt > 0.0) || config.decimation < 1 || config.horizon < 1 || config.history < 1 {
            return bad("need dt > 0, decimation ≥ 1, horizon ≥ 1, history ≥ 1".into());
        }
        let joint_link = |name: &str| -> Result<usize, EnvError> {
            (1..tree.num_links())
                .find(|&i| tree.joint(i).is_some_and(|j| j.name == name))
                .ok_or_else(|| EnvError::Config(format!("unknown joint `{name}`")))
        };
        let link = |name: &str| tree.link_index(name).ok_or_else(|| EnvError::Config(format!("unknown link `{name}`")));

        let actuated = tree.actuated_links();
        let mut actuators = Vec::new();
        let mut torque_limit = Vec::new();
        for &i in &actuated {
            let j = tree.joint(i).unwrap();
            let lim = *config
                .torque_limit
                .get(&j.name)
                .ok_or_else(|| EnvError::Config(format!("no torque limit for joint `{}`", j.name)))?;
            if !(lim > 0.0) {
                return bad(format!("torque limit of `{}` must be positive", j.name));
            }
            for r in 0..j.dof {
                actuators.push((i, tree.dof_offset(i) + r));
                torque_limit.push(lim);
            }
        }
        for name in config.torque_limit.keys() {
            let i = joint_link(name)?;
            if !actuated.contains(&i) {
                return bad(format!("joint `{name}` is not actuated"));
            }
        }

        let mut blocks = Vec::new();
        let mut offset = 0;
        for b in &config.obs_layout {
            let entries: Vec<(usize, usize)> = if b.kind == ObsKind::PrevAction {
                let slots: Vec<usize> = match &b.joints {
                    None => (0..actuators.len()).collect(),
                    Some(names) => {
                        let mut s = Vec::new();
                        for n in names {
                            let i = joint_link(n)?;
                            s.extend((0..actuators.len()).filter(|&a| actuators[a].0 == i));
                        }
                        s
                    }
                };
                slots.into_iter().map(|a| (actuators[a].0, a)).collect()
            } else {
                let links: Vec<usize> = match &b.joints {
                    None => tree.moving_links(),
                    Some(names) => names.iter().map(|n| joint_link(n)).collect::<Result<_, _>>()?,
                };
                let mut e = Vec::new();
                for i in links {
                    let j = tree.joint(i).unwrap();
                    if j.kind == JointKind::Fixed {
                        return bad(format!("joint `{}` is fixed and has no state", j.name));
                    }
                    e.extend((0..j.dof).map(|r| (i, tree.dof_offset(i) + r)));
                }
                e
            };
            let len = match b.kind {
                ObsKind::JointSinCos => entries
                    .iter()
                    .map(|&(i, _)| if tree.joint(i).unwrap().kind == JointKind::Revolute { 2 } else { 1 })
                    .sum(),
                _ => entries.len(),
            };
            blocks.push(ResolvedBlock {
                kind: b.kind,
                offset,
                len,
                scale: b.scale,
                entries,
            });
            offset += len;
        }
        if offset == 0 {
            return bad("observation layout is empty".into());
        }

        if let Some(b) = &config.base_link {
            link(b)?;
        }
        for name in config.reset.q_nominal.keys() {
            joint_link(name)?;
        }
        let r = &config.reward;
        let height_point = match &r.height_point {
            Some(p) => Some((link(&p.link)?, Vec3::from(p.point))),
            None => None,
        };
        if matches!(r.kind, RewardKind::Balance | RewardKind::Swingup | RewardKind::HopForward) && height_point.is_none() {
            return bad(format!("{:?} reward needs a height point", r.kind));
        }
        if r.kind != RewardKind::RegressOnly && !(r.reference_height > 0.0) {
            return bad("reference height must be positive".into());
        }
        let forward_dof = match (&r.forward_joint, r.kind) {
            (Some(n), _) => Some(tree.dof_offset(joint_link(n)?)),
            (None, RewardKind::HopForward) => return bad("hop_forward reward needs a forward joint".into()),
            (None, _) => None,
        };
        let contacts = match &config.contact {
            Some(c) => c.points.iter().map(|p| Ok((link(&p.link)?, Vec3::from(p.point)))).collect::<Result<_, EnvError>>()?,
            None => Vec::new(),
        };

        Ok(Self {
            gravity: Vec3::from(config.gravity),
            config,
            tree,
            actuators,
            torque_limit,
            blocks,
            base_obs_dim: offset,
            height_point,
            forward_dof,
            contacts,
        })
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn action_dim(&self) -> usize {
        self.actuators.len()
    }

    /// Length of one observation frame (before history stacking).
    pub fn base_obs_dim(&self) -> usize {
        self.base_obs_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.base_obs_dim * self.config.history
    }

    pub fn blocks(&self) -> &[ResolvedBlock] {
        &self.blocks
    }

    /// Link owning each element of a base observation frame.
    pub fn obs_owners(&self) -> Vec<usize> {
        let mut owners = Vec::with_capacity(self.base_obs_dim);
        for b in &self.blocks {
            for &(i, _) in &b.entries {
                let n = if b.kind == ObsKind::JointSinCos && self.tree.joint(i).unwrap().kind == JointKind::Revolute {
                    2
                } else {
                    1
                };
                owners.extend(std::iter::repeat_n(i, n));
            }
        }
        owners
    }

    /// Upper bound on `|reward|` for any single step.
    pub fn reward_bound(&self) -> f64 {
        let r = &self.config.reward;
        let ctrl = r.ctrl_cost.abs() * self.action_dim() as f64;
        match r.kind {
            RewardKind::Balance | RewardKind::Swingup => r.upright_weight.abs() + ctrl,
            RewardKind::HopForward => r.alive_bonus.abs() + r.forward_weight.abs() * r.max_forward_velocity + ctrl,
            RewardKind::RegressOnly => 0.0,
        }
    }

    pub fn height(&self, q: &[f64]) -> Option<f64> {
        let (l, p) = self.height_point?;
        Some(world_poses(&self.tree, q)[l].apply_point(&p).z)
    }

    /// Joint-space generalized forces of the ground contact model.
    pub fn contact_torques(&self, state: &JointState) -> Vec<f64> {
        let mut tau = vec![0.0; self.tree.dof()];
        let Some(c) = &self.config.contact else { return tau };
        let world = world_poses(&self.tree, &state.q);
        for (l, p) in &self.contacts {
            let pos = world[*l].apply_point(p);
            if pos.z >= 0.0 {
                continue;
            }
            let jac = point_jacobian(&self.tree, &state.q, *l, p);
            let vel = &jac * nalgebra::DVector::from_column_slice(&state.qd);
            let normal = (c.stiffness * -pos.z - c.damping * vel[2]).max(0.0);
            let cap = c.friction * normal;
            let fx = (-c.tangential_damping * vel[0]).clamp(-cap, cap);
            let fy = (-c.tangential_damping * vel[1]).clamp(-cap, cap);
            let f = nalgebra::Vector3::new(fx, fy, normal);
            let gen = jac.transpose() * f;
            for (t, g) in tau.iter_mut().zip(gen.iter()) {
                *t += g;
            }
        }
        tau
    }

    fn frame(&self, state: &JointState, prev_action: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.base_obs_dim);
        for b in &self.blocks {
            for &(i, r) in &b.entries {
                match b.kind {
                    ObsKind::JointPos => out.push(b.scale * state.q[r]),
                    ObsKind::JointVel => out.push(b.scale * state.qd[r]),
                    ObsKind::JointSinCos => {
                        if self.tree.joint(i).unwrap().kind == JointKind::Revolute {
                            out.push(b.scale * state.q[r].sin());
                            out.push(b.scale * state.q[r].cos());
                        } else {
                            out.push(b.scale * state.q[r]);
                        }
                    }
                    ObsKind::PrevAction => out.push(b.scale * prev_action[r] / self.torque_limit[r]),
                }
            }
        }
        out
    }

    fn reward(&self, next: &JointState, applied: &[f64]) -> (f64, bool) {
        let r = &self.config.reward;
        let ctrl: f64 = applied.iter().zip(&self.torque_limit).map(|(a, l)| (a / l).powi(2)).sum::<f64>() * r.ctrl_cost;
        let h = self.height(&next.q);
        let fell = match (h, r.fall_height) {
            (Some(h), Some(f)) => h < f,
            _ => false,
        };
        let reward = match r.kind {
            RewardKind::Balance => r.upright_weight * h.unwrap() / r.reference_height - ctrl,
            RewardKind::Swingup => r.upright_weight * (1.0 + h.unwrap() / r.reference_height) / 2.0 - ctrl,
            RewardKind::HopForward => {
                let v = next.qd[self.forward_dof.unwrap()].clamp(-r.max_forward_velocity, r.max_forward_velocity);
                r.alive_bonus + r.forward_weight * v - ctrl
            }
            RewardKind::RegressOnly => 0.0,
        };
        let terminated = fell && r.kind != RewardKind::Swingup;
        (reward, terminated)
    }
}

/// Everything needed to continue an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub joints: JointState,
    pub t: usize,
    pub prev_action: Vec<f64>,
    history: VecDeque<Vec<f64>>,
}

impl EnvState {
    /// Start an episode from a given joint state.
    pub fn from_joints(spec: &EnvSpec, joints: JointState) -> Self {
        let prev_action = vec![0.0; spec.action_dim()];
        let mut history: VecDeque<Vec<f64>> = std::iter::repeat_n(vec![0.0; spec.base_obs_dim], spec.config.history - 1).collect();
        history.push_back(spec.frame(&joints, &prev_action));
        Self {
            joints,
            t: 0,
            prev_action,
            history,
        }
    }

    /// Stacked observation, oldest frame first.
    pub fn obs(&self) -> Vec<f64> {
        self.history.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Torque actually applied (after clamping).
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// The episode ended in a terminal state.
    pub done: bool,
    /// The episode hit the horizon without terminating.
    pub truncated: bool,
}

/// Sample an initial state; deterministic in `seed`.
pub fn reset(spec: &EnvSpec, seed: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reset_with(spec, &mut rng)
}

fn reset_with(spec: &EnvSpec, rng: &mut impl Rng) -> EnvState {
    let tree = &spec.tree;
    let mut js = JointState::zeros(tree);
    let rc = &spec.config.reset;
    for i in tree.moving_links() {
        let j = tree.joint(i).unwrap();
        let nominal = rc.q_nominal.get(&j.name).copied().unwrap_or(0.0);
        for r in tree.dof_offset(i)..tree.dof_offset(i) + j.dof {
            js.q[r] = nominal + rc.q_noise * rng.random_range(-1.0..=1.0);
            js.qd[r] = rc.qd_noise * rng.random_range(-1.0..=1.0);
        }
    }
    enforce_limits(tree, &mut js);
    EnvState::from_joints(spec, js)
}

/// Advance one control step.
pub fn step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<(EnvState, Transition), EnvError> {
    if action.len() != spec.action_dim() {
        return Err(EnvError::Dimension(format!("action has {} entries, expected {}", action.len(), spec.action_dim())));
    }
    if action.iter().any(|a| a.is_nan()) {
        return Err(EnvError::NonFinite(state.t));
    }
    let applied: Vec<f64> = action.iter().zip(&spec.torque_limit).map(|(a, l)| a.clamp(-l, *l)).collect();
    let mut tau = vec![0.0; spec.tree.dof()];
    for (a, &(_, r)) in applied.iter().zip(&spec.actuators) {
        tau[r] = *a;
    }
    let mut joints = state.joints.clone();
    if spec.config.dynamics == DynamicsMode::Physics {
        for _ in 0..spec.config.decimation {
            let mut total = spec.contact_torques(&joints);
            for (t, a) in total.iter_mut().zip(&tau) {
                *t += a;
            }
            joints = step_semi_implicit(&spec.tree, &joints, &total, spec.gravity, spec.config.dt)?;
        }
    }
    if !joints.is_finite() {
        return Err(EnvError::NonFinite(state.t));
    }
    let (reward, done) = spec.reward(&joints, &applied);
    let mut history = state.history.clone();
    history.pop_front();
    history.push_back(spec.frame(&joints, &applied));
    let next = EnvState {
        joints,
        t: state.t + 1,
        prev_action: applied.clone(),
        history,
    };
    let truncated = !done && next.t >= spec.config.horizon;
    let tr = Transition {
        obs: state.obs(),
        action: applied,
        reward,
        next_obs: next.obs(),
        done,
        truncated,
    };
    Ok((next, tr))
}

/// An environment instance that resets itself when an episode ends.
#[derive(Debug, Clone)]
pub struct Env {
    spec: Arc<EnvSpec>,
    state: EnvState,
    rng: ChaCha8Rng,
    episode_return: f64,
}

impl Env {
    pub fn new(spec: Arc<EnvSpec>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = reset_with(&spec, &mut rng);
        Self {
            spec,
            state,
            rng,
            episode_return: 0.0,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn obs(&self) -> Vec<f64> {
        self.state.obs()
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Step; after a terminal or truncated transition a fresh episode is
    /// started and its return reported.
    pub fn step(&mut self, action: &[f64]) -> Result<(Transition, Option<f64>), EnvError> {
        let (next, tr) = step(&self.spec, &self.state, action)?;
        self.episode_return += tr.reward;
        let finished = if tr.done || tr.truncated {
            let ret = self.episode_return;
            self.episode_return = 0.0;
            let seed = self.rng.next_u64();
            self.state = reset(&self.spec, seed);
            Some(ret)
        } else {
            self.state = next;
            None
        };
        Ok((tr, finished))
    }
}

/// `n` independent instances stepped in parallel; results keep index order.
#[derive(Debug, Clone)]
pub struct VecEnv {
    envs: Vec<Env>,
}

impl VecEnv {
    pub fn new(spec: Arc<EnvSpec>, n: usize, seed: u64) -> Self {
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        Self {
            envs: (0..n).map(|_| Env::new(spec.clone(), seeder.next_u64())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        self.envs.iter().map(Env::obs).collect()
    }

    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<Vec<(Transition, Option<f64>)>, EnvError> {
        if actions.len() != self.envs.len() {
            return Err(EnvError::Dimension(format!("{} actions for {} envs", actions.len(), self.envs.len())));
        }
        self.envs.par_iter_mut().zip(actions.par_iter()).map(|(e, a)| e.step(a)).collect()
    }
}

/// Source of actions for data collection.
pub trait ActionSource {
    fn act(&mut self, obs: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// Uniform torques within the limits.
pub struct RandomPolicy {
    limits: Vec<f64>,
}

impl RandomPolicy {
    pub fn new(spec: &EnvSpec) -> Self {
        Self {
            limits: spec.torque_limit.clone(),
        }
    }
}

impl ActionSource for RandomPolicy {
    fn act(&mut self, _obs: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.limits.iter().map(|l| rng.random_range(-l..=*l)).collect()
    }
}

impl<F: FnMut(&[f64], &mut ChaCha8Rng) -> Vec<f64>> ActionSource for F {
    fn act(&mut self, obs: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        self(obs, rng)
    }
}

/// Consecutive transitions from one instance; an episode ends at every
/// `done || truncated`.
pub fn rollout_dataset(
    spec: &EnvSpec,
    policy: &mut dyn ActionSource,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<Transition>, EnvError> {
    if n_steps == 0 {
        return Err(EnvError::Config("n_steps must be at least 1".into()));
    }
    let mut env = Env::new(Arc::new(spec.clone()), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ac71_0a5e_ed00);
    let mut out = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let a = policy.act(&env.obs(), &mut rng);
        out.push(env.step(&a)?.0);
    }
    Ok(out)
}

/// Episode index of each transition.
pub fn episode_ids(batch: &[Transition]) -> Vec<usize> {
    let mut id = 0;
    batch
        .iter()
        .map(|t| {
            let cur = id;
            if t.done || t.truncated {
                id += 1;
            }
            cur
        })
        .collect()
}
