//! Actor networks over kinematic trees, the shared critic, parameter
//! storage, FLOPs accounting and checkpoints.

mod abd;
mod baselines;
pub mod checkpoint;
mod flops;
mod init;

pub use abd::{decode_heads, encode, message_pass, message_pass_perturbed, orth_loss, AbdFeatures};
pub use baselines::{gnn_forward, mlp_forward};
pub use flops::{flops_count, instrumented_flops, FlopsReport};
pub use init::orthogonal;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Real, Tape, Tensor, Var};
use crate::morphology::KinematicTree;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("checkpoint was trained on tree {expected}, got {actual}")]
    TreeMismatch { expected: String, actual: String },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActorKind {
    #[serde(rename = "abdnet")]
    AbdNet,
    #[serde(rename = "abdnet-noorth")]
    AbdNetNoOrth,
    #[serde(rename = "gnn")]
    Gnn,
    #[serde(rename = "mlp")]
    Mlp,
}

impl ActorKind {
    pub const ALL: [ActorKind; 4] = [ActorKind::AbdNet, ActorKind::AbdNetNoOrth, ActorKind::Gnn, ActorKind::Mlp];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActorKind::AbdNet => "abdnet",
            ActorKind::AbdNetNoOrth => "abdnet-noorth",
            ActorKind::Gnn => "gnn",
            ActorKind::Mlp => "mlp",
        }
    }

    pub fn is_abd(&self) -> bool {
        matches!(self, ActorKind::AbdNet | ActorKind::AbdNetNoOrth)
    }
}

impl fmt::Display for ActorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown actor `{s}`; valid choices: abdnet, abdnet-noorth, gnn, mlp"))
    }
}

/// One decoder head: reads the representation of `link` and emits
/// `out_dim` numbers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub link: String,
    pub out_dim: usize,
}

/// Architecture description. The tree itself is supplied separately and
/// guarded by its content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub kind: ActorKind,
    pub obs_dim: usize,
    /// Link representation width of ABD-Net.
    pub d: usize,
    /// Hidden width of each two-layer head.
    pub head_hidden: usize,
    /// Node width (GNN) or hidden width (MLP); unused by ABD-Net.
    pub width: usize,
    pub heads: Vec<HeadSpec>,
    /// Adds a state-independent `log_std` vector.
    pub stochastic: bool,
    /// Evaluate the orthogonality term per sample instead of on the
    /// batch-averaged representation.
    #[serde(default)]
    pub orth_per_sample: bool,
}

pub const GNN_ROUNDS: usize = 2;
pub const INITIAL_LOG_STD: f64 = -std::f64::consts::LN_2;

impl NetSpec {
    /// One head per actuated joint, in action order, reading the joint's
    /// parent link.
    pub fn policy_heads(tree: &KinematicTree) -> Vec<HeadSpec> {
        tree.actuated_links()
            .into_iter()
            .map(|i| {
                let j = tree.joint(i).expect("actuated link has a joint");
                HeadSpec {
                    name: j.name.clone(),
                    link: tree.link(tree.parent(i).unwrap()).name.clone(),
                    out_dim: j.dof,
                }
            })
            .collect()
    }

    /// Policy network with `d`-wide link features; baselines get their
    /// width matched to the ABD-Net parameter count.
    pub fn policy(kind: ActorKind, tree: &KinematicTree, obs_dim: usize, d: usize, head_hidden: usize) -> Self {
        let heads = Self::policy_heads(tree);
        Self::matched(kind, tree, obs_dim, d, head_hidden, heads, true)
    }

    pub fn matched(
        kind: ActorKind,
        tree: &KinematicTree,
        obs_dim: usize,
        d: usize,
        head_hidden: usize,
        heads: Vec<HeadSpec>,
        stochastic: bool,
    ) -> Self {
        let mut spec = Self {
            kind,
            obs_dim,
            d,
            head_hidden,
            width: d,
            heads,
            stochastic,
            orth_per_sample: false,
        };
        if !kind.is_abd() {
            let target = Self {
                kind: ActorKind::AbdNet,
                ..spec.clone()
            }
            .param_count(tree);
            spec.width = (1..=4096)
                .min_by_key(|&w| {
                    let s = Self { width: w, ..spec.clone() };
                    (s.param_count(tree) as i64 - target as i64).abs()
                })
                .unwrap();
        }
        spec
    }

    pub fn output_dim(&self) -> usize {
        self.heads.iter().map(|h| h.out_dim).sum()
    }

    /// Names and shapes of all parameters, in storage order.
    pub fn param_shapes(&self, tree: &KinematicTree) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let (o, d, hh) = (self.obs_dim, self.d, self.head_hidden);
        let head_shapes = |out: &mut Vec<(String, Vec<usize>)>, width: usize| {
            for h in &self.heads {
                out.push((format!("head.{}.w1", h.name), vec![width, hh]));
                out.push((format!("head.{}.b1", h.name), vec![hh]));
                out.push((format!("head.{}.w2", h.name), vec![hh, h.out_dim]));
                out.push((format!("head.{}.b2", h.name), vec![h.out_dim]));
            }
        };
        match self.kind {
            ActorKind::AbdNet | ActorKind::AbdNetNoOrth => {
                for l in tree.links() {
                    out.push((format!("phi.{}.w", l.name), vec![o, d]));
                    out.push((format!("phi.{}.b", l.name), vec![d]));
                    out.push((format!("base.{}", l.name), vec![d]));
                    if l.parent.is_some() {
                        let key = if self.kind == ActorKind::AbdNet { "basis" } else { "mix" };
                        out.push((format!("{key}.{}", l.name), vec![d, d]));
                    }
                }
                head_shapes(&mut out, d);
            }
            ActorKind::Gnn => {
                let g = self.width;
                for l in tree.links() {
                    out.push((format!("enc.{}.w", l.name), vec![o, g]));
                    out.push((format!("enc.{}.b", l.name), vec![g]));
                }
                for r in 0..GNN_ROUNDS {
                    out.push((format!("round{r}.u"), vec![g, g]));
                    out.push((format!("round{r}.v"), vec![g, g]));
                    out.push((format!("round{r}.c"), vec![g]));
                }
                head_shapes(&mut out, g);
            }
            ActorKind::Mlp => {
                let h = self.width;
                let a = self.output_dim();
                for (i, (fan_in, fan_out)) in [(o, h), (h, h), (h, a)].into_iter().enumerate() {
                    out.push((format!("mlp.{i}.w"), vec![fan_in, fan_out]));
                    out.push((format!("mlp.{i}.b"), vec![fan_out]));
                }
            }
        }
        if self.stochastic {
            out.push(("log_std".to_string(), vec![self.output_dim()]));
        }
        out
    }

    pub fn param_count(&self, tree: &KinematicTree) -> usize {
        self.param_shapes(tree).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    pub fn validate(&self, tree: &KinematicTree) -> Result<(), NetError> {
        if self.obs_dim == 0 || self.d == 0 || self.head_hidden == 0 || self.width == 0 {
            return Err(NetError::Config("widths and obs_dim must be positive".into()));
        }
        for h in &self.heads {
            if tree.link_index(&h.link).is_none() {
                return Err(NetError::Config(format!("head `{}` reads unknown link `{}`", h.name, h.link)));
            }
        }
        Ok(())
    }

    /// Freshly initialised parameters.
    pub fn init<T: Real>(&self, tree: &KinematicTree, seed: u64) -> Params<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = self.param_shapes(tree);
        let mut params = Params::default();
        for (name, shape) in shapes {
            let t = init::init_tensor(&name, &shape, self.d, &mut rng);
            params.push(name, t);
        }
        params
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Params<T> {
    pub fn push(&mut self, name: String, t: Tensor<T>) {
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Record every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Bound {
            index: self.names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect(),
            vars,
        }
    }
}

/// Parameters recorded on a tape.
pub struct Bound<'t, T> {
    index: HashMap<String, usize>,
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn var(&self, name: &str) -> Result<Var<'t, T>, NetError> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| NetError::Config(format!("missing parameter `{name}`")))
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

/// Result of an actor forward pass over a batch.
pub struct ActorOutput<'t, T> {
    /// `[batch, output_dim]`.
    pub mean: Var<'t, T>,
    pub log_std: Option<Var<'t, T>>,
    /// Scalar orthogonality loss (unweighted); present only for ABD-Net
    /// when requested.
    pub orth: Option<Var<'t, T>>,
    pub features: Option<AbdFeatures<'t, T>>,
}

/// Forward pass of any actor kind on an `[batch, obs_dim]` input.
pub fn actor_forward<'t, T: Real>(
    spec: &NetSpec,
    tree: &KinematicTree,
    bound: &Bound<'t, T>,
    obs: Var<'t, T>,
    with_orth: bool,
) -> Result<ActorOutput<'t, T>, NetError> {
    let shape = obs.shape();
    if shape.len() != 2 || shape[1] != spec.obs_dim {
        return Err(AutodiffError::Shape {
            op: "actor_forward",
            lhs: shape,
            rhs: vec![0, spec.obs_dim],
        }
        .into());
    }
    let (mean, orth, features) = match spec.kind {
        ActorKind::AbdNet | ActorKind::AbdNetNoOrth => {
            let z = encode(spec, tree, bound, obs)?;
            let feats = message_pass(spec, tree, bound, &z)?;
            let mean = decode_heads(spec, tree, bound, &feats.v)?;
            let orth = if with_orth && spec.kind == ActorKind::AbdNet {
                Some(orth_loss(spec, tree, bound, &feats)?)
            } else {
                None
            };
            (mean, orth, Some(feats))
        }
        ActorKind::Gnn => (gnn_forward(spec, tree, bound, obs)?, None, None),
        ActorKind::Mlp => (mlp_forward(spec, bound, obs)?, None, None),
    };
    let log_std = if spec.stochastic { Some(bound.var("log_std")?) } else { None };
    Ok(ActorOutput {
        mean,
        log_std,
        orth,
        features,
    })
}

/// Evaluate the mean output on a batch of observations without recording
/// gradients.
pub fn predict<T: Real>(
    spec: &NetSpec,
    tree: &KinematicTree,
    params: &Params<T>,
    obs: &[Vec<T>],
) -> Result<Vec<Vec<T>>, NetError> {
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let flat: Vec<T> = obs.iter().flatten().copied().collect();
    let x = tape.constant(Tensor::new(&[obs.len(), spec.obs_dim], flat)?);
    let out = actor_forward(spec, tree, &bound, x, false)?;
    let mean = out.mean.value();
    let a = spec.output_dim();
    Ok(mean.data().chunks(a).map(|c| c.to_vec()).collect())
}

/// Shared value network: obs → 64 → 64 → 1 with tanh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticSpec {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
}

impl CriticSpec {
    pub fn new(obs_dim: usize) -> Self {
        Self {
            obs_dim,
            hidden: vec![64, 64],
        }
    }

    fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.obs_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn init<T: Real>(&self, seed: u64) -> Params<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::default();
        let n = self.layers().len();
        for (i, (a, b)) in self.layers().into_iter().enumerate() {
            let gain = if i + 1 == n { 1.0 } else { std::f64::consts::SQRT_2 };
            p.push(format!("critic.{i}.w"), orthogonal(a, b, gain, &mut rng));
            p.push(format!("critic.{i}.b"), Tensor::zeros(&[b]));
        }
        p
    }

    /// `[batch, obs_dim] → [batch]`.
    pub fn forward<'t, T: Real>(&self, bound: &Bound<'t, T>, obs: Var<'t, T>) -> Result<Var<'t, T>, NetError> {
        let n = self.layers().len();
        let mut h = obs;
        for i in 0..n {
            h = h.matmul(bound.var(&format!("critic.{i}.w"))?)?.add_bias(bound.var(&format!("critic.{i}.b"))?)?;
            if i + 1 < n {
                h = h.tanh();
            }
        }
        let rows = h.shape()[0];
        Ok(h.reshape(&[rows])?)
    }
}
