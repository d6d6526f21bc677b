use serde::Serialize;

use super::{actor_forward, ActorKind, NetError, NetSpec, GNN_ROUNDS};
use crate::autodiff::{Tape, Tensor};
use crate::morphology::KinematicTree;

/// Multiply-add counts of one single-observation forward pass, by stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlopsReport {
    pub encode: u64,
    pub node: u64,
    pub message: u64,
    pub rounds: u64,
    pub decode: u64,
    pub mlp: u64,
    pub total: u64,
}

impl FlopsReport {
    fn finish(mut self) -> Self {
        self.total = self.encode + self.node + self.message + self.rounds + self.decode + self.mlp;
        self
    }
}

/// Closed-form count. A `[n, k] × [k, m]` product costs `n·k·m`; every
/// elementwise, bias or reduction op costs one per element; transposes,
/// slices and concatenations are free. The first contribution arriving at
/// an empty message slot is a move, so each tree edge costs exactly one
/// d-wide addition.
pub fn flops_count(spec: &NetSpec, tree: &KinematicTree) -> FlopsReport {
    let k = tree.num_links() as u64;
    let edges = k - 1;
    let o = spec.obs_dim as u64;
    let hh = spec.head_hidden as u64;
    let heads = |width: u64| -> u64 {
        spec.heads
            .iter()
            .map(|h| {
                let n = h.out_dim as u64;
                width * hh + 2 * hh + hh * n + n
            })
            .sum()
    };
    let mut r = FlopsReport::default();
    match spec.kind {
        ActorKind::AbdNet | ActorKind::AbdNetNoOrth => {
            let d = spec.d as u64;
            r.encode = k * (o * d + d);
            r.node = k * 2 * d;
            let projection = if spec.kind == ActorKind::AbdNet { 2 * d * d } else { d * d };
            r.message = edges * (projection + 3 * d);
            r.decode = heads(d);
        }
        ActorKind::Gnn => {
            let g = spec.width as u64;
            r.encode = k * (o * g + 2 * g);
            let per_round: u64 = (0..tree.num_links())
                .map(|i| {
                    let deg = (tree.children(i).len() + usize::from(tree.parent(i).is_some())) as u64;
                    let aggregate = if deg > 0 { (deg - 1) * g + g * g + g } else { 0 };
                    g * g + aggregate + 2 * g
                })
                .sum();
            r.rounds = GNN_ROUNDS as u64 * per_round;
            r.decode = heads(g);
        }
        ActorKind::Mlp => {
            let h = spec.width as u64;
            let a = spec.output_dim() as u64;
            r.mlp = o * h + 2 * h + h * h + 2 * h + h * a + a;
        }
    }
    r.finish()
}

/// Count obtained by running the forward pass on an instrumented tape.
pub fn instrumented_flops(spec: &NetSpec, tree: &KinematicTree) -> Result<FlopsReport, NetError> {
    let params = spec.init::<f64>(tree, 0);
    let tape = Tape::<f64>::new();
    let bound = params.bind(&tape, false);
    let obs = tape.constant(Tensor::zeros(&[1, spec.obs_dim]));
    actor_forward(spec, tree, &bound, obs, false)?;
    let by = tape.flops_by_scope();
    let get = |s: &str| by.get(s).copied().unwrap_or(0);
    let r = FlopsReport {
        encode: get("encode"),
        node: get("node"),
        message: get("message"),
        rounds: get("rounds"),
        decode: get("decode"),
        mlp: get("mlp"),
        total: 0,
    }
    .finish();
    debug_assert_eq!(r.total, tape.flops());
    Ok(r)
}
