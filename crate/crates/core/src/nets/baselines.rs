//! Baseline actors: a message-passing GNN over `pa ∪ ch` neighbourhoods and
//! a plain MLP.

use super::{decode_heads, Bound, NetError, NetSpec, GNN_ROUNDS};
use crate::autodiff::{Real, Var};
use crate::morphology::KinematicTree;

/// Per-link encoders, then `GNN_ROUNDS` rounds of
/// `h_i ← tanh(h_i U_r + (Σ_{n ∈ N(i)} h_n) V_r + c_r)` with weights shared
/// across links; heads as in ABD-Net.
pub fn gnn_forward<'t, T: Real>(
    spec: &NetSpec,
    tree: &KinematicTree,
    bound: &Bound<'t, T>,
    obs: Var<'t, T>,
) -> Result<Var<'t, T>, NetError> {
    let tape = obs.tape();
    let mut h = tape.scope("encode", || {
        tree.links()
            .iter()
            .map(|l| {
                let w = bound.var(&format!("enc.{}.w", l.name))?;
                let b = bound.var(&format!("enc.{}.b", l.name))?;
                Ok(obs.matmul(w)?.add_bias(b)?.tanh())
            })
            .collect::<Result<Vec<_>, NetError>>()
    })?;
    let neighbours: Vec<Vec<usize>> = (0..tree.num_links())
        .map(|i| tree.parent(i).into_iter().chain(tree.children(i).iter().copied()).collect())
        .collect();
    for r in 0..GNN_ROUNDS {
        h = tape.scope("rounds", || -> Result<_, NetError> {
            let u = bound.var(&format!("round{r}.u"))?;
            let v = bound.var(&format!("round{r}.v"))?;
            let c = bound.var(&format!("round{r}.c"))?;
            let mut next = Vec::with_capacity(h.len());
            for (i, nb) in neighbours.iter().enumerate() {
                let mut pre = h[i].matmul(u)?;
                if let Some((&first, rest)) = nb.split_first() {
                    let mut m = h[first];
                    for &n in rest {
                        m = m.add(h[n])?;
                    }
                    pre = pre.add(m.matmul(v)?)?;
                }
                next.push(pre.add_bias(c)?.tanh());
            }
            Ok(next)
        })?;
    }
    decode_heads(spec, tree, bound, &h)
}

/// `obs → tanh → tanh → output`.
pub fn mlp_forward<'t, T: Real>(spec: &NetSpec, bound: &Bound<'t, T>, obs: Var<'t, T>) -> Result<Var<'t, T>, NetError> {
    let _ = spec;
    obs.tape().scope("mlp", || {
        let mut x = obs;
        for i in 0..3 {
            x = x.matmul(bound.var(&format!("mlp.{i}.w"))?)?.add_bias(bound.var(&format!("mlp.{i}.b"))?)?;
            if i < 2 {
                x = x.tanh();
            }
        }
        Ok(x)
    })
}
