//! ABD-Net: per-link encoders, bottom-up message passing with a learned
//! projection, per-joint decoder heads and the orthogonality loss.

use super::{ActorKind, Bound, NetError, NetSpec};
use crate::autodiff::{Real, Tensor, Var};
use crate::morphology::KinematicTree;

/// Per-link quantities of one forward pass, each `[batch, d]`.
pub struct AbdFeatures<'t, T> {
    pub z: Vec<Var<'t, T>>,
    pub v: Vec<Var<'t, T>>,
    /// Contribution sent to the parent (`None` for the root).
    pub va: Vec<Option<Var<'t, T>>>,
    /// Sum of child contributions (`None` for leaves, where it is zero).
    pub m: Vec<Option<Var<'t, T>>>,
}

impl<T: Real> AbdFeatures<'_, T> {
    pub fn m_value(&self, i: usize) -> Tensor<T> {
        match self.m[i] {
            Some(m) => m.value(),
            None => Tensor::zeros(&self.v[i].shape()),
        }
    }
}

/// `z_i = φ_i(s)` for every link, each a linear map of the full observation.
pub fn encode<'t, T: Real>(
    _spec: &NetSpec,
    tree: &KinematicTree,
    bound: &Bound<'t, T>,
    obs: Var<'t, T>,
) -> Result<Vec<Var<'t, T>>, NetError> {
    let tape = obs.tape();
    tape.scope("encode", || {
        tree.links()
            .iter()
            .map(|l| {
                let w = bound.var(&format!("phi.{}.w", l.name))?;
                let b = bound.var(&format!("phi.{}.b", l.name))?;
                Ok(obs.matmul(w)?.add_bias(b)?)
            })
            .collect::<Result<Vec<_>, NetError>>()
    })
}

pub fn message_pass<'t, T: Real>(
    spec: &NetSpec,
    tree: &KinematicTree,
    bound: &Bound<'t, T>,
    z: &[Var<'t, T>],
) -> Result<AbdFeatures<'t, T>, NetError> {
    message_pass_perturbed(spec, tree, bound, z, &vec![None; z.len()])
}

/// Message passing with an optional additive perturbation of each `v_i`
/// applied before it is sent on.
pub fn message_pass_perturbed<'t, T: Real>(
    spec: &NetSpec,
    tree: &KinematicTree,
    bound: &Bound<'t, T>,
    z: &[Var<'t, T>],
    delta: &[Option<Var<'t, T>>],
) -> Result<AbdFeatures<'t, T>, NetError> {
    let k = tree.num_links();
    if z.len() != k || delta.len() != k {
        return Err(NetError::Config(format!("expected {k} link embeddings, got {}", z.len())));
    }
    let tape = z[0].tape();
    let mut v: Vec<Option<Var<'t, T>>> = vec![None; k];
    let mut va: Vec<Option<Var<'t, T>>> = vec![None; k];
    let mut m: Vec<Option<Var<'t, T>>> = vec![None; k];
    for &i in tree.leaf_to_root() {
        let name = &tree.link(i).name;
        let base = bound.var(&format!("base.{name}"))?;
        let mut vi = tape.scope("node", || z[i].add_bias(base).map(|u| u.softplus()))?;
        if let Some(mi) = m[i] {
            vi = tape.scope("message", || vi.add(mi))?;
        }
        if let Some(d) = delta[i] {
            vi = tape.scope("perturb", || vi.add(d))?;
        }
        if let Some(p) = tree.parent(i) {
            let contribution = tape.scope("message", || -> Result<_, NetError> {
                let proj = match spec.kind {
                    ActorKind::AbdNet => {
                        let w = bound.var(&format!("basis.{name}"))?;
                        vi.matmul(w)?.matmul(w.transpose())?
                    }
                    ActorKind::AbdNetNoOrth => vi.matmul(bound.var(&format!("mix.{name}"))?)?,
                    other => return Err(NetError::Config(format!("{other} has no message passing"))),
                };
                let vai = vi.sub(vi.mul(proj)?)?;
                m[p] = Some(match m[p] {
                    None => vai,
                    Some(acc) => acc.add(vai)?,
                });
                Ok(vai)
            })?;
            va[i] = Some(contribution);
        }
        v[i] = Some(vi);
    }
    Ok(AbdFeatures {
        z: z.to_vec(),
        v: v.into_iter().map(|x| x.expect("every link visited")).collect(),
        va,
        m,
    })
}

/// Concatenate every head's output; each head reads `reps` at its link.
pub fn decode_heads<'t, T: Real>(
    spec: &NetSpec,
    tree: &KinematicTree,
    bound: &Bound<'t, T>,
    reps: &[Var<'t, T>],
) -> Result<Var<'t, T>, NetError> {
    if spec.heads.is_empty() {
        return Err(NetError::Config("network has no output heads".into()));
    }
    let tape = reps[0].tape();
    tape.scope("decode", || {
        let mut outs = Vec::with_capacity(spec.heads.len());
        for h in &spec.heads {
            let idx = tree
                .link_index(&h.link)
                .ok_or_else(|| NetError::Config(format!("unknown link `{}`", h.link)))?;
            let p = |s: &str| bound.var(&format!("head.{}.{s}", h.name));
            let hidden = reps[idx].matmul(p("w1")?)?.add_bias(p("b1")?)?.tanh();
            outs.push(hidden.matmul(p("w2")?)?.add_bias(p("b2")?)?);
        }
        Ok(Var::concat_cols(&outs)?)
    })
}

/// `(1/K) Σ_{i ≥ 1} ‖W_iᵀ diag(v̄_i) W_i − I‖²_F`, with `v̄_i` the batch
/// mean of `v_i` (or the per-sample average of the norm when
/// `spec.orth_per_sample`).
pub fn orth_loss<'t, T: Real>(
    spec: &NetSpec,
    tree: &KinematicTree,
    bound: &Bound<'t, T>,
    feats: &AbdFeatures<'t, T>,
) -> Result<Var<'t, T>, NetError> {
    let tape = feats.v[0].tape();
    let k = tree.num_links();
    tape.scope("orth", || {
        let eye = tape.constant(Tensor::identity(spec.d));
        let term = |w: Var<'t, T>, v: Var<'t, T>| -> Result<Var<'t, T>, NetError> {
            let g = w.transpose().matmul(v.diag()?)?.matmul(w)?;
            Ok(g.sub(eye)?.frobenius_norm_sq())
        };
        let mut total: Option<Var<'t, T>> = None;
        for i in 1..k {
            let w = bound.var(&format!("basis.{}", tree.link(i).name))?;
            let vi = feats.v[i];
            let t = if spec.orth_per_sample {
                let batch = vi.shape()[0];
                let mut acc: Option<Var<'t, T>> = None;
                for b in 0..batch {
                    let row = vi.slice_rows(b, 1)?.reshape(&[spec.d])?;
                    let tb = term(w, row)?;
                    acc = Some(match acc {
                        None => tb,
                        Some(a) => a.add(tb)?,
                    });
                }
                acc.expect("non-empty batch").scalar_mul(1.0 / batch as f64)
            } else {
                term(w, vi.mean_rows())?
            };
            total = Some(match total {
                None => t,
                Some(a) => a.add(t)?,
            });
        }
        Ok(match total {
            Some(t) => t.scalar_mul(1.0 / k as f64),
            None => tape.constant(Tensor::scalar(T::zero())),
        })
    })
}
