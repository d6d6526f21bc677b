//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "ABDCKPT1"
//! mlen       u32 LE    length of the manifest
//! manifest   mlen      UTF-8 JSON (`CheckpointManifest`)
//! count      u32 LE    number of tensors
//! per tensor:
//!   nlen     u32 LE, name (UTF-8, nlen bytes)
//!   ndim     u32 LE, dims (ndim × u64 LE)
//!   data     prod(dims) scalars, little-endian, in the manifest precision
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActorKind, CriticSpec, NetError, NetSpec, Params};
use crate::autodiff::{Real, Tensor};
use crate::morphology::KinematicTree;

pub const MAGIC: &[u8; 8] = b"ABDCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: ActorKind,
    pub tree_hash: String,
    pub d: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub precision: String,
    pub net: NetSpec,
    pub critic: Option<CriticSpec>,
    /// Environment preset the weights were trained on, if any.
    pub env: Option<String>,
    /// Free-form training metadata (iteration, env steps, …).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl CheckpointManifest {
    pub fn new<T: Real>(net: &NetSpec, tree: &KinematicTree, critic: Option<CriticSpec>, env: Option<String>) -> Self {
        Self {
            kind: net.kind,
            tree_hash: tree.content_hash(),
            d: net.d,
            obs_dim: net.obs_dim,
            action_dim: net.output_dim(),
            precision: T::NAME.to_string(),
            net: net.clone(),
            critic,
            env,
            meta: serde_json::Value::Null,
        }
    }

    pub fn check_tree(&self, tree: &KinematicTree) -> Result<(), NetError> {
        let actual = tree.content_hash();
        if actual != self.tree_hash {
            return Err(NetError::TreeMismatch {
                expected: self.tree_hash.clone(),
                actual,
            });
        }
        Ok(())
    }
}

pub fn to_bytes<T: Real>(manifest: &CheckpointManifest, params: &Params<T>) -> Vec<u8> {
    assert_eq!(manifest.precision, T::NAME, "manifest precision must match the stored scalars");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let json = serde_json::to_vec(manifest).expect("manifest serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            x.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NetError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_tensors<S: Real, T: Real>(r: &mut Reader<'_>) -> Result<Params<T>, NetError> {
    let count = r.u32()?;
    let mut params = Params::default();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        let ndim = r.u32()? as usize;
        if ndim > 2 {
            return Err(NetError::Checkpoint(format!("tensor `{name}` has rank {ndim}")));
        }
        let dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let raw = r.take(n * S::BYTES)?;
        let data = raw.chunks(S::BYTES).map(|c| T::lit(S::read_le(c).as_f64())).collect();
        if params.get(&name).is_some() {
            return Err(NetError::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        params.push(name, Tensor::new(&dims, data)?);
    }
    if r.pos != r.bytes.len() {
        return Err(NetError::Checkpoint("trailing bytes".into()));
    }
    Ok(params)
}

/// Parse a checkpoint, converting the stored scalars to `T`.
pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<(CheckpointManifest, Params<T>), NetError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let mlen = r.u32()? as usize;
    let manifest: CheckpointManifest =
        serde_json::from_slice(r.take(mlen)?).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    let params = match manifest.precision.as_str() {
        "f32" => read_tensors::<f32, T>(&mut r)?,
        "f64" => read_tensors::<f64, T>(&mut r)?,
        other => return Err(NetError::Checkpoint(format!("unknown precision `{other}`"))),
    };
    Ok((manifest, params))
}

pub fn save<T: Real>(path: &Path, manifest: &CheckpointManifest, params: &Params<T>) -> Result<(), NetError> {
    std::fs::write(path, to_bytes(manifest, params))?;
    Ok(())
}

pub fn load<T: Real>(path: &Path) -> Result<(CheckpointManifest, Params<T>), NetError> {
    from_bytes(&std::fs::read(path)?)
}

/// Load and verify that the weights belong to `tree`.
pub fn load_for_tree<T: Real>(path: &Path, tree: &KinematicTree) -> Result<(CheckpointManifest, Params<T>), NetError> {
    let (m, p) = load(path)?;
    m.check_tree(tree)?;
    Ok((m, p))
}

/// Split actor and critic tensors (the critic's names start with `critic.`).
pub fn split_critic<T: Real>(params: &Params<T>) -> (Params<T>, Params<T>) {
    let mut actor = Params::default();
    let mut critic = Params::default();
    for (name, t) in params.iter() {
        if name.starts_with("critic.") {
            critic.push(name.to_string(), t.clone());
        } else {
            actor.push(name.to_string(), t.clone());
        }
    }
    (actor, critic)
}
