//! Binary checkpoints of named parameter groups.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "SACNFCKP" | version u32 | obs_dim u32 | action_dim u32 | group count u32
//! per group: name (u16 length + UTF-8) | shape | value count u64 | f64 values
//! SHA-256 of every preceding byte
//! ```
//!
//! A shape is `0` (dense network: layer count u32, then per layer inputs u32,
//! outputs u32, activation tag), `1` (free vector) or `2` (flow layer: family
//! tag, dimension u32). Tags are u8-length-prefixed strings. Groups are named
//! `policy.mu`, `policy.scale`, `policy.flow[i]`, `critic.q`, `critic.q2`,
//! `critic.v` and `critic.v_target`.

use std::path::Path;

use sacnf_core::diff::LayerShape;
use sacnf_core::policy::ScaleModel;
use sacnf_core::sac::{Agent, Architecture, Critics};
use sacnf_core::{Activation, DenseNet, FlowChain, FlowFamily, FlowLayer, NfPolicy};
use sha2::{Digest, Sha256};

use crate::error::Error;

pub const MAGIC: &[u8; 8] = b"SACNFCKP";
pub const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum GroupShape {
    Dense(Vec<LayerShape>),
    Vector,
    Flow { family: FlowFamily, dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub name: String,
    pub shape: GroupShape,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub groups: Vec<Group>,
}

fn dense_group(name: &str, net: &DenseNet) -> Group {
    Group { name: name.into(), shape: GroupShape::Dense(net.layers().to_vec()), values: net.params().to_vec() }
}

fn shape_err(group: &str, reason: impl Into<String>) -> Error {
    Error::Shape { group: group.into(), reason: reason.into() }
}

impl Checkpoint {
    pub fn from_agent(agent: &Agent) -> Self {
        let policy = &agent.policy;
        let mut groups = vec![dense_group("policy.mu", policy.mean_net())];
        groups.push(match policy.scale() {
            ScaleModel::Conditional(net) => dense_group("policy.scale", net),
            ScaleModel::Average(v) => Group { name: "policy.scale".into(), shape: GroupShape::Vector, values: v.clone() },
        });
        for (i, layer) in policy.flows().layers().into_iter().enumerate() {
            groups.push(Group {
                name: format!("policy.flow[{i}]"),
                shape: GroupShape::Flow { family: layer.family, dim: layer.dim },
                values: layer.raw,
            });
        }
        let critics = &agent.critics;
        groups.push(dense_group("critic.q", &critics.q));
        if let Some(q2) = &critics.q2 {
            groups.push(dense_group("critic.q2", q2));
        }
        groups.push(dense_group("critic.v", &critics.v));
        groups.push(dense_group("critic.v_target", &critics.v_target));
        Self { obs_dim: policy.obs_dim(), action_dim: policy.action_dim(), groups }
    }

    pub fn group(&self, name: &str) -> Option<&Group> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn flow_count(&self) -> usize {
        self.groups.iter().filter(|g| g.name.starts_with("policy.flow[")).count()
    }

    fn dense(&self, name: &str) -> Result<DenseNet, Error> {
        let g = self.group(name).ok_or_else(|| shape_err(name, "group missing"))?;
        let GroupShape::Dense(layers) = &g.shape else {
            return Err(shape_err(name, "expected a dense network"));
        };
        let mut net = DenseNet::from_layers(layers.clone()).map_err(|e| shape_err(name, e.to_string()))?;
        net.set_params(&g.values).map_err(|e| shape_err(name, e.to_string()))?;
        Ok(net)
    }

    /// Rebuild the agent. Nothing is returned unless every group is consistent.
    pub fn to_agent(&self) -> Result<Agent, Error> {
        let mean = self.dense("policy.mu")?;
        let scale_group = self.group("policy.scale").ok_or_else(|| shape_err("policy.scale", "group missing"))?;
        let scale = match scale_group.shape {
            GroupShape::Dense(_) => ScaleModel::Conditional(self.dense("policy.scale")?),
            GroupShape::Vector => ScaleModel::Average(scale_group.values.clone()),
            GroupShape::Flow { .. } => return Err(shape_err("policy.scale", "unexpected flow shape")),
        };
        let mut layers = Vec::new();
        for i in 0..self.flow_count() {
            let name = format!("policy.flow[{i}]");
            let g = self.group(&name).ok_or_else(|| shape_err(&name, "flow layers must be numbered consecutively"))?;
            let GroupShape::Flow { family, dim } = g.shape else {
                return Err(shape_err(&name, "expected a flow layer"));
            };
            layers.push(FlowLayer { family, dim, raw: g.values.clone() });
        }
        let flows = FlowChain::from_layers(self.action_dim, &layers).map_err(|e| shape_err("policy.flow", e.to_string()))?;
        let policy = NfPolicy::from_parts(mean, scale, flows).map_err(|e| shape_err("policy", e.to_string()))?;
        if policy.obs_dim() != self.obs_dim || policy.action_dim() != self.action_dim {
            return Err(shape_err("policy", "dimensions disagree with the header"));
        }
        let q2 = if self.group("critic.q2").is_some() { Some(self.dense("critic.q2")?) } else { None };
        let critics = Critics { q: self.dense("critic.q")?, q2, v: self.dense("critic.v")?, v_target: self.dense("critic.v_target")? };
        Ok(Agent { policy, critics })
    }

    /// Check the checkpoint against an architecture and task dimensions.
    pub fn check_compatible(&self, arch: &Architecture, obs_dim: usize, action_dim: usize) -> Result<(), Error> {
        if self.obs_dim != obs_dim || self.action_dim != action_dim {
            return Err(shape_err(
                "header",
                format!("checkpoint is for obs/action dims {}/{}, expected {obs_dim}/{action_dim}", self.obs_dim, self.action_dim),
            ));
        }
        if self.flow_count() != arch.flow_count {
            return Err(shape_err(
                "policy.flow",
                format!("checkpoint has {} flow layers, configuration expects {}", self.flow_count(), arch.flow_count),
            ));
        }
        let mut rng = sacnf_core::Streams::new(0).stream(sacnf_core::Stream::Init);
        let template = Agent::new(arch, obs_dim, action_dim, &mut rng)?;
        let expected = Checkpoint::from_agent(&template);
        for g in &expected.groups {
            let found = self.group(&g.name).ok_or_else(|| shape_err(&g.name, "group missing"))?;
            if found.shape != g.shape || found.values.len() != g.values.len() {
                return Err(shape_err(&g.name, "layer shapes differ from the configuration"));
            }
        }
        if self.groups.len() != expected.groups.len() {
            return Err(shape_err("critic.q2", "twin critic presence differs from the configuration"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, self.obs_dim);
        put_u32(&mut out, self.action_dim);
        put_u32(&mut out, self.groups.len());
        for g in &self.groups {
            out.extend_from_slice(&(g.name.len() as u16).to_le_bytes());
            out.extend_from_slice(g.name.as_bytes());
            match &g.shape {
                GroupShape::Dense(layers) => {
                    out.push(0);
                    put_u32(&mut out, layers.len());
                    for l in layers {
                        put_u32(&mut out, l.inputs);
                        put_u32(&mut out, l.outputs);
                        put_tag(&mut out, l.activation.tag());
                    }
                }
                GroupShape::Vector => out.push(1),
                GroupShape::Flow { family, dim } => {
                    out.push(2);
                    put_tag(&mut out, family.tag());
                    put_u32(&mut out, *dim);
                }
            }
            out.extend_from_slice(&(g.values.len() as u64).to_le_bytes());
            for v in &g.values {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, Error> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
            return Err(bad("file is truncated"));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(bad("checksum mismatch (file is corrupted or truncated)"));
        }
        let mut r = Reader { bytes: body, pos: 12 };
        let obs_dim = r.u32()?;
        let action_dim = r.u32()?;
        let count = r.u32()?;
        let mut groups = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("group name is not UTF-8"))?;
            let shape = match r.take(1)?[0] {
                0 => {
                    let n = r.u32()?;
                    let mut layers = Vec::with_capacity(n.min(1024));
                    for _ in 0..n {
                        let inputs = r.u32()?;
                        let outputs = r.u32()?;
                        let tag = r.tag()?;
                        let activation = Activation::from_tag(&tag).ok_or_else(|| bad("unknown activation tag"))?;
                        layers.push(LayerShape { inputs, outputs, activation });
                    }
                    GroupShape::Dense(layers)
                }
                1 => GroupShape::Vector,
                2 => {
                    let tag = r.tag()?;
                    let family = FlowFamily::from_tag(&tag).ok_or_else(|| bad("unknown flow family tag"))?;
                    GroupShape::Flow { family, dim: r.u32()? }
                }
                _ => return Err(bad("unknown group shape")),
            };
            let n = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("value count overflows"))?)?;
            let values =
                raw.chunks_exact(8).map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
            groups.push(Group { name, shape, values });
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes after the last group"));
        }
        Ok(Self { obs_dim, action_dim, groups })
    }

    /// Write via a temporary file and rename, so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&u32::try_from(x).expect("checkpoint sizes fit in u32").to_le_bytes());
}

fn put_tag(out: &mut Vec<u8>, tag: &str) {
    out.push(tag.len() as u8);
    out.extend_from_slice(tag.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], Error> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, Error> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn tag(&mut self) -> Result<String, Error> {
        let n = self.take(1)?[0] as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("tag is not UTF-8".into()))
    }
}
