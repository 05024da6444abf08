//! Binary checkpoints: named f64 tensors plus ordered string metadata.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "DP2VAECK" | version u32 | meta count u32 | (key, value) pairs
//! | tensor count u32 | per tensor: name, ndim u32, dims u32..., f64 bits
//! | FNV-1a 64 checksum of everything above
//! ```
//!
//! Strings are u32 length + UTF-8 bytes. Floats are stored as raw bit
//! patterns, so a save/load round trip is bitwise. Writes go through a
//! temporary file and an atomic rename.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, DenseNet, Layer};
use crate::numerics::{Matrix, RngState};

pub const MAGIC: &[u8; 8] = b"DP2VAECK";
pub const VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ b as u64).wrapping_mul(FNV_PRIME)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<u32>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn element_count(&self) -> usize {
        self.shape.iter().map(|&d| d as usize).product()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    meta: Vec<(String, String)>,
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    /// Set a metadata key, replacing any earlier value in place.
    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some((_, v)) => *v = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    /// f64 metadata is stored as the decimal bit pattern, so it survives the
    /// round trip bitwise.
    pub fn set_meta_f64(&mut self, key: &str, value: f64) {
        self.set_meta(key, value.to_bits().to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Data(format!("checkpoint is missing metadata key `{key}`")))
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require_meta(key)?;
        raw.parse().map_err(|_| {
            Error::Data(format!(
                "checkpoint metadata `{key}` has unparseable value `{raw}`"
            ))
        })
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        Ok(f64::from_bits(self.meta_parsed::<u64>(key)?))
    }

    pub fn meta_entries(&self) -> &[(String, String)] {
        &self.meta
    }

    pub fn add_tensor(&mut self, name: &str, shape: Vec<u32>, data: Vec<f64>) -> Result<()> {
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::Data(format!(
                "checkpoint already holds a tensor named `{name}`"
            )));
        }
        let expect: usize = shape.iter().map(|&d| d as usize).product();
        if expect != data.len() {
            return Err(Error::Shape(format!(
                "tensor `{name}`: shape {shape:?} holds {expect} elements but {} were given",
                data.len()
            )));
        }
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape,
            data,
        });
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Data(format!("checkpoint has no tensor named `{name}`")))
    }

    pub fn has_tensor(&self, name: &str) -> bool {
        self.tensors.iter().any(|t| t.name == name)
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        push_u32(&mut out, self.meta.len())?;
        for (k, v) in &self.meta {
            push_str(&mut out, k)?;
            push_str(&mut out, v)?;
        }
        push_u32(&mut out, self.tensors.len())?;
        for t in &self.tensors {
            push_str(&mut out, &t.name)?;
            push_u32(&mut out, t.shape.len())?;
            for &d in &t.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for &x in &t.data {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    /// Atomic save: the bytes land under a temporary name first, then a
    /// rename publishes them, so readers never observe a half-written file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp-write");
        fs::write(&tmp, &bytes)
            .map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, path)
            .map_err(|e| Error::io(format!("renaming {} into place", tmp.display()), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let fail = |offset: usize, message: String| Error::Format {
            path: path.display().to_string(),
            offset: offset as u64,
            message,
        };
        if bytes.len() < MAGIC.len() + 4 + 8 {
            return Err(fail(0, format!("file of {} bytes is too short", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail(0, "bad magic: not a checkpoint file".into()));
        }
        let body_end = bytes.len() - 8;
        let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
        let actual = fnv1a(&bytes[..body_end]);
        if stored != actual {
            return Err(Error::Integrity(format!(
                "{}: stored checksum {stored:#018x} but content hashes to {actual:#018x}",
                path.display()
            )));
        }
        let body = &bytes[..body_end];
        let mut off = 8;
        let version = read_u32(body, &mut off, &fail, "version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let mut ck = Checkpoint::new();
        let n_meta = read_u32(body, &mut off, &fail, "meta count")? as usize;
        for _ in 0..n_meta {
            let k = read_str(body, &mut off, &fail)?;
            let v = read_str(body, &mut off, &fail)?;
            ck.meta.push((k, v));
        }
        let n_tensors = read_u32(body, &mut off, &fail, "tensor count")? as usize;
        for _ in 0..n_tensors {
            let name = read_str(body, &mut off, &fail)?;
            let ndim = read_u32(body, &mut off, &fail, "tensor rank")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(body, &mut off, &fail, "tensor dim")?);
            }
            let count: usize = shape.iter().map(|&d| d as usize).product();
            if body.len() < off + count * 8 {
                return Err(fail(
                    off,
                    format!("tensor `{name}` payload truncated ({count} elements declared)"),
                ));
            }
            let data = body[off..off + count * 8]
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            off += count * 8;
            ck.add_tensor(&name, shape, data)?;
        }
        if off != body.len() {
            return Err(fail(off, "trailing bytes inside the checkpoint body".into()));
        }
        Ok(ck)
    }
}

fn push_u32(out: &mut Vec<u8>, n: usize) -> Result<()> {
    let v: u32 = n
        .try_into()
        .map_err(|_| Error::Data(format!("count {n} exceeds the u32 checkpoint limit")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    push_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn read_u32(
    body: &[u8],
    off: &mut usize,
    fail: &impl Fn(usize, String) -> Error,
    what: &str,
) -> Result<u32> {
    if body.len() < *off + 4 {
        return Err(fail(*off, format!("truncated while reading {what}")));
    }
    let v = u32::from_le_bytes(body[*off..*off + 4].try_into().expect("4 bytes"));
    *off += 4;
    Ok(v)
}

fn read_str(body: &[u8], off: &mut usize, fail: &impl Fn(usize, String) -> Error) -> Result<String> {
    let len = read_u32(body, off, fail, "string length")? as usize;
    if body.len() < *off + len {
        return Err(fail(*off, "truncated while reading string".into()));
    }
    let s = std::str::from_utf8(&body[*off..*off + len])
        .map_err(|_| fail(*off, "string is not valid UTF-8".into()))?
        .to_string();
    *off += len;
    Ok(s)
}

// ----------------------------------------------------------------------------
// Typed helpers for the structures the training loops checkpoint.

/// Store a network as `{prefix}.layer{i}.weight` / `.bias` tensors plus
/// activation and layer-count metadata.
pub fn put_dense_net(ck: &mut Checkpoint, prefix: &str, net: &DenseNet) -> Result<()> {
    ck.set_meta(&format!("{prefix}.layers"), net.layers().len().to_string());
    for (i, layer) in net.layers().iter().enumerate() {
        ck.set_meta(
            &format!("{prefix}.layer{i}.activation"),
            layer.activation.name(),
        );
        ck.add_tensor(
            &format!("{prefix}.layer{i}.weight"),
            vec![layer.weight.rows() as u32, layer.weight.cols() as u32],
            layer.weight.as_slice().to_vec(),
        )?;
        ck.add_tensor(
            &format!("{prefix}.layer{i}.bias"),
            vec![layer.bias.len() as u32],
            layer.bias.clone(),
        )?;
    }
    Ok(())
}

pub fn get_dense_net(ck: &Checkpoint, prefix: &str) -> Result<DenseNet> {
    let n: usize = ck.meta_parsed(&format!("{prefix}.layers"))?;
    let mut layers = Vec::with_capacity(n);
    for i in 0..n {
        let activation = Activation::from_name(ck.require_meta(&format!(
            "{prefix}.layer{i}.activation"
        ))?)?;
        let w = ck.tensor(&format!("{prefix}.layer{i}.weight"))?;
        if w.shape.len() != 2 {
            return Err(Error::Shape(format!(
                "tensor `{}` must be rank 2, found rank {}",
                w.name,
                w.shape.len()
            )));
        }
        let b = ck.tensor(&format!("{prefix}.layer{i}.bias"))?;
        let weight = Matrix::from_vec(w.shape[0] as usize, w.shape[1] as usize, w.data.clone())?;
        layers.push(Layer {
            weight,
            bias: b.data.clone(),
            activation,
        });
    }
    DenseNet::from_layers(layers)
}

pub fn put_adam(ck: &mut Checkpoint, prefix: &str, adam: &AdamState) -> Result<()> {
    ck.set_meta(&format!("{prefix}.step"), adam.step.to_string());
    ck.set_meta_f64(&format!("{prefix}.beta1"), adam.beta1);
    ck.set_meta_f64(&format!("{prefix}.beta2"), adam.beta2);
    ck.set_meta_f64(&format!("{prefix}.epsilon"), adam.epsilon);
    ck.add_tensor(&format!("{prefix}.m"), vec![adam.m.len() as u32], adam.m.clone())?;
    ck.add_tensor(&format!("{prefix}.v"), vec![adam.v.len() as u32], adam.v.clone())?;
    Ok(())
}

pub fn get_adam(ck: &Checkpoint, prefix: &str) -> Result<AdamState> {
    let m = ck.tensor(&format!("{prefix}.m"))?.data.clone();
    let v = ck.tensor(&format!("{prefix}.v"))?.data.clone();
    if m.len() != v.len() {
        return Err(Error::Shape(format!(
            "adam `{prefix}`: m has {} entries but v has {}",
            m.len(),
            v.len()
        )));
    }
    Ok(AdamState {
        m,
        v,
        step: ck.meta_parsed(&format!("{prefix}.step"))?,
        beta1: ck.meta_f64(&format!("{prefix}.beta1"))?,
        beta2: ck.meta_f64(&format!("{prefix}.beta2"))?,
        epsilon: ck.meta_f64(&format!("{prefix}.epsilon"))?,
    })
}

pub fn put_rng(ck: &mut Checkpoint, prefix: &str, state: RngState) {
    ck.set_meta(&format!("{prefix}.seed"), state.seed.to_string());
    ck.set_meta(&format!("{prefix}.stream"), state.stream_id.to_string());
    ck.set_meta(&format!("{prefix}.word_pos"), state.word_pos.to_string());
}

pub fn get_rng(ck: &Checkpoint, prefix: &str) -> Result<RngState> {
    Ok(RngState {
        seed: ck.meta_parsed(&format!("{prefix}.seed"))?,
        stream_id: ck.meta_parsed(&format!("{prefix}.stream"))?,
        word_pos: ck.meta_parsed(&format!("{prefix}.word_pos"))?,
    })
}

// ----------------------------------------------------------------------------
