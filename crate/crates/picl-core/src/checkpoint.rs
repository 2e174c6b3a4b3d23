//! Versioned binary checkpoint container shared by encoder snapshots and
//! hybrid-memory snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "PICLCKPT"
//! version u32      1
//! kind    u8       1 = model, 2 = memory
//! seed    u64      root seed recorded for provenance
//! n_shape u32      number of shape entries
//! shapes  u32 × n
//! n_vals  u64      number of f64 payload values
//! payload f64 × n  little-endian
//! ```
//!
//! Model payload order: w1 rows, b1, w2, b2, w3, b3, head rows, head
//! scale, head margin. Model shapes: `[d_in, hidden, d_emb, n_classes]`.
//! Memory payload order: m_source, m_target, renormalize flag, source
//! prototypes, target instances. Memory shapes: `[dim, n_source, n_target]`.
//! Round-trips are byte-exact.

use std::fs;
use std::path::Path;

use crate::encoder::{AamHead, EncoderModel};
use crate::error::{PiclError, Result};
use crate::linalg::{Matrix, Vector};
use crate::memory::HybridMemory;

const MAGIC: &[u8; 8] = b"PICLCKPT";
const VERSION: u32 = 1;

const KIND_MODEL: u8 = 1;
const KIND_MEMORY: u8 = 2;

struct Container {
    kind: u8,
    seed: u64,
    shapes: Vec<u32>,
    payload: Vec<f64>,
}

fn encode(c: &Container) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 + 1 + 8 + 4 + 4 * c.shapes.len() + 8 + 8 * c.payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(c.kind);
    out.extend_from_slice(&c.seed.to_le_bytes());
    out.extend_from_slice(&(c.shapes.len() as u32).to_le_bytes());
    for s in &c.shapes {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&(c.payload.len() as u64).to_le_bytes());
    for v in &c.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(PiclError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("len 4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("len 8")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("len 8")))
    }
}

fn decode(bytes: &[u8]) -> Result<Container> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(PiclError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(PiclError::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let kind = r.u8()?;
    let seed = r.u64()?;
    let n_shapes = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        shapes.push(r.u32()?);
    }
    let n_vals = r.u64()? as usize;
    let mut payload = Vec::with_capacity(n_vals);
    for _ in 0..n_vals {
        payload.push(r.f64()?);
    }
    if r.pos != bytes.len() {
        return Err(PiclError::Checkpoint("trailing bytes".into()));
    }
    Ok(Container {
        kind,
        seed,
        shapes,
        payload,
    })
}

/// Write bytes atomically: temp file in the same directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_model(path: &Path, model: &EncoderModel, head: &AamHead, seed: u64) -> Result<()> {
    let cfg = model.config();
    let mut payload = Vec::new();
    payload.extend_from_slice(model.w1.as_slice());
    payload.extend_from_slice(model.b1.as_slice());
    payload.extend_from_slice(model.w2.as_slice());
    payload.extend_from_slice(model.b2.as_slice());
    payload.extend_from_slice(model.w3.as_slice());
    payload.extend_from_slice(model.b3.as_slice());
    payload.extend_from_slice(head.weights.as_slice());
    payload.push(head.scale);
    payload.push(head.margin);
    let container = Container {
        kind: KIND_MODEL,
        seed,
        shapes: vec![
            cfg.input_dim as u32,
            cfg.hidden_dim as u32,
            cfg.embedding_dim as u32,
            head.weights.rows() as u32,
        ],
        payload,
    };
    write_atomic(path, &encode(&container))
}

pub fn load_model(path: &Path) -> Result<(EncoderModel, AamHead, u64)> {
    let bytes = fs::read(path).map_err(|_| PiclError::MissingArtifact {
        path: path.to_path_buf(),
        hint: "run the producing command first (pretrain or adapt)".into(),
    })?;
    let c = decode(&bytes)?;
    if c.kind != KIND_MODEL {
        return Err(PiclError::Checkpoint(format!(
            "expected a model checkpoint, found kind {}",
            c.kind
        )));
    }
    let [d_in, hidden, d_emb, n_classes] = c.shapes.as_slice() else {
        return Err(PiclError::Checkpoint("model checkpoint needs 4 shapes".into()));
    };
    let (d_in, hidden, d_emb, n_classes) =
        (*d_in as usize, *hidden as usize, *d_emb as usize, *n_classes as usize);
    let expect = hidden * d_in
        + hidden
        + hidden * hidden
        + hidden
        + d_emb * hidden
        + d_emb
        + n_classes * d_emb
        + 2;
    if c.payload.len() != expect {
        return Err(PiclError::Checkpoint(format!(
            "payload holds {} values, shapes imply {expect}",
            c.payload.len()
        )));
    }
    let mut pos = 0usize;
    let take_mat = |rows: usize, cols: usize, pos: &mut usize| {
        let mut m = Matrix::zeros(rows, cols);
        m.as_mut_slice().copy_from_slice(&c.payload[*pos..*pos + rows * cols]);
        *pos += rows * cols;
        m
    };
    let take_vec = |n: usize, pos: &mut usize| {
        let v = Vector(c.payload[*pos..*pos + n].to_vec());
        *pos += n;
        v
    };
    let model = EncoderModel {
        w1: take_mat(hidden, d_in, &mut pos),
        b1: take_vec(hidden, &mut pos),
        w2: take_mat(hidden, hidden, &mut pos),
        b2: take_vec(hidden, &mut pos),
        w3: take_mat(d_emb, hidden, &mut pos),
        b3: take_vec(d_emb, &mut pos),
    };
    let weights = take_mat(n_classes, d_emb, &mut pos);
    let scale = c.payload[pos];
    let margin = c.payload[pos + 1];
    if !model.is_finite() || !weights.is_finite() || !scale.is_finite() || !margin.is_finite() {
        return Err(PiclError::Checkpoint("non-finite parameters".into()));
    }
    Ok((
        model,
        AamHead {
            weights,
            scale,
            margin,
        },
        c.seed,
    ))
}

pub fn save_memory(path: &Path, memory: &HybridMemory, seed: u64) -> Result<()> {
    let mut payload = vec![
        memory.momentum_source,
        memory.momentum_target,
        if memory.renormalize { 1.0 } else { 0.0 },
    ];
    for v in memory.source_prototypes().iter().chain(memory.target_instances()) {
        payload.extend_from_slice(v.as_slice());
    }
    let container = Container {
        kind: KIND_MEMORY,
        seed,
        shapes: vec![
            memory.dim() as u32,
            memory.n_source_classes() as u32,
            memory.n_target_instances() as u32,
        ],
        payload,
    };
    write_atomic(path, &encode(&container))
}

pub fn load_memory(path: &Path) -> Result<(HybridMemory, u64)> {
    let bytes = fs::read(path).map_err(|_| PiclError::MissingArtifact {
        path: path.to_path_buf(),
        hint: "run adapt to produce a memory snapshot".into(),
    })?;
    let c = decode(&bytes)?;
    if c.kind != KIND_MEMORY {
        return Err(PiclError::Checkpoint(format!(
            "expected a memory checkpoint, found kind {}",
            c.kind
        )));
    }
    let [dim, n_s, n_t] = c.shapes.as_slice() else {
        return Err(PiclError::Checkpoint("memory checkpoint needs 3 shapes".into()));
    };
    let (dim, n_s, n_t) = (*dim as usize, *n_s as usize, *n_t as usize);
    let expect = 3 + (n_s + n_t) * dim;
    if c.payload.len() != expect {
        return Err(PiclError::Checkpoint(format!(
            "payload holds {} values, shapes imply {expect}",
            c.payload.len()
        )));
    }
    let momentum_source = c.payload[0];
    let momentum_target = c.payload[1];
    let renormalize = c.payload[2] != 0.0;
    let mut pos = 3usize;
    let take = |pos: &mut usize| {
        let v = Vector(c.payload[*pos..*pos + dim].to_vec());
        *pos += dim;
        v
    };
    let source: Vec<Vector> = (0..n_s).map(|_| take(&mut pos)).collect();
    let target: Vec<Vector> = (0..n_t).map(|_| take(&mut pos)).collect();
    let memory =
        HybridMemory::from_parts(source, target, momentum_source, momentum_target, renormalize)?;
    Ok((memory, c.seed))
}
