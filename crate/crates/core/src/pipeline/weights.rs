//! Named weight tensors and the `CCSEG1` binary container.
//!
//! File layout, all little-endian:
//!   magic `CCSEG1` (6 bytes), version u16, entry count u32, then per entry
//!   name length u16, utf-8 name, rank u8, rank×u32 extents, f32 payload of
//!   product(extents) values. Entry names are unique; entries are written in
//!   sorted name order so the encoding is bit-exact for a given weight set.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionConfig, CcWeights, Projection};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"CCSEG1";
const VERSION: u16 = 1;

/// The full named-tensor set of one pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineWeights {
    entries: BTreeMap<String, Tensor>,
}

impl PipelineWeights {
    pub fn new() -> Self {
        PipelineWeights {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::format(format!("weights file missing tensor '{name}'")))
    }

    /// Kernel + bias pair for a conv layer stored as `<name>.weight` /
    /// `<name>.bias`.
    pub fn conv(&self, name: &str) -> Result<(&Tensor, Vec<f64>)> {
        let kernel = self.get(&format!("{name}.weight"))?;
        let bias = self.get(&format!("{name}.bias"))?;
        Ok((kernel, bias.data().to_vec()))
    }

    /// 1×1 projection stored as a rank-2 `[out,in]` matrix.
    pub fn projection(&self, name: &str) -> Result<Projection> {
        let weight = self.get(&format!("{name}.weight"))?.clone();
        let bias = self.get(&format!("{name}.bias"))?.data().to_vec();
        if weight.rank() != 2 {
            return Err(Error::format(format!(
                "tensor '{name}.weight' has rank {}, expected 2",
                weight.rank()
            )));
        }
        Ok(Projection { weight, bias })
    }

    /// The four projections of one attention site, stored under
    /// `<prefix>.{q,k,v,f}`.
    pub fn attention_site(&self, prefix: &str) -> Result<CcWeights> {
        Ok(CcWeights {
            query: self.projection(&format!("{prefix}.q"))?,
            key: self.projection(&format!("{prefix}.k"))?,
            value: self.projection(&format!("{prefix}.v"))?,
            fusion: self.projection(&format!("{prefix}.f"))?,
        })
    }
}

impl Default for PipelineWeights {
    fn default() -> Self {
        Self::new()
    }
}

/// Write the container; bit-exact for a given entry set.
pub fn write_weights(weights: &PipelineWeights, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(weights.entries.len() as u32).to_le_bytes());
    for (name, tensor) in &weights.entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::contract(format!("tensor name too long: {name}")));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        if tensor.rank() > u8::MAX as usize {
            return Err(Error::contract(format!("tensor rank too high: {name}")));
        }
        buf.push(tensor.rank() as u8);
        for &e in tensor.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Read and validate the container.
pub fn read_weights(path: &Path) -> Result<PipelineWeights> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::format(format!(
                "{}: truncated weights file",
                path.display()
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 6)? != MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic, not a CCSEG1 weights file",
            path.display()
        )));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(format!(
            "{}: unsupported weights version {version}",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut weights = PipelineWeights::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len)?)
            .map_err(|_| Error::format(format!("{}: non-utf8 tensor name", path.display())))?
            .to_string();
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let payload = take(&mut pos, n * 4)?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if weights.contains(&name) {
            return Err(Error::format(format!(
                "{}: duplicate tensor name '{name}'",
                path.display()
            )));
        }
        weights.insert(name, Tensor::new(shape, data)?);
    }
    if pos != bytes.len() {
        return Err(Error::format(format!(
            "{}: {} trailing bytes after last entry",
            path.display(),
            bytes.len() - pos
        )));
    }
    Ok(weights)
}

/// Deterministic He-style initializer used by a seeded weight generator.
pub struct WeightInit {
    rng: ChaCha8Rng,
}

impl WeightInit {
    pub fn new(seed: u64) -> Self {
        WeightInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn normal(&mut self) -> f64 {
        // Box-Muller on two uniform draws
        let u1: f64 = self.rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = self.rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Conv kernel `[C_out,C_in,kH,kW]`, std sqrt(2 / fan_in).
    pub fn conv_kernel(&mut self, c_out: usize, c_in: usize, k: usize) -> Tensor {
        let fan_in = (c_in * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let n = c_out * c_in * k * k;
        Tensor::new(
            vec![c_out, c_in, k, k],
            (0..n).map(|_| self.normal() * std).collect(),
        )
        .unwrap()
    }

    /// Projection matrix `[out,in]`, std sqrt(2 / in).
    pub fn matrix(&mut self, out: usize, inp: usize) -> Tensor {
        let std = (2.0 / inp as f64).sqrt();
        Tensor::new(
            vec![out, inp],
            (0..out * inp).map(|_| self.normal() * std).collect(),
        )
        .unwrap()
    }

    pub fn zero_bias(&mut self, n: usize) -> Tensor {
        Tensor::zeros(vec![n])
    }

    /// Small random bias; keeps seeded heads off exact decision boundaries.
    pub fn small_bias(&mut self, n: usize) -> Tensor {
        Tensor::new(vec![n], (0..n).map(|_| self.normal() * 0.1).collect()).unwrap()
    }
}

/// Convenience: insert `<name>.weight` / `<name>.bias` for a conv layer.
pub fn seed_conv(
    w: &mut PipelineWeights,
    init: &mut WeightInit,
    name: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
) {
    w.insert(format!("{name}.weight"), init.conv_kernel(c_out, c_in, k));
    w.insert(format!("{name}.bias"), init.zero_bias(c_out));
}

/// Insert the four projections of one attention site under `<prefix>`.
pub fn seed_attention_site(
    w: &mut PipelineWeights,
    init: &mut WeightInit,
    prefix: &str,
    cfg: &AttentionConfig,
) {
    let c = cfg.channels;
    let cq = cfg.qk_channels();
    for (suffix, out, inp) in [
        ("q", cq, c),
        ("k", cq, c),
        ("v", c, c),
        ("f", c, 2 * c),
    ] {
        w.insert(format!("{prefix}.{suffix}.weight"), init.matrix(out, inp));
        w.insert(format!("{prefix}.{suffix}.bias"), init.zero_bias(out));
    }
}
