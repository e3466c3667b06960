//! Parameter checkpoints: a little-endian binary blob of named f32 arrays
//! next to a JSON sidecar describing the architecture.
//!
//! Binary layout: `MGANCKPT`, u32 version, u32 array count, then per array
//! u32 name length, UTF-8 name, u32 rank, u64 dims, f32 values.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::networks::{
    ChannelMode, Detector, Discriminator, DiscriminatorSpec, Generator, OutputKind, UNetSpec,
};
use crate::nn::Parameterized;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"MGANCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchSpec {
    Generator { mode: ChannelMode, unet: UNetSpec },
    Discriminator(DiscriminatorSpec),
    Detector { unet: UNetSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub arch: ArchSpec,
    pub channel_mode: Option<ChannelMode>,
    pub seed: u64,
    pub epoch: usize,
    pub format_version: u32,
}

impl CheckpointMeta {
    pub fn new(arch: ArchSpec, seed: u64, epoch: usize) -> Self {
        let channel_mode = match &arch {
            ArchSpec::Generator { mode, .. } => Some(*mode),
            ArchSpec::Discriminator(spec) => Some(spec.mode),
            ArchSpec::Detector { .. } => None,
        };
        CheckpointMeta {
            arch,
            channel_mode,
            seed,
            epoch,
            format_version: VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Sidecar path for a checkpoint: same stem, `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn encode_params(net: &impl Parameterized<f32>) -> Vec<u8> {
    let params = net.params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &p.value {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(ckpt_err(self.path, "truncated checkpoint"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_params(bytes: &[u8], path: &Path) -> Result<Vec<NamedArray>> {
    let mut r = Reader { bytes, path };
    if r.take(8)? != MAGIC {
        return Err(ckpt_err(path, "not a checkpoint file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ckpt_err(path, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| ckpt_err(path, "parameter name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = r
            .take(n.checked_mul(4).ok_or_else(|| ckpt_err(path, "array too large"))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(NamedArray { name, shape, values });
    }
    if !r.bytes.is_empty() {
        return Err(ckpt_err(path, "trailing bytes after last array"));
    }
    Ok(arrays)
}

/// Copies `arrays` into `net`, requiring identical names, order and shapes.
pub fn restore_params(net: &mut impl Parameterized<f32>, arrays: Vec<NamedArray>, path: &Path) -> Result<()> {
    let mut params = net.params_mut();
    if params.len() != arrays.len() {
        return Err(ckpt_err(
            path,
            format!("expected {} arrays, found {}", params.len(), arrays.len()),
        ));
    }
    for (p, a) in params.iter_mut().zip(arrays) {
        if p.name != a.name || p.shape != a.shape {
            return Err(ckpt_err(
                path,
                format!("array {} {:?} does not match parameter {} {:?}", a.name, a.shape, p.name, p.shape),
            ));
        }
        p.value = a.values;
        p.zero_grad();
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, net: &impl Parameterized<f32>, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_params(net)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(meta).expect("metadata serializes");
    text.push('\n');
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: side, source })
}

pub fn read_arrays(path: &Path) -> Result<Vec<NamedArray>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_params(&bytes, path)
}

pub fn load_generator(path: &Path) -> Result<(Generator<f32>, CheckpointMeta)> {
    let meta = read_meta(path)?;
    let ArchSpec::Generator { mode, unet } = &meta.arch else {
        return Err(ckpt_err(path, "checkpoint does not hold a generator"));
    };
    let mut g = Generator::from_spec(*mode, unet.clone(), meta.seed)?;
    restore_params(&mut g, read_arrays(path)?, path)?;
    Ok((g, meta))
}

pub fn load_discriminator(path: &Path) -> Result<(Discriminator<f32>, CheckpointMeta)> {
    let meta = read_meta(path)?;
    let ArchSpec::Discriminator(spec) = &meta.arch else {
        return Err(ckpt_err(path, "checkpoint does not hold a discriminator"));
    };
    let mut d = Discriminator::new(spec.clone(), meta.seed)?;
    restore_params(&mut d, read_arrays(path)?, path)?;
    Ok((d, meta))
}

pub fn load_detector(path: &Path) -> Result<(Detector<f32>, CheckpointMeta)> {
    let meta = read_meta(path)?;
    let ArchSpec::Detector { unet } = &meta.arch else {
        return Err(ckpt_err(path, "checkpoint does not hold a detector"));
    };
    if unet.output != OutputKind::Logits {
        return Err(ckpt_err(path, "detector must emit logits"));
    }
    let mut f = Detector::from_spec(unet.clone(), meta.seed)?;
    restore_params(&mut f, read_arrays(path)?, path)?;
    Ok((f, meta))
}

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
