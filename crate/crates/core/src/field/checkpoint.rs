//! Versioned checkpoint files.
//!
//! A text header followed by `---\n` and a binary blob of named tensors:
//!
//! ```text
//! EMDNERF-CKPT v1
//! step 8000
//! config_hash 3f2a...
//! prior_scale 1.0000003
//! arch 6 4 8 64 32
//! bounds 0 1.5 0 6
//! tensors 22
//! sha256 <hex digest of every other header line and the blob>
//! ---
//! ```
//!
//! Each tensor is `name_len: u32, name, ndim: u32, dims: u64 x ndim,
//! values: f64 x prod(dims)`, all little-endian.

use super::mlp::{Bounds, Field, FieldArch};
use crate::io::{read_bytes, write_bytes};
use crate::{Error, Result};
use sha2::{Digest, Sha256};
use std::path::Path;

const MAGIC: &str = "EMDNERF-CKPT v1";
const SEPARATOR: &[u8] = b"---\n";

/// Everything needed to resume rendering: both networks, the prior scale
/// and the step they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config_hash: String,
    pub prior_scale: f64,
    pub coarse: Field,
    pub fine: Option<Field>,
}

impl Checkpoint {
    pub fn arch(&self) -> FieldArch {
        self.coarse.arch()
    }

    pub fn bounds(&self) -> Bounds {
        self.coarse.bounds()
    }

    fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<_> = self
            .coarse
            .tensors()
            .into_iter()
            .map(|(n, s, v)| (format!("coarse.{n}"), s, v))
            .collect();
        if let Some(f) = &self.fine {
            out.extend(f.tensors().into_iter().map(|(n, s, v)| (format!("fine.{n}"), s, v)));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.named_tensors();
        let mut blob = Vec::new();
        for (name, shape, values) in &tensors {
            blob.extend_from_slice(&(name.len() as u32).to_le_bytes());
            blob.extend_from_slice(name.as_bytes());
            blob.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                blob.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in *values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let a = self.arch();
        let b = self.bounds();
        let fields = format!(
            "{MAGIC}\nstep {}\nconfig_hash {}\nprior_scale {}\narch {} {} {} {} {}\nbounds {} {} {} {}\ntensors {}\n",
            self.step,
            self.config_hash,
            self.prior_scale,
            a.pos_levels,
            a.dir_levels,
            a.trunk_depth,
            a.trunk_width,
            a.head_width,
            b.center[0],
            b.center[1],
            b.center[2],
            b.extent,
            tensors.len()
        );
        let digest = digest(fields.as_bytes(), &blob);
        let mut out = fields.into_bytes();
        out.extend_from_slice(format!("sha256 {digest}\n").as_bytes());
        out.extend_from_slice(SEPARATOR);
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |m: String| Error::format(path, m);
        let sep = bytes
            .windows(SEPARATOR.len())
            .position(|w| w == SEPARATOR)
            .ok_or_else(|| fmt("missing header separator".into()))?;
        let header = std::str::from_utf8(&bytes[..sep]).map_err(|_| fmt("header is not UTF-8".into()))?;
        let blob = &bytes[sep + SEPARATOR.len()..];
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(fmt("not a checkpoint (bad magic line)".into()));
        }
        let mut kv = std::collections::HashMap::new();
        let mut signed = format!("{MAGIC}\n");
        for line in lines {
            let (k, v) = line.split_once(' ').ok_or_else(|| fmt(format!("bad header line `{line}`")))?;
            if k != "sha256" {
                signed.push_str(line);
                signed.push('\n');
            }
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| fmt(format!("missing `{k}`")));
        if digest(signed.as_bytes(), blob) != get("sha256")? {
            return Err(Error::Checksum(path.to_path_buf()));
        }
        let nums = |k: &str| -> Result<Vec<f64>> {
            get(k)?
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| fmt(format!("bad number in `{k}`"))))
                .collect()
        };
        let step = get("step")?.parse().map_err(|_| fmt("bad step".into()))?;
        let prior_scale = get("prior_scale")?.parse().map_err(|_| fmt("bad prior_scale".into()))?;
        let a = nums("arch")?;
        let b = nums("bounds")?;
        if a.len() != 5 || b.len() != 4 {
            return Err(fmt("bad arch or bounds line".into()));
        }
        let arch = FieldArch {
            pos_levels: a[0] as usize,
            dir_levels: a[1] as usize,
            trunk_depth: a[2] as usize,
            trunk_width: a[3] as usize,
            head_width: a[4] as usize,
        };
        let bounds = Bounds {
            center: [b[0], b[1], b[2]],
            extent: b[3],
        };
        let count: usize = get("tensors")?.parse().map_err(|_| fmt("bad tensor count".into()))?;

        let mut cursor = Reader { buf: blob, pos: 0 };
        let mut coarse = Vec::new();
        let mut fine = Vec::new();
        for _ in 0..count {
            let n = cursor.u32().ok_or_else(|| fmt("truncated blob".into()))? as usize;
            let name = cursor.take(n).ok_or_else(|| fmt("truncated blob".into()))?;
            let name = std::str::from_utf8(name).map_err(|_| fmt("tensor name is not UTF-8".into()))?.to_string();
            let ndim = cursor.u32().ok_or_else(|| fmt("truncated blob".into()))? as usize;
            let shape = (0..ndim)
                .map(|_| cursor.u64().map(|d| d as usize))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| fmt("truncated blob".into()))?;
            let len: usize = shape.iter().product();
            let values = (0..len)
                .map(|_| cursor.f64())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| fmt("truncated blob".into()))?;
            if name.starts_with("coarse.") {
                coarse.push((shape, values));
            } else if name.starts_with("fine.") {
                fine.push((shape, values));
            } else {
                return Err(fmt(format!("unknown tensor `{name}`")));
            }
        }
        if cursor.pos != blob.len() {
            return Err(fmt("trailing bytes after tensors".into()));
        }
        let coarse = Field::from_tensors(arch, bounds, &coarse).map_err(|e| fmt(e.to_string()))?;
        let fine = if fine.is_empty() {
            None
        } else {
            Some(Field::from_tensors(arch, bounds, &fine).map_err(|e| fmt(e.to_string()))?)
        };
        Ok(Self {
            step,
            config_hash: get("config_hash")?.to_string(),
            prior_scale,
            coarse,
            fine,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?, path)
    }
}

fn digest(header: &[u8], blob: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(header);
    h.update(blob);
    hex::encode(h.finalize())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}
