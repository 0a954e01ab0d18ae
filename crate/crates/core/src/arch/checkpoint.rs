//! Weight files: a text header naming each array, then a little-endian f32 blob.
//!
//! ```text
//! ALIASFREE-WEIGHTS v1
//! meta <key>=<value>
//! tensor <name> <d0>x<d1>... <byte offset> <count>
//! END
//! <blob>
//! ```

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use ndarray::{ArrayD, IxDyn};
use std::path::Path;

pub const WEIGHTS_MAGIC: &str = "ALIASFREE-WEIGHTS v1";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

impl WeightFile {
    pub fn from_params(params: &ParamStore, meta: &[(String, String)]) -> Self {
        Self {
            meta: meta.to_vec(),
            tensors: params.iter().map(|(n, v)| (n.to_string(), v.clone())).collect(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{WEIGHTS_MAGIC}\n");
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k}={v}\n"));
        }
        let mut offset = 0;
        for (name, a) in &self.tensors {
            let shape: Vec<String> = a.shape().iter().map(usize::to_string).collect();
            let shape = if shape.is_empty() { "scalar".to_string() } else { shape.join("x") };
            header.push_str(&format!("tensor {name} {shape} {offset} {}\n", a.len()));
            offset += a.len() * 4;
        }
        header.push_str("END\n");
        let mut out = header.into_bytes();
        for (_, a) in &self.tensors {
            for &v in a.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |offset: usize, message: String| Error::Format { offset, message };
        let mut pos = 0;
        let next_line = |pos: &mut usize| -> Result<(usize, String)> {
            let start = *pos;
            let end = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad(start, "unterminated header line".into()))?;
            let line = std::str::from_utf8(&bytes[start..start + end]).map_err(|_| bad(start, "header is not UTF-8".into()))?;
            *pos = start + end + 1;
            Ok((start, line.to_string()))
        };
        let (at, magic) = next_line(&mut pos)?;
        if magic != WEIGHTS_MAGIC {
            return Err(bad(at, format!("expected '{WEIGHTS_MAGIC}', found '{magic}'")));
        }
        let mut meta = Vec::new();
        let mut entries = Vec::new();
        loop {
            let (at, line) = next_line(&mut pos)?;
            if line == "END" {
                break;
            }
            let mut fields = line.split(' ');
            let field_at = |f: &str| at + (f.as_ptr() as usize - line.as_ptr() as usize);
            match fields.next() {
                Some("meta") => {
                    let rest = &line[5.min(line.len())..];
                    let (k, v) = rest.split_once('=').ok_or_else(|| bad(at + 5, format!("meta entry '{rest}' lacks '='")))?;
                    meta.push((k.to_string(), v.to_string()));
                }
                Some("tensor") => {
                    let name = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| bad(at + 7, "missing tensor name".into()))?;
                    let shape_s = fields.next().ok_or_else(|| bad(at + line.len(), "missing tensor shape".into()))?;
                    let shape: Vec<usize> = if shape_s == "scalar" {
                        Vec::new()
                    } else {
                        shape_s
                            .split('x')
                            .map(|d| d.parse::<usize>())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad(field_at(shape_s), format!("bad shape '{shape_s}'")))?
                    };
                    let off_s = fields.next().ok_or_else(|| bad(at + line.len(), "missing byte offset".into()))?;
                    let offset: usize = off_s.parse().map_err(|_| bad(field_at(off_s), format!("bad byte offset '{off_s}'")))?;
                    let cnt_s = fields.next().ok_or_else(|| bad(at + line.len(), "missing element count".into()))?;
                    let count: usize = cnt_s.parse().map_err(|_| bad(field_at(cnt_s), format!("bad element count '{cnt_s}'")))?;
                    if let Some(extra) = fields.next() {
                        return Err(bad(field_at(extra), format!("unexpected field '{extra}'")));
                    }
                    if shape.iter().product::<usize>() != count {
                        return Err(bad(field_at(cnt_s), format!("count {count} does not match shape {shape_s}")));
                    }
                    entries.push((name.to_string(), shape, offset, count, field_at(off_s)));
                }
                _ => return Err(bad(at, format!("unrecognised header line '{line}'"))),
            }
        }
        let blob = &bytes[pos..];
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, offset, count, at) in entries {
            let end = offset + count * 4;
            if end > blob.len() {
                return Err(bad(at, format!("tensor '{name}' extends past the end of the data ({end} > {})", blob.len())));
            }
            let vals: Vec<f64> = blob[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let a = ArrayD::from_shape_vec(IxDyn(&shape), vals).expect("count checked");
            tensors.push((name, a));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Copy every stored tensor into `params`; names and shapes must match exactly.
    pub fn apply_to(&self, params: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != params.len() {
            return Err(Error::shape(format!(
                "weight file holds {} tensors, model has {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (name, a) in &self.tensors {
            let id = params
                .find(name)
                .ok_or_else(|| Error::shape(format!("model has no parameter '{name}'")))?;
            params.set(id, a.clone())?;
        }
        Ok(())
    }
}
