//! Named parameter storage and the checkpoint file format.
//!
//! A checkpoint is a plain-text manifest followed by raw little-endian
//! `f64` blobs:
//!
//! ```text
//! collab-motion-checkpoint v1
//! meta variant xia
//! param key_mlp.w1 540x64 0
//! param key_mlp.b1 1x64 276480
//! end
//! <binary blobs, offsets relative to the first byte after "end\n">
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const MAGIC: &str = "collab-motion-checkpoint v1";

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.tensors[id.0].shape() {
            return Err(Error::dim(
                "param set",
                format!(
                    "{}: {:?} vs {:?}",
                    self.names[id.0],
                    value.shape(),
                    self.tensors[id.0].shape()
                ),
            ));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Registers every parameter as a tape leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}

/// Parameters plus free-form metadata read from or written to disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
}

/// Writes to a temporary sibling and renames on success, so a failed write
/// never leaves a partial checkpoint at `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    for (k, v) in &ckpt.meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::contract(format!("invalid checkpoint meta entry {k:?}")));
        }
        header.push_str(&format!("meta {k} {v}\n"));
    }
    let mut offset = 0usize;
    for (name, t) in ckpt.params.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        header.push_str(&format!("param {name} {} {offset}\n", shape.join("x")));
        offset += t.numel() * 8;
    }
    header.push_str("end\n");

    let mut bytes = header.into_bytes();
    bytes.reserve(offset);
    for (_, t) in ckpt.params.iter() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    crate::io_util::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };

    let mut pos = 0usize;
    let mut lines = Vec::new();
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| perr(lines.len() + 1, "manifest not terminated by `end`".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl])
            .map_err(|_| perr(lines.len() + 1, "manifest is not UTF-8".into()))?
            .to_string();
        pos += nl + 1;
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    let blob = &bytes[pos..];

    if lines.first().map(String::as_str) != Some(MAGIC) {
        return Err(perr(1, format!("expected `{MAGIC}`")));
    }
    let mut ckpt = Checkpoint::default();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let lineno = i + 1;
        let mut parts = line.splitn(2, ' ');
        match parts.next() {
            Some("meta") => {
                let rest = parts.next().unwrap_or("");
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.insert(k.to_string(), v.to_string());
            }
            Some("param") => {
                let fields: Vec<&str> = parts.next().unwrap_or("").split(' ').collect();
                if fields.len() != 3 {
                    return Err(perr(lineno, format!("expected `param name shape offset`, got {line:?}")));
                }
                let shape = fields[1]
                    .split('x')
                    .map(str::parse::<usize>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| perr(lineno, format!("bad shape {:?}: {e}", fields[1])))?;
                let offset: usize = fields[2]
                    .parse()
                    .map_err(|e| perr(lineno, format!("bad offset {:?}: {e}", fields[2])))?;
                let n: usize = shape.iter().product();
                let end = offset + n * 8;
                if end > blob.len() {
                    return Err(perr(lineno, format!("blob for {} runs past end of file", fields[0])));
                }
                let data = blob[offset..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect();
                let t = Tensor::new(shape, data).map_err(|e| perr(lineno, e.to_string()))?;
                ckpt.params.add(fields[0], t).map_err(|e| perr(lineno, e.to_string()))?;
            }
            _ => return Err(perr(lineno, format!("unrecognized manifest line {line:?}"))),
        }
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut ckpt = Checkpoint::default();
        ckpt.meta.insert("variant".into(), "xia".into());
        ckpt.params
            .add("a.w", Tensor::new([2, 3], vec![0.1, -2.5, 1e-300, 3.0, f64::MIN_POSITIVE, 7.0]).unwrap())
            .unwrap();
        ckpt.params.add("b", Tensor::scalar(std::f64::consts::PI)).unwrap();
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn manifest_lists_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut ckpt = Checkpoint::default();
        ckpt.params.add("x", Tensor::zeros([2, 2]).unwrap()).unwrap();
        ckpt.params.add("y", Tensor::zeros([3]).unwrap()).unwrap();
        save_checkpoint(&path, &ckpt).unwrap();
        let text = String::from_utf8_lossy(&fs::read(&path).unwrap()).to_string();
        assert!(text.contains("param x 2x2 0\n"));
        assert!(text.contains("param y 3 32\n"));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        fs::write(&path, format!("{MAGIC}\nparam x 4 0\nend\n\0\0\0\0")).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamStore::new();
        p.add("w", Tensor::scalar(1.0)).unwrap();
        assert!(p.add("w", Tensor::scalar(2.0)).is_err());
    }
}
