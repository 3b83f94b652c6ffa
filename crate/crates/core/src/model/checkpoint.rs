//! Flat checkpoint archive.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "PGTCKPT1"
//! meta    u32 length, then `key=value\n` lines (keys sorted, unique)
//! count   u32 number of parameter entries
//! entry   u16 name length; name bytes (UTF-8)
//!         u8 rank; rank × u32 dimensions
//!         numel × f64 row-major values
//! ```
//!
//! Entries appear in the model's canonical parameter order, so
//! save → load → save reproduces the file byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{PgtError, Result};
use crate::tensor::Tensor as GenTensor;
use crate::Tensor;

const MAGIC: &[u8; 8] = b"PGTCKPT1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn save(path: &Path, meta: &[(String, String)], entries: &[(String, &Tensor)]) -> Result<()> {
    let mut sorted: Vec<(String, String)> = meta.to_vec();
    sorted.sort();
    sorted.dedup_by(|a, b| a.0 == b.0);
    let mut meta_text = String::new();
    for (k, v) in &sorted {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(PgtError::Checkpoint(format!(
                "meta key/value '{k}' contains a reserved character"
            )));
        }
        meta_text.push_str(k);
        meta_text.push('=');
        meta_text.push_str(v);
        meta_text.push('\n');
    }

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_text.as_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(PgtError::Checkpoint(format!("name '{name}' too long")));
        }
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| PgtError::Checkpoint(format!("create {}: {e}", dir.display())))?;
    }
    let mut file = fs::File::create(path)
        .map_err(|e| PgtError::Checkpoint(format!("create {}: {e}", path.display())))?;
    file.write_all(&buf)
        .map_err(|e| PgtError::Checkpoint(format!("write {}: {e}", path.display())))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(PgtError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path)
        .map_err(|e| PgtError::Checkpoint(format!("read {}: {e}", path.display())))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(PgtError::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let meta_len = r.u32()? as usize;
    let meta_text = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| PgtError::Checkpoint("meta is not UTF-8".into()))?;
    let mut meta = Vec::new();
    for line in meta_text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| PgtError::Checkpoint(format!("malformed meta line '{line}'")))?;
        meta.push((k.to_string(), v.to_string()));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| PgtError::Checkpoint("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        entries.push((name, GenTensor::new(shape, data)));
    }
    if r.pos != buf.len() {
        return Err(PgtError::Checkpoint("trailing bytes after entries".into()));
    }
    Ok(Checkpoint { meta, entries })
}

/// Copy loaded entries into an existing parameter set by name, insisting on
/// an exact one-to-one match of names and shapes.
pub fn fill_named(target: &mut [(String, &mut Tensor)], entries: &[(String, Tensor)]) -> Result<()> {
    if target.len() != entries.len() {
        return Err(PgtError::Checkpoint(format!(
            "parameter count mismatch: model has {}, checkpoint has {}",
            target.len(),
            entries.len()
        )));
    }
    for ((tname, tensor), (ename, loaded)) in target.iter_mut().zip(entries.iter()) {
        if tname != ename {
            return Err(PgtError::Checkpoint(format!(
                "parameter order mismatch: expected '{tname}', found '{ename}'"
            )));
        }
        if tensor.shape() != loaded.shape() {
            return Err(PgtError::Checkpoint(format!(
                "shape mismatch for '{tname}': model {:?}, checkpoint {:?}",
                tensor.shape(),
                loaded.shape()
            )));
        }
        **tensor = loaded.clone();
    }
    Ok(())
}
