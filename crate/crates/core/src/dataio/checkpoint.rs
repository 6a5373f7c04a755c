//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "BIAN" | u32 version | u32 len, config text (TOML)
//! u32 count | count × (u32 len, name | u32 ndim, u64 dims… | f32 values…)
//! ```
//!
//! Loading parses the whole file into a fresh model before returning, so a
//! failure never leaves a half-populated model behind.

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::network::{Model, NetConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BIAN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let config = model.config().to_text()?;
    let mut out = Vec::with_capacity(16 + 4 * model.param_count() as usize);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(model)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(format!("while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn text(&mut self, what: &str) -> std::result::Result<&'a str, CheckpointError> {
        let len = self.u32(what)? as usize;
        std::str::from_utf8(self.take(len, what)?).map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model<f32>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        }
        .into());
    }
    let config = NetConfig::from_text(c.text("config")?)
        .map_err(|e| CheckpointError::Malformed(format!("config: {e}")))?;
    let mut model = Model::<f32>::new(&config, 0).map_err(|e| CheckpointError::Malformed(format!("config: {e}")))?;
    let count = c.u32("parameter count")? as usize;
    let mut filled = vec![false; model.params.len()];
    for _ in 0..count {
        let name = c.text("parameter name")?;
        let id = model
            .params
            .id(name)
            .ok_or_else(|| CheckpointError::UnknownParameter(name.to_string()))?;
        let ndim = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(c.u64("dimension")? as usize);
        }
        let target = model.params.get_mut(id);
        if shape != target.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: target.shape().to_vec(),
                found: shape,
            }
            .into());
        }
        if filled[id.index()] {
            return Err(CheckpointError::Malformed(format!("parameter {name:?} appears twice")).into());
        }
        let raw = c.take(4 * target.numel(), name)?;
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        filled[id.index()] = true;
    }
    if let Some(i) = filled.iter().position(|&f| !f) {
        let id = model.params.ids().nth(i).unwrap();
        return Err(CheckpointError::Malformed(format!("parameter {:?} missing", model.params.name(id))).into());
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - c.pos)).into());
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::NetConfig;

    fn model() -> Model<f32> {
        Model::new(&NetConfig::toy().with_mbam(1), 5).unwrap()
    }

    fn code(r: Result<Model<f32>>) -> u8 {
        match r {
            Err(Error::Checkpoint(e)) => e.code(),
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let m = model();
        let back = read_checkpoint(&write_checkpoint(&m).unwrap()).unwrap();
        assert_eq!(back.config(), m.config());
        for ((na, a), (nb, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn distinct_error_codes() {
        let good = write_checkpoint(&model()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(code(read_checkpoint(&bad)), 1);
        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        assert_eq!(code(read_checkpoint(&bad)), 2);
        assert_eq!(code(read_checkpoint(&good[..good.len() - 3])), 3);
        assert_eq!(code(read_checkpoint(&good[..2])), 3);
        let mut extra = good.clone();
        extra.push(0);
        assert_eq!(code(read_checkpoint(&extra)), 6);
    }

    #[test]
    fn unknown_name_rejected() {
        let good = write_checkpoint(&model()).unwrap();
        let cfg_len = u32::from_le_bytes(good[8..12].try_into().unwrap()) as usize;
        let first_name = 12 + cfg_len + 4 + 4;
        let mut bad = good.clone();
        bad[first_name] = b'#';
        assert_eq!(code(read_checkpoint(&bad)), 4);
    }
}
