//! Binary checkpoint format.
//!
//! Layout: magic `EVN1` | version u32 | config-JSON length u32 + bytes |
//! tensor count u32 | per tensor: name length u16 + UTF-8 name, rank u8,
//! dims u32 each, payload f64 little-endian. Everything is stored at full
//! 64-bit precision so a load reproduces every tensor bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::nn::tape::Mat;

const MAGIC: &[u8; 4] = b"EVN1";
const VERSION: u32 = 1;

pub fn save_checkpoint(params: &ModelParams, cfg: &ModelConfig, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg_json = serde_json::to_vec(cfg)
        .map_err(|e| Error::Checkpoint(format!("config serialization failed: {e}")))?;
    buf.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg_json);

    let tensors = params.tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.push(2u8); // matrices throughout
        buf.extend_from_slice(&(tensor.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(tensor.ncols() as u32).to_le_bytes());
        for v in tensor.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    // Atomic write: temp file in the same directory, then rename.
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, ModelConfig)> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = Reader { data: &data, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let cfg: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad embedded config: {e}")))?;
    cfg.validate()?;

    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u8()?;
        if rank != 2 {
            return Err(Error::Checkpoint(format!("tensor {name} has unsupported rank {rank}")));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let payload = r.take(rows * cols * 8)?;
        let mut values = Vec::with_capacity(rows * cols);
        for chunk in payload.chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let mat = Mat::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        tensors.push((name, mat));
    }
    if r.pos != data.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor table".into()));
    }

    // Rebuild the parameter tree by assigning into a skeleton of the right
    // layout, verifying names and shapes tensor by tensor.
    let mut params = ModelParams::init(&cfg, 0)?;
    let expected: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    if expected.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, config expects {}",
            tensors.len(),
            expected.len()
        )));
    }
    for ((name, mat), (slot_name, slot)) in tensors.into_iter().zip(params.tensors_mut()) {
        if name != slot_name {
            return Err(Error::Checkpoint(format!(
                "tensor {name} out of order, expected {slot_name}"
            )));
        }
        if mat.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, config expects {:?}",
                mat.shape(),
                slot.shape()
            )));
        }
        *slot = mat;
    }
    Ok((params, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::task_preset;
    use crate::traj::TaskKind;
    use crate::transforms::TransformKind;

    fn toy_cfg(d: usize) -> ModelConfig {
        let mut cfg =
            ModelConfig::small(TransformKind::Dft, task_preset(TaskKind::Co)).unwrap();
        cfg.d = d;
        cfg.embed_width = d / 2;
        cfg.heads = 2;
        cfg.ff_width = 8;
        cfg.noise_dim = 4;
        cfg.ctx_width = 4;
        cfg
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.evn");
        let cfg = toy_cfg(8);
        let params = ModelParams::init(&cfg, 42).unwrap();
        save_checkpoint(&params, &cfg, &path).unwrap();
        let (loaded, loaded_cfg) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded_cfg, cfg);
        assert_eq!(loaded, params);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.evn");
        let cfg = toy_cfg(8);
        let params = ModelParams::init(&cfg, 1).unwrap();
        save_checkpoint(&params, &cfg, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.evn");
        let cfg = toy_cfg(8);
        let params = ModelParams::init(&cfg, 1).unwrap();
        save_checkpoint(&params, &cfg, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let cfg8 = toy_cfg(8);
        let params8 = ModelParams::init(&cfg8, 1).unwrap();
        let cfg16 = toy_cfg(16);
        // A d=8 checkpoint loaded against a d=16 layout must name the
        // offending tensor.
        let err = params8.check_shapes(&cfg16).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stage1."), "error should name a tensor: {msg}");
    }
}
