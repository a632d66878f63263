//! Checkpoints: `FDTACKP1`, the run configuration as key=value text, the
//! input geometry, then every parameter by name with its shape and
//! little-endian `f64` values.

use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{bail, Error, Result};

use super::config::RunConfig;
use super::model::{FdtaModel, InputDims};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FDTACKP1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            bail!(Format, "checkpoint truncated at byte {}", self.pos);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).ok().filter(|&n| n <= self.buf.len()).ok_or_else(|| Error::Format(format!("implausible length {n}")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not utf-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u64).to_le_bytes());
    out.extend(s.as_bytes());
}

pub fn checkpoint_bytes(model: &FdtaModel) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    put_str(&mut out, &model.cfg.to_ini_string());
    let d = &model.dims;
    for v in [d.appearance_dim, d.context_dim, d.image_rows, d.image_cols] {
        out.extend((v as u64).to_le_bytes());
    }
    out.extend(d.width.to_le_bytes());
    out.extend(d.height.to_le_bytes());
    out.extend((model.store.len() as u64).to_le_bytes());
    for (name, t) in model.store.iter() {
        put_str(&mut out, name);
        out.extend((t.shape().len() as u64).to_le_bytes());
        for &s in t.shape() {
            out.extend((s as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

/// Rebuilds the model from its configuration and overwrites every
/// parameter; names, order and shapes must match exactly.
pub fn model_from_bytes(bytes: &[u8]) -> Result<FdtaModel> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        bail!(Format, "not an FDTACKP1 checkpoint");
    }
    let mut r = Reader { buf: bytes, pos: 8 };
    let cfg = RunConfig::from_ini_str(&r.string()?)?;
    let dims = InputDims {
        appearance_dim: r.len()?,
        context_dim: r.len()?,
        image_rows: r.len()?,
        image_cols: r.len()?,
        width: r.f64()?,
        height: r.f64()?,
    };
    let mut model = FdtaModel::new(&cfg, dims)?;
    let count = r.len()?;
    if count != model.store.len() {
        bail!(Format, "checkpoint holds {count} parameters, the model has {}", model.store.len());
    }
    for id in model.store.ids().collect::<Vec<_>>() {
        let name = r.string()?;
        if name != model.store.name(id) {
            bail!(Format, "parameter {name:?} where {:?} was expected", model.store.name(id));
        }
        let rank = r.len()?;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        if shape != model.store.get(id).shape() {
            bail!(Format, "parameter {name:?} has shape {shape:?}, expected {:?}", model.store.get(id).shape());
        }
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        model.store.set(id, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        bail!(Format, "{} trailing bytes after the last parameter", bytes.len() - r.pos);
    }
    Ok(model)
}

pub fn save_checkpoint(model: &FdtaModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<FdtaModel> {
    model_from_bytes(&std::fs::read(path)?)
}
