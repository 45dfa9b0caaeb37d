//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "SETSEQCK"
//! version      u32      (1)
//! kind         u32      0 = set encoder, 1 = track-level feed-forward
//! init_scheme  u32      (1: fan-in uniform weights, N(0,1)·0.02 inducing points)
//! seed         u64      initialisation seed
//! d_in         u32
//! layout_hash  u64      hash of the feature layout descriptor
//! config       kind 0: layers, heads, inducing_points, hidden, ff_hidden (u32 each)
//!              kind 1: count u32, then count widths (u32 each)
//! n_params     u32
//! per param:   name_len u32, name bytes, ndim u32, dims (u32 each), f64 values
//! ```

use std::io::{Read, Write};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::encoder::{EncoderConfig, EncoderModel, Param};
use crate::error::{Error, Result};
use crate::featurizer::FeatureLayout;
use crate::model::{DnnModel, Model};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"SETSEQCK";
pub const VERSION: u32 = 1;
const INIT_SCHEME: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {} exceeds u32", v)))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serialises `model` to bytes.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let kind = match model {
        Model::SetEncoder(_) => 0,
        Model::Dnn(_) => 1,
    };
    put_u32(&mut out, kind)?;
    put_u32(&mut out, INIT_SCHEME as usize)?;
    out.extend_from_slice(&model.seed().to_le_bytes());
    put_u32(&mut out, model.d_in())?;
    out.extend_from_slice(&model.layout().hash().to_le_bytes());
    match model {
        Model::SetEncoder(m) => {
            let c = m.config();
            for v in [c.layers, c.heads, c.inducing_points, c.hidden, c.ff_hidden] {
                put_u32(&mut out, v)?;
            }
        }
        Model::Dnn(m) => {
            put_u32(&mut out, m.widths().len())?;
            for &w in m.widths() {
                put_u32(&mut out, w)?;
            }
        }
    }
    put_u32(&mut out, model.params().len())?;
    for p in model.params() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.shape().len())?;
        for &d in p.value.shape() {
            put_u32(&mut out, d)?;
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u32()? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", version)));
    }
    let kind = c.u32()?;
    let init = c.u32()? as u32;
    if init != INIT_SCHEME {
        return Err(Error::Checkpoint(format!("unknown init scheme {}", init)));
    }
    let seed = c.u64()?;
    let d_in = c.u32()?;
    let layout_hash = c.u64()?;
    let layout = FeatureLayout::from_hash(layout_hash)
        .ok_or_else(|| Error::Checkpoint(format!("unknown feature layout hash {:016x}", layout_hash)))?;
    enum Arch {
        Set(EncoderConfig),
        Dnn(Vec<usize>),
    }
    let arch = match kind {
        0 => Arch::Set(EncoderConfig {
            layers: c.u32()?,
            heads: c.u32()?,
            inducing_points: c.u32()?,
            hidden: c.u32()?,
            ff_hidden: c.u32()?,
        }),
        1 => {
            let n = c.u32()?;
            Arch::Dnn((0..n).map(|_| c.u32()).collect::<Result<_>>()?)
        }
        k => return Err(Error::Checkpoint(format!("unknown model kind {}", k))),
    };
    let n_params = c.u32()?;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let len = c.u32()?;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = c.u32()?;
        let shape: Vec<usize> = (0..ndim).map(|_| c.u32()).collect::<Result<_>>()?;
        let count: usize = shape.iter().product();
        let data: Vec<f64> = (0..count).map(|_| c.f64()).collect::<Result<_>>()?;
        let value = Tensor::new(shape, data)?;
        if !value.is_finite() {
            return Err(Error::Checkpoint(format!("parameter {} has non-finite weights", name)));
        }
        params.push(Param {
            name,
            value: Arc::new(value),
        });
    }
    if c.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(match arch {
        Arch::Set(cfg) => Model::SetEncoder(EncoderModel::from_params(cfg, layout, d_in, seed, params)?),
        Arch::Dnn(widths) => Model::Dnn(DnnModel::from_params(&widths, layout, d_in, seed, params)?),
    })
}

pub fn write<W: Write>(mut w: W, model: &Model) -> Result<()> {
    w.write_all(&to_bytes(model)?)?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Model> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

pub fn save(path: &std::path::Path, model: &Model) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load(path: &std::path::Path) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}

/// Hex SHA-256 of the serialised checkpoint.
pub fn model_hash(model: &Model) -> Result<String> {
    let digest = Sha256::digest(to_bytes(model)?);
    Ok(hex::encode(digest))
}
