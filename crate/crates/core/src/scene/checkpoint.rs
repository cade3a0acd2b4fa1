//! Binary scene checkpoint.
//!
//! Layout (all little endian):
//!
//! ```text
//! "TSPL"  u32 version  u64 count
//! count × record: 38 × f64  (position 3, log-scale 3, rotation wxyz 4,
//!                            opacity logit 1, color 3, SH rest 8×3)
//! zero or more sections: [u8;4] tag  u64 byte length  payload
//!   "META": u32 sh_degree
//!   "APPN" / "MASK": network parameters
//!       u32 section version, u64 tensor count,
//!       per tensor: u32 ndim, ndim × u64 dims, prod(dims) × f64
//! ```

use std::fs;
use std::path::Path;

use super::{GaussianPrimitive, Scene, PARAM_LEN};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSPL";
pub const CHECKPOINT_VERSION: u32 = 1;
const NET_SECTION_VERSION: u32 = 1;

/// Flattened parameter tensors of one network: (shape, values) pairs.
pub type NetworkParams = Vec<(Vec<usize>, Vec<f64>)>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub scene: Scene,
    pub appearance: Option<NetworkParams>,
    pub transient: Option<NetworkParams>,
}

impl Checkpoint {
    pub fn from_scene(scene: Scene) -> Self {
        Self {
            scene,
            ..Default::default()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.scene.gaussians.len();
        let mut out = Vec::with_capacity(16 + n * PARAM_LEN * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for g in &self.scene.gaussians {
            for v in g.to_params() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_section(&mut out, b"META", &(self.scene.sh_degree as u32).to_le_bytes());
        if let Some(p) = &self.appearance {
            write_section(&mut out, b"APPN", &encode_network(p));
        }
        if let Some(p) = &self.transient {
            write_section(&mut out, b"MASK", &encode_network(p));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("missing TSPL magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u64()? as usize;
        let need = count
            .checked_mul(PARAM_LEN * 8)
            .ok_or_else(|| Error::Checkpoint("count overflow".into()))?;
        if r.remaining() < need {
            return Err(Error::Checkpoint(format!(
                "truncated: {count} records need {need} bytes, {} left",
                r.remaining()
            )));
        }
        let mut gaussians = Vec::with_capacity(count);
        for _ in 0..count {
            let mut p = [0.0; PARAM_LEN];
            for v in p.iter_mut() {
                *v = r.f64()?;
            }
            gaussians.push(GaussianPrimitive::from_params(&p));
        }
        let mut ck = Checkpoint::from_scene(Scene::new(gaussians));
        while r.remaining() > 0 {
            let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
            let len = r.u64()? as usize;
            let payload = r.take(len)?;
            match &tag {
                b"META" => {
                    let mut m = Reader { buf: payload, pos: 0 };
                    ck.scene.sh_degree = m.u32()? as usize;
                }
                b"APPN" => ck.appearance = Some(decode_network(payload)?),
                b"MASK" => ck.transient = Some(decode_network(payload)?),
                // unknown sections from newer writers are skipped
                _ => {}
            }
        }
        Ok(ck)
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, ck.to_bytes()).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn write_section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn encode_network(params: &NetworkParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&NET_SECTION_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (shape, data) in params {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_network(bytes: &[u8]) -> Result<NetworkParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let version = r.u32()?;
    if version != NET_SECTION_VERSION {
        return Err(Error::Checkpoint(format!("network section version {version}")));
    }
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        if r.remaining() < len * 8 {
            return Err(Error::Checkpoint("truncated network tensor".into()));
        }
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push((shape, data));
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Checkpoint(format!(
                "unexpected end of data at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
