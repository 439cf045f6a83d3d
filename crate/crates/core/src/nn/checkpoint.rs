//! Network checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `ADVC` |
//! | 4     | format version, `u32` |
//! | 4     | length `L` of the spec, `u32` |
//! | L     | the [`NetworkSpec`] as UTF-8 JSON |
//! | 8     | number of scalars `P`, `u64` |
//! | 8·P   | parameters as `f64`, tensors in declaration order |

use std::path::Path;

use super::network::Network;
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ADVC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(net: &Network) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(net.spec())?;
    let total: usize = net.params().iter().map(Tensor::len).sum();
    let mut out = Vec::with_capacity(20 + spec.len() + 8 * total);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&(total as u64).to_le_bytes());
    for p in net.params() {
        for v in p.data() {
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a checkpoint; parameters come back gradient-tracking.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {magic:?}, expected \"ADVC\"") });
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format { offset: 4, msg: format!("unsupported version {version}") });
    }
    let len = cur.u32("spec length")? as usize;
    let spec_at = cur.pos;
    let spec: NetworkSpec = serde_json::from_slice(cur.take(len, "spec")?)
        .map_err(|e| Error::Format { offset: spec_at, msg: format!("spec does not parse: {e}") })?;
    spec.validate()?;
    let count_at = cur.pos;
    let declared = u64::from_le_bytes(cur.take(8, "parameter count")?.try_into().expect("8 bytes")) as usize;
    let shapes: Vec<Vec<usize>> = spec.layers.iter().flat_map(LayerSpec::param_shapes).collect();
    let expected: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if declared != expected {
        return Err(Error::Format {
            offset: count_at,
            msg: format!("declares {declared} parameters but the spec needs {expected}"),
        });
    }
    let remaining = bytes.len() - cur.pos;
    if remaining != 8 * expected {
        return Err(Error::Format {
            offset: cur.pos,
            msg: format!("{remaining} parameter bytes present, {} expected", 8 * expected),
        });
    }
    let mut params = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let n: usize = shape.iter().product();
        let raw = cur.take(8 * n, "parameters")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.push(Tensor::new(shape, data)?.with_requires_grad(true));
    }
    Network::from_params(spec, params)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_checkpoint(net)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    read_checkpoint(&std::fs::read(path)?)
}
