//! Model file format (all integers and floats little-endian):
//!
//! ```text
//! magic    "TBAQ"
//! version  u32 = 1
//! n_dims   u32 = 11
//! dims     u32 x n_dims: input_side, input_channels, conv_channels[4],
//!          global_dim, global_hidden, hidden[2], actions
//! n_params u64
//! params   f64 x n_params, layers in declaration order, weights then bias
//! ```

use std::fs;
use std::path::Path;

use super::net::{Architecture, QNetwork};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TBAQ";
pub const VERSION: u32 = 1;
const N_DIMS: usize = 11;

fn dims(a: &Architecture) -> [u32; N_DIMS] {
    [
        a.input_side as u32,
        a.input_channels as u32,
        a.conv_channels[0] as u32,
        a.conv_channels[1] as u32,
        a.conv_channels[2] as u32,
        a.conv_channels[3] as u32,
        a.global_dim as u32,
        a.global_hidden as u32,
        a.hidden[0] as u32,
        a.hidden[1] as u32,
        a.actions as u32,
    ]
}

pub fn encode_model(net: &QNetwork) -> Vec<u8> {
    let params = net.params();
    let mut out = Vec::with_capacity(16 + N_DIMS * 4 + 8 + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(N_DIMS as u32).to_le_bytes());
    for d in dims(net.architecture()) {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("model file truncated in {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<QNetwork> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format("bad model magic (expected TBAQ)"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported model version {version}"
        )));
    }
    let n_dims = c.u32("dimension count")? as usize;
    if n_dims != N_DIMS {
        return Err(Error::format(format!(
            "expected {N_DIMS} layer dimensions, found {n_dims}"
        )));
    }
    let mut d = [0usize; N_DIMS];
    for v in d.iter_mut() {
        *v = c.u32("dimension table")? as usize;
    }
    if d.contains(&0) {
        return Err(Error::format("zero entry in dimension table"));
    }
    let arch = Architecture {
        input_side: d[0],
        input_channels: d[1],
        conv_channels: [d[2], d[3], d[4], d[5]],
        global_dim: d[6],
        global_hidden: d[7],
        hidden: [d[8], d[9]],
        actions: d[10],
    };
    let n = c.u64("parameter count")? as usize;
    if n != arch.param_count() {
        return Err(Error::format(format!(
            "parameter count {n} does not match the dimension table ({})",
            arch.param_count()
        )));
    }
    let raw = c.take(n * 8, "parameters")?;
    if c.pos != bytes.len() {
        return Err(Error::format("trailing bytes after parameters"));
    }
    let params = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    QNetwork::from_params(arch, params)
}

pub fn save_model(net: &QNetwork, path: &Path) -> Result<()> {
    let bytes = encode_model(net);
    crate::io::write_atomic(path, |w| w.write_all(&bytes))
}

pub fn load_model(path: &Path) -> Result<QNetwork> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
        other => other,
    })
}
