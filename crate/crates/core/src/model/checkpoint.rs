//! Versioned checkpoint container.
//!
//! ```text
//! hinet-checkpoint 1
//! config_bytes <n>
//! normalizer_bytes <n>
//! params <count>
//! <name> <d0>x<d1>... <byte offset>     one line per parameter
//! data_bytes <n>
//! end
//! <config JSON><normalizer JSON><little-endian f64 data>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{atomic_write, Normalizer};
use crate::error::{Error, Result};
use crate::model::config::HiNetConfig;
use crate::model::net::HiNet;
use crate::numcore::Tensor;

const MAGIC: &str = "hinet-checkpoint";
const VERSION: u32 = 1;

/// A trained network plus the input normalisation it was trained with.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: HiNet,
    pub normalizer: Option<Normalizer>,
}

pub fn encode_checkpoint(net: &HiNet, normalizer: Option<&Normalizer>) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&net.config).map_err(|e| Error::Data(e.to_string()))?;
    let norm = match normalizer {
        Some(n) => serde_json::to_vec(n).map_err(|e| Error::Data(e.to_string()))?,
        None => Vec::new(),
    };
    let mut header = format!(
        "{MAGIC} {VERSION}\nconfig_bytes {}\nnormalizer_bytes {}\nparams {}\n",
        config.len(),
        norm.len(),
        net.params.len()
    );
    let mut data = Vec::with_capacity(net.params.numel() * 8);
    for (_, name, tensor) in net.params.iter() {
        let dims: Vec<String> = tensor.shape().iter().map(usize::to_string).collect();
        let _ = writeln!(header, "{name} {} {}", dims.join("x"), data.len());
        for v in tensor.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let _ = writeln!(header, "data_bytes {}\nend", data.len());
    let mut out = header.into_bytes();
    out.extend(config);
    out.extend(norm);
    out.extend(data);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Data("truncated checkpoint header".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Data("checkpoint header is not UTF-8".into()))
    }

    fn keyed(&mut self, key: &str) -> Result<usize> {
        let line = self.line()?;
        line.strip_prefix(key)
            .and_then(|r| r.trim().parse().ok())
            .ok_or_else(|| Error::Data(format!("expected `{key} <n>`, found `{line}`")))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("truncated checkpoint body".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.line()?;
    let version = magic
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::Data("not a hinet checkpoint".into()))?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let config_bytes = r.keyed("config_bytes")?;
    let norm_bytes = r.keyed("normalizer_bytes")?;
    let count = r.keyed("params")?;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let line = r.line()?;
        let parts: Vec<&str> = line.split(' ').collect();
        let [name, dims, offset] = parts.as_slice() else {
            return Err(Error::Data(format!("bad manifest line `{line}`")));
        };
        let shape = dims
            .split('x')
            .map(str::parse)
            .collect::<std::result::Result<Vec<usize>, _>>()
            .map_err(|_| Error::Data(format!("bad shape in `{line}`")))?;
        let offset: usize = offset.parse().map_err(|_| Error::Data(format!("bad offset in `{line}`")))?;
        manifest.push((name.to_string(), shape, offset));
    }
    let data_bytes = r.keyed("data_bytes")?;
    if r.line()? != "end" {
        return Err(Error::Data("missing end of checkpoint header".into()));
    }
    let config: HiNetConfig =
        serde_json::from_slice(r.take(config_bytes)?).map_err(|e| Error::Data(format!("checkpoint config: {e}")))?;
    let normalizer = if norm_bytes == 0 {
        None
    } else {
        Some(
            serde_json::from_slice(r.take(norm_bytes)?)
                .map_err(|e| Error::Data(format!("checkpoint normalizer: {e}")))?,
        )
    };
    let data = r.take(data_bytes)?;
    let mut net = HiNet::new(config)?;
    if manifest.len() != net.params.len() {
        return Err(Error::Data(format!(
            "checkpoint holds {} arrays, configuration needs {}",
            manifest.len(),
            net.params.len()
        )));
    }
    for (name, shape, offset) in manifest {
        let id = net
            .params
            .find(&name)
            .ok_or_else(|| Error::Data(format!("unknown parameter `{name}`")))?;
        let n: usize = shape.iter().product();
        let raw = offset
            .checked_add(n * 8)
            .filter(|&e| e <= data.len())
            .map(|e| &data[offset..e])
            .ok_or_else(|| Error::Data(format!("parameter `{name}` runs past the data section")))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        net.params.assign(id, Tensor::new(&shape, values)?)?;
    }
    Ok(Checkpoint { net, normalizer })
}

pub fn save_checkpoint(path: &Path, net: &HiNet, normalizer: Option<&Normalizer>) -> Result<()> {
    atomic_write(path, &encode_checkpoint(net, normalizer)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
