//! Checkpoint directories.
//!
//! A checkpoint holds `config.toml` (the network configuration),
//! `params.bin` (every parameter array), `step.txt` (optimizer steps taken)
//! and optionally `run.toml` (the run configuration that produced it).
//!
//! `params.bin` is `DTNPARAM`, a little-endian `u32` version and entry
//! count, then per entry: `u32` name length, UTF-8 name, `u8` kind
//! (0 trainable, 1 running statistic), `u8` dtype (1 = f64), `u8` rank,
//! `u64` dims, and the values as little-endian `f64`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use crate::params::{ParamEntry, ParamKind, ParamStore};
use crate::tensor::Tensor;
use crate::train::RunConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const PARAMS_FILE: &str = "params.bin";
pub const STEP_FILE: &str = "step.txt";
pub const RUN_FILE: &str = "run.toml";

const MAGIC: &[u8; 8] = b"DTNPARAM";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn encode_params(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.entries().iter().map(|e| 64 + 8 * e.value.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for e in store.entries() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(match e.kind {
            ParamKind::Trainable => 0,
            ParamKind::RunningStat => 1,
        });
        out.push(DTYPE_F64);
        let shape = e.value.shape();
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in e.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("parameter file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a parameter file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported parameter file version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let kind = match r.u8()? {
            0 => ParamKind::Trainable,
            1 => ParamKind::RunningStat,
            k => return Err(Error::Checkpoint(format!("`{name}`: unknown kind {k}"))),
        };
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("`{name}`: unsupported dtype {dtype}")));
        }
        let rank = r.u8()? as usize;
        if rank != 4 {
            return Err(Error::Checkpoint(format!("`{name}`: expected rank 4, got {rank}")));
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?;
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.push(ParamEntry {
            name,
            kind,
            value: Tensor::from_vec(shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    ParamStore::from_entries(entries)
}

pub struct Checkpoint {
    pub network: Network,
    pub step: usize,
    pub run: Option<RunConfig>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn save(dir: &Path, net: &Network, step: usize, run: Option<&RunConfig>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = toml::to_string(net.config()).map_err(|e| Error::Parse(e.to_string()))?;
    write(&dir.join(CONFIG_FILE), cfg.as_bytes())?;
    write(&dir.join(PARAMS_FILE), &encode_params(net.params()))?;
    write(&dir.join(STEP_FILE), format!("{step}\n").as_bytes())?;
    if let Some(run) = run {
        write(&dir.join(RUN_FILE), run.to_toml()?.as_bytes())?;
    }
    Ok(())
}

/// Loads a checkpoint, validating every parameter against the stored config.
pub fn load(dir: &Path) -> Result<Checkpoint> {
    let cfg: NetworkConfig = toml::from_str(&read_text(&dir.join(CONFIG_FILE))?)
        .map_err(|e| Error::Parse(format!("{}: {e}", dir.join(CONFIG_FILE).display())))?;
    let params_path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    let network = Network::with_params(&cfg, decode_params(&bytes)?)?;
    let step = read_text(&dir.join(STEP_FILE))?
        .trim()
        .parse()
        .map_err(|_| Error::Checkpoint("step.txt does not hold an integer".into()))?;
    let run_path = dir.join(RUN_FILE);
    let run = if run_path.exists() {
        Some(RunConfig::from_toml(&read_text(&run_path)?)?)
    } else {
        None
    };
    Ok(Checkpoint { network, step, run })
}
