//! Binary checkpoint of encoder parameters and, optionally, optimizer state.
//!
//! Layout, all integers u64 little-endian and all reals f64 little-endian:
//! magic `BTXCKPT1`; vocab_size, hidden_dim, num_layers, max_seq_len,
//! embed_dim, pooling code; optimizer flag (0/1); optimizer step when the
//! flag is set; parameter count `n`; `n` parameters in canonical tensor
//! order; then, with the flag set, `n` first moments and `n` second moments.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::{EncoderConfig, EncoderParams, Pooling};
use crate::error::{Error, Result};
use crate::trainer::OptimizerState;

pub const MAGIC: &[u8; 8] = b"BTXCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub optimizer: Option<OptimizerState>,
}

fn write_tensors<W: Write>(p: &EncoderParams, w: &mut W) -> Result<()> {
    for t in p.tensors() {
        for x in t {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(params: &EncoderParams, optimizer: Option<&OptimizerState>, w: W) -> Result<()> {
    if let Some(s) = optimizer {
        if s.first.config != params.config || s.second.config != params.config {
            return Err(Error::shape("optimizer state does not match the parameters"));
        }
    }
    let mut w = BufWriter::new(w);
    let c = &params.config;
    w.write_all(MAGIC)?;
    for v in [
        c.vocab_size as u64,
        c.hidden_dim as u64,
        c.num_layers as u64,
        c.max_seq_len as u64,
        c.embed_dim as u64,
        c.pooling.code(),
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    match optimizer {
        Some(s) => {
            w.write_all(&1u64.to_le_bytes())?;
            w.write_all(&s.step.to_le_bytes())?;
        }
        None => w.write_all(&0u64.to_le_bytes())?,
    }
    w.write_all(&(params.num_params() as u64).to_le_bytes())?;
    write_tensors(params, &mut w)?;
    if let Some(s) = optimizer {
        write_tensors(&s.first, &mut w)?;
        write_tensors(&s.second, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::format(format!("byte {}", self.offset), format!("truncated while reading {what}"))
            } else {
                Error::Io(e)
            }
        })?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.bytes::<8>(what).map(u64::from_le_bytes)
    }

    fn fill(&mut self, p: &mut EncoderParams, what: &str) -> Result<()> {
        for t in p.tensors_mut() {
            for x in t.iter_mut() {
                let at = self.offset;
                *x = f64::from_le_bytes(self.bytes::<8>(what)?);
                if !x.is_finite() {
                    return Err(Error::format(format!("byte {at}"), format!("non-finite value in {what}")));
                }
            }
        }
        Ok(())
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Checkpoint> {
    let mut c = Cursor {
        inner: BufReader::new(r),
        offset: 0,
    };
    if &c.bytes::<8>("magic")? != MAGIC {
        return Err(Error::format("byte 0", "not a checkpoint (bad magic)"));
    }
    let mut dims = [0usize; 5];
    for (d, name) in dims
        .iter_mut()
        .zip(["vocab_size", "hidden_dim", "num_layers", "max_seq_len", "embed_dim"])
    {
        *d = usize::try_from(c.u64(name)?).map_err(|_| Error::format(format!("byte {}", c.offset - 8), format!("{name} out of range")))?;
    }
    let at = c.offset;
    let pooling = Pooling::from_code(c.u64("pooling")?)
        .ok_or_else(|| Error::format(format!("byte {at}"), "unknown pooling code"))?;
    let config = EncoderConfig {
        vocab_size: dims[0],
        hidden_dim: dims[1],
        num_layers: dims[2],
        max_seq_len: dims[3],
        embed_dim: dims[4],
        pooling,
    };
    config
        .validate()
        .map_err(|e| Error::format("byte 8", format!("invalid encoder config: {e}")))?;
    let at = c.offset;
    let step = match c.u64("optimizer flag")? {
        0 => None,
        1 => Some(c.u64("optimizer step")?),
        f => return Err(Error::format(format!("byte {at}"), format!("optimizer flag must be 0 or 1, got {f}"))),
    };
    let mut params = EncoderParams::init_zeros(config);
    let at = c.offset;
    let n = c.u64("parameter count")?;
    if n != params.num_params() as u64 {
        return Err(Error::format(
            format!("byte {at}"),
            format!("parameter count {n} does not match the config ({})", params.num_params()),
        ));
    }
    c.fill(&mut params, "parameters")?;
    let optimizer = match step {
        None => None,
        Some(step) => {
            let mut first = params.zeros_like();
            let mut second = params.zeros_like();
            c.fill(&mut first, "first moments")?;
            c.fill(&mut second, "second moments")?;
            Some(OptimizerState { first, second, step })
        }
    };
    let mut probe = [0u8; 1];
    if c.inner.read(&mut probe)? != 0 {
        return Err(Error::format(format!("byte {}", c.offset), "trailing bytes after checkpoint"));
    }
    Ok(Checkpoint { params, optimizer })
}

pub fn save_checkpoint(params: &EncoderParams, optimizer: Option<&OptimizerState>, path: &Path) -> Result<()> {
    write_checkpoint(params, optimizer, File::create(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(File::open(path)?).map_err(|e| match e {
        Error::Format { location, reason } => Error::Format {
            location: format!("{}: {location}", path.display()),
            reason,
        },
        e => e,
    })
}

/// Loads a checkpoint and checks its architecture against `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &EncoderConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if &ck.params.config != expected {
        return Err(Error::invalid(format!(
            "checkpoint {} has config {:?}, expected {:?}",
            path.display(),
            ck.params.config,
            expected
        )));
    }
    Ok(ck)
}
