use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SequenceBatch;
use crate::{Error, Result};

pub const FSEQ_MAGIC: &[u8; 4] = b"FSEQ";
pub const FSEQ_VERSION: u32 = 1;

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "FSEQ",
        reason: reason.into(),
    }
}

/// Header, then observations and actions as little-endian `f64`.
pub fn write_fseq<W: Write>(mut w: W, batch: &SequenceBatch) -> Result<()> {
    w.write_all(FSEQ_MAGIC)?;
    for v in [
        FSEQ_VERSION,
        batch.sequences() as u32,
        batch.steps() as u32,
        batch.dim() as u32,
        batch.action_dim() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in batch.observations() {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(a) = batch.actions() {
        for v in a {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|_| bad(format!("truncated {what}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn read_fseq<R: Read>(mut r: R) -> Result<SequenceBatch> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("missing magic"))?;
    if &magic != FSEQ_MAGIC {
        return Err(bad("wrong magic"));
    }
    let version = read_u32(&mut r)?;
    if version != FSEQ_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let q = read_u32(&mut r)? as usize;
    let t = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let da = read_u32(&mut r)? as usize;
    let obs = read_f64s(&mut r, q * t * d, "observations")?;
    let actions = if da > 0 {
        Some((da, read_f64s(&mut r, q * t * da, "actions")?))
    } else {
        None
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    SequenceBatch::new(q, t, d, obs, actions, "fseq")
}

pub fn write_fseq_file(path: &Path, batch: &SequenceBatch) -> Result<()> {
    write_fseq(BufWriter::new(File::create(path)?), batch)
}

pub fn read_fseq_file(path: &Path) -> Result<SequenceBatch> {
    read_fseq(BufReader::new(File::open(path)?))
}

/// One line per step: `seq,t,y0..,a0..`.
pub fn write_csv<W: Write>(mut w: W, batch: &SequenceBatch) -> Result<()> {
    let mut header = vec!["seq".to_string(), "t".to_string()];
    header.extend((0..batch.dim()).map(|i| format!("y{i}")));
    header.extend((0..batch.action_dim()).map(|i| format!("a{i}")));
    writeln!(w, "{}", header.join(","))?;
    for q in 0..batch.sequences() {
        for t in 0..batch.steps() {
            let mut line = format!("{q},{t}");
            for v in batch.obs(q, t) {
                line.push_str(&format!(",{v}"));
            }
            if let Some(a) = batch.action(q, t) {
                for v in a {
                    line.push_str(&format!(",{v}"));
                }
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}
