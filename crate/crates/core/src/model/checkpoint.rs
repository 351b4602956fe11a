use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{parse_kv_lines, FrmdnModel, ModelConfig, Optimizer, OptimizerConfig};
use crate::diffcore::Tensor;
use crate::{Error, Result};

pub const FRMD_MAGIC: &[u8; 4] = b"FRMD";
pub const FRMD_VERSION: u32 = 1;

/// A model plus, optionally, the optimizer state needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: FrmdnModel,
    pub optimizer: Option<Optimizer>,
    pub epochs_done: usize,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "FRMD",
        reason: reason.into(),
    }
}

fn write_array<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
    let bytes = name.as_bytes();
    let len = u16::try_from(bytes.len()).map_err(|_| bad("array name too long"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(bytes)?;
    w.write_all(&[shape.len() as u8])?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let mut text = ckpt.model.config.to_text();
    text.push_str(&format!("epochs_done={}\n", ckpt.epochs_done));
    if let Some(opt) = &ckpt.optimizer {
        text.push_str(&format!(
            "optimizer={}\nlr={}\nclip_norm={}\nopt_steps={}\n",
            opt.config.kind,
            opt.config.lr,
            opt.config.clip_norm,
            opt.steps_taken()
        ));
    }
    w.write_all(FRMD_MAGIC)?;
    w.write_all(&FRMD_VERSION.to_le_bytes())?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    let params = ckpt.model.named_params();
    let count = params.len() * if ckpt.optimizer.is_some() { 3 } else { 1 };
    w.write_all(&(count as u32).to_le_bytes())?;
    for (name, t) in &params {
        write_array(&mut w, name, t.shape(), t.data())?;
    }
    if let Some(opt) = &ckpt.optimizer {
        for ((name, _), (m, v)) in params.iter().zip(opt.moments()) {
            write_array(&mut w, &format!("opt.m.{name}"), &[m.len()], m)?;
            write_array(&mut w, &format!("opt.v.{name}"), &[v.len()], v)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| bad(format!("truncated {what}")))?;
    Ok(b)
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    if &take::<4, _>(&mut r, "magic")? != FRMD_MAGIC {
        return Err(bad("wrong magic"));
    }
    let version = u32::from_le_bytes(take(&mut r, "version")?);
    if version != FRMD_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let text_len = u32::from_le_bytes(take(&mut r, "config length")?) as usize;
    let mut text = vec![0u8; text_len];
    r.read_exact(&mut text).map_err(|_| bad("truncated config"))?;
    let text = String::from_utf8(text).map_err(|_| bad("config is not UTF-8"))?;

    let mut config = ModelConfig::default();
    let mut epochs_done = 0;
    let mut opt_cfg: Option<OptimizerConfig> = None;
    let mut opt_steps = 0u64;
    for (k, v) in parse_kv_lines(&text)? {
        if config.set(&k, &v)? {
            continue;
        }
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad value for {k}")));
        match k.as_str() {
            "epochs_done" => epochs_done = v.parse().map_err(|_| bad("bad epochs_done"))?,
            "optimizer" => opt_cfg.get_or_insert_with(OptimizerConfig::default).kind = v.parse()?,
            "lr" => opt_cfg.get_or_insert_with(OptimizerConfig::default).lr = num(&v)?,
            "clip_norm" => opt_cfg.get_or_insert_with(OptimizerConfig::default).clip_norm = num(&v)?,
            "opt_steps" => opt_steps = v.parse().map_err(|_| bad("bad opt_steps"))?,
            _ => return Err(bad(format!("unknown config key '{k}'"))),
        }
    }
    config.validate()?;

    let count = u32::from_le_bytes(take(&mut r, "array count")?) as usize;
    let mut arrays: HashMap<String, Tensor> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut r, "name length")?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let rank = take::<1, _>(&mut r, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut r, "dims")?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(|_| bad(format!("truncated data for {name}")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let t = Tensor::new(shape, data)?;
        if arrays.insert(name.clone(), t).is_some() {
            return Err(bad(format!("duplicate array '{name}'")));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }

    let mut model = FrmdnModel::new(config, 0)?;
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut params = Vec::with_capacity(names.len());
    for n in &names {
        let t = arrays.remove(n).ok_or_else(|| bad(format!("missing array '{n}'")))?;
        params.push((n.clone(), t));
    }
    model.set_named_params(&params)?;
    let optimizer = match opt_cfg {
        Some(cfg) => {
            let mut first = Vec::with_capacity(names.len());
            let mut second = Vec::with_capacity(names.len());
            for n in &names {
                let m = arrays.remove(&format!("opt.m.{n}")).ok_or_else(|| bad(format!("missing moments for '{n}'")))?;
                let v = arrays.remove(&format!("opt.v.{n}")).ok_or_else(|| bad(format!("missing moments for '{n}'")))?;
                first.push(m.into_vec());
                second.push(v.into_vec());
            }
            Some(Optimizer::from_parts(cfg, opt_steps, first, second)?)
        }
        None => None,
    };
    if let Some(extra) = arrays.keys().next() {
        return Err(bad(format!("unexpected array '{extra}'")));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        epochs_done,
    })
}

pub fn save_checkpoint_file(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    save_checkpoint(BufWriter::new(File::create(path)?), ckpt)
}

pub fn load_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(BufReader::new(File::open(path)?))
}
