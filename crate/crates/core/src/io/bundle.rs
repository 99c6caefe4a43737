//! Named-tensor bundles and model checkpoints.
//!
//! Layout, integers little-endian: `"FECB"`, `u32` version (1), `u32` length
//! and UTF-8 bytes of a JSON header, `u32` entry count, then per entry a
//! `u32` name length, the UTF-8 name and one tensor container.

use std::path::Path;

use crate::decoder::MemoryBank;
use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::io::container::{decode_tensor, encode_tensor};
use crate::pipeline::model::FecaModel;
use crate::tensor::{ParamSet, Tensor};

pub const BUNDLE_MAGIC: &[u8; 4] = b"FECB";
const PARAM_PREFIX: &str = "param/";
const BANK_PREFIX: &str = "bank/";

pub fn encode_bundle(header: &str, entries: &[(&str, &Tensor<f32>)]) -> Vec<u8> {
    let mut out = BUNDLE_MAGIC.to_vec();
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend(encode_tensor(t));
    }
    out
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let s = bytes
        .get(*pos..*pos + 4)
        .ok_or_else(|| Error::Format(format!("truncated bundle at byte {}", *pos)))?;
    *pos += 4;
    Ok(u32::from_le_bytes(s.try_into().expect("4 bytes")))
}

fn read_str(bytes: &[u8], pos: &mut usize) -> Result<String> {
    let n = read_u32(bytes, pos)? as usize;
    let s = bytes.get(*pos..*pos + n).ok_or_else(|| {
        Error::Format(format!(
            "truncated bundle string: expected {n} bytes, found {}",
            bytes.len().saturating_sub(*pos)
        ))
    })?;
    *pos += n;
    String::from_utf8(s.to_vec()).map_err(|_| Error::Format("bundle string is not UTF-8".into()))
}

pub fn decode_bundle(bytes: &[u8]) -> Result<(String, Vec<(String, Tensor<f32>)>)> {
    if bytes.get(..4) != Some(BUNDLE_MAGIC) {
        return Err(Error::Format("bad magic, not a bundle".into()));
    }
    let mut pos = 4;
    let version = read_u32(bytes, &mut pos)?;
    if version != 1 {
        return Err(Error::Format(format!("unsupported bundle version {version}")));
    }
    let header = read_str(bytes, &mut pos)?;
    let count = read_u32(bytes, &mut pos)?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name = read_str(bytes, &mut pos)?;
        let (t, used) = decode_tensor(&bytes[pos..])?;
        pos += used;
        entries.push((name, t));
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after bundle", bytes.len() - pos)));
    }
    Ok((header, entries))
}

/// Trained state: configuration, parameters and memory bank.
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: FecaModel,
    pub bank: MemoryBank,
}

pub fn encode_checkpoint(config: &RunConfig, params: &ParamSet<f32>, bank: &MemoryBank) -> Vec<u8> {
    let names: Vec<String> = params
        .iter()
        .map(|(_, n, _)| format!("{PARAM_PREFIX}{n}"))
        .chain(bank.iter().map(|(q, _)| format!("{BANK_PREFIX}{q}")))
        .collect();
    let tensors = params.values().iter().chain(bank.iter().map(|(_, t)| t));
    let entries: Vec<(&str, &Tensor<f32>)> = names.iter().map(String::as_str).zip(tensors).collect();
    encode_bundle(&config.to_json(), &entries)
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &RunConfig, model: &FecaModel, bank: &MemoryBank) -> Result<()> {
    crate::io::write_file(path, encode_checkpoint(config, &model.params, bank))?;
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let (header, entries) = decode_bundle(bytes)?;
    let config = RunConfig::from_json(&header)?;
    config.validate()?;
    let mut params = ParamSet::new();
    let mut bank = MemoryBank::new();
    for (name, t) in entries {
        if let Some(p) = name.strip_prefix(PARAM_PREFIX) {
            params.add(p, t);
        } else if let Some(q) = name.strip_prefix(BANK_PREFIX) {
            bank.insert(q, t);
        } else {
            return Err(Error::Format(format!("unknown checkpoint entry {name:?}")));
        }
    }
    let model = FecaModel::with_params(config.model_config(), params)?;
    Ok(Checkpoint { config, model, bank })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&crate::io::read_file(path)?)
}
