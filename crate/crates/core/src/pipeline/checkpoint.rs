//! Checkpoints: every parameter plus the mapper's running mean in a CRVT
//! archive, with the resolved config as its metadata text. The metadata
//! starts with `checkpoint_version = N` so a checkpoint is self-describing.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::tensor_file::{Archive, StoredTensor};
use crate::params::Parameterized;
use crate::rng::seeded;

use super::{Generator, GeneratorConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const VERSION_KEY: &str = "checkpoint_version";
const W_AVG: &str = "mapper/w_avg";
const W_COUNT: &str = "mapper/w_count";

pub fn checkpoint_to_bytes(gen: &Generator) -> Result<Vec<u8>> {
    let mut tensors: Vec<StoredTensor> = gen
        .named_params()
        .into_iter()
        .map(|(name, t)| StoredTensor::from_tensor(name, t))
        .collect();
    tensors.push(StoredTensor::from_tensor(W_AVG, &gen.mapper.w_avg_tensor()));
    tensors.push(StoredTensor::from_tensor(
        W_COUNT,
        &Tensor::vector(&[gen.mapper.w_count as f64]),
    ));
    let metadata = format!(
        "{} = {}\n{}",
        VERSION_KEY,
        CHECKPOINT_VERSION,
        gen.config.to_toml()?
    );
    Ok(Archive {
        tensors,
        metadata: Some(metadata),
    }
    .to_bytes()?)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Generator> {
    let archive = Archive::from_bytes(bytes)?;
    let meta = archive
        .metadata
        .as_deref()
        .ok_or_else(|| Error::Checkpoint("no config metadata".into()))?;
    let mut table: toml::Table = meta
        .parse()
        .map_err(|e| Error::Checkpoint(format!("config metadata: {}", e)))?;
    let version = match table.remove(VERSION_KEY) {
        Some(toml::Value::Integer(v)) => {
            u32::try_from(v).map_err(|_| Error::Checkpoint("bad version".into()))?
        }
        _ => return Err(Error::Checkpoint(format!("metadata lacks {}", VERSION_KEY))),
    };
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let config: GeneratorConfig = table
        .try_into()
        .map_err(|e| Error::Checkpoint(format!("config: {}", e)))?;
    let mut gen = Generator::init_unshaped(&config, &mut seeded(0))?;

    let expected = gen.named_params().len() + 2;
    if archive.tensors.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors for this architecture, found {}",
            expected,
            archive.tensors.len()
        )));
    }
    let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let t = archive
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", name)))?;
        if t.shape != shape {
            return Err(Error::Checkpoint(format!(
                "{} has shape {:?}, expected {:?}",
                name, t.shape, shape
            )));
        }
        Ok(t.data.clone())
    };
    for (name, slot) in gen.named_params_mut() {
        let data = fetch(&name, slot.shape())?;
        *slot = slot.with_values(data)?;
    }
    gen.mapper.w_avg = fetch(W_AVG, &[gen.mapper.w_avg.len()])?;
    let count = fetch(W_COUNT, &[1])?[0];
    if !(count >= 0.0 && count.fract() == 0.0) {
        return Err(Error::Checkpoint(format!("invalid {} {}", W_COUNT, count)));
    }
    gen.mapper.w_count = count as u64;
    Ok(gen)
}

pub fn save_checkpoint(gen: &Generator, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(gen)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Generator> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}
