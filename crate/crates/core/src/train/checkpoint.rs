//! "EPT1" checkpoints: magic, u16 version, u32-length config TOML, its SHA-256,
//! epochs done, Adam counters, then per tensor its name, shape, values and both moments.
//! All integers and floats little-endian.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{ReadBytesExt, WriteBytesExt, LE};

use super::{hash_text, AdamState, Result, RunConfig, TrainError};
use crate::model::ModelParams;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"EPT1";
const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub epochs_done: u64,
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<()> {
    let text = ck.config.to_toml();
    w.write_all(MAGIC)?;
    w.write_u16::<LE>(VERSION)?;
    w.write_u32::<LE>(text.len() as u32)?;
    w.write_all(text.as_bytes())?;
    w.write_all(&hash_text(&text))?;
    w.write_u64::<LE>(ck.epochs_done)?;
    let opt = &ck.optimizer;
    w.write_u64::<LE>(opt.step)?;
    for v in [opt.beta1, opt.beta2, opt.eps] {
        w.write_f64::<LE>(v)?;
    }
    w.write_u32::<LE>(ck.params.len() as u32)?;
    for (i, (name, t)) in ck.params.iter().enumerate() {
        w.write_u16::<LE>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(t.shape().len() as u8)?;
        for &d in t.shape() {
            w.write_u32::<LE>(d as u32)?;
        }
        for arr in [t, &opt.m[i], &opt.v[i]] {
            for &v in arr.data() {
                w.write_f64::<LE>(v)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes to a sibling temporary file and renames, so readers never see a partial checkpoint.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, ck)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn bad(message: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(message.into())
}

/// Parses a complete checkpoint; any truncation, trailing data or hash mismatch is an error.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Cursor::new(bytes);
    let trunc = |_| bad("truncated file");
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u16::<LE>().map_err(trunc)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = r.read_u32::<LE>().map_err(trunc)? as usize;
    let mut text = vec![0u8; len.min(bytes.len())];
    r.read_exact(&mut text).map_err(trunc)?;
    if text.len() != len {
        return Err(bad("truncated file"));
    }
    let text = String::from_utf8(text).map_err(|_| bad("config text is not UTF-8"))?;
    let mut stored = [0u8; 32];
    r.read_exact(&mut stored).map_err(trunc)?;
    if stored != hash_text(&text) {
        return Err(bad("config hash mismatch"));
    }
    let config = RunConfig::from_toml(&text).map_err(|e| bad(format!("embedded config: {e}")))?;
    let epochs_done = r.read_u64::<LE>().map_err(trunc)?;
    let step = r.read_u64::<LE>().map_err(trunc)?;
    let beta1 = r.read_f64::<LE>().map_err(trunc)?;
    let beta2 = r.read_f64::<LE>().map_err(trunc)?;
    let eps = r.read_f64::<LE>().map_err(trunc)?;
    let n = r.read_u32::<LE>().map_err(trunc)? as usize;
    let (mut named, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let name_len = r.read_u16::<LE>().map_err(trunc)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(trunc)?;
        let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8"))?;
        let ndim = r.read_u8().map_err(trunc)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LE>().map_err(trunc)? as usize);
        }
        let numel: usize = shape.iter().product();
        let remaining = bytes.len() - r.position() as usize;
        if numel.saturating_mul(24) > remaining {
            return Err(bad("truncated file"));
        }
        let mut read = || -> Result<Tensor> {
            let mut data = vec![0.0; numel];
            r.read_f64_into::<LE>(&mut data).map_err(trunc)?;
            Ok(Tensor::new(shape.clone(), data)?)
        };
        let (p, mm, vv) = (read()?, read()?, read()?);
        named.push((name, p));
        m.push(mm);
        v.push(vv);
    }
    if (r.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes after payload"));
    }
    let params = ModelParams::from_named(named);
    if !params.matches(&config.model) {
        return Err(bad("tensors do not match the embedded model config"));
    }
    Ok(Checkpoint { config, params, optimizer: AdamState { m, v, step, beta1, beta2, eps }, epochs_done })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&fs::read(path)?)
}

/// Loads and rejects a checkpoint written under any other config.
pub fn load_checkpoint_for(path: &Path, expected: &RunConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.config.hash() != expected.hash() {
        return Err(bad(format!("{} was written under a different config", path.display())));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let config = RunConfig { model: ModelConfig::tiny(), ..Default::default() };
        let params = ModelParams::init(&config.model, &mut ChaCha8Rng::seed_from_u64(3));
        let mut optimizer = AdamState::new(&params);
        optimizer.step = 7;
        optimizer.m[0].data_mut()[0] = 0.25;
        Checkpoint { config, params, optimizer, epochs_done: 2 }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &ck).unwrap();
        assert_eq!(&bytes[..4], b"EPT1");
        assert_eq!(read_checkpoint(&bytes).unwrap(), ck);
    }

    #[test]
    fn truncation_and_tampering_are_rejected() {
        let ck = sample();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &ck).unwrap();
        for cut in [3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_checkpoint(&bytes[..cut]), Err(TrainError::Checkpoint(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&extra).is_err());
        let mut tampered = bytes.clone();
        tampered[12] ^= 1;
        assert!(matches!(read_checkpoint(&tampered), Err(TrainError::Checkpoint(m)) if m.contains("hash") || m.contains("UTF")));
        let mut version = bytes;
        version[4] = 9;
        assert!(read_checkpoint(&version).is_err());
    }

    #[test]
    fn different_width_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.ept");
        let ck = sample();
        save_checkpoint(&path, &ck).unwrap();
        assert!(load_checkpoint_for(&path, &ck.config).is_ok());
        let mut other = ck.config.clone();
        other.model.h = 16;
        assert!(matches!(load_checkpoint_for(&path, &other), Err(TrainError::Checkpoint(_))));
    }
}
