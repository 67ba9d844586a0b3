//! Versioned binary checkpoints.
//!
//! ```text
//! magic    8 bytes  "MOFCKPT\0"
//! version  u32 LE
//! meta     u32 LE length + UTF-8 TOML (network config, optional trainer state)
//! count    u32 LE number of tensors
//! tensor*  u32 LE name length, name bytes, u32 LE rank, rank x u64 LE dims,
//!          prod(dims) x f32 LE values (row-major)
//! ```
//!
//! Trainer state adds the Adam moments as tensors named `adam.m.<param>` and
//! `adam.v.<param>`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{EmbeddingConfig, FusionNet, NetConfig, ParamStore};
use super::tape::Mat;
use super::train::{Adam, Plateau, TrainConfig, Trainer};
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MOFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerMeta {
    config: TrainConfig,
    step: usize,
    lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    plateau_best: Option<f64>,
    plateau_stale: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    smoothed_loss: Option<f64>,
    adam_t: u64,
    /// Decimal word position of the batch-sampling stream.
    rng_word_pos: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    embedding: EmbeddingConfig,
    network: NetConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    trainer: Option<TrainerMeta>,
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

fn write_tensor(w: &mut impl Write, name: &str, m: &Mat) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&2u32.to_le_bytes())?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| format_err(format!("truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| format_err(format!("truncated: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(format_err("truncated"));
    }
    Ok(buf)
}

fn read_tensor(r: &mut impl Read) -> Result<(String, Mat)> {
    let len = read_u32(r)? as usize;
    let name = String::from_utf8(read_bytes(r, len)?).map_err(|_| format_err("tensor name is not UTF-8"))?;
    let rank = read_u32(r)?;
    if rank != 2 {
        return Err(format_err(format!("tensor {name} has rank {rank}, expected 2")));
    }
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let count = rows.checked_mul(cols).ok_or_else(|| format_err("tensor too large"))?;
    let raw = read_bytes(r, count * 4)?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let m = Mat::from_shape_vec((rows, cols), values).map_err(|e| format_err(e.to_string()))?;
    Ok((name, m))
}

fn write_file(path: &Path, meta: &Meta, tensors: &[(String, &Mat)]) -> Result<()> {
    let text = toml::to_string(meta).map_err(|e| format_err(e.to_string()))?;
    let ctx = || format!("writing checkpoint {}", path.display());
    let mut w = BufWriter::new(File::create(path).io_context(ctx)?);
    let mut body = || -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, m) in tensors {
            write_tensor(&mut w, name, m)?;
        }
        w.flush()
    };
    body().io_context(ctx)
}

fn read_file(path: &Path) -> Result<(Meta, Vec<(String, Mat)>)> {
    let f = File::open(path).io_context(|| format!("opening checkpoint {}", path.display()))?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| format_err("file too short"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format_err("bad magic bytes"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            what: "checkpoint",
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = read_u32(&mut r)? as usize;
    let text = String::from_utf8(read_bytes(&mut r, len)?).map_err(|_| format_err("metadata is not UTF-8"))?;
    let meta: Meta = toml::from_str(&text).map_err(|e| format_err(e.to_string()))?;
    let count = read_u32(&mut r)? as usize;
    let tensors = (0..count).map(|_| read_tensor(&mut r)).collect::<Result<Vec<_>>>()?;
    Ok((meta, tensors))
}

fn param_tensors(net: &FusionNet) -> Vec<(String, &Mat)> {
    net.params.names().iter().cloned().zip(net.params.values()).collect()
}

pub fn save_network(path: &Path, net: &FusionNet) -> Result<()> {
    let meta = Meta {
        embedding: net.emb.clone(),
        network: net.cfg.clone(),
        trainer: None,
    };
    write_file(path, &meta, &param_tensors(net))
}

pub fn save_trainer(path: &Path, trainer: &Trainer) -> Result<()> {
    let net = &trainer.net;
    let meta = Meta {
        embedding: net.emb.clone(),
        network: net.cfg.clone(),
        trainer: Some(TrainerMeta {
            config: trainer.cfg.clone(),
            step: trainer.step,
            lr: trainer.lr,
            plateau_best: trainer.plateau.best,
            plateau_stale: trainer.plateau.stale,
            smoothed_loss: trainer.smoothed_loss,
            adam_t: trainer.adam.t,
            rng_word_pos: trainer.rng.get_word_pos().to_string(),
        }),
    };
    let mut tensors = param_tensors(net);
    let names = net.params.names();
    let m_names: Vec<String> = names.iter().map(|n| format!("adam.m.{n}")).collect();
    let v_names: Vec<String> = names.iter().map(|n| format!("adam.v.{n}")).collect();
    tensors.extend(m_names.into_iter().zip(trainer.adam.m.iter()));
    tensors.extend(v_names.into_iter().zip(trainer.adam.v.iter()));
    write_file(path, &meta, &tensors)
}

fn split_params(meta: &Meta, tensors: Vec<(String, Mat)>) -> Result<(FusionNet, Vec<(String, Mat)>)> {
    let template = FusionNet::new(meta.embedding.clone(), meta.network.clone(), 0)?;
    let n = template.params.len();
    if tensors.len() < n {
        return Err(format_err("missing parameter tensors"));
    }
    let mut it = tensors.into_iter();
    let mut store = ParamStore::default();
    for _ in 0..n {
        let (name, m) = it.next().expect("counted");
        store.add(name, m);
    }
    let net = FusionNet::with_params(meta.embedding.clone(), meta.network.clone(), store)?;
    Ok((net, it.collect()))
}

pub fn load_network(path: &Path) -> Result<FusionNet> {
    let (meta, tensors) = read_file(path)?;
    Ok(split_params(&meta, tensors)?.0)
}

/// Restore a trainer so that training continues from the saved step.
pub fn load_trainer(path: &Path) -> Result<Trainer> {
    let (meta, tensors) = read_file(path)?;
    let state = meta
        .trainer
        .clone()
        .ok_or_else(|| format_err("checkpoint carries no trainer state"))?;
    let (net, rest) = split_params(&meta, tensors)?;
    let n = net.params.len();
    if rest.len() != 2 * n {
        return Err(format_err("optimizer moments missing"));
    }
    let mut adam = Adam::new(net.params.values());
    for (k, (name, m)) in rest.into_iter().enumerate() {
        let (slot, idx, prefix) = if k < n {
            (&mut adam.m, k, "adam.m.")
        } else {
            (&mut adam.v, k - n, "adam.v.")
        };
        if name != format!("{prefix}{}", net.params.names()[idx]) || m.dim() != slot[idx].dim() {
            return Err(format_err(format!("unexpected optimizer tensor {name}")));
        }
        slot[idx] = m;
    }
    adam.t = state.adam_t;
    let mut rng = ChaCha8Rng::seed_from_u64(state.config.seed);
    rng.set_word_pos(state.rng_word_pos.parse().map_err(|_| format_err("bad rng position"))?);
    let mut plateau = Plateau::new(state.config.plateau_patience, state.config.plateau_factor);
    plateau.best = state.plateau_best;
    plateau.stale = state.plateau_stale;
    Ok(Trainer {
        net,
        cfg: state.config,
        adam,
        plateau,
        smoothed_loss: state.smoothed_loss,
        lr: state.lr,
        step: state.step,
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::BASE_DIM;

    fn small() -> FusionNet {
        let emb = EmbeddingConfig {
            model_dim: 8,
            input_dim: BASE_DIM,
            max_time: 4,
            max_traj_index: 4,
            num_sensors: 2,
        };
        let cfg = NetConfig {
            encoder_layers: 1,
            decoder_layers: 1,
            attention_heads: 2,
            ffn_dim: 8,
            num_queries: 2,
            ..NetConfig::default()
        };
        FusionNet::new(emb, cfg, 9).unwrap()
    }

    #[test]
    fn network_round_trip_rounds_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = small();
        save_network(&path, &net).unwrap();
        let back = load_network(&path).unwrap();
        assert_eq!(back.params.names(), net.params.names());
        for (a, b) in back.params.values().iter().zip(net.params.values()) {
            let rounded = b.mapv(|v| v as f32 as f64);
            assert_eq!(a, &rounded);
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_network(&path, &small()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_network(&path) {
            Err(Error::Version {
                found: 7, expected: 1, ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trainer_state_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.ckpt");
        let mut t = Trainer::new(
            small(),
            TrainConfig {
                seed: 3,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        t.step = 17;
        t.lr = 0.25;
        t.adam.t = 17;
        t.plateau.best = Some(1.5);
        t.smoothed_loss = Some(1.75);
        let _: u64 = rand::Rng::random(&mut t.rng);
        save_trainer(&path, &t).unwrap();
        let back = load_trainer(&path).unwrap();
        assert_eq!((back.step, back.lr, back.adam.t), (17, 0.25, 17));
        assert_eq!(back.plateau, t.plateau);
        assert_eq!(back.smoothed_loss, Some(1.75));
        assert_eq!(back.rng.get_word_pos(), t.rng.get_word_pos());
        assert!(load_network(&path).is_ok());
    }
}
