//! Training checkpoints: a text header, a blank line, then the tensor
//! container holding model parameters, optimizer accumulators and the best
//! validated snapshot.
//!
//! ```text
//! ircn-train-checkpoint 1
//! config_hash=<fnv1a hex>
//! epochs_done=<n>
//! ...
//! model.<key>=<value>
//!
//! <tensor container>
//! ```

use std::path::Path;

use super::config::TrainConfig;
use super::trainer::{Models, Trainer};
use crate::error::{Error, Result};
use crate::kv::{self, KeyValue};
use crate::nn::checkpoint::{self, NamedTensors};
use crate::nn::{RmsProp, Tensor};
use crate::pifu::ModelConfig;

pub const HEADER_MAGIC: &str = "ircn-train-checkpoint 1";

/// Fingerprint of everything that shapes the training trajectory.
pub fn config_hash(config: &TrainConfig) -> u64 {
    let mut pairs = kv::prefixed("train", config);
    pairs.extend(kv::prefixed("model", &config.model));
    pairs.extend(kv::prefixed("sampler", &config.sampler));
    kv::fingerprint(&kv::to_text(&pairs))
}

fn opt_tensors(prefix: &str, opt: &RmsProp<f32>, out: &mut NamedTensors) {
    for (n, t) in opt.state() {
        out.push((format!("{prefix}{n}"), t.clone()));
    }
}

fn restore_opt(prefix: &str, opt: &mut RmsProp<f32>, tensors: &[(String, Tensor<f32>)]) {
    for (n, t) in tensors {
        if let Some(rest) = n.strip_prefix(prefix) {
            opt.restore(rest, t.clone());
        }
    }
}

fn encode(header: &[(String, String)], tensors: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = format!("{HEADER_MAGIC}\n{}\n", kv::to_text(header)).into_bytes();
    out.extend(checkpoint::encode(tensors));
    out
}

/// Splits a checkpoint into header pairs and tensors.
fn decode(buf: &[u8], path: &Path) -> Result<(Vec<(String, String)>, NamedTensors)> {
    let split = buf
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::format(path, "missing header terminator"))?;
    let header = std::str::from_utf8(&buf[..split]).map_err(|_| Error::format(path, "header is not UTF-8"))?;
    let mut lines = header.splitn(2, '\n');
    if lines.next() != Some(HEADER_MAGIC) {
        return Err(Error::format(path, "not a training checkpoint"));
    }
    let pairs = kv::parse_lines(lines.next().unwrap_or("")).map_err(|e| Error::format(path, e.to_string()))?;
    let tensors = checkpoint::decode(&buf[split + 2..], path)?;
    Ok((pairs, tensors))
}

fn read(path: &Path) -> Result<(Vec<(String, String)>, NamedTensors)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf, path)
}

fn get<'a>(pairs: &'a [(String, String)], key: &str, path: &Path) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::format(path, format!("header lacks {key}")))
}

fn model_config(pairs: &[(String, String)], path: &Path) -> Result<ModelConfig> {
    let mut config = ModelConfig::default();
    for (k, v) in pairs {
        if let Some(key) = k.strip_prefix("model.") {
            config.set(key, v).map_err(|e| Error::format(path, e.to_string()))?;
        }
    }
    Ok(config)
}

fn sub_tensors(tensors: &[(String, Tensor<f32>)], prefix: &str) -> NamedTensors {
    tensors
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(prefix).map(|r| (r.to_string(), t.clone())))
        .collect()
}

impl Trainer {
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut header = vec![
            ("config_hash".to_string(), format!("{:016x}", config_hash(&self.config))),
            ("epochs_done".into(), self.epochs_done.to_string()),
            ("stopped".into(), (self.stopped as u8).to_string()),
            ("stale".into(), self.stale.to_string()),
            (
                "best_chamfer".into(),
                self.best.as_ref().map_or_else(|| "-".into(), |(c, _)| format!("{:016x}", c.to_bits())),
            ),
        ];
        header.extend(kv::prefixed("model", &self.models.config));
        let mut tensors = self.models.to_tensors();
        opt_tensors("opt.coarse.", &self.opt_coarse, &mut tensors);
        opt_tensors("opt.fine.", &self.opt_fine, &mut tensors);
        opt_tensors("opt.normal.", &self.opt_normal, &mut tensors);
        if let Some((_, best)) = &self.best {
            for (n, t) in best.to_tensors() {
                tensors.push((format!("best.{n}"), t));
            }
        }
        encode(&header, &tensors)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Restores a trainer; `config` must match the one that wrote `path`.
    pub fn resume(config: TrainConfig, path: &Path) -> Result<Self> {
        let (pairs, tensors) = read(path)?;
        let expected = format!("{:016x}", config_hash(&config));
        let found = get(&pairs, "config_hash", path)?;
        if found != expected {
            return Err(Error::Config(format!(
                "checkpoint {} was written by a different configuration ({found} vs {expected})",
                path.display()
            )));
        }
        let parse = |key: &str| -> Result<usize> { kv::parse_value(key, get(&pairs, key, path)?) };
        let models = Models::from_tensors(&config.model, &tensors)?;
        let mut trainer = Trainer::with_models(config, models)?;
        trainer.epochs_done = parse("epochs_done")?;
        trainer.stopped = parse("stopped")? != 0;
        trainer.stale = parse("stale")?;
        if trainer.epochs_done > trainer.plan.len() {
            return Err(Error::format(path, "epoch counter beyond the training plan"));
        }
        restore_opt("opt.coarse.", &mut trainer.opt_coarse, &tensors);
        restore_opt("opt.fine.", &mut trainer.opt_fine, &tensors);
        restore_opt("opt.normal.", &mut trainer.opt_normal, &tensors);
        let best = get(&pairs, "best_chamfer", path)?;
        if best != "-" {
            let bits = u64::from_str_radix(best, 16).map_err(|_| Error::format(path, "bad best_chamfer"))?;
            let snapshot = Models::from_tensors(&trainer.config.model, &sub_tensors(&tensors, "best."))?;
            trainer.best = Some((f64::from_bits(bits), snapshot));
        }
        Ok(trainer)
    }
}

/// Models for inference: the best validated snapshot when present.
pub fn load_models(path: &Path) -> Result<Models> {
    let (pairs, tensors) = read(path)?;
    let config = model_config(&pairs, path)?;
    let best = sub_tensors(&tensors, "best.");
    if best.is_empty() {
        Models::from_tensors(&config, &tensors)
    } else {
        Models::from_tensors(&config, &best)
    }
}

/// Writes models alone (no optimizer state) in the checkpoint format.
pub fn save_models(models: &Models, path: &Path) -> Result<()> {
    let header = kv::prefixed("model", &models.config);
    std::fs::write(path, encode(&header, &models.to_tensors())).map_err(|e| Error::io(path, e))
}
