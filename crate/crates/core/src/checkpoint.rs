//! Checkpoints: one JSON document holding config, parameters, optimizer
//! moments, epoch counter and shuffle RNG position.
//!
//! Real arrays are written as JSON numbers with 17 significant digits, which
//! round-trips every `f64` exactly. Reloading a checkpoint and continuing
//! training is bitwise identical to never having stopped.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::bridge_tree::TopologyKind;
use crate::config::RunConfig;
use crate::data::fmt17;
use crate::error::{Error, Result};
use crate::model::BridgeNet;
use crate::neuralnet::{AdamConfig, AdamState, DenseLayer};
use crate::train::Trainer;

pub const FORMAT_VERSION: &str = "1";

fn ser_f64s<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for &v in values {
        if !v.is_finite() {
            return Err(serde::ser::Error::custom(format!("non-finite value {v}")));
        }
        let raw = RawValue::from_string(fmt17(v)).map_err(serde::ser::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySummary {
    pub kind: TopologyKind,
    pub branching: usize,
    pub depth: usize,
    pub leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(serialize_with = "ser_f64s")]
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamRecord {
    pub step: u64,
    pub config: AdamConfig,
    #[serde(serialize_with = "ser_f64s")]
    pub m: Vec<f64>,
    #[serde(serialize_with = "ser_f64s")]
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub backbone: AdamRecord,
    pub head: AdamRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngRecord {
    /// ChaCha8 key, hex encoded.
    pub seed: String,
    pub stream: u64,
    /// Position in the keystream, decimal (exceeds 64 bits).
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: String,
    pub config: RunConfig,
    pub topology: TopologySummary,
    pub input_dim: usize,
    pub tensors: Vec<Tensor>,
    pub optimizer: OptimizerRecord,
    pub epoch: usize,
    pub rng: RngRecord,
}

fn layer_tensors(prefix: &str, layer: &DenseLayer<f64>, out: &mut Vec<Tensor>) {
    out.push(Tensor {
        name: format!("{prefix}.weight"),
        shape: vec![layer.output_dim, layer.input_dim],
        data: layer.weights.clone(),
    });
    out.push(Tensor {
        name: format!("{prefix}.bias"),
        shape: vec![layer.output_dim],
        data: layer.bias.clone(),
    });
}

fn adam_record(state: &AdamState<f64>) -> AdamRecord {
    AdamRecord {
        step: state.step,
        config: state.config,
        m: state.m.clone(),
        v: state.v.clone(),
    }
}

fn adam_state(rec: AdamRecord, expected: usize) -> Result<AdamState<f64>> {
    if rec.m.len() != expected || rec.v.len() != expected {
        return Err(Error::Checkpoint(format!(
            "optimizer moments have length {}/{}, expected {expected}",
            rec.m.len(),
            rec.v.len()
        )));
    }
    Ok(AdamState {
        config: rec.config,
        m: rec.m,
        v: rec.v,
        step: rec.step,
    })
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer<f64>) -> Self {
        let model = &trainer.model;
        let topo = model.topology();
        let mut tensors = vec![
            Tensor {
                name: "input.shift".into(),
                shape: vec![model.input_dim()],
                data: model.input_shift.clone(),
            },
            Tensor {
                name: "input.scale".into(),
                shape: vec![model.input_dim()],
                data: model.input_scale.clone(),
            },
        ];
        for (k, layer) in model.backbone.layers.iter().enumerate() {
            layer_tensors(&format!("backbone.{k}"), layer, &mut tensors);
        }
        layer_tensors("head.gate", &model.head.gate, &mut tensors);
        layer_tensors("head.regress", &model.head.regress, &mut tensors);

        let seed: String = trainer.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Checkpoint {
            version: FORMAT_VERSION.into(),
            config: trainer.config.clone(),
            topology: TopologySummary {
                kind: topo.kind(),
                branching: topo.branching(),
                depth: topo.depth(),
                leaves: topo.leaf_count(),
            },
            input_dim: model.input_dim(),
            tensors,
            optimizer: OptimizerRecord {
                backbone: adam_record(&trainer.adam_backbone),
                head: adam_record(&trainer.adam_head),
            },
            epoch: trainer.epoch,
            rng: RngRecord {
                seed,
                stream: trainer.rng.get_stream(),
                word_pos: trainer.rng.get_word_pos().to_string(),
            },
        }
    }

    pub fn into_trainer(self) -> Result<Trainer<f64>> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version '{}'",
                self.version
            )));
        }
        let spec = self.config.model_spec()?;
        // Parameters are overwritten below; the init stream is irrelevant.
        let mut model = BridgeNet::<f64>::new(spec, self.input_dim, &mut ChaCha8Rng::seed_from_u64(0))?;
        let topo = model.topology();
        let summary = TopologySummary {
            kind: topo.kind(),
            branching: topo.branching(),
            depth: topo.depth(),
            leaves: topo.leaf_count(),
        };
        if summary != self.topology {
            return Err(Error::Checkpoint(format!(
                "topology {:?} does not match config ({summary:?})",
                self.topology
            )));
        }

        let mut tensors = self.tensors.into_iter();
        let mut next = |name: &str, shape: Vec<usize>| -> Result<Vec<f64>> {
            let t = tensors
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            let len: usize = shape.iter().product();
            if t.name != name || t.shape != shape || t.data.len() != len {
                return Err(Error::Checkpoint(format!(
                    "expected tensor {name} {shape:?}, found {} {:?} with {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            Ok(t.data)
        };
        let d = self.input_dim;
        model.input_shift = next("input.shift", vec![d])?;
        model.input_scale = next("input.scale", vec![d])?;
        let mut load_layer = |prefix: String, layer: &mut DenseLayer<f64>| -> Result<()> {
            layer.weights = next(&format!("{prefix}.weight"), vec![layer.output_dim, layer.input_dim])?;
            layer.bias = next(&format!("{prefix}.bias"), vec![layer.output_dim])?;
            Ok(())
        };
        for (k, layer) in model.backbone.layers.iter_mut().enumerate() {
            load_layer(format!("backbone.{k}"), layer)?;
        }
        load_layer("head.gate".into(), &mut model.head.gate)?;
        load_layer("head.regress".into(), &mut model.head.regress)?;
        if let Some(extra) = tensors.next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {}", extra.name)));
        }

        let seed_bytes = (0..self.rng.seed.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(self.rng.seed.get(i..i + 2).unwrap_or(""), 16))
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|e| Error::Checkpoint(format!("bad rng seed: {e}")))?;
        let seed: [u8; 32] = seed_bytes
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let word_pos: u128 = self
            .rng
            .word_pos
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad rng word_pos: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.rng.stream);
        rng.set_word_pos(word_pos);

        let adam_backbone = adam_state(self.optimizer.backbone, model.backbone.param_count())?;
        let adam_head = adam_state(self.optimizer.head, model.head.param_count())?;
        Ok(Trainer {
            config: self.config,
            model,
            adam_backbone,
            adam_head,
            rng,
            epoch: self.epoch,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    #[test]
    fn round_trip_preserves_everything() {
        let d = generate_synthetic::<f64>(SyntheticSpec {
            n: 40,
            feature_dim: 3,
            ..Default::default()
        })
        .unwrap();
        let cfg = RunConfig {
            depth: 2,
            hidden_widths: vec![5],
            feature_dim: 4,
            batch_size: 8,
            lr_head: 1e-2,
            lr_backbone: 1e-2,
            ..RunConfig::default()
        };
        let mut tr = Trainer::new(&cfg, &d).unwrap();
        tr.train_epoch(&d).unwrap();
        let ck = Checkpoint::from_trainer(&tr);
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        let restored = back.into_trainer().unwrap();
        assert_eq!(restored.model, tr.model);
        assert_eq!(restored.adam_head, tr.adam_head);
        assert_eq!(restored.rng, tr.rng);
        assert_eq!(restored.epoch, 1);
    }

    #[test]
    fn arrays_use_seventeen_digits() {
        let t = Tensor {
            name: "x".into(),
            shape: vec![2],
            data: vec![0.1, -2.5e-7],
        };
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("-2.5000000000000002e-7") || s.contains("-2.4999999999999999e-7"), "{s}");
    }

    #[test]
    fn rejects_other_versions() {
        let d = generate_synthetic::<f64>(SyntheticSpec {
            n: 10,
            feature_dim: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = RunConfig {
            depth: 2,
            hidden_widths: vec![],
            feature_dim: 2,
            ..RunConfig::default()
        };
        let mut ck = Checkpoint::from_trainer(&Trainer::new(&cfg, &d).unwrap());
        ck.version = "2".into();
        assert!(matches!(ck.into_trainer(), Err(Error::Checkpoint(_))));
    }
}
