use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::eprop::{ReadoutSource, TraceForm};
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::neurons::{NeuronKind, NeuronTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Smnist,
    Psmnist,
    Shd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Eprop,
    Bptt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Cosine,
    Step {
        #[serde(default = "default_every")]
        every: usize,
        #[serde(default = "default_factor")]
        factor: f64,
    },
    Constant,
}

fn default_every() -> usize {
    15
}

fn default_factor() -> f64 {
    0.8
}

/// A training run. Field names double as JSON keys and override keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    /// Input width, hidden widths, class count.
    pub arch: Vec<usize>,
    pub recurrent: bool,
    pub neuron: NeuronTag,
    pub reset: bool,
    pub frame_size: usize,
    pub v_th: f64,
    pub gamma: f64,
    pub a_d: f64,
    pub a_s: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lif_alpha: f64,
    pub c1: f64,
    pub c2: f64,
    /// Fixed `(β1, β2)` of the modified and adaptive variants; `null` makes
    /// them use the sigmoid couplings too. The vanilla variant always does.
    pub betas: Option<(f64, f64)>,
    pub optimizer: OptimizerKind,
    pub lr0: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub trainer: TrainerKind,
    pub readout_kappa: f64,
    pub readout: ReadoutSource,
    pub trace_form: TraceForm,
    pub update_per_step: bool,
    /// Global gradient-norm clip; `null` disables clipping.
    pub clip_norm: Option<f64>,
    pub train_couplings: bool,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub data_dir: Option<PathBuf>,
    pub permutation_seed: u64,
    pub shd_bins: usize,
    pub shd_clamp: bool,
    pub record_wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Smnist,
            arch: vec![64, 256, 256, 10],
            recurrent: false,
            neuron: NeuronTag::TclifAdaptive,
            reset: true,
            frame_size: 64,
            v_th: 1.0,
            gamma: 0.5,
            a_d: 0.7,
            a_s: 0.8,
            alpha1: 0.9,
            alpha2: 0.9,
            lif_alpha: 0.9,
            c1: 0.0,
            c2: 0.0,
            betas: Some((-0.5, 1.0)),
            optimizer: OptimizerKind::Sgd,
            lr0: 0.08,
            schedule: Schedule::Step {
                every: 15,
                factor: 0.8,
            },
            epochs: 100,
            batch_size: 64,
            seed: 0,
            trainer: TrainerKind::Eprop,
            readout_kappa: 0.9,
            readout: ReadoutSource::Spikes,
            trace_form: TraceForm::Somatic,
            update_per_step: false,
            clip_norm: Some(1.0),
            train_couplings: true,
            train_limit: None,
            test_limit: None,
            data_dir: None,
            permutation_seed: 0,
            shd_bins: 250,
            shd_clamp: false,
            record_wallclock: true,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is plain data")
    }

    /// Applies `key=value`. The value is read as JSON, falling back to a
    /// bare string, so `epochs=3`, `neuron=lif` and `betas=[-0.5,1]` all work.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, raw) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not of the form key=value")))?;
        let key = key.trim();
        let mut doc = serde_json::to_value(&*self)?;
        let obj = doc.as_object_mut().expect("config serialises to an object");
        if !obj.contains_key(key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_owned()));
        obj.insert(key.to_owned(), value);
        let next: Self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.arch.len() < 3 || self.arch.contains(&0) {
            return bad(format!("arch needs input, hidden and output widths, all positive; got {:?}", self.arch));
        }
        if !(self.lr0 > 0.0) {
            return bad(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if let Schedule::Step { every, factor } = self.schedule {
            if every == 0 || !(factor > 0.0 && factor < 1.0) {
                return bad(format!("step schedule needs every ≥ 1 and factor in (0,1), got {every}, {factor}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.readout_kappa) {
            return bad(format!("readout_kappa must lie in [0,1), got {}", self.readout_kappa));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip_norm must be > 0, got {c}"));
            }
        }
        Ok(())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let mut kind = NeuronKind::new(self.neuron);
        kind.reset_enabled = self.reset;
        NetworkSpec {
            widths: self.arch.clone(),
            recurrent: self.recurrent,
            kind,
            v_th: self.v_th,
            gamma: self.gamma,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            a_d: self.a_d,
            a_s: self.a_s,
            lif_alpha: self.lif_alpha,
            c1: self.c1,
            c2: self.c2,
            betas: match self.neuron {
                NeuronTag::TclifModified | NeuronTag::TclifAdaptive => self.betas,
                NeuronTag::TclifVanilla | NeuronTag::Lif => None,
            },
            kappa: self.readout_kappa,
            readout_source: self.readout,
        }
    }
}
