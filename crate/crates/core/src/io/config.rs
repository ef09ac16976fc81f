//! Run configuration as a JSON object.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, FieldError, Result};
use crate::model::ModelConfig;
use crate::train::{LrSchedule, TrainOptions};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub block_size: usize,
    pub ratio: f64,
    pub channels: usize,
    pub iterations: usize,
    pub ffb_expansion: usize,
    /// Disables the inertial attention blocks when false.
    pub use_isca: bool,
    pub epochs: usize,
    pub warmup_epochs: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub patches_per_epoch: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        RunConfig {
            block_size: m.block_size,
            ratio: m.ratio,
            channels: m.channels,
            iterations: m.iterations,
            ffb_expansion: m.ffb_expansion,
            use_isca: m.use_isca,
            epochs: 10,
            warmup_epochs: 3.0,
            lr_max: 5e-4,
            lr_min: 5e-5,
            batch_size: 16,
            patch_size: 96,
            patches_per_epoch: 500,
            augment: true,
            seed: 0,
        }
    }
}

const FIELDS: [&str; 15] = [
    "block_size",
    "ratio",
    "channels",
    "iterations",
    "ffb_expansion",
    "use_isca",
    "epochs",
    "warmup_epochs",
    "lr_max",
    "lr_min",
    "batch_size",
    "patch_size",
    "patches_per_epoch",
    "augment",
    "seed",
];

impl RunConfig {
    /// Parses a JSON object; absent keys keep their defaults. Unknown keys,
    /// mistyped values and out-of-range values are all collected and
    /// reported together by field name.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::config("config", format!("not valid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(Error::config("config", "expected a JSON object"));
        };
        Self::from_map(&map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serialises")
    }

    fn from_map(map: &Map<String, Value>) -> Result<Self> {
        let mut errors: Vec<FieldError> = map
            .keys()
            .filter(|k| !FIELDS.contains(&k.as_str()))
            .map(|k| FieldError {
                field: k.clone(),
                message: "unknown key".into(),
            })
            .collect();
        let mut cfg = RunConfig::default();
        fn take<V: DeserializeOwned>(
            map: &Map<String, Value>,
            errors: &mut Vec<FieldError>,
            key: &str,
            slot: &mut V,
        ) {
            if let Some(v) = map.get(key) {
                match serde_json::from_value(v.clone()) {
                    Ok(parsed) => *slot = parsed,
                    Err(e) => errors.push(FieldError {
                        field: key.into(),
                        message: format!("invalid value {v}: {e}"),
                    }),
                }
            }
        }
        let e = &mut errors;
        take(map, e, "block_size", &mut cfg.block_size);
        take(map, e, "ratio", &mut cfg.ratio);
        take(map, e, "channels", &mut cfg.channels);
        take(map, e, "iterations", &mut cfg.iterations);
        take(map, e, "ffb_expansion", &mut cfg.ffb_expansion);
        take(map, e, "use_isca", &mut cfg.use_isca);
        take(map, e, "epochs", &mut cfg.epochs);
        take(map, e, "warmup_epochs", &mut cfg.warmup_epochs);
        take(map, e, "lr_max", &mut cfg.lr_max);
        take(map, e, "lr_min", &mut cfg.lr_min);
        take(map, e, "batch_size", &mut cfg.batch_size);
        take(map, e, "patch_size", &mut cfg.patch_size);
        take(map, e, "patches_per_epoch", &mut cfg.patches_per_epoch);
        take(map, e, "augment", &mut cfg.augment);
        take(map, e, "seed", &mut cfg.seed);
        if let Err(Error::Config(more)) = cfg.validate() {
            // a field that failed to parse still holds its default; report it once
            let failed: Vec<String> = errors.iter().map(|f| f.field.clone()).collect();
            errors.extend(more.into_iter().filter(|m| !failed.contains(&m.field)));
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Range checks on every field.
    pub fn validate(&self) -> Result<()> {
        let mut errors = match self.model().validate() {
            Err(Error::Config(e)) => e,
            _ => Vec::new(),
        };
        let mut bad = |field: &str, message: &str| {
            errors.push(FieldError {
                field: field.into(),
                message: message.into(),
            })
        };
        if self.epochs == 0 {
            bad("epochs", "must be positive");
        }
        if !(self.warmup_epochs >= 0.0 && self.warmup_epochs <= self.epochs as f64) {
            bad("warmup_epochs", "must lie in [0, epochs]");
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            bad("lr_max", "must be positive");
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            bad("lr_min", "must lie in [0, lr_max]");
        }
        if self.batch_size == 0 {
            bad("batch_size", "must be positive");
        }
        if self.patch_size == 0 {
            bad("patch_size", "must be positive");
        } else if self.block_size > 0 && !self.patch_size.is_multiple_of(self.block_size) {
            bad("patch_size", "must be a multiple of block_size");
        }
        if self.patches_per_epoch == 0 {
            bad("patches_per_epoch", "must be positive");
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            block_size: self.block_size,
            ratio: self.ratio,
            channels: self.channels,
            iterations: self.iterations,
            ffb_expansion: self.ffb_expansion,
            use_isca: self.use_isca,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.epochs as f64,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }
}
