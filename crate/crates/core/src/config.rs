//! `key = value` run configuration. `#` starts a comment; blank lines are
//! ignored; unknown or repeated keys are errors.
//!
//! ```text
//! architecture = reduced        # fig2 (default) or reduced
//! learning_rate = 0.2
//! epochs = 20
//! lstm1.concat_factors = 16, 16, 5
//! dense.ranks = 1, 4, 4, 1
//! ```
//!
//! Training keys: `learning_rate`, `momentum`, `clip_norm`, `epochs`,
//! `batch_size`, `dropout`, `seed`, `truncation`, `val_fraction`.
//! Layer keys: `lstmN.{input_factors, concat_factors, hidden_factors, ranks}`
//! (N counted from 1) and `dense.* / output.*` with
//! `{input_factors, output_factors, ranks}`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensornet::{Architecture, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub architecture: Architecture,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            architecture: Architecture::fig2(),
        }
    }
}

struct Entry {
    line: usize,
    value: String,
}

fn err(line: usize, reason: impl Into<String>) -> Error {
    Error::Config {
        line,
        reason: reason.into(),
    }
}

fn scalar<T: FromStr>(e: &Entry, key: &str) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| err(e.line, format!("`{}` is not a valid value for {}", e.value, key)))
}

fn factors(e: &Entry, key: &str) -> Result<Vec<usize>> {
    let out: Vec<usize> = e
        .value
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            err(
                e.line,
                format!("{key} expects a comma-separated list of positive integers"),
            )
        })?;
    if out.is_empty() || out.contains(&0) {
        return Err(err(e.line, format!("{key} expects positive integers")));
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err(line, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(err(line, "empty key"));
            }
            if value.is_empty() {
                return Err(err(line, format!("missing value for {key}")));
            }
            if let Some(prev) = entries.get(key) {
                return Err(err(line, format!("{key} already set on line {}", prev.line)));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    line,
                    value: value.to_string(),
                },
            );
        }

        let mut cfg = RunConfig::default();
        if let Some(e) = entries.remove("architecture") {
            cfg.architecture = match e.value.as_str() {
                "fig2" => Architecture::fig2(),
                "reduced" => Architecture::reduced(),
                other => return Err(err(e.line, format!("unknown architecture `{other}` (fig2 or reduced)"))),
            };
        }
        let mut last_line = 0;
        for (key, e) in &entries {
            last_line = last_line.max(e.line);
            let t = &mut cfg.train;
            match key.as_str() {
                "learning_rate" => t.learning_rate = scalar(e, key)?,
                "momentum" => t.momentum = scalar(e, key)?,
                "clip_norm" => t.clip_norm = scalar(e, key)?,
                "epochs" => t.epochs = scalar(e, key)?,
                "batch_size" => t.batch_size = scalar(e, key)?,
                "dropout" => t.dropout = scalar(e, key)?,
                "seed" => t.seed = scalar(e, key)?,
                "truncation" => t.truncation = scalar(e, key)?,
                "val_fraction" => t.val_fraction = scalar(e, key)?,
                _ => apply_layer_key(&mut cfg.architecture, key, e)?,
            }
        }
        cfg.train.validate().map_err(|e| err(0, e.to_string()))?;
        cfg.architecture
            .validate()
            .map_err(|e| err(0, format!("architecture: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn apply_layer_key(arch: &mut Architecture, key: &str, e: &Entry) -> Result<()> {
    let unknown = || err(e.line, format!("unknown key `{key}`"));
    let (layer, field) = key.split_once('.').ok_or_else(unknown)?;
    if let Some(n) = layer.strip_prefix("lstm") {
        let n: usize = n.parse().map_err(|_| unknown())?;
        let count = arch.lstm.len();
        let spec = n
            .checked_sub(1)
            .and_then(|i| arch.lstm.get_mut(i))
            .ok_or_else(|| err(e.line, format!("{layer}: the architecture has {count} LSTM layers")))?;
        let slot = match field {
            "input_factors" => &mut spec.input_factors,
            "concat_factors" => &mut spec.concat_factors,
            "hidden_factors" => &mut spec.hidden_factors,
            "ranks" => &mut spec.ranks,
            _ => return Err(unknown()),
        };
        *slot = factors(e, key)?;
        return Ok(());
    }
    let spec = match layer {
        "dense" => &mut arch.dense,
        "output" => &mut arch.output,
        _ => return Err(unknown()),
    };
    let slot = match field {
        "input_factors" => &mut spec.input_factors,
        "output_factors" => &mut spec.output_factors,
        "ranks" => &mut spec.ranks,
        _ => return Err(unknown()),
    };
    *slot = factors(e, key)?;
    Ok(())
}
