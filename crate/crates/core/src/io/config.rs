//! Flat TOML experiment configuration shared by the synth, train and sweep
//! commands. Every key is optional; `preset` is applied before the others
//! regardless of order.

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::losses::{LossKind, LossParams, LossSpec};
use crate::synth::SceneConfig;
use crate::trainer::TrainConfig;

pub const KEYS: &[&str] = &[
    "preset",
    "height",
    "width",
    "n_scenes",
    "big_radius_min",
    "big_radius_max",
    "small_radius_min",
    "small_radius_max",
    "small_contrast",
    "noise_sigma",
    "fg_fraction",
    "multiclass",
    "seed",
    "loss",
    "gamma",
    "gamma_fg",
    "gamma_bg",
    "k_percent",
    "epsilon",
    "compound",
    "w1",
    "w2",
    "epochs",
    "initial_lr",
    "weight_decay",
    "eval_scenes",
    "tau",
    "final_eval_only",
    "gammas",
    "sweep_gamma_bg",
    "seeds",
    "format",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    /// Sweep cells as `(gamma_fg, gamma_bg)`.
    pub pairs: Vec<(f64, f64)>,
    pub seeds: Vec<u64>,
    pub format: ReportFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scenes = SceneConfig::default();
        let seed = scenes.seed;
        ExperimentConfig {
            train: TrainConfig::new(LossSpec::dice(), scenes),
            pairs: [0.0, 0.5, 1.0, 2.0, 5.0].iter().map(|&g| (g, g)).collect(),
            seeds: vec![seed],
            format: ReportFormat::Csv,
        }
    }
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config { key: key.to_string(), reason: reason.into() }
}

struct Reader<'a> {
    table: &'a Table,
}

impl Reader<'_> {
    fn get(&self, key: &str) -> Option<&Value> {
        self.table.get(key)
    }

    fn float(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| as_float(key, v)).transpose()
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                _ => Err(bad(key, "expected a non-negative integer")),
            })
            .transpose()
    }

    fn string(&self, key: &str) -> Result<Option<&str>> {
        self.get(key)
            .map(|v| v.as_str().ok_or_else(|| bad(key, "expected a string")))
            .transpose()
    }

    fn boolean(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| v.as_bool().ok_or_else(|| bad(key, "expected true or false")))
            .transpose()
    }

    fn floats(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| match v {
                Value::Array(items) if !items.is_empty() => items.iter().map(|x| as_float(key, x)).collect(),
                _ => Err(bad(key, "expected a non-empty array of numbers")),
            })
            .transpose()
    }
}

fn as_float(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "expected a number")),
    }
}

fn kind(key: &str, name: &str) -> Result<LossKind> {
    name.parse().map_err(|_| bad(key, format!("unknown loss kind `{name}`")))
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| bad("<syntax>", e.message().to_string()))?;
    if let Some(key) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(bad(key, "unknown key"));
    }
    let r = Reader { table: &table };
    let mut cfg = ExperimentConfig::default();

    let mut scenes = match r.string("preset")? {
        Some(name) => SceneConfig::preset(name).ok_or_else(|| bad("preset", format!("unknown preset `{name}`")))?,
        None => SceneConfig::default(),
    };
    if let Some(v) = r.count("height")? {
        scenes.height = v;
    }
    if let Some(v) = r.count("width")? {
        scenes.width = v;
    }
    if let Some(v) = r.count("n_scenes")? {
        scenes.n_scenes = v;
    }
    if let Some(v) = r.float("big_radius_min")? {
        scenes.big_radius.0 = v;
    }
    if let Some(v) = r.float("big_radius_max")? {
        scenes.big_radius.1 = v;
    }
    if let Some(v) = r.float("small_radius_min")? {
        scenes.small_radius.0 = v;
    }
    if let Some(v) = r.float("small_radius_max")? {
        scenes.small_radius.1 = v;
    }
    if let Some(v) = r.float("small_contrast")? {
        scenes.small_contrast = v;
    }
    if let Some(v) = r.float("noise_sigma")? {
        scenes.noise_sigma = v;
    }
    if let Some(v) = r.float("fg_fraction")? {
        scenes.fg_fraction_target = v;
    }
    if let Some(v) = r.boolean("multiclass")? {
        scenes.multiclass = v;
    }
    if let Some(v) = r.count("seed")? {
        scenes.seed = v as u64;
    }
    scenes.validate().map_err(|e| bad("preset", e.to_string()))?;

    let mut params = LossParams {
        gamma: r.float("gamma")?.or(r.float("gamma_fg")?),
        k_percent: r.float("k_percent")?,
        epsilon: r.float("epsilon")?,
        ..LossParams::default()
    };
    if let Some(bg) = r.float("gamma_bg")? {
        params.gamma_class.push((0, bg));
    }
    let first = kind("loss", r.string("loss")?.unwrap_or("dice"))?;
    let build = |k: LossKind, key: &str| LossSpec::build(k, &params).map_err(|e| bad(key, e.to_string()));
    let loss = match r.string("compound")? {
        Some(second) => LossSpec::compound(
            build(first, "loss")?,
            build(kind("compound", second)?, "compound")?,
            r.float("w1")?.unwrap_or(1.0),
            r.float("w2")?.unwrap_or(1.0),
        ),
        None => build(first, "loss")?,
    };
    loss.validate().map_err(|e| bad("loss", e.to_string()))?;

    let train = &mut cfg.train;
    train.loss = loss;
    train.scenes = scenes;
    if let Some(v) = r.count("epochs")? {
        train.epochs = v;
    }
    if let Some(v) = r.float("initial_lr")? {
        if !(v > 0.0) {
            return Err(bad("initial_lr", "must be positive"));
        }
        train.initial_lr = v;
    }
    if let Some(v) = r.float("weight_decay")? {
        if !(v >= 0.0) {
            return Err(bad("weight_decay", "must be non-negative"));
        }
        train.weight_decay = v;
    }
    if let Some(v) = r.count("eval_scenes")? {
        train.eval_scenes = v;
    }
    if let Some(v) = r.float("tau")? {
        if !(v >= 0.0) {
            return Err(bad("tau", "must be non-negative"));
        }
        train.tau = v;
    }
    if let Some(v) = r.boolean("final_eval_only")? {
        train.final_eval_only = v;
    }

    cfg.pairs = match (r.floats("gammas")?, r.floats("sweep_gamma_bg")?) {
        (Some(_), Some(_)) => return Err(bad("sweep_gamma_bg", "give either `gammas` or `sweep_gamma_bg`, not both")),
        (Some(gs), None) => gs.iter().map(|&g| (g, g)).collect(),
        (None, Some(bgs)) => {
            let fg = r.float("gamma_fg")?.ok_or_else(|| bad("gamma_fg", "required with `sweep_gamma_bg`"))?;
            bgs.iter().map(|&b| (fg, b)).collect()
        }
        (None, None) => cfg.pairs,
    };
    if cfg.pairs.iter().any(|&(f, b)| !(f >= 0.0 && b >= 0.0)) {
        let key = if r.get("gammas").is_some() { "gammas" } else { "sweep_gamma_bg" };
        return Err(bad(key, "focusing parameters must be non-negative"));
    }
    cfg.seeds = match r.get("seeds") {
        Some(Value::Array(items)) if !items.is_empty() => items
            .iter()
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                _ => Err(bad("seeds", "expected non-negative integers")),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(bad("seeds", "expected a non-empty array of integers")),
        None => vec![cfg.train.scenes.seed],
    };
    cfg.format = match r.string("format")? {
        None | Some("csv") => ReportFormat::Csv,
        Some("json") => ReportFormat::Json,
        Some(other) => return Err(bad("format", format!("expected csv or json, got `{other}`"))),
    };
    Ok(cfg)
}
