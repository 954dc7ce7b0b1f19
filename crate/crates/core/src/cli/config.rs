//! Experiment config files.
//!
//! An INI-style document with five sections. Every key is optional; missing
//! keys take the defaults shown:
//!
//! ```text
//! [dataset]
//! kinds = sphere, cube, torus, cylinder
//! train_per_class = 50
//! test_per_class = 50
//! points = 256
//! noise = 0.3
//!
//! [model]
//! layers = linear:16, slot, edge:16:8, slot, linear:32, slot, linear:32, slot
//! head = 32                  # hidden widths; the class count is appended
//!
//! [drop]
//! kind = drop_cluster        # none | input_drop | mlp_dropout | drop_feat | drop_point | drop_cluster
//! theta = 0.1
//! gamma = 8                  # default round(points / 32)
//! positions = 0, 1           # default: the two earliest drop slots
//! renormalize = true         # scale mask survivors by total/kept
//!
//! [optimizer]
//! kind = adam                # adam (lr 0.005) | sgd (lr 0.1, momentum 0.9)
//! lr = 0.005
//! momentum = 0.9
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//!
//! [run]
//! epochs = 60
//! batch_size = 16
//! seed = 1
//! ```
//!
//! `#` starts a comment. Unknown sections or keys, duplicate keys and
//! out-of-range values are errors that name the key and line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::ShapeKind;
use crate::masks::{DropKind, DropSpec};
use crate::net::{LayerWidth, ModelSpec, OptimizerConfig, OptimizerKind};
use crate::train::{default_gamma, earliest_slots, DatasetSpec, ExperimentConfig};

const SCHEMA: &[(&str, &[&str])] = &[
    ("dataset", &["kinds", "train_per_class", "test_per_class", "points", "noise"]),
    ("model", &["layers", "head"]),
    ("drop", &["kind", "theta", "gamma", "positions", "renormalize"]),
    ("optimizer", &["kind", "lr", "momentum", "beta1", "beta2", "eps"]),
    ("run", &["epochs", "batch_size", "seed"]),
];

pub const DEFAULT_SEED: u64 = 1;

struct Entry {
    value: String,
    line: usize,
}

struct Document {
    entries: BTreeMap<(String, String), Entry>,
}

impl Document {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(line, None, format!("malformed section header `{content}`")))?
                    .trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(Error::parse(line, None, format!("unknown section `[{name}]`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::parse(line, None, format!("expected `key = value`, found `{content}`")))?;
            let key = key.trim();
            let sec = section
                .as_deref()
                .ok_or_else(|| Error::parse(line, Some(key), "key outside of any section"))?;
            let allowed = SCHEMA.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key) {
                return Err(Error::parse(line, Some(key), format!("unknown key in [{sec}]")));
            }
            let slot = (sec.to_string(), key.to_string());
            if let Some(prev) = entries.get(&slot) {
                let prev: &Entry = prev;
                return Err(Error::parse(line, Some(key), format!("duplicate key (first set on line {})", prev.line)));
            }
            entries.insert(
                slot,
                Entry {
                    value: value.trim().to_string(),
                    line,
                },
            );
        }
        Ok(Self { entries })
    }

    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    /// Parses `section.key` with `f`, or returns `None` when absent.
    fn value<V>(&self, section: &str, key: &str, f: impl FnOnce(&str) -> std::result::Result<V, String>) -> Result<Option<V>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .map_err(|msg| Error::parse(e.line, Some(key), msg)),
        }
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.get(section, key).map_or(0, |e| e.line)
    }
}

fn num<V: FromStr>(s: &str) -> std::result::Result<V, String> {
    s.parse::<V>().map_err(|_| format!("`{s}` is not a valid number"))
}

fn list<V>(s: &str, f: impl Fn(&str) -> std::result::Result<V, String>) -> std::result::Result<Vec<V>, String> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(f).collect()
}

fn layer_width(tok: &str) -> std::result::Result<LayerWidth, String> {
    let parts: Vec<&str> = tok.split(':').map(str::trim).collect();
    let width = |s: &str| -> std::result::Result<usize, String> {
        match s.parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(format!("`{s}` in `{tok}` is not a positive integer")),
        }
    };
    match parts.as_slice() {
        ["slot"] => Ok(LayerWidth::Slot),
        ["linear", m] => Ok(LayerWidth::Linear(width(m)?)),
        ["edge", m, k] => Ok(LayerWidth::Edge {
            m_out: width(m)?,
            k: width(k)?,
        }),
        _ => Err(format!("unknown layer `{tok}` (expected linear:<out>, edge:<out>:<k> or slot)")),
    }
}

fn in_range(v: f64, lo: f64, hi: f64, what: &str) -> std::result::Result<f64, String> {
    if v >= lo && v <= hi {
        Ok(v)
    } else {
        Err(format!("{what} = {v} outside the range [{lo}, {hi}]"))
    }
}

fn positive(v: usize, what: &str) -> std::result::Result<usize, String> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(format!("{what} must be at least 1"))
    }
}

/// Parses and validates config text, applying defaults for missing keys.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let doc = Document::parse(text)?;
    let defaults = DatasetSpec::default();

    let dataset = DatasetSpec {
        kinds: doc
            .value("dataset", "kinds", |s| list(s, |t| ShapeKind::from_str(t).map_err(|e| e.to_string())))?
            .unwrap_or(defaults.kinds),
        train_per_class: doc
            .value("dataset", "train_per_class", |s| positive(num(s)?, "train_per_class"))?
            .unwrap_or(defaults.train_per_class),
        test_per_class: doc
            .value("dataset", "test_per_class", |s| positive(num(s)?, "test_per_class"))?
            .unwrap_or(defaults.test_per_class),
        points: doc
            .value("dataset", "points", |s| {
                let n: usize = num(s)?;
                if n >= 2 {
                    Ok(n)
                } else {
                    Err("points must be at least 2".into())
                }
            })?
            .unwrap_or(defaults.points),
        noise: doc
            .value("dataset", "noise", |s| in_range(num(s)?, 0.0, f64::MAX, "noise"))?
            .unwrap_or(defaults.noise),
    };
    if dataset.kinds.len() < 2 {
        return Err(Error::parse(doc.line_of("dataset", "kinds"), Some("kinds"), "at least two shape kinds required"));
    }

    let layers = doc
        .value("model", "layers", |s| list(s, layer_width))?
        .unwrap_or_else(ModelSpec::default_layers);
    let head_hidden = doc
        .value("model", "head", |s| list(s, |t| positive(num(t)?, "head width")))?
        .unwrap_or_else(|| vec![32]);
    let model = ModelSpec::from_widths(3, &layers, &head_hidden, dataset.kinds.len())
        .map_err(|e| Error::parse(doc.line_of("model", "layers"), Some("layers"), e.to_string()))?;
    if let Some(k) = Some(model.max_edge_k()).filter(|&k| k >= dataset.points) {
        return Err(Error::parse(
            doc.line_of("model", "layers"),
            Some("layers"),
            format!("edge conv k = {k} needs more than {} points", dataset.points),
        ));
    }

    let drop = DropSpec {
        kind: doc
            .value("drop", "kind", |s| DropKind::from_str(s).map_err(|e| e.to_string()))?
            .unwrap_or(DropKind::DropCluster),
        theta: doc
            .value("drop", "theta", |s| in_range(num(s)?, 0.0, 1.0, "theta"))?
            .unwrap_or(0.1),
        gamma: doc
            .value("drop", "gamma", |s| positive(num(s)?, "gamma"))?
            .unwrap_or_else(|| default_gamma(dataset.points)),
        positions: match doc.value("drop", "positions", |s| list(s, num::<usize>))? {
            Some(p) => p.into_iter().collect::<BTreeSet<_>>(),
            None => earliest_slots(&model, 2),
        },
        renormalize: doc
            .value("drop", "renormalize", |s| match s {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("`{s}` is not true or false")),
            })?
            .unwrap_or(true),
    };
    if let Some(&p) = drop.positions.iter().find(|&&p| p >= model.slot_count()) {
        return Err(Error::parse(
            doc.line_of("drop", "positions"),
            Some("positions"),
            format!("drop position {p} does not exist (model has {} drop slots)", model.slot_count()),
        ));
    }
    if drop.kind == DropKind::InputDrop && drop.theta >= 1.0 {
        return Err(Error::parse(doc.line_of("drop", "theta"), Some("theta"), "input drop needs theta < 1"));
    }

    let kind = doc
        .value("optimizer", "kind", |s| OptimizerKind::from_str(s).map_err(|e| e.to_string()))?
        .unwrap_or(OptimizerKind::Adam);
    let base = OptimizerConfig::defaults_for(kind);
    let unit = |key: &'static str, default: f64| -> Result<f64> {
        Ok(doc
            .value("optimizer", key, |s| {
                let v = num(s)?;
                if (0.0..1.0).contains(&v) {
                    Ok(v)
                } else {
                    Err(format!("{key} = {v} outside the range [0, 1)"))
                }
            })?
            .unwrap_or(default))
    };
    let optimizer = OptimizerConfig {
        kind,
        lr: doc
            .value("optimizer", "lr", |s| in_range(num(s)?, 0.0, f64::MAX, "lr"))?
            .unwrap_or(base.lr),
        momentum: unit("momentum", base.momentum)?,
        beta1: unit("beta1", base.beta1)?,
        beta2: unit("beta2", base.beta2)?,
        eps: doc
            .value("optimizer", "eps", |s| {
                let v: f64 = num(s)?;
                if v > 0.0 && v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("eps = {v} must be positive"))
                }
            })?
            .unwrap_or(base.eps),
    };

    let config = ExperimentConfig {
        dataset,
        model,
        drop,
        optimizer,
        epochs: doc.value("run", "epochs", num)?.unwrap_or(60),
        batch_size: doc
            .value("run", "batch_size", |s| positive(num(s)?, "batch_size"))?
            .unwrap_or(16),
        seed: doc.value("run", "seed", num)?.unwrap_or(DEFAULT_SEED),
    };
    config.validate()?;
    Ok(config)
}

/// Reads and parses a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    parse_config_str(&fs::read_to_string(path)?)
}

fn join<I: IntoIterator<Item = S>, S: ToString>(items: I) -> String {
    items.into_iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
}

/// Full, explicit config text; parsing it yields an equal config.
pub fn config_to_string(c: &ExperimentConfig) -> String {
    let mut out = String::new();
    let d = &c.dataset;
    let hidden = &c.model.head[..c.model.head.len() - 1];
    let o = &c.optimizer;
    let _ = writeln!(out, "[dataset]");
    let _ = writeln!(out, "kinds = {}", join(d.kinds.iter().map(|k| k.name())));
    let _ = writeln!(out, "train_per_class = {}", d.train_per_class);
    let _ = writeln!(out, "test_per_class = {}", d.test_per_class);
    let _ = writeln!(out, "points = {}", d.points);
    let _ = writeln!(out, "noise = {}", d.noise);
    let _ = writeln!(out, "\n[model]");
    let _ = writeln!(out, "layers = {}", join(c.model.widths()));
    let _ = writeln!(out, "head = {}", join(hidden));
    let _ = writeln!(out, "\n[drop]");
    let _ = writeln!(out, "kind = {}", c.drop.kind);
    let _ = writeln!(out, "theta = {}", c.drop.theta);
    let _ = writeln!(out, "gamma = {}", c.drop.gamma);
    let _ = writeln!(out, "positions = {}", join(&c.drop.positions));
    let _ = writeln!(out, "renormalize = {}", c.drop.renormalize);
    let _ = writeln!(out, "\n[optimizer]");
    let _ = writeln!(out, "kind = {}", o.kind);
    let _ = writeln!(out, "lr = {}", o.lr);
    let _ = writeln!(out, "momentum = {}", o.momentum);
    let _ = writeln!(out, "beta1 = {}", o.beta1);
    let _ = writeln!(out, "beta2 = {}", o.beta2);
    let _ = writeln!(out, "eps = {}", o.eps);
    let _ = writeln!(out, "\n[run]");
    let _ = writeln!(out, "epochs = {}", c.epochs);
    let _ = writeln!(out, "batch_size = {}", c.batch_size);
    let _ = writeln!(out, "seed = {}", c.seed);
    out
}
