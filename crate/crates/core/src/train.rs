//! Seeded experiment runner and ablation sweeps.
//!
//! A run is a pure function of its [`ExperimentConfig`]. The master seed is
//! split into independent substreams (see [`crate::rng`]) for data, parameter
//! initialization, batch shuffling and masks, so a baseline and a regularized
//! run with the same seed see identical datasets, initial weights and batch
//! orders and differ only in the masks.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{generate_shape, PointCloud, ShapeKind};
use crate::masks::{DropKind, DropSpec, Mode};
use crate::net::{backward, cross_entropy, forward, predict, ModelSpec, Optimizer, OptimizerConfig, Params, Sample};
use crate::rng::{self, derive_seed, Domain};
use crate::scalar::Scalar;

/// Per-point Gaussian noise used by the default desk-scale dataset.
pub const DEFAULT_NOISE: f64 = 0.3;

/// Cluster size scaled to the point count: `round(n / 32)`, at least 1
/// (8 for 256 points).
pub fn default_gamma(points: usize) -> usize {
    ((points as f64 / 32.0).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    /// One class per kind, labelled by position.
    pub kinds: Vec<ShapeKind>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub noise: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kinds: ShapeKind::ALL.to_vec(),
            train_per_class: 50,
            test_per_class: 50,
            points: 256,
            noise: DEFAULT_NOISE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub drop: DropSpec,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 4 shape classes, 50/50 clouds per class, 256
    /// points, the default model, DropCluster with `theta = 0.1`,
    /// `gamma = default_gamma(256)` on the two earliest slots, Adam, 60
    /// epochs, batch 16.
    pub fn desk_default(seed: u64) -> Self {
        let dataset = DatasetSpec::default();
        let model = ModelSpec::desk_default(dataset.kinds.len());
        let drop = DropSpec {
            kind: DropKind::DropCluster,
            theta: 0.1,
            gamma: default_gamma(dataset.points),
            positions: earliest_slots(&model, 2),
            renormalize: true,
        };
        Self {
            dataset,
            model,
            drop,
            optimizer: OptimizerConfig::adam(),
            epochs: 60,
            batch_size: 16,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.kinds.len() < 2 {
            return Err(Error::invalid("at least two shape classes required"));
        }
        if d.train_per_class == 0 || d.test_per_class == 0 {
            return Err(Error::invalid("clouds per class must be at least 1"));
        }
        if d.points < 2 {
            return Err(Error::invalid("clouds need at least 2 points"));
        }
        if !(d.noise >= 0.0 && d.noise.is_finite()) {
            return Err(Error::invalid("noise must be finite and non-negative"));
        }
        self.model.validate()?;
        if self.model.classes() != d.kinds.len() {
            return Err(Error::invalid(format!(
                "model has {} outputs for {} classes",
                self.model.classes(),
                d.kinds.len()
            )));
        }
        if self.model.max_edge_k() >= d.points {
            return Err(Error::invalid("edge conv k must be smaller than the point count"));
        }
        self.model.check_drop(&self.drop)?;
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_drop(&self, drop: DropSpec) -> Self {
        Self { drop, ..self.clone() }
    }
}

/// The first `count` drop slots of `model`.
pub fn earliest_slots(model: &ModelSpec, count: usize) -> BTreeSet<usize> {
    (0..model.slot_count().min(count)).collect()
}

/// The last `count` drop slots of `model`.
pub fn latest_slots(model: &ModelSpec, count: usize) -> BTreeSet<usize> {
    let slots = model.slot_count();
    (slots.saturating_sub(count)..slots).collect()
}

/// Generates the class-balanced train and test splits. Cloud `i` of class
/// `c` in split `s` (0 = train, 1 = test) is drawn from the data substream
/// `[s, c, i]`.
pub fn build_dataset<T: Scalar>(config: &ExperimentConfig) -> Result<(Vec<PointCloud<T>>, Vec<PointCloud<T>>)> {
    let d = &config.dataset;
    if d.kinds.len() < 2 {
        return Err(Error::invalid("at least two shape classes required"));
    }
    if d.train_per_class == 0 || d.test_per_class == 0 {
        return Err(Error::invalid("clouds per class must be at least 1"));
    }
    let split = |s: u64, per_class: usize| -> Result<Vec<PointCloud<T>>> {
        let mut out = Vec::with_capacity(per_class * d.kinds.len());
        for (c, &kind) in d.kinds.iter().enumerate() {
            for i in 0..per_class {
                let seed = derive_seed(config.seed, Domain::Data, &[s, c as u64, i as u64]);
                let mut cloud = generate_shape(kind, d.points, d.noise, seed)?;
                cloud.label = c;
                out.push(cloud);
            }
        }
        Ok(out)
    };
    Ok((split(0, d.train_per_class)?, split(1, d.test_per_class)?))
}

/// Parameter initialization for a config (init substream).
pub fn initial_params<T: Scalar>(config: &ExperimentConfig) -> Result<Params<T>> {
    Params::init(&config.model, derive_seed(config.seed, Domain::Init, &[]))
}

/// Visiting order of the training set in `epoch` (shuffle substream).
pub fn shuffle_order(master: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(derive_seed(master, Domain::Shuffle, &[epoch as u64])));
    order
}

/// Seed from which every mask of one training sample in one epoch derives.
pub fn sample_mask_seed(master: u64, epoch: usize, sample: usize) -> u64 {
    derive_seed(master, Domain::Mask, &[epoch as u64, sample as u64])
}

/// Prepares clouds (KNN index and neighbour cache) for a model and drop spec.
pub fn prepare<T: Scalar>(clouds: Vec<PointCloud<T>>, model: &ModelSpec, drop: &DropSpec) -> Result<Vec<Sample<T>>> {
    clouds
        .into_par_iter()
        .map(|c| Sample::for_model(c, model, drop))
        .collect()
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// One pass over `train` in a seeded shuffle, one optimizer update per batch.
///
/// Gradients are averaged over the batch. Loss and accuracy are measured on
/// the training-mode (masked) forward passes.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Scalar>(
    model: &ModelSpec,
    params: &mut Params<T>,
    optimizer: &mut Optimizer<T>,
    train: &[Sample<T>],
    drop: &DropSpec,
    epoch: usize,
    master: u64,
    batch_size: usize,
) -> Result<EpochMetrics> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let order = shuffle_order(master, epoch, train.len());
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for batch in order.chunks(batch_size) {
        let results: Vec<Result<(f64, bool, Params<T>)>> = batch
            .par_iter()
            .map(|&s| {
                let sample = &train[s];
                let seed = sample_mask_seed(master, epoch, s);
                let (logits, mut tape) = forward(model, params, sample, drop, seed, Mode::Train)?;
                let (loss, grad) = cross_entropy(&logits, sample.cloud.label)?;
                let loss = loss.to_f64_lossy();
                if !loss.is_finite() {
                    return Err(Error::state(format!("non-finite loss {loss} on training sample {s} (epoch {epoch})")));
                }
                tape.set_loss_grad(grad)?;
                let grads = backward(params, &tape)?;
                Ok((loss, argmax(&logits) == sample.cloud.label, grads))
            })
            .collect();
        let mut sum = params.zeros_like();
        let scale = T::one() / T::of_usize(batch.len());
        for r in results {
            let (loss, hit, grads) = r?;
            total_loss += loss;
            correct += usize::from(hit);
            sum.add_scaled(&grads, scale)?;
        }
        optimizer.step(params, &sum)?;
    }
    Ok(EpochMetrics {
        loss: total_loss / train.len() as f64,
        accuracy: correct as f64 / train.len() as f64,
    })
}

/// Eval-mode accuracy; argmax ties go to the lowest class index.
pub fn evaluate<T: Scalar>(model: &ModelSpec, params: &Params<T>, samples: &[Sample<T>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let hits: Vec<Result<bool>> = samples
        .par_iter()
        .map(|s| {
            let logits = predict(model, params, s)?;
            Ok(argmax(&logits) == s.cloud.label)
        })
        .collect();
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub epochs: Vec<EpochRecord>,
    /// Eval-mode accuracy on the training set after the last epoch.
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    /// `final_train_acc − final_test_acc`.
    pub gap: f64,
    pub wall_clock: Duration,
    pub config: ExperimentConfig,
    pub seed: u64,
}

impl RunResult {
    /// Equality of everything except wall-clock time.
    pub fn same_outcome(&self, other: &RunResult) -> bool {
        self.epochs == other.epochs
            && self.final_train_acc == other.final_train_acc
            && self.final_test_acc == other.final_test_acc
            && self.config == other.config
    }
}

fn check_metrics(epoch: usize, m: &EpochMetrics, test_acc: f64) -> Result<()> {
    let acc_ok = |a: f64| (0.0..=1.0).contains(&a);
    if !m.loss.is_finite() || !acc_ok(m.accuracy) || !acc_ok(test_acc) {
        return Err(Error::state(format!(
            "metrics out of range at epoch {epoch}: loss {}, train acc {}, test acc {test_acc}",
            m.loss, m.accuracy
        )));
    }
    Ok(())
}

/// Dataset generation, `epochs` training epochs with a test evaluation after
/// each, and a final eval-mode pass over the training set.
pub fn run_experiment<T: Scalar>(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    let start = Instant::now();
    let (train, test) = build_dataset::<T>(config)?;
    let train = prepare(train, &config.model, &config.drop)?;
    let test = prepare(test, &config.model, &config.drop)?;
    let mut params = initial_params::<T>(config)?;
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let m = train_epoch(
            &config.model,
            &mut params,
            &mut optimizer,
            &train,
            &config.drop,
            epoch,
            config.seed,
            config.batch_size,
        )?;
        let test_acc = evaluate(&config.model, &params, &test)?;
        check_metrics(epoch, &m, test_acc)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: m.loss,
            train_acc: m.accuracy,
            test_acc,
        });
    }
    let final_train_acc = evaluate(&config.model, &params, &train)?;
    let final_test_acc = match epochs.last() {
        Some(e) => e.test_acc,
        None => evaluate(&config.model, &params, &test)?,
    };
    Ok(RunResult {
        epochs,
        final_train_acc,
        final_test_acc,
        gap: final_train_acc - final_test_acc,
        wall_clock: start.elapsed(),
        config: config.clone(),
        seed: config.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Theta,
    Gamma,
    Positions,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Theta => "theta",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Positions => "positions",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta" => Ok(SweepAxis::Theta),
            "gamma" => Ok(SweepAxis::Gamma),
            "positions" => Ok(SweepAxis::Positions),
            other => Err(Error::invalid(format!("unknown sweep axis `{other}` (expected theta, gamma or positions)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepValue {
    Theta(f64),
    Gamma(usize),
    Positions(BTreeSet<usize>),
}

impl SweepValue {
    pub fn axis(&self) -> SweepAxis {
        match self {
            SweepValue::Theta(_) => SweepAxis::Theta,
            SweepValue::Gamma(_) => SweepAxis::Gamma,
            SweepValue::Positions(_) => SweepAxis::Positions,
        }
    }

    /// `base` with this value substituted on its axis.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        match self {
            SweepValue::Theta(t) => cfg.drop.theta = *t,
            SweepValue::Gamma(g) => cfg.drop.gamma = *g,
            SweepValue::Positions(p) => cfg.drop.positions = p.clone(),
        }
        cfg
    }
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::Theta(t) => write!(f, "{t}"),
            SweepValue::Gamma(g) => write!(f, "{g}"),
            SweepValue::Positions(p) => {
                let parts: Vec<String> = p.iter().map(usize::to_string).collect();
                f.write_str(&parts.join("+"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub test_acc: f64,
    pub train_acc: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: SweepValue,
    pub runs: Vec<SeedOutcome>,
    pub mean_test_acc: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub sd_test_acc: f64,
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `base` once per `(value, seed)` and aggregates test accuracy per
/// value. Rows come back in the order of `values`.
pub fn ablation_sweep<T: Scalar>(base: &ExperimentConfig, values: &[SweepValue], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs at least one value and one seed"));
    }
    let jobs: Vec<(usize, u64)> = (0..values.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let outcomes: Vec<Result<SeedOutcome>> = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let r = run_experiment::<T>(&values[v].apply(base).with_seed(seed))?;
            Ok(SeedOutcome {
                seed,
                test_acc: r.final_test_acc,
                train_acc: r.final_train_acc,
                gap: r.gap,
            })
        })
        .collect();
    let mut outcomes = outcomes.into_iter();
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let runs = outcomes.by_ref().take(seeds.len()).collect::<Result<Vec<_>>>()?;
        let accs: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
        let (mean_test_acc, sd_test_acc) = mean_sd(&accs);
        rows.push(SweepRow {
            value: value.clone(),
            runs,
            mean_test_acc,
            sd_test_acc,
        });
    }
    Ok(rows)
}

/// Order-sensitive hash of a set of clouds (coordinates, features, labels).
pub fn clouds_fingerprint<T: Scalar>(clouds: &[PointCloud<T>]) -> u64 {
    let mut h = DefaultHasher::new();
    for c in clouds {
        cloud_hash_into(c, &mut h);
    }
    h.finish()
}

pub fn cloud_fingerprint<T: Scalar>(cloud: &PointCloud<T>) -> u64 {
    let mut h = DefaultHasher::new();
    cloud_hash_into(cloud, &mut h);
    h.finish()
}

fn cloud_hash_into<T: Scalar>(c: &PointCloud<T>, h: &mut DefaultHasher) {
    c.label.hash(h);
    c.n().hash(h);
    for x in c.coords.iter().flatten() {
        x.to_f64_lossy().to_bits().hash(h);
    }
    if let Some(f) = &c.feats {
        for x in f.as_slice() {
            x.to_f64_lossy().to_bits().hash(h);
        }
    }
}

/// Hash of every parameter value.
pub fn params_fingerprint<T: Scalar>(params: &Params<T>) -> u64 {
    let mut h = DefaultHasher::new();
    for t in params.tensors() {
        t.len().hash(&mut h);
        for x in t {
            x.to_f64_lossy().to_bits().hash(&mut h);
        }
    }
    h.finish()
}
