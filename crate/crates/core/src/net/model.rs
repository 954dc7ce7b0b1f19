use std::fmt;

use rand::Rng;

use super::feature_map::FeatureMap;
use super::layers::{edge_conv_core, edge_conv_max, edge_factors, global_max_pool, head_forward_recorded, Dense, HeadRecord};
use crate::error::{Error, Result};
use crate::geometry::{build_knn_index, KnnIndex, NeighborTable, PointCloud};
use crate::masks::{
    apply_mask_to_cloud, dropcluster_mask, dropfeat_mask, droppoint_mask, mlp_dropout_mask, ClusterNeighbors,
    DropKind, DropSpec, Mode,
};
use crate::matrix::Matrix;
use crate::rng::{self, child_seed, HEAD_LAYER, INPUT_LAYER};
use crate::scalar::Scalar;

/// One entry of the point-layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    SharedLinear { m_in: usize, m_out: usize, relu: bool },
    EdgeConv { m_in: usize, m_out: usize, k: usize, relu: bool },
    /// Place where a feature-map mask may be applied. Slots are numbered in
    /// order of appearance, starting at 0.
    DropSlot,
}

/// Point layers, then a single global max pool, then a dense head whose last
/// width is the class count.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    /// Hidden widths followed by the number of classes.
    pub head: Vec<usize>,
}

/// Builder-side description of a point layer; input widths are inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerWidth {
    Linear(usize),
    Edge { m_out: usize, k: usize },
    Slot,
}

impl fmt::Display for LayerWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerWidth::Linear(m) => write!(f, "linear:{m}"),
            LayerWidth::Edge { m_out, k } => write!(f, "edge:{m_out}:{k}"),
            LayerWidth::Slot => f.write_str("slot"),
        }
    }
}

impl ModelSpec {
    /// Chains widths starting from `input_dim`; every point layer uses ReLU.
    pub fn from_widths(input_dim: usize, layers: &[LayerWidth], head_hidden: &[usize], classes: usize) -> Result<Self> {
        let mut m = input_dim;
        let mut out = Vec::with_capacity(layers.len());
        for l in layers {
            out.push(match *l {
                LayerWidth::Linear(m_out) => {
                    let s = LayerSpec::SharedLinear { m_in: m, m_out, relu: true };
                    m = m_out;
                    s
                }
                LayerWidth::Edge { m_out, k } => {
                    let s = LayerSpec::EdgeConv { m_in: m, m_out, k, relu: true };
                    m = m_out;
                    s
                }
                LayerWidth::Slot => LayerSpec::DropSlot,
            });
        }
        let mut head = head_hidden.to_vec();
        head.push(classes);
        let spec = Self {
            input_dim,
            layers: out,
            head,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default classifier: `linear:16, slot, edge:16:8, slot, linear:32,
    /// slot, linear:32, slot`, head `32 → 32 → classes`.
    pub fn desk_default(classes: usize) -> Self {
        Self::from_widths(3, &Self::default_layers(), &[32], classes).expect("default model is consistent")
    }

    pub fn default_layers() -> Vec<LayerWidth> {
        vec![
            LayerWidth::Linear(16),
            LayerWidth::Slot,
            LayerWidth::Edge { m_out: 16, k: 8 },
            LayerWidth::Slot,
            LayerWidth::Linear(32),
            LayerWidth::Slot,
            LayerWidth::Linear(32),
            LayerWidth::Slot,
        ]
    }

    /// Builder view of the point layers.
    pub fn widths(&self) -> Vec<LayerWidth> {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::SharedLinear { m_out, .. } => LayerWidth::Linear(m_out),
                LayerSpec::EdgeConv { m_out, k, .. } => LayerWidth::Edge { m_out, k },
                LayerSpec::DropSlot => LayerWidth::Slot,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        let mut m = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            match *l {
                LayerSpec::SharedLinear { m_in, m_out, .. } | LayerSpec::EdgeConv { m_in, m_out, .. } => {
                    if m_in != m {
                        return Err(Error::invalid(format!("layer {i} expects {m_in} inputs but receives {m}")));
                    }
                    if m_out == 0 {
                        return Err(Error::invalid(format!("layer {i} has zero outputs")));
                    }
                    m = m_out;
                }
                LayerSpec::DropSlot => {}
            }
        }
        if self.head.is_empty() || self.head.contains(&0) {
            return Err(Error::invalid("head widths must be non-empty and positive"));
        }
        if self.classes() < 2 {
            return Err(Error::invalid("at least two classes required"));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        *self.head.last().unwrap_or(&0)
    }

    /// Width of the global feature fed to the head.
    pub fn pooled_dim(&self) -> usize {
        self.layers.iter().fold(self.input_dim, |m, l| match *l {
            LayerSpec::SharedLinear { m_out, .. } | LayerSpec::EdgeConv { m_out, .. } => m_out,
            LayerSpec::DropSlot => m,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::DropSlot)).count()
    }

    /// Largest EdgeConv neighbourhood.
    pub fn max_edge_k(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::EdgeConv { k, .. } => Some(k),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Checks that a drop spec only references existing slots.
    pub fn check_drop(&self, drop: &DropSpec) -> Result<()> {
        drop.validate()?;
        let slots = self.slot_count();
        if let Some(&p) = drop.positions.iter().find(|&&p| p >= slots) {
            return Err(Error::invalid(format!(
                "drop position {p} does not exist (model has {slots} drop slots)"
            )));
        }
        Ok(())
    }
}

/// Learnable weights, aligned with [`ModelSpec::layers`] (`None` at drop
/// slots) and the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub layers: Vec<Option<Dense<T>>>,
    pub head: Vec<Dense<T>>,
    generation: u64,
}

impl<T: Scalar> Params<T> {
    /// He-uniform weights and zero biases drawn from `seed`.
    pub fn init(model: &ModelSpec, seed: u64) -> Result<Self> {
        model.validate()?;
        let mut r = rng::stream(seed);
        let mut dense = |m_in: usize, m_out: usize, fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = (0..m_in * m_out)
                .map(|_| T::of(r.random_range(-bound..bound)))
                .collect();
            Dense {
                weight: Matrix::from_vec(m_in, m_out, w).expect("sized above"),
                bias: vec![T::zero(); m_out],
            }
        };
        let layers = model
            .layers
            .iter()
            .map(|l| match *l {
                LayerSpec::SharedLinear { m_in, m_out, .. } => Some(dense(m_in, m_out, m_in)),
                LayerSpec::EdgeConv { m_in, m_out, .. } => Some(dense(2 * m_in, m_out, 2 * m_in)),
                LayerSpec::DropSlot => None,
            })
            .collect();
        let mut m = model.pooled_dim();
        let head = model
            .head
            .iter()
            .map(|&w| {
                let d = dense(m, w, m);
                m = w;
                d
            })
            .collect();
        Ok(Self {
            layers,
            head,
            generation: 0,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let zero = |d: &Dense<T>| Dense::zeros(d.m_in(), d.m_out());
        Self {
            layers: self.layers.iter().map(|l| l.as_ref().map(zero)).collect(),
            head: self.head.iter().map(zero).collect(),
            generation: 0,
        }
    }

    /// Incremented by every optimizer update; tapes recorded against an older
    /// generation are rejected by [`backward`].
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }

    fn denses(&self) -> impl Iterator<Item = &Dense<T>> {
        self.layers.iter().flatten().chain(&self.head)
    }

    fn denses_mut(&mut self) -> impl Iterator<Item = &mut Dense<T>> {
        self.layers.iter_mut().flatten().chain(&mut self.head)
    }

    /// All weight and bias buffers in a fixed order.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.denses()
            .flat_map(|d| [d.weight.as_slice(), d.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.denses_mut()
            .flat_map(|d| [d.weight.as_mut_slice(), d.bias.as_mut_slice()])
            .collect()
    }

    /// Human-readable names matching [`Params::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.is_some() {
                names.push(format!("layer{i}.weight"));
                names.push(format!("layer{i}.bias"));
            }
        }
        for i in 0..self.head.len() {
            names.push(format!("head{i}.weight"));
            names.push(format!("head{i}.bias"));
        }
        names
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self += scale · other`, elementwise.
    pub fn add_scaled(&mut self, other: &Params<T>, scale: T) -> Result<()> {
        let theirs = other.tensors();
        let mut ours = self.tensors_mut();
        if ours.len() != theirs.len() || ours.iter().zip(&theirs).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::invalid("parameter shapes differ"));
        }
        for (a, b) in ours.iter_mut().zip(theirs) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x = *x + scale * y;
            }
        }
        Ok(())
    }

    pub(crate) fn check_against(&self, model: &ModelSpec) -> Result<()> {
        let layers_ok = self.layers.len() == model.layers.len()
            && self.layers.iter().zip(&model.layers).all(|(p, l)| match (*l, p) {
                (LayerSpec::SharedLinear { m_in, m_out, .. }, Some(d)) => d.shape_is(m_in, m_out),
                (LayerSpec::EdgeConv { m_in, m_out, .. }, Some(d)) => d.shape_is(2 * m_in, m_out),
                (LayerSpec::DropSlot, None) => true,
                _ => false,
            });
        let mut m = model.pooled_dim();
        let head_ok = self.head.len() == model.head.len()
            && self.head.iter().zip(&model.head).all(|(d, &w)| {
                let ok = d.shape_is(m, w);
                m = w;
                ok
            });
        if !(layers_ok && head_ok) {
            return Err(Error::invalid("parameters do not match the model spec"));
        }
        Ok(())
    }
}

/// A cloud prepared for the network: its input-space KNN index and a cached
/// neighbour table deep enough for every EdgeConv layer and DropCluster.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub cloud: PointCloud<T>,
    pub index: KnnIndex<T>,
    pub table: NeighborTable,
}

impl<T: Scalar> Sample<T> {
    /// Caches `min(table_k, n - 1)` neighbours per point.
    pub fn new(cloud: PointCloud<T>, table_k: usize) -> Result<Self> {
        let index = build_knn_index(&cloud.coords)?;
        let table = index.neighbor_table(table_k.min(cloud.n() - 1))?;
        Ok(Self { cloud, index, table })
    }

    /// Table depth covering the model's EdgeConv layers and the drop spec's
    /// cluster size.
    pub fn for_model(cloud: PointCloud<T>, model: &ModelSpec, drop: &DropSpec) -> Result<Self> {
        let cluster = if drop.kind == DropKind::DropCluster { drop.gamma - 1 } else { 0 };
        Self::new(cloud, model.max_edge_k().max(cluster))
    }

    fn cluster_source(&self, gamma: usize) -> &dyn ClusterNeighbors {
        if gamma.saturating_sub(1).min(self.cloud.n() - 1) <= self.table.k() {
            &self.table
        } else {
            &self.index
        }
    }
}

#[derive(Debug, Clone)]
enum MaskMult<T> {
    Rows(Vec<T>),
    Entries(Vec<T>),
}

#[derive(Debug, Clone)]
enum Step<T> {
    Shared {
        layer: usize,
        input: Matrix<T>,
        output: Matrix<T>,
        relu: bool,
    },
    Edge {
        layer: usize,
        input: Matrix<T>,
        output: Matrix<T>,
        argmax: Vec<usize>,
        relu: bool,
    },
    Mask(MaskMult<T>),
}

/// Forward intermediates for one sample.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    steps: Vec<Step<T>>,
    pool_rows: usize,
    pool_argmax: Vec<usize>,
    head: HeadRecord<T>,
    logits: Vec<T>,
    generation: u64,
    loss_grad: Option<Vec<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    /// Sets the loss gradient with respect to the logits; required before
    /// [`backward`].
    pub fn set_loss_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.logits.len() {
            return Err(Error::invalid(format!(
                "loss gradient has {} entries for {} logits",
                grad.len(),
                self.logits.len()
            )));
        }
        self.loss_grad = Some(grad);
        Ok(())
    }
}

fn point_mask_for<T: Scalar>(drop: &DropSpec, sample: &Sample<T>, m: usize, seed: u64) -> Result<MaskMult<T>> {
    let n = sample.cloud.n();
    Ok(match drop.kind {
        DropKind::DropFeat => MaskMult::Entries(dropfeat_mask(n, m, drop.theta, seed)?.multipliers(drop.renormalize)),
        DropKind::DropPoint => MaskMult::Rows(droppoint_mask(n, drop.theta, seed)?.multipliers(drop.renormalize)),
        DropKind::DropCluster => MaskMult::Rows(
            dropcluster_mask(sample.cluster_source(drop.gamma), drop.theta, drop.gamma, seed)?
                .multipliers(drop.renormalize),
        ),
        _ => unreachable!("only feature-map kinds reach drop slots"),
    })
}

/// Full network pass for one sample.
///
/// In train mode the drop spec is realized from `seed`: input drop uses
/// `child_seed(seed, [INPUT_LAYER])`, the mask at slot `s` uses
/// `child_seed(seed, [s + 1])` and head dropout `child_seed(seed,
/// [HEAD_LAYER])`. Feature-map and head masks renormalize survivors when
/// `drop.renormalize` is set; input drop never rescales. Eval mode ignores the drop spec.
pub fn forward<T: Scalar>(
    model: &ModelSpec,
    params: &Params<T>,
    sample: &Sample<T>,
    drop: &DropSpec,
    seed: u64,
    mode: Mode,
) -> Result<(Vec<T>, Tape<T>)> {
    model.check_drop(drop)?;
    params.check_against(model)?;
    let cloud = &sample.cloud;
    if cloud.n() == 0 {
        return Err(Error::invalid("empty cloud"));
    }
    if 3 + cloud.d() != model.input_dim {
        return Err(Error::invalid(format!(
            "model expects {} input features, cloud has {}",
            model.input_dim,
            3 + cloud.d()
        )));
    }
    let training = mode == Mode::Train && drop.is_active();

    let mut x = if training && drop.kind == DropKind::InputDrop {
        let mask = droppoint_mask(cloud.n(), drop.theta, child_seed(seed, &[INPUT_LAYER]))?;
        apply_mask_to_cloud(cloud, &mask).input_matrix()
    } else {
        cloud.input_matrix()
    };

    let mut steps = Vec::with_capacity(model.layers.len());
    let mut slot = 0usize;
    for (l, (spec, weights)) in model.layers.iter().zip(&params.layers).enumerate() {
        match (*spec, weights) {
            (LayerSpec::SharedLinear { relu, .. }, Some(dense)) => {
                let mut out = dense.apply_rows(&x)?;
                if relu {
                    out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(T::zero()));
                }
                let input = std::mem::replace(&mut x, out.clone());
                steps.push(Step::Shared { layer: l, input, output: out, relu });
            }
            (LayerSpec::EdgeConv { k, relu, .. }, Some(dense)) => {
                if k >= cloud.n() {
                    return Err(Error::invalid(format!("edge conv k = {k} needs more than {} points", cloud.n())));
                }
                let (out, argmax) = edge_conv_core(dense, &x, &sample.table, k, relu)?;
                let input = std::mem::replace(&mut x, out.clone());
                steps.push(Step::Edge { layer: l, input, output: out, argmax, relu });
            }
            (LayerSpec::DropSlot, None) => {
                if training && drop.kind.uses_positions() && drop.positions.contains(&slot) {
                    let mult = point_mask_for(drop, sample, x.cols(), child_seed(seed, &[slot as u64 + 1]))?;
                    match &mult {
                        MaskMult::Rows(r) => {
                            for (i, &s) in r.iter().enumerate() {
                                x.row_mut(i).iter_mut().for_each(|v| *v = *v * s);
                            }
                        }
                        MaskMult::Entries(e) => {
                            x.as_mut_slice().iter_mut().zip(e).for_each(|(v, &s)| *v = *v * s);
                        }
                    }
                    steps.push(Step::Mask(mult));
                }
                slot += 1;
            }
            _ => return Err(Error::invalid(format!("parameters for layer {l} do not match its kind"))),
        }
    }

    let (gvec, pool_argmax) = global_max_pool(&FeatureMap::new(x, model.layers.len()))?;
    let dropout = if training && drop.kind == DropKind::MlpDropout {
        Some(mlp_dropout_mask(gvec.len(), drop.theta, child_seed(seed, &[HEAD_LAYER]))?.multipliers(drop.renormalize))
    } else {
        None
    };
    let (logits, head) = head_forward_recorded(&params.head, &gvec, dropout)?;
    let tape = Tape {
        steps,
        pool_rows: cloud.n(),
        pool_argmax,
        head,
        logits: logits.clone(),
        generation: params.generation(),
        loss_grad: None,
    };
    Ok((logits, tape))
}

/// Eval-mode logits without a tape; bitwise equal to the logits of
/// [`forward`] in [`Mode::Eval`].
pub fn predict<T: Scalar>(model: &ModelSpec, params: &Params<T>, sample: &Sample<T>) -> Result<Vec<T>> {
    params.check_against(model)?;
    let cloud = &sample.cloud;
    if cloud.n() == 0 || 3 + cloud.d() != model.input_dim {
        return Err(Error::invalid("cloud does not match the model input"));
    }
    let mut x = cloud.input_matrix();
    for (spec, weights) in model.layers.iter().zip(&params.layers) {
        match (*spec, weights) {
            (LayerSpec::SharedLinear { relu, .. }, Some(dense)) => {
                x = dense.apply_rows(&x)?;
                if relu {
                    x.as_mut_slice().iter_mut().for_each(|v| *v = v.max(T::zero()));
                }
            }
            (LayerSpec::EdgeConv { k, relu, .. }, Some(dense)) => {
                if k >= cloud.n() {
                    return Err(Error::invalid(format!("edge conv k = {k} needs more than {} points", cloud.n())));
                }
                x = edge_conv_max(dense, &x, &sample.table, k, relu)?;
            }
            (LayerSpec::DropSlot, None) => {}
            _ => return Err(Error::invalid("parameters do not match the layer kinds")),
        }
    }
    let (gvec, _) = global_max_pool(&FeatureMap::new(x, model.layers.len()))?;
    Ok(head_forward_recorded(&params.head, &gvec, None)?.0)
}

fn relu_gate<T: Scalar>(grad: &mut Matrix<T>, output: &Matrix<T>) {
    for (g, &o) in grad.as_mut_slice().iter_mut().zip(output.as_slice()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Exact reverse-mode gradients of the loss recorded on `tape` with respect
/// to every parameter.
///
/// Masks act as constant multipliers; max pooling and EdgeConv aggregation
/// route gradient to the rows recorded during the forward pass.
pub fn backward<T: Scalar>(params: &Params<T>, tape: &Tape<T>) -> Result<Params<T>> {
    let upstream = tape
        .loss_grad
        .as_ref()
        .ok_or_else(|| Error::state("tape has no loss gradient; call Tape::set_loss_grad after forward"))?;
    if tape.generation != params.generation() {
        return Err(Error::state(format!(
            "stale tape: recorded at parameter generation {}, parameters are at {}",
            tape.generation,
            params.generation()
        )));
    }
    if params.head.len() != tape.head.acts.len() {
        return Err(Error::state("tape does not belong to these parameters"));
    }
    let mut grads = params.zeros_like();

    // head
    let mut dz = upstream.clone();
    for l in (0..params.head.len()).rev() {
        let dense = &params.head[l];
        let a = &tape.head.acts[l];
        let g = &mut grads.head[l];
        for (r, &ar) in a.iter().enumerate() {
            if ar != T::zero() {
                for (w, &d) in g.weight.row_mut(r).iter_mut().zip(&dz) {
                    *w = *w + ar * d;
                }
            }
        }
        for (b, &d) in g.bias.iter_mut().zip(&dz) {
            *b = *b + d;
        }
        let mut da: Vec<T> = (0..dense.m_in())
            .map(|r| dense.weight.row(r).iter().zip(&dz).map(|(&w, &d)| w * d).sum())
            .collect();
        if l > 0 {
            // a is the ReLU output of the previous layer
            for (d, &ar) in da.iter_mut().zip(a) {
                if ar <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        dz = da;
    }
    if let Some(mult) = &tape.head.dropout {
        dz.iter_mut().zip(mult).for_each(|(d, &s)| *d = *d * s);
    }

    // pool
    let cols = dz.len();
    let mut dx = Matrix::zeros(tape.pool_rows, cols);
    for (c, (&r, &d)) in tape.pool_argmax.iter().zip(&dz).enumerate() {
        dx[(r, c)] = d;
    }

    // point layers
    for step in tape.steps.iter().rev() {
        match step {
            Step::Mask(MaskMult::Rows(r)) => {
                for (i, &s) in r.iter().enumerate() {
                    dx.row_mut(i).iter_mut().for_each(|v| *v = *v * s);
                }
            }
            Step::Mask(MaskMult::Entries(e)) => {
                dx.as_mut_slice().iter_mut().zip(e).for_each(|(v, &s)| *v = *v * s);
            }
            Step::Shared { layer, input, output, relu } => {
                let dense = params.layers[*layer]
                    .as_ref()
                    .ok_or_else(|| Error::state("tape layer has no parameters"))?;
                if *relu {
                    relu_gate(&mut dx, output);
                }
                let g = grads.layers[*layer].as_mut().expect("zeros_like mirrors params");
                g.weight = input.t_matmul(&dx)?;
                for r in dx.row_iter() {
                    for (b, &d) in g.bias.iter_mut().zip(r) {
                        *b = *b + d;
                    }
                }
                dx = dx.matmul_t(&dense.weight)?;
            }
            Step::Edge { layer, input, output, argmax, relu } => {
                let dense = params.layers[*layer]
                    .as_ref()
                    .ok_or_else(|| Error::state("tape layer has no parameters"))?;
                if *relu {
                    relu_gate(&mut dx, output);
                }
                let (u, v) = edge_factors(dense)?;
                let (n, m_out) = dx.shape();
                let mut d_self = Matrix::zeros(n, m_out);
                let mut d_nbr = Matrix::zeros(n, m_out);
                let g = grads.layers[*layer].as_mut().expect("zeros_like mirrors params");
                for i in 0..n {
                    for c in 0..m_out {
                        let d = dx[(i, c)];
                        if d == T::zero() {
                            continue;
                        }
                        d_self[(i, c)] = d_self[(i, c)] + d;
                        let j = argmax[i * m_out + c];
                        d_nbr[(j, c)] = d_nbr[(j, c)] + d;
                        g.bias[c] = g.bias[c] + d;
                    }
                }
                let du = input.t_matmul(&d_self)?;
                let dv = input.t_matmul(&d_nbr)?;
                // W_self = U + V, W_diff = V
                let m_in = u.rows();
                let w = g.weight.as_mut_slice();
                let (w_self, w_diff) = w.split_at_mut(m_in * m_out);
                w_self.copy_from_slice(du.as_slice());
                for ((wd, &dvv), &duu) in w_diff.iter_mut().zip(dv.as_slice()).zip(du.as_slice()) {
                    *wd = dvv - duu;
                }
                let mut next = d_self.matmul_t(&u)?;
                let from_nbr = d_nbr.matmul_t(&v)?;
                next.as_mut_slice()
                    .iter_mut()
                    .zip(from_nbr.as_slice())
                    .for_each(|(a, &b)| *a = *a + b);
                dx = next;
            }
        }
    }
    Ok(grads)
}
