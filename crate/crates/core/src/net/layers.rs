use super::feature_map::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::{KnnIndex, NeighborTable};
use crate::masks::{mlp_dropout_mask, Mode};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Affine map `x · W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::invalid(format!(
                "bias length {} does not match {} outputs",
                bias.len(),
                weight.cols()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(m_in: usize, m_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(m_in, m_out),
            bias: vec![T::zero(); m_out],
        }
    }

    pub fn m_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn m_out(&self) -> usize {
        self.weight.cols()
    }

    pub(crate) fn shape_is(&self, m_in: usize, m_out: usize) -> bool {
        self.weight.shape() == (m_in, m_out) && self.bias.len() == m_out
    }

    pub(crate) fn apply_rows(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut out = x.matmul(&self.weight)?;
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *o = *o + b;
            }
        }
        Ok(out)
    }

    pub(crate) fn apply_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = self.bias.clone();
        for (k, &a) in x.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.weight.row(k)) {
                *o = *o + a * w;
            }
        }
        out
    }
}

fn relu_in_place<T: Scalar>(m: &mut Matrix<T>) {
    m.as_mut_slice().iter_mut().for_each(|x| *x = x.max(T::zero()));
}

/// Per-point dense layer: each row `x` maps to `relu(x · W + b)` (or the
/// affine value when `relu` is off), independently of every other row.
pub fn shared_linear_forward<T: Scalar>(
    dense: &Dense<T>,
    fm: &FeatureMap<T>,
    relu: bool,
) -> Result<FeatureMap<T>> {
    if fm.m() != dense.m_in() {
        return Err(Error::invalid(format!(
            "shared linear expects {} input features, got {}",
            dense.m_in(),
            fm.m()
        )));
    }
    let mut values = dense.apply_rows(&fm.values)?;
    if relu {
        relu_in_place(&mut values);
    }
    Ok(FeatureMap {
        values,
        point_ids: fm.point_ids.clone(),
        layer_index: fm.layer_index + 1,
    })
}

/// Simplified EdgeConv over a fixed input-space neighbour graph.
///
/// For every point `i` and output channel, the result is the maximum over
/// `j ∈ {i} ∪ knn(i, k)` of `[x_i ‖ x_j − x_i] · W + b` (then ReLU). `W` is the
/// stacked `2·m_in × m_out` matrix `[W_self; W_diff]`.
pub fn edge_conv_forward<T: Scalar>(
    dense: &Dense<T>,
    fm: &FeatureMap<T>,
    index: &KnnIndex<T>,
    k: usize,
    relu: bool,
) -> Result<FeatureMap<T>> {
    if k >= fm.n().max(1) {
        return Err(Error::invalid(format!("edge conv k = {k} needs more than {} points", fm.n())));
    }
    if index.n() != fm.n() {
        return Err(Error::invalid(format!(
            "neighbour index covers {} points, feature map has {}",
            index.n(),
            fm.n()
        )));
    }
    edge_conv_forward_with_table(dense, fm, &index.neighbor_table(k)?, k, relu)
}

/// [`edge_conv_forward`] with a precomputed neighbour table (first `k`
/// neighbours of each row are used).
pub fn edge_conv_forward_with_table<T: Scalar>(
    dense: &Dense<T>,
    fm: &FeatureMap<T>,
    table: &NeighborTable,
    k: usize,
    relu: bool,
) -> Result<FeatureMap<T>> {
    let (values, _) = edge_conv_core(dense, &fm.values, table, k, relu)?;
    Ok(FeatureMap {
        values,
        point_ids: fm.point_ids.clone(),
        layer_index: fm.layer_index + 1,
    })
}

/// Splits stacked edge weights into `U = W_self − W_diff` and `V = W_diff`, so
/// that the edge pre-activation is `x_i·U + x_j·V + b`.
pub(crate) fn edge_factors<T: Scalar>(dense: &Dense<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let m_in = dense.m_in() / 2;
    let m_out = dense.m_out();
    if dense.m_in() % 2 != 0 {
        return Err(Error::invalid("edge conv weight needs an even number of rows"));
    }
    let w = dense.weight.as_slice();
    let (w_self, w_diff) = w.split_at(m_in * m_out);
    let u = w_self.iter().zip(w_diff).map(|(&s, &d)| s - d).collect();
    Ok((
        Matrix::from_vec(m_in, m_out, u)?,
        Matrix::from_vec(m_in, m_out, w_diff.to_vec())?,
    ))
}

/// Returns the output map and, per `(row, channel)`, the winning neighbour row.
pub(crate) fn edge_conv_core<T: Scalar>(
    dense: &Dense<T>,
    x: &Matrix<T>,
    table: &NeighborTable,
    k: usize,
    relu: bool,
) -> Result<(Matrix<T>, Vec<usize>)> {
    let n = x.rows();
    if dense.m_in() != 2 * x.cols() {
        return Err(Error::invalid(format!(
            "edge conv expects {} input features, got {}",
            dense.m_in() / 2,
            x.cols()
        )));
    }
    if table.n() != n || table.k() < k {
        return Err(Error::invalid(format!(
            "neighbour table (n = {}, k = {}) cannot serve {n} points with k = {k}",
            table.n(),
            table.k()
        )));
    }
    let (u, v) = edge_factors(dense)?;
    let a = x.matmul(&u)?;
    let b = x.matmul(&v)?;
    let m_out = dense.m_out();
    let mut out = Matrix::zeros(n, m_out);
    let mut argmax = vec![0usize; n * m_out];
    for i in 0..n {
        let a_i = a.row(i);
        let best = out.row_mut(i);
        let arg = &mut argmax[i * m_out..(i + 1) * m_out];
        for ((o, &ac), &bc) in best.iter_mut().zip(a_i).zip(b.row(i)) {
            *o = ac + bc;
        }
        arg.fill(i);
        for &j in &table.neighbors(i)[..k] {
            for (((o, w), &ac), &bc) in best.iter_mut().zip(arg.iter_mut()).zip(a_i).zip(b.row(j)) {
                // branch-free select; the winner is unpredictable
                let e = ac + bc;
                let better = e > *o;
                *o = if better { e } else { *o };
                *w = if better { j } else { *w };
            }
        }
        for (o, &bias) in best.iter_mut().zip(&dense.bias) {
            *o = *o + bias;
        }
    }
    if relu {
        relu_in_place(&mut out);
    }
    Ok((out, argmax))
}

/// [`edge_conv_core`] without argmax bookkeeping, for inference. The maxima
/// are the same values, so outputs agree bitwise.
pub(crate) fn edge_conv_max<T: Scalar>(
    dense: &Dense<T>,
    x: &Matrix<T>,
    table: &NeighborTable,
    k: usize,
    relu: bool,
) -> Result<Matrix<T>> {
    let n = x.rows();
    if dense.m_in() != 2 * x.cols() || table.n() != n || table.k() < k {
        return Err(Error::invalid("edge conv input does not match its weights or neighbour table"));
    }
    let (u, v) = edge_factors(dense)?;
    let a = x.matmul(&u)?;
    let b = x.matmul(&v)?;
    let mut out = Matrix::zeros(n, dense.m_out());
    for i in 0..n {
        let best = out.row_mut(i);
        best.copy_from_slice(b.row(i));
        for &j in &table.neighbors(i)[..k] {
            for (o, &bc) in best.iter_mut().zip(b.row(j)) {
                *o = if bc > *o { bc } else { *o };
            }
        }
        // a_i is constant over the candidates, so it moves outside the max
        for ((o, &ac), &bias) in best.iter_mut().zip(a.row(i)).zip(&dense.bias) {
            *o = *o + ac + bias;
        }
    }
    if relu {
        relu_in_place(&mut out);
    }
    Ok(out)
}

/// Columnwise maximum over all rows, with the row that supplied each maximum
/// (lowest row on ties).
pub fn global_max_pool<T: Scalar>(fm: &FeatureMap<T>) -> Result<(Vec<T>, Vec<usize>)> {
    if fm.n() == 0 {
        return Err(Error::invalid("cannot pool an empty feature map"));
    }
    let mut best = fm.values.row(0).to_vec();
    let mut arg = vec![0usize; fm.m()];
    for r in 1..fm.n() {
        for (c, &x) in fm.values.row(r).iter().enumerate() {
            if x > best[c] {
                best[c] = x;
                arg[c] = r;
            }
        }
    }
    Ok((best, arg))
}

/// Activations recorded by the head for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct HeadRecord<T> {
    /// Dropout multipliers on the global feature (train mode only).
    pub dropout: Option<Vec<T>>,
    /// Input to each dense layer; `acts[0]` is the (masked) global feature.
    pub acts: Vec<Vec<T>>,
}

pub(crate) fn head_forward_recorded<T: Scalar>(
    head: &[Dense<T>],
    gvec: &[T],
    dropout: Option<Vec<T>>,
) -> Result<(Vec<T>, HeadRecord<T>)> {
    let first = head.first().ok_or_else(|| Error::invalid("head has no layers"))?;
    if first.m_in() != gvec.len() {
        return Err(Error::invalid(format!(
            "head expects a {}-wide global feature, got {}",
            first.m_in(),
            gvec.len()
        )));
    }
    let mut x: Vec<T> = match &dropout {
        Some(mult) => gvec.iter().zip(mult).map(|(&g, &s)| g * s).collect(),
        None => gvec.to_vec(),
    };
    let mut acts = Vec::with_capacity(head.len());
    for (l, dense) in head.iter().enumerate() {
        let mut z = dense.apply_vec(&x);
        if l + 1 < head.len() {
            z.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        acts.push(std::mem::replace(&mut x, z));
    }
    Ok((x, HeadRecord { dropout, acts }))
}

/// Dense classifier head with optional dropout on the global feature.
///
/// In train mode with `drop_theta > 0` a [`mlp_dropout_mask`] drawn from
/// `seed` is applied to `gvec` with survivor renormalization. Hidden layers
/// use ReLU; the last layer returns raw logits.
pub fn head_forward<T: Scalar>(
    head: &[Dense<T>],
    gvec: &[T],
    drop_theta: f64,
    seed: u64,
    mode: Mode,
) -> Result<Vec<T>> {
    let dropout = match mode {
        Mode::Train if drop_theta > 0.0 => Some(mlp_dropout_mask(gvec.len(), drop_theta, seed)?.multipliers(true)),
        _ => None,
    };
    Ok(head_forward_recorded(head, gvec, dropout)?.0)
}

/// Softmax cross-entropy and its gradient `softmax − onehot` w.r.t. the logits.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / sum).collect();
    grad[label] = grad[label] - T::one();
    Ok((loss, grad))
}
