//! Drop masks: input drop, head dropout, DropFeat, DropPoint and DropCluster.
//!
//! Masks are binary (`true` = kept) and are realized from an explicit seed, so
//! every mask is a pure function of its arguments. Applying a mask in
//! [`Mode::Eval`] is the identity. In [`Mode::Train`] dropped entries become
//! exactly zero and, when renormalization is requested, the survivors are
//! scaled by `total / kept`.
//!
//! DropPoint and DropCluster consume their stream identically: one uniform
//! draw per point, in point order, compared against the drop probability
//! (`theta` for DropPoint, `theta / gamma` for DropCluster centroids). With
//! `gamma = 1` the two masks are therefore bitwise equal.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{build_knn_index, KnnIndex, NeighborTable, Point, PointCloud};
use crate::net::FeatureMap;
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropKind {
    None,
    InputDrop,
    MlpDropout,
    DropFeat,
    DropPoint,
    DropCluster,
}

impl DropKind {
    pub fn name(self) -> &'static str {
        match self {
            DropKind::None => "none",
            DropKind::InputDrop => "input_drop",
            DropKind::MlpDropout => "mlp_dropout",
            DropKind::DropFeat => "drop_feat",
            DropKind::DropPoint => "drop_point",
            DropKind::DropCluster => "drop_cluster",
        }
    }

    /// Whether the kind acts on point feature maps at drop slots.
    pub fn uses_positions(self) -> bool {
        matches!(self, DropKind::DropFeat | DropKind::DropPoint | DropKind::DropCluster)
    }
}

impl fmt::Display for DropKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DropKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "none" => DropKind::None,
            "input_drop" => DropKind::InputDrop,
            "mlp_dropout" => DropKind::MlpDropout,
            "drop_feat" => DropKind::DropFeat,
            "drop_point" => DropKind::DropPoint,
            "drop_cluster" => DropKind::DropCluster,
            other => {
                return Err(Error::invalid(format!(
                    "unknown drop kind `{other}` (expected none, input_drop, mlp_dropout, drop_feat, drop_point or drop_cluster)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which regularizer to run, how hard, and at which drop slots.
#[derive(Debug, Clone, PartialEq)]
pub struct DropSpec {
    pub kind: DropKind,
    pub theta: f64,
    pub gamma: usize,
    /// Drop-slot indices (in model order) where feature-map masks apply.
    pub positions: BTreeSet<usize>,
    /// Scale survivors of feature-map and head masks by total/kept.
    pub renormalize: bool,
}

impl DropSpec {
    pub fn none() -> Self {
        Self {
            kind: DropKind::None,
            theta: 0.0,
            gamma: 1,
            positions: BTreeSet::new(),
            renormalize: true,
        }
    }

    pub fn new(kind: DropKind, theta: f64, gamma: usize, positions: impl IntoIterator<Item = usize>) -> Result<Self> {
        let spec = Self {
            kind,
            theta,
            gamma,
            positions: positions.into_iter().collect(),
            renormalize: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_theta(self.theta)?;
        if self.gamma < 1 {
            return Err(Error::invalid("gamma must be at least 1"));
        }
        if self.kind == DropKind::InputDrop && self.theta >= 1.0 {
            return Err(Error::invalid("input drop needs theta < 1"));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.kind != DropKind::None && self.theta > 0.0
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::invalid(format!("theta = {theta} outside [0, 1]")))
    }
}

/// One uniform draw per unit; `true` when the unit survives.
fn bernoulli_keep(len: usize, drop_prob: f64, seed: u64) -> Vec<bool> {
    let mut r = rng::stream(seed);
    (0..len).map(|_| r.random::<f64>() >= drop_prob).collect()
}

fn survivor_scale<T: Scalar>(total: usize, kept: usize) -> T {
    if kept == 0 {
        T::zero()
    } else {
        T::of_usize(total) / T::of_usize(kept)
    }
}

/// Entry-level binary mask `Z` over an `n × m` map.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
    pub theta: f64,
    pub seed: u64,
}

impl ElementMask {
    pub fn from_keep(rows: usize, cols: usize, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != rows * cols {
            return Err(Error::invalid(format!(
                "mask has {} entries, expected {rows}x{cols}",
                keep.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            keep,
            theta: f64::NAN,
            seed: 0,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn dropped_count(&self) -> usize {
        self.keep.len() - self.kept_count()
    }

    /// Per-entry factors: 0 for dropped, 1 (or `total / kept`) for kept.
    pub fn multipliers<T: Scalar>(&self, renormalize: bool) -> Vec<T> {
        let scale = if renormalize {
            survivor_scale(self.keep.len(), self.kept_count())
        } else {
            T::one()
        };
        self.keep.iter().map(|&k| if k { scale } else { T::zero() }).collect()
    }
}

/// Point-level binary mask `z`; for DropCluster also the sampled centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMask {
    keep: Vec<bool>,
    pub theta: f64,
    pub gamma: usize,
    pub seed: u64,
    /// Indices with `w_j = 0` (DropCluster only).
    pub centroids: Option<Vec<usize>>,
}

impl PointMask {
    pub fn from_keep(keep: Vec<bool>) -> Self {
        Self {
            keep,
            theta: f64::NAN,
            gamma: 1,
            seed: 0,
            centroids: None,
        }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    /// The mask as a 0/1 vector.
    pub fn as_binary(&self) -> Vec<u8> {
        self.keep.iter().map(|&k| u8::from(k)).collect()
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn dropped(&self) -> Vec<usize> {
        self.keep.iter().enumerate().filter(|(_, &k)| !k).map(|(i, _)| i).collect()
    }

    pub fn multipliers<T: Scalar>(&self, renormalize: bool) -> Vec<T> {
        let scale = if renormalize {
            survivor_scale(self.keep.len(), self.kept_count())
        } else {
            T::one()
        };
        self.keep.iter().map(|&k| if k { scale } else { T::zero() }).collect()
    }

    /// Bitwise equality of the realized masks, ignoring metadata.
    pub fn same_pattern(&self, other: &PointMask) -> bool {
        self.keep == other.keep
    }
}

/// DropFeat mask: every entry of an `n × m` map dropped independently with
/// probability `theta`.
pub fn dropfeat_mask(n: usize, m: usize, theta: f64, seed: u64) -> Result<ElementMask> {
    check_theta(theta)?;
    if n == 0 || m == 0 {
        return Err(Error::invalid("mask dimensions must be at least 1"));
    }
    Ok(ElementMask {
        rows: n,
        cols: m,
        keep: bernoulli_keep(n * m, theta, seed),
        theta,
        seed,
    })
}

/// Dropout mask over the `m`-wide global feature vector feeding the head.
pub fn mlp_dropout_mask(m: usize, theta: f64, seed: u64) -> Result<ElementMask> {
    dropfeat_mask(1, m, theta, seed)
}

/// DropPoint mask: every point dropped independently with probability `theta`.
pub fn droppoint_mask(n: usize, theta: f64, seed: u64) -> Result<PointMask> {
    check_theta(theta)?;
    if n == 0 {
        return Err(Error::invalid("mask length must be at least 1"));
    }
    Ok(PointMask {
        keep: bernoulli_keep(n, theta, seed),
        theta,
        gamma: 1,
        seed,
        centroids: None,
    })
}

/// Source of input-space nearest neighbours for DropCluster.
pub trait ClusterNeighbors {
    fn point_count(&self) -> usize;

    /// The `k` nearest neighbours of `i` (excluding `i`), nearest first.
    fn nearest(&self, i: usize, k: usize) -> Result<Vec<usize>>;
}

impl<T: Scalar> ClusterNeighbors for KnnIndex<T> {
    fn point_count(&self) -> usize {
        self.n()
    }

    fn nearest(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        self.query(i, k)
    }
}

/// A precomputed table answers any `k` up to the one it was built with.
impl ClusterNeighbors for NeighborTable {
    fn point_count(&self) -> usize {
        self.n()
    }

    fn nearest(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        if i >= self.n() || k > self.k() {
            return Err(Error::invalid(format!(
                "neighbour table (n = {}, k = {}) cannot answer point {i} with k = {k}",
                self.n(),
                self.k()
            )));
        }
        Ok(self.neighbors(i)[..k].to_vec())
    }
}

/// DropCluster mask: each point becomes a centroid with probability
/// `theta / gamma`; every centroid is dropped together with its
/// `min(gamma - 1, n - 1)` nearest neighbours in input coordinates.
pub fn dropcluster_mask<N: ClusterNeighbors + ?Sized>(
    neighbors: &N,
    theta: f64,
    gamma: usize,
    seed: u64,
) -> Result<PointMask> {
    check_theta(theta)?;
    if gamma == 0 {
        return Err(Error::invalid("gamma must be at least 1"));
    }
    let n = neighbors.point_count();
    if n == 0 {
        return Err(Error::invalid("mask length must be at least 1"));
    }
    let centroid_rate = theta / gamma as f64;
    let centroids: Vec<usize> = bernoulli_keep(n, centroid_rate, seed)
        .into_iter()
        .enumerate()
        .filter(|(_, keep)| !keep)
        .map(|(j, _)| j)
        .collect();
    let mut mask = cluster_mask_from_centroids(neighbors, &centroids, gamma)?;
    mask.theta = theta;
    mask.seed = seed;
    Ok(mask)
}

/// [`dropcluster_mask`] over raw coordinates, building the KNN index first.
pub fn dropcluster_mask_from_coords<T: Scalar>(
    coords: &[Point<T>],
    theta: f64,
    gamma: usize,
    seed: u64,
) -> Result<PointMask> {
    dropcluster_mask(&build_knn_index(coords)?, theta, gamma, seed)
}

/// Deterministic part of DropCluster: drops each given centroid and its
/// nearest `min(gamma - 1, n - 1)` neighbours.
pub fn cluster_mask_from_centroids<N: ClusterNeighbors + ?Sized>(
    neighbors: &N,
    centroids: &[usize],
    gamma: usize,
) -> Result<PointMask> {
    if gamma == 0 {
        return Err(Error::invalid("gamma must be at least 1"));
    }
    let n = neighbors.point_count();
    let k = (gamma - 1).min(n.saturating_sub(1));
    let mut keep = vec![true; n];
    for &j in centroids {
        if j >= n {
            return Err(Error::invalid(format!("centroid {j} out of range for {n} points")));
        }
        keep[j] = false;
        for i in neighbors.nearest(j, k)? {
            keep[i] = false;
        }
    }
    Ok(PointMask {
        keep,
        theta: f64::NAN,
        gamma,
        seed: 0,
        centroids: Some(centroids.to_vec()),
    })
}

/// Zeroes a random subset of input points (coordinates and features); the
/// point count is preserved.
pub fn input_drop<T: Scalar>(cloud: &PointCloud<T>, theta: f64, seed: u64) -> Result<PointCloud<T>> {
    check_theta(theta)?;
    if theta >= 1.0 {
        return Err(Error::invalid("input drop with theta = 1 leaves no input"));
    }
    let mask = droppoint_mask(cloud.n().max(1), theta, seed)?;
    Ok(apply_mask_to_cloud(cloud, &mask))
}

pub(crate) fn apply_mask_to_cloud<T: Scalar>(cloud: &PointCloud<T>, mask: &PointMask) -> PointCloud<T> {
    let mut out = cloud.clone();
    for (i, &keep) in mask.keep().iter().enumerate().take(cloud.n()) {
        if !keep {
            out.coords[i] = [T::zero(); 3];
            if let Some(f) = &mut out.feats {
                f.row_mut(i).iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }
    out
}

/// Hadamard product with an entry mask (train mode), identity in eval mode.
pub fn apply_element_mask<T: Scalar>(
    fm: &FeatureMap<T>,
    mask: &ElementMask,
    mode: Mode,
    renormalize: bool,
) -> Result<FeatureMap<T>> {
    if fm.values.shape() != mask.shape() {
        return Err(Error::invalid(format!(
            "mask shape {:?} does not match feature map {:?}",
            mask.shape(),
            fm.values.shape()
        )));
    }
    if mode == Mode::Eval {
        return Ok(fm.clone());
    }
    let mult = mask.multipliers::<T>(renormalize);
    let mut out = fm.clone();
    out.values
        .as_mut_slice()
        .iter_mut()
        .zip(mult)
        .for_each(|(x, s)| *x = *x * s);
    Ok(out)
}

/// Row scaling by `diag(z)` (train mode), identity in eval mode.
pub fn apply_point_mask<T: Scalar>(
    fm: &FeatureMap<T>,
    mask: &PointMask,
    mode: Mode,
    renormalize: bool,
) -> Result<FeatureMap<T>> {
    if fm.values.rows() != mask.len() {
        return Err(Error::invalid(format!(
            "mask length {} does not match {} feature rows",
            mask.len(),
            fm.values.rows()
        )));
    }
    if mode == Mode::Eval {
        return Ok(fm.clone());
    }
    let mult = mask.multipliers::<T>(renormalize);
    let mut out = fm.clone();
    for (i, s) in mult.into_iter().enumerate() {
        out.values.row_mut(i).iter_mut().for_each(|x| *x = *x * s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn line() -> Vec<Point<f64>> {
        (0..6).map(|i| [i as f64, 0.0, 0.0]).collect()
    }

    fn fm(rows: &[&[f64]]) -> FeatureMap<f64> {
        FeatureMap::new(Matrix::from_rows(rows).unwrap(), 0)
    }

    #[test]
    fn dropfeat_extremes() {
        assert_eq!(dropfeat_mask(7, 5, 0.0, 1).unwrap().kept_count(), 35);
        assert_eq!(dropfeat_mask(7, 5, 1.0, 1).unwrap().kept_count(), 0);
    }

    #[test]
    fn dropfeat_count_in_binomial_band() {
        let zeros = dropfeat_mask(100, 100, 0.1, 2024).unwrap().dropped_count();
        assert!((910..=1090).contains(&zeros), "{zeros}");
    }

    #[test]
    fn theta_range_checked() {
        assert!(dropfeat_mask(2, 2, -0.1, 0).is_err());
        assert!(droppoint_mask(2, 1.5, 0).is_err());
        assert!(mlp_dropout_mask(4, f64::NAN, 0).is_err());
        assert!(dropcluster_mask_from_coords(&line(), 2.0, 3, 0).is_err());
        assert!(DropSpec::new(DropKind::DropCluster, 1.1, 8, [0]).is_err());
        assert!(DropSpec::new(DropKind::DropCluster, 0.1, 0, [0]).is_err());
    }

    #[test]
    fn droppoint_basics() {
        assert_eq!(droppoint_mask(50, 0.0, 3).unwrap().kept_count(), 50);
        let m = droppoint_mask(10_000, 0.3, 3).unwrap();
        let frac = 1.0 - m.kept_count() as f64 / 1e4;
        assert!((0.286..=0.314).contains(&frac), "{frac}");
        assert_eq!(m, droppoint_mask(10_000, 0.3, 3).unwrap());
    }

    #[test]
    fn mlp_dropout_basics() {
        assert_eq!(mlp_dropout_mask(64, 0.0, 1).unwrap().kept_count(), 64);
        let m = mlp_dropout_mask(4096, 0.5, 8).unwrap();
        assert_eq!(m.shape(), (1, 4096));
        assert!((1952..=2144).contains(&m.dropped_count()));
        assert_eq!(m, mlp_dropout_mask(4096, 0.5, 8).unwrap());
    }

    #[test]
    fn gamma_one_is_droppoint() {
        for seed in 0..20 {
            let coords: Vec<Point<f64>> = (0..97).map(|i| [(i * 7 % 13) as f64, i as f64, 0.5]).collect();
            let a = dropcluster_mask_from_coords(&coords, 0.3, 1, seed).unwrap();
            let b = droppoint_mask(97, 0.3, seed).unwrap();
            assert!(a.same_pattern(&b));
        }
    }

    #[test]
    fn pinned_centroid_on_line() {
        let index = build_knn_index(&line()).unwrap();
        let m = cluster_mask_from_centroids(&index, &[2], 3).unwrap();
        assert_eq!(m.as_binary(), vec![1, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn gamma_larger_than_cloud_clamps() {
        let index = build_knn_index(&line()).unwrap();
        let m = cluster_mask_from_centroids(&index, &[0], 100).unwrap();
        assert_eq!(m.kept_count(), 0);
        assert!(dropcluster_mask(&index, 1.0, 100, 5).is_ok());
    }

    #[test]
    fn dropcluster_theta_zero_keeps_all() {
        let m = dropcluster_mask_from_coords(&line(), 0.0, 3, 77).unwrap();
        assert_eq!(m.kept_count(), 6);
        assert_eq!(m.centroids, Some(vec![]));
    }

    #[test]
    fn neighbor_table_source_matches_index() {
        let coords: Vec<Point<f64>> = (0..40).map(|i| [(i as f64).sin(), (i as f64 * 0.3).cos(), i as f64 * 0.01]).collect();
        let index = build_knn_index(&coords).unwrap();
        let table = index.neighbor_table(7).unwrap();
        for seed in 0..10 {
            let a = dropcluster_mask(&index, 0.4, 8, seed).unwrap();
            let b = dropcluster_mask(&table, 0.4, 8, seed).unwrap();
            assert_eq!(a, b);
        }
        assert!(dropcluster_mask(&table, 0.4, 9, 0).is_err());
    }

    #[test]
    fn input_drop_zeroes_rows() {
        let feats = Matrix::from_rows(&[[1.0], [2.0], [3.0], [4.0]]).unwrap();
        let cloud = PointCloud::new(vec![[1.0, 1.0, 1.0], [2.0, 2.0, 2.0], [3.0, 3.0, 3.0], [4.0, 4.0, 4.0]], Some(feats), 0).unwrap();
        let mask = PointMask::from_keep(vec![false, true, false, true]);
        let out = apply_mask_to_cloud(&cloud, &mask);
        assert_eq!(out.coords, vec![[0.0; 3], [2.0; 3], [0.0; 3], [4.0; 3]]);
        assert_eq!(out.feats.unwrap().as_slice(), &[0.0, 2.0, 0.0, 4.0]);

        assert_eq!(input_drop(&cloud, 0.0, 4).unwrap(), cloud);
        assert_eq!(input_drop(&cloud, 0.5, 4).unwrap(), input_drop(&cloud, 0.5, 4).unwrap());
        assert!(input_drop(&cloud, 1.0, 4).is_err());
    }

    #[test]
    fn element_mask_application() {
        let x = fm(&[&[1.0, -2.0], &[3.0, 4.0]]);
        let ones = ElementMask::from_keep(2, 2, vec![true; 4]).unwrap();
        assert_eq!(apply_element_mask(&x, &ones, Mode::Train, true).unwrap(), x);

        let half = ElementMask::from_keep(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(apply_element_mask(&x, &half, Mode::Eval, true).unwrap(), x);

        let all = fm(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let out = apply_element_mask(&all, &half, Mode::Train, true).unwrap();
        assert_eq!(out.values.as_slice(), &[2.0, 0.0, 0.0, 2.0]);
        let out = apply_element_mask(&all, &half, Mode::Train, false).unwrap();
        assert_eq!(out.values.as_slice(), &[1.0, 0.0, 0.0, 1.0]);

        let none = ElementMask::from_keep(2, 2, vec![false; 4]).unwrap();
        let out = apply_element_mask(&all, &none, Mode::Train, true).unwrap();
        assert!(out.values.as_slice().iter().all(|&v| v == 0.0));

        let wrong = ElementMask::from_keep(1, 4, vec![true; 4]).unwrap();
        assert!(apply_element_mask(&all, &wrong, Mode::Train, true).is_err());
    }

    #[test]
    fn point_mask_application() {
        let x = fm(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let ones = PointMask::from_keep(vec![true; 4]);
        assert_eq!(apply_point_mask(&x, &ones, Mode::Train, true).unwrap(), x);

        let m = PointMask::from_keep(vec![true, false, true, false]);
        let out = apply_point_mask(&x, &m, Mode::Train, true).unwrap();
        assert_eq!(out.values.as_slice(), &[2.0, 2.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
        let raw = apply_point_mask(&x, &m, Mode::Train, false).unwrap();
        assert_eq!(raw.values.row(1), &[0.0, 0.0]);
        assert_eq!(raw.values.row(3), &[0.0, 0.0]);
        assert_eq!(apply_point_mask(&x, &m, Mode::Eval, true).unwrap(), x);
        assert!(apply_point_mask(&x, &PointMask::from_keep(vec![true; 3]), Mode::Train, true).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            DropKind::None,
            DropKind::InputDrop,
            DropKind::MlpDropout,
            DropKind::DropFeat,
            DropKind::DropPoint,
            DropKind::DropCluster,
        ] {
            assert_eq!(k.name().parse::<DropKind>().unwrap(), k);
        }
    }
}
