use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::cloud::Point;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LEAF_SIZE: usize = 8;

fn sq_dist<T: Scalar>(a: &Point<T>, b: &Point<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Neighbour candidate ordered by `(distance, index)`.
#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    dist: T,
    idx: usize,
}

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Candidate<T> {}

impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // coordinates are validated finite, so distances are never NaN
        self.dist
            .partial_cmp(&other.dist)
            .unwrap_or(Ordering::Equal)
            .then(self.idx.cmp(&other.idx))
    }
}

fn check_query(n: usize, query_idx: usize, k: usize) -> Result<()> {
    if query_idx >= n {
        return Err(Error::invalid(format!(
            "query index {query_idx} out of range for {n} points"
        )));
    }
    if k > n - 1 {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} other points available",
            n - 1
        )));
    }
    Ok(())
}

/// Reference k-nearest-neighbour search by full sort.
///
/// Returns the `k` points other than `query_idx` with the smallest squared
/// Euclidean distance, sorted by `(distance, index)`.
pub fn brute_force_knn<T: Scalar>(coords: &[Point<T>], query_idx: usize, k: usize) -> Result<Vec<usize>> {
    check_query(coords.len(), query_idx, k)?;
    let q = coords[query_idx];
    let mut all: Vec<Candidate<T>> = coords
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query_idx)
        .map(|(idx, p)| Candidate {
            dist: sq_dist(&q, p),
            idx,
        })
        .collect();
    all.sort();
    Ok(all.into_iter().take(k).map(|c| c.idx).collect())
}

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Exact kd-tree over a fixed coordinate set.
///
/// Answers [`knn_query`] with results identical to [`brute_force_knn`],
/// including the `(distance, index)` tie-break. Immutable once built.
#[derive(Debug, Clone)]
pub struct KnnIndex<T> {
    coords: Vec<Point<T>>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

/// Builds a [`KnnIndex`] over `coords`.
pub fn build_knn_index<T: Scalar>(coords: &[Point<T>]) -> Result<KnnIndex<T>> {
    KnnIndex::new(coords)
}

/// `k` nearest neighbours of point `query_idx`, excluding itself.
pub fn knn_query<T: Scalar>(index: &KnnIndex<T>, query_idx: usize, k: usize) -> Result<Vec<usize>> {
    index.query(query_idx, k)
}

impl<T: Scalar> KnnIndex<T> {
    pub fn new(coords: &[Point<T>]) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("cannot index an empty point set"));
        }
        if let Some(i) = coords.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        let mut index = Self {
            coords: coords.to_vec(),
            order: (0..coords.len()).collect(),
            nodes: Vec::new(),
        };
        index.build(0, coords.len());
        Ok(index)
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Point<T>] {
        &self.coords
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let coords = &self.coords;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a][axis]
                .partial_cmp(&coords[b][axis])
                .unwrap_or(Ordering::Equal)
        });
        let value = self.coords[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [T::infinity(); 3];
        let mut hi = [T::neg_infinity(); 3];
        for &i in &self.order[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(self.coords[i][k]);
                hi[k] = hi[k].max(self.coords[i][k]);
            }
        }
        (0..3)
            .max_by(|&a, &b| {
                (hi[a] - lo[a])
                    .partial_cmp(&(hi[b] - lo[b]))
                    .unwrap_or(Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .unwrap_or(0)
    }

    /// `k` nearest neighbours of point `query_idx`, excluding itself, sorted by
    /// `(squared distance, index)`.
    pub fn query(&self, query_idx: usize, k: usize) -> Result<Vec<usize>> {
        check_query(self.n(), query_idx, k)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query_idx, k, &mut heap);
        Ok(heap.into_sorted_vec().into_iter().map(|c| c.idx).collect())
    }

    fn search(&self, node: usize, query_idx: usize, k: usize, heap: &mut BinaryHeap<Candidate<T>>) {
        let q = &self.coords[query_idx];
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start..end] {
                    if idx == query_idx {
                        continue;
                    }
                    let cand = Candidate {
                        dist: sq_dist(q, &self.coords[idx]),
                        idx,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if heap.peek().is_some_and(|worst| cand < *worst) {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= T::zero() { (left, right) } else { (right, left) };
                self.search(near, query_idx, k, heap);
                // `<=` keeps equal-distance points with lower indices reachable
                let visit_far = heap.len() < k || heap.peek().is_some_and(|worst| diff * diff <= worst.dist);
                if visit_far {
                    self.search(far, query_idx, k, heap);
                }
            }
        }
    }

    /// Precomputes the `k` nearest neighbours of every point.
    pub fn neighbor_table(&self, k: usize) -> Result<NeighborTable> {
        let n = self.n();
        if k > n - 1 {
            return Err(Error::invalid(format!(
                "k = {k} exceeds the {} other points available",
                n - 1
            )));
        }
        let mut flat = Vec::with_capacity(n * k);
        for i in 0..n {
            flat.extend(self.query(i, k)?);
        }
        Ok(NeighborTable { n, k, flat })
    }
}

/// Cached `k`-nearest-neighbour lists for every point of a cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    n: usize,
    k: usize,
    flat: Vec<usize>,
}

impl NeighborTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbours of point `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.flat[i * self.k..(i + 1) * self.k]
    }
}
