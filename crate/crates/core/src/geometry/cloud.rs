use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub type Point<T> = [T; 3];

/// An unordered set of points with optional per-point features and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    pub coords: Vec<Point<T>>,
    /// `n × d` extra features, row `i` belonging to `coords[i]`.
    pub feats: Option<Matrix<T>>,
    pub label: usize,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(coords: Vec<Point<T>>, feats: Option<Matrix<T>>, label: usize) -> Result<Self> {
        if let Some(f) = &feats {
            if f.rows() != coords.len() {
                return Err(Error::invalid(format!(
                    "feature rows ({}) do not match point count ({})",
                    f.rows(),
                    coords.len()
                )));
            }
        }
        Ok(Self {
            coords,
            feats,
            label,
        })
    }

    pub fn from_coords(coords: Vec<Point<T>>, label: usize) -> Self {
        Self {
            coords,
            feats: None,
            label,
        }
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn d(&self) -> usize {
        self.feats.as_ref().map_or(0, Matrix::cols)
    }

    /// Network input: `n × (3 + d)` rows of `[x y z f1 … fd]`.
    pub fn input_matrix(&self) -> Matrix<T> {
        let cols = 3 + self.d();
        let mut data = Vec::with_capacity(self.n() * cols);
        for (i, p) in self.coords.iter().enumerate() {
            data.extend_from_slice(p);
            if let Some(f) = &self.feats {
                data.extend_from_slice(f.row(i));
            }
        }
        Matrix::from_vec(self.n(), cols, data).expect("shape computed above")
    }

    /// Reorders points so that point `i` of the result is point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            coords: order.iter().map(|&i| self.coords[i]).collect(),
            feats: self.feats.as_ref().map(|f| f.select_rows(order)),
            label: self.label,
        }
    }

    pub fn centroid(&self) -> Point<T> {
        let n = T::of_usize(self.n().max(1));
        let mut c = [T::zero(); 3];
        for p in &self.coords {
            for k in 0..3 {
                c[k] = c[k] + p[k];
            }
        }
        c.map(|x| x / n)
    }

    pub fn max_norm(&self) -> T {
        self.coords
            .iter()
            .map(|p| norm(p))
            .fold(T::zero(), T::max)
    }
}

pub(crate) fn norm<T: Scalar>(p: &Point<T>) -> T {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Centers the cloud on its centroid and scales it so the farthest point has
/// norm 1. A cloud whose points all coincide is only centered.
pub fn normalize_to_unit_sphere<T: Scalar>(cloud: &PointCloud<T>) -> Result<PointCloud<T>> {
    if cloud.n() == 0 {
        return Err(Error::invalid("cannot normalize an empty cloud"));
    }
    let c = cloud.centroid();
    let mut coords: Vec<Point<T>> = cloud
        .coords
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let scale = coords.iter().map(norm).fold(T::zero(), T::max);
    if scale > T::zero() {
        for p in &mut coords {
            for x in p.iter_mut() {
                *x = *x / scale;
            }
        }
    }
    Ok(PointCloud {
        coords,
        feats: cloud.feats.clone(),
        label: cloud.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn halves_centered_cloud_with_norm_two() {
        let cloud = PointCloud::from_coords(vec![[2.0, 0.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]], 0);
        let out = normalize_to_unit_sphere(&cloud).unwrap();
        for (a, b) in out.coords.iter().zip(&cloud.coords) {
            for k in 0..3 {
                assert_eq!(a[k], b[k] / 2.0);
            }
        }
    }

    #[test]
    fn unit_cloud_is_a_fixed_point() {
        let cloud = PointCloud::<f64>::from_coords(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.6, 0.0], [0.0, -0.6, 0.0]], 3);
        let out = normalize_to_unit_sphere(&cloud).unwrap();
        for (a, b) in out.coords.iter().zip(&cloud.coords) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-12);
            }
        }
        assert_eq!(out.label, 3);
    }

    #[test]
    fn single_point_goes_to_origin() {
        let cloud = PointCloud::from_coords(vec![[3.0, 4.0, 0.0]], 0);
        let out = normalize_to_unit_sphere(&cloud).unwrap();
        assert_eq!(out.coords, vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn empty_cloud_rejected() {
        let cloud = PointCloud::<f64>::from_coords(vec![], 0);
        assert!(matches!(normalize_to_unit_sphere(&cloud), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn features_must_match_points() {
        let feats = Matrix::<f64>::zeros(2, 1);
        assert!(PointCloud::new(vec![[0.0; 3]], Some(feats), 0).is_err());
    }

    #[test]
    fn features_untouched_by_normalization() {
        let feats = Matrix::from_rows(&[[7.0], [8.0]]).unwrap();
        let cloud = PointCloud::new(vec![[0.0, 0.0, 5.0], [0.0, 0.0, 1.0]], Some(feats.clone()), 1).unwrap();
        let out = normalize_to_unit_sphere(&cloud).unwrap();
        assert_eq!(out.feats, Some(feats));
        assert_eq!(out.input_matrix().shape(), (2, 4));
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud<f64>> {
        prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 1..64)
            .prop_map(|coords| PointCloud::from_coords(coords, 0))
    }

    proptest! {
        #[test]
        fn normalized_cloud_is_centered_and_bounded(cloud in arb_cloud()) {
            let out = normalize_to_unit_sphere(&cloud).unwrap();
            let c = out.centroid();
            for k in 0..3 {
                prop_assert!(c[k].abs() <= 1e-9);
            }
            prop_assert!(out.max_norm() <= 1.0 + 1e-9);
        }

        #[test]
        fn normalization_is_idempotent(cloud in arb_cloud()) {
            let once = normalize_to_unit_sphere(&cloud).unwrap();
            let twice = normalize_to_unit_sphere(&once).unwrap();
            for (a, b) in once.coords.iter().zip(&twice.coords) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() <= 1e-12);
                }
            }
        }
    }
}
