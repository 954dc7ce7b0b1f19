use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Point feature map `X^(l)`: one row per point, with the identity of the
/// input point each row descends from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub values: Matrix<T>,
    pub point_ids: Vec<usize>,
    pub layer_index: usize,
}

impl<T: Scalar> FeatureMap<T> {
    /// Wraps `values` with identity point ids.
    pub fn new(values: Matrix<T>, layer_index: usize) -> Self {
        let point_ids = (0..values.rows()).collect();
        Self {
            values,
            point_ids,
            layer_index,
        }
    }

    pub fn with_ids(values: Matrix<T>, point_ids: Vec<usize>, layer_index: usize) -> Result<Self> {
        if point_ids.len() != values.rows() {
            return Err(Error::invalid(format!(
                "{} point ids for {} rows",
                point_ids.len(),
                values.rows()
            )));
        }
        Ok(Self {
            values,
            point_ids,
            layer_index,
        })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn m(&self) -> usize {
        self.values.cols()
    }

    /// Row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(order),
            point_ids: order.iter().map(|&i| self.point_ids[i]).collect(),
            layer_index: self.layer_index,
        }
    }
}
