//! Point clouds, synthetic shapes and exact nearest-neighbour queries.

mod cloud;
mod knn;
mod shapes;

pub use cloud::{normalize_to_unit_sphere, Point, PointCloud};
pub use knn::{brute_force_knn, build_knn_index, knn_query, KnnIndex, NeighborTable};
pub use shapes::{generate_shape, ShapeKind};
