use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::cloud::{normalize_to_unit_sphere, Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::scalar::Scalar;

/// Surface families used as synthetic classes.
///
/// Defaults: unit sphere; cube of half-extent 1; torus with major radius 0.7
/// and tube radius 0.3; closed cylinder of radius 0.5 and height 1.6, axis
/// along z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Torus { major: f64, minor: f64 },
    Cylinder { radius: f64, height: f64 },
}

impl ShapeKind {
    pub const TORUS: ShapeKind = ShapeKind::Torus {
        major: 0.7,
        minor: 0.3,
    };
    pub const CYLINDER: ShapeKind = ShapeKind::Cylinder {
        radius: 0.5,
        height: 1.6,
    };
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Sphere, ShapeKind::Cube, Self::TORUS, Self::CYLINDER];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Torus { .. } => "torus",
            ShapeKind::Cylinder { .. } => "cylinder",
        }
    }

    fn canonical_label(&self) -> usize {
        match self {
            ShapeKind::Sphere => 0,
            ShapeKind::Cube => 1,
            ShapeKind::Torus { .. } => 2,
            ShapeKind::Cylinder { .. } => 3,
        }
    }

    /// Draws `n` points uniformly (by area) on the surface, without noise or
    /// normalization.
    pub fn sample_surface(&self, n: usize, rng: &mut Stream) -> Vec<Point<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    fn sample_one(&self, rng: &mut Stream) -> Point<f64> {
        match *self {
            ShapeKind::Sphere => loop {
                let v: [f64; 3] = [
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                ];
                let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if r > 1e-12 {
                    break v.map(|x| x / r);
                }
            },
            ShapeKind::Cube => {
                let face = rng.random_range(0..6usize);
                let u = rng.random_range(-1.0..=1.0);
                let v = rng.random_range(-1.0..=1.0);
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, u, v],
                    1 => [u, s, v],
                    _ => [u, v, s],
                }
            }
            ShapeKind::Torus { major, minor } => {
                // tube angle accepted with density ∝ (R + r cos t)
                let t = loop {
                    let t = rng.random_range(0.0..2.0 * PI);
                    let accept: f64 = rng.random();
                    if accept * (major + minor) <= major + minor * t.cos() {
                        break t;
                    }
                };
                let phi = rng.random_range(0.0..2.0 * PI);
                let rho = major + minor * t.cos();
                [rho * phi.cos(), rho * phi.sin(), minor * t.sin()]
            }
            ShapeKind::Cylinder { radius, height } => {
                let lateral = 2.0 * PI * radius * height;
                let caps = 2.0 * PI * radius * radius;
                let pick: f64 = rng.random::<f64>() * (lateral + caps);
                let phi = rng.random_range(0.0..2.0 * PI);
                if pick < lateral {
                    let z = rng.random_range(-height / 2.0..=height / 2.0);
                    [radius * phi.cos(), radius * phi.sin(), z]
                } else {
                    let rho = radius * rng.random::<f64>().sqrt();
                    let z = if pick - lateral < caps / 2.0 { height / 2.0 } else { -height / 2.0 };
                    [rho * phi.cos(), rho * phi.sin(), z]
                }
            }
        }
    }

    /// Absolute distance-like residual of the surface's implicit equation at `p`;
    /// zero exactly on the surface.
    pub fn surface_residual(&self, p: &Point<f64>) -> f64 {
        let [x, y, z] = *p;
        match *self {
            ShapeKind::Sphere => ((x * x + y * y + z * z).sqrt() - 1.0).abs(),
            ShapeKind::Cube => (x.abs().max(y.abs()).max(z.abs()) - 1.0).abs(),
            ShapeKind::Torus { major, minor } => {
                let rho = (x * x + y * y).sqrt();
                ((rho - major).powi(2) + z * z - minor * minor).abs()
            }
            ShapeKind::Cylinder { radius, height } => {
                let dx = (x * x + y * y).sqrt() - radius;
                let dz = z.abs() - height / 2.0;
                let inside = dx.max(dz).min(0.0);
                let outside = dx.max(0.0).hypot(dz.max(0.0));
                (inside + outside).abs()
            }
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sphere" => Ok(ShapeKind::Sphere),
            "cube" => Ok(ShapeKind::Cube),
            "torus" => Ok(ShapeKind::TORUS),
            "cylinder" => Ok(ShapeKind::CYLINDER),
            other => Err(Error::invalid(format!(
                "unknown shape `{other}` (expected sphere, cube, torus or cylinder)"
            ))),
        }
    }
}

/// Samples a noisy, unit-sphere-normalized cloud of `n_points` on `kind`.
///
/// The result is a pure function of the arguments. Its label is the kind's
/// canonical index (sphere 0, cube 1, torus 2, cylinder 3).
pub fn generate_shape<T: Scalar>(
    kind: ShapeKind,
    n_points: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<PointCloud<T>> {
    if n_points == 0 {
        return Err(Error::invalid("n_points must be at least 1"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "noise_sigma must be finite and non-negative, got {noise_sigma}"
        )));
    }
    let mut rng = rng::stream(seed);
    let mut raw = kind.sample_surface(n_points, &mut rng);
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for p in &mut raw {
            for x in p.iter_mut() {
                *x += noise.sample(&mut rng);
            }
        }
    }
    let coords = raw.into_iter().map(|p| p.map(T::of)).collect();
    normalize_to_unit_sphere(&PointCloud::from_coords(coords, kind.canonical_label()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_samples_lie_on_surface() {
        for kind in ShapeKind::ALL {
            let mut rng = rng::stream(11);
            for p in kind.sample_surface(1000, &mut rng) {
                assert!(kind.surface_residual(&p) <= 1e-9, "{kind} residual at {p:?}");
            }
        }
    }

    #[test]
    fn noiseless_sphere_has_unit_norms() {
        let cloud = generate_shape::<f64>(ShapeKind::Sphere, 1000, 0.0, 5).unwrap();
        // centering moves the sampled centroid to the origin, so compare the
        // recentred cloud to the scale it was divided by
        for p in &cloud.coords {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!(r <= 1.0 + 1e-9);
        }
        // sample a sphere whose centroid is exactly the origin: antipodal pairs
        let mut rng = rng::stream(5);
        let half = ShapeKind::Sphere.sample_surface(500, &mut rng);
        let coords: Vec<_> = half.iter().flat_map(|p| [*p, p.map(|x| -x)]).collect();
        let out = normalize_to_unit_sphere(&PointCloud::from_coords(coords, 0)).unwrap();
        for p in &out.coords {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn torus_implicit_equation() {
        let mut rng = rng::stream(3);
        for [x, y, z] in ShapeKind::TORUS.sample_surface(1000, &mut rng) {
            let lhs = ((x * x + y * y).sqrt() - 0.7).powi(2) + z * z;
            assert!((lhs - 0.09).abs() <= 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in ShapeKind::ALL {
            let a = generate_shape::<f64>(kind, 300, 0.05, 42).unwrap();
            let b = generate_shape::<f64>(kind, 300, 0.05, 42).unwrap();
            let bits = |c: &PointCloud<f64>| -> Vec<u64> {
                c.coords.iter().flatten().map(|x| x.to_bits()).collect()
            };
            assert_eq!(bits(&a), bits(&b));
            assert_ne!(a, generate_shape::<f64>(kind, 300, 0.05, 43).unwrap());
        }
    }

    #[test]
    fn generated_clouds_are_normalized() {
        for kind in ShapeKind::ALL {
            let c = generate_shape::<f32>(kind, 200, 0.1, 9).unwrap();
            assert_eq!(c.n(), 200);
            assert!(c.max_norm() <= 1.0 + 1e-5);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(generate_shape::<f64>(ShapeKind::Cube, 0, 0.0, 1).is_err());
        assert!(generate_shape::<f64>(ShapeKind::Cube, 10, -0.1, 1).is_err());
        assert!(generate_shape::<f64>(ShapeKind::Cube, 10, f64::NAN, 1).is_err());
    }

    #[test]
    fn names_round_trip() {
        for kind in ShapeKind::ALL {
            assert_eq!(kind.name().parse::<ShapeKind>().unwrap(), kind);
        }
        assert!("pyramid".parse::<ShapeKind>().is_err());
    }
}
