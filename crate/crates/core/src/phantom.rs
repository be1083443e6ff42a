//! Synthetic tube phantoms, additive Gaussian noise, and error metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{cross, norm, Vec3};
use crate::volume::{Dims, Volume};

/// PSNR reported for identical volumes.
pub const PSNR_CAP_DB: f64 = 200.0;

/// Straight tube with a Gaussian cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    /// Any point on the axis, in voxel coordinates.
    pub point: Vec3,
    /// Unit axis direction.
    pub direction: Vec3,
    /// Gaussian width in voxels.
    pub radius: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub tubes: Vec<Tube>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tubes.iter().enumerate() {
            if !(t.radius > 0.0 && t.radius.is_finite()) {
                return Err(Error::Parameter(format!(
                    "tube {i} radius must be positive"
                )));
            }
            if (norm(&t.direction) - 1.0).abs() > 1e-9 {
                return Err(Error::Parameter(format!(
                    "tube {i} direction is not a unit vector"
                )));
            }
            if !t.intensity.is_finite() || t.point.iter().any(|c| !c.is_finite()) {
                return Err(Error::Parameter(format!("tube {i} has non-finite fields")));
            }
        }
        Ok(())
    }

    /// Two orthogonal tubes crossing at the grid center plus a third,
    /// oblique tube passing next to the crossing.
    pub fn crossing(dims: Dims) -> Self {
        let (cx, cy, cz) = dims.center();
        let c = [cx as f64, cy as f64, cz as f64];
        let s = 1.0 / 3f64.sqrt();
        Self {
            tubes: vec![
                Tube {
                    point: c,
                    direction: [1.0, 0.0, 0.0],
                    radius: 1.5,
                    intensity: 1.0,
                },
                Tube {
                    point: c,
                    direction: [0.0, 1.0, 0.0],
                    radius: 1.5,
                    intensity: 1.0,
                },
                Tube {
                    point: [c[0], c[1], c[2] + dims.nz as f64 / 4.0],
                    direction: [s, s, s],
                    radius: 1.5,
                    intensity: 0.8,
                },
            ],
        }
    }
}

/// `max_k I_k exp(−d_k² / (2 r_k²))`, `d_k` the distance to tube `k`'s axis.
pub fn phantom(spec: &PhantomSpec, dims: Dims) -> Result<Volume> {
    spec.validate()?;
    dims.check_supported()?;
    Ok(Volume::from_fn(dims, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        spec.tubes
            .iter()
            .map(|t| {
                let rel = [p[0] - t.point[0], p[1] - t.point[1], p[2] - t.point[2]];
                let d = norm(&cross(&rel, &t.direction));
                t.intensity * (-d * d / (2.0 * t.radius * t.radius)).exp()
            })
            .reduce(f64::max)
            .unwrap_or(0.0)
    }))
}

/// Adds i.i.d. `N(0, σ²)` samples drawn from ChaCha8 seeded with `seed`,
/// in voxel order.
pub fn add_noise(v: &Volume, sigma: f64, seed: u64) -> Result<Volume> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise sigma must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(v.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = v.data.iter().map(|x| x + normal.sample(&mut rng)).collect();
    Ok(Volume {
        dims: v.dims,
        spacing: v.spacing,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rel_l2: f64,
    pub rmse: f64,
    pub psnr_db: f64,
}

/// Error of `a` against reference `b`: `‖a−b‖/‖b‖` and
/// `20 log10(max|b| / rms(a−b))`, capped at [`PSNR_CAP_DB`].
pub fn metrics(a: &Volume, b: &Volume) -> Result<Metrics> {
    if a.dims != b.dims {
        return Err(Error::Dimension(format!("{} vs {}", a.dims, b.dims)));
    }
    let diff: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let rmse = (diff / a.data.len() as f64).sqrt();
    let reference = b.norm();
    let rel_l2 = if diff == 0.0 {
        0.0
    } else {
        diff.sqrt() / reference
    };
    let psnr_db = if rmse == 0.0 {
        PSNR_CAP_DB
    } else {
        (20.0 * (b.max_abs() / rmse).log10()).min(PSNR_CAP_DB)
    };
    Ok(Metrics {
        rel_l2,
        rmse,
        psnr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(dims: Dims) -> PhantomSpec {
        let (cx, cy, cz) = dims.center();
        PhantomSpec {
            tubes: vec![Tube {
                point: [cx as f64, cy as f64, cz as f64],
                direction: [0.0, 0.0, 1.0],
                radius: 2.0,
                intensity: 3.0,
            }],
        }
    }

    #[test]
    fn tube_profile() {
        let dims = Dims::cube(16);
        let v = phantom(&single(dims), dims).unwrap();
        for z in 0..16 {
            assert_eq!(v.get(8, 8, z), 3.0);
            assert!((v.get(10, 8, z) - 3.0 * (-0.5f64).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn crossing_takes_max() {
        let dims = Dims::cube(16);
        let spec = PhantomSpec {
            tubes: vec![
                Tube {
                    point: [8.0, 8.0, 8.0],
                    direction: [1.0, 0.0, 0.0],
                    radius: 1.0,
                    intensity: 1.0,
                },
                Tube {
                    point: [8.0, 8.0, 8.0],
                    direction: [0.0, 1.0, 0.0],
                    radius: 1.0,
                    intensity: 1.0,
                },
            ],
        };
        let v = phantom(&spec, dims).unwrap();
        assert_eq!(v.get(8, 8, 8), 1.0);
        assert!(PhantomSpec {
            tubes: vec![Tube {
                radius: 0.0,
                ..spec.tubes[0]
            }]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn noise_determinism_and_level() {
        let dims = Dims::cube(64);
        let v = Volume::zeros(dims);
        assert_eq!(add_noise(&v, 0.0, 1).unwrap(), v);
        let a = add_noise(&v, 0.5, 42).unwrap();
        assert_eq!(a, add_noise(&v, 0.5, 42).unwrap());
        assert_ne!(a, add_noise(&v, 0.5, 43).unwrap());
        let n = a.data.len() as f64;
        let mean = a.data.iter().sum::<f64>() / n;
        let sd = (a.data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.5).abs() < 0.02 * 0.5);
    }

    #[test]
    fn metric_examples() {
        let dims = Dims::new(4, 3, 2);
        let b = Volume::from_fn(dims, |x, y, z| (x + y + z) as f64 + 1.0);
        let m = metrics(&b, &b).unwrap();
        assert_eq!((m.rel_l2, m.psnr_db), (0.0, PSNR_CAP_DB));
        let shifted = Volume::from_data(dims, b.data.iter().map(|v| v + 0.25).collect()).unwrap();
        assert!((metrics(&shifted, &b).unwrap().rmse - 0.25).abs() < 1e-14);
        assert!((metrics(&b.scaled(2.0), &b).unwrap().rel_l2 - 1.0).abs() < 1e-14);
        assert!(metrics(&b, &Volume::zeros(Dims::cube(2))).is_err());
    }
}
