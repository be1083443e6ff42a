//! Dense voxel grids stored x-fastest.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported grid, in voxels.
pub const MAX_VOXELS: usize = 128 * 128 * 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.nx;
        let y = (idx / self.nx) % self.ny;
        let z = idx / (self.nx * self.ny);
        (x, y, z)
    }

    /// Grid center used for centered kernels and impulses.
    pub const fn center(&self) -> (usize, usize, usize) {
        (self.nx / 2, self.ny / 2, self.nz / 2)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn check_supported(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::Dimension(format!("empty grid {self}")));
        }
        if self.len() > MAX_VOXELS {
            return Err(Error::ResourceLimit(format!(
                "grid {self} exceeds the supported {MAX_VOXELS} voxels"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Real scalar field with spacing metadata (mm per voxel).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            spacing: [1.0; 3],
            data: vec![0.0; dims.len()],
        }
    }

    pub fn from_data(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "{} samples for grid {dims}",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            spacing: [1.0; 3],
            data,
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self {
            dims,
            spacing: [1.0; 3],
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Volume) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, s: f64) -> Volume {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Surrounds the volume with `pad` zero voxels on every side.
    pub fn zero_pad(&self, pad: usize) -> Volume {
        let d = self.dims;
        let dims = Dims::new(d.nx + 2 * pad, d.ny + 2 * pad, d.nz + 2 * pad);
        let mut out = Volume::zeros(dims);
        out.spacing = self.spacing;
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    out.data[dims.index(x + pad, y + pad, z + pad)] = self.get(x, y, z);
                }
            }
        }
        out
    }

    /// Inverse of [`Volume::zero_pad`].
    pub fn crop(&self, pad: usize) -> Result<Volume> {
        let d = self.dims;
        if d.nx <= 2 * pad || d.ny <= 2 * pad || d.nz <= 2 * pad {
            return Err(Error::Dimension(format!(
                "cannot crop {pad} voxels from {d}"
            )));
        }
        let dims = Dims::new(d.nx - 2 * pad, d.ny - 2 * pad, d.nz - 2 * pad);
        let mut out = Volume::from_fn(dims, |x, y, z| self.get(x + pad, y + pad, z + pad));
        out.spacing = self.spacing;
        Ok(out)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }
}

/// Complex scalar field, used for spatial kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub data: Vec<Complex64>,
}

impl ComplexVolume {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            spacing: [1.0; 3],
            data: vec![Complex64::default(); dims.len()],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> Complex64 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn real(&self) -> Volume {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|c| c.re).collect(),
        }
    }

    pub fn imag(&self) -> Volume {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|c| c.im).collect(),
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}
