//! 3D cake-wavelets, synthesized directly on the DFT grid.
//!
//! Each filter is polar separable, `Ψ_n(ω) = g(|ω|) h(n·ω/|ω|)`, with a
//! radial profile `g` (Gaussian times its truncated Taylor reciprocal) and a
//! zonal angular part `h = F A + antisym(A)` built from a B-spline
//! orientation window `A`. The Funk-transformed even part gives line
//! detectors in the spatial real part; the anti-symmetrized odd part gives
//! edge detectors in the spatial imaginary part.
//!
//! Filters are real-valued on the frequency grid, so they are stored as `f64`.
//! Frequencies are in radians per voxel and the Nyquist radius is `π`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, Fft3};
use crate::sh::{self, ZonalSpectrum};
use crate::sphere::{self, OrientationSet, Vec3};
use crate::volume::{ComplexVolume, Dims};

/// Nyquist radius in radians per voxel, shared by every axis.
pub const NYQUIST: f64 = PI;

/// Largest orientation count a stack or score may carry.
pub const MAX_ORIENTATIONS: usize = 162;

/// Smallest grid extent per axis for stack construction.
pub const MIN_GRID_EXTENT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DcPolicy {
    /// `Ψ_i(0) = g(0) · mean(h)`, identical for every orientation.
    SplitRealMean,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveletParams {
    /// Spherical-harmonic order `L` of the orientation window.
    pub max_order: usize,
    /// Angular window scale `s_θ` in radians.
    pub s_theta: f64,
    /// B-spline order `k`.
    pub spline_order: usize,
    /// Taylor order `N` of the radial profile.
    pub taylor_order: usize,
    /// Inflection point of `g` as a fraction of the Nyquist radius.
    pub gamma: f64,
    pub grid: Dims,
    pub dc_policy: DcPolicy,
}

impl WaveletParams {
    /// `L=16, s_θ=0.7, k=2, N=20, γ=0.85` on the given grid.
    pub fn crossing_flow(grid: Dims) -> Self {
        Self {
            max_order: 16,
            s_theta: 0.7,
            spline_order: 2,
            taylor_order: 20,
            gamma: 0.85,
            grid,
            dc_policy: DcPolicy::SplitRealMean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Parameter(format!(
                "gamma {} not in (0, 1)",
                self.gamma
            )));
        }
        if !(self.s_theta > 0.0 && self.s_theta.is_finite()) {
            return Err(Error::Parameter(format!(
                "s_theta {} must be positive",
                self.s_theta
            )));
        }
        if self.max_order < 1 {
            return Err(Error::Parameter(
                "spherical-harmonic order must be at least 1".into(),
            ));
        }
        if self.max_order > sh::MAX_FIT_ORDER {
            return Err(Error::ResourceLimit(format!(
                "spherical-harmonic order {} exceeds {}",
                self.max_order,
                sh::MAX_FIT_ORDER
            )));
        }
        Ok(())
    }

    /// Scale `t = 2(γ ρ_N)² / (1 + 2N)` of the radial profile.
    pub fn radial_scale(&self) -> f64 {
        let knee = self.gamma * NYQUIST;
        2.0 * knee * knee / (1.0 + 2.0 * self.taylor_order as f64)
    }
}

/// Centered cardinal B-spline of order `k`, supported on `|x| ≤ (k+1)/2`.
pub fn bspline(k: usize, x: f64) -> f64 {
    if k == 0 {
        return if x.abs() < 0.5 { 1.0 } else { 0.0 };
    }
    let half = (k + 1) as f64 / 2.0;
    if x.abs() >= half {
        return 0.0;
    }
    // truncated-power form: (1/k!) Σ_j (-1)^j C(k+1, j) (x + half - j)_+^k
    let mut acc = 0.0;
    let mut binom = 1.0;
    let mut factorial = 1.0;
    for i in 1..=k {
        factorial *= i as f64;
    }
    for j in 0..=k + 1 {
        let s = x + half - j as f64;
        if s > 0.0 {
            let term = binom * s.powi(k as i32);
            acc += if j % 2 == 0 { term } else { -term };
        }
        binom = binom * (k + 1 - j) as f64 / (j + 1) as f64;
    }
    (acc / factorial).max(0.0)
}

/// Radial profile `g(ρ) = e^{-ρ²/t} Σ_{q≤N} (ρ²/t)^q / q!`.
pub fn radial_profile(rho: f64, params: &WaveletParams) -> f64 {
    let s = rho * rho / params.radial_scale();
    let mut term = 1.0;
    let mut sum = 1.0;
    for q in 1..=params.taylor_order {
        term *= s / q as f64;
        sum += term;
    }
    // split the exponential so large s does not underflow before the sum
    if s > 600.0 {
        return (sum.ln() - s).exp();
    }
    (-s).exp() * sum
}

/// B-spline orientation window `A(θ) = B^k(θ/s_θ)` in the zonal basis.
///
/// `A` is scaled so that `∫ F A dσ = 1`. With that scaling the filters
/// sum to `g(ρ)` over the sphere, which is what the approximate
/// (orientation-integration) reconstruction relies on.
pub fn orientation_window(params: &WaveletParams) -> Result<ZonalSpectrum> {
    params.validate()?;
    let (k, s) = (params.spline_order, params.s_theta);
    let raw = sh::fit_zonal(|theta| bspline(k, theta / s), params.max_order)?;
    let funk_mass = 2.0 * PI * (4.0 * PI).sqrt() * raw.coeffs[0];
    if funk_mass.abs() < 1e-300 {
        return Err(Error::Data("orientation window has zero mass".into()));
    }
    Ok(raw.scaled(1.0 / funk_mass))
}

/// Even (`h_Re = F A`) and odd (`h_Im = antisym A`) angular parts.
pub fn angular_spectra(params: &WaveletParams) -> Result<(ZonalSpectrum, ZonalSpectrum)> {
    let window = orientation_window(params)?;
    Ok((sh::funk(&window), sh::antisymmetrize(&window)))
}

/// Rotated cake-wavelets for every orientation plus the stability map.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletStack {
    /// One real-valued filter per orientation, x-fastest on the DFT grid.
    pub filters: Vec<Vec<f64>>,
    pub orientations: OrientationSet,
    /// `M(ω) = Σ_i w_i Ψ_i(ω)²`.
    pub m_psi: Vec<f64>,
    pub params: WaveletParams,
}

pub fn build_wavelet_stack(set: &OrientationSet, params: &WaveletParams) -> Result<WaveletStack> {
    let (even, odd) = angular_spectra(params)?;
    build_stack_from_spectrum(set, params, &even.add(&odd))
}

/// Stack for an arbitrary zonal angular part `h`.
///
/// Bins on the Nyquist plane of an even-length axis stand for both `+π`
/// and `-π`; their value is the average over both signs so that
/// `Ψ_{-n}(ω) = Ψ_n(-ω)` holds on every bin.
pub fn build_stack_from_spectrum(
    set: &OrientationSet,
    params: &WaveletParams,
    angular: &ZonalSpectrum,
) -> Result<WaveletStack> {
    params.validate()?;
    let dims = params.grid;
    if dims.nx < MIN_GRID_EXTENT || dims.ny < MIN_GRID_EXTENT || dims.nz < MIN_GRID_EXTENT {
        return Err(Error::Dimension(format!(
            "grid {dims} is below {MIN_GRID_EXTENT} voxels per axis"
        )));
    }
    dims.check_supported()?;
    check_orientation_count(set.len())?;

    let bins = FrequencyGrid::new(dims);
    let radial: Vec<f64> = (0..dims.len())
        .into_par_iter()
        .map(|b| radial_profile(bins.radius(b), params))
        .collect();
    let dc = match params.dc_policy {
        DcPolicy::SplitRealMean => radial_profile(0.0, params) * angular.spherical_mean(),
        DcPolicy::Zero => 0.0,
    };

    let filters: Vec<Vec<f64>> = set
        .directions
        .par_iter()
        .map(|n| {
            (0..dims.len())
                .map(|b| {
                    if b == 0 {
                        return dc;
                    }
                    radial[b]
                        * bins.mean_over_nyquist_signs(b, |u| angular.eval_cos(sphere::dot(n, u)))
                })
                .collect()
        })
        .collect();

    WaveletStack::from_filters(set.clone(), params.clone(), filters)
}

fn check_orientation_count(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Parameter("empty orientation set".into()));
    }
    if n > MAX_ORIENTATIONS {
        return Err(Error::ResourceLimit(format!(
            "{n} orientations exceed the supported {MAX_ORIENTATIONS}"
        )));
    }
    Ok(())
}

/// Frequency coordinates of the DFT bins of a grid.
pub struct FrequencyGrid {
    dims: Dims,
    axes: [Vec<f64>; 3],
}

impl FrequencyGrid {
    pub fn new(dims: Dims) -> Self {
        let axis = |n: usize| {
            (0..n)
                .map(|k| fft::angular_frequency(k, n))
                .collect::<Vec<_>>()
        };
        Self {
            dims,
            axes: [axis(dims.nx), axis(dims.ny), axis(dims.nz)],
        }
    }

    pub fn omega(&self, bin: usize) -> Vec3 {
        let (x, y, z) = self.dims.coords(bin);
        [self.axes[0][x], self.axes[1][y], self.axes[2][z]]
    }

    pub fn radius(&self, bin: usize) -> f64 {
        sphere::norm(&self.omega(bin))
    }

    /// True when any coordinate of the bin sits on an unpaired Nyquist plane.
    pub fn on_nyquist_plane(&self, bin: usize) -> bool {
        let (x, y, z) = self.dims.coords(bin);
        fft::is_nyquist(x, self.dims.nx)
            || fft::is_nyquist(y, self.dims.ny)
            || fft::is_nyquist(z, self.dims.nz)
    }

    /// Bin holding `-ω`.
    pub fn negated(&self, bin: usize) -> usize {
        let (x, y, z) = self.dims.coords(bin);
        self.dims.index(
            fft::negated_bin(x, self.dims.nx),
            fft::negated_bin(y, self.dims.ny),
            fft::negated_bin(z, self.dims.nz),
        )
    }

    /// Averages `f(ω/|ω|)` over the `±π` readings of Nyquist coordinates.
    fn mean_over_nyquist_signs(&self, bin: usize, f: impl Fn(&Vec3) -> f64) -> f64 {
        let (x, y, z) = self.dims.coords(bin);
        let omega = self.omega(bin);
        let rho = sphere::norm(&omega);
        let flags = [
            fft::is_nyquist(x, self.dims.nx),
            fft::is_nyquist(y, self.dims.ny),
            fft::is_nyquist(z, self.dims.nz),
        ];
        let unit = [omega[0] / rho, omega[1] / rho, omega[2] / rho];
        if !flags.iter().any(|&f| f) {
            return f(&unit);
        }
        let mut acc = 0.0;
        let mut count = 0;
        for mask in 0u8..8 {
            if (0..3).any(|a| mask & (1 << a) != 0 && !flags[a]) {
                continue;
            }
            let mut u = unit;
            for (a, c) in u.iter_mut().enumerate() {
                if mask & (1 << a) != 0 {
                    *c = -*c;
                }
            }
            acc += f(&u);
            count += 1;
        }
        acc / count as f64
    }
}

impl WaveletStack {
    pub fn from_filters(
        orientations: OrientationSet,
        params: WaveletParams,
        filters: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let dims = params.grid;
        if filters.len() != orientations.len() {
            return Err(Error::Dimension(format!(
                "{} filters for {} orientations",
                filters.len(),
                orientations.len()
            )));
        }
        if filters.iter().any(|f| f.len() != dims.len()) {
            return Err(Error::Dimension(format!(
                "filter length does not match grid {dims}"
            )));
        }
        let m_psi = stability_map(&filters, &orientations.weights);
        Ok(Self {
            filters,
            orientations,
            m_psi,
            params,
        })
    }

    pub fn dims(&self) -> Dims {
        self.params.grid
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn m_max(&self) -> f64 {
        self.m_psi.iter().fold(0.0, |m, &v| m.max(v))
    }

    /// Default stabilization threshold `1e-8 · max M`.
    pub fn default_epsilon(&self) -> f64 {
        1e-8 * self.m_max()
    }

    /// Centered inverse DFT of filter `i`: the kernel origin sits at
    /// [`Dims::center`].
    pub fn spatial_kernel(&self, i: usize) -> Result<ComplexVolume> {
        let filter = self
            .filters
            .get(i)
            .ok_or_else(|| Error::Parameter(format!("orientation index {i} out of range")))?;
        let dims = self.dims();
        let mut buf: Vec<Complex64> = filter.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Fft3::new(dims).inverse(&mut buf);
        Ok(center_periodic(&buf, dims))
    }

    /// Crops every kernel to a `size³` patch under a raised-cosine window and
    /// reports how far the patch filters' stability map drifts from `M`.
    pub fn windowed_patches(&self, size: usize) -> Result<PatchReport> {
        let dims = self.dims();
        if size == 0 || size.is_multiple_of(2) || size > dims.nx || size > dims.ny || size > dims.nz
        {
            return Err(Error::Parameter(format!(
                "patch size {size} must be odd and fit in {dims}"
            )));
        }
        let half = (size / 2) as i64;
        let window = |d: i64| 0.5 * (1.0 + (PI * d as f64 / (half as f64 + 1.0)).cos());
        let fft = Fft3::new(dims);
        let (cx, cy, cz) = dims.center();
        let results: Vec<Result<(ComplexVolume, Vec<f64>)>> = (0..self.len())
            .into_par_iter()
            .map(|i| {
                let kernel = self.spatial_kernel(i)?;
                let mut patch = ComplexVolume::zeros(Dims::cube(size));
                let mut embedded = vec![Complex64::default(); dims.len()];
                for dz in -half..=half {
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let w = window(dx) * window(dy) * window(dz);
                            let v = kernel.get(
                                (cx as i64 + dx) as usize,
                                (cy as i64 + dy) as usize,
                                (cz as i64 + dz) as usize,
                            ) * w;
                            let p = patch.dims.index(
                                (dx + half) as usize,
                                (dy + half) as usize,
                                (dz + half) as usize,
                            );
                            patch.data[p] = v;
                            let e = dims.index(
                                dx.rem_euclid(dims.nx as i64) as usize,
                                dy.rem_euclid(dims.ny as i64) as usize,
                                dz.rem_euclid(dims.nz as i64) as usize,
                            );
                            embedded[e] = v;
                        }
                    }
                }
                fft.forward(&mut embedded);
                Ok((patch, embedded.iter().map(|c| c.norm_sqr()).collect()))
            })
            .collect();
        let mut kernels = Vec::with_capacity(self.len());
        let mut m_patch = vec![0.0; dims.len()];
        for (res, w) in results.into_iter().zip(&self.orientations.weights) {
            let (patch, power) = res?;
            for (m, p) in m_patch.iter_mut().zip(&power) {
                *m += w * p;
            }
            kernels.push(patch);
        }
        let m_max = self.m_max();
        let deviation = m_patch
            .iter()
            .zip(&self.m_psi)
            .fold(0.0, |d: f64, (a, b)| d.max((a - b).abs()))
            / m_max;
        Ok(PatchReport {
            size,
            kernels,
            m_deviation: deviation,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PatchReport {
    pub size: usize,
    pub kernels: Vec<ComplexVolume>,
    /// `max |M_patch - M| / max M`.
    pub m_deviation: f64,
}

fn stability_map(filters: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let len = filters.first().map_or(0, Vec::len);
    (0..len)
        .into_par_iter()
        .map(|b| {
            filters
                .iter()
                .zip(weights)
                .map(|(f, w)| w * f[b] * f[b])
                .sum()
        })
        .collect()
}

/// Moves the periodic origin to the grid center.
pub fn center_periodic(buf: &[Complex64], dims: Dims) -> ComplexVolume {
    let (cx, cy, cz) = dims.center();
    let mut out = ComplexVolume::zeros(dims);
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let src = dims.index(
                    (x + dims.nx - cx) % dims.nx,
                    (y + dims.ny - cy) % dims.ny,
                    (z + dims.nz - cz) % dims.nz,
                );
                out.data[dims.index(x, y, z)] = buf[src];
            }
        }
    }
    out
}
