//! Orientation-score transform and its inverses.
//!
//! Everything runs on the periodic DFT grid: the forward transform is a
//! pointwise multiply by `Ψ_i` in the frequency domain (the filters are
//! real, so correlation and convolution coincide up to the conjugate), and
//! exact reconstruction divides the orientation-weighted synthesis
//! `Σ_i w_i Ψ_i Û_i` by the stability map `M`. With the unitary DFT this
//! pair is an exact algebraic inverse on `{M ≥ ε}` and the M-weighted inner
//! product is an exact isometry there.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::cakewavelet::{FrequencyGrid, WaveletStack, MAX_ORIENTATIONS, NYQUIST};
use crate::error::{Error, Result};
use crate::fft::Fft3;
use crate::sphere::OrientationSet;
use crate::volume::{Dims, Volume};

/// Complex field `U(x, n_i)` stored orientation-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationScore {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub orientations: OrientationSet,
    /// `data[i][voxel]`.
    pub data: Vec<Vec<Complex64>>,
}

impl OrientationScore {
    pub fn zeros(dims: Dims, orientations: OrientationSet) -> Result<Self> {
        check_envelope(dims, orientations.len())?;
        let data = vec![vec![Complex64::default(); dims.len()]; orientations.len()];
        Ok(Self {
            dims,
            spacing: [1.0; 3],
            orientations,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().flatten().fold(0.0, |m, c| m.max(c.norm()))
    }

    /// Plain `L2(R³ × V)` norm with the orientation weights.
    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .zip(&self.orientations.weights)
            .map(|(u, w)| w * u.iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Unweighted Euclidean distance to another score, for relative errors.
    pub fn distance(&self, other: &OrientationScore) -> f64 {
        self.data
            .iter()
            .flatten()
            .zip(other.data.iter().flatten())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn euclidean_norm(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64 + Sync) -> OrientationScore {
        let data = self
            .data
            .par_iter()
            .map(|u| u.iter().map(|&c| f(c)).collect())
            .collect();
        OrientationScore {
            dims: self.dims,
            spacing: self.spacing,
            orientations: self.orientations.clone(),
            data,
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, c) in self.data.iter().flatten().enumerate() {
            if !(c.re.is_finite() && c.im.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(())
    }
}

fn check_envelope(dims: Dims, orientations: usize) -> Result<()> {
    dims.check_supported()?;
    if orientations > MAX_ORIENTATIONS {
        return Err(Error::ResourceLimit(format!(
            "{orientations} orientations exceed the supported {MAX_ORIENTATIONS}"
        )));
    }
    Ok(())
}

fn check_compatible(u: &OrientationScore, stack: &WaveletStack) -> Result<()> {
    if u.dims != stack.dims() {
        return Err(Error::Dimension(format!(
            "score grid {} vs stack grid {}",
            u.dims,
            stack.dims()
        )));
    }
    if u.len() != stack.len() {
        return Err(Error::Dimension(format!(
            "score has {} orientations, stack {}",
            u.len(),
            stack.len()
        )));
    }
    if u.orientations.directions != stack.orientations.directions {
        return Err(Error::Dimension(
            "score and stack use different orientation sets".into(),
        ));
    }
    Ok(())
}

/// `U(·, i) = IDFT(Ψ_i ⊙ DFT f)` for every orientation.
pub fn forward(f: &Volume, stack: &WaveletStack) -> Result<OrientationScore> {
    if f.dims != stack.dims() {
        return Err(Error::Dimension(format!(
            "volume grid {} vs stack grid {}",
            f.dims,
            stack.dims()
        )));
    }
    check_envelope(f.dims, stack.len())?;
    let fft = Fft3::new(f.dims);
    let spectrum = fft.forward_real(&f.data);
    let mut score = score_from_spectrum(&spectrum, stack, &fft);
    score.spacing = f.spacing;
    Ok(score)
}

fn score_from_spectrum(
    spectrum: &[Complex64],
    stack: &WaveletStack,
    fft: &Fft3,
) -> OrientationScore {
    let data = stack
        .filters
        .par_iter()
        .map(|filter| {
            let mut buf: Vec<Complex64> =
                spectrum.iter().zip(filter).map(|(s, &p)| s * p).collect();
            fft.inverse(&mut buf);
            buf
        })
        .collect();
    OrientationScore {
        dims: stack.dims(),
        spacing: [1.0; 3],
        orientations: stack.orientations.clone(),
        data,
    }
}

/// `Σ_i w_i Ψ_i ⊙ DFT U_i`, the frequency-domain adjoint of [`forward`].
fn synthesis_spectrum(u: &OrientationScore, stack: &WaveletStack, fft: &Fft3) -> Vec<Complex64> {
    let spectra: Vec<Vec<Complex64>> = u
        .data
        .par_iter()
        .map(|ui| {
            let mut buf = ui.clone();
            fft.forward(&mut buf);
            buf
        })
        .collect();
    let weights = &stack.orientations.weights;
    (0..u.dims.len())
        .into_par_iter()
        .map(|b| {
            let mut acc = Complex64::default();
            for ((s, filter), w) in spectra.iter().zip(&stack.filters).zip(weights) {
                acc += s[b] * (w * filter[b]);
            }
            acc
        })
        .collect()
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    Ok(())
}

/// Exact reconstruction with the stabilized divisor `max(M, ε)`.
pub fn reconstruct_exact(u: &OrientationScore, stack: &WaveletStack, eps: f64) -> Result<Volume> {
    check_epsilon(eps)?;
    check_compatible(u, stack)?;
    let fft = Fft3::new(u.dims);
    let mut spectrum = synthesis_spectrum(u, stack, &fft);
    spectrum
        .par_iter_mut()
        .zip(&stack.m_psi)
        .for_each(|(s, &m)| *s /= m.max(eps));
    fft.inverse(&mut spectrum);
    Ok(Volume {
        dims: u.dims,
        spacing: u.spacing,
        data: spectrum.iter().map(|c| c.re).collect(),
    })
}

/// Approximate reconstruction by integration over orientations,
/// `f(x) ≈ Σ_i w_i U(x, i)`.
pub fn reconstruct_approx(u: &OrientationScore) -> Volume {
    let weights = &u.orientations.weights;
    let data = (0..u.dims.len())
        .into_par_iter()
        .map(|x| u.data.iter().zip(weights).map(|(ui, w)| w * ui[x].re).sum())
        .collect();
    Volume {
        dims: u.dims,
        spacing: u.spacing,
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MInnerProduct {
    pub value: Complex64,
    /// Frequency bins left out because `M < ε` there.
    pub masked_bins: usize,
}

/// `(U, V)_M = Σ_i w_i Σ_ω conj(Û_i) V̂_i / M` over `{M ≥ ε}`.
pub fn m_inner_product(
    u: &OrientationScore,
    v: &OrientationScore,
    stack: &WaveletStack,
    eps: f64,
) -> Result<MInnerProduct> {
    check_epsilon(eps)?;
    check_compatible(u, stack)?;
    check_compatible(v, stack)?;
    let fft = Fft3::new(u.dims);
    let transform = |s: &OrientationScore| -> Vec<Vec<Complex64>> {
        s.data
            .par_iter()
            .map(|ui| {
                let mut buf = ui.clone();
                fft.forward(&mut buf);
                buf
            })
            .collect()
    };
    let (uh, vh) = (transform(u), transform(v));
    let masked_bins = stack.m_psi.iter().filter(|&&m| m < eps).count();
    let per_orientation: Vec<Complex64> = uh
        .par_iter()
        .zip(&vh)
        .map(|(a, b)| {
            let mut acc = Complex64::default();
            for ((x, y), &m) in a.iter().zip(b).zip(&stack.m_psi) {
                if m >= eps {
                    acc += x.conj() * y / m;
                }
            }
            acc
        })
        .collect();
    let value = per_orientation
        .iter()
        .zip(&stack.orientations.weights)
        .map(|(s, w)| s * w)
        .sum();
    Ok(MInnerProduct { value, masked_bins })
}

pub fn m_norm(u: &OrientationScore, stack: &WaveletStack, eps: f64) -> Result<f64> {
    Ok(m_inner_product(u, u, stack, eps)?.value.re.max(0.0).sqrt())
}

/// Projection onto the range of the transform, `W W^{*,ext}`.
///
/// Per frequency bin this is the orthogonal projector onto the filter
/// vector `(Ψ_i(ω))_i` in the weighted inner product, `Ψ_i Σ_j w_j Ψ_j Û_j / M`.
/// It is bounded for every `M > 0`, so no stabilizer is needed: actual
/// scores are fixed and the map is idempotent up to rounding. Bins with
/// `M = 0` carry no scores and are zeroed.
pub fn project(u: &OrientationScore, stack: &WaveletStack) -> Result<OrientationScore> {
    check_compatible(u, stack)?;
    let fft = Fft3::new(u.dims);
    let mut spectrum = synthesis_spectrum(u, stack, &fft);
    spectrum
        .par_iter_mut()
        .zip(&stack.m_psi)
        .for_each(|(s, &m)| {
            *s = if m > 0.0 {
                *s / m
            } else {
                Complex64::default()
            }
        });
    let mut out = score_from_spectrum(&spectrum, stack, &fft);
    out.spacing = u.spacing;
    Ok(out)
}

/// Zeroes every DFT coefficient with `|ω| > fraction · ρ_N`.
pub fn ball_limit(f: &Volume, fraction: f64) -> Result<Volume> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "ball fraction {fraction} not in (0, 1]"
        )));
    }
    let fft = Fft3::new(f.dims);
    let grid = FrequencyGrid::new(f.dims);
    let mut spectrum = fft.forward_real(&f.data);
    let cutoff = fraction * NYQUIST;
    spectrum.par_iter_mut().enumerate().for_each(|(b, s)| {
        if grid.radius(b) > cutoff {
            *s = Complex64::default();
        }
    });
    fft.inverse(&mut spectrum);
    Ok(Volume {
        dims: f.dims,
        spacing: f.spacing,
        data: spectrum.iter().map(|c| c.re).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub band_fraction: f64,
    /// Extremes of `M` over `0 < |ω| ≤ band_fraction · ρ_N`.
    pub band_min: f64,
    pub band_max: f64,
    pub global_min: f64,
    pub global_max: f64,
}

pub fn stability_report(stack: &WaveletStack, band_fraction: f64) -> StabilityReport {
    let grid = FrequencyGrid::new(stack.dims());
    let cutoff = band_fraction * NYQUIST;
    let (mut band_min, mut band_max) = (f64::INFINITY, 0.0f64);
    let (mut global_min, mut global_max) = (f64::INFINITY, 0.0f64);
    for (b, &m) in stack.m_psi.iter().enumerate() {
        global_min = global_min.min(m);
        global_max = global_max.max(m);
        let r = grid.radius(b);
        if r > 0.0 && r <= cutoff {
            band_min = band_min.min(m);
            band_max = band_max.max(m);
        }
    }
    StabilityReport {
        band_fraction,
        band_min,
        band_max,
        global_min,
        global_max,
    }
}

/// Refuses when `M` drops below `ε` inside the band.
pub fn check_stability(
    stack: &WaveletStack,
    band_fraction: f64,
    eps: f64,
) -> Result<StabilityReport> {
    let report = stability_report(stack, band_fraction);
    if report.band_min < eps {
        return Err(Error::Stability(format!(
            "min M = {:e} below epsilon {:e} within {} of Nyquist",
            report.band_min, eps, band_fraction
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileRow {
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// `M` statistics in equal-width shells of `|ω|` from 0 to the grid corner.
pub fn m_psi_profile(stack: &WaveletStack, shells: usize) -> Vec<ProfileRow> {
    let dims = stack.dims();
    let grid = FrequencyGrid::new(dims);
    let radii: Vec<f64> = (0..dims.len()).map(|b| grid.radius(b)).collect();
    let rho_max = radii.iter().fold(0.0f64, |m, &r| m.max(r));
    let width = rho_max / shells as f64;
    let mut rows: Vec<ProfileRow> = (0..shells)
        .map(|s| ProfileRow {
            rho_lo: s as f64 * width,
            rho_hi: (s + 1) as f64 * width,
            count: 0,
            min: f64::INFINITY,
            mean: 0.0,
            max: 0.0,
        })
        .collect();
    for (&r, &m) in radii.iter().zip(&stack.m_psi) {
        let s = ((r / width) as usize).min(shells - 1);
        let row = &mut rows[s];
        row.count += 1;
        row.min = row.min.min(m);
        row.max = row.max.max(m);
        row.mean += m;
    }
    for row in &mut rows {
        if row.count > 0 {
            row.mean /= row.count as f64;
        } else {
            row.min = 0.0;
        }
    }
    rows
}

/// CSV rendering of [`m_psi_profile`] followed by the band summary.
pub fn m_psi_report_csv(stack: &WaveletStack, shells: usize, band_fraction: f64) -> String {
    let mut out = String::from("rho_lo,rho_hi,count,min_m,mean_m,max_m\n");
    for r in m_psi_profile(stack, shells) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.rho_lo, r.rho_hi, r.count, r.min, r.mean, r.max
        ));
    }
    let s = stability_report(stack, band_fraction);
    out.push_str(&format!(
        "# band_fraction={},band_min={},band_max={},global_min={},global_max={}\n",
        s.band_fraction, s.band_min, s.band_max, s.global_min, s.global_max
    ));
    out
}
