//! Zonal spherical harmonics.
//!
//! Only `m = 0` harmonics are needed: the orientation window and everything
//! derived from it is rotationally symmetric about its axis. The real
//! orthonormal convention is `Y_l^0(θ) = sqrt((2l+1)/4π) P_l(cos θ)`.
//!
//! Rotating a zonal function to a new axis `n` goes through the Legendre
//! addition theorem, `h_n(ω) = Σ_l c_l sqrt((2l+1)/4π) P_l(n·ω)`, which is
//! the `m = 0` row of the Wigner-D rotation written in closed form.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{self, Vec3};

/// Highest order accepted by [`fit_zonal`].
pub const MAX_FIT_ORDER: usize = 64;

/// Coefficients `c_l`, `l = 0..=L`, of a zonal spherical function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalSpectrum {
    pub coeffs: Vec<f64>,
}

impl ZonalSpectrum {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a zonal spectrum needs at least c_0");
        Self { coeffs }
    }

    pub fn zeros(max_order: usize) -> Self {
        Self {
            coeffs: vec![0.0; max_order + 1],
        }
    }

    pub fn max_order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Evaluates at `x = cos θ`. `x` is clamped into `[-1, 1]`.
    pub fn eval_cos(&self, x: f64) -> f64 {
        let x = x.clamp(-1.0, 1.0);
        let mut p_prev = 1.0;
        let mut p = x;
        let mut acc = self.coeffs[0] * zonal_norm(0);
        for (l, &c) in self.coeffs.iter().enumerate().skip(1) {
            if l > 1 {
                let lf = (l - 1) as f64;
                let next = ((2.0 * lf + 1.0) * x * p - lf * p_prev) / (lf + 1.0);
                p_prev = p;
                p = next;
            }
            acc += c * zonal_norm(l) * p;
        }
        acc
    }

    /// Mean value over the sphere.
    pub fn spherical_mean(&self) -> f64 {
        self.coeffs[0] / (4.0 * PI).sqrt()
    }

    pub fn add(&self, other: &ZonalSpectrum) -> ZonalSpectrum {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n)
            .map(|l| {
                self.coeffs.get(l).copied().unwrap_or(0.0)
                    + other.coeffs.get(l).copied().unwrap_or(0.0)
            })
            .collect();
        ZonalSpectrum { coeffs }
    }

    pub fn scaled(&self, s: f64) -> ZonalSpectrum {
        ZonalSpectrum {
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// CSV with columns `l,c`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("l,c\n");
        for (l, c) in self.coeffs.iter().enumerate() {
            out.push_str(&format!("{l},{c}\n"));
        }
        out
    }
}

/// `sqrt((2l+1)/4π)`.
#[inline]
pub fn zonal_norm(l: usize) -> f64 {
    ((2 * l + 1) as f64 / (4.0 * PI)).sqrt()
}

/// Legendre polynomial `P_l(x)` by the three-term recurrence.
pub fn legendre(l: usize, x: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "Legendre argument {x} outside [-1, 1]"
        )));
    }
    Ok(legendre_unchecked(l, x))
}

fn legendre_unchecked(l: usize, x: f64) -> f64 {
    let (mut p_prev, mut p) = (1.0, x);
    if l == 0 {
        return 1.0;
    }
    for k in 1..l {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    p
}

/// `P_l(x)` together with its derivative, for Newton iteration on nodes.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let p = legendre_unchecked(n, x);
    let p_prev = legendre_unchecked(n - 1, x);
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `Σ_l c_l Y_l^0(θ)` for a polar angle `θ ∈ [0, π]`.
pub fn eval_zonal(spec: &ZonalSpectrum, theta: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::Domain(format!("polar angle {theta} outside [0, π]")));
    }
    Ok(spec.eval_cos(theta.cos()))
}

/// Least-squares zonal coefficients of `f(θ)` up to order `max_order`.
///
/// The projection integral runs over `cos θ` with `4(L+1)` Gauss–Legendre
/// nodes, which integrates products of basis functions exactly.
pub fn fit_zonal(f: impl Fn(f64) -> f64, max_order: usize) -> Result<ZonalSpectrum> {
    if max_order > MAX_FIT_ORDER {
        return Err(Error::ResourceLimit(format!(
            "fit order {max_order} exceeds {MAX_FIT_ORDER}"
        )));
    }
    let (nodes, weights) = gauss_legendre(4 * (max_order + 1));
    let samples: Vec<f64> = nodes
        .iter()
        .map(|&x| f(x.clamp(-1.0, 1.0).acos()))
        .collect();
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::Data(format!("non-finite sample at node {i}")));
    }
    let mut coeffs = vec![0.0; max_order + 1];
    for ((&x, &w), &s) in nodes.iter().zip(&weights).zip(&samples) {
        let (mut p_prev, mut p) = (1.0, x);
        for (l, c) in coeffs.iter_mut().enumerate() {
            let pl = match l {
                0 => 1.0,
                1 => x,
                _ => {
                    let lf = (l - 1) as f64;
                    let next = ((2.0 * lf + 1.0) * x * p - lf * p_prev) / (lf + 1.0);
                    p_prev = p;
                    p = next;
                    next
                }
            };
            *c += 2.0 * PI * w * s * zonal_norm(l) * pl;
        }
    }
    Ok(ZonalSpectrum { coeffs })
}

/// Funk transform as the coefficient map `c_l ↦ 2π P_l(0) c_l`.
pub fn funk(spec: &ZonalSpectrum) -> ZonalSpectrum {
    let coeffs = spec
        .coeffs
        .iter()
        .enumerate()
        .map(|(l, c)| 2.0 * PI * legendre_unchecked(l, 0.0) * c)
        .collect();
    ZonalSpectrum { coeffs }
}

/// Anti-symmetrization `c_l ↦ (1 - (-1)^l) c_l`: even orders vanish, odd double.
pub fn antisymmetrize(spec: &ZonalSpectrum) -> ZonalSpectrum {
    let coeffs = spec
        .coeffs
        .iter()
        .enumerate()
        .map(|(l, c)| if l % 2 == 1 { 2.0 * c } else { 0.0 })
        .collect();
    ZonalSpectrum { coeffs }
}

/// Values of the zonal function rotated to axis `n`, at each of `dirs`.
pub fn steer_zonal(spec: &ZonalSpectrum, n: &Vec3, dirs: &[Vec3]) -> Result<Vec<f64>> {
    if (sphere::norm(n) - 1.0).abs() > 1e-10 {
        return Err(Error::Domain("steering axis is not a unit vector".into()));
    }
    Ok(dirs
        .iter()
        .map(|d| spec.eval_cos(sphere::dot(n, d)))
        .collect())
}
