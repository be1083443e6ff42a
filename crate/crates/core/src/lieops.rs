//! Left-invariant diffusion on positions and orientations, soft
//! thresholding, and the end-to-end enhancement pipeline.
//!
//! The generator is `D11 (A1² + A2²) + D33 A3² + D44 (A4² + A5²)`, realized
//! on the sampled orientation set as
//!
//! * `A3²`: second difference along `n_i` with trilinear sampling of `x ± n_i`,
//! * `A1² + A2²`: 7-point Laplacian minus the `A3²` stencil,
//! * `A4² + A5²`: a graph Laplacian on the orientation mesh.
//!
//! Rotation about `n` (`A6`) acts trivially on the quotient and is absent.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cakewavelet::WaveletStack;
use crate::error::{Error, Result};
use crate::oscore::{self, OrientationScore};
use crate::sphere::{geodesic_distance, OrientationSet, Vec3};
use crate::volume::{Dims, Volume};

/// Iterations used to estimate the largest angular eigenvalue.
pub const POWER_ITERATIONS: usize = 20;

/// Constant diagonal diffusion tensor and integration time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    /// Lateral spatial diffusivity, voxel²/time.
    pub d11: f64,
    /// Spatial diffusivity along the orientation, voxel²/time.
    pub d33: f64,
    /// Angular diffusivity, rad²/time.
    pub d44: f64,
    pub t_end: f64,
    /// Euler step; chosen from the stability bound when `None`.
    pub dt: Option<f64>,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            d11: 0.1,
            d33: 1.0,
            d44: 0.02,
            t_end: 10.0,
            dt: None,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("D11", self.d11),
            ("D33", self.d33),
            ("D44", self.d44),
            ("t", self.t_end),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
            }
        }
        Ok(())
    }
}

/// Diagonal coefficients `(D11, D33, D44)` of the generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagonal {
    pub d11: f64,
    pub d33: f64,
    pub d44: f64,
}

/// Source of diffusion coefficients per orientation.
///
/// Implementations must be constant in space to keep the generator
/// left-invariant; the angular coefficient is shared by all orientations.
pub trait CoefficientProvider: Sync {
    fn spatial(&self, orientation: usize) -> Diagonal;
    fn angular(&self) -> f64;
}

impl CoefficientProvider for DiffusionParams {
    fn spatial(&self, _orientation: usize) -> Diagonal {
        Diagonal {
            d11: self.d11,
            d33: self.d33,
            d44: self.d44,
        }
    }

    fn angular(&self) -> f64 {
        self.d44
    }
}

/// Sparse periodic stencil as (offset, weight) pairs in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
struct Stencil {
    taps: Vec<([isize; 3], f64)>,
}

impl Stencil {
    fn from_map(map: BTreeMap<[isize; 3], f64>) -> Self {
        Self {
            taps: map.into_iter().filter(|(_, w)| *w != 0.0).collect(),
        }
    }

    fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// `Σ |w|`, a bound on the operator norm.
    fn abs_sum(&self) -> f64 {
        self.taps.iter().map(|(_, w)| w.abs()).sum()
    }

    /// `dst[x] += scale · Σ w · src[x + offset]` with periodic wrap.
    fn apply_add(&self, src: &[Complex64], dst: &mut [Complex64], dims: Dims, scale: f64) {
        let (nx, ny, nz) = (dims.nx, dims.ny, dims.nz);
        let wrap = |v: isize, n: usize| v.rem_euclid(n as isize) as usize;
        let xs: Vec<Vec<usize>> = self
            .taps
            .iter()
            .map(|(o, _)| (0..nx).map(|x| wrap(x as isize + o[0], nx)).collect())
            .collect();
        dst.par_chunks_mut(nx * ny)
            .enumerate()
            .for_each(|(z, slab)| {
                for y in 0..ny {
                    let row = &mut slab[y * nx..(y + 1) * nx];
                    for (t, (o, w)) in self.taps.iter().enumerate() {
                        let sy = wrap(y as isize + o[1], ny);
                        let sz = wrap(z as isize + o[2], nz);
                        let base = nx * (sy + ny * sz);
                        let w = scale * w;
                        for (x, out) in row.iter_mut().enumerate() {
                            *out += src[base + xs[t][x]] * w;
                        }
                    }
                }
            });
    }
}

/// Trilinear interpolation weights for sampling at `x + v`.
fn trilinear_taps(v: &Vec3, map: &mut BTreeMap<[isize; 3], f64>, scale: f64) {
    let base = [v[0].floor(), v[1].floor(), v[2].floor()];
    let frac = [v[0] - base[0], v[1] - base[1], v[2] - base[2]];
    for corner in 0..8 {
        let mut w = 1.0;
        let mut off = [0isize; 3];
        for a in 0..3 {
            let bit = (corner >> a) & 1;
            off[a] = base[a] as isize + bit as isize;
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w != 0.0 {
            *map.entry(off).or_insert(0.0) += scale * w;
        }
    }
}

fn along_map(n: &Vec3, scale: f64, map: &mut BTreeMap<[isize; 3], f64>) {
    trilinear_taps(n, map, scale);
    trilinear_taps(&[-n[0], -n[1], -n[2]], map, scale);
    *map.entry([0, 0, 0]).or_insert(0.0) -= 2.0 * scale;
}

fn laplacian_map(scale: f64, map: &mut BTreeMap<[isize; 3], f64>) {
    for a in 0..3 {
        for s in [-1isize, 1] {
            let mut off = [0isize; 3];
            off[a] = s;
            *map.entry(off).or_insert(0.0) += scale;
        }
    }
    *map.entry([0, 0, 0]).or_insert(0.0) -= 6.0 * scale;
}

/// Combined spatial stencil `a·(Δ − A3²) + b·A3²` for direction `n`.
fn spatial_stencil(n: &Vec3, lateral: f64, along: f64) -> Stencil {
    let mut map = BTreeMap::new();
    if lateral != 0.0 {
        laplacian_map(lateral, &mut map);
    }
    if along - lateral != 0.0 {
        along_map(n, along - lateral, &mut map);
    }
    Stencil::from_map(map)
}

fn apply_spatial(u: &OrientationScore, lateral: f64, along: f64) -> OrientationScore {
    let data = u
        .data
        .par_iter()
        .zip(&u.orientations.directions)
        .map(|(ui, n)| {
            let mut out = vec![Complex64::default(); ui.len()];
            spatial_stencil(n, lateral, along).apply_add(ui, &mut out, u.dims, 1.0);
            out
        })
        .collect();
    OrientationScore {
        dims: u.dims,
        spacing: u.spacing,
        orientations: u.orientations.clone(),
        data,
    }
}

/// `(n_i · ∇)²` per orientation, periodic.
pub fn along_second_derivative(u: &OrientationScore) -> OrientationScore {
    apply_spatial(u, 0.0, 1.0)
}

/// `Δ − (n_i · ∇)²` per orientation, periodic.
pub fn lateral_laplacian(u: &OrientationScore) -> OrientationScore {
    apply_spatial(u, 1.0, 0.0)
}

/// 7-point spatial Laplacian per orientation.
pub fn spatial_laplacian(u: &OrientationScore) -> OrientationScore {
    apply_spatial(u, 1.0, 1.0)
}

/// Graph Laplacian on the orientation mesh.
///
/// `(ΔU)_i = c / ŵ_i · Σ_{j~i} (U_j − U_i) / d_ij²` with `ŵ_i` the weight
/// relative to the mean and `c = 4 / mean valence`, which matches the
/// Laplace–Beltrami operator for near-uniform meshes. `w_i (ΔU)_i` is a
/// symmetric form, so the weighted total is conserved.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularLaplacian {
    rows: Vec<Vec<(usize, f64)>>,
}

impl AngularLaplacian {
    pub fn new(set: &OrientationSet) -> Result<Self> {
        if !set.has_adjacency() {
            return Err(Error::Structure(
                "angular diffusion needs an orientation mesh".into(),
            ));
        }
        set.validate()?;
        let edges: usize = set.adjacency.iter().map(Vec::len).sum();
        let valence = edges as f64 / set.len() as f64;
        let mean_w = set.weights.iter().sum::<f64>() / set.len() as f64;
        let rows = set
            .adjacency
            .iter()
            .enumerate()
            .map(|(i, nbrs)| {
                let scale = 4.0 / valence * mean_w / set.weights[i];
                nbrs.iter()
                    .map(|&j| {
                        let d = geodesic_distance(&set.directions[i], &set.directions[j]);
                        (j, scale / (d * d))
                    })
                    .collect()
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|&(j, c)| c * (v[j] - v[i])).sum())
            .collect()
    }

    /// Gershgorin bound on the spectral radius.
    pub fn gershgorin_bound(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| 2.0 * row.iter().map(|(_, c)| c).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest eigenvalue magnitude by power iteration.
    pub fn lambda_max(&self) -> f64 {
        let n = self.len();
        let mut v: Vec<f64> = (0..n).map(|i| (1.7 * i as f64 + 0.3).sin() + 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let w = self.apply_vec(&v);
            let norm_v = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let norm_w = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm_w == 0.0 {
                return 0.0;
            }
            lambda = norm_w / norm_v;
            v = w.iter().map(|x| x / norm_w).collect();
        }
        lambda
    }

    /// `dst_i += scale · (ΔU)_i` for one orientation `i`.
    fn apply_add_orientation(
        &self,
        u: &OrientationScore,
        i: usize,
        dst: &mut [Complex64],
        scale: f64,
    ) {
        let ui = &u.data[i];
        for &(j, c) in &self.rows[i] {
            let uj = &u.data[j];
            let w = scale * c;
            for ((out, a), b) in dst.iter_mut().zip(uj).zip(ui) {
                *out += (a - b) * w;
            }
        }
    }
}

pub fn angular_laplacian(u: &OrientationScore) -> Result<OrientationScore> {
    let op = AngularLaplacian::new(&u.orientations)?;
    let data = (0..u.len())
        .into_par_iter()
        .map(|i| {
            let mut out = vec![Complex64::default(); u.dims.len()];
            op.apply_add_orientation(u, i, &mut out, 1.0);
            out
        })
        .collect();
    Ok(OrientationScore {
        dims: u.dims,
        spacing: u.spacing,
        orientations: u.orientations.clone(),
        data,
    })
}

/// Euler step count and step size covering `t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub steps: usize,
    pub dt: f64,
    /// Largest admissible step.
    pub dt_limit: f64,
    pub lambda_max: f64,
}

/// Admissible step: the smaller of `1 / (2 (2 D11 + D33 + D44 λ_max))` and
/// `2 / ρ` with `ρ` a Gershgorin bound on the full generator.
pub fn plan_steps(
    set: &OrientationSet,
    coeffs: &impl CoefficientProvider,
    t_end: f64,
    dt: Option<f64>,
) -> Result<StepPlan> {
    let d44 = coeffs.angular();
    let (lambda_max, angular_bound) = if d44 > 0.0 {
        let op = AngularLaplacian::new(set)?;
        (op.lambda_max(), op.gershgorin_bound())
    } else {
        (0.0, 0.0)
    };
    let mut heuristic = 0.0f64;
    let mut rigorous = 0.0f64;
    for (i, n) in set.directions.iter().enumerate() {
        let c = coeffs.spatial(i);
        heuristic = heuristic.max(2.0 * (2.0 * c.d11 + c.d33 + d44 * lambda_max));
        // the stencil sum bounds twice its spectral radius (diagonal counted once)
        let s = spatial_stencil(n, c.d11, c.d33).abs_sum();
        rigorous = rigorous.max(s + d44 * angular_bound);
    }
    let dt_limit = if heuristic == 0.0 {
        f64::INFINITY
    } else {
        (1.0 / heuristic).min(2.0 / rigorous)
    };
    if t_end == 0.0 {
        return Ok(StepPlan {
            steps: 0,
            dt: dt.unwrap_or(0.0),
            dt_limit,
            lambda_max,
        });
    }
    let requested = match dt {
        Some(dt) if dt > dt_limit * (1.0 + 1e-12) => {
            return Err(Error::Parameter(format!(
                "dt {dt} exceeds the stability limit {dt_limit}"
            )));
        }
        Some(dt) => dt,
        None if dt_limit.is_finite() => dt_limit,
        None => t_end,
    };
    let steps = ((t_end / requested) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    Ok(StepPlan {
        steps,
        dt: t_end / steps as f64,
        dt_limit,
        lambda_max,
    })
}

/// Explicit Euler integration of the left-invariant diffusion.
pub fn diffuse(u: &OrientationScore, params: &DiffusionParams) -> Result<OrientationScore> {
    params.validate()?;
    diffuse_with(u, params, params.t_end, params.dt)
}

/// [`diffuse`] with an arbitrary coefficient provider.
pub fn diffuse_with(
    u: &OrientationScore,
    coeffs: &impl CoefficientProvider,
    t_end: f64,
    dt: Option<f64>,
) -> Result<OrientationScore> {
    let set = &u.orientations;
    let plan = plan_steps(set, coeffs, t_end, dt)?;
    let d44 = coeffs.angular();
    if plan.steps == 0
        || (d44 == 0.0
            && (0..set.len()).all(|i| {
                let c = coeffs.spatial(i);
                c.d11 == 0.0 && c.d33 == 0.0
            }))
    {
        return Ok(u.clone());
    }
    let stencils: Vec<Stencil> = set
        .directions
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let c = coeffs.spatial(i);
            spatial_stencil(n, c.d11, c.d33)
        })
        .collect();
    let angular = if d44 > 0.0 {
        Some(AngularLaplacian::new(set)?)
    } else {
        None
    };
    let dims = u.dims;
    let mut current = u.clone();
    let mut next = u.clone();
    for _ in 0..plan.steps {
        next.data.par_iter_mut().enumerate().for_each(|(i, out)| {
            out.copy_from_slice(&current.data[i]);
            if !stencils[i].is_empty() {
                stencils[i].apply_add(&current.data[i], out, dims, plan.dt);
            }
            if let Some(op) = &angular {
                op.apply_add_orientation(&current, i, out, plan.dt * d44);
            }
        });
        std::mem::swap(&mut current, &mut next);
    }
    Ok(current)
}

/// How the soft threshold treats complex values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// `|U|^p · U/|U|`.
    #[default]
    Phase,
    /// `|Re U|^p · sgn(Re U)`, discarding the imaginary part.
    RealPart,
}

/// `U ↦ |U|^p · phase(U)` with `phase(0) = 0`.
pub fn soft_threshold(
    u: &OrientationScore,
    p: f64,
    mode: ThresholdMode,
) -> Result<OrientationScore> {
    soft_threshold_scaled(u, p, mode, 1.0)
}

/// Soft threshold relative to a reference magnitude `s`:
/// `U ↦ s · Φ(U / s)`. With `s = max |U|` the map is positively homogeneous.
pub fn soft_threshold_scaled(
    u: &OrientationScore,
    p: f64,
    mode: ThresholdMode,
    s: f64,
) -> Result<OrientationScore> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Parameter(format!(
            "threshold exponent must be positive, got {p}"
        )));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Ok(u.clone());
    }
    Ok(match mode {
        ThresholdMode::Phase => u.map(|c| {
            let r = c.norm();
            if r == 0.0 {
                Complex64::default()
            } else {
                c * (s * (r / s).powf(p) / r)
            }
        }),
        ThresholdMode::RealPart => u.map(|c| {
            let r = c.re.abs();
            let v = if r == 0.0 {
                0.0
            } else {
                c.re.signum() * s * (r / s).powf(p)
            };
            Complex64::new(v, 0.0)
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Reconstruction {
    #[default]
    Exact,
    Approx,
}

/// Soft-threshold stage of the enhancement pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub p: f64,
    pub mode: ThresholdMode,
    /// Apply relative to `max |U|` instead of in absolute units.
    pub relative: bool,
}

impl Default for Threshold {
    fn default() -> Self {
        Self {
            p: 1.5,
            mode: ThresholdMode::Phase,
            relative: true,
        }
    }
}

impl Threshold {
    pub fn apply(&self, u: &OrientationScore) -> Result<OrientationScore> {
        let s = if self.relative { u.max_abs() } else { 1.0 };
        soft_threshold_scaled(u, self.p, self.mode, s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceParams {
    pub diffusion: DiffusionParams,
    pub threshold: Option<Threshold>,
    pub reconstruction: Reconstruction,
    /// Stabilizer for exact reconstruction; `1e-8 · max M` when `None`.
    pub epsilon: Option<f64>,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self {
            diffusion: DiffusionParams::default(),
            threshold: Some(Threshold::default()),
            reconstruction: Reconstruction::Exact,
            epsilon: None,
        }
    }
}

/// Reconstruction stage shared by [`enhance`] and the CLI.
pub fn reconstruct(
    u: &OrientationScore,
    stack: &WaveletStack,
    mode: Reconstruction,
    epsilon: Option<f64>,
) -> Result<Volume> {
    match mode {
        Reconstruction::Exact => {
            oscore::reconstruct_exact(u, stack, epsilon.unwrap_or_else(|| stack.default_epsilon()))
        }
        Reconstruction::Approx => Ok(oscore::reconstruct_approx(u)),
    }
}

/// Lift, diffuse, optionally threshold, and reconstruct.
pub fn enhance(f: &Volume, stack: &WaveletStack, params: &EnhanceParams) -> Result<Volume> {
    let u = oscore::forward(f, stack)?;
    let mut u = diffuse(&u, &params.diffusion)?;
    if let Some(th) = &params.threshold {
        u = th.apply(&u)?;
    }
    reconstruct(&u, stack, params.reconstruction, params.epsilon)
}
