//! Unitary 3D FFT on x-fastest complex buffers.
//!
//! Both directions scale by `1/sqrt(N)` so that the forward/inverse pair is
//! unitary and Parseval holds without extra factors. Lines are processed in
//! parallel; every line is independent, so results do not depend on the
//! thread count.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::volume::Dims;

pub struct Fft3 {
    dims: Dims,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: Dims) -> Self {
        let mut planner = FftPlanner::new();
        let forward = [
            planner.plan_fft_forward(dims.nx),
            planner.plan_fft_forward(dims.ny),
            planner.plan_fft_forward(dims.nz),
        ];
        let inverse = [
            planner.plan_fft_inverse(dims.nx),
            planner.plan_fft_inverse(dims.ny),
            planner.plan_fft_inverse(dims.nz),
        ];
        Self {
            dims,
            forward,
            inverse,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.process(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.process(data, &self.inverse);
    }

    /// Forward transform of a real buffer into a fresh spectrum.
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    fn process(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let Dims { nx, ny, nz } = self.dims;
        assert_eq!(
            data.len(),
            self.dims.len(),
            "buffer does not match FFT dims"
        );

        let px = &plans[0];
        data.par_chunks_mut(nx).for_each_init(
            || vec![Complex64::default(); px.get_inplace_scratch_len()],
            |scratch, line| px.process_with_scratch(line, scratch),
        );

        let py = &plans[1];
        data.par_chunks_mut(nx * ny).for_each_init(
            || {
                (
                    vec![Complex64::default(); ny],
                    vec![Complex64::default(); py.get_inplace_scratch_len()],
                )
            },
            |(column, scratch), slab| {
                for i in 0..nx {
                    for j in 0..ny {
                        column[j] = slab[i + nx * j];
                    }
                    py.process_with_scratch(column, scratch);
                    for j in 0..ny {
                        slab[i + nx * j] = column[j];
                    }
                }
            },
        );

        // z is strided by a full slab, so transpose into contiguous columns
        let pz = &plans[2];
        let plane = nx * ny;
        let mut columns = vec![Complex64::default(); data.len()];
        columns.par_chunks_mut(nz).enumerate().for_each_init(
            || vec![Complex64::default(); pz.get_inplace_scratch_len()],
            |scratch, (xy, column)| {
                for k in 0..nz {
                    column[k] = data[xy + plane * k];
                }
                pz.process_with_scratch(column, scratch);
            },
        );
        let scale = 1.0 / (self.dims.len() as f64).sqrt();
        data.par_chunks_mut(plane)
            .enumerate()
            .for_each(|(k, slab)| {
                for (xy, v) in slab.iter_mut().enumerate() {
                    *v = columns[xy * nz + k] * scale;
                }
            });
    }
}

/// Signed integer frequency index of bin `k` on an axis of length `n`.
pub fn signed_index(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Angular frequency of bin `k` in radians per voxel.
pub fn angular_frequency(k: usize, n: usize) -> f64 {
    2.0 * PI * signed_index(k, n) as f64 / n as f64
}

/// True for the unpaired Nyquist bin of an even-length axis.
pub fn is_nyquist(k: usize, n: usize) -> bool {
    n.is_multiple_of(2) && k == n / 2
}

/// Bin index of `-k` on an axis of length `n`.
pub fn negated_bin(k: usize, n: usize) -> usize {
    (n - k) % n
}
