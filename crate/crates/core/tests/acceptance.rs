//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orient3d::cakewavelet::{
    self, build_stack_from_spectrum, build_wavelet_stack, WaveletParams, WaveletStack,
};
use orient3d::fft::Fft3;
use orient3d::lieops::{self, DiffusionParams, EnhanceParams};
use orient3d::oscore::{self, OrientationScore};
use orient3d::phantom::{self, PhantomSpec};
use orient3d::sh::{self, ZonalSpectrum};
use orient3d::sphere::{self, icosphere, OrientationSet, Vec3};
use orient3d::volume::{Dims, Volume};

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn grid() -> Dims {
    Dims::cube(32)
}

fn reference_stack() -> WaveletStack {
    build_wavelet_stack(
        &icosphere(1).unwrap(),
        &WaveletParams::crossing_flow(grid()),
    )
    .unwrap()
}

fn random_volume(dims: Dims, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0))
}

fn random_ball_limited(dims: Dims, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Volume::from_fn(dims, |_, _, _| rng.random_range(0.0..1.0));
    oscore::ball_limit(&v, 0.8).unwrap()
}

fn random_score(stack: &WaveletStack, seed: u64) -> OrientationScore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = OrientationScore::zeros(stack.dims(), stack.orientations.clone()).unwrap();
    for c in u.data.iter_mut().flatten() {
        *c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    u
}

fn discrete_exactness(stack: &WaveletStack) -> Outcome {
    let start = Instant::now();
    let f = random_volume(grid(), 1);
    let u = oscore::forward(&f, stack).unwrap();
    let g = oscore::reconstruct_exact(&u, stack, stack.default_epsilon()).unwrap();
    let fft = Fft3::new(grid());
    let (fh, gh) = (fft.forward_real(&f.data), fft.forward_real(&g.data));
    let (mut num, mut den) = (0.0, 0.0);
    for b in 0..fh.len() {
        if stack.m_psi[b] >= 0.01 {
            num += (fh[b] - gh[b]).norm_sqr();
            den += fh[b].norm_sqr();
        }
    }
    let err = (num / den).sqrt();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        err <= 1e-6 && secs < 30.0,
        format!("relative error {err:.3e} on M >= 0.01 (limit 1e-6), {secs:.2} s"),
    )
}

fn isometry(stack: &WaveletStack) -> Outcome {
    let eps = stack.default_epsilon();
    let mut worst = 0.0f64;
    for pair in 0..10 {
        let f = random_ball_limited(grid(), 100 + 2 * pair);
        let g = random_ball_limited(grid(), 101 + 2 * pair);
        let (uf, ug) = (
            oscore::forward(&f, stack).unwrap(),
            oscore::forward(&g, stack).unwrap(),
        );
        let ip = oscore::m_inner_product(&uf, &ug, stack, eps).unwrap().value;
        let exact = f.dot(&g);
        worst = worst.max((Complex64::new(exact, 0.0) - ip).norm() / exact.abs());
    }
    outcome(
        worst <= 1e-6,
        format!("worst relative deviation {worst:.3e} over 10 pairs (limit 1e-6)"),
    )
}

fn projection(stack: &WaveletStack) -> Outcome {
    let wf = oscore::forward(&random_volume(grid(), 7), stack).unwrap();
    let p = oscore::project(&wf, stack).unwrap();
    let fixed = p.distance(&wf) / wf.euclidean_norm();
    let pu = oscore::project(&random_score(stack, 8), stack).unwrap();
    let ppu = oscore::project(&pu, stack).unwrap();
    let idem = ppu.distance(&pu) / pu.euclidean_norm();
    outcome(
        fixed <= 1e-6 && idem <= 1e-6,
        format!("|P(Wf)-Wf| {fixed:.3e}, |P(PU)-PU| {idem:.3e} (limit 1e-6)"),
    )
}

fn great_circle_integral(l: usize, u: &Vec3, nodes: usize) -> f64 {
    let helper = if u[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let a = sphere::normalize(&sphere::cross(u, &helper));
    let b = sphere::cross(u, &a);
    let h = 2.0 * PI / nodes as f64;
    (0..nodes)
        .map(|k| {
            let t = k as f64 * h;
            let p = [
                a[0] * t.cos() + b[0] * t.sin(),
                a[1] * t.cos() + b[1] * t.sin(),
                a[2] * t.cos() + b[2] * t.sin(),
            ];
            sh::zonal_norm(l) * sh::legendre(l, p[2].clamp(-1.0, 1.0)).unwrap()
        })
        .sum::<f64>()
        * h
}

fn funk_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let theta = rng.random_range(0.0..PI);
        let phi = rng.random_range(0.0..2.0 * PI);
        let u = [
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        ];
        for l in 0..=16 {
            let mut unit = ZonalSpectrum::zeros(16);
            unit.coeffs[l] = 1.0;
            let predicted = sh::funk(&unit).eval_cos(u[2]);
            worst = worst.max((great_circle_integral(l, &u, 512) - predicted).abs());
        }
    }
    outcome(
        worst <= 1e-8,
        format!("max deviation {worst:.3e} for l <= 16 at 20 directions (limit 1e-8)"),
    )
}

/// `Σ z² ψ² / Σ x² ψ²` about the grid center: above 1 for structures
/// elongated along `e_z`, below 1 for structures spread across it.
fn axial_anisotropy(kernel: &Volume) -> f64 {
    let (cx, _, cz) = kernel.dims.center();
    let (mut axial, mut lateral) = (0.0, 0.0);
    for (idx, v) in kernel.data.iter().enumerate() {
        let (x, _, z) = kernel.dims.coords(idx);
        let (dx, dz) = (x as f64 - cx as f64, z as f64 - cz as f64);
        axial += dz * dz * v * v;
        lateral += dx * dx * v * v;
    }
    axial / lateral
}

fn wavelet_structure(stack: &WaveletStack) -> Outcome {
    let mut parity = 0.0f64;
    let dims = stack.dims();
    let (cx, cy, cz) = dims.center();
    for i in [0, 13, 41] {
        let k = stack.spatial_kernel(i).unwrap();
        let scale = k.data.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    let a = k.get(x, y, z);
                    let b = k.get(
                        (2 * cx + dims.nx - x) % dims.nx,
                        (2 * cy + dims.ny - y) % dims.ny,
                        (2 * cz + dims.nz - z) % dims.nz,
                    );
                    parity = parity
                        .max((a.re - b.re).abs() / scale)
                        .max((a.im + b.im).abs() / scale);
                }
            }
        }
    }
    let params = WaveletParams::crossing_flow(Dims::cube(31));
    let (even, odd) = cakewavelet::angular_spectra(&params).unwrap();
    let even_clean = even.coeffs.iter().skip(1).step_by(2).all(|&c| c == 0.0);
    let odd_clean = odd.coeffs.iter().step_by(2).all(|&c| c == 0.0);

    let axis = OrientationSet::from_directions(vec![[0.0, 0.0, 1.0]]).unwrap();
    // anisotropy of the Funk-transformed (line) and raw even (plate) kernels
    let shapes = |params: &WaveletParams| -> (f64, f64) {
        let window = cakewavelet::orientation_window(params).unwrap();
        let even_window = ZonalSpectrum::new(
            window
                .coeffs
                .iter()
                .enumerate()
                .map(|(l, &c)| if l % 2 == 0 { c } else { 0.0 })
                .collect(),
        );
        let kernel = |h: &ZonalSpectrum| {
            build_stack_from_spectrum(&axis, params, h)
                .unwrap()
                .spatial_kernel(0)
                .unwrap()
                .real()
        };
        (
            axial_anisotropy(&kernel(&sh::funk(&window))),
            axial_anisotropy(&kernel(&even_window)),
        )
    };
    let (line, plate) = shapes(&WaveletParams {
        s_theta: 0.4,
        ..params.clone()
    });
    let (wide_line, wide_plate) = shapes(&params);
    let dichotomy = line >= 2.0 && plate <= 0.5 && wide_line >= 2.0 * wide_plate;
    outcome(
        parity <= 1e-10 && even_clean && odd_clean && dichotomy,
        format!(
            "parity residual {parity:.3e} (limit 1e-10), even/odd spectra clean {even_clean}/{odd_clean}, \
             anisotropy at s_theta 0.4 line {line:.2} (>= 2) plate {plate:.2} (<= 0.5), \
             at s_theta 0.7 line/plate {:.2} (>= 2)",
            wide_line / wide_plate
        ),
    )
}

fn stability_coverage(stack: &WaveletStack, scratch: &Path) -> Outcome {
    let report = oscore::stability_report(stack, 0.8);
    let stack_path = scratch.join("criterion6.stk");
    orient3d::io::write_stack(
        &stack_path,
        stack,
        orient3d::io::Dtype::Real64,
        &Default::default(),
    )
    .unwrap();
    let csv_path = scratch.join("criterion6.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_orient3d"))
        .args(["mpsi-report", "--stack"])
        .arg(&stack_path)
        .arg("--out")
        .arg(&csv_path)
        .status()
        .unwrap();
    let csv = std::fs::read_to_string(&csv_path).unwrap_or_default();
    let rows = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        .saturating_sub(1);
    let emitted =
        status.success() && csv.starts_with("rho_lo,") && rows > 0 && csv.contains("band_min=");
    outcome(
        report.band_min > 0.0 && emitted,
        format!(
            "min M on 0 < |w| <= 0.8 Nyquist = {:.3e}, max {:.3e}; mpsi-report rows {rows}",
            report.band_min, report.band_max
        ),
    )
}

fn antipodal_conjugacy(stack: &WaveletStack) -> Outcome {
    let u = oscore::forward(&random_volume(grid(), 11), stack).unwrap();
    let antipode = stack.orientations.antipode.clone().unwrap();
    let mut worst = 0.0f64;
    for (i, &j) in antipode.iter().enumerate() {
        for (a, b) in u.data[j].iter().zip(&u.data[i]) {
            worst = worst.max((a - b.conj()).norm());
        }
    }
    let rel = worst / u.max_abs();
    outcome(
        rel <= 1e-9,
        format!("max |U(x,-n) - conj U(x,n)| / max|U| = {rel:.3e} (limit 1e-9)"),
    )
}

fn weighted_mass(u: &OrientationScore) -> Complex64 {
    u.data
        .iter()
        .zip(&u.orientations.weights)
        .map(|(ui, w)| ui.iter().sum::<Complex64>() * w)
        .sum()
}

fn diffusion_invariants(stack: &WaveletStack) -> Outcome {
    let u = oscore::forward(&random_volume(grid(), 12), stack).unwrap();
    let base = DiffusionParams::default();
    let t0 = lieops::diffuse(&u, &DiffusionParams { t_end: 0.0, ..base }).unwrap() == u;
    let d0 = lieops::diffuse(
        &u,
        &DiffusionParams {
            d11: 0.0,
            d33: 0.0,
            d44: 0.0,
            ..base
        },
    )
    .unwrap()
        == u;

    let plan = lieops::plan_steps(&u.orientations, &base, 1.0, None).unwrap();
    let hundred = DiffusionParams {
        t_end: 100.0 * plan.dt,
        dt: Some(plan.dt),
        ..base
    };
    let v = lieops::diffuse(&u, &hundred).unwrap();
    let scale: f64 = u
        .data
        .iter()
        .zip(&u.orientations.weights)
        .map(|(ui, w)| w * ui.iter().map(|c| c.norm()).sum::<f64>())
        .sum();
    let mass = (weighted_mass(&u) - weighted_mass(&v)).norm() / scale;

    let p = |t: f64| DiffusionParams {
        t_end: t,
        dt: Some(0.1),
        ..base
    };
    let composed = lieops::diffuse(&lieops::diffuse(&u, &p(0.5)).unwrap(), &p(0.7)).unwrap();
    let direct = lieops::diffuse(&u, &p(1.2)).unwrap();
    let semigroup = composed.distance(&direct) / direct.euclidean_norm();

    let small = build_wavelet_stack(
        &icosphere(1).unwrap(),
        &WaveletParams::crossing_flow(Dims::cube(8)),
    )
    .unwrap();
    let w = random_score(&small, 13);
    let angular = DiffusionParams {
        d11: 0.0,
        d33: 0.0,
        d44: 1.0,
        t_end: 15.0,
        dt: None,
    };
    let settled = lieops::diffuse(&w, &angular).unwrap();
    let total: f64 = w.orientations.weights.iter().sum();
    let mut mean_dev = 0.0f64;
    for x in 0..w.dims.len() {
        let mean: Complex64 = (0..w.len())
            .map(|i| w.data[i][x] * w.orientations.weights[i])
            .sum::<Complex64>()
            / total;
        for i in 0..w.len() {
            mean_dev = mean_dev.max((settled.data[i][x] - mean).norm());
        }
    }
    outcome(
        t0 && d0 && mass <= 1e-8 && semigroup <= 1e-6 && mean_dev <= 1e-4,
        format!(
            "t=0 identity {t0}, D=0 identity {d0}, mass drift {mass:.3e} over 100 steps (limit 1e-8), \
             semigroup {semigroup:.3e} (limit 1e-6), angular mean deviation {mean_dev:.3e} (limit 1e-4)"
        ),
    )
}

fn enhancement(stack: &WaveletStack) -> Outcome {
    let start = Instant::now();
    let clean = phantom::phantom(&PhantomSpec::crossing(grid()), grid()).unwrap();
    let peak = clean.max_abs();
    let params = EnhanceParams::default();
    let mut gains = Vec::new();
    for seed in 0..5 {
        let noisy = phantom::add_noise(&clean, 0.3 * peak, seed).unwrap();
        let enhanced = lieops::enhance(&noisy, stack, &params).unwrap();
        let before = phantom::metrics(&noisy, &clean).unwrap().psnr_db;
        let after = phantom::metrics(&enhanced, &clean).unwrap().psnr_db;
        gains.push(after - before);
    }
    let min_gain = gains.iter().copied().fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        min_gain >= 1.0 && secs < 120.0,
        format!(
            "PSNR gains {:?} dB, minimum {min_gain:.2} (limit 1), {secs:.1} s",
            gains
                .iter()
                .map(|g| (g * 100.0).round() / 100.0)
                .collect::<Vec<_>>()
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_orient3d"))
        .current_dir(dir)
        .args(args)
        .env("ORIENT3D_THREADS", "4")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn cli_pipeline(dir: &Path) -> bool {
    let steps: [&[&str]; 11] = [
        &["phantom", "--out", "clean.vol", "--grid", "16"],
        &[
            "noise",
            "--in",
            "clean.vol",
            "--out",
            "noisy.vol",
            "--sigma-rel",
            "0.3",
            "--seed",
            "7",
        ],
        &[
            "make-wavelets",
            "--out",
            "w.stk",
            "--grid",
            "16",
            "--order",
            "1",
            "--dump-spectra",
            "spectra.csv",
            "--dump-orientations",
            "dirs.csv",
            "--slices",
            "slices",
        ],
        &[
            "transform",
            "--in",
            "noisy.vol",
            "--stack",
            "w.stk",
            "--out",
            "u.scr",
        ],
        &[
            "diffuse", "--in", "u.scr", "--out", "d.scr", "--t", "2", "--p", "1.5",
        ],
        &[
            "reconstruct",
            "--in",
            "d.scr",
            "--stack",
            "w.stk",
            "--out",
            "r.vol",
        ],
        &[
            "reconstruct",
            "--in",
            "u.scr",
            "--out",
            "a.vol",
            "--mode",
            "approx",
        ],
        &[
            "enhance",
            "--in",
            "noisy.vol",
            "--stack",
            "w.stk",
            "--out",
            "e.vol",
            "--t",
            "2",
        ],
        &["mpsi-report", "--stack", "w.stk", "--out", "m.csv"],
        &["slice", "--in", "e.vol", "--out", "e.pgm"],
        &[
            "noise",
            "--in",
            "clean.vol",
            "--out",
            "noisy32.vol",
            "--sigma",
            "0.1",
            "--seed",
            "3",
            "--dtype",
            "real32",
        ],
    ];
    steps.iter().all(|args| run_cli(dir, args))
}

fn collect_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ran = cli_pipeline(a.path()) && cli_pipeline(b.path());
    let (fa, fb) = (collect_files(a.path()), collect_files(b.path()));
    let identical = ran && !fa.is_empty() && fa == fb;
    outcome(
        identical,
        format!(
            "{} output files compared, pipelines succeeded {ran}, byte-identical {identical}",
            fa.len()
        ),
    )
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let stack = reference_stack();
    let criteria: Vec<(&str, Check)> = vec![
        (
            "discrete exactness",
            Box::new(|| discrete_exactness(&stack)),
        ),
        ("isometry", Box::new(|| isometry(&stack))),
        ("projection", Box::new(|| projection(&stack))),
        ("Funk oracle", Box::new(funk_oracle)),
        ("wavelet structure", Box::new(|| wavelet_structure(&stack))),
        (
            "stability coverage",
            Box::new(|| stability_coverage(&stack, scratch.path())),
        ),
        (
            "antipodal conjugacy",
            Box::new(|| antipodal_conjugacy(&stack)),
        ),
        (
            "diffusion invariants",
            Box::new(|| diffusion_invariants(&stack)),
        ),
        ("end-to-end enhancement", Box::new(|| enhancement(&stack))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failures = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| outcome(false, "panicked".into()));
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} [{tag}] {name}: {}", n + 1, result.detail);
        failures += usize::from(!result.pass);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
