//! `orient3d` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use orient3d::cakewavelet::{self, DcPolicy, WaveletParams};
use orient3d::error::{Error, Result};
use orient3d::io::{self, Axis, Dtype, Manifest};
use orient3d::lieops::{self, DiffusionParams, Reconstruction, Threshold, ThresholdMode};
use orient3d::oscore;
use orient3d::phantom::{self, PhantomSpec};
use orient3d::sphere::icosphere;
use orient3d::volume::{Dims, Volume};

#[derive(Parser)]
#[command(
    name = "orient3d",
    version,
    about = "Invertible 3D orientation scores and crossing-preserving diffusion"
)]
struct Cli {
    /// TOML file whose keys supply flags not given on the command line.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a tube phantom.
    Phantom(PhantomArgs),
    /// Add seeded Gaussian noise to a volume.
    Noise(NoiseArgs),
    /// Build a cake-wavelet stack.
    MakeWavelets(MakeWaveletsArgs),
    /// Lift a volume to an orientation score.
    Transform(TransformArgs),
    /// Reconstruct a volume from an orientation score.
    Reconstruct(ReconstructArgs),
    /// Report the stability map of a stack as CSV.
    MpsiReport(MpsiReportArgs),
    /// Diffuse an orientation score.
    Diffuse(DiffuseArgs),
    /// Lift, diffuse, threshold, and reconstruct in one pass.
    Enhance(EnhanceArgs),
    /// Compare a volume against a reference.
    Metrics(MetricsArgs),
    /// Export a slice as 8-bit PGM.
    Slice(SliceArgs),
}

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let n = |p: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad extent {p:?}: {e}"))
    };
    match parts.as_slice() {
        [a] => Ok(Dims::cube(n(a)?)),
        [a, b, c] => Ok(Dims::new(n(a)?, n(b)?, n(c)?)),
        _ => Err(format!("expected N or NxNxN, got {s:?}")),
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum VolumeDtype {
    Real32,
    Real64,
}

impl From<VolumeDtype> for Dtype {
    fn from(d: VolumeDtype) -> Self {
        match d {
            VolumeDtype::Real32 => Dtype::Real32,
            VolumeDtype::Real64 => Dtype::Real64,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ScoreDtype {
    Complex64,
    Complex128,
}

impl From<ScoreDtype> for Dtype {
    fn from(d: ScoreDtype) -> Self {
        match d {
            ScoreDtype::Complex64 => Dtype::Complex64,
            ScoreDtype::Complex128 => Dtype::Complex128,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DcPolicyArg {
    SplitRealMean,
    Zero,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ThresholdModeArg {
    Phase,
    RealPart,
}

impl From<ThresholdModeArg> for ThresholdMode {
    fn from(m: ThresholdModeArg) -> Self {
        match m {
            ThresholdModeArg::Phase => ThresholdMode::Phase,
            ThresholdModeArg::RealPart => ThresholdMode::RealPart,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum ReconArg {
    Exact,
    Approx,
}

impl From<ReconArg> for Reconstruction {
    fn from(r: ReconArg) -> Self {
        match r {
            ReconArg::Exact => Reconstruction::Exact,
            ReconArg::Approx => Reconstruction::Approx,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AxisArg {
    X,
    Y,
    Z,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Z => Axis::Z,
        }
    }
}

#[derive(Args, Serialize)]
struct PhantomArgs {
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Grid as N or NxNxN.
    #[arg(long, default_value = "32", value_parser = parse_dims)]
    grid: Dims,
    /// JSON tube list; the crossing preset is used when absent.
    #[arg(long)]
    #[serde(skip)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "real64")]
    dtype: VolumeDtype,
}

#[derive(Args, Serialize)]
struct NoiseArgs {
    #[arg(long = "in")]
    #[serde(skip)]
    input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Absolute standard deviation.
    #[arg(long, conflicts_with = "sigma_rel")]
    sigma: Option<f64>,
    /// Standard deviation as a fraction of the input's peak magnitude.
    #[arg(long)]
    sigma_rel: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "real64")]
    dtype: VolumeDtype,
}

#[derive(Args, Serialize)]
struct WaveletArgs {
    /// Icosphere subdivision order of the orientation set.
    #[arg(long, default_value_t = 1)]
    order: u32,
    /// Spherical-harmonic order of the angular window.
    #[arg(long = "L", default_value_t = 16)]
    l: usize,
    #[arg(long, default_value_t = 0.7)]
    stheta: f64,
    /// B-spline order.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Taylor order of the radial profile.
    #[arg(long = "N", default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 0.85)]
    gamma: f64,
    #[arg(long, default_value = "32", value_parser = parse_dims)]
    grid: Dims,
    #[arg(long, value_enum, default_value = "split-real-mean")]
    dc_policy: DcPolicyArg,
}

impl WaveletArgs {
    fn params(&self) -> WaveletParams {
        WaveletParams {
            max_order: self.l,
            s_theta: self.stheta,
            spline_order: self.k,
            taylor_order: self.n,
            gamma: self.gamma,
            grid: self.grid,
            dc_policy: match self.dc_policy {
                DcPolicyArg::SplitRealMean => DcPolicy::SplitRealMean,
                DcPolicyArg::Zero => DcPolicy::Zero,
            },
        }
    }
}

#[derive(Args, Serialize)]
struct MakeWaveletsArgs {
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[command(flatten)]
    wavelet: WaveletArgs,
    /// CSV of the even and odd angular spectra.
    #[arg(long)]
    #[serde(skip)]
    dump_spectra: Option<PathBuf>,
    /// CSV of the orientation set.
    #[arg(long)]
    #[serde(skip)]
    dump_orientations: Option<PathBuf>,
    /// Directory for central-slice PGMs of the first spatial kernel.
    #[arg(long)]
    #[serde(skip)]
    slices: Option<PathBuf>,
    /// Print the windowed-patch report for this patch size.
    #[arg(long)]
    patch: Option<usize>,
}

#[derive(Args, Serialize)]
struct TransformArgs {
    #[arg(long = "in")]
    #[serde(skip)]
    input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    stack: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Zero voxels added on every side before lifting.
    #[arg(long, default_value_t = 0)]
    pad: usize,
    #[arg(long, value_enum, default_value = "complex128")]
    dtype: ScoreDtype,
}

#[derive(Args, Serialize)]
struct ReconstructArgs {
    #[arg(long = "in")]
    #[serde(skip)]
    input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    stack: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ReconArg,
    /// Stabilizer; defaults to 1e-8 times the largest stability-map value.
    #[arg(long)]
    eps: Option<f64>,
    /// Refuse when the stability map drops below eps inside the band.
    #[arg(long)]
    strict: bool,
    /// Band for --strict, as a fraction of the Nyquist radius.
    #[arg(long, default_value_t = 0.8)]
    band: f64,
    /// Voxels cropped from every side after reconstruction.
    #[arg(long, default_value_t = 0)]
    pad: usize,
    #[arg(long, value_enum, default_value = "real64")]
    dtype: VolumeDtype,
}

#[derive(Args, Serialize)]
struct MpsiReportArgs {
    #[arg(long)]
    #[serde(skip)]
    stack: PathBuf,
    /// Destination CSV; standard output when absent.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    shells: usize,
    #[arg(long, default_value_t = 0.8)]
    band: f64,
}

#[derive(Args, Serialize)]
struct DiffusionArgs {
    #[arg(long = "D11", default_value_t = 0.1)]
    d11: f64,
    #[arg(long = "D33", default_value_t = 1.0)]
    d33: f64,
    #[arg(long = "D44", default_value_t = 0.02)]
    d44: f64,
    /// Diffusion time.
    #[arg(long, default_value_t = 10.0)]
    t: f64,
    /// Euler step; chosen from the stability bound when absent.
    #[arg(long)]
    dt: Option<f64>,
}

impl DiffusionArgs {
    fn params(&self) -> DiffusionParams {
        DiffusionParams {
            d11: self.d11,
            d33: self.d33,
            d44: self.d44,
            t_end: self.t,
            dt: self.dt,
        }
    }
}

#[derive(Args, Serialize)]
struct ThresholdArgs {
    #[arg(long, value_enum, default_value = "phase")]
    threshold_mode: ThresholdModeArg,
    /// Apply the threshold in absolute units instead of relative to max |U|.
    #[arg(long)]
    absolute_threshold: bool,
}

impl ThresholdArgs {
    fn threshold(&self, p: f64) -> Threshold {
        Threshold {
            p,
            mode: self.threshold_mode.into(),
            relative: !self.absolute_threshold,
        }
    }
}

#[derive(Args, Serialize)]
struct DiffuseArgs {
    #[arg(long = "in")]
    #[serde(skip)]
    input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[command(flatten)]
    diffusion: DiffusionArgs,
    /// Soft-threshold exponent applied after diffusion.
    #[arg(long)]
    p: Option<f64>,
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[arg(long, value_enum, default_value = "complex128")]
    dtype: ScoreDtype,
}

#[derive(Args, Serialize)]
struct EnhanceArgs {
    #[arg(long = "in")]
    #[serde(skip)]
    input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    stack: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[command(flatten)]
    diffusion: DiffusionArgs,
    #[arg(long, default_value_t = 1.5)]
    p: f64,
    #[arg(long)]
    no_threshold: bool,
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[arg(long, value_enum, default_value = "exact")]
    recon: ReconArg,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pad: usize,
    #[arg(long, value_enum, default_value = "real64")]
    dtype: VolumeDtype,
}

#[derive(Args, Serialize)]
struct MetricsArgs {
    /// Volume under test.
    #[arg(long)]
    #[serde(skip)]
    a: PathBuf,
    /// Reference volume.
    #[arg(long)]
    #[serde(skip)]
    b: PathBuf,
}

#[derive(Args, Serialize)]
struct SliceArgs {
    #[arg(long = "in")]
    #[serde(skip)]
    input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "z")]
    axis: AxisArg,
    /// Slice index; the central slice when absent.
    #[arg(long)]
    index: Option<usize>,
}

fn manifest(command: &str, args: &impl Serialize, seed: Option<u64>) -> Manifest {
    let params = serde_json::to_value(args).unwrap_or(serde_json::Value::Null);
    Manifest::new(command, params, seed)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom(a) => {
            let spec = match &a.spec {
                Some(p) => serde_json::from_slice(&std::fs::read(p)?)
                    .map_err(|e| Error::Data(e.to_string()))?,
                None => PhantomSpec::crossing(a.grid),
            };
            let v = phantom::phantom(&spec, a.grid)?;
            let mut m = manifest("phantom", &a, None);
            m.params["tubes"] = serde_json::to_value(&spec.tubes).unwrap_or_default();
            io::write_volume(&a.out, &v, a.dtype.into(), &m)
        }
        Command::Noise(a) => {
            let (v, _) = io::read_volume(&a.input)?;
            let sigma = match (a.sigma, a.sigma_rel) {
                (Some(s), _) => s,
                (None, Some(r)) => r * v.max_abs(),
                (None, None) => {
                    return Err(Error::Parameter(
                        "one of --sigma or --sigma-rel is required".into(),
                    ))
                }
            };
            let out = phantom::add_noise(&v, sigma, a.seed)?;
            io::write_volume(
                &a.out,
                &out,
                a.dtype.into(),
                &manifest("noise", &a, Some(a.seed)),
            )
        }
        Command::MakeWavelets(a) => {
            let params = a.wavelet.params();
            let set = icosphere(a.wavelet.order)?;
            let stack = cakewavelet::build_wavelet_stack(&set, &params)?;
            if let Some(path) = &a.dump_spectra {
                let (even, odd) = cakewavelet::angular_spectra(&params)?;
                let mut csv = String::from("l,window,even,odd\n");
                let window = cakewavelet::orientation_window(&params)?;
                for l in 0..=params.max_order {
                    csv.push_str(&format!(
                        "{l},{},{},{}\n",
                        window.coeffs[l], even.coeffs[l], odd.coeffs[l]
                    ));
                }
                write_text(path, &csv)?;
            }
            if let Some(path) = &a.dump_orientations {
                write_text(path, &set.to_csv())?;
            }
            if let Some(dir) = &a.slices {
                std::fs::create_dir_all(dir)?;
                let kernel = stack.spatial_kernel(0)?;
                let (_, _, cz) = stack.dims().center();
                io::write_pgm(&dir.join("kernel0_real_z.pgm"), &kernel.real(), Axis::Z, cz)?;
                io::write_pgm(&dir.join("kernel0_imag_z.pgm"), &kernel.imag(), Axis::Z, cz)?;
                let (cx, _, _) = stack.dims().center();
                io::write_pgm(&dir.join("kernel0_real_x.pgm"), &kernel.real(), Axis::X, cx)?;
                io::write_pgm(&dir.join("kernel0_imag_x.pgm"), &kernel.imag(), Axis::X, cx)?;
            }
            if let Some(size) = a.patch {
                let report = stack.windowed_patches(size)?;
                println!(
                    "patch size {}: stability-map deviation {:e}",
                    report.size, report.m_deviation
                );
            }
            io::write_stack(
                &a.out,
                &stack,
                Dtype::Real64,
                &manifest("make-wavelets", &a, None),
            )
        }
        Command::Transform(a) => {
            let (v, _) = io::read_volume(&a.input)?;
            let (stack, _) = io::read_stack(&a.stack)?;
            let v = if a.pad > 0 { v.zero_pad(a.pad) } else { v };
            let u = oscore::forward(&v, &stack)?;
            io::write_score(&a.out, &u, a.dtype.into(), &manifest("transform", &a, None))
        }
        Command::Reconstruct(a) => {
            let (u, _) = io::read_score(&a.input)?;
            let v = match a.mode {
                ReconArg::Approx => oscore::reconstruct_approx(&u),
                ReconArg::Exact => {
                    let path = a.stack.as_ref().ok_or_else(|| {
                        Error::Parameter("exact reconstruction needs --stack".into())
                    })?;
                    let (stack, _) = io::read_stack(path)?;
                    let eps = a.eps.unwrap_or_else(|| stack.default_epsilon());
                    if a.strict {
                        oscore::check_stability(&stack, a.band, eps)?;
                    }
                    oscore::reconstruct_exact(&u, &stack, eps)?
                }
            };
            let v = crop(v, a.pad)?;
            io::write_volume(
                &a.out,
                &v,
                a.dtype.into(),
                &manifest("reconstruct", &a, None),
            )
        }
        Command::MpsiReport(a) => {
            let (stack, _) = io::read_stack(&a.stack)?;
            if a.shells == 0 {
                return Err(Error::Parameter("--shells must be positive".into()));
            }
            let csv = oscore::m_psi_report_csv(&stack, a.shells, a.band);
            match &a.out {
                Some(path) => write_text(path, &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::Diffuse(a) => {
            let (u, _) = io::read_score(&a.input)?;
            let mut u = lieops::diffuse(&u, &a.diffusion.params())?;
            if let Some(p) = a.p {
                u = a.threshold.threshold(p).apply(&u)?;
            }
            io::write_score(&a.out, &u, a.dtype.into(), &manifest("diffuse", &a, None))
        }
        Command::Enhance(a) => {
            let (v, _) = io::read_volume(&a.input)?;
            let (stack, _) = io::read_stack(&a.stack)?;
            let params = lieops::EnhanceParams {
                diffusion: a.diffusion.params(),
                threshold: (!a.no_threshold).then(|| a.threshold.threshold(a.p)),
                reconstruction: a.recon.into(),
                epsilon: a.eps,
            };
            let padded = if a.pad > 0 { v.zero_pad(a.pad) } else { v };
            let out = crop(lieops::enhance(&padded, &stack, &params)?, a.pad)?;
            io::write_volume(&a.out, &out, a.dtype.into(), &manifest("enhance", &a, None))
        }
        Command::Metrics(a) => {
            let (va, _) = io::read_volume(&a.a)?;
            let (vb, _) = io::read_volume(&a.b)?;
            let m = phantom::metrics(&va, &vb)?;
            println!("rel_l2={} rmse={} psnr_db={}", m.rel_l2, m.rmse, m.psnr_db);
            Ok(())
        }
        Command::Slice(a) => {
            let (v, _) = io::read_volume(&a.input)?;
            let axis: Axis = a.axis.into();
            let index = a.index.unwrap_or_else(|| {
                let (cx, cy, cz) = v.dims.center();
                match axis {
                    Axis::X => cx,
                    Axis::Y => cy,
                    Axis::Z => cz,
                }
            });
            io::write_pgm(&a.out, &v, axis, index).map(|_| ())
        }
    }
}

fn crop(v: Volume, pad: usize) -> Result<Volume> {
    if pad == 0 {
        Ok(v)
    } else {
        v.crop(pad)
    }
}

/// Appends `--key value` for every config entry whose flag is not already
/// on the command line. Entries may sit at the top level or in a table
/// named after the subcommand.
fn merge_config(args: Vec<String>) -> std::result::Result<Vec<String>, String> {
    let Some(pos) = args
        .iter()
        .position(|a| a == "--config" || a.starts_with("--config="))
    else {
        return Ok(args);
    };
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => args.get(pos + 1).cloned().ok_or("--config needs a file")?,
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("reading {path}: {e}"))?;
    let table: toml::Table = text.parse().map_err(|e| format!("parsing {path}: {e}"))?;
    let subcommand = args
        .iter()
        .skip(1)
        .find(|a| !a.starts_with('-') && **a != path)
        .cloned();
    // Top-level keys apply only where the subcommand has a matching flag.
    let accepts = |key: &str| {
        let cmd = Cli::command();
        subcommand
            .as_deref()
            .and_then(|name| cmd.find_subcommand(name).cloned())
            .is_some_and(|sub| sub.get_arguments().any(|a| a.get_long() == Some(key)))
    };
    let mut entries: Vec<(String, toml::Value)> = Vec::new();
    for (k, v) in &table {
        match v {
            toml::Value::Table(t) if Some(k) == subcommand.as_ref() => {
                entries.extend(t.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
            toml::Value::Table(_) => {}
            _ if accepts(k) => entries.push((k.clone(), v.clone())),
            _ => {}
        }
    }
    let mut out = args.clone();
    for (key, value) in entries {
        let flag = format!("--{key}");
        if args
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
        {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => out.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => out.extend([flag, s]),
            toml::Value::Integer(i) => out.extend([flag, i.to_string()]),
            toml::Value::Float(f) => out.extend([flag, f.to_string()]),
            other => return Err(format!("unsupported config value for {key}: {other}")),
        }
    }
    Ok(out)
}

fn configure_threads() -> Result<()> {
    if let Ok(s) = std::env::var("ORIENT3D_THREADS") {
        let n: usize = s
            .parse()
            .map_err(|_| Error::Parameter(format!("ORIENT3D_THREADS={s:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Parameter(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match merge_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let result = configure_threads().and_then(|_| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
