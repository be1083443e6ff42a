//! Binary files for volumes, wavelet stacks, and orientation scores, plus
//! CSV and PGM exports.
//!
//! Layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic (`OS3DVOL\0`, `OS3DSTK\0`, `OS3DSCR\0`) |
//! | 4     | `u32` format version, currently 1 |
//! | 4     | `u32` header length `h` |
//! | h     | UTF-8 JSON header |
//! | rest  | raw samples in the header's dtype |
//!
//! Volumes are stored x-fastest, stack filters and score channels
//! orientation-major. Complex samples are interleaved `(re, im)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cakewavelet::{WaveletParams, WaveletStack};
use crate::error::{Error, Result};
use crate::oscore::OrientationScore;
use crate::sphere::OrientationSet;
use crate::volume::{Dims, Volume};

pub const VOLUME_MAGIC: [u8; 8] = *b"OS3DVOL\0";
pub const STACK_MAGIC: [u8; 8] = *b"OS3DSTK\0";
pub const SCORE_MAGIC: [u8; 8] = *b"OS3DSCR\0";
pub const FORMAT_VERSION: u32 = 1;

const PREAMBLE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Real32,
    Real64,
    /// Two interleaved `f32`.
    Complex64,
    /// Two interleaved `f64`.
    Complex128,
}

impl Dtype {
    pub fn is_complex(self) -> bool {
        matches!(self, Dtype::Complex64 | Dtype::Complex128)
    }

    fn sample_bytes(self) -> usize {
        match self {
            Dtype::Real32 => 4,
            Dtype::Real64 | Dtype::Complex64 => 8,
            Dtype::Complex128 => 16,
        }
    }

    fn scalar_bytes(self) -> usize {
        match self {
            Dtype::Real32 | Dtype::Complex64 => 4,
            Dtype::Real64 | Dtype::Complex128 => 8,
        }
    }
}

/// Provenance recorded in every output header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Parameters that determined the output, excluding file paths.
    pub params: serde_json::Value,
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn new(command: &str, params: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            params,
            seed,
        }
    }
}

impl Default for Manifest {
    fn default() -> Self {
        Self::new("library", serde_json::Value::Null, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dims: Dims,
    pub spacing: [f64; 3],
    pub dtype: Dtype,
    /// Number of channels: orientations for stacks and scores, 1 for volumes.
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientations: Option<OrientationSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelet: Option<WaveletParams>,
    pub manifest: Manifest,
}

fn encode(magic: [u8; 8], header: &Header, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Header(e.to_string()))?;
    let len =
        u32::try_from(json.len()).map_err(|_| Error::Header("header exceeds 4 GiB".into()))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len());
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

fn decode(magic: [u8; 8], bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < PREAMBLE {
        return Err(Error::Truncated(format!(
            "{} bytes is shorter than the preamble",
            bytes.len()
        )));
    }
    let found: [u8; 8] = bytes[..8].try_into().expect("slice length 8");
    if found != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found,
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("slice length 4"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().expect("slice length 4")) as usize;
    let rest = &bytes[PREAMBLE..];
    if rest.len() < len {
        return Err(Error::Truncated(format!(
            "header needs {len} bytes, {} present",
            rest.len()
        )));
    }
    let header: Header =
        serde_json::from_slice(&rest[..len]).map_err(|e| Error::Header(e.to_string()))?;
    header.dims.check_supported()?;
    if let Some(set) = &header.orientations {
        set.validate()?;
    }
    let payload = &rest[len..];
    let expected = header.dims.len() * header.channels * header.dtype.sample_bytes();
    if payload.len() < expected {
        return Err(Error::Truncated(format!(
            "payload needs {expected} bytes, {} present",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Header(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    Ok((header, payload))
}

fn push_scalars(out: &mut Vec<u8>, values: impl Iterator<Item = f64>, dtype: Dtype) {
    for v in values {
        if dtype.scalar_bytes() == 4 {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        } else {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_scalars(payload: &[u8], dtype: Dtype) -> Result<Vec<f64>> {
    let values: Vec<f64> = if dtype.scalar_bytes() == 4 {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect()
    } else {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        let per_sample = if dtype.is_complex() { 2 } else { 1 };
        return Err(Error::NonFinite(i / per_sample));
    }
    Ok(values)
}

fn require(header: &Header, complex: bool, channels: Option<usize>) -> Result<()> {
    if header.dtype.is_complex() != complex {
        let want = if complex { "complex" } else { "real" };
        return Err(Error::Header(format!(
            "expected a {want} dtype, found {:?}",
            header.dtype
        )));
    }
    if let Some(c) = channels {
        if header.channels != c {
            return Err(Error::Header(format!(
                "expected {c} channels, found {}",
                header.channels
            )));
        }
    }
    Ok(())
}

pub fn encode_volume(v: &Volume, dtype: Dtype, manifest: &Manifest) -> Result<Vec<u8>> {
    if dtype.is_complex() {
        return Err(Error::Parameter(
            "volumes are stored with a real dtype".into(),
        ));
    }
    v.check_finite()?;
    let header = Header {
        dims: v.dims,
        spacing: v.spacing,
        dtype,
        channels: 1,
        orientations: None,
        wavelet: None,
        manifest: manifest.clone(),
    };
    let mut payload = Vec::with_capacity(v.data.len() * dtype.sample_bytes());
    push_scalars(&mut payload, v.data.iter().copied(), dtype);
    encode(VOLUME_MAGIC, &header, &payload)
}

pub fn decode_volume(bytes: &[u8]) -> Result<(Volume, Header)> {
    let (header, payload) = decode(VOLUME_MAGIC, bytes)?;
    require(&header, false, Some(1))?;
    let data = read_scalars(payload, header.dtype)?;
    Ok((
        Volume {
            dims: header.dims,
            spacing: header.spacing,
            data,
        },
        header,
    ))
}

pub fn encode_stack(stack: &WaveletStack, dtype: Dtype, manifest: &Manifest) -> Result<Vec<u8>> {
    if dtype.is_complex() {
        return Err(Error::Parameter(
            "stack filters are stored with a real dtype".into(),
        ));
    }
    let header = Header {
        dims: stack.dims(),
        spacing: [1.0; 3],
        dtype,
        channels: stack.len(),
        orientations: Some(stack.orientations.clone()),
        wavelet: Some(stack.params.clone()),
        manifest: manifest.clone(),
    };
    let mut payload = Vec::with_capacity(stack.len() * stack.dims().len() * dtype.sample_bytes());
    push_scalars(&mut payload, stack.filters.iter().flatten().copied(), dtype);
    encode(STACK_MAGIC, &header, &payload)
}

pub fn decode_stack(bytes: &[u8]) -> Result<(WaveletStack, Header)> {
    let (header, payload) = decode(STACK_MAGIC, bytes)?;
    require(&header, false, None)?;
    let set = header
        .orientations
        .clone()
        .ok_or_else(|| Error::Header("stack without orientations".into()))?;
    let params = header
        .wavelet
        .clone()
        .ok_or_else(|| Error::Header("stack without wavelet parameters".into()))?;
    if params.grid != header.dims || set.len() != header.channels {
        return Err(Error::Header("stack header is inconsistent".into()));
    }
    let values = read_scalars(payload, header.dtype)?;
    let filters = values
        .chunks_exact(header.dims.len())
        .map(<[f64]>::to_vec)
        .collect();
    Ok((WaveletStack::from_filters(set, params, filters)?, header))
}

pub fn encode_score(u: &OrientationScore, dtype: Dtype, manifest: &Manifest) -> Result<Vec<u8>> {
    if !dtype.is_complex() {
        return Err(Error::Parameter(
            "scores are stored with a complex dtype".into(),
        ));
    }
    u.check_finite()?;
    let header = Header {
        dims: u.dims,
        spacing: u.spacing,
        dtype,
        channels: u.len(),
        orientations: Some(u.orientations.clone()),
        wavelet: None,
        manifest: manifest.clone(),
    };
    let mut payload = Vec::with_capacity(u.len() * u.dims.len() * dtype.sample_bytes());
    push_scalars(
        &mut payload,
        u.data.iter().flatten().flat_map(|c| [c.re, c.im]),
        dtype,
    );
    encode(SCORE_MAGIC, &header, &payload)
}

pub fn decode_score(bytes: &[u8]) -> Result<(OrientationScore, Header)> {
    let (header, payload) = decode(SCORE_MAGIC, bytes)?;
    require(&header, true, None)?;
    let set = header
        .orientations
        .clone()
        .ok_or_else(|| Error::Header("score without orientations".into()))?;
    if set.len() != header.channels {
        return Err(Error::Header("score header is inconsistent".into()));
    }
    let values = read_scalars(payload, header.dtype)?;
    let data = values
        .chunks_exact(2 * header.dims.len())
        .map(|ch| {
            ch.chunks_exact(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect()
        })
        .collect();
    Ok((
        OrientationScore {
            dims: header.dims,
            spacing: header.spacing,
            orientations: set,
            data,
        },
        header,
    ))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_volume(path: &Path, v: &Volume, dtype: Dtype, manifest: &Manifest) -> Result<()> {
    write_atomic(path, &encode_volume(v, dtype, manifest)?)
}

pub fn read_volume(path: &Path) -> Result<(Volume, Header)> {
    decode_volume(&fs::read(path)?)
}

pub fn write_stack(
    path: &Path,
    stack: &WaveletStack,
    dtype: Dtype,
    manifest: &Manifest,
) -> Result<()> {
    write_atomic(path, &encode_stack(stack, dtype, manifest)?)
}

pub fn read_stack(path: &Path) -> Result<(WaveletStack, Header)> {
    decode_stack(&fs::read(path)?)
}

pub fn write_score(
    path: &Path,
    u: &OrientationScore,
    dtype: Dtype,
    manifest: &Manifest,
) -> Result<()> {
    write_atomic(path, &encode_score(u, dtype, manifest)?)
}

pub fn read_score(path: &Path) -> Result<(OrientationScore, Header)> {
    decode_score(&fs::read(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Min-max normalization bounds of an exported slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceInfo {
    pub axis: Axis,
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
}

/// Extracts a 2D slice as rows of samples, top row first.
pub fn slice(v: &Volume, axis: Axis, index: usize) -> Result<(usize, usize, Vec<f64>)> {
    let d = v.dims;
    let (limit, w, h) = match axis {
        Axis::X => (d.nx, d.ny, d.nz),
        Axis::Y => (d.ny, d.nx, d.nz),
        Axis::Z => (d.nz, d.nx, d.ny),
    };
    if index >= limit {
        return Err(Error::Parameter(format!(
            "slice {index} outside 0..{limit}"
        )));
    }
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            out.push(match axis {
                Axis::X => v.get(index, c, r),
                Axis::Y => v.get(c, index, r),
                Axis::Z => v.get(c, r, index),
            });
        }
    }
    Ok((w, h, out))
}

/// 8-bit binary PGM of a slice, min-max normalized.
pub fn encode_pgm(v: &Volume, axis: Axis, index: usize) -> Result<(Vec<u8>, SliceInfo)> {
    let (width, height, values) = slice(v, axis, index)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&x| {
        if range > 0.0 {
            ((x - min) / range * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok((
        out,
        SliceInfo {
            axis,
            index,
            width,
            height,
            min,
            max,
        },
    ))
}

/// Writes `path` as PGM and `path.json` with the normalization bounds.
pub fn write_pgm(path: &Path, v: &Volume, axis: Axis, index: usize) -> Result<SliceInfo> {
    let (bytes, info) = encode_pgm(v, axis, index)?;
    write_atomic(path, &bytes)?;
    let sidecar = serde_json::to_vec_pretty(&info).map_err(|e| Error::Header(e.to_string()))?;
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    write_atomic(Path::new(&name), &sidecar)?;
    Ok(info)
}
