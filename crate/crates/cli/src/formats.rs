//! File formats: binary PPM/PGM images, raw tensor files with a 16-byte
//! header, keypoint CSVs, and indexed frame-directory ingestion.
//!
//! Frame pixels map affinely between bytes and model range: byte b is
//! 2b/255 - 1, so 0 reads as -1.0 and 255 as +1.0 exactly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use tcyc_core::scalar::{Dtype, Scalar};
use tcyc_core::Tensor;

pub fn write_ppm<S: Scalar>(path: &Path, frame: &Tensor<S>) -> Result<()> {
    let shape = frame.shape();
    if shape.len() != 3 || shape[0] != 3 {
        bail!("ppm needs a [3, h, w] tensor, got {shape:?}");
    }
    let (h, w) = (shape[1], shape[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = frame.data();
    for p in 0..h * w {
        for c in 0..3 {
            let v = d[c * h * w + p].to_f64_lossy();
            let byte = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            out.push(byte);
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Reads P6/P5 headers: magic, whitespace-separated dimensions and maxval,
/// `#` comments allowed, single whitespace byte before the raster.
fn read_netpbm_header(data: &[u8], magic: &str, path: &Path) -> Result<(usize, usize, usize)> {
    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> Result<String> {
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("{}: truncated header", path.display());
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    let m = token(data)?;
    if m != magic {
        bail!("{}: expected {magic}, found {m:?}", path.display());
    }
    let w: usize = token(data)?.parse().context("width")?;
    let h: usize = token(data)?.parse().context("height")?;
    let maxval: usize = token(data)?.parse().context("maxval")?;
    if maxval != 255 {
        bail!("{}: only maxval 255 is supported, got {maxval}", path.display());
    }
    // Exactly one whitespace byte separates header and raster.
    Ok((w, h, pos + 1))
}

pub fn read_ppm<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (w, h, off) = read_netpbm_header(&data, "P6", path)?;
    let need = off + 3 * w * h;
    if data.len() < need {
        bail!(
            "{}: expected {} bytes, got {}",
            path.display(),
            need,
            data.len()
        );
    }
    let mut out = vec![S::of_f64(0.0); 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            let b = data[off + p * 3 + c] as f64;
            out[c * h * w + p] = S::of_f64(b * 2.0 / 255.0 - 1.0);
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], out)?)
}

pub fn write_pgm(path: &Path, mask: &[u8], w: usize, h: usize) -> Result<()> {
    if mask.len() != w * h {
        bail!("pgm: {} pixels for {w}x{h}", mask.len());
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(mask);
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_pgm(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let (w, h, off) = read_netpbm_header(&data, "P5", path)?;
    let need = off + w * h;
    if data.len() < need {
        bail!(
            "{}: expected {} bytes, got {}",
            path.display(),
            need,
            data.len()
        );
    }
    Ok((data[off..need].to_vec(), w, h))
}

const RAW_MAGIC: &[u8; 4] = b"TNSR";

/// Raw tensor file: 16-byte header (magic, dtype u16, C u16, H u32, W u32,
/// all little-endian) followed by row-major scalars.
pub fn write_raw_tensor<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let shape = t.shape();
    if shape.len() != 3 {
        bail!("raw tensor files hold [C, H, W], got {shape:?}");
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if c > u16::MAX as usize || h > u32::MAX as usize || w > u32::MAX as usize {
        bail!("tensor {shape:?} too large for the header");
    }
    let dtype: u16 = match S::DTYPE {
        Dtype::F64 => 0,
        Dtype::F32 => 1,
    };
    let mut out = Vec::with_capacity(16 + t.numel() * 8);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&dtype.to_le_bytes());
    out.extend_from_slice(&(c as u16).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in t.data() {
        match S::DTYPE {
            Dtype::F64 => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
            Dtype::F32 => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_raw_tensor<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if data.len() < 16 || &data[..4] != RAW_MAGIC {
        bail!("{}: not a raw tensor file", path.display());
    }
    let dtype = u16::from_le_bytes([data[4], data[5]]);
    let c = u16::from_le_bytes([data[6], data[7]]) as usize;
    let h = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(data[12..16].try_into().unwrap()) as usize;
    let expect = match S::DTYPE {
        Dtype::F64 => 0,
        Dtype::F32 => 1,
    };
    if dtype != expect {
        bail!(
            "{}: dtype {} does not match the requested scalar",
            path.display(),
            if dtype == 0 { "f64" } else { "f32" }
        );
    }
    let scalar_bytes = if dtype == 0 { 8 } else { 4 };
    let need = 16 + c * h * w * scalar_bytes;
    if data.len() != need {
        bail!(
            "{}: expected {} bytes, got {}",
            path.display(),
            need,
            data.len()
        );
    }
    let mut out = Vec::with_capacity(c * h * w);
    for i in 0..c * h * w {
        let at = 16 + i * scalar_bytes;
        let v = if dtype == 0 {
            f64::from_le_bytes(data[at..at + 8].try_into().unwrap())
        } else {
            f32::from_le_bytes(data[at..at + 4].try_into().unwrap()) as f64
        };
        out.push(S::of_f64(v));
    }
    Ok(Tensor::from_vec(&[c, h, w], out)?)
}

/// Keypoint CSV: header `name,x,y`, one keypoint per row, pixel
/// coordinates.
pub fn write_keypoints(path: &Path, names: &[String], kps: &[(f64, f64)]) -> Result<()> {
    if names.len() != kps.len() {
        bail!("{} names for {} keypoints", names.len(), kps.len());
    }
    let mut out = String::from("name,x,y\n");
    for (n, (x, y)) in names.iter().zip(kps) {
        out.push_str(&format!("{n},{x},{y}\n"));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_keypoints(path: &Path) -> Result<(Vec<String>, Vec<(f64, f64)>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut names = Vec::new();
    let mut kps = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (ln == 0 && line == "name,x,y") {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let err = || anyhow!("{} line {}: expected name,x,y", path.display(), ln + 1);
        let name = parts.next().ok_or_else(err)?;
        let x: f64 = parts.next().ok_or_else(err)?.trim().parse().map_err(|_| err())?;
        let y: f64 = parts.next().ok_or_else(err)?.trim().parse().map_err(|_| err())?;
        names.push(name.to_string());
        kps.push((x, y));
    }
    Ok((names, kps))
}

/// Indexed files `prefix_00000suffix` in a directory: validates the index
/// sequence is contiguous from zero and returns paths in order.
pub fn indexed_paths(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(mid) = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_suffix(suffix))
        {
            if mid.len() == 5 && mid.bytes().all(|b| b.is_ascii_digit()) {
                found.push((mid.parse().unwrap(), entry.path()));
            }
        }
    }
    found.sort();
    if found.is_empty() {
        bail!("no {prefix}NNNNN{suffix} files in {}", dir.display());
    }
    for (want, (idx, _)) in found.iter().enumerate() {
        if *idx != want {
            bail!(
                "{}: missing {prefix}{want:05}{suffix} (sequence jumps to {idx})",
                dir.display()
            );
        }
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Frames `frame_00000.ppm ...` mapped to [-1, 1], consistent shapes.
pub fn ingest_frames<S: Scalar>(dir: &Path) -> Result<Vec<Tensor<S>>> {
    let paths = indexed_paths(dir, "frame_", ".ppm")?;
    let mut frames: Vec<Tensor<S>> = Vec::with_capacity(paths.len());
    for p in &paths {
        let t = read_ppm(p)?;
        if let Some(first) = frames.first() {
            if t.shape() != first.shape() {
                bail!(
                    "{}: shape {:?} differs from first frame {:?}",
                    p.display(),
                    t.shape(),
                    first.shape()
                );
            }
        }
        frames.push(t);
    }
    Ok(frames)
}

/// Masks `mask_00000.pgm ...`, all square with the same side.
pub fn ingest_masks(dir: &Path) -> Result<(Vec<Vec<u8>>, usize)> {
    let paths = indexed_paths(dir, "mask_", ".pgm")?;
    let mut masks = Vec::with_capacity(paths.len());
    let mut side = 0usize;
    for p in &paths {
        let (m, w, h) = read_pgm(p)?;
        if w != h {
            bail!("{}: masks must be square, got {w}x{h}", p.display());
        }
        if side == 0 {
            side = w;
        } else if w != side {
            bail!("{}: side {w} differs from first mask {side}", p.display());
        }
        masks.push(m);
    }
    Ok((masks, side))
}
