//! Disparity files, annotated images and corpus directories.
//!
//! Disparities are written as PFM (exact; invalid pixels as +inf) and as a
//! scaled 8-bit PGM for viewing. Ground truth is also accepted as KITTI-style
//! 16-bit PNG, where a stored value of 0 marks an invalid pixel and other
//! values are disparity × 256.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imgio::{load_image, GrayImage};
use crate::viterbi::DisparityMap;

pub fn encode_pfm(map: &DisparityMap) -> Vec<u8> {
    let (w, h) = (map.width(), map.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    // PFM rows run bottom to top.
    for y in (0..h).rev() {
        for x in 0..w {
            let v = map.get(x, y).map_or(f32::INFINITY, |u| u as f32);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_pfm(map: &DisparityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    (i < bytes.len()).then_some((tokens, i + 1))
}

/// Parses a single-channel PFM. Values are rounded to the nearest integer;
/// non-finite or negative values read as invalid. `d_max` defaults to the
/// largest valid value (at least 1).
pub fn decode_pfm(path: &Path, bytes: &[u8], d_max: Option<u32>) -> Result<DisparityMap> {
    let (tokens, start) =
        header_tokens(bytes, 4).ok_or_else(|| Error::malformed(path, "truncated PFM header"))?;
    if tokens[0] != "Pf" {
        return Err(Error::unsupported(path, format!("PFM kind {:?}; only Pf accepted", tokens[0])));
    }
    let parse_dim = |t: &str| -> Result<usize> {
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::malformed(path, format!("bad PFM dimension {t:?}")))
    };
    let (w, h) = (parse_dim(&tokens[1])?, parse_dim(&tokens[2])?);
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::malformed(path, format!("bad PFM scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::malformed(path, "PFM scale must be finite and nonzero"));
    }
    let need = w * h * 4;
    let raster = &bytes[start..];
    if raster.len() < need {
        return Err(Error::malformed(
            path,
            format!("PFM raster needs {need} bytes, found {}", raster.len()),
        ));
    }
    let mut values = vec![None; w * h];
    for (k, chunk) in raster[..need].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (x, row) = (k % w, k / w);
        let y = h - 1 - row;
        if v.is_finite() && v >= 0.0 {
            values[y * w + x] = Some(v.round() as u32);
        }
    }
    Ok(map_from_values(w, h, values, d_max))
}

fn map_from_values(w: usize, h: usize, values: Vec<Option<u32>>, d_max: Option<u32>) -> DisparityMap {
    let d_max = d_max.unwrap_or_else(|| values.iter().flatten().copied().max().unwrap_or(1).max(1));
    DisparityMap::from_fn(w, h, d_max, |x, y| values[y * w + x])
}

/// Reads a KITTI-style 16-bit grayscale PNG.
pub fn decode_kitti_png(path: &Path, bytes: &[u8], d_max: Option<u32>) -> Result<DisparityMap> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Sixteen {
        return Err(Error::unsupported(
            path,
            format!("disparity PNG must be 16-bit grayscale, got {color:?} {depth:?}"),
        ));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::malformed(path, "PNG too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let values = (0..w * h)
        .map(|i| {
            let raw = u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]);
            (raw != 0).then(|| ((raw as f64) / 256.0).round() as u32)
        })
        .collect();
    Ok(map_from_values(w, h, values, d_max))
}

pub fn encode_kitti_png(map: &DisparityMap) -> Result<Vec<u8>> {
    let (w, h) = (map.width(), map.height());
    let mut raw = Vec::with_capacity(w * h * 2);
    for y in 0..h {
        for x in 0..w {
            let v = map.get(x, y).map_or(0u32, |u| (u * 256).clamp(1, u16::MAX as u32));
            raw.extend_from_slice(&(v as u16).to_be_bytes());
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| Error::Serde(e.to_string()))?;
        writer.write_image_data(&raw).map_err(|e| Error::Serde(e.to_string()))?;
    }
    Ok(out)
}

/// Loads a disparity map from `.pfm` or 16-bit `.png`.
pub fn load_disparity(path: impl AsRef<Path>, d_max: Option<u32>) -> Result<DisparityMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_kitti_png(path, &bytes, d_max)
    } else if bytes.starts_with(b"P") {
        decode_pfm(path, &bytes, d_max)
    } else {
        Err(Error::unsupported(path, "expected PFM or 16-bit PNG disparity"))
    }
}

/// 8-bit view of a disparity map: `255·u/d_max`, invalid pixels black.
pub fn disparity_to_image(map: &DisparityMap) -> Result<GrayImage> {
    let scale = 255.0 / map.d_max().max(1) as f64;
    GrayImage::from_fn(map.width(), map.height(), |x, y| {
        map.get(x, y).map_or(0, |u| (u as f64 * scale).round().min(255.0) as u8)
    })
}

/// Copy of `img` with box outlines drawn `thickness` pixels wide.
pub fn draw_boxes(
    img: &GrayImage,
    boxes: &[(usize, usize, usize, usize)],
    value: u8,
    thickness: usize,
) -> GrayImage {
    let mut out = img.clone();
    let (w, h) = (img.width(), img.height());
    for &(bx, by, bw, bh) in boxes {
        if bw == 0 || bh == 0 {
            continue;
        }
        let x1 = (bx + bw).min(w);
        let y1 = (by + bh).min(h);
        for y in by.min(h)..y1 {
            for x in bx.min(w)..x1 {
                let edge = x < bx + thickness || x + thickness >= bx + bw || y < by + thickness || y + thickness >= by + bh;
                if edge {
                    out.set(x, y, value);
                }
            }
        }
    }
    out
}

/// Image files (`.pgm`/`.png`) in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("pgm" | "png")) {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn load_images(dir: &Path) -> Result<Vec<GrayImage>> {
    list_images(dir)?.iter().map(load_image).collect()
}
