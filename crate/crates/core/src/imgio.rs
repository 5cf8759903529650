//! Image containers, PGM/PNG I/O, remap-table rectification, pyramid
//! downsampling and the image gradient used by the smoothness term.

use std::fs;
use std::io::{Cursor, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit single-channel raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} image needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel with coordinates clamped into the image (replicated border).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<GrayImage> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::OutOfBounds(format!(
                "crop {w}x{h}+{x}+{y} outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for row in y..y + h {
            data.extend_from_slice(&self.data[row * self.width + x..row * self.width + x + w]);
        }
        GrayImage::new(w, h, data)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StereoPair {
    left: GrayImage,
    right: GrayImage,
}

impl StereoPair {
    pub fn new(left: GrayImage, right: GrayImage) -> Result<Self> {
        if left.width() != right.width() || left.height() != right.height() {
            return Err(Error::DimensionMismatch(format!(
                "left {}x{} vs right {}x{}",
                left.width(),
                left.height(),
                right.width(),
                right.height()
            )));
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &GrayImage {
        &self.left
    }

    pub fn right(&self) -> &GrayImage {
        &self.right
    }

    pub fn width(&self) -> usize {
        self.left.width()
    }

    pub fn height(&self) -> usize {
        self.left.height()
    }

    pub fn into_parts(self) -> (GrayImage, GrayImage) {
        (self.left, self.right)
    }
}

// --------------------------------------------------------------------------
// File I/O
// --------------------------------------------------------------------------

/// Loads a binary PGM (P5, maxval 255) or an 8-bit grayscale PNG.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(path, bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' {
        decode_pnm(path, &bytes)
    } else {
        Err(Error::unsupported(path, "neither PGM nor PNG signature"))
    }
}

/// Writes PNG when the extension is `.png`, binary PGM otherwise.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png {
        encode_png(path, img)?
    } else {
        encode_pgm(img)
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Header tokenizer for the netpbm family: whitespace separated, `#` starts a
/// comment running to end of line.
struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmHeader<'a> {
    fn token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, path: &Path, what: &str) -> Result<usize> {
        let tok = self
            .token()
            .ok_or_else(|| Error::malformed(path, format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::malformed(path, format!("bad {what}")))
    }
}

fn decode_pnm(path: &Path, bytes: &[u8]) -> Result<GrayImage> {
    let mut hdr = PnmHeader { bytes, pos: 0 };
    let magic = hdr.token().unwrap_or_default();
    match magic {
        b"P5" => {}
        b"P6" | b"P3" => return Err(Error::unsupported(path, "color PNM images are not accepted")),
        b"P2" => return Err(Error::unsupported(path, "ASCII PGM (P2) is not accepted")),
        _ => {
            return Err(Error::unsupported(
                path,
                format!("unknown PNM magic {:?}", String::from_utf8_lossy(magic)),
            ))
        }
    }
    let width = hdr.number(path, "width")?;
    let height = hdr.number(path, "height")?;
    let maxval = hdr.number(path, "maxval")?;
    if maxval != 255 {
        return Err(Error::unsupported(
            path,
            format!("maxval {maxval}; only 8-bit (255) supported"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(Error::malformed(path, "zero dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = hdr.pos + 1;
    let need = width * height;
    if start > bytes.len() || bytes.len() - start < need {
        return Err(Error::malformed(
            path,
            format!(
                "raster truncated: need {need} bytes, have {}",
                bytes.len().saturating_sub(start)
            ),
        ));
    }
    GrayImage::new(width, height, bytes[start..start + need].to_vec())
}

fn decode_png(path: &Path, bytes: Vec<u8>) -> Result<GrayImage> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::malformed(path, e.to_string()))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(Error::unsupported(
            path,
            format!("PNG color type {color:?}; only grayscale accepted"),
        ));
    }
    if depth != png::BitDepth::Eight {
        return Err(Error::unsupported(
            path,
            format!("PNG bit depth {depth:?}; only 8-bit accepted"),
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
    buf.truncate(frame.buffer_size());
    if frame.line_size != w {
        return Err(Error::malformed(path, "unexpected PNG row stride"));
    }
    GrayImage::new(w, h, buf)
}

fn encode_png(path: &Path, img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::malformed(path, e.to_string()))?;
        writer
            .write_image_data(&img.data)
            .map_err(|e| Error::malformed(path, e.to_string()))?;
    }
    Ok(out)
}

// --------------------------------------------------------------------------
// Rectification
// --------------------------------------------------------------------------

pub const REMAP_MAGIC: &[u8; 8] = b"MPVRMAP1";

/// Per-destination-pixel fractional source coordinates. NaN marks an invalid
/// entry.
#[derive(Clone, Debug, PartialEq)]
pub struct RemapTable {
    width: usize,
    height: usize,
    src_x: Vec<f32>,
    src_y: Vec<f32>,
}

impl RemapTable {
    pub fn new(width: usize, height: usize, src_x: Vec<f32>, src_y: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("remap table must be non-empty".into()));
        }
        if src_x.len() != width * height || src_y.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "remap table {width}x{height} needs {} coordinates per axis",
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            src_x,
            src_y,
        })
    }

    pub fn identity(width: usize, height: usize) -> Self {
        let mut src_x = Vec::with_capacity(width * height);
        let mut src_y = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                src_x.push(x as f32);
                src_y.push(y as f32);
            }
        }
        Self {
            width,
            height,
            src_x,
            src_y,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn source(&self, x: usize, y: usize) -> Option<(f32, f32)> {
        let i = y * self.width + x;
        let (sx, sy) = (self.src_x[i], self.src_y[i]);
        (sx.is_finite() && sy.is_finite()).then_some((sx, sy))
    }

    pub fn set_source(&mut self, x: usize, y: usize, src: Option<(f32, f32)>) {
        let i = y * self.width + x;
        let (sx, sy) = src.unwrap_or((f32::NAN, f32::NAN));
        self.src_x[i] = sx;
        self.src_y[i] = sy;
    }

    /// Little-endian: 8-byte magic, u32 width, u32 height, then interleaved
    /// f32 `(src_x, src_y)` pairs in row-major destination order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.src_x.len());
        out.extend_from_slice(REMAP_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for (sx, sy) in self.src_x.iter().zip(&self.src_y) {
            out.extend_from_slice(&sx.to_le_bytes());
            out.extend_from_slice(&sy.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != REMAP_MAGIC {
            return Err(Error::malformed(path, "missing remap-table magic"));
        }
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let n = width * height;
        if bytes.len() != 16 + 8 * n {
            return Err(Error::malformed(
                path,
                format!("expected {} payload bytes, found {}", 8 * n, bytes.len() - 16),
            ));
        }
        let mut src_x = Vec::with_capacity(n);
        let mut src_y = Vec::with_capacity(n);
        for pair in bytes[16..].chunks_exact(8) {
            src_x.push(f32::from_le_bytes(pair[..4].try_into().unwrap()));
            src_y.push(f32::from_le_bytes(pair[4..].try_into().unwrap()));
        }
        Self::new(width, height, src_x, src_y).map_err(|e| Error::malformed(path, e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Bilinear sample at a fractional position already known to be in bounds.
#[inline]
fn bilinear(img: &GrayImage, x: f32, y: f32) -> f32 {
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = img.get(x0, y0) as f32 * (1.0 - fx) + img.get(x1, y0) as f32 * fx;
    let bot = img.get(x0, y1) as f32 * (1.0 - fx) + img.get(x1, y1) as f32 * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resamples `img` through `table`. Invalid entries produce 0; a finite
/// coordinate outside the source raster is an error.
pub fn apply_remap(img: &GrayImage, table: &RemapTable) -> Result<GrayImage> {
    let max_x = (img.width - 1) as f32;
    let max_y = (img.height - 1) as f32;
    let mut out = Vec::with_capacity(table.width * table.height);
    for y in 0..table.height {
        for x in 0..table.width {
            let v = match table.source(x, y) {
                None => 0,
                Some((sx, sy)) => {
                    if sx < 0.0 || sy < 0.0 || sx > max_x || sy > max_y {
                        return Err(Error::OutOfBounds(format!(
                            "remap entry ({x},{y}) -> ({sx},{sy}) outside {}x{} source",
                            img.width, img.height
                        )));
                    }
                    (bilinear(img, sx, sy) + 0.5).floor().clamp(0.0, 255.0) as u8
                }
            };
            out.push(v);
        }
    }
    GrayImage::new(table.width, table.height, out)
}

// --------------------------------------------------------------------------
// Resampling
// --------------------------------------------------------------------------

/// Halves each axis (rounding up). Each output pixel is the round-half-up
/// mean of its 2x2 source block; edge blocks average the pixels available.
pub fn downsample_half(img: &GrayImage) -> Result<GrayImage> {
    if img.width < 2 || img.height < 2 {
        return Err(Error::TooSmall(format!(
            "cannot halve a {}x{} image",
            img.width, img.height
        )));
    }
    let w = img.width.div_ceil(2);
    let h = img.height.div_ceil(2);
    let mut out = Vec::with_capacity(w * h);
    for oy in 0..h {
        for ox in 0..w {
            let mut sum = 0u32;
            let mut n = 0u32;
            for y in 2 * oy..(2 * oy + 2).min(img.height) {
                for x in 2 * ox..(2 * ox + 2).min(img.width) {
                    sum += img.get(x, y) as u32;
                    n += 1;
                }
            }
            out.push(((2 * sum + n) / (2 * n)) as u8);
        }
    }
    GrayImage::new(w, h, out)
}

/// Bilinear resize in 8.8 fixed point. Every output pixel is an integer
/// combination of source pixels whose weights sum to exactly 2^16, so adding
/// a constant to the source adds the same constant to the output.
pub fn resize_bilinear(img: &GrayImage, new_w: usize, new_h: usize) -> Result<GrayImage> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::InvalidArgument("resize target must be non-empty".into()));
    }
    let axis = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, u32) {
        let scale = src_len as f64 / dst_len as f64;
        let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        let frac = ((pos - i0 as f64) * 256.0).round() as u32;
        (i0, i1, frac.min(256))
    };
    let xs: Vec<_> = (0..new_w).map(|x| axis(x, img.width, new_w)).collect();
    let ys: Vec<_> = (0..new_h).map(|y| axis(y, img.height, new_h)).collect();
    let mut out = Vec::with_capacity(new_w * new_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let a = img.get(x0, y0) as u32;
            let b = img.get(x1, y0) as u32;
            let c = img.get(x0, y1) as u32;
            let d = img.get(x1, y1) as u32;
            let top = a * (256 - fx) + b * fx;
            let bot = c * (256 - fx) + d * fx;
            let v = top * (256 - fy) + bot * fy;
            out.push(((v + (1 << 15)) >> 16) as u8);
        }
    }
    GrayImage::new(new_w, new_h, out)
}

// --------------------------------------------------------------------------
// Gradient
// --------------------------------------------------------------------------

/// Per-pixel non-negative gradient magnitude |G|.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMap {
    width: usize,
    height: usize,
    magnitude: Vec<f32>,
}

impl GradientMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.magnitude[y * self.width + x]
    }

    pub fn values(&self) -> &[f32] {
        &self.magnitude
    }
}

/// `(|I(x+1,y) - I(x-1,y)| / 2 + |I(x,y+1) - I(x,y-1)| / 2) / 2` with
/// replicated borders.
pub fn gradient_magnitude(img: &GrayImage) -> GradientMap {
    let (w, h) = (img.width as isize, img.height as isize);
    let mut magnitude = Vec::with_capacity(img.data.len());
    for y in 0..h {
        for x in 0..w {
            let gx = (img.get_clamped(x + 1, y) as f32 - img.get_clamped(x - 1, y) as f32).abs();
            let gy = (img.get_clamped(x, y + 1) as f32 - img.get_clamped(x, y - 1) as f32).abs();
            magnitude.push((gx * 0.5 + gy * 0.5) * 0.5);
        }
    }
    GradientMap {
        width: img.width,
        height: img.height,
        magnitude,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn loads_p5_bytes_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.pgm", b"P5\n2 2\n255\n\x00\x80\xff\x07");
        let img = load_image(&p).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.data(), &[0, 128, 255, 7]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "c.pgm", b"P5\n# made by hand\n1 1\n255\n\x2a");
        assert_eq!(load_image(&p).unwrap().data(), &[42]);
    }

    #[test]
    fn rejects_color_and_truncated_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p6 = write_tmp(&dir, "c.ppm", b"P6\n1 1\n255\n\x00\x00\x00");
        let err = load_image(&p6).unwrap_err();
        assert!(matches!(err, Error::Unsupported { .. }), "{err}");
        assert!(err.to_string().contains("c.ppm"));

        let trunc = write_tmp(&dir, "t.pgm", b"P5\n4 4\n255\n\x00\x01");
        assert!(matches!(load_image(&trunc).unwrap_err(), Error::Malformed { .. }));

        let deep = write_tmp(&dir, "d.pgm", b"P5\n1 1\n65535\n\x00\x00");
        assert!(matches!(load_image(&deep).unwrap_err(), Error::Unsupported { .. }));

        let missing = dir.path().join("nope.pgm");
        let err = load_image(&missing).unwrap_err();
        assert!(matches!(err, Error::FileNotFound { .. }));
        assert!(err.to_string().contains("nope.pgm"));
    }

    #[test]
    fn png_round_trip_and_minimal_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(5, 3, |x, y| (x * 40 + y) as u8).unwrap();
        let p = dir.path().join("r.png");
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);

        let one = GrayImage::filled(1, 1, 0).unwrap();
        let p = dir.path().join("one.pgm");
        save_image(&one, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"P5\n1 1\n255\n\x00");
        assert_eq!(load_image(&p).unwrap(), one);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let img = GrayImage::filled(1, 1, 0).unwrap();
        let err = save_image(&img, "/nonexistent-dir/x/y.pgm").unwrap_err();
        assert!(matches!(err, Error::FileNotFound { .. } | Error::Io { .. }));
    }

    #[test]
    fn identity_remap_is_identity() {
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 31 + y * 17) as u8).unwrap();
        let t = RemapTable::identity(7, 5);
        assert_eq!(apply_remap(&img, &t).unwrap(), img);
    }

    #[test]
    fn shifted_remap_takes_right_neighbour() {
        let img = GrayImage::from_fn(6, 2, |x, _| (x * 10) as u8).unwrap();
        let mut t = RemapTable::identity(6, 2);
        for y in 0..2 {
            for x in 0..6 {
                let src = (x + 1 < 6).then_some(((x + 1) as f32, y as f32));
                t.set_source(x, y, src);
            }
        }
        let out = apply_remap(&img, &t).unwrap();
        assert_eq!(out.row(0), &[10, 20, 30, 40, 50, 0]);
    }

    #[test]
    fn fractional_remap_interpolates() {
        let img = GrayImage::new(2, 1, vec![10, 20]).unwrap();
        let t = RemapTable::new(1, 1, vec![0.25], vec![0.0]).unwrap();
        // 10 * 0.75 + 20 * 0.25 = 12.5 -> 13
        assert_eq!(apply_remap(&img, &t).unwrap().data(), &[13]);
    }

    #[test]
    fn invalid_remap_is_zero_and_oob_is_error() {
        let img = GrayImage::filled(3, 3, 200).unwrap();
        let t = RemapTable::new(3, 3, vec![f32::NAN; 9], vec![f32::NAN; 9]).unwrap();
        assert!(apply_remap(&img, &t).unwrap().data().iter().all(|&v| v == 0));
        let bad = RemapTable::new(1, 1, vec![5.0], vec![0.0]).unwrap();
        assert!(matches!(apply_remap(&img, &bad), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn remap_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = RemapTable::identity(3, 2);
        t.set_source(1, 1, None);
        t.set_source(2, 0, Some((0.5, 1.25)));
        let p = dir.path().join("t.rmap");
        t.save(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 8 * 6);
        assert_eq!(&bytes[8..16], &[3, 0, 0, 0, 2, 0, 0, 0]);
        let back = RemapTable::load(&p).unwrap();
        assert_eq!(back.source(1, 1), None);
        assert_eq!(back.source(2, 0), Some((0.5, 1.25)));
        assert_eq!(back.source(0, 1), Some((0.0, 1.0)));
    }

    #[test]
    fn downsample_examples() {
        let img = GrayImage::new(2, 2, vec![0, 0, 255, 255]).unwrap();
        assert_eq!(downsample_half(&img).unwrap().data(), &[128]);

        let img = GrayImage::from_fn(4, 4, |x, y| (x * 10 + y * 3) as u8).unwrap();
        let out = downsample_half(&img).unwrap();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut s = 0.0;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    s += img.get(2 * ox + dx, 2 * oy + dy) as f64;
                }
                assert_eq!(out.get(ox, oy), (s / 4.0 + 0.5).floor() as u8);
            }
        }

        let odd = GrayImage::from_fn(3, 3, |x, _| if x == 2 { 9 } else { 1 }).unwrap();
        let out = downsample_half(&odd).unwrap();
        assert_eq!((out.width(), out.height()), (2, 2));
        assert_eq!(out.get(1, 1), 9);

        assert!(downsample_half(&GrayImage::filled(1, 5, 0).unwrap()).is_err());
    }

    #[test]
    fn gradient_examples() {
        let c = GrayImage::filled(4, 4, 77).unwrap();
        assert!(gradient_magnitude(&c).values().iter().all(|&g| g == 0.0));

        let ramp = GrayImage::from_fn(6, 4, |x, _| x as u8).unwrap();
        let g = gradient_magnitude(&ramp);
        for y in 0..4 {
            for x in 1..5 {
                assert_eq!(g.get(x, y), 0.5);
            }
        }

        let mut dot = GrayImage::filled(5, 5, 0).unwrap();
        dot.set(2, 2, 200);
        let g = gradient_magnitude(&dot);
        assert_eq!(g.get(2, 2), 0.0);
        for (x, y) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(g.get(x, y), 50.0);
        }
        assert_eq!(g.get(0, 0), 0.0);
    }

    proptest! {
        #[test]
        fn pgm_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let img = GrayImage::from_fn(w, h, |x, y| {
                (seed.wrapping_mul(6364136223846793005).wrapping_add((x * 131 + y * 7) as u64) >> 33) as u8
            }).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.pgm");
            save_image(&img, &p).unwrap();
            prop_assert_eq!(load_image(&p).unwrap(), img);
        }

        #[test]
        fn downsample_constant(w in 2usize..20, h in 2usize..20, v in any::<u8>()) {
            let img = GrayImage::filled(w, h, v).unwrap();
            let out = downsample_half(&img).unwrap();
            prop_assert!(out.data().iter().all(|&p| p == v));
        }

        #[test]
        fn resize_commutes_with_gray_shift(seed in any::<u64>(), c in 0u8..60, nw in 4usize..40, nh in 4usize..40) {
            let img = GrayImage::from_fn(17, 13, |x, y| {
                ((seed >> ((x + y) % 50)) as u8 ^ (x * 13 + y * 29) as u8) % 190
            }).unwrap();
            let shifted = GrayImage::from_fn(17, 13, |x, y| img.get(x, y) + c).unwrap();
            let a = resize_bilinear(&img, nw, nh).unwrap();
            let b = resize_bilinear(&shifted, nw, nh).unwrap();
            for (p, q) in a.data().iter().zip(b.data()) {
                prop_assert_eq!(*p as u16 + c as u16, *q as u16);
            }
        }
    }
}
