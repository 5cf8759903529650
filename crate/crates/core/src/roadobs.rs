//! Road surface and obstacle analysis on a disparity map.
//!
//! Image coordinates used for geometry are centred on the principal point
//! with `y` pointing up: `x = col - cx`, `y = cy - row`. A pixel with
//! disparity `u` back-projects to `(X, Y, Z) = (x·B/u, y·B/u, f·B/u)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::viterbi::DisparityMap;

/// Pinhole stereo geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Focal length in pixels.
    pub focal_px: f64,
    /// Baseline in meters.
    pub baseline_m: f64,
    /// Principal point column.
    pub cx: f64,
    /// Principal point row.
    pub cy: f64,
}

impl Geometry {
    /// Geometry from lens focal length and sensor pixel pitch.
    pub fn from_optics(focal_mm: f64, pixel_pitch_um: f64, baseline_m: f64, cx: f64, cy: f64) -> Self {
        Self {
            focal_px: focal_mm * 1000.0 / pixel_pitch_um,
            baseline_m,
            cx,
            cy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px > 0.0 && self.baseline_m > 0.0) {
            return Err(Error::InvalidArgument("focal length and baseline must be > 0".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidArgument("principal point must be finite".into()));
        }
        Ok(())
    }

    /// `f·B`, the disparity-depth product.
    pub fn fb(&self) -> f64 {
        self.focal_px * self.baseline_m
    }

    pub fn depth(&self, disparity: f64) -> f64 {
        self.fb() / disparity
    }

    pub fn disparity_at(&self, depth: f64) -> f64 {
        self.fb() / depth
    }

    /// Centred image coordinates of a pixel, `y` up.
    pub fn image_coords(&self, col: f64, row: f64) -> (f64, f64) {
        (col - self.cx, self.cy - row)
    }

    pub fn backproject(&self, col: f64, row: f64, disparity: f64) -> [f64; 3] {
        let (x, y) = self.image_coords(col, row);
        let s = self.baseline_m / disparity;
        [x * s, y * s, self.focal_px * s]
    }

    /// `(col, row, disparity)` of a camera-frame point.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64, f64) {
        let u = self.fb() / p[2];
        (
            self.cx + self.focal_px * p[0] / p[2],
            self.cy - self.focal_px * p[1] / p[2],
            u,
        )
    }
}

/// Per-row disparity histogram, `bins × rows`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VDisparity {
    bins: usize,
    rows: usize,
    counts: Vec<u32>,
}

impl VDisparity {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Pixels in `row` with disparity `bin`.
    #[inline]
    pub fn get(&self, bin: usize, row: usize) -> u32 {
        self.counts[row * self.bins + bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn from_counts(bins: usize, rows: usize, f: impl Fn(usize, usize) -> u32) -> Self {
        let mut counts = vec![0; bins * rows];
        for j in 0..rows {
            for i in 0..bins {
                counts[j * bins + i] = f(i, j);
            }
        }
        Self { bins, rows, counts }
    }
}

/// Per-column disparity histogram, `bins × cols`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UDisparity {
    bins: usize,
    cols: usize,
    counts: Vec<u32>,
}

impl UDisparity {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, bin: usize, col: usize) -> u32 {
        self.counts[col * self.bins + bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

pub fn vdisparity(disp: &DisparityMap) -> VDisparity {
    let bins = disp.d_max() as usize + 1;
    let mut counts = vec![0u32; bins * disp.height()];
    for (_, y, u) in disp.iter_valid() {
        counts[y * bins + u as usize] += 1;
    }
    VDisparity {
        bins,
        rows: disp.height(),
        counts,
    }
}

pub fn udisparity(disp: &DisparityMap) -> UDisparity {
    let bins = disp.d_max() as usize + 1;
    let mut counts = vec![0u32; bins * disp.width()];
    for (x, _, u) in disp.iter_valid() {
        counts[x * bins + u as usize] += 1;
    }
    UDisparity {
        bins,
        cols: disp.width(),
        counts,
    }
}

/// A line `i·cos φ + j·sin φ = d` in (disparity, row) space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadonLine {
    pub d: f64,
    /// Radians.
    pub phi: f64,
    pub score: u64,
}

impl RadonLine {
    /// Row at which the line crosses disparity `i`, if not vertical.
    pub fn row_at(&self, i: f64) -> Option<f64> {
        let s = self.phi.sin();
        (s.abs() > 1e-9).then(|| (self.d - i * self.phi.cos()) / s)
    }
}

/// Angle bins (whole degrees, inclusive) searched by `radon_line`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngleRange {
    pub min_deg: u32,
    pub max_deg: u32,
}

impl AngleRange {
    pub const FULL: AngleRange = AngleRange {
        min_deg: 0,
        max_deg: 179,
    };
    /// Lines whose row grows with disparity, as a road seen from above it.
    pub const ROAD: AngleRange = AngleRange {
        min_deg: 91,
        max_deg: 179,
    };
}

/// Discrete Radon argmax over 1° angle bins and 1-pixel offset bins. Each
/// histogram cell adds its count to the nearest offset bin at every angle;
/// ties go to the larger angle, then the smaller offset.
pub fn radon_line(v: &VDisparity, angles: AngleRange) -> Result<RadonLine> {
    if angles.min_deg > angles.max_deg || angles.max_deg > 179 {
        return Err(Error::InvalidArgument(format!("bad angle range {angles:?}")));
    }
    let cells: Vec<(f64, f64, u64)> = (0..v.rows)
        .flat_map(|j| (0..v.bins).map(move |i| (i, j)))
        .filter_map(|(i, j)| {
            let c = v.get(i, j);
            (c > 0).then_some((i as f64, j as f64, c as u64))
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::Degenerate("v-disparity is empty".into()));
    }
    let reach = ((v.bins * v.bins + v.rows * v.rows) as f64).sqrt().ceil() as i64 + 1;
    let mut acc = vec![0u64; (2 * reach + 1) as usize];
    let mut best: Option<RadonLine> = None;
    for deg in angles.min_deg..=angles.max_deg {
        let phi = (deg as f64).to_radians();
        let (s, c) = phi.sin_cos();
        acc.iter_mut().for_each(|a| *a = 0);
        for &(i, j, w) in &cells {
            let bin = (i * c + j * s).round() as i64;
            acc[(bin + reach) as usize] += w;
        }
        let (k, &score) = acc
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty accumulator");
        if best.is_none_or(|b| score >= b.score) {
            best = Some(RadonLine {
                d: (k as i64 - reach) as f64,
                phi,
                score,
            });
        }
    }
    Ok(best.expect("at least one angle"))
}

/// Road profile: for consecutive disparities starting at `first_disparity`,
/// the row where the road takes that disparity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoadPath {
    pub first_disparity: u32,
    pub rows: Vec<usize>,
}

impl RoadPath {
    pub fn last_disparity(&self) -> u32 {
        self.first_disparity + self.rows.len() as u32 - 1
    }

    /// Road disparity on `row`: the disparity of the last stage starting at
    /// or above it. `None` above the first stage.
    pub fn disparity_at_row(&self, row: usize) -> Option<u32> {
        let k = self.rows.partition_point(|&r| r <= row);
        (k > 0).then(|| self.first_disparity + k as u32 - 1)
    }

    /// Sum of histogram counts along the path.
    pub fn score(&self, v: &VDisparity) -> u64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(k, &j)| v.get(self.first_disparity as usize + k, j) as u64)
            .sum()
    }
}

/// Restricts `road_viterbi` states to rows near a Radon line.
#[derive(Clone, Copy, Debug)]
pub struct PathBand {
    pub line: RadonLine,
    pub half_width: usize,
}

/// Maximum-count road profile. Stage `i` runs over the disparity bins from
/// `min_disparity` to the largest non-empty bin; consecutive rows obey
/// `0 < j - j' < eta`. Ties go to the smaller row.
pub fn road_viterbi(
    v: &VDisparity,
    eta: usize,
    min_disparity: u32,
    band: Option<PathBand>,
) -> Result<RoadPath> {
    if eta < 2 {
        return Err(Error::InvalidArgument(format!("eta must be >= 2, got {eta}")));
    }
    let nonzero = |i: usize| (0..v.rows).any(|j| v.get(i, j) > 0);
    let lo = min_disparity as usize;
    let first = (lo..v.bins).find(|&i| nonzero(i));
    let last = (lo..v.bins).rev().find(|&i| nonzero(i));
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::Degenerate("no disparity bins to trace".into()));
    };
    let stages = last - first + 1;
    if stages > v.rows {
        return Err(Error::Infeasible(format!(
            "{stages} disparity stages need more than {} rows",
            v.rows
        )));
    }
    let allowed = |i: usize, j: usize| match band {
        None => true,
        Some(b) => b
            .line
            .row_at(i as f64)
            .is_some_and(|r| (j as f64 - r).abs() <= b.half_width as f64),
    };
    const NONE: i64 = i64::MIN;
    let rows = v.rows;
    let mut score = vec![NONE; rows];
    for (j, s) in score.iter_mut().enumerate() {
        if allowed(first, j) {
            *s = v.get(first, j) as i64;
        }
    }
    let mut back = vec![0usize; stages * rows];
    let mut next = vec![NONE; rows];
    for k in 1..stages {
        let i = first + k;
        for j in 0..rows {
            next[j] = NONE;
            if !allowed(i, j) {
                continue;
            }
            let from = j.saturating_sub(eta - 1);
            let mut best = NONE;
            let mut arg = 0;
            for (jp, &s) in score.iter().enumerate().take(j).skip(from) {
                if s > best {
                    best = s;
                    arg = jp;
                }
            }
            if best != NONE {
                next[j] = best + v.get(i, j) as i64;
                back[k * rows + j] = arg;
            }
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut j = (0..rows)
        .filter(|&j| score[j] != NONE)
        .max_by(|&a, &b| score[a].cmp(&score[b]).then(b.cmp(&a)))
        .ok_or_else(|| Error::Infeasible("no road path satisfies the step bound".into()))?;
    let mut path = vec![0; stages];
    for k in (0..stages).rev() {
        path[k] = j;
        if k > 0 {
            j = back[k * rows + j];
        }
    }
    Ok(RoadPath {
        first_disparity: first as u32,
        rows: path,
    })
}

/// Plane `n·P = offset` with unit normal `n`, `n_y >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    /// Normalizes `(a, b, c, offset)`; fails on a zero normal.
    pub fn new(a: f64, b: f64, c: f64, offset: f64) -> Result<Self> {
        let n = (a * a + b * b + c * c).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate("plane normal is zero".into()));
        }
        let sign = if b < 0.0 { -1.0 } else { 1.0 };
        Ok(Self {
            normal: [sign * a / n, sign * b / n, sign * c / n],
            offset: sign * offset / n,
        })
    }

    /// Signed distance of a point along the normal.
    pub fn height_of(&self, p: [f64; 3]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] - self.offset
    }

    /// Disparity the plane takes at a pixel, `<= 0` when the ray misses it.
    pub fn disparity_at(&self, geometry: &Geometry, col: f64, row: f64) -> f64 {
        let (x, y) = geometry.image_coords(col, row);
        let [a, b, c] = self.normal;
        geometry.baseline_m * (a * x + b * y + c * geometry.focal_px) / self.offset
    }
}

/// Fits a plane to the pixels on the road profile (disparity within ±1 of
/// the profile at their row). The fit is a least-squares model of disparity
/// as an affine function of image position, which is exact for planes;
/// samples more than one pixel off the first fit are dropped and the fit
/// repeated.
pub fn fit_plane(path: &RoadPath, geometry: &Geometry, disp: &DisparityMap) -> Result<Plane> {
    geometry.validate()?;
    let samples: Vec<[f64; 3]> = disp
        .iter_valid()
        .filter(|&(_, y, u)| {
            u >= 1 && path.disparity_at_row(y).is_some_and(|p| u.abs_diff(p) <= 1)
        })
        .map(|(x, y, u)| {
            let (xc, yc) = geometry.image_coords(x as f64, y as f64);
            [xc, yc, u as f64]
        })
        .collect();
    let coeffs = affine_fit(&samples)?;
    let kept: Vec<[f64; 3]> = samples
        .iter()
        .copied()
        .filter(|s| (coeffs[0] * s[0] + coeffs[1] * s[1] + coeffs[2] - s[2]).abs() <= 1.0)
        .collect();
    let coeffs = if kept.len() >= 3 && kept.len() < samples.len() {
        affine_fit(&kept)?
    } else {
        coeffs
    };
    plane_from_affine(coeffs, geometry)
}

/// Plane whose disparity field is `u = α·x + β·y + γ` in centred coords.
pub fn plane_from_affine(coeffs: [f64; 3], geometry: &Geometry) -> Result<Plane> {
    let [alpha, beta, gamma] = coeffs;
    let raw = [alpha, beta, gamma / geometry.focal_px];
    let norm = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
    if !(norm > 1e-12) {
        return Err(Error::Degenerate("fitted disparity field is zero".into()));
    }
    Plane::new(raw[0], raw[1], raw[2], geometry.baseline_m)
}

/// Least squares `u ≈ α·x + β·y + γ` over `[x, y, u]` samples.
fn affine_fit(samples: &[[f64; 3]]) -> Result<[f64; 3]> {
    if samples.len() < 3 {
        return Err(Error::Degenerate(format!(
            "plane fit needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    // Centre for conditioning.
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s[0]).sum::<f64>() / n;
    let my = samples.iter().map(|s| s[1]).sum::<f64>() / n;
    let mu = samples.iter().map(|s| s[2]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy, mut sxu, mut syu) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in samples {
        let (x, y, u) = (s[0] - mx, s[1] - my, s[2] - mu);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxu += x * u;
        syu += y * u;
    }
    let det = sxx * syy - sxy * sxy;
    if !(det > 1e-9 * (sxx * syy).max(1e-300)) {
        return Err(Error::Degenerate("road samples are collinear".into()));
    }
    let alpha = (sxu * syy - syu * sxy) / det;
    let beta = (syu * sxx - sxu * sxy) / det;
    Ok([alpha, beta, mu - alpha * mx - beta * my])
}

/// Membership test for the road region.
pub trait RoadRegion {
    fn contains(&self, col: usize, row: usize, disparity: f64) -> bool;
}

impl RoadRegion for RoadPath {
    /// Pixels whose disparity is within ±1 of the profile at their row.
    fn contains(&self, _col: usize, row: usize, disparity: f64) -> bool {
        self.disparity_at_row(row)
            .is_some_and(|p| (disparity - p as f64).abs() <= 1.0)
    }
}

/// Region containing every pixel.
#[derive(Clone, Copy, Debug, Default)]
pub struct WholeImage;

impl RoadRegion for WholeImage {
    fn contains(&self, _: usize, _: usize, _: f64) -> bool {
        true
    }
}

/// Heights at or below this are treated as lying on the plane.
pub const ON_PLANE_EPS: f64 = 1e-9;

/// Height of the back-projected pixel above `plane`, in meters.
pub fn height_above_plane(col: f64, row: f64, disparity: f64, plane: &Plane, geometry: &Geometry) -> Result<f64> {
    if !(disparity > 0.0) {
        return Err(Error::InvalidArgument("disparity must be > 0".into()));
    }
    let (x, y) = geometry.image_coords(col, row);
    let [a, b, c] = plane.normal;
    let norm = (a * a + b * b + c * c).sqrt();
    let b_m = geometry.baseline_m;
    let numer = a * x * b_m + b * y * b_m + c * geometry.focal_px * b_m - plane.offset * disparity;
    Ok(numer / (disparity * norm))
}

/// True when the pixel lies in the road region and strictly between the
/// plane and `max_height` above it.
pub fn classify_small_object(
    col: f64,
    row: f64,
    disparity: f64,
    plane: &Plane,
    geometry: &Geometry,
    max_height: f64,
    region: &impl RoadRegion,
) -> Result<bool> {
    let h = height_above_plane(col, row, disparity, plane, geometry)?;
    if !(col >= 0.0 && row >= 0.0) || !region.contains(col as usize, row as usize, disparity) {
        return Ok(false);
    }
    Ok(h > ON_PLANE_EPS && h < max_height)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadParams {
    /// Straightness bound on row steps between consecutive disparities.
    pub eta: usize,
    /// Smallest disparity traced by the road profile.
    pub min_disparity: u32,
    /// Half-width in rows of the Radon-seeded band; 0 disables the band.
    pub band_rows: usize,
    /// Small-object height threshold, meters.
    pub small_object_height: f64,
    /// Obstacle pixels must exceed the road disparity by this much.
    pub min_disparity_margin: f64,
    /// u-disparity run length marking an obstacle, as a fraction of height.
    pub min_run_fraction: f64,
    pub min_area: usize,
    pub min_distance: f64,
    pub max_distance: f64,
}

impl Default for RoadParams {
    fn default() -> Self {
        Self {
            eta: 24,
            min_disparity: 1,
            band_rows: 8,
            small_object_height: 0.05,
            min_disparity_margin: 1.5,
            min_run_fraction: 0.1,
            min_area: 150,
            min_distance: 3.0,
            max_distance: 60.0,
        }
    }
}

impl RoadParams {
    pub fn validate(&self) -> Result<()> {
        if self.eta < 2 {
            return Err(Error::InvalidArgument("eta must be >= 2".into()));
        }
        if !(self.small_object_height > 0.0) {
            return Err(Error::InvalidArgument("small-object height must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.min_run_fraction) {
            return Err(Error::InvalidArgument("min run fraction must be in [0, 1]".into()));
        }
        if !(self.min_distance > 0.0 && self.max_distance > self.min_distance) {
            return Err(Error::InvalidArgument("distance band must satisfy 0 < min < max".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadModel {
    pub line: Option<RadonLine>,
    pub path: RoadPath,
    pub plane: Plane,
    pub geometry: Geometry,
}

/// Radon line, profile and plane from a disparity map. The profile search is
/// confined to a band around the line when possible.
pub fn detect_road(disp: &DisparityMap, geometry: &Geometry, params: &RoadParams) -> Result<RoadModel> {
    params.validate()?;
    let v = vdisparity(disp);
    let mut road_only = v.clone();
    for j in 0..road_only.rows {
        for i in 0..(params.min_disparity as usize).min(road_only.bins) {
            road_only.counts[j * road_only.bins + i] = 0;
        }
    }
    let line = radon_line(&road_only, AngleRange::ROAD).ok();
    let banded = match (line, params.band_rows) {
        (Some(line), w) if w > 0 => road_viterbi(
            &v,
            params.eta,
            params.min_disparity,
            Some(PathBand { line, half_width: w }),
        )
        .ok(),
        _ => None,
    };
    let path = match banded {
        Some(p) => p,
        None => road_viterbi(&v, params.eta, params.min_disparity, None)?,
    };
    let plane = fit_plane(&path, geometry, disp)?;
    Ok(RoadModel {
        line,
        path,
        plane,
        geometry: *geometry,
    })
}

/// Obstacle region in image space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub mean_disparity: f64,
    pub distance: f64,
}

impl RoiBox {
    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains_box(&self, x: usize, y: usize, w: usize, h: usize) -> bool {
        x >= self.x && y >= self.y && x + w <= self.right() && y + h <= self.bottom()
    }

    pub fn overlaps(&self, other: &RoiBox) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }
}

/// Groups obstacle pixels into boxes. A pixel is an obstacle pixel when it
/// stands more than the small-object height above the road plane with a
/// disparity margin over the road, or when its (disparity, column) cell in
/// the u-disparity histogram holds a long vertical run. Pixels and groups
/// outside the distance band are dropped, as are groups under `min_area`.
pub fn extract_obstacle_rois(
    disp: &DisparityMap,
    road: &RoadModel,
    u_hist: &UDisparity,
    params: &RoadParams,
) -> Vec<RoiBox> {
    let (w, h) = (disp.width(), disp.height());
    let geometry = &road.geometry;
    let min_run = (params.min_run_fraction * h as f64).ceil().max(1.0) as u32;
    let in_band = |u: f64| {
        let z = geometry.depth(u);
        z >= params.min_distance && z <= params.max_distance
    };
    let mut mask = vec![false; w * h];
    for (x, y, u) in disp.iter_valid() {
        let uf = u as f64;
        if u == 0 || !in_band(uf) {
            continue;
        }
        let run = u_hist.get(u as usize, x) >= min_run;
        let raised = {
            let road_u = road.plane.disparity_at(geometry, x as f64, y as f64);
            let height = height_above_plane(x as f64, y as f64, uf, &road.plane, geometry)
                .unwrap_or(f64::NEG_INFINITY);
            height > params.small_object_height && uf - road_u >= params.min_disparity_margin
        };
        mask[y * w + x] = raised || run;
    }
    let mut label = vec![usize::MAX; w * h];
    let mut rois = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = rois.len();
        label[start] = id;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        let (mut n, mut sum) = (0usize, 0u64);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            n += 1;
            sum += disp.get(x, y).unwrap_or(0) as u64;
            let mut visit = |j: usize| {
                if mask[j] && label[j] == usize::MAX {
                    label[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        let mean = sum as f64 / n as f64;
        rois.push((
            n,
            RoiBox {
                x: x0,
                y: y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
                mean_disparity: mean,
                distance: geometry.depth(mean),
            },
        ));
    }
    rois.into_iter()
        .filter(|(n, r)| *n >= params.min_area && in_band(r.mean_disparity))
        .map(|(_, r)| r)
        .collect()
}
