//! SSIM matching cost.
//!
//! Window moments come from integral images over a border-replicated copy of
//! each image, so every mean, variance and cross-covariance query is O(1)
//! once the per-disparity product table has been built. Moments are kept as
//! exact integer sums until the final division.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    /// Odd window side N.
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range L of the pixel values.
    pub dynamic_range: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window
            )));
        }
        for (name, k) in [("k1", self.k1), ("k2", self.k2)] {
            if !(k > 0.0 && k < 0.2) {
                return Err(Error::InvalidArgument(format!("{name} must lie in (0, 0.2), got {k}")));
            }
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::InvalidArgument("dynamic range must be positive".into()));
        }
        for (name, e) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(e > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {e}")));
            }
        }
        Ok(())
    }

    pub fn radius(&self) -> usize {
        self.window / 2
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }
}

/// Integral images of one border-replicated image.
#[derive(Clone, Debug)]
pub struct PatchStats {
    width: usize,
    height: usize,
    radius: usize,
    padded_w: usize,
    padded_h: usize,
    padded: Vec<u8>,
    sum: Vec<u64>,
    sum_sq: Vec<u64>,
}

/// Raw window moments; `n` is the pixel count N².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowMoments {
    pub n: u64,
    pub sum: u64,
    pub sum_sq: u64,
}

impl WindowMoments {
    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.n as f64
    }

    /// Population variance, computed from the exact integer numerator.
    pub fn variance(&self) -> f64 {
        let num = self.n as i128 * self.sum_sq as i128 - (self.sum as i128) * (self.sum as i128);
        num.max(0) as f64 / (self.n as f64 * self.n as f64)
    }
}

#[inline]
fn integral_at(table: &[u64], stride: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
    // inclusive-exclusive rectangle [x0, x1) x [y0, y1) on a (w+1)x(h+1) table
    table[y1 * stride + x1] + table[y0 * stride + x0] - table[y0 * stride + x1] - table[y1 * stride + x0]
}

fn integral(w: usize, h: usize, value: impl Fn(usize, usize) -> u64) -> Vec<u64> {
    let stride = w + 1;
    let mut t = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += value(x, y);
            t[(y + 1) * stride + x + 1] = t[y * stride + x + 1] + row;
        }
    }
    t
}

impl PatchStats {
    pub fn build(img: &GrayImage, params: &CostParams) -> Result<Self> {
        params.validate()?;
        if img.width() < params.window || img.height() < params.window {
            return Err(Error::TooSmall(format!(
                "{}x{} image is smaller than the {}x{} SSIM window",
                img.width(),
                img.height(),
                params.window,
                params.window
            )));
        }
        let r = params.radius();
        let (pw, ph) = (img.width() + 2 * r, img.height() + 2 * r);
        let mut padded = Vec::with_capacity(pw * ph);
        for y in 0..ph {
            for x in 0..pw {
                padded.push(img.get_clamped(x as isize - r as isize, y as isize - r as isize));
            }
        }
        let sum = integral(pw, ph, |x, y| padded[y * pw + x] as u64);
        let sum_sq = integral(pw, ph, |x, y| {
            let v = padded[y * pw + x] as u64;
            v * v
        });
        Ok(Self {
            width: img.width(),
            height: img.height(),
            radius: r,
            padded_w: pw,
            padded_h: ph,
            padded,
            sum,
            sum_sq,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> usize {
        2 * self.radius + 1
    }

    /// Moments of the window centred on image pixel `(x, y)`.
    #[inline]
    pub fn moments(&self, x: usize, y: usize) -> WindowMoments {
        let n = self.window();
        let stride = self.padded_w + 1;
        WindowMoments {
            n: (n * n) as u64,
            sum: integral_at(&self.sum, stride, x, y, x + n, y + n),
            sum_sq: integral_at(&self.sum_sq, stride, x, y, x + n, y + n),
        }
    }

    pub fn mean(&self, x: usize, y: usize) -> f64 {
        self.moments(x, y).mean()
    }

    pub fn variance(&self, x: usize, y: usize) -> f64 {
        self.moments(x, y).variance()
    }

    /// Σ ψ·φ over the window at `(x, y)` in `self` and `(x - u, y)` in
    /// `right`, by direct summation over the padded rasters.
    pub fn cross_sum(&self, right: &PatchStats, x: usize, y: usize, u: usize) -> u64 {
        let n = self.window();
        let mut s = 0u64;
        for dy in 0..n {
            let row = (y + dy) * self.padded_w;
            for dx in 0..n {
                let a = self.padded[row + x + dx] as u64;
                let b = right.padded[row + x - u + dx] as u64;
                s += a * b;
            }
        }
        s
    }

    fn check_pair(&self, right: &PatchStats) -> Result<()> {
        if self.width != right.width || self.height != right.height || self.radius != right.radius {
            return Err(Error::DimensionMismatch(
                "left and right patch statistics differ in geometry".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimComponents {
    pub luminance: f64,
    pub contrast: f64,
    pub structure: f64,
}

impl SsimComponents {
    pub fn from_moments(
        left: WindowMoments,
        right: WindowMoments,
        cross: u64,
        params: &CostParams,
    ) -> Self {
        let n = left.n as f64;
        let (mu_l, mu_r) = (left.mean(), right.mean());
        let (var_l, var_r) = (left.variance(), right.variance());
        let cov_num = left.n as i128 * cross as i128 - left.sum as i128 * right.sum as i128;
        let cov = cov_num as f64 / (n * n);
        let sigma_lr = (var_l * var_r).sqrt();
        let (c1, c2, c3) = (params.c1(), params.c2(), params.c3());
        Self {
            luminance: (2.0 * (mu_l * mu_r) + c1) / (mu_l * mu_l + mu_r * mu_r + c1),
            contrast: (2.0 * sigma_lr + c2) / (var_l + var_r + c2),
            structure: (cov + c3) / (sigma_lr + c3),
        }
    }

    /// `l^α c^β s^γ`; a negative structure term keeps its sign.
    pub fn index(&self, params: &CostParams) -> f64 {
        let s = self.structure;
        self.luminance.powf(params.alpha)
            * self.contrast.powf(params.beta)
            * s.signum()
            * s.abs().powf(params.gamma)
    }

    /// `(1 - SSIM) · L / 2`, clamped to `[0, L]`.
    pub fn cost(&self, params: &CostParams) -> f64 {
        let l = params.dynamic_range;
        ((1.0 - self.index(params)) * l * 0.5).clamp(0.0, l)
    }
}

fn check_query(left: &PatchStats, x: usize, y: usize) -> Result<()> {
    if x >= left.width || y >= left.height {
        return Err(Error::OutOfBounds(format!(
            "pixel ({x},{y}) outside {}x{} image",
            left.width, left.height
        )));
    }
    Ok(())
}

/// Luminance, contrast and structure terms for left pixel `(x, y)` matched
/// against right pixel `(x - u, y)`.
pub fn ssim_components(
    left: &PatchStats,
    right: &PatchStats,
    x: usize,
    y: usize,
    u: usize,
    params: &CostParams,
) -> Result<SsimComponents> {
    left.check_pair(right)?;
    check_query(left, x, y)?;
    if u > x {
        return Err(Error::OutOfBounds(format!(
            "disparity {u} at column {x} leaves the right image"
        )));
    }
    let cross = left.cross_sum(right, x, y, u);
    Ok(SsimComponents::from_moments(
        left.moments(x, y),
        right.moments(x - u, y),
        cross,
        params,
    ))
}

/// Matching cost in `[0, L]`. A disparity that leaves the right image costs
/// exactly `L`.
pub fn ssim_cost(
    left: &PatchStats,
    right: &PatchStats,
    x: usize,
    y: usize,
    u: usize,
    params: &CostParams,
) -> Result<f64> {
    left.check_pair(right)?;
    check_query(left, x, y)?;
    if u > x {
        return Ok(params.dynamic_range);
    }
    Ok(ssim_components(left, right, x, y, u, params)?.cost(params))
}

/// Inclusive disparity interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scope {
    pub lo: u32,
    pub hi: u32,
}

impl Scope {
    pub fn new(lo: u32, hi: u32) -> Self {
        debug_assert!(lo <= hi);
        Self { lo, hi }
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn contains(&self, u: u32) -> bool {
        self.lo <= u && u <= self.hi
    }

    pub fn union_span(&self, other: &Scope) -> Scope {
        Scope::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }
}

/// Per-pixel cost storage over a per-pixel disparity scope. A dense volume is
/// the special case where every scope is `[0, d_max]`.
#[derive(Clone, Debug)]
pub struct CostVolume {
    width: usize,
    height: usize,
    scopes: Vec<Scope>,
    offsets: Vec<usize>,
    costs: Vec<f32>,
}

impl CostVolume {
    pub fn dense(
        left: &PatchStats,
        right: &PatchStats,
        d_max: u32,
        params: &CostParams,
    ) -> Result<Self> {
        let scopes = vec![Scope::new(0, d_max); left.width * left.height];
        Self::scoped(left, right, scopes, params)
    }

    /// Evaluates every node inside each pixel's scope. Product sums for
    /// disparity `u` come from one integral table per `u`.
    pub fn scoped(
        left: &PatchStats,
        right: &PatchStats,
        scopes: Vec<Scope>,
        params: &CostParams,
    ) -> Result<Self> {
        left.check_pair(right)?;
        let (w, h) = (left.width, left.height);
        if scopes.len() != w * h {
            return Err(Error::DimensionMismatch(format!(
                "{} scopes for a {w}x{h} image",
                scopes.len()
            )));
        }
        let mut offsets = Vec::with_capacity(w * h + 1);
        let mut acc = 0usize;
        for s in &scopes {
            offsets.push(acc);
            acc += s.len();
        }
        offsets.push(acc);
        let mut costs = vec![0f32; acc];

        let u_min = scopes.iter().map(|s| s.lo).min().unwrap_or(0);
        let u_max = scopes.iter().map(|s| s.hi).max().unwrap_or(0);
        let n = left.window();
        let (pw, ph) = (left.padded_w, left.padded_h);
        let stride = pw + 1;
        let l_range = params.dynamic_range as f32;

        for u in u_min..=u_max {
            let us = u as usize;
            let rows: Vec<usize> = (0..h)
                .filter(|&y| scopes[y * w..(y + 1) * w].iter().any(|s| s.contains(u)))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let products = integral(pw, ph, |x, y| {
                if x < us {
                    0
                } else {
                    left.padded[y * pw + x] as u64 * right.padded[y * pw + x - us] as u64
                }
            });
            let row_costs: Vec<(usize, Vec<(usize, f32)>)> = rows
                .par_iter()
                .map(|&y| {
                    let mut out = Vec::new();
                    for x in 0..w {
                        let i = y * w + x;
                        let s = scopes[i];
                        if !s.contains(u) {
                            continue;
                        }
                        let c = if us > x {
                            l_range
                        } else {
                            let cross = integral_at(&products, stride, x, y, x + n, y + n);
                            SsimComponents::from_moments(
                                left.moments(x, y),
                                right.moments(x - us, y),
                                cross,
                                params,
                            )
                            .cost(params) as f32
                        };
                        out.push((offsets[i] + (u - s.lo) as usize, c));
                    }
                    (y, out)
                })
                .collect();
            for (_, entries) in row_costs {
                for (k, c) in entries {
                    costs[k] = c;
                }
            }
        }
        Ok(Self {
            width: w,
            height: h,
            scopes,
            offsets,
            costs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn scope(&self, x: usize, y: usize) -> Scope {
        self.scopes[y * self.width + x]
    }

    pub fn scopes(&self) -> &[Scope] {
        &self.scopes
    }

    /// Costs of pixel `(x, y)` for `u` in its scope, ascending.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = y * self.width + x;
        &self.costs[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn offset(&self, x: usize, y: usize) -> usize {
        self.offsets[y * self.width + x]
    }

    pub fn raw(&self) -> &[f32] {
        &self.costs
    }

    /// Number of evaluated (pixel, disparity) nodes.
    pub fn node_count(&self) -> usize {
        self.costs.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.gen()).collect();
        GrayImage::new(w, h, data).unwrap()
    }

    /// Direct window statistics with replicated borders.
    fn direct_stats(img: &GrayImage, x: usize, y: usize, n: usize) -> (f64, f64) {
        let r = (n / 2) as isize;
        let mut vals = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                vals.push(img.get_clamped(x as isize + dx, y as isize + dy) as f64);
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn constant_image_statistics() {
        let img = GrayImage::filled(9, 9, 77).unwrap();
        let s = PatchStats::build(&img, &CostParams::default()).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                assert_eq!(s.mean(x, y), 77.0);
                assert_eq!(s.variance(x, y), 0.0);
            }
        }
    }

    #[test]
    fn checkerboard_and_tiny_image_match_direct_sums() {
        let p = CostParams {
            window: 3,
            ..CostParams::default()
        };
        let board = GrayImage::from_fn(8, 8, |x, y| if (x + y) % 2 == 0 { 0 } else { 255 }).unwrap();
        let s = PatchStats::build(&board, &p).unwrap();
        for y in 1..7 {
            for x in 1..7 {
                let (m, v) = direct_stats(&board, x, y, 3);
                assert!((s.mean(x, y) - m).abs() <= 1e-9 * m.abs().max(1.0));
                assert!((s.variance(x, y) - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }

        let tiny = GrayImage::new(3, 3, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        let s = PatchStats::build(&tiny, &p).unwrap();
        assert_eq!(s.mean(1, 1), 5.0);
        // Σ(v-5)^2 = 16+9+4+1+0+1+4+9+16 = 60 over 9 pixels
        assert!((s.variance(1, 1) - 60.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn image_smaller_than_window_is_rejected() {
        let img = GrayImage::filled(5, 9, 0).unwrap();
        assert!(matches!(
            PatchStats::build(&img, &CostParams::default()),
            Err(Error::TooSmall(_))
        ));
    }

    #[test]
    fn params_validation() {
        let bad = [
            CostParams { window: 4, ..Default::default() },
            CostParams { window: 1, ..Default::default() },
            CostParams { k1: 0.3, ..Default::default() },
            CostParams { k2: 0.0, ..Default::default() },
            CostParams { gamma: 0.0, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        let p = CostParams::default();
        assert!((p.c1() - 6.5025).abs() < 1e-12);
        assert!((p.c2() - 58.5225).abs() < 1e-12);
        assert!((p.c3() - 29.26125).abs() < 1e-12);
    }

    #[test]
    fn identical_patches_have_unit_components_and_zero_cost() {
        let img = rand_img(20, 12, 3);
        let p = CostParams::default();
        let s = PatchStats::build(&img, &p).unwrap();
        let c = ssim_components(&s, &s, 10, 6, 0, &p).unwrap();
        assert_eq!((c.luminance, c.contrast, c.structure), (1.0, 1.0, 1.0));
        assert_eq!(ssim_cost(&s, &s, 10, 6, 0, &p).unwrap(), 0.0);
    }

    #[test]
    fn black_versus_white_patch() {
        let p = CostParams::default();
        let a = PatchStats::build(&GrayImage::filled(9, 9, 0).unwrap(), &p).unwrap();
        let b = PatchStats::build(&GrayImage::filled(9, 9, 255).unwrap(), &p).unwrap();
        let c = ssim_components(&a, &b, 4, 4, 0, &p).unwrap();
        let expect_l = p.c1() / (255.0 * 255.0 + p.c1());
        assert!((c.luminance - expect_l).abs() < 1e-15);
        assert!((c.luminance - 1.0e-4).abs() < 1e-6);
        assert_eq!((c.contrast, c.structure), (1.0, 1.0));
        let cost = ssim_cost(&a, &b, 4, 4, 0, &p).unwrap();
        assert!((cost - (1.0 - expect_l) * 127.5).abs() < 1e-9);
        assert!((cost - 127.49).abs() < 0.01);
    }

    #[test]
    fn inverted_patch_has_negative_covariance() {
        let p = CostParams {
            window: 3,
            ..CostParams::default()
        };
        let a = GrayImage::from_fn(3, 3, |x, y| (100 + 20 * x + 7 * y) as u8).unwrap();
        let inv = GrayImage::from_fn(3, 3, |x, y| (200 - a.get(x, y) as i32 + 100) as u8).unwrap();
        let sa = PatchStats::build(&a, &p).unwrap();
        let sb = PatchStats::build(&inv, &p).unwrap();
        let c = ssim_components(&sa, &sb, 1, 1, 0, &p).unwrap();
        assert!(c.structure < 1.0);
        assert!(c.structure < 0.0);
        let cost = ssim_cost(&sa, &sb, 1, 1, 0, &p).unwrap();
        assert!(cost > 127.5 && cost <= 255.0);
    }

    #[test]
    fn out_of_range_disparity_costs_full_range() {
        let p = CostParams::default();
        let img = rand_img(16, 16, 1);
        let s = PatchStats::build(&img, &p).unwrap();
        assert_eq!(ssim_cost(&s, &s, 2, 5, 3, &p).unwrap(), 255.0);
        assert!(ssim_components(&s, &s, 2, 5, 3, &p).is_err());
        assert!(ssim_cost(&s, &s, 16, 5, 0, &p).is_err());
    }

    #[test]
    fn volume_matches_pointwise_queries() {
        let p = CostParams::default();
        let l = rand_img(24, 14, 5);
        let r = rand_img(24, 14, 6);
        let (sl, sr) = (PatchStats::build(&l, &p).unwrap(), PatchStats::build(&r, &p).unwrap());
        let vol = CostVolume::dense(&sl, &sr, 6, &p).unwrap();
        for y in 0..14 {
            for x in 0..24 {
                for u in 0..=6 {
                    let direct = ssim_cost(&sl, &sr, x, y, u, &p).unwrap() as f32;
                    assert_eq!(vol.pixel(x, y)[u], direct, "({x},{y},{u})");
                }
            }
        }
        let scopes: Vec<Scope> = (0..24 * 14).map(|i| Scope::new((i % 4) as u32, (i % 4 + 2) as u32)).collect();
        let sv = CostVolume::scoped(&sl, &sr, scopes, &p).unwrap();
        assert_eq!(sv.node_count(), 24 * 14 * 3);
        for y in 0..14 {
            for x in 0..24 {
                let s = sv.scope(x, y);
                for u in s.lo..=s.hi {
                    assert_eq!(sv.pixel(x, y)[(u - s.lo) as usize], vol.pixel(x, y)[u as usize]);
                }
            }
        }
    }

    #[test]
    fn random_images_statistics_match_direct() {
        let p = CostParams::default();
        let img = rand_img(32, 32, 99);
        let s = PatchStats::build(&img, &p).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let (m, v) = direct_stats(&img, x, y, 7);
                assert!((s.mean(x, y) - m).abs() <= 1e-9 * m.abs().max(1.0));
                assert!((s.variance(x, y) - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn cost_is_bounded(seed in any::<u64>(), x in 0usize..20, y in 0usize..20, u in 0usize..25) {
            let p = CostParams::default();
            let l = rand_img(20, 20, seed);
            let r = rand_img(20, 20, seed ^ 0xabcdef);
            let (sl, sr) = (PatchStats::build(&l, &p).unwrap(), PatchStats::build(&r, &p).unwrap());
            let c = ssim_cost(&sl, &sr, x, y, u, &p).unwrap();
            prop_assert!((0.0..=255.0).contains(&c));
        }

        #[test]
        fn components_depend_only_on_moments(seed in any::<u64>(), shift in 1usize..9) {
            // rotate both 3x3 patches by the same cyclic permutation
            let p = CostParams { window: 3, ..CostParams::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<u8> = (0..9).map(|_| rng.gen()).collect();
            let b: Vec<u8> = (0..9).map(|_| rng.gen()).collect();
            let perm = |v: &[u8]| -> Vec<u8> { (0..9).map(|i| v[(i + shift) % 9]).collect() };
            let comp = |a: Vec<u8>, b: Vec<u8>| {
                let sa = PatchStats::build(&GrayImage::new(3, 3, a).unwrap(), &p).unwrap();
                let sb = PatchStats::build(&GrayImage::new(3, 3, b).unwrap(), &p).unwrap();
                ssim_components(&sa, &sb, 1, 1, 0, &p).unwrap()
            };
            let c0 = comp(a.clone(), b.clone());
            let c1 = comp(perm(&a), perm(&b));
            prop_assert!((c0.luminance - c1.luminance).abs() < 1e-12);
            prop_assert!((c0.contrast - c1.contrast).abs() < 1e-12);
            prop_assert!((c0.structure - c1.structure).abs() < 1e-12);
        }
    }
}
