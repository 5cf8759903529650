//! Three-level coarse-to-fine MPV.
//!
//! Layer 0 is the quarter-resolution image searched over its full range in
//! independent 16×16 blocks. Layer 1 (half resolution) searches a narrow
//! scope around twice the mode of the layer-0 result in each 8×8 block, and
//! layer 2 (full resolution) searches per pixel around twice the layer-1
//! result. Evaluated nodes are counted exactly.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::cost::{CostVolume, PatchStats, Scope};
use crate::error::{Error, Result};
use crate::imgio::{downsample_half, gradient_magnitude, GrayImage, StereoPair};
use crate::viterbi::{optimize_volume_in_blocks, run_mpv_scoped, DisparityMap, MpvParams};

pub const LAYERS: usize = 3;

/// Left and right images at quarter, half and full resolution.
#[derive(Clone, Debug)]
pub struct Pyramid {
    levels: [StereoPair; LAYERS],
}

impl Pyramid {
    /// Level 0 is the coarsest.
    pub fn level(&self, k: usize) -> &StereoPair {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[StereoPair; LAYERS] {
        &self.levels
    }
}

pub fn build_pyramid(pair: &StereoPair) -> Result<Pyramid> {
    if pair.width() < 8 || pair.height() < 8 {
        return Err(Error::TooSmall(format!(
            "pyramid needs at least 8x8, got {}x{}",
            pair.width(),
            pair.height()
        )));
    }
    let half = |img: &GrayImage| downsample_half(img);
    let mid = StereoPair::new(half(pair.left())?, half(pair.right())?)?;
    let coarse = StereoPair::new(half(mid.left())?, half(mid.right())?)?;
    Ok(Pyramid {
        levels: [coarse, mid, pair.clone()],
    })
}

/// Per-block initial disparities and search scopes over one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockInit {
    width: usize,
    height: usize,
    block_size: usize,
    inits: Vec<u32>,
    scopes: Vec<Scope>,
}

impl BlockInit {
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn blocks_x(&self) -> usize {
        self.width.div_ceil(self.block_size)
    }

    pub fn blocks_y(&self) -> usize {
        self.height.div_ceil(self.block_size)
    }

    pub fn init(&self, bx: usize, by: usize) -> u32 {
        self.inits[by * self.blocks_x() + bx]
    }

    pub fn block_scope(&self, bx: usize, by: usize) -> Scope {
        self.scopes[by * self.blocks_x() + bx]
    }

    /// Scope of the block containing pixel `(x, y)`.
    pub fn pixel_scope(&self, x: usize, y: usize) -> Scope {
        self.block_scope(x / self.block_size, y / self.block_size)
    }

    /// One scope per layer pixel, row-major.
    pub fn pixel_scopes(&self) -> Vec<Scope> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.pixel_scope(x, y));
            }
        }
        out
    }
}

/// How a propagated initial disparity becomes a search scope.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScopeRule {
    /// Disparity range `[0, d_layer]` of the target layer.
    pub d_layer: u32,
    /// Number of disparities searched per pixel.
    pub nodes: u32,
}

impl ScopeRule {
    /// Window of `nodes` disparities centred on `init`, shifted to stay in
    /// `[0, d_layer]`.
    pub fn scope_around(&self, init: u32) -> Scope {
        let nodes = self.nodes.clamp(1, self.d_layer + 1);
        let init = init.min(self.d_layer);
        let lo = init.saturating_sub(nodes / 2).min(self.d_layer + 1 - nodes);
        Scope::new(lo, lo + nodes - 1)
    }
}

/// Mode of `values`, ties to the smaller value.
pub fn mode_smallest(values: &[u32]) -> Option<u32> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mut best: Option<(u32, usize)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count() + i;
        if best.is_none_or(|(_, n)| j - i > n) {
            best = Some((sorted[i], j - i));
        }
        i = j;
    }
    best.map(|(v, _)| v)
}

/// Initializes each `block_size` block of the next (twice finer) layer with
/// twice the mode of the coarse disparities underneath it.
pub fn block_mode_init(
    disp: &DisparityMap,
    next_width: usize,
    next_height: usize,
    block_size: usize,
    rule: ScopeRule,
) -> Result<BlockInit> {
    if block_size == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    if next_width.div_ceil(2) != disp.width() || next_height.div_ceil(2) != disp.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} map does not halve {next_width}x{next_height}",
            disp.width(),
            disp.height()
        )));
    }
    let bx_n = next_width.div_ceil(block_size);
    let by_n = next_height.div_ceil(block_size);
    let mut inits = Vec::with_capacity(bx_n * by_n);
    let mut scopes = Vec::with_capacity(bx_n * by_n);
    let mut samples = Vec::new();
    for by in 0..by_n {
        for bx in 0..bx_n {
            samples.clear();
            let (x0, y0) = (bx * block_size / 2, by * block_size / 2);
            let x1 = ((bx + 1) * block_size).min(next_width).div_ceil(2);
            let y1 = ((by + 1) * block_size).min(next_height).div_ceil(2);
            for y in y0..y1 {
                for x in x0..x1 {
                    samples.extend(disp.get(x, y));
                }
            }
            let mode = mode_smallest(&samples).ok_or_else(|| {
                Error::Degenerate(format!("block ({bx},{by}) has no valid coarse disparity"))
            })?;
            let init = (2 * mode).min(rule.d_layer);
            inits.push(init);
            scopes.push(rule.scope_around(init));
        }
    }
    Ok(BlockInit {
        width: next_width,
        height: next_height,
        block_size,
        inits,
        scopes,
    })
}

/// Common disparity axis of neighbouring scopes. Entries of the result that
/// lie outside a pixel's own scope are its virtual nodes.
pub fn virtual_node_pad(scopes: &[Scope]) -> Option<Scope> {
    let (first, rest) = scopes.split_first()?;
    Some(rest.iter().fold(*first, |acc, s| acc.union_span(s)))
}

/// Exact, thread-safe count of evaluated (pixel, disparity) nodes per layer.
#[derive(Debug, Default)]
pub struct EvalCounter {
    layers: [AtomicU64; LAYERS],
    current: AtomicUsize,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Directs subsequent `add` calls to layer `k`.
    pub fn begin_layer(&self, k: usize) {
        assert!(k < LAYERS, "layer {k} out of range");
        self.current.store(k, Ordering::SeqCst);
    }

    pub fn add(&self, nodes: u64) {
        let k = self.current.load(Ordering::SeqCst);
        self.layers[k].fetch_add(nodes, Ordering::SeqCst);
    }

    pub fn layer(&self, k: usize) -> u64 {
        self.layers[k].load(Ordering::SeqCst)
    }

    pub fn total(&self) -> u64 {
        (0..LAYERS).map(|k| self.layer(k)).sum()
    }

    pub fn snapshot(&self) -> EvalSummary {
        EvalSummary {
            per_layer: [self.layer(0), self.layer(1), self.layer(2)],
            total: self.total(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_layer: [u64; LAYERS],
    pub total: u64,
}

impl EvalSummary {
    /// Evaluations relative to a full search `width·height·d_max`.
    pub fn ratio(&self, width: usize, height: usize, d_max: u32) -> f64 {
        self.total as f64 / (width as f64 * height as f64 * d_max as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiscaleParams {
    pub coarse_block: usize,
    pub mid_block: usize,
}

impl Default for MultiscaleParams {
    fn default() -> Self {
        Self {
            coarse_block: 16,
            mid_block: 8,
        }
    }
}

/// Runs the coarse-to-fine scheme. The returned map has no invalid pixels.
pub fn run_multiscale_mpv(
    pair: &StereoPair,
    d_max: u32,
    params: &MpvParams,
    ms: &MultiscaleParams,
) -> Result<(DisparityMap, EvalSummary)> {
    if d_max < 1 {
        return Err(Error::InvalidArgument("d_max must be at least 1".into()));
    }
    params.validate()?;
    let pyr = build_pyramid(pair)?;
    let counter = EvalCounter::new();
    let d_layers = [(d_max / 4).max(1), (d_max / 2).max(1), d_max];
    let nodes = (d_max / 4).max(1);

    counter.begin_layer(0);
    let coarse = pyr.level(0);
    let left = PatchStats::build(coarse.left(), &params.cost)?;
    let right = PatchStats::build(coarse.right(), &params.cost)?;
    let vol = CostVolume::dense(&left, &right, d_layers[0], &params.cost)?;
    counter.add(vol.node_count() as u64);
    let energy = optimize_volume_in_blocks(
        &vol,
        &gradient_magnitude(coarse.left()),
        &params.penalty,
        None,
        params.cost.dynamic_range,
        Some(ms.coarse_block),
    )?;
    let mut disp = fill_invalid_rows(&energy.winners(d_layers[0]))?;

    for k in 1..LAYERS {
        counter.begin_layer(k);
        let level = pyr.level(k);
        let block = if k == 1 { ms.mid_block } else { 1 };
        let rule = ScopeRule {
            d_layer: d_layers[k],
            nodes,
        };
        let init = block_mode_init(&disp, level.width(), level.height(), block, rule)?;
        let (map, _) =
            run_mpv_scoped(level, d_layers[k], init.pixel_scopes(), params, None, Some(&counter))?;
        disp = fill_invalid_rows(&map)?;
    }
    Ok((disp, counter.snapshot()))
}

/// Fills invalid pixels by linear interpolation along rows, rounding to the
/// nearest integer. Row ends take the nearest valid value in the row; rows
/// without any valid pixel copy the nearest row that has one.
pub fn fill_invalid_rows(map: &DisparityMap) -> Result<DisparityMap> {
    let (w, h) = (map.width(), map.height());
    let mut out = map.clone();
    let mut filled_rows = vec![false; h];
    for (y, filled) in filled_rows.iter_mut().enumerate() {
        let known: Vec<(usize, u32)> = (0..w).filter_map(|x| map.get(x, y).map(|u| (x, u))).collect();
        let Some(&(first_x, first_u)) = known.first() else {
            continue;
        };
        *filled = true;
        let &(last_x, last_u) = known.last().expect("non-empty");
        for x in 0..first_x {
            out.set(x, y, Some(first_u));
        }
        for x in last_x + 1..w {
            out.set(x, y, Some(last_u));
        }
        for pair in known.windows(2) {
            let ((xa, ua), (xb, ub)) = (pair[0], pair[1]);
            for x in xa + 1..xb {
                let t = (x - xa) as f64 / (xb - xa) as f64;
                let v = ua as f64 + t * (ub as f64 - ua as f64);
                out.set(x, y, Some(v.round() as u32));
            }
        }
    }
    if !filled_rows.iter().any(|&f| f) {
        return Err(Error::Degenerate("disparity map has no valid pixel".into()));
    }
    for y in 0..h {
        if filled_rows[y] {
            continue;
        }
        let src = (0..h)
            .filter(|&r| filled_rows[r])
            .min_by_key(|&r| (r.abs_diff(y), r))
            .expect("some row is filled");
        for x in 0..w {
            let u = out.get(x, src);
            out.set(x, y, u);
        }
    }
    Ok(out)
}
