//! Multi-path Viterbi (MPV) disparity optimizer.
//!
//! Each path is a 1-D chain of pixels (a row, a column or a diagonal). Along a
//! chain the node energy obeys
//!
//! ```text
//! e(p, u) = cost(p, u) + min_v { e(p-1, v) + λ·exp(-|G(p)|/s)·|u - v| }
//! ```
//!
//! The transition term is linear in `|u - v|`, so the inner minimum is a
//! lower envelope of cones and two passes over the disparity axis compute it
//! exactly (`viterbi_sweep_fast`). `viterbi_sweep_direct` is the O(m²)
//! reference that the fast recurrence is checked against.
//!
//! `run_mpv` runs four hierarchical layers (horizontal, vertical, diagonal,
//! anti-diagonal). Each layer sweeps both ways, merges the two directions and
//! hands the merged energies to the next layer as a per-node prior.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{CostParams, CostVolume, PatchStats, Scope};
use crate::error::{Error, Result};
use crate::imgio::{gradient_magnitude, GradientMap, StereoPair};
use crate::multiscale::EvalCounter;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyParams {
    /// TV weight λ.
    pub lambda: f64,
    /// Multiplier on small-to-large disparity steps in the right-to-left
    /// horizontal sweep.
    pub occlusion_asymmetry: f64,
    /// The edge weight is `exp(-|G| / gradient_scale)`.
    pub gradient_scale: f64,
    /// Weight of the previous layer's merged energy in the next layer's node
    /// cost.
    pub carry_weight: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self {
            lambda: 8.0,
            occlusion_asymmetry: 2.0,
            gradient_scale: 16.0,
            carry_weight: 1.0,
        }
    }
}

impl PenaltyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.occlusion_asymmetry >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "occlusion asymmetry must be >= 1, got {}",
                self.occlusion_asymmetry
            )));
        }
        if !(self.gradient_scale > 0.0) {
            return Err(Error::InvalidArgument("gradient scale must be > 0".into()));
        }
        if !(self.carry_weight >= 0.0) {
            return Err(Error::InvalidArgument("carry weight must be >= 0".into()));
        }
        Ok(())
    }

    /// Per-unit-step transition weight `λ·exp(-g/s)` for gradient `g`.
    #[inline]
    pub fn edge_weight(&self, g: f64) -> f64 {
        self.lambda * (-g / self.gradient_scale).exp()
    }
}

/// TV transition cost `λ·exp(-g/s)·|u - v|`.
///
/// The occlusion multiplier is not applied here; sweeps apply it to the
/// transitions it covers.
pub fn tv_penalty(u: u32, v: u32, g: f64, params: &PenaltyParams) -> f64 {
    if u == v {
        return 0.0;
    }
    params.edge_weight(g) * u.abs_diff(v) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathDirection {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
    /// Top-left to bottom-right.
    RightDown,
    LeftUp,
    /// Top-right to bottom-left.
    LeftDown,
    RightUp,
}

impl PathDirection {
    pub const ALL: [PathDirection; 8] = [
        PathDirection::LeftToRight,
        PathDirection::RightToLeft,
        PathDirection::TopToBottom,
        PathDirection::BottomToTop,
        PathDirection::RightDown,
        PathDirection::LeftUp,
        PathDirection::LeftDown,
        PathDirection::RightUp,
    ];

    pub fn axis(self) -> PathAxis {
        use PathDirection::*;
        match self {
            LeftToRight | RightToLeft => PathAxis::Horizontal,
            TopToBottom | BottomToTop => PathAxis::Vertical,
            RightDown | LeftUp => PathAxis::Diagonal,
            LeftDown | RightUp => PathAxis::AntiDiagonal,
        }
    }

    pub fn opposite(self) -> PathDirection {
        use PathDirection::*;
        match self {
            LeftToRight => RightToLeft,
            RightToLeft => LeftToRight,
            TopToBottom => BottomToTop,
            BottomToTop => TopToBottom,
            RightDown => LeftUp,
            LeftUp => RightDown,
            LeftDown => RightUp,
            RightUp => LeftDown,
        }
    }

    /// Factor on transitions where the new disparity exceeds the old one.
    pub fn up_factor(self, params: &PenaltyParams) -> f64 {
        if self == PathDirection::RightToLeft {
            params.occlusion_asymmetry
        } else {
            1.0
        }
    }
}

/// One of the four bi-directional path pairs, in layer order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathAxis {
    Horizontal,
    Vertical,
    Diagonal,
    AntiDiagonal,
}

impl PathAxis {
    pub const LAYERS: [PathAxis; 4] = [
        PathAxis::Horizontal,
        PathAxis::Vertical,
        PathAxis::Diagonal,
        PathAxis::AntiDiagonal,
    ];

    pub fn directions(self) -> (PathDirection, PathDirection) {
        match self {
            PathAxis::Horizontal => (PathDirection::LeftToRight, PathDirection::RightToLeft),
            PathAxis::Vertical => (PathDirection::TopToBottom, PathDirection::BottomToTop),
            PathAxis::Diagonal => (PathDirection::RightDown, PathDirection::LeftUp),
            PathAxis::AntiDiagonal => (PathDirection::LeftDown, PathDirection::RightUp),
        }
    }

    pub fn merge_rule(self) -> MergeRule {
        match self {
            PathAxis::Horizontal => MergeRule::Min,
            _ => MergeRule::Mean,
        }
    }

    /// Pixel chains of this axis, each listed in the forward direction.
    pub fn lines(self, width: usize, height: usize) -> Vec<Vec<(usize, usize)>> {
        let (w, h) = (width as isize, height as isize);
        match self {
            PathAxis::Horizontal => (0..height)
                .map(|y| (0..width).map(|x| (x, y)).collect())
                .collect(),
            PathAxis::Vertical => (0..width)
                .map(|x| (0..height).map(|y| (x, y)).collect())
                .collect(),
            PathAxis::Diagonal => (-(h - 1)..w)
                .map(|k| {
                    // x - y = k
                    (0..h)
                        .filter_map(|y| {
                            let x = y + k;
                            (0..w).contains(&x).then_some((x as usize, y as usize))
                        })
                        .collect()
                })
                .collect(),
            PathAxis::AntiDiagonal => (0..w + h - 1)
                .map(|k| {
                    // x + y = k, walked top-right to bottom-left
                    (0..h)
                        .filter_map(|y| {
                            let x = k - y;
                            (0..w).contains(&x).then_some((x as usize, y as usize))
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeRule {
    Min,
    Mean,
}

impl MergeRule {
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            MergeRule::Min => a.min(b),
            MergeRule::Mean => 0.5 * (a + b),
        }
    }
}

/// Accumulated energies `e(p, u)` along one path, `len × states`, row-major
/// by path position.
#[derive(Clone, Debug, PartialEq)]
pub struct TrellisLayer {
    len: usize,
    states: usize,
    energies: Vec<f64>,
    direction: Option<PathDirection>,
}

impl TrellisLayer {
    pub fn new(len: usize, states: usize, energies: Vec<f64>) -> Result<Self> {
        if len == 0 || states == 0 {
            return Err(Error::InvalidArgument("trellis must be non-empty".into()));
        }
        if energies.len() != len * states {
            return Err(Error::DimensionMismatch(format!(
                "{len}x{states} trellis needs {} energies, got {}",
                len * states,
                energies.len()
            )));
        }
        Ok(Self {
            len,
            states,
            energies,
            direction: None,
        })
    }

    pub fn with_direction(mut self, d: PathDirection) -> Self {
        self.direction = Some(d);
        self
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn direction(&self) -> Option<PathDirection> {
        self.direction
    }

    #[inline]
    pub fn get(&self, p: usize, u: usize) -> f64 {
        self.energies[p * self.states + u]
    }

    pub fn at(&self, p: usize) -> &[f64] {
        &self.energies[p * self.states..(p + 1) * self.states]
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Smallest-index argmin of the energies at position `p`.
    pub fn argmin(&self, p: usize) -> usize {
        argmin(self.at(p))
    }
}

#[inline]
pub(crate) fn argmin<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Node costs for a single path, `len × states`.
#[derive(Clone, Copy, Debug)]
pub struct PathCosts<'a> {
    pub costs: &'a [f64],
    pub states: usize,
}

impl PathCosts<'_> {
    fn check(&self, prior: Option<&TrellisLayer>, gradients: &[f64]) -> Result<usize> {
        if self.states == 0 || self.costs.is_empty() {
            return Err(Error::InvalidArgument("empty path".into()));
        }
        if self.costs.len() % self.states != 0 {
            return Err(Error::DimensionMismatch("cost length is not a multiple of states".into()));
        }
        let len = self.costs.len() / self.states;
        if gradients.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "{} gradients for a path of {len}",
                gradients.len()
            )));
        }
        if let Some(p) = prior {
            if p.len != len || p.states != self.states {
                return Err(Error::DimensionMismatch("prior trellis shape differs from costs".into()));
            }
        }
        Ok(len)
    }
}

/// Options shared by both sweep implementations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepOptions {
    pub penalty: PenaltyParams,
    /// Factor on steps where the new disparity is larger than the old.
    pub up_factor: f64,
}

impl SweepOptions {
    pub fn symmetric(penalty: PenaltyParams) -> Self {
        Self {
            penalty,
            up_factor: 1.0,
        }
    }

    pub fn for_direction(penalty: PenaltyParams, dir: PathDirection) -> Self {
        Self {
            penalty,
            up_factor: dir.up_factor(&penalty),
        }
    }

    #[inline]
    fn transition(&self, u: usize, v: usize, g: f64) -> f64 {
        let base = tv_penalty(u as u32, v as u32, g, &self.penalty);
        if u > v {
            base * self.up_factor
        } else {
            base
        }
    }
}

/// Reference sweep: every node compares all `m` predecessors.
///
/// `gradients[p]` is the gradient at path position `p`, used for the step
/// arriving at `p`; `gradients[0]` is unused.
pub fn viterbi_sweep_direct(
    path: PathCosts<'_>,
    prior: Option<&TrellisLayer>,
    gradients: &[f64],
    opts: &SweepOptions,
) -> Result<TrellisLayer> {
    let len = path.check(prior, gradients)?;
    let m = path.states;
    let unary = |p: usize, u: usize| path.costs[p * m + u] + prior.map_or(0.0, |t| t.get(p, u));
    let mut e = vec![0.0; len * m];
    for u in 0..m {
        e[u] = unary(0, u);
    }
    for p in 1..len {
        for u in 0..m {
            let mut best = f64::INFINITY;
            for v in 0..m {
                let cand = e[(p - 1) * m + v] + opts.transition(u, v, gradients[p]);
                if cand < best {
                    best = cand;
                }
            }
            e[p * m + u] = best + unary(p, u);
        }
    }
    TrellisLayer::new(len, m, e)
}

/// In-place lower envelope of `buf` under a linear step cost: afterwards
/// `buf[u] = min_v buf[v] + up·(u-v)⁺ + down·(v-u)⁺`. Returns the number of
/// relaxations performed (2·(m-1)).
#[inline]
pub fn lower_envelope(buf: &mut [f64], up: f64, down: f64) -> usize {
    let m = buf.len();
    for u in 1..m {
        let c = buf[u - 1] + up;
        if c < buf[u] {
            buf[u] = c;
        }
    }
    for u in (0..m.saturating_sub(1)).rev() {
        let c = buf[u + 1] + down;
        if c < buf[u] {
            buf[u] = c;
        }
    }
    2 * m.saturating_sub(1)
}

/// Envelope that also records, for each `u`, the predecessor `v` attaining
/// the minimum. Ties keep the smaller `v`.
fn lower_envelope_tracked(buf: &mut [f64], from: &mut [usize], up: f64, down: f64) {
    let m = buf.len();
    for (u, f) in from.iter_mut().enumerate() {
        *f = u;
    }
    for u in 1..m {
        let c = buf[u - 1] + up;
        if c < buf[u] || (c == buf[u] && from[u - 1] < from[u]) {
            buf[u] = c;
            from[u] = from[u - 1];
        }
    }
    for u in (0..m.saturating_sub(1)).rev() {
        let c = buf[u + 1] + down;
        if c < buf[u] || (c == buf[u] && from[u + 1] < from[u]) {
            buf[u] = c;
            from[u] = from[u + 1];
        }
    }
}

/// Work counters from a fast sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepStats {
    /// Envelope relaxations over all positions.
    pub relaxations: usize,
    /// Positions that ran an envelope (all but the first).
    pub steps: usize,
}

/// Two-pass envelope sweep, O(2m) per pixel. Matches `viterbi_sweep_direct`
/// to rounding.
pub fn viterbi_sweep_fast(
    path: PathCosts<'_>,
    prior: Option<&TrellisLayer>,
    gradients: &[f64],
    opts: &SweepOptions,
) -> Result<TrellisLayer> {
    viterbi_sweep_fast_counted(path, prior, gradients, opts).map(|(t, _)| t)
}

pub fn viterbi_sweep_fast_counted(
    path: PathCosts<'_>,
    prior: Option<&TrellisLayer>,
    gradients: &[f64],
    opts: &SweepOptions,
) -> Result<(TrellisLayer, SweepStats)> {
    let len = path.check(prior, gradients)?;
    let m = path.states;
    let mut stats = SweepStats::default();
    let mut e = vec![0.0; len * m];
    for u in 0..m {
        e[u] = path.costs[u] + prior.map_or(0.0, |t| t.get(0, u));
    }
    for p in 1..len {
        let w = opts.penalty.edge_weight(gradients[p]);
        let (done, rest) = e.split_at_mut(p * m);
        let cur = &mut rest[..m];
        cur.copy_from_slice(&done[(p - 1) * m..]);
        stats.relaxations += lower_envelope(cur, w * opts.up_factor, w);
        stats.steps += 1;
        for u in 0..m {
            cur[u] += path.costs[p * m + u] + prior.map_or(0.0, |t| t.get(p, u));
        }
    }
    Ok((TrellisLayer::new(len, m, e)?, stats))
}

/// Minimum-energy disparity sequence along one path and its energy.
pub fn viterbi_decode(
    path: PathCosts<'_>,
    gradients: &[f64],
    opts: &SweepOptions,
) -> Result<(Vec<usize>, f64)> {
    let len = path.check(None, gradients)?;
    let m = path.states;
    let mut e = path.costs[..m].to_vec();
    let mut back = vec![0usize; len * m];
    let mut buf = vec![0.0; m];
    let mut from = vec![0usize; m];
    for p in 1..len {
        let w = opts.penalty.edge_weight(gradients[p]);
        buf.copy_from_slice(&e);
        lower_envelope_tracked(&mut buf, &mut from, w * opts.up_factor, w);
        for u in 0..m {
            e[u] = buf[u] + path.costs[p * m + u];
            back[p * m + u] = from[u];
        }
    }
    let mut u = argmin(&e);
    let energy = e[u];
    let mut seq = vec![0; len];
    for p in (0..len).rev() {
        seq[p] = u;
        if p > 0 {
            u = back[p * m + u];
        }
    }
    Ok((seq, energy))
}

/// Energy of a given disparity sequence along one path: node costs plus
/// transition costs.
pub fn path_energy(
    path: PathCosts<'_>,
    seq: &[usize],
    gradients: &[f64],
    opts: &SweepOptions,
) -> f64 {
    let m = path.states;
    let mut total = 0.0;
    for (p, &u) in seq.iter().enumerate() {
        total += path.costs[p * m + u];
        if p > 0 {
            total += opts.transition(u, seq[p - 1], gradients[p]);
        }
    }
    total
}

/// Merges the two directions of one axis: minimum for horizontal paths,
/// mean otherwise.
pub fn merge_bidirectional(
    forward: &TrellisLayer,
    backward: &TrellisLayer,
    axis: PathAxis,
) -> Result<TrellisLayer> {
    if forward.len != backward.len || forward.states != backward.states {
        return Err(Error::DimensionMismatch("merged trellises differ in shape".into()));
    }
    let rule = axis.merge_rule();
    let energies = forward
        .energies
        .iter()
        .zip(&backward.energies)
        .map(|(&a, &b)| rule.apply(a, b))
        .collect();
    TrellisLayer::new(forward.len, forward.states, energies)
}

// --------------------------------------------------------------------------
// Disparity map
// --------------------------------------------------------------------------

/// Integer disparity per pixel with a validity mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    d_max: u32,
    values: Vec<u32>,
    valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new_invalid(width: usize, height: usize, d_max: u32) -> Self {
        Self {
            width,
            height,
            d_max,
            values: vec![0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, d_max: u32, value: u32) -> Self {
        Self {
            width,
            height,
            d_max,
            values: vec![value.min(d_max); width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        d_max: u32,
        f: impl Fn(usize, usize) -> Option<u32>,
    ) -> Self {
        let mut m = Self::new_invalid(width, height, d_max);
        for y in 0..height {
            for x in 0..width {
                if let Some(u) = f(x, y) {
                    m.set(x, y, Some(u));
                }
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn d_max(&self) -> u32 {
        self.d_max
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<u32> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    /// Stores `u` (clamped to `d_max`) or marks the pixel invalid.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, u: Option<u32>) {
        let i = y * self.width + x;
        match u {
            Some(u) => {
                self.values[i] = u.min(self.d_max);
                self.valid[i] = true;
            }
            None => {
                self.values[i] = 0;
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.values.len()).filter(|&i| self.valid[i]).map(move |i| {
            (i % self.width, i / self.width, self.values[i])
        })
    }
}

// --------------------------------------------------------------------------
// Whole-image MPV
// --------------------------------------------------------------------------

/// Node energies over each pixel's scope, stored relative to the pixel's
/// minimum (a per-pixel constant that changes no decision downstream).
#[derive(Clone, Debug)]
pub struct EnergyVolume {
    width: usize,
    height: usize,
    scopes: Vec<Scope>,
    offsets: Vec<usize>,
    values: Vec<f32>,
}

impl EnergyVolume {
    fn zeros_like(vol: &CostVolume) -> Self {
        let scopes = vol.scopes().to_vec();
        let mut offsets = Vec::with_capacity(scopes.len() + 1);
        let mut acc = 0;
        for s in &scopes {
            offsets.push(acc);
            acc += s.len();
        }
        offsets.push(acc);
        Self {
            width: vol.width(),
            height: vol.height(),
            scopes,
            offsets,
            values: vec![0.0; acc],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scope(&self, x: usize, y: usize) -> Scope {
        self.scopes[y * self.width + x]
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = y * self.width + x;
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Energy of `(x, y, u)` when `u` lies in the pixel's scope.
    pub fn get(&self, x: usize, y: usize, u: u32) -> Option<f32> {
        let s = self.scope(x, y);
        s.contains(u).then(|| self.pixel(x, y)[(u - s.lo) as usize])
    }

    /// Per-pixel argmin restricted to disparities whose right-image column
    /// exists (`u <= x`); ties go to the smaller disparity. Pixels with no
    /// such disparity in scope are invalid.
    pub fn winners(&self, d_max: u32) -> DisparityMap {
        let mut map = DisparityMap::new_invalid(self.width, self.height, d_max);
        for y in 0..self.height {
            for x in 0..self.width {
                let s = self.scope(x, y);
                if s.lo as usize > x {
                    continue;
                }
                let hi = (s.hi as usize).min(x);
                let vals = &self.pixel(x, y)[..=hi - s.lo as usize];
                map.set(x, y, Some(s.lo + argmin(vals) as u32));
            }
        }
        map
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpvParams {
    pub cost: CostParams,
    pub penalty: PenaltyParams,
}

impl MpvParams {
    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        self.penalty.validate()
    }
}

/// Per-line scratch state for the scoped sweeps.
struct LineSweep<'a> {
    vol: &'a CostVolume,
    prior: Option<&'a EnergyVolume>,
    gradient: &'a GradientMap,
    penalty: &'a PenaltyParams,
    virtual_cost: f64,
}

impl LineSweep<'_> {
    fn unary(&self, x: usize, y: usize, out: &mut Vec<f64>) {
        out.clear();
        let costs = self.vol.pixel(x, y);
        match self.prior {
            Some(prior) => {
                let w = self.penalty.carry_weight;
                out.extend(
                    costs
                        .iter()
                        .zip(prior.pixel(x, y))
                        .map(|(&c, &e)| c as f64 + w * e as f64),
                );
            }
            None => out.extend(costs.iter().map(|&c| c as f64)),
        }
    }

    /// Energies along `line`, walked backwards when `reverse`; result is indexed by line
    /// position, each entry over that pixel's scope.
    fn sweep(&self, line: &[(usize, usize)], dir: PathDirection, reverse: bool) -> Vec<Vec<f64>> {
        let n = line.len();
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        let up = dir.up_factor(self.penalty);
        let mut unary = Vec::new();
        let mut span_buf = Vec::new();

        let first = order[0];
        let (x0, y0) = line[first];
        self.unary(x0, y0, &mut unary);
        out[first] = unary.clone();
        let mut prev_idx = first;

        for &i in &order[1..] {
            let (x, y) = line[i];
            let (px, py) = line[prev_idx];
            let s_prev = self.vol.scope(px, py);
            let s_cur = self.vol.scope(x, y);
            let w = self.penalty.edge_weight(self.gradient.get(x, y) as f64);
            self.unary(x, y, &mut unary);
            let prev = &out[prev_idx];
            let mut cur = Vec::with_capacity(s_cur.len());
            if s_prev == s_cur {
                cur.extend_from_slice(prev);
                lower_envelope(&mut cur, w * up, w);
            } else {
                // Common axis over both scopes. Disparities outside the
                // previous pixel's scope are virtual nodes: reachable from
                // its best real node at the flat cost L.
                let span = s_prev.union_span(&s_cur);
                let best = prev.iter().copied().fold(f64::INFINITY, f64::min);
                span_buf.clear();
                span_buf.resize(span.len(), best + self.virtual_cost);
                let off = (s_prev.lo - span.lo) as usize;
                span_buf[off..off + prev.len()].copy_from_slice(prev);
                lower_envelope(&mut span_buf, w * up, w);
                let off = (s_cur.lo - span.lo) as usize;
                cur.extend_from_slice(&span_buf[off..off + s_cur.len()]);
            }
            for (c, &un) in cur.iter_mut().zip(&unary) {
                *c += un;
            }
            out[i] = cur;
            prev_idx = i;
        }
        out
    }
}

/// Runs the four hierarchical layers over a cost volume. `prior`, when
/// given, seeds the first layer the same way each layer seeds the next.
pub fn optimize_volume(
    vol: &CostVolume,
    gradient: &GradientMap,
    penalty: &PenaltyParams,
    prior: Option<&EnergyVolume>,
    virtual_cost: f64,
) -> Result<EnergyVolume> {
    optimize_volume_in_blocks(vol, gradient, penalty, prior, virtual_cost, None)
}

/// As `optimize_volume`, but with every path cut at the borders of a
/// `block × block` tiling so blocks are optimized independently.
pub fn optimize_volume_in_blocks(
    vol: &CostVolume,
    gradient: &GradientMap,
    penalty: &PenaltyParams,
    prior: Option<&EnergyVolume>,
    virtual_cost: f64,
    block: Option<usize>,
) -> Result<EnergyVolume> {
    penalty.validate()?;
    if gradient.width() != vol.width() || gradient.height() != vol.height() {
        return Err(Error::DimensionMismatch("gradient and cost volume differ".into()));
    }
    if let Some(p) = prior {
        if p.scopes != vol.scopes() {
            return Err(Error::DimensionMismatch("prior energies use different scopes".into()));
        }
    }
    if block == Some(0) {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    let mut carried: Option<EnergyVolume> = prior.cloned();
    for axis in PathAxis::LAYERS {
        let mut lines = axis.lines(vol.width(), vol.height());
        if let Some(b) = block {
            lines = split_at_blocks(lines, b);
        }
        let next = run_layer(vol, gradient, penalty, carried.as_ref(), virtual_cost, axis, &lines);
        carried = Some(next);
    }
    Ok(carried.expect("four layers ran"))
}

fn split_at_blocks(lines: Vec<Vec<(usize, usize)>>, block: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for line in lines {
        let mut seg: Vec<(usize, usize)> = Vec::new();
        for p in line {
            if let Some(&(qx, qy)) = seg.last() {
                if (qx / block, qy / block) != (p.0 / block, p.1 / block) {
                    out.push(std::mem::take(&mut seg));
                }
            }
            seg.push(p);
        }
        if !seg.is_empty() {
            out.push(seg);
        }
    }
    out
}

fn run_layer(
    vol: &CostVolume,
    gradient: &GradientMap,
    penalty: &PenaltyParams,
    prior: Option<&EnergyVolume>,
    virtual_cost: f64,
    axis: PathAxis,
    lines: &[Vec<(usize, usize)>],
) -> EnergyVolume {
    let sweeper = LineSweep {
        vol,
        prior,
        gradient,
        penalty,
        virtual_cost,
    };
    let (fwd_dir, bwd_dir) = axis.directions();
    let rule = axis.merge_rule();
    let merged: Vec<Vec<Vec<f32>>> = lines
        .par_iter()
        .map(|line| {
            let fwd = sweeper.sweep(line, fwd_dir, false);
            let bwd = sweeper.sweep(line, bwd_dir, true);
            fwd.iter()
                .zip(&bwd)
                .map(|(a, b)| {
                    let m: Vec<f64> = a.iter().zip(b).map(|(&a, &b)| rule.apply(a, b)).collect();
                    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
                    m.iter().map(|&v| (v - lo) as f32).collect()
                })
                .collect()
        })
        .collect();
    let mut out = EnergyVolume::zeros_like(vol);
    for (line, energies) in lines.iter().zip(merged) {
        for (&(x, y), e) in line.iter().zip(energies) {
            let i = y * out.width + x;
            out.values[out.offsets[i]..out.offsets[i + 1]].copy_from_slice(&e);
        }
    }
    out
}

/// Full-range MPV on a rectified pair.
pub fn run_mpv(pair: &StereoPair, d_max: u32, params: &MpvParams) -> Result<DisparityMap> {
    let scopes = vec![Scope::new(0, d_max); pair.width() * pair.height()];
    run_mpv_scoped(pair, d_max, scopes, params, None, None).map(|(m, _)| m)
}

/// MPV restricted to per-pixel scopes, optionally seeded with prior
/// energies over the same scopes. Evaluated nodes are added to `counter`.
pub fn run_mpv_scoped(
    pair: &StereoPair,
    d_max: u32,
    scopes: Vec<Scope>,
    params: &MpvParams,
    prior: Option<&EnergyVolume>,
    counter: Option<&EvalCounter>,
) -> Result<(DisparityMap, EnergyVolume)> {
    if d_max < 1 {
        return Err(Error::InvalidArgument("d_max must be at least 1".into()));
    }
    params.validate()?;
    if let Some(s) = scopes.iter().find(|s| s.hi > d_max || s.lo > s.hi) {
        return Err(Error::InvalidArgument(format!("scope {s:?} outside [0, {d_max}]")));
    }
    let left = PatchStats::build(pair.left(), &params.cost)?;
    let right = PatchStats::build(pair.right(), &params.cost)?;
    let vol = CostVolume::scoped(&left, &right, scopes, &params.cost)?;
    if let Some(c) = counter {
        c.add(vol.node_count() as u64);
    }
    let gradient = gradient_magnitude(pair.left());
    let energy = optimize_volume(
        &vol,
        &gradient,
        &params.penalty,
        prior,
        params.cost.dynamic_range,
    )?;
    Ok((energy.winners(d_max), energy))
}
