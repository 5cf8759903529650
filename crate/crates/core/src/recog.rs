//! Obstacle recognition: LBP cell histograms, Gentle AdaBoost regression
//! trees, a rejection cascade and a multi-scale window sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{resize_bilinear, GrayImage};
use crate::roadobs::RoiBox;

/// Side of the normalized feature window.
pub const WINDOW: usize = 24;
/// Cells per window side.
pub const CELLS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbpParams {
    /// Neighbor count, 8 or 16.
    pub neighbors: u32,
    /// Sampling radius in pixels, at least 1.
    pub radius: f64,
}

impl Default for LbpParams {
    fn default() -> Self {
        Self {
            neighbors: 8,
            radius: 1.0,
        }
    }
}

impl LbpParams {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors != 8 && self.neighbors != 16 {
            return Err(Error::InvalidArgument(format!(
                "LBP neighbor count must be 8 or 16, got {}",
                self.neighbors
            )));
        }
        if !(self.radius >= 1.0 && self.radius <= 8.0) {
            return Err(Error::InvalidArgument(format!("LBP radius must be in [1, 8], got {}", self.radius)));
        }
        Ok(())
    }

    /// Whole-pixel margin a center needs on every side.
    pub fn margin(&self) -> usize {
        self.radius.ceil() as usize
    }

    pub fn bins(&self) -> usize {
        1 << self.neighbors
    }

    /// Integer tap offsets and 8-bit fractional weights of each neighbor.
    /// Neighbor 0 is east; the rest follow counter-clockwise.
    fn taps(&self) -> Vec<Tap> {
        (0..self.neighbors)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / self.neighbors as f64;
                let dx = self.radius * theta.cos();
                let dy = -self.radius * theta.sin();
                let (fx0, fy0) = (dx.floor(), dy.floor());
                let mut wx = ((dx - fx0) * 256.0).round() as u32;
                let mut wy = ((dy - fy0) * 256.0).round() as u32;
                let (mut ox, mut oy) = (fx0 as isize, fy0 as isize);
                // Keep taps inside the radius-margin square when a weight rounds to 256.
                if wx == 256 {
                    ox += 1;
                    wx = 0;
                }
                if wy == 256 {
                    oy += 1;
                    wy = 0;
                }
                Tap { ox, oy, wx, wy }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    ox: isize,
    oy: isize,
    wx: u32,
    wy: u32,
}

impl Tap {
    /// Neighbor value scaled by 2^16.
    #[inline]
    fn sample(&self, img: &GrayImage, x: usize, y: usize) -> u32 {
        let x0 = x as isize + self.ox;
        let y0 = y as isize + self.oy;
        let a = img.get_clamped(x0, y0) as u32;
        let b = img.get_clamped(x0 + 1, y0) as u32;
        let c = img.get_clamped(x0, y0 + 1) as u32;
        let d = img.get_clamped(x0 + 1, y0 + 1) as u32;
        let (wx, wy) = (self.wx, self.wy);
        (a * (256 - wx) + b * wx) * (256 - wy) + (c * (256 - wx) + d * wx) * wy
    }
}

#[inline]
fn code_with(img: &GrayImage, x: usize, y: usize, taps: &[Tap]) -> u32 {
    let center = (img.get(x, y) as u32) << 16;
    taps.iter()
        .enumerate()
        .fold(0, |code, (k, t)| code | (u32::from(t.sample(img, x, y) >= center) << k))
}

/// LBP code of the pixel at `(x, y)`: bit `k` is set when neighbor `k` is
/// at least as bright as the center.
pub fn lbp_code(img: &GrayImage, x: usize, y: usize, params: &LbpParams) -> Result<u32> {
    params.validate()?;
    let m = params.margin();
    if x < m || y < m || x + m >= img.width() || y + m >= img.height() {
        return Err(Error::OutOfBounds(format!(
            "LBP center ({x},{y}) needs a {m}-pixel margin in a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(code_with(img, x, y, &params.taps()))
}

/// Concatenated per-cell code histograms of a normalized window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<u8>);

impl FeatureVector {
    pub fn new(values: Vec<u8>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }
}

/// Resizes `window` to the normalized size plus the LBP margin and
/// histograms the codes of the inner 24×24 pixels over a 3×3 cell grid.
pub fn extract_features(window: &GrayImage, params: &LbpParams) -> Result<FeatureVector> {
    params.validate()?;
    if window.width() < 2 || window.height() < 2 {
        return Err(Error::Degenerate(format!(
            "{}x{} window is too small to describe",
            window.width(),
            window.height()
        )));
    }
    let m = params.margin();
    let side = WINDOW + 2 * m;
    let img = resize_bilinear(window, side, side)?;
    let taps = params.taps();
    let bins = params.bins();
    let cell = WINDOW / CELLS;
    let mut hist = vec![0u8; CELLS * CELLS * bins];
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            let code = code_with(&img, x + m, y + m, &taps) as usize;
            let c = (y / cell) * CELLS + x / cell;
            hist[c * bins + code] += 1;
        }
    }
    Ok(FeatureVector(hist))
}

// --------------------------------------------------------------------------
// Gentle AdaBoost
// --------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    /// Samples with `feature <= threshold` go left.
    Split {
        feature: usize,
        threshold: u8,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Regression tree with real-valued leaves, scaled by `weight`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakClassifier {
    pub nodes: Vec<TreeNode>,
    pub weight: f64,
}

impl WeakClassifier {
    pub fn eval(&self, x: &FeatureVector) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x.get(feature) <= threshold { left } else { right },
                TreeNode::Leaf { value } => return self.weight * value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.nodes[0], TreeNode::Leaf { .. })
    }
}

/// Sum of the weak classifiers' outputs.
pub fn strong_score(learners: &[WeakClassifier], x: &FeatureVector) -> f64 {
    learners.iter().map(|h| h.eval(x)).sum()
}

/// Feature-major copy of a sample set for split search.
struct Columns {
    cols: Vec<Vec<u8>>,
}

impl Columns {
    fn new(samples: &[FeatureVector]) -> Result<Self> {
        let dim = samples.first().map_or(0, FeatureVector::len);
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch("feature vectors differ in length".into()));
        }
        let cols = (0..dim).map(|f| samples.iter().map(|s| s.get(f)).collect()).collect();
        Ok(Self { cols })
    }
}

fn weighted_mean(idx: &[usize], w: &[f64], y: &[f64]) -> f64 {
    let (sw, swy) = idx.iter().fold((0.0, 0.0), |(a, b), &i| (a + w[i], b + w[i] * y[i]));
    if sw > 0.0 {
        swy / sw
    } else {
        0.0
    }
}

/// Best `(feature, threshold)` split of `idx` by weighted squared error, or
/// `None` when no split reduces it. Ties keep the lower feature, then the
/// lower threshold.
fn best_split(cols: &Columns, idx: &[usize], w: &[f64], y: &[f64]) -> Option<(usize, u8)> {
    let (tw, twy) = idx.iter().fold((0.0, 0.0), |(a, b), &i| (a + w[i], b + w[i] * y[i]));
    if tw <= 0.0 {
        return None;
    }
    let base = twy * twy / tw;
    let best = cols
        .cols
        .par_iter()
        .enumerate()
        .filter_map(|(f, col)| {
            let mut bw = [0.0f64; 256];
            let mut bwy = [0.0f64; 256];
            for &i in idx {
                let v = col[i] as usize;
                bw[v] += w[i];
                bwy[v] += w[i] * y[i];
            }
            let (mut lw, mut lwy) = (0.0, 0.0);
            let mut best: Option<(f64, u8)> = None;
            for t in 0..255 {
                lw += bw[t];
                lwy += bwy[t];
                let rw = tw - lw;
                if lw <= 0.0 || rw <= tw * 1e-12 || bw[t] == 0.0 {
                    continue;
                }
                let rwy = twy - lwy;
                let gain = lwy * lwy / lw + rwy * rwy / rw - base;
                if best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, t as u8));
                }
            }
            best.map(|(g, t)| (g, f, t))
        })
        .reduce_with(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                b
            } else {
                a
            }
        })?;
    (best.0 > 1e-12 * tw).then_some((best.1, best.2))
}

fn fit_tree(cols: &Columns, w: &[f64], y: &[f64], max_depth: usize) -> WeakClassifier {
    fn grow(
        cols: &Columns,
        idx: Vec<usize>,
        w: &[f64],
        y: &[f64],
        depth_left: usize,
        nodes: &mut Vec<TreeNode>,
    ) -> usize {
        let me = nodes.len();
        nodes.push(TreeNode::Leaf {
            value: weighted_mean(&idx, w, y),
        });
        if depth_left == 0 {
            return me;
        }
        let Some((feature, threshold)) = best_split(cols, &idx, w, y) else {
            return me;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| cols.cols[feature][i] <= threshold);
        let left = grow(cols, l, w, y, depth_left - 1, nodes);
        let right = grow(cols, r, w, y, depth_left - 1, nodes);
        nodes[me] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
    let mut nodes = Vec::new();
    let n = w.len();
    grow(cols, (0..n).collect(), w, y, max_depth, &mut nodes);
    WeakClassifier { nodes, weight: 1.0 }
}

/// Incremental Gentle AdaBoost over a fixed sample set.
pub struct GentleBooster {
    cols: Columns,
    labels: Vec<f64>,
    weights: Vec<f64>,
    scores: Vec<f64>,
    max_depth: usize,
    loss: f64,
}

impl GentleBooster {
    /// `weights` defaults to uniform.
    pub fn new(samples: &[FeatureVector], labels: &[bool], weights: Option<&[f64]>, max_depth: usize) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::DimensionMismatch("one label per sample required".into()));
        }
        if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
            return Err(Error::Training("boosting needs both positive and negative samples".into()));
        }
        let n = samples.len();
        let weights = match weights {
            Some(w) if w.len() == n && w.iter().all(|&v| v >= 0.0 && v.is_finite()) => w.to_vec(),
            Some(_) => return Err(Error::InvalidArgument("weights must be finite, non-negative, one per sample".into())),
            None => vec![1.0 / n as f64; n],
        };
        let loss = weights.iter().sum();
        Ok(Self {
            cols: Columns::new(samples)?,
            labels: labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect(),
            weights,
            scores: vec![0.0; n],
            max_depth,
            loss,
        })
    }

    /// Fits one tree and reweights. Errors if the exponential loss
    /// `Σ w₀·exp(-y·F)` grows, which Gentle AdaBoost rules out.
    pub fn round(&mut self) -> Result<WeakClassifier> {
        let h = fit_tree(&self.cols, &self.weights, &self.labels, self.max_depth);
        let mut loss = 0.0;
        for i in 0..self.weights.len() {
            let out = eval_column(&h, &self.cols, i);
            self.scores[i] += out;
            self.weights[i] *= (-self.labels[i] * out).exp();
            loss += self.weights[i];
        }
        if loss > self.loss * (1.0 + 1e-9) {
            return Err(Error::Training(format!(
                "boosting loss rose from {} to {loss}",
                self.loss
            )));
        }
        self.loss = loss;
        Ok(h)
    }

    /// Current strong-classifier score of each training sample.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }
}

fn eval_column(h: &WeakClassifier, cols: &Columns, i: usize) -> f64 {
    let mut k = 0;
    loop {
        match h.nodes[k] {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => k = if cols.cols[feature][i] <= threshold { left } else { right },
            TreeNode::Leaf { value } => return h.weight * value,
        }
    }
}

/// Runs `rounds` rounds of Gentle AdaBoost with depth-limited trees.
pub fn train_gentle_adaboost(
    samples: &[FeatureVector],
    labels: &[bool],
    weights: Option<&[f64]>,
    max_depth: usize,
    rounds: usize,
) -> Result<Vec<WeakClassifier>> {
    let mut booster = GentleBooster::new(samples, labels, weights, max_depth)?;
    (0..rounds).map(|_| booster.round()).collect()
}

// --------------------------------------------------------------------------
// Cascade
// --------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeStage {
    pub learners: Vec<WeakClassifier>,
    pub threshold: f64,
    /// Hit rate on the stage's training positives.
    pub hit_rate: f64,
    /// False-alarm rate on the stage's training negatives.
    pub false_alarm: f64,
    pub negatives: usize,
}

impl CascadeStage {
    pub fn score(&self, x: &FeatureVector) -> f64 {
        strong_score(&self.learners, x)
    }

    pub fn passes(&self, x: &FeatureVector) -> bool {
        self.score(x) >= self.threshold
    }
}

pub const MODEL_FORMAT: &str = "mpvstereo-cascade";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub format: String,
    pub version: u32,
    pub lbp: LbpParams,
    pub window: usize,
    pub cells: usize,
    pub max_depth: usize,
    pub max_false_alarm: f64,
    pub min_hit_rate: f64,
    pub stages: Vec<CascadeStage>,
}

impl CascadeModel {
    pub fn empty(lbp: LbpParams) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            lbp,
            window: WINDOW,
            cells: CELLS,
            max_depth: 0,
            max_false_alarm: 1.0,
            min_hit_rate: 0.0,
            stages: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::Serde(format!(
                "unsupported model {} v{}",
                model.format, model.version
            )));
        }
        if model.window != WINDOW || model.cells != CELLS {
            return Err(Error::Serde("model window layout differs from this build".into()));
        }
        model.lbp.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Runs stages in order, stopping at the first rejection. Returns the
    /// decision and the number of stages evaluated.
    pub fn classify_features(&self, x: &FeatureVector) -> (bool, usize) {
        for (k, stage) in self.stages.iter().enumerate() {
            if !stage.passes(x) {
                return (false, k + 1);
            }
        }
        (true, self.stages.len())
    }
}

pub fn cascade_classify(window: &GrayImage, model: &CascadeModel) -> Result<(bool, usize)> {
    let x = extract_features(window, &model.lbp)?;
    Ok(model.classify_features(&x))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeParams {
    pub stages: usize,
    pub max_depth: usize,
    pub max_false_alarm: f64,
    pub min_hit_rate: f64,
    /// Boosting rounds allowed per stage.
    pub max_rounds: usize,
    /// Negative windows mined for each stage.
    pub negatives_per_stage: usize,
    /// Fewest mined negatives a stage can train on.
    pub min_negatives: usize,
    /// Mining attempts per requested negative before giving up.
    pub attempts_per_negative: usize,
    pub seed: u64,
    pub lbp: LbpParams,
}

impl Default for CascadeParams {
    fn default() -> Self {
        Self {
            stages: 17,
            max_depth: 2,
            max_false_alarm: 0.5,
            min_hit_rate: 0.99,
            max_rounds: 100,
            negatives_per_stage: 400,
            min_negatives: 20,
            attempts_per_negative: 200,
            seed: 17,
            lbp: LbpParams::default(),
        }
    }
}

impl CascadeParams {
    pub fn validate(&self) -> Result<()> {
        self.lbp.validate()?;
        if self.stages == 0 || self.max_rounds == 0 || self.negatives_per_stage == 0 {
            return Err(Error::InvalidArgument("stages, rounds and negatives must be positive".into()));
        }
        if !(self.max_false_alarm > 0.0 && self.max_false_alarm < 1.0) {
            return Err(Error::InvalidArgument("max false alarm must be in (0, 1)".into()));
        }
        if !(self.min_hit_rate > 0.0 && self.min_hit_rate <= 1.0) {
            return Err(Error::InvalidArgument("min hit rate must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Outcome of a training run, including why it stopped.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub model: CascadeModel,
    /// Set when mining ran out of negatives before all stages were built.
    pub exhausted_at_stage: Option<usize>,
}

/// Largest threshold that keeps at least `min_hit` of `scores`.
pub fn hit_threshold(scores: &[f64], min_hit: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let keep = (min_hit * sorted.len() as f64).ceil() as usize;
    let misses = sorted.len() - keep.min(sorted.len());
    sorted[misses]
}

/// Trains a cascade. Each stage sees every positive and a fresh set of
/// negative windows cropped from `negatives` that the stages so far accept.
/// Stages grow until the training false-alarm rate is at most the cap with
/// the hit rate at least the floor.
pub fn train_cascade(positives: &[GrayImage], negatives: &[GrayImage], params: &CascadeParams) -> Result<TrainReport> {
    params.validate()?;
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Training("positive and negative corpora must be non-empty".into()));
    }
    let pos: Vec<FeatureVector> = positives
        .par_iter()
        .map(|img| extract_features(img, &params.lbp))
        .collect::<Result<_>>()?;
    let mut model = CascadeModel {
        max_depth: params.max_depth,
        max_false_alarm: params.max_false_alarm,
        min_hit_rate: params.min_hit_rate,
        ..CascadeModel::empty(params.lbp)
    };
    let mut exhausted_at_stage = None;
    for k in 0..params.stages {
        let neg = mine_negatives(&model, negatives, params, k)?;
        if neg.len() < params.min_negatives.max(1) {
            if k == 0 {
                return Err(Error::Training(format!(
                    "only {} negative windows available for the first stage",
                    neg.len()
                )));
            }
            log::info!("negatives exhausted after {k} stages");
            exhausted_at_stage = Some(k);
            break;
        }
        let stage = train_stage(&pos, &neg, params, k)?;
        log::debug!(
            "stage {k}: {} trees, hit {:.4}, false alarm {:.4}",
            stage.learners.len(),
            stage.hit_rate,
            stage.false_alarm
        );
        model.stages.push(stage);
    }
    Ok(TrainReport {
        model,
        exhausted_at_stage,
    })
}

fn train_stage(pos: &[FeatureVector], neg: &[FeatureVector], params: &CascadeParams, k: usize) -> Result<CascadeStage> {
    let samples: Vec<FeatureVector> = pos.iter().chain(neg).cloned().collect();
    let labels: Vec<bool> = (0..samples.len()).map(|i| i < pos.len()).collect();
    // Each class starts with half the weight.
    let weights: Vec<f64> = labels
        .iter()
        .map(|&l| 0.5 / if l { pos.len() } else { neg.len() } as f64)
        .collect();
    let mut booster = GentleBooster::new(&samples, &labels, Some(&weights), params.max_depth)?;
    let mut learners = Vec::new();
    for _ in 0..params.max_rounds {
        let h = booster.round()?;
        let constant = h.is_constant();
        learners.push(h);
        let scores = booster.scores();
        let threshold = hit_threshold(&scores[..pos.len()], params.min_hit_rate);
        let hits = scores[..pos.len()].iter().filter(|&&s| s >= threshold).count();
        let fas = scores[pos.len()..].iter().filter(|&&s| s >= threshold).count();
        let hit_rate = hits as f64 / pos.len() as f64;
        let false_alarm = fas as f64 / neg.len() as f64;
        if false_alarm <= params.max_false_alarm && hit_rate >= params.min_hit_rate {
            return Ok(CascadeStage {
                learners,
                threshold,
                hit_rate,
                false_alarm,
                negatives: neg.len(),
            });
        }
        if constant {
            return Err(Error::Training(format!(
                "stage {k}: irreducible error, no feature separates positives from negatives \
                 (false alarm {false_alarm:.3} at hit rate {hit_rate:.3})"
            )));
        }
    }
    Err(Error::Training(format!(
        "stage {k}: false alarm above {} after {} rounds",
        params.max_false_alarm, params.max_rounds
    )))
}

/// Random square crops of the negative images that the current cascade
/// accepts. Deterministic per seed and stage.
fn mine_negatives(model: &CascadeModel, images: &[GrayImage], params: &CascadeParams, stage: usize) -> Result<Vec<FeatureVector>> {
    let want = params.negatives_per_stage;
    let budget = want * params.attempts_per_negative;
    let chunk = 256;
    let mut found = Vec::with_capacity(want);
    let mut tried = 0;
    while found.len() < want && tried < budget {
        let n = chunk.min(budget - tried);
        let batch: Vec<Option<FeatureVector>> = (tried..tried + n)
            .into_par_iter()
            .map(|attempt| -> Result<Option<FeatureVector>> {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    params.seed ^ ((stage as u64) << 40) ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                let img = &images[rng.gen_range(0..images.len())];
                let max_side = img.width().min(img.height());
                if max_side < WINDOW {
                    return Ok(None);
                }
                let side = rng.gen_range(WINDOW..=max_side);
                let x = rng.gen_range(0..=img.width() - side);
                let y = rng.gen_range(0..=img.height() - side);
                let fv = extract_features(&img.crop(x, y, side, side)?, &model.lbp)?;
                Ok(model.classify_features(&fv).0.then_some(fv))
            })
            .collect::<Result<_>>()?;
        for fv in batch.into_iter().flatten() {
            if found.len() < want {
                found.push(fv);
            }
        }
        tried += n;
    }
    Ok(found)
}

// --------------------------------------------------------------------------
// Detection
// --------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub min_window: usize,
    pub max_window: usize,
    pub growth: f64,
    pub stride: usize,
    /// Intersection over the smaller box needed to merge two hits.
    pub merge_overlap: f64,
    /// ROI growth on each side, as a fraction of its size, before sweeping.
    pub roi_padding: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            min_window: 30,
            max_window: 90,
            growth: 1.3,
            stride: 4,
            merge_overlap: 0.5,
            roi_padding: 0.15,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_window == 0 || self.min_window > self.max_window {
            return Err(Error::InvalidArgument("window sizes must satisfy 0 < min <= max".into()));
        }
        if !(self.growth > 1.0) {
            return Err(Error::InvalidArgument("window growth must be > 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        if !(self.merge_overlap > 0.0 && self.merge_overlap <= 1.0) {
            return Err(Error::InvalidArgument("merge overlap must be in (0, 1]".into()));
        }
        if !(self.roi_padding >= 0.0) {
            return Err(Error::InvalidArgument("ROI padding must be >= 0".into()));
        }
        Ok(())
    }

    /// Square window sides from the minimum, growing geometrically up to
    /// the maximum.
    pub fn window_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut s = self.min_window as f64;
        while s.round() as usize <= self.max_window {
            let side = s.round() as usize;
            if out.last() != Some(&side) {
                out.push(side);
            }
            s *= self.growth;
        }
        out
    }
}

/// Grows a box by `fraction` of its size on every side, clipped to the
/// image.
pub fn pad_roi(roi: &RoiBox, fraction: f64, width: usize, height: usize) -> RoiBox {
    let px = (roi.w as f64 * fraction).round() as usize;
    let py = (roi.h as f64 * fraction).round() as usize;
    let x0 = roi.x.saturating_sub(px);
    let y0 = roi.y.saturating_sub(py);
    let x1 = (roi.right() + px).min(width);
    let y1 = (roi.bottom() + py).min(height);
    RoiBox {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
        ..*roi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    /// Windows merged into this detection.
    pub hits: usize,
    pub distance: f64,
}

fn overlap_ratio(a: (usize, usize, usize), b: (usize, usize, usize)) -> f64 {
    let ix = (a.0 + a.2).min(b.0 + b.2).saturating_sub(a.0.max(b.0));
    let iy = (a.1 + a.2).min(b.1 + b.2).saturating_sub(a.1.max(b.1));
    let smaller = (a.2 * a.2).min(b.2 * b.2);
    (ix * iy) as f64 / smaller as f64
}

/// Sweeps square windows over `roi` and merges accepted windows whose
/// overlap reaches the configured ratio. Each merged group yields one box,
/// the mean of its members.
pub fn detect_in_roi(img: &GrayImage, roi: &RoiBox, model: &CascadeModel, config: &DetectorConfig) -> Result<Vec<Detection>> {
    config.validate()?;
    if roi.w == 0 || roi.h == 0 || roi.right() > img.width() || roi.bottom() > img.height() {
        return Err(Error::OutOfBounds(format!("ROI {roi:?} outside the image")));
    }
    let mut windows = Vec::new();
    for side in config.window_sizes() {
        if side > roi.w || side > roi.h {
            continue;
        }
        for y in (roi.y..=roi.bottom() - side).step_by(config.stride) {
            for x in (roi.x..=roi.right() - side).step_by(config.stride) {
                windows.push((x, y, side));
            }
        }
    }
    let accepted: Vec<(usize, usize, usize)> = windows
        .par_iter()
        .map(|&(x, y, s)| -> Result<Option<(usize, usize, usize)>> {
            let (ok, _) = cascade_classify(&img.crop(x, y, s, s)?, model)?;
            Ok(ok.then_some((x, y, s)))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    // Union-find over pairwise overlaps.
    let n = accepted.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        let mut j = i;
        while p[j] != r {
            let next = p[j];
            p[j] = r;
            j = next;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if overlap_ratio(accepted[i], accepted[j]) >= config.merge_overlap {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<(usize, [usize; 4])> = Vec::new();
    let mut group_of = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if group_of[r] == usize::MAX {
            group_of[r] = groups.len();
            groups.push((0, [0; 4]));
        }
        let g = &mut groups[group_of[r]];
        let (x, y, s) = accepted[i];
        g.0 += 1;
        g.1[0] += x;
        g.1[1] += y;
        g.1[2] += s;
        g.1[3] += s;
    }
    Ok(groups
        .into_iter()
        .map(|(count, sums)| {
            let mean = |v: usize| (v as f64 / count as f64).round() as usize;
            let (x, y) = (mean(sums[0]), mean(sums[1]));
            Detection {
                x,
                y,
                w: mean(sums[2]).min(roi.right() - x),
                h: mean(sums[3]).min(roi.bottom() - y),
                hits: count,
                distance: roi.distance,
            }
        })
        .collect())
}
