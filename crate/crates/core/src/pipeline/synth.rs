//! Deterministic synthetic stereo scenes and recognition corpora.
//!
//! The left image is textured per surface; the right image is the left image
//! forward-warped by the integer ground-truth disparity, nearer surfaces
//! winning collisions and disoccluded holes filled with fresh noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{GrayImage, StereoPair};
use crate::roadobs::Geometry;
use crate::viterbi::DisparityMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    /// Fronto-parallel surface at constant disparity.
    Wall { disparity: f64 },
    /// `u = disparity + dx·col + dy·row`.
    Slanted { disparity: f64, dx: f64, dy: f64 },
    /// Flat road `camera_height_m` below the camera; rows whose road
    /// disparity falls under `far_disparity` show a far wall instead.
    Road {
        camera_height_m: f64,
        far_disparity: f64,
    },
}

/// Fronto-parallel box. With a road background it stands on the road,
/// otherwise it is centred on the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    /// Lateral offset of the box centre, meters (right positive).
    pub lateral_m: f64,
    pub distance_m: f64,
    pub width_m: f64,
    pub height_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub d_max: u32,
    pub seed: u64,
    pub geometry: Geometry,
    pub background: Background,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
}

impl SceneSpec {
    /// Road scene with one 0.8 m box 10 m ahead, 384×288.
    pub fn road_with_obstacle(seed: u64) -> Self {
        Self {
            width: 384,
            height: 288,
            d_max: 32,
            seed,
            geometry: default_geometry(384, 288),
            background: Background::Road {
                camera_height_m: 1.5,
                far_disparity: 1.0,
            },
            obstacles: vec![ObstacleSpec {
                lateral_m: 0.3,
                distance_m: 10.0,
                width_m: 0.8,
                height_m: 0.8,
            }],
        }
    }

    pub fn wall(width: usize, height: usize, disparity: u32, d_max: u32, seed: u64) -> Self {
        Self {
            width,
            height,
            d_max,
            seed,
            geometry: default_geometry(width, height),
            background: Background::Wall {
                disparity: disparity as f64,
            },
            obstacles: Vec::new(),
        }
    }
}

/// 8 mm lens, 9.6 µm pixels, 120 mm baseline, principal point at the centre.
pub fn default_geometry(width: usize, height: usize) -> Geometry {
    Geometry::from_optics(8.0, 9.6, 0.12, width as f64 / 2.0, height as f64 / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub disparity: u32,
    pub distance: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub pair: StereoPair,
    pub gt: DisparityMap,
    pub boxes: Vec<GtBox>,
}

#[derive(Clone, Copy, PartialEq)]
enum Surface {
    Background,
    Obstacle(usize),
}

pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    let (w, h) = (spec.width, spec.height);
    if w < 8 || h < 8 {
        return Err(Error::TooSmall(format!("scene {w}x{h} is below 8x8")));
    }
    spec.geometry.validate()?;
    let g = &spec.geometry;
    let mut field = vec![0.0f64; w * h];
    for row in 0..h {
        for col in 0..w {
            field[row * w + col] = match spec.background {
                Background::Wall { disparity } => disparity,
                Background::Slanted { disparity, dx, dy } => {
                    disparity + dx * col as f64 + dy * row as f64
                }
                Background::Road {
                    camera_height_m,
                    far_disparity,
                } => {
                    let (_, y) = g.image_coords(col as f64, row as f64);
                    (-g.baseline_m * y / camera_height_m).max(far_disparity)
                }
            };
        }
    }
    let mut surface = vec![Surface::Background; w * h];
    let mut boxes = Vec::new();
    for (k, ob) in spec.obstacles.iter().enumerate() {
        if !(ob.distance_m > 0.0 && ob.width_m > 0.0 && ob.height_m > 0.0) {
            return Err(Error::InvalidArgument(format!("obstacle {k} has non-positive size or distance")));
        }
        let z = ob.distance_m;
        let (bottom, top) = match spec.background {
            Background::Road { camera_height_m, .. } => (-camera_height_m, ob.height_m - camera_height_m),
            _ => (-ob.height_m / 2.0, ob.height_m / 2.0),
        };
        let (c0, r1, _) = g.project([ob.lateral_m - ob.width_m / 2.0, bottom, z]);
        let (c1, r0, u) = g.project([ob.lateral_m + ob.width_m / 2.0, top, z]);
        let (x0, y0) = (c0.round().max(0.0) as usize, r0.round().max(0.0) as usize);
        let (x1, y1) = ((c1.round() as usize).min(w), (r1.round() as usize).min(h));
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidArgument(format!("obstacle {k} lies outside the frame")));
        }
        for row in y0..y1 {
            for col in x0..x1 {
                let i = row * w + col;
                if u >= field[i] {
                    field[i] = u;
                    surface[i] = Surface::Obstacle(k);
                }
            }
        }
        boxes.push(GtBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
            disparity: u.round() as u32,
            distance: z,
        });
    }
    let gt_values: Vec<u32> = field.iter().map(|&u| u.round().max(0.0) as u32).collect();
    if let Some(&bad) = gt_values.iter().find(|&&u| u < 1 || u > spec.d_max) {
        return Err(Error::InvalidArgument(format!(
            "scene disparity {bad} outside [1, {}]",
            spec.d_max
        )));
    }
    let gt = DisparityMap::from_fn(w, h, spec.d_max, |x, y| Some(gt_values[y * w + x]));

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut left = vec![0u8; w * h];
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            left[i] = match surface[i] {
                Surface::Background => background_texture(&mut rng),
                Surface::Obstacle(k) => {
                    let b = &boxes[k];
                    let nx = (col - b.x) as f64 / b.w as f64;
                    let ny = (row - b.y) as f64 / b.h as f64;
                    obstacle_texture(nx, ny, &mut rng)
                }
            };
        }
    }
    let mut right = vec![0u8; w * h];
    let mut depth = vec![-1i64; w * h];
    for row in 0..h {
        for col in 0..w {
            let u = gt_values[row * w + col] as i64;
            let xr = col as i64 - u;
            if xr < 0 {
                continue;
            }
            let j = row * w + xr as usize;
            if u > depth[j] {
                depth[j] = u;
                right[j] = left[row * w + col];
            }
        }
    }
    for j in 0..w * h {
        if depth[j] < 0 {
            right[j] = background_texture(&mut rng);
        }
    }
    let pair = StereoPair::new(GrayImage::new(w, h, left)?, GrayImage::new(w, h, right)?)?;
    Ok(SyntheticScene { pair, gt, boxes })
}

fn background_texture(rng: &mut ChaCha8Rng) -> u8 {
    rng.gen_range(60..=200)
}

/// Box-obstacle appearance at normalized position `(nx, ny)` in `[0, 1)²`:
/// dark frame, bright upper band, two lamps, noisy body.
pub fn obstacle_texture(nx: f64, ny: f64, rng: &mut impl Rng) -> u8 {
    let base: i32 = if nx < 0.08 || nx > 0.92 || ny < 0.08 || ny > 0.92 {
        25
    } else if (0.2..0.45).contains(&ny) && (0.15..0.85).contains(&nx) {
        205
    } else if (0.6..0.72).contains(&ny) && ((0.12..0.3).contains(&nx) || (0.7..0.88).contains(&nx)) {
        235
    } else {
        90
    };
    (base + rng.gen_range(-20..=20)).clamp(0, 255) as u8
}

/// Training windows for the recognizer.
#[derive(Clone, Debug)]
pub struct Corpus {
    /// Obstacle windows: the box fills the window up to small jitter.
    pub positives: Vec<GrayImage>,
    /// Background images, most with an obstacle cut by the border so no
    /// sub-window holds a whole one.
    pub negatives: Vec<GrayImage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub positives: usize,
    pub negatives: usize,
    pub seed: u64,
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut positives = Vec::with_capacity(spec.positives);
    for _ in 0..spec.positives {
        let size = rng.gen_range(30..=90usize);
        positives.push(positive_window(size, &mut rng)?);
    }
    let mut negatives = Vec::with_capacity(spec.negatives);
    for k in 0..spec.negatives {
        let size = rng.gen_range(40..=96usize);
        negatives.push(negative_image(size, k % 3 != 0, &mut rng)?);
    }
    Ok(Corpus { positives, negatives })
}

/// `size × size` window with an obstacle filling it up to ±6% jitter.
pub fn positive_window(size: usize, rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(-0.06..=0.06) * size as f64;
    let x0 = jitter(rng);
    let y0 = jitter(rng);
    let bw = size as f64 * rng.gen_range(0.92..=1.06);
    let bh = size as f64 * rng.gen_range(0.92..=1.06);
    let shift: i32 = rng.gen_range(-30..=30);
    let mut data = vec![0u8; size * size];
    for row in 0..size {
        for col in 0..size {
            let nx = (col as f64 - x0) / bw;
            let ny = (row as f64 - y0) / bh;
            let v = if (0.0..1.0).contains(&nx) && (0.0..1.0).contains(&ny) {
                obstacle_texture(nx, ny, rng)
            } else {
                background_texture(rng)
            };
            data[row * size + col] = (v as i32 + shift).clamp(0, 255) as u8;
        }
    }
    GrayImage::new(size, size, data)
}

fn negative_image(size: usize, with_part: bool, rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    // Obstacle of roughly image size with 25-60% of it past a border.
    let ob = size as f64 * rng.gen_range(0.6..=1.0);
    let cut = rng.gen_range(0.25..0.6);
    let along = rng.gen_range(0.0..(size as f64 - ob).max(0.0) + 1.0);
    let (ox, oy) = match rng.gen_range(0..4) {
        0 => (-ob * cut, along),
        1 => (size as f64 - ob * (1.0 - cut), along),
        2 => (along, -ob * cut),
        _ => (along, size as f64 - ob * (1.0 - cut)),
    };
    let shift: i32 = rng.gen_range(-30..=30);
    let mut data = vec![0u8; size * size];
    for row in 0..size {
        for col in 0..size {
            let nx = (col as f64 - ox) / ob;
            let ny = (row as f64 - oy) / ob;
            let v = if with_part && (0.0..1.0).contains(&nx) && (0.0..1.0).contains(&ny) {
                obstacle_texture(nx, ny, rng)
            } else {
                background_texture(rng)
            };
            data[row * size + col] = (v as i32 + shift).clamp(0, 255) as u8;
        }
    }
    GrayImage::new(size, size, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn road_gt_grows_down_the_image() {
        let mut spec = SceneSpec::road_with_obstacle(1);
        spec.obstacles.clear();
        let scene = generate_synthetic_scene(&spec).unwrap();
        let col = 10;
        let mut prev = 0;
        for row in 0..scene.gt.height() {
            let u = scene.gt.get(col, row).unwrap();
            assert!(u >= prev);
            prev = u;
        }
        assert!(prev > 1);
    }

    #[test]
    fn obstacle_gt_is_constant() {
        let spec = SceneSpec::road_with_obstacle(3);
        let scene = generate_synthetic_scene(&spec).unwrap();
        assert_eq!(scene.boxes.len(), 1);
        let b = scene.boxes[0];
        assert_eq!(b.disparity, 10);
        for row in b.y..b.y + b.h {
            for col in b.x..b.x + b.w {
                assert_eq!(scene.gt.get(col, row), Some(10));
            }
        }
        // The foot of the box touches the road at the same disparity.
        assert_eq!(scene.gt.get(b.x, b.y + b.h), Some(10));
    }

    #[test]
    fn right_image_is_warped_left() {
        let scene = generate_synthetic_scene(&SceneSpec::wall(40, 20, 5, 16, 9)).unwrap();
        for y in 0..20 {
            for x in 5..40 {
                assert_eq!(scene.pair.left().get(x, y), scene.pair.right().get(x - 5, y));
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = generate_synthetic_scene(&SceneSpec::road_with_obstacle(7)).unwrap();
        let b = generate_synthetic_scene(&SceneSpec::road_with_obstacle(7)).unwrap();
        assert_eq!(a.pair.left(), b.pair.left());
        assert_eq!(a.pair.right(), b.pair.right());
        assert_eq!(a.gt, b.gt);
        let c = generate_synthetic_scene(&SceneSpec::road_with_obstacle(8)).unwrap();
        assert_ne!(a.pair.left(), c.pair.left());
    }

    #[test]
    fn out_of_range_disparity_is_rejected() {
        assert!(generate_synthetic_scene(&SceneSpec::wall(20, 20, 40, 16, 0)).is_err());
        assert!(generate_synthetic_scene(&SceneSpec::wall(20, 20, 0, 16, 0)).is_err());
    }

    #[test]
    fn corpus_is_deterministic() {
        let spec = CorpusSpec {
            positives: 5,
            negatives: 5,
            seed: 4,
        };
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.positives, b.positives);
        assert_eq!(a.negatives, b.negatives);
    }
}
