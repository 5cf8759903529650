//! Pipeline configuration, stored as TOML.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Example:
//!
//! ```toml
//! d_max = 32
//! threads = 4
//! matcher = "multiscale"
//!
//! [camera]
//! focal_mm = 8.0
//! pixel_pitch_um = 9.6
//! baseline_m = 0.12
//!
//! [penalty]
//! lambda = 8.0
//!
//! [paths]
//! model = "cascade.json"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cost::CostParams;
use crate::error::{Error, Result};
use crate::multiscale::MultiscaleParams;
use crate::recog::DetectorConfig;
use crate::roadobs::{Geometry, RoadParams};
use crate::viterbi::{MpvParams, PenaltyParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherMode {
    /// Coarse-to-fine with narrowed scopes.
    #[default]
    Multiscale,
    /// Full disparity range at full resolution.
    Single,
}

/// Camera optics. The focal length in pixels is `focal_mm / pixel pitch`
/// unless `focal_px` overrides it; the principal point defaults to the
/// image centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub focal_mm: f64,
    pub pixel_pitch_um: f64,
    pub baseline_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focal_px: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            focal_mm: 8.0,
            pixel_pitch_um: 9.6,
            baseline_m: 0.12,
            focal_px: None,
            cx: None,
            cy: None,
        }
    }
}

impl CameraConfig {
    pub fn geometry(&self, width: usize, height: usize) -> Result<Geometry> {
        let cx = self.cx.unwrap_or(width as f64 / 2.0);
        let cy = self.cy.unwrap_or(height as f64 / 2.0);
        let mut g = Geometry::from_optics(self.focal_mm, self.pixel_pitch_um, self.baseline_m, cx, cy);
        if let Some(f) = self.focal_px {
            g.focal_px = f;
        }
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.focal_px.is_none() && !(self.focal_mm > 0.0 && self.pixel_pitch_um > 0.0) {
            return Err(Error::InvalidArgument("focal length and pixel pitch must be > 0".into()));
        }
        if self.focal_px.is_some_and(|f| !(f > 0.0)) {
            return Err(Error::InvalidArgument("focal_px must be > 0".into()));
        }
        if !(self.baseline_m > 0.0) {
            return Err(Error::InvalidArgument("baseline must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remap_left: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remap_right: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub d_max: u32,
    /// Worker threads per stage; 0 uses all cores.
    pub threads: usize,
    pub matcher: MatcherMode,
    pub cost: CostParams,
    pub penalty: PenaltyParams,
    pub multiscale: MultiscaleParams,
    pub camera: CameraConfig,
    pub road: RoadParams,
    pub detector: DetectorConfig,
    /// Disparity error threshold in pixels for evaluation.
    pub eval_tau: f64,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            d_max: 32,
            threads: 0,
            matcher: MatcherMode::default(),
            cost: CostParams::default(),
            penalty: PenaltyParams::default(),
            multiscale: MultiscaleParams::default(),
            camera: CameraConfig::default(),
            road: RoadParams::default(),
            detector: DetectorConfig::default(),
            eval_tau: 3.0,
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_max < 1 {
            return Err(Error::InvalidArgument("d_max must be >= 1".into()));
        }
        if self.multiscale.coarse_block == 0 || self.multiscale.mid_block == 0 {
            return Err(Error::InvalidArgument("multiscale block sizes must be > 0".into()));
        }
        if !(self.eval_tau >= 0.0) {
            return Err(Error::InvalidArgument("eval_tau must be >= 0".into()));
        }
        self.mpv().validate()?;
        self.camera.validate()?;
        self.road.validate()?;
        self.detector.validate()
    }

    pub fn mpv(&self) -> MpvParams {
        MpvParams {
            cost: self.cost,
            penalty: self.penalty,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Serde(reason) => Error::malformed(path, reason),
            other => other,
        })
    }

    /// Hex SHA-256 of the configuration's JSON form. Paths and the thread
    /// count are excluded: neither changes any result.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        c.threads = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn default_optics_give_fb_of_100() {
        let g = CameraConfig::default().geometry(384, 288).unwrap();
        assert!((g.focal_px - 8.0 / 9.6e-3).abs() < 1e-9);
        assert!((g.fb() - 100.0).abs() < 1e-9);
        assert_eq!((g.cx, g.cy), (192.0, 144.0));
    }

    #[test]
    fn toml_roundtrip_and_hash() {
        let mut cfg = PipelineConfig::default();
        cfg.d_max = 48;
        cfg.penalty.lambda = 3.5;
        cfg.paths.model = Some("m.json".into());
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.paths.model = None;
        other.threads = 4;
        assert_eq!(other.hash(), cfg.hash());
        other.d_max = 47;
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_toml("d_max = 0").is_err());
        assert!(PipelineConfig::from_toml("[penalty]\nlambda = -1.0").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml("[camera]\nbaseline_m = 0.0").is_err());
    }
}
