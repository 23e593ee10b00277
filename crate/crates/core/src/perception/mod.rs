//! Interfaces to the external perception models (landmarks, head pose, face
//! parsing, identity embedding) and deterministic closed-form stand-ins.

mod synthetic;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use synthetic::{
    BlockMeanEmbedder, CentroidLandmarker, FaceLayout, LinearPoseRegressor, RectSegmenter, SyntheticFace,
};

use crate::error::{invalid, Error, Result};
use crate::image::{Image, Mask};
use crate::rigid::LandmarkSet;

/// Head pose in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl PoseAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Result<Self> {
        let p = Self { yaw, pitch, roll };
        for (name, v) in [("yaw", yaw), ("pitch", pitch), ("roll", roll)] {
            if !v.is_finite() || v.abs() > std::f64::consts::PI {
                return Err(invalid(name, format!("angle must be finite and within [−π, π], got {v}")));
            }
        }
        Ok(p)
    }

    pub fn from_array(a: [f64; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }

    pub fn distance(&self, other: &PoseAngles) -> f64 {
        let (a, b) = (self.to_array(), other.to_array());
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartLabel {
    Eyes,
    Nose,
    Mouth,
    BackgroundOther,
}

impl PartLabel {
    /// The three semantic parts channels are mined for.
    pub const FOREGROUND: [PartLabel; 3] = [PartLabel::Eyes, PartLabel::Nose, PartLabel::Mouth];

    pub fn as_str(self) -> &'static str {
        match self {
            PartLabel::Eyes => "eyes",
            PartLabel::Nose => "nose",
            PartLabel::Mouth => "mouth",
            PartLabel::BackgroundOther => "background_other",
        }
    }
}

impl std::str::FromStr for PartLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eyes" => Ok(PartLabel::Eyes),
            "nose" => Ok(PartLabel::Nose),
            "mouth" => Ok(PartLabel::Mouth),
            "background_other" => Ok(PartLabel::BackgroundOther),
            other => Err(invalid("part", format!("unknown part `{other}`"))),
        }
    }
}

/// One mask per [`PartLabel`]; the four masks partition the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PartMasks {
    width: usize,
    height: usize,
    masks: BTreeMap<PartLabel, Mask>,
}

impl PartMasks {
    /// Build from a per-pixel part labelling.
    pub fn from_labels(width: usize, height: usize, labels: &[PartLabel]) -> Result<Self> {
        if labels.len() != width * height {
            return Err(invalid("labels", "label map size does not match dimensions"));
        }
        let masks = [PartLabel::Eyes, PartLabel::Nose, PartLabel::Mouth, PartLabel::BackgroundOther]
            .into_iter()
            .map(|p| (p, Mask::new(width, height, labels.iter().map(|l| *l == p).collect()).expect("sized")))
            .collect();
        Ok(Self { width, height, masks })
    }

    /// Map a 19-class CelebAMask-HQ parsing onto parts: eyes = {4, 5},
    /// nose = 10, mouth = {11, 12, 13}, everything else (eyebrows included)
    /// is background_other.
    pub fn from_celebamask(width: usize, height: usize, classes: &[u8]) -> Result<Self> {
        if let Some(c) = classes.iter().find(|&&c| c > 18) {
            return Err(invalid("classes", format!("class {c} outside the 19-class label set")));
        }
        let labels: Vec<PartLabel> = classes.iter().map(|&c| celebamask_part(c)).collect();
        Self::from_labels(width, height, &labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, part: PartLabel) -> &Mask {
        &self.masks[&part]
    }

    pub fn iter(&self) -> impl Iterator<Item = (PartLabel, &Mask)> {
        self.masks.iter().map(|(p, m)| (*p, m))
    }
}

pub fn celebamask_part(class: u8) -> PartLabel {
    match class {
        4 | 5 => PartLabel::Eyes,
        10 => PartLabel::Nose,
        11..=13 => PartLabel::Mouth,
        _ => PartLabel::BackgroundOther,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceEmbedding(pub Vec<f64>);

impl FaceEmbedding {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn l2_distance(&self, other: &FaceEmbedding) -> Result<f64> {
        if self.dimension() != other.dimension() {
            return Err(invalid(
                "embedding",
                format!("dimension {} vs {}", self.dimension(), other.dimension()),
            ));
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
    }
}

pub trait LandmarkDetector: Send + Sync {
    fn detect(&self, image: &Image) -> Result<LandmarkSet>;
}

pub trait PoseRegressor: Send + Sync {
    fn regress(&self, image: &Image) -> Result<PoseAngles>;

    fn supports_gradients(&self) -> bool {
        false
    }

    /// `(∂pose/∂image)ᵀ · cotangent`, with the cotangent ordered
    /// (yaw, pitch, roll).
    fn pullback(&self, _image: &Image, _cotangent: [f64; 3]) -> Result<Image> {
        Err(Error::Capability("pose regressor does not expose gradients".into()))
    }
}

pub trait PartSegmenter: Send + Sync {
    /// `(width, height)` of the masks this segmenter emits.
    fn output_size(&self) -> (usize, usize);

    fn segment(&self, image: &Image) -> Result<PartMasks>;
}

pub trait FaceEmbedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, image: &Image) -> Result<FaceEmbedding>;
}

/// The four perception backends a session uses.
#[derive(Clone)]
pub struct Perception {
    pub landmarks: Arc<dyn LandmarkDetector>,
    pub pose: Arc<dyn PoseRegressor>,
    pub segmenter: Arc<dyn PartSegmenter>,
    pub embedder: Arc<dyn FaceEmbedder>,
}

impl Perception {
    /// Closed-form stubs sized for `image_size × image_size` renders.
    pub fn synthetic(image_size: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            landmarks: Arc::new(CentroidLandmarker::default()),
            pose: Arc::new(LinearPoseRegressor::random(image_size, image_size, seed)?),
            segmenter: Arc::new(RectSegmenter::new(FaceLayout::default(), image_size, image_size)?),
            embedder: Arc::new(BlockMeanEmbedder::new(4)?),
        })
    }
}

impl std::fmt::Debug for Perception {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Perception").finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn celebamask_mapping() {
        let classes: Vec<u8> = (0..19).collect();
        let m = PartMasks::from_celebamask(19, 1, &classes).unwrap();
        let on = |p| (0..19).filter(|&i| m.get(p).get(i, 0)).collect::<Vec<_>>();
        assert_eq!(on(PartLabel::Eyes), vec![4, 5]);
        assert_eq!(on(PartLabel::Nose), vec![10]);
        assert_eq!(on(PartLabel::Mouth), vec![11, 12, 13]);
        assert!(on(PartLabel::BackgroundOther).contains(&2));
        assert!(PartMasks::from_celebamask(1, 1, &[19]).is_err());
    }

    #[test]
    fn pose_angles_range() {
        assert!(PoseAngles::new(0.1, -0.2, 3.0).is_ok());
        assert!(PoseAngles::new(4.0, 0.0, 0.0).is_err());
        assert!(PoseAngles::new(f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn embedding_distance() {
        let a = FaceEmbedding(vec![0.0, 0.0]);
        let b = FaceEmbedding(vec![3.0, 4.0]);
        assert_eq!(a.l2_distance(&b).unwrap(), 5.0);
        assert!(a.l2_distance(&FaceEmbedding(vec![1.0])).is_err());
    }

    #[test]
    fn part_label_parse() {
        for p in [PartLabel::Eyes, PartLabel::Nose, PartLabel::Mouth, PartLabel::BackgroundOther] {
            assert_eq!(p.as_str().parse::<PartLabel>().unwrap(), p);
        }
    }
}
