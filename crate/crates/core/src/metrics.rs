//! Keypoint distance, identity distance, Fréchet distance, and the
//! forward/reverse driving consistency protocol.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::perception::{FaceEmbedding, Perception};
use crate::rigid::LandmarkSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointNormalization {
    /// Divide x by image width and y by image height.
    #[default]
    Frame,
    /// Divide both coordinates by the target frame's inter-ocular distance.
    Interocular,
}

impl std::str::FromStr for KeypointNormalization {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(Self::Frame),
            "interocular" => Ok(Self::Interocular),
            other => Err(invalid("normalization", format!("unknown normalization `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dk_x: f64,
    pub dk_y: f64,
    pub id: f64,
    pub fid: f64,
    pub direction: Direction,
    pub normalization: KeypointNormalization,
}

fn interocular(lm: &LandmarkSet) -> Result<f64> {
    let mean = |g: &[usize]| {
        let n = g.len() as f64;
        g.iter().fold([0.0, 0.0], |acc, &i| [acc[0] + lm.points[i][0] / n, acc[1] + lm.points[i][1] / n])
    };
    let (l, r) = (mean(&lm.left_eye), mean(&lm.right_eye));
    let d = (l[0] - r[0]).hypot(l[1] - r[1]);
    if !(d > 0.0) || lm.left_eye.is_empty() || lm.right_eye.is_empty() {
        return Err(invalid("landmarks", "inter-ocular distance is zero"));
    }
    Ok(d)
}

/// Mean over frames of the per-frame mean squared x and y keypoint errors.
pub fn keypoint_distance(
    pred: &[LandmarkSet],
    target: &[LandmarkSet],
    normalization: KeypointNormalization,
) -> Result<(f64, f64)> {
    if pred.len() != target.len() {
        return Err(invalid("frames", format!("{} predicted vs {} target frames", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(invalid("frames", "no frames to compare"));
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        if p.points.len() != t.points.len() {
            return Err(invalid("landmarks", "point counts differ"));
        }
        let (nx, ny) = match normalization {
            KeypointNormalization::Frame => (t.image_width as f64, t.image_height as f64),
            KeypointNormalization::Interocular => {
                let d = interocular(t)?;
                (d, d)
            }
        };
        let (px_scale, py_scale) = match normalization {
            KeypointNormalization::Frame => (p.image_width as f64, p.image_height as f64),
            KeypointNormalization::Interocular => (nx, ny),
        };
        let n = p.points.len() as f64;
        let (mut fx, mut fy) = (0.0, 0.0);
        for (a, b) in p.points.iter().zip(&t.points) {
            fx += (a[0] / px_scale - b[0] / nx).powi(2);
            fy += (a[1] / py_scale - b[1] / ny).powi(2);
        }
        sx += fx / n;
        sy += fy / n;
    }
    let frames = pred.len() as f64;
    Ok((sx / frames, sy / frames))
}

/// Mean L2 distance of frame embeddings to the reference embedding.
pub fn identity_distance(reference: &FaceEmbedding, frames: &[FaceEmbedding]) -> Result<f64> {
    if frames.is_empty() {
        return Err(invalid("frames", "no frames to compare"));
    }
    let mut sum = 0.0;
    for f in frames {
        sum += reference.l2_distance(f)?;
    }
    Ok(sum / frames.len() as f64)
}

fn moments(set: &[Vec<f64>], name: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if set.len() < 2 {
        return Err(invalid(name, "at least two samples are required"));
    }
    let d = set[0].len();
    if d == 0 || set.iter().any(|v| v.len() != d) {
        return Err(invalid(name, "samples must share a positive dimension"));
    }
    if set.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid(name, "samples must be finite"));
    }
    let n = set.len() as f64;
    let mut mu = DVector::zeros(d);
    for v in set {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(d, d);
    for v in set {
        let c = DVector::from_column_slice(v) - &mu;
        cov += &c * c.transpose();
    }
    cov /= n - 1.0;
    Ok((mu, cov))
}

fn symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric matrix with negative eigenvalues clipped.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetric(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `‖μa − μb‖² + tr Σa + tr Σb − 2 tr (Σa^½ Σb Σa^½)^½`.
pub fn fid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = moments(a, "features_a")?;
    let (mu_b, cov_b) = moments(b, "features_b")?;
    if mu_a.len() != mu_b.len() {
        return Err(invalid("features_b", "feature dimensions differ"));
    }
    let root_a = psd_sqrt(&cov_a);
    let inner = symmetric(&(&root_a * symmetric(&cov_b) * &root_a));
    let cross: f64 = inner.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let mean_term = (&mu_a - &mu_b).norm_squared();
    Ok((mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross).max(0.0))
}

/// Landmarks and embeddings of a clip, extracted in parallel.
pub fn describe_frames(frames: &[Image], perception: &Perception) -> Result<(Vec<LandmarkSet>, Vec<FaceEmbedding>)> {
    let out: Vec<(LandmarkSet, FaceEmbedding)> = frames
        .par_iter()
        .map(|f| Ok((perception.landmarks.detect(f)?, perception.embedder.embed(f)?)))
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

/// ΔK against the driving frames and ID against the reference; `fid` is left
/// at zero for the caller to fill.
pub fn evaluate_clip(
    edited: &[Image],
    driving: &[Image],
    reference: &Image,
    perception: &Perception,
    normalization: KeypointNormalization,
    direction: Direction,
) -> Result<(MetricReport, Vec<FaceEmbedding>)> {
    let (pred_lm, pred_emb) = describe_frames(edited, perception)?;
    let (drv_lm, _) = describe_frames(driving, perception)?;
    let (dk_x, dk_y) = keypoint_distance(&pred_lm, &drv_lm, normalization)?;
    let id = identity_distance(&perception.embedder.embed(reference)?, &pred_emb)?;
    Ok((
        MetricReport {
            dk_x,
            dk_y,
            id,
            fid: 0.0,
            direction,
            normalization,
        },
        pred_emb,
    ))
}

/// Render the edit driven forward and by the reversed clip, score each, and
/// put the Fréchet distance between the two edited sets in both reports.
///
/// `render(reversed)` must return the edited frames for the driving clip in
/// the given direction; `driving` holds the forward driving frames.
pub fn consistency_protocol(
    render: impl Fn(bool) -> Result<Vec<Image>>,
    driving: &[Image],
    reference: &Image,
    perception: &Perception,
    normalization: KeypointNormalization,
) -> Result<(MetricReport, MetricReport)> {
    let forward = render(false)?;
    let reverse = render(true)?;
    let reversed_driving: Vec<Image> = driving.iter().rev().cloned().collect();
    let (mut f, f_emb) = evaluate_clip(&forward, driving, reference, perception, normalization, Direction::Forward)?;
    let (mut r, r_emb) =
        evaluate_clip(&reverse, &reversed_driving, reference, perception, normalization, Direction::Reverse)?;
    let as_vecs = |e: Vec<FaceEmbedding>| e.into_iter().map(|v| v.0).collect::<Vec<_>>();
    let distance = fid(&as_vecs(f_emb), &as_vecs(r_emb))?;
    f.fid = distance;
    r.fid = distance;
    Ok((f, r))
}
