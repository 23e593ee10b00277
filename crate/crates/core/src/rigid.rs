//! Rigid (translation + in-plane rotation) offsets of a face from the
//! canonical crop, their temporal smoothing, and conversion to input-frame
//! transforms.
//!
//! Coordinates are normalized to `[0, 1]²` with y pointing down. The canonical
//! eye→mouth axis is `u = (0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::generator::InputTransform;
use crate::latent::RigidParams;

pub const LANDMARK_COUNT: usize = 68;

/// Eye→mouth vectors shorter than this (normalized units) have no direction.
pub const DEGENERATE_AXIS: f64 = 1e-9;

/// Canonical face geometry of an FFHQ-style crop.
///
/// The crop is centered `0.1·|eye→mouth|` below the eye midpoint and spans
/// `3.6·|eye→mouth|` (the `1.8×` half-extent branch of the FFHQ recipe), so
/// the eye midpoint sits at `0.5 − 0.1/3.6` vertically.
pub mod canonical {
    pub const EYE_MIDPOINT: [f64; 2] = [0.5, 0.5 - 0.1 / 3.6];
    pub const EYE_TO_MOUTH: f64 = 1.0 / 3.6;
    pub const EYE_DISTANCE: f64 = 0.9 / 3.6;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    /// 68 `(x, y)` points in pixels.
    pub points: Vec<[f64; 2]>,
    pub image_width: usize,
    pub image_height: usize,
    pub left_eye: Vec<usize>,
    pub right_eye: Vec<usize>,
    pub mouth: Vec<usize>,
}

impl LandmarkSet {
    pub fn new(
        points: Vec<[f64; 2]>,
        image_width: usize,
        image_height: usize,
        left_eye: Vec<usize>,
        right_eye: Vec<usize>,
        mouth: Vec<usize>,
    ) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(invalid("points", format!("expected 68 points, got {}", points.len())));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(invalid("points", "landmarks must be finite"));
        }
        if image_width == 0 || image_height == 0 {
            return Err(invalid("image_size", "dimensions must be positive"));
        }
        let mut seen = [false; LANDMARK_COUNT];
        for (name, group) in [("left_eye", &left_eye), ("right_eye", &right_eye), ("mouth", &mouth)] {
            for &i in group {
                if i >= LANDMARK_COUNT {
                    return Err(invalid(name, format!("index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(invalid(name, format!("index {i} appears in more than one group")));
                }
            }
        }
        Ok(Self {
            points,
            image_width,
            image_height,
            left_eye,
            right_eye,
            mouth,
        })
    }

    /// 68-point iBUG layout: subject's right eye 36–41, left eye 42–47,
    /// mouth 48–67.
    pub fn ibug(points: Vec<[f64; 2]>, image_width: usize, image_height: usize) -> Result<Self> {
        Self::new(
            points,
            image_width,
            image_height,
            (42..48).collect(),
            (36..42).collect(),
            (48..68).collect(),
        )
    }

    pub fn normalized(&self, i: usize) -> [f64; 2] {
        let p = self.points[i];
        [p[0] / self.image_width as f64, p[1] / self.image_height as f64]
    }

    fn group_mean(&self, name: &str, group: &[usize]) -> Result<[f64; 2]> {
        if group.is_empty() {
            return Err(invalid(name, "landmark group is empty"));
        }
        let mut sum = [0.0; 2];
        for &i in group {
            let p = self.normalized(i);
            sum[0] += p[0];
            sum[1] += p[1];
        }
        let n = group.len() as f64;
        Ok([sum[0] / n, sum[1] / n])
    }

    /// Same landmarks transformed by a pixel-space map.
    pub fn map_points(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(|&p| f(p)).collect(),
            ..self.clone()
        }
    }
}

/// Eye midpoint `e = ½(E[e_l] + E[e_r])` and eye→mouth vector `v = E[m] − e`,
/// both normalized.
pub fn face_axis(lm: &LandmarkSet) -> Result<([f64; 2], [f64; 2])> {
    let l = lm.group_mean("left_eye", &lm.left_eye)?;
    let r = lm.group_mean("right_eye", &lm.right_eye)?;
    let m = lm.group_mean("mouth", &lm.mouth)?;
    let e = [0.5 * (l[0] + r[0]), 0.5 * (l[1] + r[1])];
    Ok((e, [m[0] - e[0], m[1] - e[1]]))
}

/// Signed angle from `u` to `v`, in `(−π, π]`.
pub fn signed_angle(u: [f64; 2], v: [f64; 2]) -> f64 {
    let cross = u[0] * v[1] - u[1] * v[0];
    let dot = u[0] * v[0] + u[1] * v[1];
    cross.atan2(dot)
}

pub fn rigid_from_landmarks(lm: &LandmarkSet, canonical_midpoint: [f64; 2]) -> Result<RigidParams> {
    let (e, v) = face_axis(lm)?;
    if v[0].hypot(v[1]) < DEGENERATE_AXIS {
        return Err(Error::DegenerateFace("eye midpoint coincides with mouth centroid".into()));
    }
    RigidParams::new(
        e[0] - canonical_midpoint[0],
        e[1] - canonical_midpoint[1],
        signed_angle([0.0, 1.0], v),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTrack {
    pub fps: f64,
    pub params: Vec<RigidParams>,
}

impl RigidTrack {
    pub fn new(params: Vec<RigidParams>, fps: f64) -> Result<Self> {
        if params.is_empty() {
            return Err(invalid("params", "rigid track must not be empty"));
        }
        for p in &params {
            p.validate()?;
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(invalid("fps", "must be positive"));
        }
        Ok(Self { fps, params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn reversed(&self) -> Self {
        let mut params = self.params.clone();
        params.reverse();
        Self { fps: self.fps, params }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let t: RigidTrack = serde_json::from_slice(bytes)?;
        Self::new(t.params, t.fps)
    }
}

fn mean_filter(values: &[f64], kernel: usize) -> Vec<f64> {
    let half = (kernel / 2) as isize;
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let sum: f64 = (-half..=half).map(|k| values[(i + k).clamp(0, n - 1) as usize]).sum();
            sum / kernel as f64
        })
        .collect()
}

/// Uniform mean filter over each parameter with edge replication.
pub fn smooth_track(track: &RigidTrack, kernel: usize) -> Result<RigidTrack> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(invalid("kernel", format!("must be odd and ≥ 3, got {kernel}")));
    }
    let tx = mean_filter(&track.params.iter().map(|p| p.tx).collect::<Vec<_>>(), kernel);
    let ty = mean_filter(&track.params.iter().map(|p| p.ty).collect::<Vec<_>>(), kernel);
    let r = mean_filter(&track.params.iter().map(|p| p.r).collect::<Vec<_>>(), kernel);
    let params = tx
        .into_iter()
        .zip(ty)
        .zip(r)
        .map(|((tx, ty), r)| RigidParams { tx, ty, r })
        .collect();
    RigidTrack::new(params, track.fps)
}

pub fn compose_input_transform(p: &RigidParams) -> InputTransform {
    InputTransform::from_rigid(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Landmarks whose eye groups average to `l`/`r` and mouth to `m`
    /// (normalized), on a 100×100 image; filler points elsewhere.
    pub(crate) fn landmarks_from(l: [f64; 2], r: [f64; 2], m: [f64; 2]) -> LandmarkSet {
        let mut pts = vec![[50.0, 50.0]; 68];
        let offsets = [[-3.0, 0.0], [3.0, 0.0], [-1.5, -1.0], [1.5, 1.0], [-1.5, 1.0], [1.5, -1.0]];
        for (k, o) in offsets.iter().enumerate() {
            pts[36 + k] = [r[0] * 100.0 + o[0], r[1] * 100.0 + o[1]];
            pts[42 + k] = [l[0] * 100.0 + o[0], l[1] * 100.0 + o[1]];
        }
        for k in 0..20 {
            let a = k as f64 * std::f64::consts::PI / 10.0;
            pts[48 + k] = [m[0] * 100.0 + 5.0 * a.cos(), m[1] * 100.0 + 2.0 * a.sin()];
        }
        LandmarkSet::ibug(pts, 100, 100).unwrap()
    }

    #[test]
    fn axis_of_simple_face() {
        let lm = landmarks_from([0.6, 0.4], [0.4, 0.4], [0.5, 0.7]);
        let (e, v) = face_axis(&lm).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-12 && (e[1] - 0.4).abs() < 1e-12);
        assert!(v[0].abs() < 1e-12 && (v[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn mouth_on_eye_midpoint_gives_zero_axis_and_degenerate_error() {
        let mut pts = vec![[50.0, 40.0]; 68];
        pts[36] = [40.0, 40.0];
        pts[42] = [60.0, 40.0];
        let lm = LandmarkSet::new(pts, 100, 100, vec![42], vec![36], (48..68).collect()).unwrap();
        let (_, v) = face_axis(&lm).unwrap();
        assert!(v[0].hypot(v[1]) < 1e-15);
        assert!(matches!(
            rigid_from_landmarks(&lm, [0.5, 0.4]),
            Err(Error::DegenerateFace(_))
        ));
    }

    #[test]
    fn empty_group_is_rejected() {
        let pts = vec![[1.0, 1.0]; 68];
        let lm = LandmarkSet::new(pts, 10, 10, vec![], vec![36], vec![48]).unwrap();
        assert!(face_axis(&lm).is_err());
        assert!(LandmarkSet::new(vec![[0.0, 0.0]; 68], 10, 10, vec![1, 2], vec![2], vec![3]).is_err());
        assert!(LandmarkSet::ibug(vec![[0.0, 0.0]; 67], 10, 10).is_err());
    }

    #[test]
    fn canonical_pose_and_translation() {
        let lm = landmarks_from([0.6, 0.4], [0.4, 0.4], [0.5, 0.7]);
        let p = rigid_from_landmarks(&lm, [0.5, 0.4]).unwrap();
        assert!(p.tx.abs() < 1e-12 && p.ty.abs() < 1e-12 && p.r.abs() < 1e-12);
        let lm = landmarks_from([0.7, 0.5], [0.5, 0.5], [0.6, 0.8]);
        let p = rigid_from_landmarks(&lm, [0.5, 0.5]).unwrap();
        assert!((p.tx - 0.1).abs() < 1e-12 && p.ty.abs() < 1e-12 && p.r.abs() < 1e-12);
    }

    #[test]
    fn rotation_by_thirty_degrees() {
        let lm = landmarks_from([0.6, 0.4], [0.4, 0.4], [0.5, 0.7]);
        let (e, _) = face_axis(&lm).unwrap();
        let theta = std::f64::consts::PI / 6.0;
        let (s, c) = theta.sin_cos();
        let center = [e[0] * 100.0, e[1] * 100.0];
        let rotated = lm.map_points(|p| {
            let d = [p[0] - center[0], p[1] - center[1]];
            [center[0] + c * d[0] - s * d[1], center[1] + s * d[0] + c * d[1]]
        });
        let p = rigid_from_landmarks(&rotated, [0.5, 0.4]).unwrap();
        assert!((p.r - theta).abs() < 1e-9);
    }

    #[test]
    fn smoothing_examples() {
        let track = RigidTrack::new(
            vec![
                RigidParams { tx: 0.0, ty: 5.0, r: 0.0 },
                RigidParams { tx: 3.0, ty: 5.0, r: 0.0 },
                RigidParams { tx: 3.0, ty: 5.0, r: 0.0 },
            ],
            30.0,
        )
        .unwrap();
        let out = smooth_track(&track, 3).unwrap();
        // Replicate padding: [0,0,3,3,3] → means [1,2,3].
        let tx: Vec<f64> = out.params.iter().map(|p| p.tx).collect();
        assert_eq!(tx, vec![1.0, 2.0, 3.0]);
        assert!(out.params.iter().all(|p| p.ty == 5.0));
        assert!(smooth_track(&track, 4).is_err());
        assert!(smooth_track(&track, 1).is_err());
    }

    #[test]
    fn kernel_five_preserves_ramp_interior() {
        let params = (0..12)
            .map(|i| RigidParams { tx: 0.01 * i as f64, ty: 0.0, r: 0.0 })
            .collect();
        let out = smooth_track(&RigidTrack::new(params, 25.0).unwrap(), 5).unwrap();
        for i in 2..10 {
            assert!((out.params[i].tx - 0.01 * i as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn track_json_shape() {
        let t = RigidTrack::new(vec![RigidParams { tx: 0.25, ty: -0.5, r: 0.125 }], 30.0).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&t.to_json().unwrap()).unwrap();
        assert_eq!(v["fps"], 30.0);
        assert_eq!(v["params"][0]["tx"], 0.25);
        assert_eq!(RigidTrack::from_json(&t.to_json().unwrap()).unwrap(), t);
    }

    fn arb_face() -> impl Strategy<Value = LandmarkSet> {
        (0.3..0.45f64, 0.55..0.7f64, 0.3..0.45f64, 0.35..0.45f64, 0.45..0.55f64, 0.6..0.8f64).prop_map(
            |(lx, rx, ly, ry, mx, my)| landmarks_from([rx, ry], [lx, ly], [mx, my]),
        )
    }

    proptest! {
        #[test]
        fn face_axis_matches_brute_force_means(lm in arb_face()) {
            let (e, v) = face_axis(&lm).unwrap();
            let mean = |idx: std::ops::Range<usize>| {
                let mut s = [0.0, 0.0];
                let n = idx.len() as f64;
                for i in idx {
                    s[0] += lm.points[i][0] / 100.0;
                    s[1] += lm.points[i][1] / 100.0;
                }
                [s[0] / n, s[1] / n]
            };
            let (r, l, m) = (mean(36..42), mean(42..48), mean(48..68));
            let e2 = [(l[0] + r[0]) / 2.0, (l[1] + r[1]) / 2.0];
            prop_assert!((e[0] - e2[0]).abs() < 1e-12 && (e[1] - e2[1]).abs() < 1e-12);
            prop_assert!((v[0] - (m[0] - e2[0])).abs() < 1e-12 && (v[1] - (m[1] - e2[1])).abs() < 1e-12);
        }

        #[test]
        fn rotation_equivariance(lm in arb_face(), theta in -1.2..1.2f64) {
            let base = rigid_from_landmarks(&lm, [0.5, 0.45]).unwrap();
            let (e, _) = face_axis(&lm).unwrap();
            let (s, c) = theta.sin_cos();
            let center = [e[0] * 100.0, e[1] * 100.0];
            let rotated = lm.map_points(|p| {
                let d = [p[0] - center[0], p[1] - center[1]];
                [center[0] + c * d[0] - s * d[1], center[1] + s * d[0] + c * d[1]]
            });
            let turned = rigid_from_landmarks(&rotated, [0.5, 0.45]).unwrap();
            let diff = (turned.r - base.r - theta).rem_euclid(2.0 * std::f64::consts::PI);
            let diff = diff.min(2.0 * std::f64::consts::PI - diff);
            prop_assert!(diff < 1e-9);
            prop_assert!((turned.tx.hypot(turned.ty) - base.tx.hypot(base.ty)).abs() < 1e-9);
        }

        #[test]
        fn translation_covariance(lm in arb_face(), dx in -0.1..0.1f64, dy in -0.1..0.1f64) {
            let base = rigid_from_landmarks(&lm, [0.5, 0.45]).unwrap();
            let moved = lm.map_points(|p| [p[0] + dx * 100.0, p[1] + dy * 100.0]);
            let shifted = rigid_from_landmarks(&moved, [0.5, 0.45]).unwrap();
            prop_assert!((shifted.tx - base.tx - dx).abs() < 1e-12);
            prop_assert!((shifted.ty - base.ty - dy).abs() < 1e-12);
            prop_assert!((shifted.r - base.r).abs() < 1e-12);
        }

        #[test]
        fn smoothing_contracts_range(values in proptest::collection::vec(-1.0..1.0f64, 1..40), k in 1usize..4) {
            let kernel = 2 * k + 1;
            let params: Vec<RigidParams> = values.iter().map(|&v| RigidParams { tx: v, ty: -v, r: v * 0.5 }).collect();
            let out = smooth_track(&RigidTrack::new(params, 30.0).unwrap(), kernel).unwrap();
            prop_assert_eq!(out.len(), values.len());
            let max = values.iter().cloned().fold(f64::MIN, f64::max);
            let min = values.iter().cloned().fold(f64::MAX, f64::min);
            for p in &out.params {
                prop_assert!(p.tx <= max + 1e-15 && p.tx >= min - 1e-15);
            }
        }

        #[test]
        fn smoothing_is_idempotent_on_constants(v in -1.0..1.0f64, n in 1usize..30) {
            let params = vec![RigidParams { tx: v, ty: v, r: v }; n];
            let out = smooth_track(&RigidTrack::new(params.clone(), 30.0).unwrap(), 3).unwrap();
            for p in &out.params {
                prop_assert!((p.tx - v).abs() < 1e-15);
            }
        }
    }
}
