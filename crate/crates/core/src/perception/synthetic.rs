//! Closed-form perception stand-ins and the synthetic face they read.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FaceEmbedder, FaceEmbedding, LandmarkDetector, PartLabel, PartMasks, PartSegmenter, PoseAngles, PoseRegressor};
use crate::error::{invalid, Error, Result};
use crate::generator::NormRect;
use crate::image::Image;
use crate::latent::RigidParams;
use crate::rigid::{canonical, LandmarkSet};

/// Part rectangles of the canonical crop, normalized, on a 1/16 grid.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FaceLayout {
    pub right_eye: NormRect,
    pub left_eye: NormRect,
    pub nose: NormRect,
    pub mouth: NormRect,
}

impl Default for FaceLayout {
    fn default() -> Self {
        Self {
            right_eye: NormRect::new(0.3125, 0.4375, 0.4375, 0.5),
            left_eye: NormRect::new(0.5625, 0.4375, 0.6875, 0.5),
            nose: NormRect::new(0.4375, 0.5, 0.5625, 0.625),
            mouth: NormRect::new(0.375, 0.6875, 0.625, 0.8125),
        }
    }
}

impl FaceLayout {
    /// Part at a normalized point; eyes win over nose over mouth.
    pub fn part_at(&self, p: [f64; 2]) -> PartLabel {
        if self.right_eye.contains(p) || self.left_eye.contains(p) {
            PartLabel::Eyes
        } else if self.nose.contains(p) {
            PartLabel::Nose
        } else if self.mouth.contains(p) {
            PartLabel::Mouth
        } else {
            PartLabel::BackgroundOther
        }
    }

    pub fn rects(&self, part: PartLabel) -> Vec<NormRect> {
        match part {
            PartLabel::Eyes => vec![self.right_eye, self.left_eye],
            PartLabel::Nose => vec![self.nose],
            PartLabel::Mouth => vec![self.mouth],
            PartLabel::BackgroundOther => Vec::new(),
        }
    }
}

/// Segmenter that labels the fixed [`FaceLayout`] rectangles, ignoring image
/// content. Labels are computed on the input grid, then resized
/// nearest-neighbour to the declared output size.
#[derive(Clone, Debug)]
pub struct RectSegmenter {
    layout: FaceLayout,
    width: usize,
    height: usize,
}

impl RectSegmenter {
    pub fn new(layout: FaceLayout, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("output_size", "must be positive"));
        }
        Ok(Self { layout, width, height })
    }

    pub fn label_grid(&self, width: usize, height: usize) -> Vec<PartLabel> {
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let p = [(x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64];
                out.push(self.layout.part_at(p));
            }
        }
        out
    }
}

impl PartSegmenter for RectSegmenter {
    fn output_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn segment(&self, image: &Image) -> Result<PartMasks> {
        let (iw, ih) = (image.width(), image.height());
        let grid = self.label_grid(iw, ih);
        let mut labels = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            let sy = (((y as f64 + 0.5) * ih as f64 / self.height as f64) as usize).min(ih - 1);
            for x in 0..self.width {
                let sx = (((x as f64 + 0.5) * iw as f64 / self.width as f64) as usize).min(iw - 1);
                labels.push(grid[sy * iw + sx]);
            }
        }
        PartMasks::from_labels(self.width, self.height, &labels)
    }
}

/// `P_r(img) = M·vec(img) + offset`.
#[derive(Clone, Debug)]
pub struct LinearPoseRegressor {
    width: usize,
    height: usize,
    /// `3 × (width·height·3)`, row-major.
    matrix: Vec<f64>,
    offset: [f64; 3],
}

impl LinearPoseRegressor {
    pub fn new(width: usize, height: usize, matrix: Vec<f64>, offset: [f64; 3]) -> Result<Self> {
        if matrix.len() != 3 * width * height * 3 {
            return Err(invalid("matrix", "expected 3 rows of width·height·3 entries"));
        }
        if matrix.iter().chain(&offset).any(|v| !v.is_finite()) {
            return Err(invalid("matrix", "entries must be finite"));
        }
        Ok(Self {
            width,
            height,
            matrix,
            offset,
        })
    }

    pub fn random(width: usize, height: usize, seed: u64) -> Result<Self> {
        let n = width * height * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x706f_7365);
        let scale = 0.5 / (n as f64).sqrt();
        let matrix = (0..3 * n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self::new(width, height, matrix, [0.0; 3])
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn offset(&self) -> [f64; 3] {
        self.offset
    }

    fn check(&self, image: &Image) -> Result<()> {
        if image.width() != self.width || image.height() != self.height {
            return Err(invalid(
                "image",
                format!(
                    "regressor expects {}×{}, got {}×{}",
                    self.width,
                    self.height,
                    image.width(),
                    image.height()
                ),
            ));
        }
        Ok(())
    }

    pub fn raw(&self, image: &Image) -> Result<[f64; 3]> {
        self.check(image)?;
        let n = image.data().len();
        let mut out = self.offset;
        for (k, o) in out.iter_mut().enumerate() {
            *o += self.matrix[k * n..(k + 1) * n]
                .iter()
                .zip(image.data())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        Ok(out)
    }
}

impl PoseRegressor for LinearPoseRegressor {
    fn regress(&self, image: &Image) -> Result<PoseAngles> {
        PoseAngles::from_array(self.raw(image)?)
    }

    fn supports_gradients(&self) -> bool {
        true
    }

    fn pullback(&self, image: &Image, cotangent: [f64; 3]) -> Result<Image> {
        self.check(image)?;
        let n = image.data().len();
        let mut data = vec![0.0; n];
        for (k, g) in cotangent.iter().enumerate() {
            for (d, a) in data.iter_mut().zip(&self.matrix[k * n..(k + 1) * n]) {
                *d += a * g;
            }
        }
        Image::new(self.width, self.height, data)
    }
}

/// Mean colour of each cell of a `blocks × blocks` grid.
#[derive(Clone, Copy, Debug)]
pub struct BlockMeanEmbedder {
    blocks: usize,
}

impl BlockMeanEmbedder {
    pub fn new(blocks: usize) -> Result<Self> {
        if blocks == 0 {
            return Err(invalid("blocks", "must be positive"));
        }
        Ok(Self { blocks })
    }
}

impl FaceEmbedder for BlockMeanEmbedder {
    fn dimension(&self) -> usize {
        self.blocks * self.blocks * 3
    }

    fn embed(&self, image: &Image) -> Result<FaceEmbedding> {
        let (w, h, b) = (image.width(), image.height(), self.blocks);
        if w < b || h < b {
            return Err(invalid("image", format!("image smaller than the {b}×{b} block grid")));
        }
        let mut out = Vec::with_capacity(self.dimension());
        for by in 0..b {
            for bx in 0..b {
                let (x0, x1) = (bx * w / b, (bx + 1) * w / b);
                let (y0, y1) = (by * h / b, (by + 1) * h / b);
                let mut sum = [0.0; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = image.pixel(x, y);
                        for c in 0..3 {
                            sum[c] += p[c];
                        }
                    }
                }
                let count = ((x1 - x0) * (y1 - y0)) as f64;
                out.extend(sum.iter().map(|s| s / count));
            }
        }
        Ok(FaceEmbedding(out))
    }
}

/// Reads a [`SyntheticFace`]-style image: the intensity-weighted centroid of
/// the red channel is the left eye, green the right eye, blue the mouth.
/// Emits an iBUG-68 template whose group means equal those centroids.
#[derive(Clone, Copy, Debug)]
pub struct CentroidLandmarker {
    /// Channels with less total intensity than this count as empty.
    pub min_mass: f64,
}

impl Default for CentroidLandmarker {
    fn default() -> Self {
        Self { min_mass: 1e-6 }
    }
}

// Template offsets in units of |eye→mouth|, x along the eye line (towards
// the subject's left), y along the eye→mouth axis.
const EYE_RING: [[f64; 2]; 6] = [
    [-0.15, 0.0],
    [-0.07, -0.05],
    [0.07, -0.05],
    [0.15, 0.0],
    [0.07, 0.05],
    [-0.07, 0.05],
];

fn template_offsets(e_l: [f64; 2], e_r: [f64; 2], m: [f64; 2]) -> Vec<[f64; 2]> {
    // Everything in face-frame units relative to the eye midpoint, except
    // the grouped points which are placed around their own centroids.
    let e = [(e_l[0] + e_r[0]) / 2.0, (e_l[1] + e_r[1]) / 2.0];
    let v = [m[0] - e[0], m[1] - e[1]];
    let len = v[0].hypot(v[1]);
    let (ay, ax) = if len > 0.0 {
        let ay = [v[0] / len, v[1] / len];
        (ay, [ay[1], -ay[0]])
    } else {
        ([0.0, 1.0], [1.0, 0.0])
    };
    let scale = if len > 0.0 { len } else { 1.0 };
    let at = |origin: [f64; 2], u: f64, w: f64| {
        [
            origin[0] + scale * (u * ax[0] + w * ay[0]),
            origin[1] + scale * (u * ax[1] + w * ay[1]),
        ]
    };
    let mut pts = Vec::with_capacity(68);
    for k in 0..17 {
        let t = std::f64::consts::PI * k as f64 / 16.0;
        pts.push(at(e, -0.9 * t.cos(), -0.1 + 1.3 * t.sin()));
    }
    for k in 0..5 {
        pts.push(at(e, -0.6 + 0.1 * k as f64, -0.35));
    }
    for k in 0..5 {
        pts.push(at(e, 0.2 + 0.1 * k as f64, -0.35));
    }
    for k in 0..4 {
        pts.push(at(e, 0.0, -0.2 + 0.15 * k as f64));
    }
    for k in 0..5 {
        pts.push(at(e, -0.2 + 0.1 * k as f64, 0.55));
    }
    for o in EYE_RING {
        pts.push(at(e_r, o[0], o[1]));
    }
    for o in EYE_RING {
        pts.push(at(e_l, o[0], o[1]));
    }
    for k in 0..12 {
        let t = 2.0 * std::f64::consts::PI * k as f64 / 12.0;
        pts.push(at(m, 0.35 * t.cos(), 0.12 * t.sin()));
    }
    for k in 0..8 {
        let t = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
        pts.push(at(m, 0.2 * t.cos(), 0.05 * t.sin()));
    }
    pts
}

impl CentroidLandmarker {
    fn centroid(&self, image: &Image, channel: usize) -> Result<[f64; 2]> {
        let (mut mass, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for y in 0..image.height() {
            for x in 0..image.width() {
                let v = image.pixel(x, y)[channel].max(0.0);
                mass += v;
                sx += v * (x as f64 + 0.5);
                sy += v * (y as f64 + 0.5);
            }
        }
        if mass < self.min_mass {
            return Err(Error::Detection(format!("no signal in channel {channel}")));
        }
        Ok([sx / mass, sy / mass])
    }

    /// `(left eye, right eye, mouth)` centroids in pixels.
    pub fn centroids(&self, image: &Image) -> Result<[[f64; 2]; 3]> {
        Ok([self.centroid(image, 0)?, self.centroid(image, 1)?, self.centroid(image, 2)?])
    }
}

impl LandmarkDetector for CentroidLandmarker {
    fn detect(&self, image: &Image) -> Result<LandmarkSet> {
        let [l, r, m] = self.centroids(image)?;
        let mut pts = template_offsets(l, r, m);
        // Pin group means to the centroids exactly despite rounding in the
        // template arithmetic.
        for (range, target) in [(36..42, r), (42..48, l), (48..68, m)] {
            let n = range.len() as f64;
            let mut mean = [0.0; 2];
            for p in &pts[range.clone()] {
                mean[0] += p[0] / n;
                mean[1] += p[1] / n;
            }
            for p in &mut pts[range] {
                p[0] += target[0] - mean[0];
                p[1] += target[1] - mean[1];
            }
        }
        LandmarkSet::ibug(pts, image.width(), image.height())
    }
}

/// Renders a face as three Gaussian blobs (left eye red, right eye green,
/// mouth blue) on black, posed by [`RigidParams`] relative to the canonical
/// geometry.
#[derive(Clone, Copy, Debug)]
pub struct SyntheticFace {
    pub width: usize,
    pub height: usize,
    pub sigma_px: f64,
    pub midpoint: [f64; 2],
    pub eye_distance: f64,
    pub eye_to_mouth: f64,
}

impl SyntheticFace {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            sigma_px: 2.0,
            midpoint: canonical::EYE_MIDPOINT,
            eye_distance: canonical::EYE_DISTANCE,
            eye_to_mouth: canonical::EYE_TO_MOUTH,
        }
    }

    /// `(left eye, right eye, mouth)` in normalized coordinates.
    pub fn feature_points(&self, p: &RigidParams) -> [[f64; 2]; 3] {
        let e = [self.midpoint[0] + p.tx, self.midpoint[1] + p.ty];
        let (s, c) = p.r.sin_cos();
        let rot = |u: f64, w: f64| [e[0] + c * u - s * w, e[1] + s * u + c * w];
        let half = self.eye_distance / 2.0;
        [rot(half, 0.0), rot(-half, 0.0), rot(0.0, self.eye_to_mouth)]
    }

    pub fn render(&self, p: &RigidParams) -> Image {
        let pts = self.feature_points(p);
        let centers: Vec<[f64; 2]> = pts
            .iter()
            .map(|q| [q[0] * self.width as f64, q[1] * self.height as f64])
            .collect();
        let k = 1.0 / (2.0 * self.sigma_px * self.sigma_px);
        Image::from_fn(self.width, self.height, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut rgb = [0.0; 3];
            for (v, c) in rgb.iter_mut().zip(&centers) {
                let d2 = (px - c[0]).powi(2) + (py - c[1]).powi(2);
                *v = (-d2 * k).exp();
            }
            rgb
        })
    }
}
