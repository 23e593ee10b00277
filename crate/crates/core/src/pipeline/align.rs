//! Canonical alignment of a clip: detect landmarks, measure each frame's
//! rigid offset, warp frames back to the canonical crop, smooth the track.

use rayon::prelude::*;

use super::config::MissPolicy;
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::latent::RigidParams;
use crate::perception::LandmarkDetector;
use crate::rigid::{canonical, rigid_from_landmarks, smooth_track, RigidTrack};

#[derive(Clone, Debug)]
pub struct AlignOutcome {
    pub frames: Vec<Image>,
    /// Per-frame offsets as measured (misses interpolated).
    pub raw: RigidTrack,
    /// `raw` after the temporal mean filter; this is what gets re-applied.
    pub smoothed: RigidTrack,
    /// Frames where no usable face was found.
    pub misses: Vec<usize>,
}

/// Undo the rigid offset `p`: sample the frame at
/// `R(r)(x − e′) + e′ + t`, `e′` being the canonical eye midpoint.
pub fn warp_to_canonical(frame: &Image, p: &RigidParams) -> Image {
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    let e = canonical::EYE_MIDPOINT;
    let (s, c) = p.r.sin_cos();
    Image::from_fn(frame.width(), frame.height(), |x, y| {
        let u = (x as f64 + 0.5) / w - e[0];
        let v = (y as f64 + 0.5) / h - e[1];
        let sx = c * u - s * v + e[0] + p.tx;
        let sy = s * u + c * v + e[1] + p.ty;
        frame.sample_bilinear(sx * w, sy * h)
    })
}

fn is_miss(e: &Error) -> bool {
    matches!(e, Error::Detection(_) | Error::DegenerateFace(_))
}

/// Fill missing entries by linear interpolation between the nearest
/// detected neighbours, holding the end values past the first/last hit.
fn fill_misses(found: &[Option<RigidParams>]) -> Option<Vec<RigidParams>> {
    let hits: Vec<usize> = (0..found.len()).filter(|&i| found[i].is_some()).collect();
    let (&first, &last) = (hits.first()?, hits.last()?);
    let mut out = Vec::with_capacity(found.len());
    let mut next_hit = 0;
    for i in 0..found.len() {
        if let Some(p) = found[i] {
            out.push(p);
            next_hit += 1;
            continue;
        }
        let p = if i < first {
            found[first].unwrap()
        } else if i > last {
            found[last].unwrap()
        } else {
            let (a, b) = (hits[next_hit - 1], hits[next_hit]);
            let (pa, pb) = (found[a].unwrap(), found[b].unwrap());
            let k = (i - a) as f64 / (b - a) as f64;
            RigidParams {
                tx: pa.tx + k * (pb.tx - pa.tx),
                ty: pa.ty + k * (pb.ty - pa.ty),
                r: pa.r + k * (pb.r - pa.r),
            }
        };
        out.push(p);
    }
    Some(out)
}

pub fn canonical_align(
    frames: &[Image],
    fps: f64,
    landmarker: &dyn LandmarkDetector,
    kernel: usize,
    misses: MissPolicy,
) -> Result<AlignOutcome> {
    if frames.is_empty() {
        return Err(invalid("frames", "nothing to align"));
    }
    let detected: Vec<Result<RigidParams>> = frames
        .par_iter()
        .map(|f| rigid_from_landmarks(&landmarker.detect(f)?, canonical::EYE_MIDPOINT))
        .collect();
    let mut found = Vec::with_capacity(frames.len());
    let mut missed = Vec::new();
    for (j, d) in detected.into_iter().enumerate() {
        match d {
            Ok(p) => found.push(Some(p)),
            Err(e) if is_miss(&e) => {
                if misses == MissPolicy::Abort {
                    return Err(Error::Detection(format!("frame {j}: {e}")));
                }
                log::warn!("frame {j}: no usable face ({e}); interpolating");
                missed.push(j);
                found.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let params = fill_misses(&found).ok_or_else(|| Error::Detection("no face found in any frame".into()))?;
    let raw = RigidTrack::new(params, fps)?;
    let smoothed = smooth_track(&raw, kernel)?;
    let aligned = frames
        .par_iter()
        .zip(&raw.params)
        .map(|(f, p)| warp_to_canonical(f, p))
        .collect();
    Ok(AlignOutcome {
        frames: aligned,
        raw,
        smoothed,
        misses: missed,
    })
}
