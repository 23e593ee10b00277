//! Per-frame style blending: the W+ delta baseline, local channel transfer
//! and the convex mix on the mid layers, then rendering with the rigid
//! input transform.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::generator::{wplus_to_style, Generator, InputTransform};
use crate::image::Image;
use crate::latent::{BlendCoefficients, LatentTrajectory, LatentWPlus, MotionSource, SChannelAddress, StyleVector};
use crate::mining::ChannelCatalog;
use crate::rigid::{compose_input_transform, RigidTrack};

/// W+ layers whose style values are mixed (the rest follow the baseline).
pub const LOCAL_LAYERS: RangeInclusive<usize> = 3..=7;
/// Coarse layers that carry head pose.
pub const POSE_LAYERS: RangeInclusive<usize> = 0..=2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// `w_ref + (w_j − w_0)`: consecutive differences summed up to `j`.
    #[default]
    Cumulative,
    /// `w_ref + (w_{j−1} − w_j)` with `w_{−1} = w_0`: the single backward
    /// difference, applied per frame without accumulation.
    Literal,
}

pub fn baseline_code(w_ref_pose: &LatentWPlus, driving: &LatentTrajectory, j: usize, mode: BaselineMode) -> Result<LatentWPlus> {
    let frames = driving.frames();
    if j >= frames.len() {
        return Err(invalid("frame", format!("frame {j} outside a {}-frame trajectory", frames.len())));
    }
    match mode {
        BaselineMode::Cumulative => w_ref_pose.offset_by_difference(&frames[j], &frames[0]),
        BaselineMode::Literal => {
            let prev = &frames[j.saturating_sub(1)];
            w_ref_pose.offset_by_difference(prev, &frames[j])
        }
    }
}

/// The pure per-address combination.
///
/// * catalog addresses: `α·s_ref + β·s_j + γ·s_base`
/// * other addresses in [`LOCAL_LAYERS`]: `ζ·s_ref + (1 − ζ)·s_base`
/// * everything else: `s_outer`
///
/// `s_j` only needs the catalog addresses populated; `s_base` only the
/// local layers and catalog layers.
pub fn blend_styles(
    s_ref: &StyleVector,
    s_j: &StyleVector,
    s_base: &StyleVector,
    s_outer: &StyleVector,
    catalog: &BTreeSet<SChannelAddress>,
    coeffs: &BlendCoefficients,
) -> Result<StyleVector> {
    coeffs.validate()?;
    let layout = s_ref.layout();
    let (a, b, g, z) = (coeffs.alpha, coeffs.beta, coeffs.gamma, coeffs.zeta);
    let mut out = StyleVector::empty(layout);
    for l in 0..layout.layer_count() {
        let local = LOCAL_LAYERS.contains(&l);
        let has_catalog = catalog.range(SChannelAddress::new(l, 0)..SChannelAddress::new(l + 1, 0)).next().is_some();
        let outer = s_outer.layer(l);
        if !local && !has_catalog {
            let values = outer.ok_or_else(|| invalid("style", format!("layer {l} missing")))?;
            out.set_layer(l, values.to_vec())?;
            continue;
        }
        let missing = || invalid("style", format!("layer {l} missing"));
        let r = s_ref.layer(l).ok_or_else(missing)?;
        let base = s_base.layer(l).ok_or_else(missing)?;
        let values = (0..layout.width(l))
            .map(|c| {
                let addr = SChannelAddress::new(l, c);
                if catalog.contains(&addr) {
                    let sj = s_j.get(addr).ok_or_else(|| invalid("style", format!("driving style lacks {addr}")))?;
                    Ok((a * r[c] + b * sj) + g * base[c])
                } else if local {
                    Ok(base[c] + z * (r[c] - base[c]))
                } else {
                    outer
                        .map(|o| o[c])
                        .ok_or_else(|| invalid("style", format!("layer {l} missing")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        out.set_layer(l, values)?;
    }
    Ok(out)
}

/// Everything needed to blend any frame of a clip.
#[derive(Clone, Debug)]
pub struct BlendInput<'a> {
    pub w_ref_pose: &'a LatentWPlus,
    pub driving: &'a LatentTrajectory,
    pub codriving: Option<&'a LatentTrajectory>,
    pub catalog: &'a ChannelCatalog,
    pub coeffs: BlendCoefficients,
    pub baseline: BaselineMode,
}

impl<'a> BlendInput<'a> {
    fn source(&self, source: MotionSource) -> Result<Option<&'a LatentTrajectory>> {
        match source {
            MotionSource::Driving => Ok(Some(self.driving)),
            MotionSource::Codriving => self
                .codriving
                .map(Some)
                .ok_or_else(|| invalid("codriving", "a co-driving trajectory is required by the motion routing")),
            MotionSource::None => Ok(None),
        }
    }

    /// Number of output frames (the driving clip's length).
    pub fn frame_count(&self) -> usize {
        self.driving.len()
    }

    fn validate(&self, backend: &dyn Generator) -> Result<()> {
        self.coeffs.validate()?;
        self.catalog.check_backend(backend)?;
        if let Some(c) = self.codriving {
            if c.len() != self.driving.len() {
                return Err(invalid(
                    "codriving",
                    format!("{} frames, driving has {}", c.len(), self.driving.len()),
                ));
            }
        }
        Ok(())
    }
}

/// Final style vector of frame `j`.
///
/// Layers 0–2 follow the baseline built from the pose source (the
/// pose-matched reference when pose transfer is off); other layers outside
/// 3–7 follow the baseline built from the local source (the reference when
/// local transfer is off).
pub fn blend_frame(backend: &dyn Generator, input: &BlendInput<'_>, j: usize) -> Result<StyleVector> {
    input.validate(backend)?;
    if j >= input.frame_count() {
        return Err(invalid("frame", format!("frame {j} outside a {}-frame clip", input.frame_count())));
    }
    let s_ref = wplus_to_style(backend, input.w_ref_pose)?;
    let local = input.source(input.coeffs.effective_local())?;
    let pose = input.source(input.coeffs.effective_pose())?;
    let style_of_baseline = |traj: Option<&LatentTrajectory>| -> Result<StyleVector> {
        match traj {
            Some(t) => wplus_to_style(backend, &baseline_code(input.w_ref_pose, t, j, input.baseline)?),
            None => Ok(s_ref.clone()),
        }
    };
    let s_pose = style_of_baseline(pose)?;
    let Some(local) = local else {
        // No local transfer: the reference everywhere except the pose layers.
        let mut out = s_ref.clone();
        for l in POSE_LAYERS.filter(|l| *l < backend.layer_count()) {
            out.set_layer(l, s_pose.layer(l).expect("complete").to_vec())?;
        }
        return Ok(out);
    };
    let s_base = style_of_baseline(Some(local))?;
    let s_j = wplus_to_style(backend, &local.frames()[j])?;
    let mut s_outer = s_base.clone();
    for l in POSE_LAYERS.filter(|l| *l < backend.layer_count()) {
        s_outer.set_layer(l, s_pose.layer(l).expect("complete").to_vec())?;
    }
    blend_styles(&s_ref, &s_j, &s_base, &s_outer, &input.catalog.addresses(), &input.coeffs)
}

pub fn blend_video(backend: &dyn Generator, input: &BlendInput<'_>) -> Result<Vec<StyleVector>> {
    input.validate(backend)?;
    (0..input.frame_count())
        .into_par_iter()
        .map(|j| blend_frame(backend, input, j))
        .collect()
}

/// Replace overridden addresses with their manual values.
pub fn apply_overrides(style: &StyleVector, overrides: &BTreeMap<SChannelAddress, f64>) -> Result<StyleVector> {
    let mut out = style.clone();
    for (&addr, &value) in overrides {
        if !value.is_finite() {
            return Err(invalid("value", format!("override for {addr} is not finite")));
        }
        out.set(addr, value)?;
    }
    Ok(out)
}

/// Render each style with the matching rigid transform (identity when no
/// track is given). Output order follows the input.
pub fn render_video(backend: &dyn Generator, styles: &[StyleVector], rigid: Option<&RigidTrack>) -> Result<Vec<Image>> {
    if let Some(track) = rigid {
        if track.len() != styles.len() {
            return Err(invalid(
                "rigid",
                format!("track has {} frames, video has {}", track.len(), styles.len()),
            ));
        }
    }
    styles
        .par_iter()
        .enumerate()
        .map(|(j, s)| {
            let xform = rigid.map_or_else(InputTransform::identity, |t| compose_input_transform(&t.params[j]));
            backend.render(s, &xform)
        })
        .collect()
}
