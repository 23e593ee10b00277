//! Latent-space value types shared by every stage of the toolkit.
//!
//! Codes are held in `f64` for the numerical stages (pose matching, blending)
//! and narrowed to `f32` only when persisted; see [`crate::container`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Width of one W+ layer vector.
pub const LATENT_DIM: usize = 512;

/// Per-layer W+ code, `layer_count × 512`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentWPlus {
    layer_count: usize,
    code: Vec<f64>,
}

impl LatentWPlus {
    pub fn new(layer_count: usize, code: Vec<f64>) -> Result<Self> {
        if layer_count == 0 {
            return Err(invalid("layer_count", "must be positive"));
        }
        if code.len() != layer_count * LATENT_DIM {
            return Err(invalid(
                "code",
                format!(
                    "expected {} values for {layer_count} layers, got {}",
                    layer_count * LATENT_DIM,
                    code.len()
                ),
            ));
        }
        if let Some(i) = code.iter().position(|v| !v.is_finite()) {
            return Err(invalid("code", format!("non-finite value at index {i}")));
        }
        Ok(Self { layer_count, code })
    }

    pub fn zeros(layer_count: usize) -> Self {
        assert!(layer_count > 0, "layer_count must be positive");
        Self {
            layer_count,
            code: vec![0.0; layer_count * LATENT_DIM],
        }
    }

    pub fn from_layers(layers: &[Vec<f64>]) -> Result<Self> {
        let mut code = Vec::with_capacity(layers.len() * LATENT_DIM);
        for (l, layer) in layers.iter().enumerate() {
            if layer.len() != LATENT_DIM {
                return Err(invalid(
                    "code",
                    format!("layer {l} has {} entries, expected {LATENT_DIM}", layer.len()),
                ));
            }
            code.extend_from_slice(layer);
        }
        Self::new(layers.len(), code)
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.code[l * LATENT_DIM..(l + 1) * LATENT_DIM]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.code[l * LATENT_DIM..(l + 1) * LATENT_DIM]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.code
    }

    /// Elementwise `self + (a - b)`, evaluated left to right per entry.
    pub fn offset_by_difference(&self, a: &LatentWPlus, b: &LatentWPlus) -> Result<Self> {
        self.check_same_shape(a)?;
        self.check_same_shape(b)?;
        let code = self
            .code
            .iter()
            .zip(a.code.iter().zip(&b.code))
            .map(|(base, (x, y))| base + (x - y))
            .collect();
        Self::new(self.layer_count, code)
    }

    /// `a·self + (1 − a)·other`.
    pub fn lerp(&self, other: &LatentWPlus, a: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        let code = self
            .code
            .iter()
            .zip(&other.code)
            .map(|(x, y)| a * x + (1.0 - a) * y)
            .collect();
        Self::new(self.layer_count, code)
    }

    /// Sum of absolute differences over the given layers.
    pub fn l1_distance(&self, other: &LatentWPlus, layers: std::ops::Range<usize>) -> f64 {
        layers
            .flat_map(|l| self.layer(l).iter().zip(other.layer(l)))
            .map(|(x, y)| (x - y).abs())
            .sum()
    }

    /// Round every entry to the nearest `f32`, as the on-disk container does.
    pub fn quantized(&self) -> Self {
        Self {
            layer_count: self.layer_count,
            code: self.code.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    fn check_same_shape(&self, other: &LatentWPlus) -> Result<()> {
        if self.layer_count != other.layer_count {
            return Err(invalid(
                "layer_count",
                format!("{} vs {}", self.layer_count, other.layer_count),
            ));
        }
        Ok(())
    }
}

/// Ordered per-frame codes of a projected video (or a one-frame reference).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    frames: Vec<LatentWPlus>,
    source_id: String,
    fps: f64,
}

impl LatentTrajectory {
    pub fn new(frames: Vec<LatentWPlus>, source_id: impl Into<String>, fps: f64) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(invalid("frames", "trajectory must contain at least one frame"));
        };
        let layers = first.layer_count();
        if let Some(j) = frames.iter().position(|f| f.layer_count() != layers) {
            return Err(invalid(
                "frames",
                format!("frame {j} has {} layers, frame 0 has {layers}", frames[j].layer_count()),
            ));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(invalid("fps", format!("must be positive and finite, got {fps}")));
        }
        Ok(Self {
            frames,
            source_id: source_id.into(),
            fps,
        })
    }

    pub fn single(code: LatentWPlus, source_id: impl Into<String>) -> Self {
        Self {
            frames: vec![code],
            source_id: source_id.into(),
            fps: 1.0,
        }
    }

    pub fn frames(&self) -> &[LatentWPlus] {
        &self.frames
    }

    pub fn frame(&self, j: usize) -> Option<&LatentWPlus> {
        self.frames.get(j)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn layer_count(&self) -> usize {
        self.frames[0].layer_count()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Same codes in reverse frame order.
    pub fn reversed(&self) -> Self {
        let mut frames = self.frames.clone();
        frames.reverse();
        Self {
            frames,
            source_id: format!("{}:reversed", self.source_id),
            fps: self.fps,
        }
    }

    pub fn quantized(&self) -> Self {
        Self {
            frames: self.frames.iter().map(LatentWPlus::quantized).collect(),
            source_id: self.source_id.clone(),
            fps: self.fps,
        }
    }
}

/// One S-space channel: `(layer, channel)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SChannelAddress {
    pub layer: usize,
    pub channel: usize,
}

impl SChannelAddress {
    pub const fn new(layer: usize, channel: usize) -> Self {
        Self { layer, channel }
    }
}

impl fmt::Display for SChannelAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer, self.channel)
    }
}

/// Channel widths of each style layer of a backend.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleLayout {
    channel_widths: Vec<usize>,
}

impl StyleLayout {
    pub fn new(channel_widths: Vec<usize>) -> Result<Self> {
        if channel_widths.is_empty() || channel_widths.contains(&0) {
            return Err(invalid("channel_widths", "every layer needs at least one channel"));
        }
        Ok(Self { channel_widths })
    }

    pub fn layer_count(&self) -> usize {
        self.channel_widths.len()
    }

    pub fn width(&self, layer: usize) -> usize {
        self.channel_widths[layer]
    }

    pub fn channel_widths(&self) -> &[usize] {
        &self.channel_widths
    }

    pub fn total_channels(&self) -> usize {
        self.channel_widths.iter().sum()
    }

    pub fn contains(&self, addr: SChannelAddress) -> bool {
        addr.layer < self.layer_count() && addr.channel < self.channel_widths[addr.layer]
    }

    pub fn check(&self, addr: SChannelAddress) -> Result<()> {
        if self.contains(addr) {
            Ok(())
        } else {
            Err(invalid("address", format!("{addr} is outside the style layout")))
        }
    }

    /// Every address in layer-major order.
    pub fn addresses(&self) -> impl Iterator<Item = SChannelAddress> + '_ {
        self.channel_widths
            .iter()
            .enumerate()
            .flat_map(|(l, &w)| (0..w).map(move |c| SChannelAddress::new(l, c)))
    }
}

/// Style parameters addressed by [`SChannelAddress`]. Layers may be absent,
/// which is how partial vectors (e.g. layers 3–7 only) are represented.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleVector {
    layout: StyleLayout,
    layers: Vec<Option<Vec<f64>>>,
}

impl StyleVector {
    pub fn empty(layout: &StyleLayout) -> Self {
        Self {
            layout: layout.clone(),
            layers: vec![None; layout.layer_count()],
        }
    }

    pub fn from_layers(layout: &StyleLayout, layers: Vec<Vec<f64>>) -> Result<Self> {
        if layers.len() != layout.layer_count() {
            return Err(invalid(
                "style",
                format!("{} layers supplied, layout has {}", layers.len(), layout.layer_count()),
            ));
        }
        let mut out = Self::empty(layout);
        for (l, values) in layers.into_iter().enumerate() {
            out.set_layer(l, values)?;
        }
        Ok(out)
    }

    pub fn layout(&self) -> &StyleLayout {
        &self.layout
    }

    pub fn layer(&self, l: usize) -> Option<&[f64]> {
        self.layers.get(l).and_then(|v| v.as_deref())
    }

    pub fn set_layer(&mut self, l: usize, values: Vec<f64>) -> Result<()> {
        if l >= self.layout.layer_count() {
            return Err(invalid("layer", format!("layer {l} outside layout")));
        }
        if values.len() != self.layout.width(l) {
            return Err(invalid(
                "style",
                format!("layer {l} expects {} channels, got {}", self.layout.width(l), values.len()),
            ));
        }
        self.layers[l] = Some(values);
        Ok(())
    }

    pub fn clear_layer(&mut self, l: usize) {
        if let Some(slot) = self.layers.get_mut(l) {
            *slot = None;
        }
    }

    pub fn get(&self, addr: SChannelAddress) -> Option<f64> {
        self.layer(addr.layer).and_then(|v| v.get(addr.channel).copied())
    }

    pub fn set(&mut self, addr: SChannelAddress, value: f64) -> Result<()> {
        self.layout.check(addr)?;
        match &mut self.layers[addr.layer] {
            Some(values) => {
                values[addr.channel] = value;
                Ok(())
            }
            None => Err(invalid("address", format!("layer {} is not populated", addr.layer))),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.layers.iter().all(Option::is_some)
    }

    pub fn populated_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.iter().enumerate().filter_map(|(l, v)| v.as_ref().map(|_| l))
    }

    /// Populated entries in layer-major order.
    pub fn iter(&self) -> impl Iterator<Item = (SChannelAddress, f64)> + '_ {
        self.layers.iter().enumerate().flat_map(|(l, values)| {
            values
                .iter()
                .flat_map(move |v| v.iter().enumerate().map(move |(c, &x)| (SChannelAddress::new(l, c), x)))
        })
    }

    pub fn len(&self) -> usize {
        self.layers.iter().flatten().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy keeping only the given layers.
    pub fn restricted(&self, keep: impl Fn(usize) -> bool) -> Self {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, v)| if keep(l) { v.clone() } else { None })
            .collect();
        Self {
            layout: self.layout.clone(),
            layers,
        }
    }

    pub fn to_map(&self) -> BTreeMap<SChannelAddress, f64> {
        self.iter().collect()
    }
}

/// Per-frame rigid offset from the canonical crop.
///
/// `tx`, `ty` are fractions of image width/height; `r` is in radians,
/// positive counter-clockwise in image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidParams {
    pub tx: f64,
    pub ty: f64,
    pub r: f64,
}

impl RigidParams {
    pub fn new(tx: f64, ty: f64, r: f64) -> Result<Self> {
        let p = Self { tx, ty, r };
        p.validate()?;
        Ok(p)
    }

    pub const fn identity() -> Self {
        Self { tx: 0.0, ty: 0.0, r: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tx.is_finite() && self.ty.is_finite() && self.r.is_finite()) {
            return Err(invalid("rigid", "parameters must be finite"));
        }
        if self.r.abs() > PI {
            return Err(invalid("rigid.r", format!("|r| must be ≤ π, got {}", self.r)));
        }
        Ok(())
    }
}

/// Where a motion component is taken from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionSource {
    #[default]
    Driving,
    Codriving,
    None,
}

impl std::str::FromStr for MotionSource {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "driving" => Ok(Self::Driving),
            "codriving" => Ok(Self::Codriving),
            "none" => Ok(Self::None),
            other => Err(invalid("source", format!("unknown motion source `{other}`"))),
        }
    }
}

/// Mixing weights for the final style vector plus motion routing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub use_rigid: bool,
    pub use_pose: bool,
    pub use_local: bool,
    pub rigid_source: MotionSource,
    pub pose_source: MotionSource,
    pub local_source: MotionSource,
}

impl Default for BlendCoefficients {
    fn default() -> Self {
        Self {
            alpha: -1.0,
            beta: 1.0,
            gamma: 1.0,
            zeta: 0.5,
            use_rigid: true,
            use_pose: true,
            use_local: true,
            rigid_source: MotionSource::Driving,
            pose_source: MotionSource::Driving,
            local_source: MotionSource::Driving,
        }
    }
}

impl BlendCoefficients {
    /// Coefficients under which the blend collapses to the plain W+ delta
    /// transfer: every address takes the baseline code's style.
    pub fn w_plus_baseline() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
            zeta: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("zeta", self.zeta),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(invalid("zeta", format!("must lie in [0, 1], got {}", self.zeta)));
        }
        Ok(())
    }

    pub fn effective_rigid(&self) -> MotionSource {
        if self.use_rigid { self.rigid_source } else { MotionSource::None }
    }

    pub fn effective_pose(&self) -> MotionSource {
        if self.use_pose { self.pose_source } else { MotionSource::None }
    }

    pub fn effective_local(&self) -> MotionSource {
        if self.use_local { self.local_source } else { MotionSource::None }
    }
}
