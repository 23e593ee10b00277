//! Generator contract: per-layer affine `w → s` maps, synthesis with an
//! input-frame transform, and feature-map taps.
//!
//! [`ToyGenerator`] is a small deterministic stand-in with the same shape as a
//! style-based generator with Fourier-feature inputs. Pretrained models plug in
//! by implementing [`Generator`].

mod checkpoint;
mod linear;
mod toy;
mod transform;

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_pretrained, load_toy_checkpoint, save_toy_checkpoint, write_toy_checkpoint, GENERATOR_MAGIC};
pub use linear::LinearGenerator;
pub use toy::{FourierFeatures, NormRect, RiggedChannel, ToyGenerator};
pub use transform::InputTransform;

use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::latent::{LatentWPlus, StyleLayout, StyleVector, LATENT_DIM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub layer_count: usize,
    pub channel_widths: Vec<usize>,
    pub image_size: usize,
    #[serde(default = "default_frequency_count")]
    pub frequency_count: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_frequency_count() -> usize {
    64
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            layer_count: 16,
            channel_widths: vec![16; 16],
            image_size: 64,
            frequency_count: 64,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_count < 2 {
            return Err(invalid("layer_count", "must be at least 2"));
        }
        if self.channel_widths.len() != self.layer_count {
            return Err(invalid(
                "channel_widths",
                format!("{} widths for {} layers", self.channel_widths.len(), self.layer_count),
            ));
        }
        if self.channel_widths.contains(&0) {
            return Err(invalid("channel_widths", "widths must be positive"));
        }
        if self.image_size < 16 || !self.image_size.is_power_of_two() {
            return Err(invalid("image_size", "must be a power of two ≥ 16"));
        }
        if self.frequency_count == 0 {
            return Err(invalid("frequency_count", "must be positive"));
        }
        Ok(())
    }
}

/// Affine map of one layer: `s_l = weight · w_l + bias`, weight is
/// `width × 512`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineMap {
    pub fn width(&self) -> usize {
        self.bias.len()
    }

    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), LATENT_DIM);
        self.bias
            .iter()
            .enumerate()
            .map(|(c, b)| {
                let row = &self.weight[c * LATENT_DIM..(c + 1) * LATENT_DIM];
                row.iter().zip(w).map(|(a, x)| a * x).sum::<f64>() + b
            })
            .collect()
    }

    /// `weightᵀ · ds`.
    pub fn pullback(&self, ds: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; LATENT_DIM];
        for (c, &g) in ds.iter().enumerate() {
            let row = &self.weight[c * LATENT_DIM..(c + 1) * LATENT_DIM];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * g;
            }
        }
        out
    }

    pub fn identity(width: usize) -> Self {
        assert!(width <= LATENT_DIM);
        let mut weight = vec![0.0; width * LATENT_DIM];
        for c in 0..width {
            weight[c * LATENT_DIM + c] = 1.0;
        }
        Self {
            weight,
            bias: vec![0.0; width],
        }
    }
}

/// Per-layer activation maps, channel-major within a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapStack {
    layers: Vec<LayerMaps>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerMaps {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl LayerMaps {
    pub fn map(&self, channel: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[channel * n..(channel + 1) * n]
    }
}

impl FeatureMapStack {
    pub fn new(layers: Vec<LayerMaps>) -> Result<Self> {
        for (l, layer) in layers.iter().enumerate() {
            if layer.data.len() != layer.width * layer.height * layer.channels {
                return Err(invalid("features", format!("layer {l} buffer size mismatch")));
            }
            if layer.data.iter().any(|v| !v.is_finite()) {
                return Err(invalid("features", format!("layer {l} has non-finite activations")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &LayerMaps {
        &self.layers[l]
    }

    /// Map of one channel with its `(width, height)`.
    pub fn map(&self, layer: usize, channel: usize) -> (&[f64], usize, usize) {
        let l = &self.layers[layer];
        (l.map(channel), l.width, l.height)
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub image: Image,
    pub features: FeatureMapStack,
}

/// A loaded generator. Implementations are immutable after construction.
pub trait Generator: Send + Sync {
    fn layout(&self) -> &StyleLayout;

    fn image_size(&self) -> usize;

    fn affine(&self, layer: usize) -> &AffineMap;

    /// Stable identifier of the weights; catalogs are bound to it.
    fn fingerprint(&self) -> String;

    /// Render and return every layer's post-nonlinearity activations.
    fn synthesize(&self, style: &StyleVector, xform: &InputTransform) -> Result<Synthesis>;

    /// Render without feature taps.
    fn render(&self, style: &StyleVector, xform: &InputTransform) -> Result<Image> {
        Ok(self.synthesize(style, xform)?.image)
    }

    /// Vector–Jacobian product of the rendered image with respect to the style
    /// vector: returns `(∂image/∂s)ᵀ · cotangent`.
    fn style_vjp(&self, _style: &StyleVector, _xform: &InputTransform, _cotangent: &Image) -> Result<StyleVector> {
        Err(Error::Capability("generator does not expose gradients".into()))
    }

    fn layer_count(&self) -> usize {
        self.layout().layer_count()
    }
}

/// `s_l = A_l(w_l)` for every layer.
pub fn wplus_to_style(backend: &dyn Generator, w: &LatentWPlus) -> Result<StyleVector> {
    check_layers(backend, w)?;
    let layers = (0..backend.layer_count())
        .map(|l| backend.affine(l).apply(w.layer(l)))
        .collect();
    StyleVector::from_layers(backend.layout(), layers)
}

/// Style values for the given (inclusive) layer range only.
pub fn style_slices(backend: &dyn Generator, w: &LatentWPlus, layers: RangeInclusive<usize>) -> Result<StyleVector> {
    check_layers(backend, w)?;
    if layers.is_empty() || *layers.end() >= backend.layer_count() {
        return Err(invalid(
            "layers",
            format!("{layers:?} outside backend with {} layers", backend.layer_count()),
        ));
    }
    let mut s = StyleVector::empty(backend.layout());
    for l in layers {
        s.set_layer(l, backend.affine(l).apply(w.layer(l)))?;
    }
    Ok(s)
}

/// `∂/∂w` of a style-space cotangent, layer by layer.
pub fn style_pullback(backend: &dyn Generator, ds: &StyleVector) -> Result<LatentWPlus> {
    let mut out = LatentWPlus::zeros(backend.layer_count());
    for l in ds.populated_layers() {
        let g = backend.affine(l).pullback(ds.layer(l).expect("populated"));
        out.layer_mut(l).copy_from_slice(&g);
    }
    Ok(out)
}

fn check_layers(backend: &dyn Generator, w: &LatentWPlus) -> Result<()> {
    if w.layer_count() != backend.layer_count() {
        return Err(invalid(
            "layer_count",
            format!("code has {} layers, backend expects {}", w.layer_count(), backend.layer_count()),
        ));
    }
    Ok(())
}

pub(crate) fn check_style(backend: &dyn Generator, style: &StyleVector) -> Result<()> {
    if style.layout() != backend.layout() {
        return Err(invalid("style", "style layout does not match backend"));
    }
    if !style.is_complete() {
        return Err(invalid("style", "style vector is incomplete for this backend"));
    }
    Ok(())
}

/// Centered continuous coordinate of pixel `i` on an `n`-pixel axis:
/// `(i + 0.5)/n − 0.5`, so the image spans `[−0.5, 0.5]`.
pub fn pixel_coordinate(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64 - 0.5
}
