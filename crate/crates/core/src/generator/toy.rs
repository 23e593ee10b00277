//! Deterministic desk-scale generator.
//!
//! Input layer: sinusoidal features `sin(2π f_k·x + φ_k)` over the centered
//! coordinate frame `[−0.5, 0.5]²`. An [`InputTransform`] rotates each `f_k`
//! and shifts each `φ_k`, so `F′(x) = F(τ(x))` holds in the continuous domain.
//! Synthesis is a per-pixel stack of 1×1 channel mixes, each modulated by the
//! layer's style values and followed by `tanh`; output is `sigmoid` of a final
//! 1×1 RGB projection. Because every operation after the input layer is
//! pointwise, integer-pixel translations shift the output exactly.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_style, pixel_coordinate, AffineMap, FeatureMapStack, Generator, GeneratorSpec, InputTransform, LayerMaps,
    Synthesis,
};
use crate::error::{invalid, Result};
use crate::image::{hex_digest, Image};
use crate::latent::{SChannelAddress, StyleLayout, StyleVector, LATENT_DIM};

#[derive(Clone, Debug, PartialEq)]
pub struct FourierFeatures {
    pub frequencies: Vec<[f64; 2]>,
    pub phases: Vec<f64>,
}

impl FourierFeatures {
    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn evaluate_into(&self, x: [f64; 2], out: &mut [f64]) {
        for ((o, f), p) in out.iter_mut().zip(&self.frequencies).zip(&self.phases) {
            *o = (2.0 * PI * (f[0] * x[0] + f[1] * x[1]) + p).sin();
        }
    }

    pub fn evaluate(&self, x: [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(x, &mut out);
        out
    }

    /// Features `F′` with `F′(x) = F(τ(x))`: `f′ = Rᵀf`, `φ′ = φ + 2π f·o`.
    pub fn transformed(&self, xform: &InputTransform) -> FourierFeatures {
        let r = &xform.rotation;
        let o = xform.offset;
        let frequencies = self
            .frequencies
            .iter()
            .map(|f| [r[0][0] * f[0] + r[1][0] * f[1], r[0][1] * f[0] + r[1][1] * f[1]])
            .collect();
        let phases = self
            .frequencies
            .iter()
            .zip(&self.phases)
            .map(|(f, p)| p + 2.0 * PI * (f[0] * o[0] + f[1] * o[1]))
            .collect();
        FourierFeatures { frequencies, phases }
    }
}

/// Axis-aligned rectangle in normalized image coordinates, half-open.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl NormRect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] < self.x1 && p[1] >= self.y0 && p[1] < self.y1
    }

    /// Whether the center of pixel `(x, y)` on an `n × n` grid lies inside.
    pub fn contains_pixel(&self, x: usize, y: usize, n: usize) -> bool {
        self.contains([(x as f64 + 0.5) / n as f64, (y as f64 + 0.5) / n as f64])
    }
}

/// A channel whose activation is replaced by `sigmoid(s)` inside a fixed
/// region of the (transformed) input frame and zero elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiggedChannel {
    pub layer: usize,
    pub channel: usize,
    pub rect: NormRect,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Dense {
    /// `out × in`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
}

impl Dense {
    fn outputs(&self) -> usize {
        self.bias.len()
    }

    #[inline]
    fn forward(&self, input: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weight.chunks_exact(self.inputs)) {
            *o = row.iter().zip(input).map(|(a, b)| a * b).sum();
        }
    }

    #[inline]
    fn backward(&self, dout: &[f64], din: &mut [f64]) {
        din.iter_mut().for_each(|v| *v = 0.0);
        for (g, row) in dout.iter().zip(self.weight.chunks_exact(self.inputs)) {
            if *g != 0.0 {
                for (d, a) in din.iter_mut().zip(row) {
                    *d += a * g;
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyGenerator {
    pub(crate) spec: GeneratorSpec,
    layout: StyleLayout,
    pub(crate) features: FourierFeatures,
    pub(crate) affines: Vec<AffineMap>,
    pub(crate) mixing: Vec<Dense>,
    pub(crate) to_rgb: Dense,
    pub(crate) rigs: Vec<RiggedChannel>,
    /// `rig_index[l][c]` → index into `rigs`.
    rig_index: Vec<Vec<Option<usize>>>,
    fingerprint: String,
}

fn normal_f32(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (z * scale) as f32 as f64
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl ToyGenerator {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let f_max = spec.image_size as f64 / 16.0;
        let mut frequencies = Vec::with_capacity(spec.frequency_count);
        let mut phases = Vec::with_capacity(spec.frequency_count);
        for _ in 0..spec.frequency_count {
            // Uniform in the disc of radius f_max.
            let radius = f_max * rng.random::<f64>().sqrt();
            let angle = 2.0 * PI * rng.random::<f64>();
            frequencies.push([
                (radius * angle.cos()) as f32 as f64,
                (radius * angle.sin()) as f32 as f64,
            ]);
            phases.push((2.0 * PI * rng.random::<f64>()) as f32 as f64);
        }
        let affines = spec
            .channel_widths
            .iter()
            .map(|&width| AffineMap {
                weight: (0..width * LATENT_DIM)
                    .map(|_| normal_f32(&mut rng, 0.5 / (LATENT_DIM as f64).sqrt()))
                    .collect(),
                bias: vec![1.0; width],
            })
            .collect();
        let mut inputs = spec.frequency_count;
        let mut mixing = Vec::with_capacity(spec.layer_count);
        for &width in &spec.channel_widths {
            let scale = 1.5 / (inputs as f64).sqrt();
            mixing.push(Dense {
                weight: (0..width * inputs).map(|_| normal_f32(&mut rng, scale)).collect(),
                bias: (0..width).map(|_| normal_f32(&mut rng, 0.1)).collect(),
                inputs,
            });
            inputs = width;
        }
        let to_rgb = Dense {
            weight: (0..3 * inputs).map(|_| normal_f32(&mut rng, 2.0 / (inputs as f64).sqrt())).collect(),
            bias: vec![0.0; 3],
            inputs,
        };
        Self::assemble(spec, FourierFeatures { frequencies, phases }, affines, mixing, to_rgb, Vec::new())
    }

    pub(crate) fn assemble(
        spec: GeneratorSpec,
        features: FourierFeatures,
        affines: Vec<AffineMap>,
        mixing: Vec<Dense>,
        to_rgb: Dense,
        rigs: Vec<RiggedChannel>,
    ) -> Result<Self> {
        spec.validate()?;
        let layout = StyleLayout::new(spec.channel_widths.clone())?;
        let mut gen = Self {
            rig_index: Vec::new(),
            fingerprint: String::new(),
            spec,
            layout,
            features,
            affines,
            mixing,
            to_rgb,
            rigs,
        };
        gen.reindex()?;
        Ok(gen)
    }

    fn reindex(&mut self) -> Result<()> {
        let mut index: Vec<Vec<Option<usize>>> = self.spec.channel_widths.iter().map(|&w| vec![None; w]).collect();
        for (i, rig) in self.rigs.iter().enumerate() {
            let addr = SChannelAddress::new(rig.layer, rig.channel);
            self.layout.check(addr)?;
            if index[rig.layer][rig.channel].replace(i).is_some() {
                return Err(invalid("rigs", format!("channel {addr} rigged twice")));
            }
        }
        self.rig_index = index;
        self.fingerprint = self.compute_fingerprint();
        Ok(())
    }

    fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
        h.update(serde_json::to_vec(&self.rigs).expect("rigs serialize"));
        let mut feed = |vals: &[f64]| {
            for v in vals {
                h.update((*v as f32).to_le_bytes());
            }
        };
        for f in &self.features.frequencies {
            feed(f);
        }
        feed(&self.features.phases);
        for a in &self.affines {
            feed(&a.weight);
            feed(&a.bias);
        }
        for d in self.mixing.iter().chain(std::iter::once(&self.to_rgb)) {
            feed(&d.weight);
            feed(&d.bias);
        }
        let hex = hex_digest(h);
        format!("toy-{}", &hex[..16])
    }

    /// Same generator with some channels rigged to fixed regions.
    pub fn with_rigs(mut self, rigs: Vec<RiggedChannel>) -> Result<Self> {
        self.rigs = rigs;
        self.reindex()?;
        Ok(self)
    }

    pub fn with_affine(mut self, layer: usize, affine: AffineMap) -> Result<Self> {
        if layer >= self.layout.layer_count() {
            return Err(invalid("layer", format!("layer {layer} outside generator")));
        }
        if affine.width() != self.layout.width(layer) || affine.weight.len() != affine.width() * LATENT_DIM {
            return Err(invalid("affine", format!("shape mismatch for layer {layer}")));
        }
        self.affines[layer] = affine;
        self.fingerprint = self.compute_fingerprint();
        Ok(self)
    }

    /// Stand-in for a fine-tuned generator: synthesis weights perturbed,
    /// affine maps and input features untouched.
    pub fn with_perturbed_synthesis(mut self, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in self.mixing.iter_mut().chain(std::iter::once(&mut self.to_rgb)) {
            for w in d.weight.iter_mut().chain(d.bias.iter_mut()) {
                *w = (*w + normal_f32(&mut rng, scale)) as f32 as f64;
            }
        }
        self.fingerprint = self.compute_fingerprint();
        self
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn features(&self) -> &FourierFeatures {
        &self.features
    }

    pub fn rigs(&self) -> &[RiggedChannel] {
        &self.rigs
    }

    fn style_layers<'a>(&self, style: &'a StyleVector) -> Vec<&'a [f64]> {
        (0..self.layout.layer_count())
            .map(|l| style.layer(l).expect("checked complete"))
            .collect()
    }

    /// Forward pass over one pixel. `acts[l]` receives post-nonlinearity
    /// activations, `pre[l]` the unmodulated mix `W_l·h_{l−1}`.
    #[inline]
    fn forward_pixel(
        &self,
        feats: &FourierFeatures,
        x: [f64; 2],
        style: &[&[f64]],
        input: &mut [f64],
        pre: &mut [Vec<f64>],
        acts: &mut [Vec<f64>],
        xform: &InputTransform,
    ) -> [f64; 3] {
        feats.evaluate_into(x, input);
        let tau = if self.rigs.is_empty() { [0.0, 0.0] } else { xform.apply(x) };
        let tau_norm = [tau[0] + 0.5, tau[1] + 0.5];
        for l in 0..self.mixing.len() {
            let (before, rest) = acts.split_at_mut(l);
            let prev: &[f64] = if l == 0 { input } else { &before[l - 1] };
            let layer = &self.mixing[l];
            layer.forward(prev, &mut pre[l]);
            let s = style[l];
            for c in 0..layer.outputs() {
                rest[0][c] = match self.rig_index[l][c] {
                    Some(i) => {
                        if self.rigs[i].rect.contains(tau_norm) {
                            sigmoid(s[c])
                        } else {
                            0.0
                        }
                    }
                    None => (s[c] * pre[l][c] + layer.bias[c]).tanh(),
                };
            }
        }
        let last = acts.last().expect("at least two layers");
        let mut rgb = [0.0; 3];
        self.to_rgb.forward(last, &mut rgb);
        for (c, v) in rgb.iter_mut().enumerate() {
            *v = sigmoid(*v + self.to_rgb.bias[c]);
        }
        rgb
    }

    fn scratch(&self) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let widths = &self.spec.channel_widths;
        (
            vec![0.0; self.features.len()],
            widths.iter().map(|&w| vec![0.0; w]).collect(),
            widths.iter().map(|&w| vec![0.0; w]).collect(),
        )
    }

    fn run(&self, style: &StyleVector, xform: &InputTransform, taps: bool) -> Result<(Image, Option<FeatureMapStack>)> {
        check_style(self, style)?;
        let n = self.spec.image_size;
        let feats = self.features.transformed(xform);
        let style = self.style_layers(style);
        let widths = &self.spec.channel_widths;
        let rows: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..n)
            .into_par_iter()
            .map(|y| {
                let (mut input, mut pre, mut acts) = self.scratch();
                let mut rgb_row = Vec::with_capacity(n * 3);
                let mut tap_row: Vec<Vec<f64>> = if taps {
                    widths.iter().map(|&w| vec![0.0; w * n]).collect()
                } else {
                    Vec::new()
                };
                let py = pixel_coordinate(y, n);
                for x in 0..n {
                    let px = pixel_coordinate(x, n);
                    let rgb = self.forward_pixel(&feats, [px, py], &style, &mut input, &mut pre, &mut acts, xform);
                    rgb_row.extend_from_slice(&rgb);
                    if taps {
                        for (l, a) in acts.iter().enumerate() {
                            for (c, v) in a.iter().enumerate() {
                                tap_row[l][c * n + x] = *v;
                            }
                        }
                    }
                }
                (rgb_row, tap_row)
            })
            .collect();
        let mut data = Vec::with_capacity(n * n * 3);
        for (rgb_row, _) in &rows {
            data.extend_from_slice(rgb_row);
        }
        let image = Image::new(n, n, data)?;
        if !taps {
            return Ok((image, None));
        }
        let mut layers = Vec::with_capacity(widths.len());
        for (l, &w) in widths.iter().enumerate() {
            let mut buf = vec![0.0; w * n * n];
            for (y, (_, tap_row)) in rows.iter().enumerate() {
                for c in 0..w {
                    buf[c * n * n + y * n..c * n * n + (y + 1) * n].copy_from_slice(&tap_row[l][c * n..(c + 1) * n]);
                }
            }
            layers.push(LayerMaps {
                width: n,
                height: n,
                channels: w,
                data: buf,
            });
        }
        Ok((image, Some(FeatureMapStack::new(layers)?)))
    }
}

impl Generator for ToyGenerator {
    fn layout(&self) -> &StyleLayout {
        &self.layout
    }

    fn image_size(&self) -> usize {
        self.spec.image_size
    }

    fn affine(&self, layer: usize) -> &AffineMap {
        &self.affines[layer]
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn synthesize(&self, style: &StyleVector, xform: &InputTransform) -> Result<Synthesis> {
        let (image, features) = self.run(style, xform, true)?;
        Ok(Synthesis {
            image,
            features: features.expect("taps requested"),
        })
    }

    fn render(&self, style: &StyleVector, xform: &InputTransform) -> Result<Image> {
        Ok(self.run(style, xform, false)?.0)
    }

    fn style_vjp(&self, style: &StyleVector, xform: &InputTransform, cotangent: &Image) -> Result<StyleVector> {
        check_style(self, style)?;
        let n = self.spec.image_size;
        if cotangent.width() != n || cotangent.height() != n {
            return Err(invalid("cotangent", "image cotangent must match the render size"));
        }
        let feats = self.features.transformed(xform);
        let style_layers = self.style_layers(style);
        let widths = self.spec.channel_widths.clone();
        let total: usize = widths.iter().sum();
        let offsets: Vec<usize> = widths
            .iter()
            .scan(0, |acc, &w| {
                let o = *acc;
                *acc += w;
                Some(o)
            })
            .collect();
        let partials: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|y| {
                let (mut input, mut pre, mut acts) = self.scratch();
                let mut dh: Vec<Vec<f64>> = widths.iter().map(|&w| vec![0.0; w]).collect();
                let mut dz: Vec<f64> = Vec::new();
                let mut grad = vec![0.0; total];
                let py = pixel_coordinate(y, n);
                for x in 0..n {
                    let px = pixel_coordinate(x, n);
                    let rgb = self.forward_pixel(&feats, [px, py], &style_layers, &mut input, &mut pre, &mut acts, xform);
                    let g = cotangent.pixel(x, y);
                    let dpre: [f64; 3] = std::array::from_fn(|c| g[c] * rgb[c] * (1.0 - rgb[c]));
                    if dpre.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let last = widths.len() - 1;
                    self.to_rgb.backward(&dpre, &mut dh[last]);
                    for l in (0..widths.len()).rev() {
                        let s = style_layers[l];
                        dz.clear();
                        dz.resize(widths[l], 0.0);
                        for c in 0..widths[l] {
                            let d = dh[l][c];
                            if d == 0.0 {
                                continue;
                            }
                            match self.rig_index[l][c] {
                                Some(_) => {
                                    if acts[l][c] != 0.0 {
                                        let sg = sigmoid(s[c]);
                                        grad[offsets[l] + c] += d * sg * (1.0 - sg);
                                    }
                                }
                                None => {
                                    let h = acts[l][c];
                                    let da = d * (1.0 - h * h);
                                    grad[offsets[l] + c] += da * pre[l][c];
                                    dz[c] = da * s[c];
                                }
                            }
                        }
                        if l > 0 {
                            self.mixing[l].backward(&dz, &mut dh[l - 1]);
                        }
                    }
                }
                grad
            })
            .collect();
        let mut total_grad = vec![0.0; total];
        for p in &partials {
            for (t, v) in total_grad.iter_mut().zip(p) {
                *t += v;
            }
        }
        let layers = widths
            .iter()
            .zip(&offsets)
            .map(|(&w, &o)| total_grad[o..o + w].to_vec())
            .collect();
        StyleVector::from_layers(&self.layout, layers)
    }
}
