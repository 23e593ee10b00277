use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_style, AffineMap, FeatureMapStack, Generator, InputTransform, LayerMaps, Synthesis};
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::latent::{StyleLayout, StyleVector, LATENT_DIM};

/// Backend whose render is an affine function of the style vector,
/// `image = P·s + c`, ignoring the input transform.
///
/// Composed with a linear pose regressor the whole `w ↦ pose` map is linear,
/// which gives optimizers a problem with a closed-form least-squares answer.
#[derive(Clone, Debug)]
pub struct LinearGenerator {
    layout: StyleLayout,
    image_size: usize,
    affines: Vec<AffineMap>,
    /// `(size·size·3) × total_channels`, row-major.
    projection: Vec<f64>,
    offset: Vec<f64>,
    seed: u64,
}

impl LinearGenerator {
    pub fn new(channel_widths: Vec<usize>, image_size: usize, seed: u64) -> Result<Self> {
        if image_size == 0 {
            return Err(invalid("image_size", "must be positive"));
        }
        let layout = StyleLayout::new(channel_widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        };
        let affines = layout
            .channel_widths()
            .iter()
            .map(|&w| AffineMap {
                weight: (0..w * LATENT_DIM).map(|_| normal(1.0 / (LATENT_DIM as f64).sqrt())).collect(),
                bias: vec![1.0; w],
            })
            .collect();
        let total = layout.total_channels();
        let pixels = image_size * image_size * 3;
        let projection = (0..pixels * total).map(|_| normal(1.0 / (total as f64).sqrt())).collect();
        let offset = (0..pixels).map(|_| 0.5 + normal(0.05)).collect();
        Ok(Self {
            layout,
            image_size,
            affines,
            projection,
            offset,
            seed,
        })
    }

    fn flat_style(&self, style: &StyleVector) -> Vec<f64> {
        (0..self.layout.layer_count())
            .flat_map(|l| style.layer(l).expect("complete").iter().copied())
            .collect()
    }
}

impl Generator for LinearGenerator {
    fn layout(&self) -> &StyleLayout {
        &self.layout
    }

    fn image_size(&self) -> usize {
        self.image_size
    }

    fn affine(&self, layer: usize) -> &AffineMap {
        &self.affines[layer]
    }

    fn fingerprint(&self) -> String {
        format!("linear-{}-{}-{}", self.seed, self.image_size, self.layout.total_channels())
    }

    fn synthesize(&self, style: &StyleVector, _xform: &InputTransform) -> Result<Synthesis> {
        check_style(self, style)?;
        let s = self.flat_style(style);
        let data = self
            .projection
            .chunks_exact(s.len())
            .zip(&self.offset)
            .map(|(row, c)| row.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() + c)
            .collect();
        let image = Image::new(self.image_size, self.image_size, data)?;
        let layers = (0..self.layout.layer_count())
            .map(|l| LayerMaps {
                width: 1,
                height: 1,
                channels: self.layout.width(l),
                data: style.layer(l).expect("complete").to_vec(),
            })
            .collect();
        Ok(Synthesis {
            image,
            features: FeatureMapStack::new(layers)?,
        })
    }

    fn style_vjp(&self, style: &StyleVector, _xform: &InputTransform, cotangent: &Image) -> Result<StyleVector> {
        check_style(self, style)?;
        if cotangent.width() != self.image_size || cotangent.height() != self.image_size {
            return Err(invalid("cotangent", "image cotangent must match the render size"));
        }
        let total = self.layout.total_channels();
        let mut grad = vec![0.0; total];
        for (row, g) in self.projection.chunks_exact(total).zip(cotangent.data()) {
            for (o, a) in grad.iter_mut().zip(row) {
                *o += a * g;
            }
        }
        let mut layers = Vec::with_capacity(self.layout.layer_count());
        let mut start = 0;
        for &w in self.layout.channel_widths() {
            layers.push(grad[start..start + w].to_vec());
            start += w;
        }
        StyleVector::from_layers(&self.layout, layers)
    }
}
