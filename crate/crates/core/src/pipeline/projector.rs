//! Image → W+ projection backends.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::generator::{save_toy_checkpoint, wplus_to_style, Generator, InputTransform, ToyGenerator};
use crate::image::Image;
use crate::latent::{LatentTrajectory, LatentWPlus, LATENT_DIM};
use crate::perception::{BlockMeanEmbedder, FaceEmbedder};

pub trait ProjectorBackend: Send + Sync {
    fn name(&self) -> &str;

    /// One W+ code per frame, in order.
    fn project(&self, frames: &[Image], fps: f64, source_id: &str) -> Result<LatentTrajectory>;

    /// Write generator weights fine-tuned around `code` so that they
    /// reproduce `reference` more closely.
    fn fine_tune(&self, _reference: &Image, _code: &LatentWPlus, _out: &Path) -> Result<()> {
        Err(Error::Capability(format!("projector `{}` cannot fine-tune", self.name())))
    }
}

const ENCODER_BLOCKS: usize = 8;
const FINETUNE_SCALE: f64 = 0.02;

/// Test projector. Frames within `tolerance` (mean absolute difference) of
/// the render of a registered code project to that code; anything else goes
/// through a fixed random linear encoder over an 8×8 colour thumbnail.
pub struct SyntheticProjector {
    generator: Arc<dyn Generator>,
    toy: Option<ToyGenerator>,
    registry: Vec<(Image, LatentWPlus)>,
    tolerance: f64,
    encoder: Vec<f64>,
    seed: u64,
}

impl SyntheticProjector {
    pub fn new(generator: Arc<dyn Generator>, known: &[LatentWPlus], tolerance: f64, seed: u64) -> Result<Self> {
        let registry = known
            .par_iter()
            .map(|w| {
                let s = wplus_to_style(generator.as_ref(), w)?;
                Ok((generator.render(&s, &InputTransform::identity())?.quantized16(), w.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let features = ENCODER_BLOCKS * ENCODER_BLOCKS * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x656e_636f);
        let scale = 2.0 / (features as f64).sqrt();
        let encoder = (0..generator.layer_count() * LATENT_DIM * features)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * scale) as f32 as f64
            })
            .collect();
        Ok(Self {
            generator,
            toy: None,
            registry,
            tolerance,
            encoder,
            seed,
        })
    }

    /// Enable fine-tuning by perturbing this generator's synthesis weights.
    pub fn with_finetune_source(mut self, toy: ToyGenerator) -> Self {
        self.toy = Some(toy);
        self
    }

    fn lookup(&self, frame: &Image) -> Option<&LatentWPlus> {
        self.registry
            .iter()
            .map(|(img, w)| (img.mean_abs_diff(frame), w))
            .filter(|(d, _)| *d <= self.tolerance)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, w)| w)
    }

    fn encode(&self, frame: &Image) -> Result<LatentWPlus> {
        let f = BlockMeanEmbedder::new(ENCODER_BLOCKS)?.embed(frame)?.0;
        let n = f.len();
        let code = self
            .encoder
            .chunks_exact(n)
            .map(|row| row.iter().zip(&f).map(|(a, x)| a * (x - 0.5)).sum::<f64>() as f32 as f64)
            .collect();
        LatentWPlus::new(self.generator.layer_count(), code)
    }
}

impl ProjectorBackend for SyntheticProjector {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn project(&self, frames: &[Image], fps: f64, source_id: &str) -> Result<LatentTrajectory> {
        let n = self.generator.image_size();
        let codes = frames
            .par_iter()
            .enumerate()
            .map(|(j, f)| {
                if f.width() != n || f.height() != n {
                    return Err(invalid("frames", format!("frame {j} is {}×{}, generator renders {n}×{n}", f.width(), f.height())));
                }
                match self.lookup(f) {
                    Some(w) => Ok(w.clone()),
                    None => self.encode(f),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        LatentTrajectory::new(codes, source_id, fps)
    }

    fn fine_tune(&self, reference: &Image, code: &LatentWPlus, out: &Path) -> Result<()> {
        let Some(toy) = &self.toy else {
            return Err(Error::Capability("synthetic projector has no toy weights to fine-tune".into()));
        };
        // Deterministic in (seed, reference, code).
        let digest = reference.checksum();
        let salt = code.as_slice().iter().fold(u64::from_str_radix(&digest[..16], 16).unwrap_or(0), |h, v| {
            h.rotate_left(5) ^ (*v as f32).to_bits() as u64
        });
        save_toy_checkpoint(&toy.clone().with_perturbed_synthesis(FINETUNE_SCALE, self.seed ^ salt), out)?;
        Ok(())
    }
}
