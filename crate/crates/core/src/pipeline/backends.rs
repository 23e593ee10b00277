//! Backend construction from a session config.

use std::path::Path;
use std::sync::Arc;

use super::config::{BackendSelection, SessionConfig};
use super::projector::{ProjectorBackend, SyntheticProjector};
use crate::container::load_trajectory;
use crate::error::{invalid, Error, Result};
use crate::generator::{load_pretrained, load_toy_checkpoint, Generator, GeneratorSpec, RiggedChannel, ToyGenerator};
use crate::perception::{
    BlockMeanEmbedder, CentroidLandmarker, FaceEmbedder, FaceLayout, LandmarkDetector, LinearPoseRegressor, PartSegmenter,
    Perception, PoseRegressor, RectSegmenter,
};

/// Everything a session renders and measures with.
#[derive(Clone)]
pub struct SessionBackends {
    /// Original weights: projection, pose matching, mining and blending.
    pub generator: Arc<dyn Generator>,
    /// Weights used for the final renders (fine-tuned when configured).
    pub render_generator: Arc<dyn Generator>,
    pub perception: Perception,
    pub projector: Arc<dyn ProjectorBackend>,
}

impl std::fmt::Debug for SessionBackends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionBackends")
            .field("generator", &self.generator.fingerprint())
            .field("render_generator", &self.render_generator.fingerprint())
            .finish_non_exhaustive()
    }
}

/// Toy rigs tying one channel per mid layer to a part rectangle.
pub fn default_rigs(spec: &GeneratorSpec) -> Vec<RiggedChannel> {
    let layout = FaceLayout::default();
    let rects = [layout.right_eye, layout.left_eye, layout.nose, layout.mouth, layout.mouth];
    (3..=7)
        .zip(rects)
        .filter(|(l, _)| *l < spec.layer_count)
        .map(|(layer, rect)| RiggedChannel {
            layer,
            channel: (layer - 3) % spec.channel_widths[layer],
            rect,
        })
        .collect()
}

/// Toy generator with [`default_rigs`].
pub fn rigged_toy(spec: GeneratorSpec) -> Result<ToyGenerator> {
    let rigs = default_rigs(&spec);
    ToyGenerator::new(spec)?.with_rigs(rigs)
}

fn no_checkpoint(field: &str, sel: &BackendSelection) -> Result<()> {
    match &sel.checkpoint {
        None => Ok(()),
        Some(_) => Err(invalid(field, format!("backend `{}` takes no checkpoint", sel.name))),
    }
}

fn unknown(field: &str, name: &str) -> Error {
    Error::Capability(format!("no adapter for {field} backend `{name}`"))
}

pub fn build_perception(cfg: &SessionConfig, image_size: usize) -> Result<Perception> {
    let b = &cfg.backends;
    let landmarks: Arc<dyn LandmarkDetector> = match b.landmarker.name.as_str() {
        "centroid" => {
            no_checkpoint("backends.landmarker.checkpoint", &b.landmarker)?;
            Arc::new(CentroidLandmarker::default())
        }
        other => return Err(unknown("landmarker", other)),
    };
    let pose: Arc<dyn PoseRegressor> = match b.pose.name.as_str() {
        "linear" => {
            no_checkpoint("backends.pose.checkpoint", &b.pose)?;
            Arc::new(LinearPoseRegressor::random(image_size, image_size, cfg.seed)?)
        }
        other => return Err(unknown("pose", other)),
    };
    let segmenter: Arc<dyn PartSegmenter> = match b.segmenter.name.as_str() {
        "rect" => {
            no_checkpoint("backends.segmenter.checkpoint", &b.segmenter)?;
            Arc::new(RectSegmenter::new(FaceLayout::default(), image_size, image_size)?)
        }
        other => return Err(unknown("segmenter", other)),
    };
    let embedder: Arc<dyn FaceEmbedder> = match b.embedder.name.as_str() {
        "block_mean" => {
            no_checkpoint("backends.embedder.checkpoint", &b.embedder)?;
            Arc::new(BlockMeanEmbedder::new(4)?)
        }
        other => return Err(unknown("embedder", other)),
    };
    Ok(Perception {
        landmarks,
        pose,
        segmenter,
        embedder,
    })
}

/// Load the original generator, perception and projector.
/// `finetuned` overrides the configured fine-tuned checkpoint.
pub fn build_backends(cfg: &SessionConfig, finetuned: Option<&Path>) -> Result<SessionBackends> {
    let sel = &cfg.backends.generator;
    if sel.name != "toy" {
        return Err(unknown("generator", &sel.name));
    }
    if !sel.checkpoint.exists() {
        return Err(invalid(
            "backends.generator.checkpoint",
            format!("{} does not exist", sel.checkpoint.display()),
        ));
    }
    let toy = load_toy_checkpoint(&sel.checkpoint)?;
    let generator: Arc<dyn Generator> = Arc::new(toy.clone());
    let render_generator = match finetuned.or(sel.finetuned.as_deref()) {
        Some(ft) => load_pretrained(&sel.checkpoint, Some(ft))?,
        None => generator.clone(),
    };
    let perception = build_perception(cfg, generator.image_size())?;
    let p = &cfg.backends.projector;
    let projector: Arc<dyn ProjectorBackend> = match p.name.as_str() {
        "synthetic" => {
            let known = match &p.checkpoint {
                Some(path) => load_trajectory(path)?.frames().to_vec(),
                None => Vec::new(),
            };
            if known.iter().any(|w| w.layer_count() != generator.layer_count()) {
                return Err(invalid("backends.projector.checkpoint", "registry codes do not match the generator's layer count"));
            }
            Arc::new(SyntheticProjector::new(generator.clone(), &known, p.tolerance, cfg.seed)?.with_finetune_source(toy))
        }
        other => return Err(unknown("projector", other)),
    };
    Ok(SessionBackends {
        generator,
        render_generator,
        perception,
        projector,
    })
}
