//! Session configuration: inputs, backend selections, and per-stage settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::media::FpsPolicy;
use crate::blend::BaselineMode;
use crate::error::{invalid, Result};
use crate::latent::BlendCoefficients;
use crate::metrics::KeypointNormalization;
use crate::mining::MiningConfig;
use crate::pose::PoseMatchConfig;

/// Environment variable naming the checkpoint cache directory.
pub const CACHE_ENV: &str = "V2SG_CACHE";

/// One input clip: an image, a frame directory, a video file, or a latent
/// trajectory container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    /// Warp frames to the canonical crop and record the removed motion.
    #[serde(default = "yes")]
    pub align: bool,
    /// Rigid track JSON to use for trajectory inputs (identity otherwise).
    #[serde(default)]
    pub rigid_track: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

impl InputSpec {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            align: true,
            rigid_track: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSelection {
    pub name: String,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl BackendSelection {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSelection {
    pub name: String,
    pub checkpoint: PathBuf,
    /// Fine-tuned synthesis weights to render with; pose matching and
    /// mining always use `checkpoint`.
    #[serde(default)]
    pub finetuned: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorSelection {
    pub name: String,
    /// For `synthetic`: a trajectory of known codes whose renders project
    /// back to themselves.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Largest mean absolute pixel difference accepted as a registry hit.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Ask the projector for fine-tuned generator weights around the
    /// reference code.
    #[serde(default)]
    pub finetune: bool,
}

fn default_tolerance() -> f64 {
    0.02
}

impl Default for ProjectorSelection {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            checkpoint: None,
            tolerance: default_tolerance(),
            finetune: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    pub generator: GeneratorSelection,
    #[serde(default)]
    pub projector: ProjectorSelection,
    #[serde(default = "centroid")]
    pub landmarker: BackendSelection,
    #[serde(default = "linear")]
    pub pose: BackendSelection,
    #[serde(default = "rect")]
    pub segmenter: BackendSelection,
    #[serde(default = "block_mean")]
    pub embedder: BackendSelection,
}

fn centroid() -> BackendSelection {
    BackendSelection::named("centroid")
}
fn linear() -> BackendSelection {
    BackendSelection::named("linear")
}
fn rect() -> BackendSelection {
    BackendSelection::named("rect")
}
fn block_mean() -> BackendSelection {
    BackendSelection::named("block_mean")
}

impl Backends {
    /// Synthetic perception and projection around a toy checkpoint.
    pub fn toy(checkpoint: impl Into<PathBuf>) -> Self {
        Self {
            generator: GeneratorSelection {
                name: "toy".into(),
                checkpoint: checkpoint.into(),
                finetuned: None,
            },
            projector: ProjectorSelection::default(),
            landmarker: centroid(),
            pose: linear(),
            segmenter: rect(),
            embedder: block_mean(),
        }
    }
}

/// What to do with frames where no face is found.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissPolicy {
    /// Interpolate the rigid parameters from the nearest detected frames.
    #[default]
    Interpolate,
    Abort,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub session_dir: PathBuf,
    /// Extra copy of the edited clip as YUV4MPEG2.
    #[serde(default)]
    pub video: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub reference: InputSpec,
    pub driving: InputSpec,
    #[serde(default)]
    pub codriving: Option<InputSpec>,
    pub backends: Backends,
    #[serde(default)]
    pub coefficients: BlendCoefficients,
    #[serde(default)]
    pub pose: PoseMatchConfig,
    /// Driving frame whose pose the reference is matched to.
    #[serde(default)]
    pub anchor_frame: usize,
    #[serde(default)]
    pub mining: MiningConfig,
    /// Use this catalog instead of mining one.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default = "default_kernel")]
    pub rigid_kernel: usize,
    #[serde(default)]
    pub miss_policy: MissPolicy,
    #[serde(default)]
    pub baseline: BaselineMode,
    #[serde(default)]
    pub fps: FpsPolicy,
    pub output: OutputConfig,
    #[serde(default = "yes")]
    pub evaluate: bool,
    #[serde(default)]
    pub normalization: KeypointNormalization,
    #[serde(default)]
    pub seed: u64,
}

fn default_kernel() -> usize {
    3
}

impl SessionConfig {
    pub fn new(reference: InputSpec, driving: InputSpec, backends: Backends, session_dir: impl Into<PathBuf>) -> Self {
        Self {
            reference,
            driving,
            codriving: None,
            backends,
            coefficients: BlendCoefficients::default(),
            pose: PoseMatchConfig::default(),
            anchor_frame: 0,
            mining: MiningConfig::default(),
            catalog: None,
            rigid_kernel: default_kernel(),
            miss_policy: MissPolicy::default(),
            baseline: BaselineMode::default(),
            fps: FpsPolicy::default(),
            output: OutputConfig {
                session_dir: session_dir.into(),
                video: None,
            },
            evaluate: true,
            normalization: KeypointNormalization::default(),
            seed: 0,
        }
    }

    /// Parse a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: SessionConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Make every relative path absolute against `base`. Checkpoints that do
    /// not exist there are looked up in the cache directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let cached = |p: &mut PathBuf| {
            if p.is_relative() {
                let local = base.join(&*p);
                *p = match std::env::var_os(CACHE_ENV) {
                    Some(cache) if !local.exists() => PathBuf::from(cache).join(&*p),
                    _ => local,
                };
            }
        };
        for input in [Some(&mut self.reference), Some(&mut self.driving), self.codriving.as_mut()]
            .into_iter()
            .flatten()
        {
            join(&mut input.path);
            if let Some(t) = input.rigid_track.as_mut() {
                join(t);
            }
        }
        cached(&mut self.backends.generator.checkpoint);
        if let Some(p) = self.backends.generator.finetuned.as_mut() {
            cached(p);
        }
        for sel in [
            &mut self.backends.landmarker,
            &mut self.backends.pose,
            &mut self.backends.segmenter,
            &mut self.backends.embedder,
        ] {
            if let Some(p) = sel.checkpoint.as_mut() {
                cached(p);
            }
        }
        if let Some(p) = self.backends.projector.checkpoint.as_mut() {
            cached(p);
        }
        if let Some(p) = self.catalog.as_mut() {
            join(p);
        }
        join(&mut self.output.session_dir);
        if let Some(p) = self.output.video.as_mut() {
            join(p);
        }
    }

    /// Checks that need no backend: paths, ranges, and names.
    pub fn validate(&self) -> Result<()> {
        let must_exist = |field: &str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(invalid(field, format!("{} does not exist", p.display())))
            }
        };
        for (role, input) in self.inputs() {
            must_exist(&format!("{role}.path"), &input.path)?;
            if let Some(t) = &input.rigid_track {
                must_exist(&format!("{role}.rigid_track"), t)?;
            }
        }
        must_exist("backends.generator.checkpoint", &self.backends.generator.checkpoint)?;
        if let Some(p) = &self.backends.generator.finetuned {
            must_exist("backends.generator.finetuned", p)?;
        }
        if let Some(p) = &self.backends.projector.checkpoint {
            must_exist("backends.projector.checkpoint", p)?;
        }
        if !(self.backends.projector.tolerance.is_finite() && self.backends.projector.tolerance >= 0.0) {
            return Err(invalid("backends.projector.tolerance", "must be finite and ≥ 0"));
        }
        if let Some(p) = &self.catalog {
            must_exist("catalog", p)?;
        }
        self.coefficients.validate()?;
        self.mining.thresholds.validate()?;
        if !(self.mining.binarize_threshold > 0.0 && self.mining.binarize_threshold < 1.0) {
            return Err(invalid("mining.binarize_threshold", "must lie in (0, 1)"));
        }
        if self.mining.probe_count == 0 && self.catalog.is_none() {
            return Err(invalid("mining.probe_count", "at least one probe is needed to mine a catalog"));
        }
        if self.rigid_kernel < 3 || self.rigid_kernel % 2 == 0 {
            return Err(invalid("rigid_kernel", format!("must be odd and ≥ 3, got {}", self.rigid_kernel)));
        }
        if let FpsPolicy::Resample(fps) = self.fps {
            if !(fps.is_finite() && fps > 0.0) {
                return Err(invalid("fps", "target rate must be positive"));
            }
        }
        Ok(())
    }

    /// `(role, input)` pairs in processing order.
    pub fn inputs(&self) -> Vec<(&'static str, &InputSpec)> {
        let mut out = vec![("reference", &self.reference), ("driving", &self.driving)];
        if let Some(c) = &self.codriving {
            out.push(("codriving", c));
        }
        out
    }
}
