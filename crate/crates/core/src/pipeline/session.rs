//! On-disk sessions: staged execution with a manifest, resumable by stage
//! key, guarded by an advisory lock file.
//!
//! Layout under the session directory:
//!
//! ```text
//! manifest.json  config.json  .lock
//! inputs/    ingested frames (16-bit PNG) or trajectories, per role
//! align/     canonical frames and rigid tracks
//! latents/   projected trajectories, optional fine-tuned weights
//! pose/      pose-matched reference code and the optimizer record
//! channels/  catalog.json
//! styles/    per-frame final style vectors
//! frames/    rendered frames and video.y4m
//! metrics/   report.json
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::align::canonical_align;
use super::backends::{build_backends, SessionBackends};
use super::config::{InputSpec, SessionConfig};
use super::media::{frame_files, ingest_video, write_frames_dir, write_y4m, Clip};
use crate::blend::{apply_overrides, blend_frame, blend_video, render_video, BlendInput};
use crate::container::{is_trajectory_file, load_trajectory, save_trajectory};
use crate::error::{invalid, Error, Result};
use crate::generator::{wplus_to_style, InputTransform};
use crate::image::{hex_digest, Image};
use crate::latent::{BlendCoefficients, LatentTrajectory, LatentWPlus, MotionSource, SChannelAddress, StyleLayout, StyleVector};
use crate::metrics::{consistency_protocol, KeypointNormalization, MetricReport};
use crate::mining::{mine_channels, random_probes, ChannelCatalog};
use crate::pose::match_pose;
use crate::rigid::RigidTrack;

pub const MANIFEST_VERSION: u32 = 1;
pub const STAGES: [&str; 8] = ["inputs", "align", "latents", "pose", "channels", "styles", "frames", "metrics"];

const LOCK_FILE: &str = ".lock";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            version: MANIFEST_VERSION,
            stages: BTreeMap::new(),
        }
    }
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        match std::fs::read(dir.join(MANIFEST_FILE)) {
            Ok(bytes) => {
                let m: Manifest = serde_json::from_slice(&bytes)?;
                if m.version != MANIFEST_VERSION {
                    return Err(Error::UnsupportedVersion(m.version as u64));
                }
                Ok(m)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn is_complete(&self, stage: &str) -> bool {
        self.stages.get(stage).is_some_and(|r| r.status == StageStatus::Complete)
    }
}

/// Exclusive writer handle on a session directory.
#[derive(Debug)]
pub struct SessionDir {
    root: PathBuf,
    manifest: Manifest,
    lock: PathBuf,
}

impl SessionDir {
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let lock = root.join(LOCK_FILE);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(Error::Locked(root.to_path_buf())),
            Err(e) => return Err(e.into()),
        }
        let manifest = match Manifest::load(root) {
            Ok(m) => m,
            Err(e) => {
                let _ = std::fs::remove_file(&lock);
                return Err(e);
            }
        };
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn save_manifest(&self) -> Result<()> {
        let tmp = self.root.join(".manifest.json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        std::fs::rename(tmp, self.root.join(MANIFEST_FILE))?;
        Ok(())
    }

    /// Run `compute` into a fresh stage directory unless the manifest shows
    /// the stage complete under the same key; then `load` the artifacts.
    pub fn stage<T>(
        &mut self,
        name: &str,
        key: &str,
        compute: impl FnOnce(&Path) -> Result<()>,
        load: impl FnOnce(&Path) -> Result<T>,
    ) -> Result<T> {
        let dir = self.root.join(name);
        let fresh = self.manifest.stages.get(name).is_some_and(|r| r.key == key && r.status == StageStatus::Complete);
        if fresh && dir.is_dir() {
            log::info!("stage {name}: up to date");
        } else {
            log::info!("stage {name}: running");
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| Error::from(e).in_stage(name))?;
            }
            std::fs::create_dir_all(&dir).map_err(|e| Error::from(e).in_stage(name))?;
            let outcome = compute(&dir);
            let record = StageRecord {
                key: key.to_string(),
                status: if outcome.is_ok() { StageStatus::Complete } else { StageStatus::Failed },
                error: outcome.as_ref().err().map(ToString::to_string),
            };
            self.manifest.stages.insert(name.to_string(), record);
            // Downstream records are stale once a stage reruns.
            if let Some(i) = STAGES.iter().position(|s| *s == name) {
                for later in &STAGES[i + 1..] {
                    self.manifest.stages.remove(*later);
                }
            }
            self.save_manifest().map_err(|e| e.in_stage(name))?;
            outcome.map_err(|e| e.in_stage(name))?;
        }
        load(&dir).map_err(|e| e.in_stage(name))
    }
}

impl Drop for SessionDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}

/// SHA-256 over a labelled sequence of byte strings.
fn key_of(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex_digest(h)
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("config values serialize")
}

/// Digest of a file, or of every file directly inside a directory.
fn content_digest(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            h.update(p.file_name().map(|n| n.as_encoded_bytes().to_vec()).unwrap_or_default());
            h.update(Sha256::digest(std::fs::read(&p)?));
        }
    } else {
        h.update(std::fs::read(path)?);
    }
    Ok(hex_digest(h))
}

// ---------------------------------------------------------------- inputs

/// An ingested input: frames, or codes with an optional rigid track.
#[derive(Clone, Debug)]
pub enum InputData {
    Frames(Clip),
    Trajectory(LatentTrajectory, Option<RigidTrack>),
}

fn ingest_input(cfg: &SessionConfig, input: &InputSpec) -> Result<InputData> {
    if input.path.is_file() && is_trajectory_file(&input.path) {
        let traj = load_trajectory(&input.path)?;
        let rigid = match &input.rigid_track {
            Some(p) => Some(RigidTrack::from_json(&std::fs::read(p)?)?),
            None => None,
        };
        return Ok(InputData::Trajectory(traj, rigid));
    }
    Ok(InputData::Frames(ingest_video(&input.path, cfg.fps)?))
}

fn write_input(dir: &Path, role: &str, data: &InputData) -> Result<()> {
    match data {
        InputData::Frames(clip) => {
            write_frames_dir(&clip.frames, clip.fps, &dir.join(role))?;
        }
        InputData::Trajectory(traj, rigid) => {
            save_trajectory(traj, &dir.join(format!("{role}.v2t")))?;
            if let Some(r) = rigid {
                std::fs::write(dir.join(format!("{role}_rigid.json")), r.to_json()?)?;
            }
        }
    }
    Ok(())
}

fn read_input(dir: &Path, role: &str) -> Result<InputData> {
    let traj = dir.join(format!("{role}.v2t"));
    if traj.exists() {
        let rigid_path = dir.join(format!("{role}_rigid.json"));
        let rigid = if rigid_path.exists() {
            Some(RigidTrack::from_json(&std::fs::read(rigid_path)?)?)
        } else {
            None
        };
        return Ok(InputData::Trajectory(load_trajectory(&traj)?, rigid));
    }
    Ok(InputData::Frames(ingest_video(&dir.join(role), Default::default())?))
}

// ---------------------------------------------------------------- align

#[derive(Clone, Debug)]
struct Aligned {
    /// Canonical frames (absent for trajectory inputs).
    frames: Option<Vec<Image>>,
    /// Smoothed track, re-applied at render time.
    rigid: RigidTrack,
}

fn identity_track(len: usize, fps: f64) -> Result<RigidTrack> {
    RigidTrack::new(vec![crate::latent::RigidParams::identity(); len], fps)
}

fn align_input(cfg: &SessionConfig, backends: &SessionBackends, role: &str, spec: &InputSpec, data: &InputData, dir: &Path) -> Result<()> {
    let rigid = match data {
        InputData::Frames(clip) if spec.align => {
            let out = canonical_align(
                &clip.frames,
                clip.fps,
                backends.perception.landmarks.as_ref(),
                cfg.rigid_kernel,
                cfg.miss_policy,
            )?;
            if !out.misses.is_empty() {
                log::warn!("{role}: {} frames without a face were interpolated", out.misses.len());
            }
            write_frames_dir(&out.frames, clip.fps, &dir.join(role))?;
            std::fs::write(dir.join(format!("{role}_rigid_raw.json")), out.raw.to_json()?)?;
            out.smoothed
        }
        InputData::Frames(clip) => {
            write_frames_dir(&clip.frames, clip.fps, &dir.join(role))?;
            identity_track(clip.frames.len(), clip.fps)?
        }
        InputData::Trajectory(traj, rigid) => match rigid {
            Some(r) if r.len() != traj.len() => {
                return Err(invalid(
                    format!("{role}.rigid_track"),
                    format!("{} entries for a {}-frame trajectory", r.len(), traj.len()),
                ))
            }
            Some(r) => r.clone(),
            None => identity_track(traj.len(), traj.fps())?,
        },
    };
    std::fs::write(dir.join(format!("{role}_rigid.json")), rigid.to_json()?)?;
    Ok(())
}

fn read_aligned(dir: &Path, role: &str) -> Result<Aligned> {
    let rigid = RigidTrack::from_json(&std::fs::read(dir.join(format!("{role}_rigid.json")))?)?;
    let frames_dir = dir.join(role);
    let frames = if frames_dir.is_dir() {
        Some(frame_files(&frames_dir)?.iter().map(|p| Image::load(p)).collect::<Result<_>>()?)
    } else {
        None
    };
    Ok(Aligned { frames, rigid })
}

// ---------------------------------------------------------------- styles

#[derive(Serialize, Deserialize)]
struct StylesFile {
    channel_widths: Vec<usize>,
    frames: Vec<Vec<Vec<f64>>>,
}

fn write_styles(styles: &[StyleVector], path: &Path) -> Result<()> {
    let layout = styles.first().ok_or_else(|| invalid("styles", "no frames"))?.layout();
    let frames = styles
        .iter()
        .map(|s| {
            (0..layout.layer_count())
                .map(|l| s.layer(l).map(<[f64]>::to_vec).ok_or_else(|| invalid("styles", "incomplete style vector")))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let file = StylesFile {
        channel_widths: layout.channel_widths().to_vec(),
        frames,
    };
    std::fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

pub fn read_styles(path: &Path) -> Result<Vec<StyleVector>> {
    let file: StylesFile = serde_json::from_slice(&std::fs::read(path)?)?;
    let layout = StyleLayout::new(file.channel_widths)?;
    file.frames.into_iter().map(|f| StyleVector::from_layers(&layout, f)).collect()
}

// ---------------------------------------------------------------- reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipReport {
    pub forward: MetricReport,
    pub reverse: MetricReport,
}

/// Scores of the configured blend and of the plain W+ delta transfer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub normalization: KeypointNormalization,
    pub frame_count: usize,
    pub method: ClipReport,
    pub baseline: ClipReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseRecord {
    pub anchor_frame: usize,
    pub target: [f64; 3],
    pub achieved: [f64; 3],
    pub residual: f64,
    pub steps: usize,
    pub trace: Vec<f64>,
}

// ---------------------------------------------------------------- session

/// A session with everything up to the channel catalog computed. Renders
/// any frame under any coefficients and overrides.
#[derive(Clone, Debug)]
pub struct PreparedSession {
    pub config: SessionConfig,
    pub dir: PathBuf,
    pub backends: SessionBackends,
    pub reference_code: LatentWPlus,
    /// Canonical reference image (the render of the reference code for
    /// trajectory inputs).
    pub reference_image: Image,
    pub w_ref_pose: LatentWPlus,
    pub driving: LatentTrajectory,
    pub codriving: Option<LatentTrajectory>,
    pub driving_rigid: RigidTrack,
    pub codriving_rigid: Option<RigidTrack>,
    /// Driving frames as ingested, for keypoint scoring.
    pub driving_frames: Option<Vec<Image>>,
    pub catalog: ChannelCatalog,
    pub(crate) keys: BTreeMap<&'static str, String>,
}

#[derive(Clone, Debug)]
pub struct SessionOutcome {
    pub dir: PathBuf,
    pub frames: Vec<PathBuf>,
    pub video: PathBuf,
    pub report: Option<EvalReport>,
}

impl PreparedSession {
    pub fn frame_count(&self) -> usize {
        self.driving.len()
    }

    pub fn fps(&self) -> f64 {
        self.driving.fps()
    }

    fn input<'a>(&'a self, coeffs: BlendCoefficients, driving: &'a LatentTrajectory, codriving: Option<&'a LatentTrajectory>) -> BlendInput<'a> {
        BlendInput {
            w_ref_pose: &self.w_ref_pose,
            driving,
            codriving,
            catalog: &self.catalog,
            coeffs,
            baseline: self.config.baseline,
        }
    }

    pub fn blend_input(&self, coeffs: BlendCoefficients) -> BlendInput<'_> {
        self.input(coeffs, &self.driving, self.codriving.as_ref())
    }

    pub fn rigid_track(&self, coeffs: &BlendCoefficients) -> Result<Option<&RigidTrack>> {
        match coeffs.effective_rigid() {
            MotionSource::Driving => Ok(Some(&self.driving_rigid)),
            MotionSource::Codriving => self
                .codriving_rigid
                .as_ref()
                .map(Some)
                .ok_or_else(|| invalid("rigid_source", "no co-driving clip in this session")),
            MotionSource::None => Ok(None),
        }
    }

    pub fn frame_style(&self, coeffs: &BlendCoefficients, overrides: &BTreeMap<SChannelAddress, f64>, j: usize) -> Result<StyleVector> {
        let s = blend_frame(self.backends.generator.as_ref(), &self.blend_input(*coeffs), j)?;
        apply_overrides(&s, overrides)
    }

    pub fn render_frame(&self, coeffs: &BlendCoefficients, overrides: &BTreeMap<SChannelAddress, f64>, j: usize) -> Result<Image> {
        let style = self.frame_style(coeffs, overrides, j)?;
        let xform = match self.rigid_track(coeffs)? {
            Some(t) => InputTransform::from_rigid(&t.params[j]),
            None => InputTransform::identity(),
        };
        self.backends.render_generator.render(&style, &xform)
    }

    pub fn render_range(
        &self,
        coeffs: &BlendCoefficients,
        overrides: &BTreeMap<SChannelAddress, f64>,
        range: Range<usize>,
    ) -> Result<Vec<Image>> {
        if range.start >= range.end || range.end > self.frame_count() {
            return Err(invalid("range", format!("{range:?} outside 0..{}", self.frame_count())));
        }
        range.into_par_iter().map(|j| self.render_frame(coeffs, overrides, j)).collect()
    }

    pub fn styles(&self, coeffs: &BlendCoefficients) -> Result<Vec<StyleVector>> {
        blend_video(self.backends.generator.as_ref(), &self.blend_input(*coeffs))
    }

    /// Render the whole clip, driven forwards or by the reversed clip.
    pub fn render_clip(&self, coeffs: &BlendCoefficients, reversed: bool) -> Result<Vec<Image>> {
        let rigid = self.rigid_track(coeffs)?;
        let gen = self.backends.generator.as_ref();
        let styles = if reversed {
            let d = self.driving.reversed();
            let c = self.codriving.as_ref().map(LatentTrajectory::reversed);
            blend_video(gen, &self.input(*coeffs, &d, c.as_ref()))?
        } else {
            self.styles(coeffs)?
        };
        let track = rigid.map(|t| if reversed { t.reversed() } else { t.clone() });
        render_video(self.backends.render_generator.as_ref(), &styles, track.as_ref())
    }

    /// Driving frames for keypoint scoring: the ingested clip, or renders
    /// of the driving codes under their rigid track.
    pub fn driving_reference_frames(&self) -> Result<Vec<Image>> {
        if let Some(f) = &self.driving_frames {
            return Ok(f.clone());
        }
        let gen = self.backends.render_generator.as_ref();
        let styles = self
            .driving
            .frames()
            .par_iter()
            .map(|w| wplus_to_style(gen, w))
            .collect::<Result<Vec<_>>>()?;
        render_video(gen, &styles, Some(&self.driving_rigid))
    }

    /// Forward/reverse scores of the configured blend and of the W+ baseline.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let driving = self.driving_reference_frames()?;
        let perception = &self.backends.perception;
        let norm = self.config.normalization;
        let score = |coeffs: BlendCoefficients| -> Result<ClipReport> {
            let (forward, reverse) = consistency_protocol(
                |rev| self.render_clip(&coeffs, rev),
                &driving,
                &self.reference_image,
                perception,
                norm,
            )?;
            Ok(ClipReport { forward, reverse })
        };
        let c = self.config.coefficients;
        let baseline = BlendCoefficients {
            use_rigid: c.use_rigid,
            use_pose: c.use_pose,
            use_local: c.use_local,
            rigid_source: c.rigid_source,
            pose_source: c.pose_source,
            local_source: c.local_source,
            ..BlendCoefficients::w_plus_baseline()
        };
        Ok(EvalReport {
            normalization: norm,
            frame_count: self.frame_count(),
            method: score(c)?,
            baseline: score(baseline)?,
        })
    }
}

/// Run every stage up to the channel catalog.
pub fn prepare_session(cfg: &SessionConfig) -> Result<(SessionDir, PreparedSession)> {
    cfg.validate()?;
    let backends = build_backends(cfg, None)?;
    let mut dir = SessionDir::open(&cfg.output.session_dir)?;
    std::fs::write(dir.root().join("config.json"), cfg.to_json()?)?;
    let prepared = prepare_in(&mut dir, cfg, backends)?;
    Ok((dir, prepared))
}

fn prepare_in(dir: &mut SessionDir, cfg: &SessionConfig, mut backends: SessionBackends) -> Result<PreparedSession> {
    let mut keys: BTreeMap<&'static str, String> = BTreeMap::new();
    let inputs = cfg.inputs();

    // inputs
    let mut parts: Vec<Vec<u8>> = vec![b"inputs".to_vec(), json(&cfg.fps)];
    for (role, spec) in &inputs {
        parts.push(role.as_bytes().to_vec());
        parts.push(json(spec));
        parts.push(content_digest(&spec.path)?.into_bytes());
        if let Some(t) = &spec.rigid_track {
            parts.push(content_digest(t)?.into_bytes());
        }
    }
    let key = key_of(&parts.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let data: BTreeMap<&str, InputData> = dir.stage(
        "inputs",
        &key,
        |d| {
            for (role, spec) in &inputs {
                let data = ingest_input(cfg, spec).map_err(|e| match e {
                    Error::Validation { message, .. } => invalid(format!("{role}.path"), message),
                    e => e,
                })?;
                write_input(d, role, &data)?;
            }
            Ok(())
        },
        |d| inputs.iter().map(|(role, _)| Ok((*role, read_input(d, role)?))).collect(),
    )?;
    keys.insert("inputs", key);

    // align
    let key = key_of(&[
        b"align",
        keys["inputs"].as_bytes(),
        &json(&(cfg.rigid_kernel, cfg.miss_policy, &cfg.backends.landmarker)),
    ]);
    let aligned: BTreeMap<&str, Aligned> = dir.stage(
        "align",
        &key,
        |d| {
            for (role, spec) in &inputs {
                align_input(cfg, &backends, role, spec, &data[role], d)?;
            }
            Ok(())
        },
        |d| inputs.iter().map(|(role, _)| Ok((*role, read_aligned(d, role)?))).collect(),
    )?;
    keys.insert("align", key);

    // latents
    let gen = backends.generator.clone();
    let key = key_of(&[
        b"latents",
        keys["align"].as_bytes(),
        gen.fingerprint().as_bytes(),
        &json(&(&cfg.backends.projector, cfg.seed)),
    ]);
    let finetuned = dir.root().join("latents").join("finetuned.v2g");
    let trajectories: BTreeMap<&str, LatentTrajectory> = dir.stage(
        "latents",
        &key,
        |d| {
            for (role, _) in &inputs {
                let traj = match (&data[role], &aligned[role].frames) {
                    (InputData::Trajectory(t, _), _) => t.clone(),
                    (InputData::Frames(clip), Some(frames)) => {
                        let frames = if *role == "reference" { &frames[..1] } else { &frames[..] };
                        backends.projector.project(frames, clip.fps, role)?
                    }
                    (InputData::Frames(_), None) => unreachable!("aligned frames are written for frame inputs"),
                };
                if traj.layer_count() != gen.layer_count() {
                    return Err(invalid(
                        format!("{role}.path"),
                        format!("{} layers, generator has {}", traj.layer_count(), gen.layer_count()),
                    ));
                }
                save_trajectory(&traj, &d.join(format!("{role}.v2t")))?;
            }
            if cfg.backends.projector.finetune {
                let reference = load_trajectory(&d.join("reference.v2t"))?;
                let image = match &aligned["reference"].frames {
                    Some(f) => f[0].clone(),
                    None => gen.render(&wplus_to_style(gen.as_ref(), &reference.frames()[0])?, &InputTransform::identity())?,
                };
                backends.projector.fine_tune(&image, &reference.frames()[0], &d.join("finetuned.v2g"))?;
            }
            Ok(())
        },
        |d| inputs.iter().map(|(role, _)| Ok((*role, load_trajectory(&d.join(format!("{role}.v2t")))?))).collect(),
    )?;
    keys.insert("latents", key);
    if finetuned.exists() {
        backends = build_backends(cfg, Some(&finetuned))?;
    }

    let reference_code = trajectories["reference"].frames()[0].clone();
    let driving = trajectories["driving"].clone();
    let codriving = trajectories.get("codriving").cloned();
    if let Some(c) = &codriving {
        if c.len() != driving.len() {
            return Err(invalid("codriving.path", format!("{} frames, driving has {}", c.len(), driving.len())));
        }
    }
    if cfg.anchor_frame >= driving.len() {
        return Err(invalid(
            "anchor_frame",
            format!("frame {} outside a {}-frame driving clip", cfg.anchor_frame, driving.len()),
        ));
    }

    // pose
    let key = key_of(&[
        b"pose",
        keys["latents"].as_bytes(),
        &json(&(&cfg.pose, cfg.anchor_frame, &cfg.backends.pose, cfg.seed)),
    ]);
    let w_ref_pose: LatentWPlus = dir.stage(
        "pose",
        &key,
        |d| {
            let regressor = backends.perception.pose.as_ref();
            let anchor = cfg.anchor_frame;
            let target = match &aligned["driving"].frames {
                Some(frames) => regressor.regress(&frames[anchor])?,
                None => crate::pose::pose_of_frame(gen.as_ref(), regressor, &driving.frames()[anchor])?,
            };
            let out = match_pose(gen.as_ref(), regressor, &reference_code, &target, &cfg.pose)?;
            save_trajectory(&LatentTrajectory::single(out.code.clone(), "reference_pose"), &d.join("w_ref_pose.v2t"))?;
            let record = PoseRecord {
                anchor_frame: anchor,
                target: target.to_array(),
                achieved: out.pose.to_array(),
                residual: out.residual,
                steps: out.steps,
                trace: out.trace,
            };
            std::fs::write(d.join("pose.json"), serde_json::to_string_pretty(&record)? + "\n")?;
            Ok(())
        },
        |d| Ok(load_trajectory(&d.join("w_ref_pose.v2t"))?.frames()[0].clone()),
    )?;
    keys.insert("pose", key);

    // channels
    let catalog_digest = match &cfg.catalog {
        Some(p) => content_digest(p)?,
        None => String::new(),
    };
    let key = key_of(&[
        b"channels",
        gen.fingerprint().as_bytes(),
        &json(&(&cfg.mining, &cfg.backends.segmenter, cfg.seed)),
        catalog_digest.as_bytes(),
    ]);
    let catalog: ChannelCatalog = dir.stage(
        "channels",
        &key,
        |d| {
            let catalog = match &cfg.catalog {
                Some(p) => ChannelCatalog::load(p)?,
                None => {
                    let probes = random_probes(gen.layer_count(), cfg.mining.probe_count, cfg.seed);
                    mine_channels(gen.as_ref(), backends.perception.segmenter.as_ref(), &probes, &cfg.mining)?
                }
            };
            catalog.check_backend(gen.as_ref())?;
            catalog.save(&d.join("catalog.json"))
        },
        |d| ChannelCatalog::load(&d.join("catalog.json")),
    )?;
    keys.insert("channels", key);

    let driving_frames = match &data["driving"] {
        InputData::Frames(clip) => Some(clip.frames.clone()),
        InputData::Trajectory(..) => None,
    };
    let render_gen = backends.render_generator.clone();
    let reference_image = match &aligned["reference"].frames {
        Some(f) => f[0].clone(),
        None => render_gen.render(&wplus_to_style(render_gen.as_ref(), &reference_code)?, &InputTransform::identity())?,
    };
    Ok(PreparedSession {
        config: cfg.clone(),
        dir: dir.root().to_path_buf(),
        backends,
        reference_code,
        reference_image,
        w_ref_pose,
        driving_rigid: aligned["driving"].rigid.clone(),
        codriving_rigid: aligned.get("codriving").map(|a| a.rigid.clone()),
        driving,
        codriving,
        driving_frames,
        catalog,
        keys,
    })
}

/// Run the remaining stages on a prepared session.
pub fn finish_session(dir: &mut SessionDir, prepared: &PreparedSession) -> Result<SessionOutcome> {
    let cfg = &prepared.config;
    let coeffs = cfg.coefficients;

    let key = key_of(&[
        b"styles",
        prepared.keys["pose"].as_bytes(),
        prepared.keys["channels"].as_bytes(),
        &json(&(&coeffs, cfg.baseline)),
    ]);
    let styles = dir.stage(
        "styles",
        &key,
        |d| write_styles(&prepared.styles(&coeffs)?, &d.join("styles.json")),
        |d| read_styles(&d.join("styles.json")),
    )?;

    let key = key_of(&[b"frames", key.as_bytes(), prepared.backends.render_generator.fingerprint().as_bytes()]);
    let fps = prepared.fps();
    let (frames, video) = dir.stage(
        "frames",
        &key,
        |d| {
            let images = render_video(prepared.backends.render_generator.as_ref(), &styles, prepared.rigid_track(&coeffs)?)?;
            write_frames_dir(&images, fps, d)?;
            write_y4m(&images, fps, &d.join("video.y4m"))
        },
        |d| Ok((frame_files(d)?, d.join("video.y4m"))),
    )?;
    if let Some(out) = &cfg.output.video {
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        super::media::write_video_file(&video, fps, out)?;
    }

    let report = if cfg.evaluate {
        let key = key_of(&[b"metrics", key.as_bytes(), &json(&cfg.normalization)]);
        Some(dir.stage(
            "metrics",
            &key,
            |d| {
                let report = prepared.evaluate()?;
                std::fs::write(d.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
                Ok(())
            },
            |d| Ok(serde_json::from_slice::<EvalReport>(&std::fs::read(d.join("report.json"))?)?),
        )?)
    } else {
        None
    };
    Ok(SessionOutcome {
        dir: dir.root().to_path_buf(),
        frames,
        video,
        report,
    })
}

/// Validate, then run every stage, reusing up-to-date artifacts.
pub fn run_session(cfg: &SessionConfig) -> Result<SessionOutcome> {
    let (mut dir, prepared) = prepare_session(cfg)?;
    finish_session(&mut dir, &prepared)
}
