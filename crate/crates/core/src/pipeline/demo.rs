//! Self-contained toy sessions: a rigged toy checkpoint, a reference code,
//! a moving driving trajectory with a rigid track, and a config wiring them.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use super::config::{Backends, InputSpec, SessionConfig};
use super::media::write_frames_dir;
use super::backends::rigged_toy;
use crate::container::save_trajectory;
use crate::error::Result;
use crate::generator::{save_toy_checkpoint, wplus_to_style, Generator, GeneratorSpec, InputTransform};
use crate::latent::{LatentTrajectory, LatentWPlus, RigidParams};
use crate::mining::random_probes;
use crate::rigid::RigidTrack;

#[derive(Clone, Debug)]
pub struct DemoSpec {
    pub generator: GeneratorSpec,
    pub frames: usize,
    pub fps: f64,
    /// Scale of the driving motion in latent units.
    pub motion: f64,
    /// Amplitude of the driving rigid motion (fraction of the frame).
    pub rigid: f64,
    /// Write the driving clip as rendered frames instead of a trajectory.
    pub driving_as_frames: bool,
    /// Make the clip read the same backwards (frame `j` equals `n − 1 − j`).
    pub palindrome: bool,
    pub seed: u64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            generator: GeneratorSpec {
                layer_count: 16,
                channel_widths: vec![8; 16],
                image_size: 32,
                frequency_count: 32,
                seed: 7,
            },
            frames: 12,
            fps: 30.0,
            motion: 0.6,
            rigid: 0.04,
            driving_as_frames: false,
            palindrome: false,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Demo {
    pub config: SessionConfig,
    pub checkpoint: PathBuf,
    pub reference: LatentWPlus,
    pub driving: LatentTrajectory,
    pub rigid: RigidTrack,
}

fn combine(base: &LatentWPlus, terms: &[(f64, &LatentWPlus)]) -> LatentWPlus {
    let mut out = base.clone();
    for l in 0..out.layer_count() {
        let dst = out.layer_mut(l);
        for (k, v) in terms {
            for (d, x) in dst.iter_mut().zip(v.layer(l)) {
                *d += k * x;
            }
        }
        for d in dst.iter_mut() {
            *d = *d as f32 as f64;
        }
    }
    out
}

/// Driving codes `w_j = w_0 + m·(sin(2πj/n)·d₁ + (j/n)·d₂)` and a rigid
/// track that sways and turns slightly.
pub fn demo_motion(spec: &DemoSpec) -> Result<(LatentWPlus, LatentTrajectory, RigidTrack)> {
    let l = spec.generator.layer_count;
    let codes = random_probes(l, 4, spec.seed);
    let (reference, start, d1, d2) = (&codes[0], &codes[1], &codes[2], &codes[3]);
    let n = spec.frames as f64;
    let step = |j: usize| if spec.palindrome { j.min(spec.frames - 1 - j) } else { j };
    let frames = (0..spec.frames)
        .map(|j| {
            let t = step(j) as f64 / n;
            combine(start, &[(spec.motion * (2.0 * PI * t).sin(), d1), (spec.motion * t, d2)])
        })
        .collect();
    let driving = LatentTrajectory::new(frames, "driving", spec.fps)?;
    let params = (0..spec.frames)
        .map(|j| {
            let t = 2.0 * PI * step(j) as f64 / n;
            RigidParams::new(spec.rigid * t.sin(), 0.5 * spec.rigid * t.cos() - 0.5 * spec.rigid, 2.0 * spec.rigid * t.sin())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((reference.clone(), driving, RigidTrack::new(params, spec.fps)?))
}

/// Write a demo session's inputs under `dir` and return its config, with
/// the session directory at `dir/session`.
pub fn write_demo(dir: &Path, spec: &DemoSpec) -> Result<Demo> {
    std::fs::create_dir_all(dir)?;
    let toy = rigged_toy(spec.generator.clone())?;
    let checkpoint = dir.join("toy.v2g");
    save_toy_checkpoint(&toy, &checkpoint)?;
    let (reference, driving, rigid) = demo_motion(spec)?;

    save_trajectory(&LatentTrajectory::single(reference.clone(), "reference"), &dir.join("reference.v2t"))?;
    save_trajectory(&driving, &dir.join("driving.v2t"))?;
    std::fs::write(dir.join("driving_rigid.json"), rigid.to_json()?)?;
    let mut known = vec![reference.clone()];
    known.extend(driving.frames().iter().cloned());
    save_trajectory(&LatentTrajectory::new(known, "registry", spec.fps)?, &dir.join("registry.v2t"))?;

    let driving_input = if spec.driving_as_frames {
        let frames = driving
            .frames()
            .iter()
            .map(|w| toy.render(&wplus_to_style(&toy, w)?, &InputTransform::identity()))
            .collect::<Result<Vec<_>>>()?;
        write_frames_dir(&frames, spec.fps, &dir.join("driving_frames"))?;
        InputSpec {
            path: dir.join("driving_frames"),
            align: false,
            rigid_track: None,
        }
    } else {
        InputSpec {
            path: dir.join("driving.v2t"),
            align: false,
            rigid_track: Some(dir.join("driving_rigid.json")),
        }
    };
    let mut backends = Backends::toy(&checkpoint);
    backends.projector.checkpoint = Some(dir.join("registry.v2t"));
    let mut config = SessionConfig::new(
        InputSpec {
            path: dir.join("reference.v2t"),
            align: false,
            rigid_track: None,
        },
        driving_input,
        backends,
        dir.join("session"),
    );
    config.seed = spec.seed;
    config.mining.probe_count = 8;
    std::fs::write(dir.join("session.json"), config.to_json()?)?;
    Ok(Demo {
        config,
        checkpoint,
        reference,
        driving,
        rigid,
    })
}
