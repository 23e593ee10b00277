//! End-to-end sessions: media ingestion, canonical alignment, projection,
//! pose matching, channel mining, blending, rendering and evaluation, with
//! every intermediate persisted for resumption.

pub mod align;
pub mod backends;
pub mod config;
pub mod demo;
pub mod media;
pub mod projector;
pub mod session;

pub use align::{canonical_align, warp_to_canonical, AlignOutcome};
pub use backends::{build_backends, build_perception, default_rigs, rigged_toy, SessionBackends};
pub use demo::{write_demo, Demo, DemoSpec};
pub use config::{Backends, BackendSelection, GeneratorSelection, InputSpec, MissPolicy, OutputConfig, ProjectorSelection, SessionConfig, CACHE_ENV};
pub use media::{ingest_video, read_y4m, write_frames_dir, write_video_file, write_y4m, Clip, FpsPolicy};
pub use projector::{ProjectorBackend, SyntheticProjector};
pub use session::{
    finish_session, prepare_session, read_styles, run_session, ClipReport, EvalReport, Manifest, PreparedSession, SessionDir,
    SessionOutcome, StageStatus,
};
