//! A prepared session held open for interactive use.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::{OwnedSemaphorePermit, Semaphore};

use reenact_core::blend::LOCAL_LAYERS;
use reenact_core::latent::{BlendCoefficients, MotionSource, SChannelAddress};
use reenact_core::mining::ChannelCatalog;
use reenact_core::perception::PartLabel;
use reenact_core::pipeline::{prepare_session, PreparedSession, SessionConfig, SessionDir};

use crate::error::{ApiError, ApiResult};

/// Mutable part of a live session.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LiveState {
    pub coefficients: BlendCoefficients,
    pub overrides: BTreeMap<SChannelAddress, f64>,
}

/// Body of `PATCH /sessions/{id}/params`. Absent fields keep their value.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsPatch {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub zeta: Option<f64>,
    pub use_rigid: Option<bool>,
    pub use_pose: Option<bool>,
    pub use_local: Option<bool>,
    pub rigid_source: Option<MotionSource>,
    pub pose_source: Option<MotionSource>,
    pub local_source: Option<MotionSource>,
}

/// Body of `PUT /sessions/{id}/overrides`; a null value clears the override.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideRequest {
    pub layer: usize,
    pub channel: usize,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverrideEntry {
    pub layer: usize,
    pub channel: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: String,
    pub status: String,
    pub frame_count: usize,
    pub fps: f64,
    pub image_size: usize,
    pub has_codriving: bool,
    pub catalog_size: usize,
    pub dir: String,
    pub coefficients: BlendCoefficients,
    pub overrides: Vec<OverrideEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerValues {
    pub layer: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogValue {
    pub layer: usize,
    pub channel: usize,
    pub part: PartLabel,
    pub value: f64,
    pub overridden: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLatents {
    pub frame: usize,
    pub layers: Vec<LayerValues>,
    pub catalog: Vec<CatalogValue>,
}

pub struct LiveSession {
    id: String,
    prepared: Arc<PreparedSession>,
    state: Mutex<LiveState>,
    render_slot: Arc<Semaphore>,
    // Holds the session directory lock for as long as the session is open.
    _dir: SessionDir,
}

impl LiveSession {
    /// Run (or reuse) every stage up to the catalog and hold the result.
    pub fn open(id: String, cfg: &SessionConfig) -> reenact_core::Result<Self> {
        let (dir, prepared) = prepare_session(cfg)?;
        let state = LiveState {
            coefficients: prepared.config.coefficients,
            overrides: BTreeMap::new(),
        };
        Ok(Self {
            id,
            prepared: Arc::new(prepared),
            state: Mutex::new(state),
            render_slot: Arc::new(Semaphore::new(1)),
            _dir: dir,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn prepared(&self) -> &Arc<PreparedSession> {
        &self.prepared
    }

    pub fn catalog(&self) -> &ChannelCatalog {
        &self.prepared.catalog
    }

    pub fn snapshot(&self) -> LiveState {
        self.state.lock().expect("state lock").clone()
    }

    pub fn status(&self) -> SessionStatus {
        let s = self.snapshot();
        let p = &self.prepared;
        SessionStatus {
            id: self.id.clone(),
            status: "ready".into(),
            frame_count: p.frame_count(),
            fps: p.fps(),
            image_size: p.backends.generator.image_size(),
            has_codriving: p.codriving.is_some(),
            catalog_size: p.catalog.entries.len(),
            dir: p.dir.display().to_string(),
            coefficients: s.coefficients,
            overrides: override_list(&s.overrides),
        }
    }

    fn check_source(&self, field: &str, source: MotionSource) -> ApiResult<()> {
        if source == MotionSource::Codriving && self.prepared.codriving.is_none() {
            return Err(ApiError::validation(field, "this session has no co-driving clip"));
        }
        Ok(())
    }

    pub fn apply_patch(&self, patch: &ParamsPatch) -> ApiResult<LiveState> {
        let mut state = self.state.lock().expect("state lock");
        let mut c = state.coefficients;
        c.alpha = patch.alpha.unwrap_or(c.alpha);
        c.beta = patch.beta.unwrap_or(c.beta);
        c.gamma = patch.gamma.unwrap_or(c.gamma);
        c.zeta = patch.zeta.unwrap_or(c.zeta);
        c.use_rigid = patch.use_rigid.unwrap_or(c.use_rigid);
        c.use_pose = patch.use_pose.unwrap_or(c.use_pose);
        c.use_local = patch.use_local.unwrap_or(c.use_local);
        c.rigid_source = patch.rigid_source.unwrap_or(c.rigid_source);
        c.pose_source = patch.pose_source.unwrap_or(c.pose_source);
        c.local_source = patch.local_source.unwrap_or(c.local_source);
        c.validate()?;
        self.check_source("rigid_source", c.effective_rigid())?;
        self.check_source("pose_source", c.effective_pose())?;
        self.check_source("local_source", c.effective_local())?;
        state.coefficients = c;
        Ok(state.clone())
    }

    pub fn set_override(&self, req: &OverrideRequest) -> ApiResult<LiveState> {
        let addr = SChannelAddress::new(req.layer, req.channel);
        self.prepared.backends.generator.layout().check(addr)?;
        let mut state = self.state.lock().expect("state lock");
        match req.value {
            Some(v) if !v.is_finite() => return Err(ApiError::validation("value", "must be finite")),
            Some(v) => {
                state.overrides.insert(addr, v);
            }
            None => {
                state.overrides.remove(&addr);
            }
        }
        Ok(state.clone())
    }

    /// Wait up to `wait` for the session's single render slot.
    pub async fn acquire_render(&self, wait: Duration, retry_after_ms: u64) -> ApiResult<OwnedSemaphorePermit> {
        match tokio::time::timeout(wait, self.render_slot.clone().acquire_owned()).await {
            Ok(Ok(permit)) => Ok(permit),
            Ok(Err(_)) => Err(ApiError::internal("render slot closed")),
            Err(_) => Err(ApiError::busy(retry_after_ms)),
        }
    }

    /// Wait for the render slot without a deadline (background jobs).
    pub async fn acquire_render_queued(&self) -> ApiResult<OwnedSemaphorePermit> {
        self.render_slot
            .clone()
            .acquire_owned()
            .await
            .map_err(|_| ApiError::internal("render slot closed"))
    }

    /// Take the render slot if it is free.
    pub fn try_hold_render(&self) -> Option<OwnedSemaphorePermit> {
        self.render_slot.clone().try_acquire_owned().ok()
    }

    pub fn latents(&self, state: &LiveState, frame: usize) -> ApiResult<FrameLatents> {
        let style = self.prepared.frame_style(&state.coefficients, &state.overrides, frame)?;
        let layers = LOCAL_LAYERS
            .filter(|l| *l < style.layout().layer_count())
            .map(|l| LayerValues {
                layer: l,
                values: style.layer(l).map(<[f64]>::to_vec).unwrap_or_default(),
            })
            .collect();
        let catalog = self
            .prepared
            .catalog
            .entries
            .iter()
            .map(|e| {
                let addr = e.address();
                CatalogValue {
                    layer: e.layer,
                    channel: e.channel,
                    part: e.part,
                    value: style.get(addr).unwrap_or(f64::NAN),
                    overridden: state.overrides.contains_key(&addr),
                }
            })
            .collect();
        Ok(FrameLatents { frame, layers, catalog })
    }
}

pub fn override_list(overrides: &BTreeMap<SChannelAddress, f64>) -> Vec<OverrideEntry> {
    overrides
        .iter()
        .map(|(a, v)| OverrideEntry {
            layer: a.layer,
            channel: a.channel,
            value: *v,
        })
        .collect()
}
