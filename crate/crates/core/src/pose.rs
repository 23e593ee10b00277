//! Pose matching on the coarse W+ layers of a reference code.
//!
//! Minimizes `Σ_k w_k (P_k(G(w)) − target_k)² + λ · mean|w − w₀|` over the
//! optimized layers, `w₀` being the initial code. The smooth pose term takes
//! gradient steps; the L1 term is applied by its proximal map
//! (soft-thresholding towards `w₀`). A step that raises the total loss is
//! retried at half the step size.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::generator::{style_pullback, wplus_to_style, Generator, InputTransform};
use crate::latent::LatentWPlus;
use crate::perception::{PoseAngles, PoseRegressor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseMatchConfig {
    pub optimized_layers: Range<usize>,
    /// Weight on the squared error of yaw, pitch and roll.
    pub pose_weight: [f64; 3],
    pub identity_weight: f64,
    pub max_steps: usize,
    pub step_size: f64,
    /// Stop once `‖pose − target‖₂` is at most this.
    pub tolerance: f64,
}

impl Default for PoseMatchConfig {
    fn default() -> Self {
        Self {
            optimized_layers: 0..8,
            pose_weight: [2.0; 3],
            identity_weight: 0.04,
            max_steps: 200,
            step_size: 1.0,
            tolerance: 1e-4,
        }
    }
}

const MAX_HALVINGS: usize = 40;

impl PoseMatchConfig {
    pub fn validate(&self, layer_count: usize) -> Result<()> {
        let r = &self.optimized_layers;
        if r.start >= r.end || r.end > layer_count {
            return Err(invalid(
                "optimized_layers",
                format!("{r:?} is empty or outside [0, {layer_count})"),
            ));
        }
        if self.pose_weight.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("pose_weight", "weights must be finite and ≥ 0"));
        }
        if !self.identity_weight.is_finite() || self.identity_weight < 0.0 {
            return Err(invalid("identity_weight", "must be finite and ≥ 0"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps", "must be at least 1"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(invalid("step_size", "must be positive"));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(invalid("tolerance", "must be finite and ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseMatchOutcome {
    pub code: LatentWPlus,
    pub pose: PoseAngles,
    pub residual: f64,
    pub steps: usize,
    /// Total loss after every accepted step, starting with the initial loss.
    pub trace: Vec<f64>,
}

/// Render `w` through `backend` and regress its pose.
pub fn pose_of_frame(backend: &dyn Generator, regressor: &dyn PoseRegressor, w: &LatentWPlus) -> Result<PoseAngles> {
    let s = wplus_to_style(backend, w)?;
    let image = backend.render(&s, &InputTransform::identity())?;
    regressor.regress(&image)
}

struct Objective<'a> {
    backend: &'a dyn Generator,
    regressor: &'a dyn PoseRegressor,
    target: [f64; 3],
    cfg: &'a PoseMatchConfig,
    initial: &'a LatentWPlus,
    count: f64,
}

struct Evaluation {
    pose: PoseAngles,
    total: f64,
}

impl Objective<'_> {
    fn identity_loss(&self, w: &LatentWPlus) -> f64 {
        if self.cfg.identity_weight == 0.0 {
            return 0.0;
        }
        self.cfg.identity_weight * w.l1_distance(self.initial, self.cfg.optimized_layers.clone()) / self.count
    }

    fn evaluate(&self, w: &LatentWPlus) -> Result<Evaluation> {
        let pose = pose_of_frame(self.backend, self.regressor, w)?;
        let p = pose.to_array();
        let pose_loss: f64 = (0..3).map(|k| self.cfg.pose_weight[k] * (p[k] - self.target[k]).powi(2)).sum();
        Ok(Evaluation {
            pose,
            total: pose_loss + self.identity_loss(w),
        })
    }

    /// Gradient of the pose term with respect to `w`.
    fn pose_gradient(&self, w: &LatentWPlus, pose: &PoseAngles) -> Result<LatentWPlus> {
        let p = pose.to_array();
        let mut g = [0.0; 3];
        for k in 0..3 {
            g[k] = 2.0 * self.cfg.pose_weight[k] * (p[k] - self.target[k]);
        }
        let s = wplus_to_style(self.backend, w)?;
        let xform = InputTransform::identity();
        let image = self.backend.render(&s, &xform)?;
        let d_image = self.regressor.pullback(&image, g)?;
        let ds = self.backend.style_vjp(&s, &xform, &d_image)?;
        style_pullback(self.backend, &ds)
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Optimize the coarse layers of `w_ref` so the rendered pose approaches
/// `target`. `backend` must be the original (not fine-tuned) generator.
pub fn match_pose(
    backend: &dyn Generator,
    regressor: &dyn PoseRegressor,
    w_ref: &LatentWPlus,
    target: &PoseAngles,
    cfg: &PoseMatchConfig,
) -> Result<PoseMatchOutcome> {
    cfg.validate(backend.layer_count())?;
    if !regressor.supports_gradients() {
        return Err(Error::Capability("pose matching needs a differentiable pose regressor".into()));
    }
    let obj = Objective {
        backend,
        regressor,
        target: target.to_array(),
        cfg,
        initial: w_ref,
        count: (cfg.optimized_layers.len() * crate::latent::LATENT_DIM) as f64,
    };
    let mut w = w_ref.clone();
    let mut eval = obj.evaluate(&w)?;
    let mut trace = vec![eval.total];
    if !eval.total.is_finite() {
        return Err(Error::Optimization {
            step: 0,
            message: "initial loss is not finite".into(),
            trace,
        });
    }
    let mut step = cfg.step_size;
    let mut steps = 0;
    while steps < cfg.max_steps && eval.pose.distance(target) > cfg.tolerance {
        let grad = obj.pose_gradient(&w, &eval.pose)?;
        let mut accepted = None;
        let mut rejected_invalid = false;
        for _ in 0..MAX_HALVINGS {
            let threshold = step * cfg.identity_weight / obj.count;
            let mut next = w.clone();
            for l in cfg.optimized_layers.clone() {
                let (cur, g, w0) = (w.layer(l), grad.layer(l), w_ref.layer(l));
                for (i, v) in next.layer_mut(l).iter_mut().enumerate() {
                    let z = cur[i] - step * g[i];
                    *v = w0[i] + soft_threshold(z - w0[i], threshold);
                }
            }
            let candidate = match obj.evaluate(&next) {
                Ok(e) => e,
                // Out-of-range poses from an overlong step count as a rise.
                Err(Error::Validation { .. }) => {
                    rejected_invalid = true;
                    step /= 2.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if !candidate.total.is_finite() {
                trace.push(candidate.total);
                return Err(Error::Optimization {
                    step: steps + 1,
                    message: "loss became non-finite".into(),
                    trace,
                });
            }
            rejected_invalid = false;
            if candidate.total <= eval.total {
                accepted = Some((next, candidate));
                break;
            }
            step /= 2.0;
        }
        if accepted.is_none() && rejected_invalid {
            return Err(Error::Optimization {
                step: steps + 1,
                message: "no step size yields a finite in-range pose".into(),
                trace,
            });
        }
        let Some((next, candidate)) = accepted else {
            log::debug!("pose match stalled after {steps} steps");
            break;
        };
        let moved = next.as_slice() != w.as_slice();
        w = next;
        eval = candidate;
        steps += 1;
        trace.push(eval.total);
        if !moved {
            break;
        }
    }
    let residual = eval.pose.distance(target);
    log::info!("pose match: {steps} steps, residual {residual:.3e}");
    Ok(PoseMatchOutcome {
        code: w,
        pose: eval.pose,
        residual,
        steps,
        trace,
    })
}
