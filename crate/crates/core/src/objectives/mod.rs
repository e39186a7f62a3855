//! Training objectives: noise schedule, forward noising, velocity targets and
//! the diffusion, dynamics-consistency and flow losses.
//!
//! Norms are means over entries. Every loss returns its gradient alongside
//! the value.

pub mod flow;

use serde::{Deserialize, Serialize};

use crate::codec::LatentVideo;

pub use flow::{estimate_flow, flow_loss, flow_loss_given, FlowConfig, FlowField, FlowLoss};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ObjectiveError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("offset K = {k} needs more than {k} latent frames, got {frames}")]
    KTooLarge { k: usize, frames: usize },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("flow file: {0}")]
    Format(String),
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<(), ObjectiveError> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(ObjectiveError::Shape(format!("{what}: {} vs {} entries", a.len(), b.len())))
    }
}

fn check_shapes(a: &LatentVideo, b: &LatentVideo, what: &str) -> Result<(), ObjectiveError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(ObjectiveError::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn check_alpha(alpha: f64) -> Result<(), ObjectiveError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(ObjectiveError::Shape(format!("alpha {alpha} outside [0, 1]")))
    }
}

/// Cumulative signal coefficients `α_τ` for `τ = 0..τ_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub alphas: Vec<f64>,
}

impl NoiseSchedule {
    /// Cosine schedule with offset 0.008.
    pub fn cosine(tau_max: usize) -> Self {
        let s = 0.008;
        let f = |t: f64| ((t + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let f0 = f(0.0);
        let alphas = (0..tau_max)
            .map(|tau| (f(tau as f64 / tau_max as f64) / f0).clamp(1e-12, 1.0))
            .collect();
        Self { alphas }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alpha(&self, tau: usize) -> f64 {
        self.alphas[tau]
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |m: String| Err(ObjectiveError::Shape(m));
        match self.alphas.first() {
            None => return bad("empty noise schedule".into()),
            Some(&a) if a < 0.999 => return bad(format!("alphas[0] = {a} < 0.999")),
            _ => {}
        }
        if self.alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return bad("alphas must lie in (0, 1]".into());
        }
        if self.alphas.windows(2).any(|w| w[1] > w[0]) {
            return bad("alphas must be non-increasing".into());
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::cosine(1000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_dyn: f64,
    pub lambda_flow_star: f64,
    pub e_switch: usize,
    pub k: usize,
    pub huber_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dyn: 0.1,
            lambda_flow_star: 0.05,
            e_switch: 5,
            k: 4,
            huber_delta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if self.lambda_dyn < 0.0 || self.lambda_flow_star < 0.0 || self.huber_delta < 0.0 {
            return Err(ObjectiveError::Shape("loss weights must be non-negative".into()));
        }
        if self.k == 0 {
            return Err(ObjectiveError::Shape("K must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn noising_slice(z0: &[f64], eps: &[f64], alpha: f64) -> Result<Vec<f64>, ObjectiveError> {
    same_len(z0, eps, "noising")?;
    check_alpha(alpha)?;
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect())
}

pub fn velocity_target_slice(z0: &[f64], eps: &[f64], alpha: f64) -> Result<Vec<f64>, ObjectiveError> {
    same_len(z0, eps, "velocity target")?;
    check_alpha(alpha)?;
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| a * e - b * z).collect())
}

/// `√α z̃ − √(1−α) v`: the clean latent implied by a velocity.
pub fn reconstruct_slice(z_tilde: &[f64], v: &[f64], alpha: f64) -> Result<Vec<f64>, ObjectiveError> {
    same_len(z_tilde, v, "reconstruct")?;
    check_alpha(alpha)?;
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    Ok(z_tilde.iter().zip(v).map(|(z, v)| a * z - b * v).collect())
}

/// The noise implied by a velocity: `√(1−α) z̃ + √α v`.
pub fn implied_noise_slice(z_tilde: &[f64], v: &[f64], alpha: f64) -> Result<Vec<f64>, ObjectiveError> {
    same_len(z_tilde, v, "implied noise")?;
    check_alpha(alpha)?;
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    Ok(z_tilde.iter().zip(v).map(|(z, v)| b * z + a * v).collect())
}

fn like(template: &LatentVideo, data: Vec<f64>) -> LatentVideo {
    LatentVideo { data, ..template.clone() }
}

pub fn noising(z0: &LatentVideo, eps: &LatentVideo, alpha: f64) -> Result<LatentVideo, ObjectiveError> {
    check_shapes(z0, eps, "noising")?;
    Ok(like(z0, noising_slice(&z0.data, &eps.data, alpha)?))
}

pub fn velocity_target(z0: &LatentVideo, eps: &LatentVideo, alpha: f64) -> Result<LatentVideo, ObjectiveError> {
    check_shapes(z0, eps, "velocity target")?;
    Ok(like(z0, velocity_target_slice(&z0.data, &eps.data, alpha)?))
}

pub fn reconstruct(z_tilde: &LatentVideo, v: &LatentVideo, alpha: f64) -> Result<LatentVideo, ObjectiveError> {
    check_shapes(z_tilde, v, "reconstruct")?;
    Ok(like(z_tilde, reconstruct_slice(&z_tilde.data, &v.data, alpha)?))
}

/// Mean squared reconstruction residual and its gradient with respect to `v_pred`.
pub fn diffusion_loss_slice(z0: &[f64], z_tilde: &[f64], v_pred: &[f64], alpha: f64) -> Result<(f64, Vec<f64>), ObjectiveError> {
    same_len(z0, z_tilde, "diffusion loss")?;
    same_len(z0, v_pred, "diffusion loss")?;
    check_alpha(alpha)?;
    if z0.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    let n = z0.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(z0.len());
    for i in 0..z0.len() {
        let r = z0[i] - (a * z_tilde[i] - b * v_pred[i]);
        loss += r * r;
        grad.push(2.0 * r * b / n);
    }
    Ok((loss / n, grad))
}

pub fn diffusion_loss(
    z0: &LatentVideo,
    z_tilde: &LatentVideo,
    v_pred: &LatentVideo,
    alpha: f64,
) -> Result<(f64, LatentVideo), ObjectiveError> {
    check_shapes(z0, z_tilde, "diffusion loss")?;
    check_shapes(z0, v_pred, "diffusion loss")?;
    let (l, g) = diffusion_loss_slice(&z0.data, &z_tilde.data, &v_pred.data, alpha)?;
    Ok((l, like(v_pred, g)))
}

/// Multi-offset temporal-difference loss on frame-major data with
/// `frame_len` entries per frame. Returns the value and the gradient with
/// respect to `pred`.
pub fn dynamics_loss_slice(pred: &[f64], truth: &[f64], frame_len: usize, k: usize) -> Result<(f64, Vec<f64>), ObjectiveError> {
    same_len(pred, truth, "dynamics loss")?;
    if frame_len == 0 || !pred.len().is_multiple_of(frame_len) {
        return Err(ObjectiveError::Shape(format!("{} entries is not a whole number of frames", pred.len())));
    }
    let frames = pred.len() / frame_len;
    if k == 0 || frames <= k {
        return Err(ObjectiveError::KTooLarge { k, frames });
    }
    let n = frame_len as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for j in 1..=k {
        let w = 1.0 / (frames - j) as f64;
        for t in 0..frames - j {
            let (a, b) = (t * frame_len, (t + j) * frame_len);
            let mut term = 0.0;
            for e in 0..frame_len {
                let d = (pred[b + e] - pred[a + e]) - (truth[b + e] - truth[a + e]);
                term += d * d;
                let g = 2.0 * w * d / n;
                grad[b + e] += g;
                grad[a + e] -= g;
            }
            loss += w * term / n;
        }
    }
    Ok((loss, grad))
}

pub fn dynamics_loss(z_pred: &LatentVideo, z_true: &LatentVideo, k: usize) -> Result<(f64, LatentVideo), ObjectiveError> {
    check_shapes(z_pred, z_true, "dynamics loss")?;
    let (l, g) = dynamics_loss_slice(&z_pred.data, &z_true.data, z_pred.frame_len(), k)?;
    Ok((l, like(z_pred, g)))
}

pub fn flow_lambda(epoch: usize, weights: &LossWeights) -> f64 {
    if epoch < weights.e_switch {
        0.0
    } else {
        weights.lambda_flow_star
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub diff: f64,
    pub dyn_: f64,
    pub flow: f64,
}

pub fn total_loss(parts: LossParts, weights: &LossWeights, epoch: usize) -> Result<f64, ObjectiveError> {
    for (name, v) in [("diff", parts.diff), ("dyn", parts.dyn_), ("flow", parts.flow)] {
        if !v.is_finite() {
            return Err(ObjectiveError::NonFiniteLoss(format!("{name} = {v}")));
        }
    }
    // auxiliary terms summed first: 1 + (0.1 + 0.05) is exactly 1.15
    Ok(parts.diff + (weights.lambda_dyn * parts.dyn_ + flow_lambda(epoch, weights) * parts.flow))
}

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}
