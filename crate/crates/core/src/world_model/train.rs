use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::actions::{Dataset, TrainingTuple};
use crate::codec::{self, FloatVideo, LatentVideo};
use crate::exec::{stream_rng, Exec};
use crate::objectives::flow::estimate_flow_with;
use crate::objectives::{self, FlowConfig, FlowField, LossParts, LossWeights, NoiseSchedule};

use super::predictor::{backward_x0, forward_x0, Cond, Conditioning, PredictorConfig, PredictorParams};
use super::WorldModelError;

/// Scales between codec latents and model space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentScales {
    /// Video latents are divided by this before diffusion.
    pub video: f64,
    /// Mask latents are divided by this before entering the control branch.
    pub mask: f64,
}

impl Default for LatentScales {
    fn default() -> Self {
        Self { video: 2.0, mask: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient-norm clip per step; 0 disables it.
    pub grad_clip: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Steps of the cosine noise schedule.
    pub tau_max: usize,
    pub model: PredictorConfig,
    pub flow: FlowConfig,
    pub scales: LatentScales,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            learning_rate: 0.05,
            momentum: 0.9,
            grad_clip: 5.0,
            weights: LossWeights::default(),
            seed: 0,
            tau_max: 1000,
            model: PredictorConfig::default(),
            flow: FlowConfig::default(),
            scales: LatentScales::default(),
        }
    }
}

impl TrainConfig {
    /// Settings for the bundled toy dataset: five frames give two latent
    /// frames, so the dynamics loss can only use offset 1.
    pub fn toy() -> Self {
        Self {
            weights: LossWeights { k: 1, ..LossWeights::default() },
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule::cosine(self.tau_max)
    }

    pub fn validate(&self) -> Result<(), WorldModelError> {
        let bad = |m: &str| Err(WorldModelError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.tau_max == 0 {
            return bad("tau_max must be positive");
        }
        if self.model.blocks == 0 || self.model.width == 0 {
            return bad("model needs at least one block and positive width");
        }
        if !(self.scales.video > 0.0 && self.scales.mask > 0.0) {
            return bad("latent scales must be positive");
        }
        self.weights.validate().map_err(|e| WorldModelError::Config(e.to_string()))
    }
}

/// One tuple in model space.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub z0: LatentVideo,
    pub z_init: LatentVideo,
    pub mask: LatentVideo,
    pub actions: Vec<f64>,
    /// Flow of the codec reconstruction of the true video.
    pub flow: Option<FlowField>,
}

impl Prepared {
    pub fn cond(&self, kind: Conditioning) -> Cond<'_> {
        match kind {
            Conditioning::Mask => Cond::Mask(&self.mask),
            Conditioning::Coordinates { .. } => Cond::Coordinates(&self.actions),
            Conditioning::None => Cond::None,
        }
    }
}

pub fn scale(z: &LatentVideo, s: f64) -> LatentVideo {
    LatentVideo {
        data: z.data.iter().map(|v| v / s).collect(),
        ..z.clone()
    }
}

/// Flattened action rows: the coordinate-vector conditioning input.
pub fn action_vector(t: &TrainingTuple) -> Result<Vec<f64>, WorldModelError> {
    Ok(t.actions.to_rows()?.concat())
}

/// Encodes the conditioning for a tuple.
pub fn prepare(t: &TrainingTuple, cfg: &TrainConfig, with_flow: bool) -> Result<Prepared, WorldModelError> {
    let z = codec::encode_rgb(&t.video)?;
    let z_init = z.slice_frames(0, 1);
    let mask = codec::encode_masks(&t.masks)?;
    let flow = if with_flow {
        let recon = codec::decode_with(Exec::Sequential, &z)?;
        Some(estimate_flow_with(Exec::Sequential, &recon, &cfg.flow)?)
    } else {
        None
    };
    Ok(Prepared {
        z0: scale(&z, cfg.scales.video),
        z_init: scale(&z_init, cfg.scales.video),
        mask: scale(&mask, cfg.scales.mask),
        actions: action_vector(t)?,
        flow,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub diff: f64,
    pub dyn_: f64,
    pub flow: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossLog {
    pub epochs: Vec<EpochLoss>,
}

impl LossLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,diff,dyn,flow,total")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{},{}", e.epoch, e.diff, e.dyn_, e.flow, e.total)?;
        }
        Ok(())
    }
}

struct SampleResult {
    parts: LossParts,
    grad: PredictorParams,
}

fn sample_step(
    params: &PredictorParams,
    p: &Prepared,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    epoch: usize,
    rng: &mut impl Rng,
) -> Result<SampleResult, WorldModelError> {
    let tau = rng.random_range(0..schedule.len());
    let alpha = schedule.alpha(tau);
    let eps: Vec<f64> = (0..p.z0.data.len()).map(|_| rng.sample(StandardNormal)).collect();
    let zt = LatentVideo {
        data: objectives::noising_slice(&p.z0.data, &eps, alpha)?,
        ..p.z0.clone()
    };
    let (x0, cache) = forward_x0(params, &p.z_init, p.cond(params.config.conditioning), &zt, alpha)?;
    let n = x0.data.len() as f64;
    // with the x̂0 head the reconstruction residual is z0 − x̂0; α = 1 leaves
    // the velocity without effect and the loss at zero
    let mut grad = LatentVideo { data: vec![0.0; x0.data.len()], ..x0.clone() };
    let mut diff = 0.0;
    if alpha < 1.0 {
        for i in 0..x0.data.len() {
            let r = p.z0.data[i] - x0.data[i];
            diff += r * r;
            grad.data[i] = -2.0 * r / n;
        }
        diff /= n;
    }
    let w = &cfg.weights;
    let (dyn_, dgrad) = objectives::dynamics_loss(&x0, &p.z0, w.k)?;
    for (g, d) in grad.data.iter_mut().zip(&dgrad.data) {
        *g += w.lambda_dyn * d;
    }
    let lf = objectives::flow_lambda(epoch, w);
    let mut flow = 0.0;
    if let (true, Some(true_flow)) = (lf > 0.0, p.flow.as_ref()) {
        let raw = scale(&x0, 1.0 / cfg.scales.video);
        let video: FloatVideo = codec::decode_with(Exec::Sequential, &raw)?;
        let fl = objectives::flow_loss_given(&video, true_flow, &cfg.flow)?;
        flow = fl.value;
        let back = codec::decode_adjoint(Exec::Sequential, &fl.grad)?;
        for (g, b) in grad.data.iter_mut().zip(&back.data) {
            *g += lf * b * cfg.scales.video;
        }
    }
    let parts = LossParts { diff, dyn_, flow };
    Ok(SampleResult {
        parts,
        grad: backward_x0(params, &cache, &grad),
    })
}

/// Trains from a fixed seed with momentum SGD. Sample `j` of epoch `e` draws
/// its noise from stream `e·N + j`, and per-sample gradients are summed in
/// batch order, so the result does not depend on `exec`.
pub fn train(exec: Exec, tuples: &[&TrainingTuple], cfg: &TrainConfig) -> Result<(PredictorParams, LossLog), WorldModelError> {
    cfg.validate()?;
    if tuples.is_empty() {
        return Err(WorldModelError::Config("training set is empty".into()));
    }
    let first = &tuples[0];
    if let Some(bad) = tuples.iter().find(|t| {
        t.video.len() != first.video.len()
            || t.video.frames[0].width != first.video.frames[0].width
            || t.video.frames[0].height != first.video.frames[0].height
            || t.actions.manipulators() != first.actions.manipulators()
    }) {
        return Err(WorldModelError::Shape(format!("tuple {} differs in shape from tuple {}", bad.id, first.id)));
    }
    let mut model = cfg.model;
    if let Conditioning::Coordinates { .. } = model.conditioning {
        model.conditioning = Conditioning::Coordinates { dim: action_vector(first)?.len() };
    }
    let with_flow = cfg.weights.lambda_flow_star > 0.0 && cfg.weights.e_switch < cfg.epochs;
    let prepared = exec.try_map(tuples, |t| prepare(t, cfg, with_flow))?;
    let t_lat = prepared[0].z0.t;
    if t_lat <= cfg.weights.k {
        return Err(WorldModelError::Config(format!(
            "dynamics offset K = {} needs more than {} latent frames",
            cfg.weights.k, t_lat
        )));
    }
    let schedule = cfg.schedule();
    let mut init_rng = stream_rng(cfg.seed, u64::MAX);
    let mut params = PredictorParams::init(model, &mut init_rng);
    let mut velocity = params.zeros_like();
    let mut log = LossLog::default();
    let n = prepared.len();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(cfg.seed, u64::MAX - 1 - epoch as u64));
        let mut sums = LossParts::default();
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let base = (epoch * n + step * cfg.batch_size) as u64;
            let results = exec.try_map_range(batch.len(), |j| {
                let mut rng = stream_rng(cfg.seed, base + j as u64);
                sample_step(&params, &prepared[batch[j]], cfg, &schedule, epoch, &mut rng)
            })?;
            let mut grad = params.zeros_like();
            for r in &results {
                for (g, d) in grad.iter_mut().zip(r.grad.iter()) {
                    *g += d / batch.len() as f64;
                }
                sums.diff += r.parts.diff;
                sums.dyn_ += r.parts.dyn_;
                sums.flow += r.parts.flow;
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(WorldModelError::NonFiniteLoss { epoch, step });
            }
            let clip = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip { cfg.grad_clip / norm } else { 1.0 };
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad.iter()) {
                *v = cfg.momentum * *v + clip * g;
                *p -= cfg.learning_rate * *v;
            }
        }
        let mean = LossParts {
            diff: sums.diff / n as f64,
            dyn_: sums.dyn_ / n as f64,
            flow: sums.flow / n as f64,
        };
        let total = objectives::total_loss(mean, &cfg.weights, epoch)
            .map_err(|_| WorldModelError::NonFiniteLoss { epoch, step: order.len().div_ceil(cfg.batch_size) })?;
        log.epochs.push(EpochLoss {
            epoch,
            diff: mean.diff,
            dyn_: mean.dyn_,
            flow: mean.flow,
            total,
        });
    }
    Ok((params, log))
}

/// First `train` tuples for training, the rest held out.
pub fn split(data: &Dataset, holdout: usize) -> (Vec<&TrainingTuple>, Vec<&TrainingTuple>) {
    let cut = data.tuples.len().saturating_sub(holdout);
    (data.tuples[..cut].iter().collect(), data.tuples[cut..].iter().collect())
}
