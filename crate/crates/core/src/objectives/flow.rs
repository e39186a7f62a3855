//! Frozen block-matching flow estimator and the flow loss.
//!
//! Flow at pixel `x` of pair `t` is the integer displacement `d` with
//! `frame[t+1](x + d) ≈ frame[t](x)`, constant over each 8×8 block of the
//! finest level.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::codec::{FloatVideo, SIGNAL_SCALE};
use crate::exec::Exec;

use super::{huber, huber_grad, ObjectiveError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub levels: usize,
    pub block: usize,
    pub radius: i32,
    /// Pixels whose true flow is at most this long are outside the motion region.
    pub motion_threshold: f64,
    pub huber_delta: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            block: 8,
            radius: 4,
            motion_threshold: 0.5,
            huber_delta: 1.0,
        }
    }
}

impl FlowConfig {
    /// Largest displacement the estimator can return along either axis.
    pub fn max_displacement(&self) -> i32 {
        self.radius * ((1 << self.levels) - 1)
    }
}

/// `pairs × height × width` displacements `(u, v)` in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub pairs: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FlowField {
    pub fn at(&self, t: usize, y: usize, x: usize) -> (f64, f64) {
        let i = ((t * self.height + y) * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    /// Header of three little-endian u32 `{pairs, height, width}`, then
    /// `f32` `(u, v)` pairs row-major.
    pub fn write_flo<W: Write>(&self, mut w: W) -> Result<(), ObjectiveError> {
        let io = |e: std::io::Error| ObjectiveError::Format(e.to_string());
        for d in [self.pairs, self.height, self.width] {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        let bytes: Vec<u8> = self.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        w.write_all(&bytes).map_err(io)
    }

    pub fn read_flo<R: Read>(mut r: R) -> Result<Self, ObjectiveError> {
        let io = |e: std::io::Error| ObjectiveError::Format(e.to_string());
        let mut header = [0u8; 12];
        r.read_exact(&mut header).map_err(io)?;
        let d: Vec<usize> = header
            .chunks(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(io)?;
        let n = d[0] * d[1] * d[2] * 2;
        if payload.len() != n * 4 {
            return Err(ObjectiveError::Format(format!("payload is {} bytes, expected {}", payload.len(), n * 4)));
        }
        Ok(Self {
            pairs: d[0],
            height: d[1],
            width: d[2],
            data: payload
                .chunks(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
        })
    }
}

struct Gray {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Gray {
    fn from_frame(frame: &[f64], w: usize, h: usize) -> Self {
        let px = frame
            .chunks(3)
            .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
            .collect();
        Self { w, h, px }
    }

    fn half(&self) -> Self {
        let (w, h) = ((self.w / 2).max(1), (self.h / 2).max(1));
        let mut px = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    acc += self.get((2 * x + dx) as i64, (2 * y + dy) as i64);
                }
                px[y * w + x] = acc / 4.0;
            }
        }
        Self { w, h, px }
    }

    /// Clamp-to-edge sampling.
    fn get(&self, x: i64, y: i64) -> f64 {
        let x = x.clamp(0, self.w as i64 - 1) as usize;
        let y = y.clamp(0, self.h as i64 - 1) as usize;
        self.px[y * self.w + x]
    }
}

/// Best displacement for one block, searched around `prior`; ties go to the
/// shortest displacement, then to the smaller `(dy, dx)`.
fn match_block(a: &Gray, b: &Gray, x0: usize, y0: usize, block: usize, prior: (i32, i32), radius: i32) -> (i32, i32) {
    let (x1, y1) = ((x0 + block).min(a.w), (y0 + block).min(a.h));
    let mut best = (f64::INFINITY, i64::MAX, (0, 0));
    for dy in prior.1 - radius..=prior.1 + radius {
        for dx in prior.0 - radius..=prior.0 + radius {
            let mut sad = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sad += (b.get(x as i64 + dx as i64, y as i64 + dy as i64) - a.px[y * a.w + x]).abs();
                }
            }
            let len = (dx as i64).pow(2) + (dy as i64).pow(2);
            let key = (sad, len, (dy, dx));
            if key.0 < best.0 || (key.0 == best.0 && (key.1, key.2) < (best.1, best.2)) {
                best = key;
            }
        }
    }
    (best.2 .1, best.2 .0)
}

fn pair_flow(a: &Gray, b: &Gray, cfg: &FlowConfig) -> Vec<(i32, i32)> {
    let mut pyramid = vec![(Gray { w: a.w, h: a.h, px: a.px.clone() }, Gray { w: b.w, h: b.h, px: b.px.clone() })];
    for _ in 1..cfg.levels.max(1) {
        let (pa, pb) = pyramid.last().expect("non-empty pyramid");
        let next = (pa.half(), pb.half());
        pyramid.push(next);
    }
    // block flows of the coarser level: (blocks_x, flows)
    let mut coarse: Option<(usize, usize, Vec<(i32, i32)>)> = None;
    for (la, lb) in pyramid.iter().rev() {
        let bx = la.w.div_ceil(cfg.block);
        let by = la.h.div_ceil(cfg.block);
        let mut flows = Vec::with_capacity(bx * by);
        for j in 0..by {
            for i in 0..bx {
                let prior = match &coarse {
                    None => (0, 0),
                    Some((cbx, cby, cf)) => {
                        let cx = ((i * cfg.block + cfg.block / 2) / 2 / cfg.block).min(cbx - 1);
                        let cy = ((j * cfg.block + cfg.block / 2) / 2 / cfg.block).min(cby - 1);
                        let f = cf[cy * cbx + cx];
                        (2 * f.0, 2 * f.1)
                    }
                };
                flows.push(match_block(la, lb, i * cfg.block, j * cfg.block, cfg.block, prior, cfg.radius));
            }
        }
        coarse = Some((bx, by, flows));
    }
    let (bx, _, flows) = coarse.expect("at least one level");
    let mut out = Vec::with_capacity(a.w * a.h);
    for y in 0..a.h {
        for x in 0..a.w {
            out.push(flows[(y / cfg.block) * bx + x / cfg.block]);
        }
    }
    out
}

pub fn estimate_flow(video: &FloatVideo) -> Result<FlowField, ObjectiveError> {
    estimate_flow_with(Exec::default(), video, &FlowConfig::default())
}

pub fn estimate_flow_with(exec: Exec, video: &FloatVideo, cfg: &FlowConfig) -> Result<FlowField, ObjectiveError> {
    if video.frames < 2 {
        return Err(ObjectiveError::Shape(format!("flow needs at least 2 frames, got {}", video.frames)));
    }
    if video.width == 0 || video.height == 0 {
        return Err(ObjectiveError::Shape("empty frames".into()));
    }
    let (w, h) = (video.width, video.height);
    let pairs = exec.map_range(video.frames - 1, |t| {
        let a = Gray::from_frame(video.frame(t), w, h);
        let b = Gray::from_frame(video.frame(t + 1), w, h);
        pair_flow(&a, &b, cfg)
    });
    Ok(FlowField {
        pairs: video.frames - 1,
        height: h,
        width: w,
        data: pairs
            .into_iter()
            .flatten()
            .flat_map(|(u, v)| [u as f64, v as f64])
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowLoss {
    pub value: f64,
    /// Gradient of the photometric surrogate with respect to the predicted pixels.
    pub grad: FloatVideo,
    /// Pixels (summed over pairs) in the motion region.
    pub motion_pixels: usize,
}

pub fn flow_loss(pred: &FloatVideo, truth: &FloatVideo, cfg: &FlowConfig) -> Result<FlowLoss, ObjectiveError> {
    if (pred.frames, pred.height, pred.width) != (truth.frames, truth.height, truth.width) {
        return Err(ObjectiveError::Shape("flow loss: videos differ in shape".into()));
    }
    let f = estimate_flow_with(Exec::Sequential, truth, cfg)?;
    flow_loss_given(pred, &f, cfg)
}

/// Flow loss against a precomputed true flow.
///
/// The value compares the estimated flow of `pred` with `true_flow` over the
/// motion region. The estimator has no gradient, so `grad` is the gradient
/// of the surrogate `mean_Ω Huber(pred[t+1](x + f(x)) − pred[t](x))` with the
/// true flow `f` held fixed, residuals measured in codec signal units.
pub fn flow_loss_given(pred: &FloatVideo, true_flow: &FlowField, cfg: &FlowConfig) -> Result<FlowLoss, ObjectiveError> {
    if pred.frames < 2 || (pred.frames - 1, pred.height, pred.width) != (true_flow.pairs, true_flow.height, true_flow.width) {
        return Err(ObjectiveError::Shape("flow loss: prediction and flow differ in shape".into()));
    }
    let fp = estimate_flow_with(Exec::Sequential, pred, cfg)?;
    let (w, h) = (pred.width, pred.height);
    let mut value = 0.0;
    let mut region = Vec::new();
    for t in 0..true_flow.pairs {
        for y in 0..h {
            for x in 0..w {
                let (u, v) = true_flow.at(t, y, x);
                let m = (u * u + v * v).sqrt();
                if m <= cfg.motion_threshold {
                    continue;
                }
                let (pu, pv) = fp.at(t, y, x);
                let pm = (pu * pu + pv * pv).sqrt();
                let cos = if pm == 0.0 {
                    0.0
                } else {
                    ((pu * u + pv * v) / ((pu * pu + pv * pv) * (u * u + v * v)).sqrt()).clamp(-1.0, 1.0)
                };
                value += (1.0 - cos) + huber(pm - m, cfg.huber_delta);
                region.push((t, y, x, u as i64, v as i64));
            }
        }
    }
    let mut grad = FloatVideo::filled(pred.frames, h, w, 0.0);
    if region.is_empty() {
        return Ok(FlowLoss { value: 0.0, grad, motion_pixels: 0 });
    }
    let n = region.len() as f64;
    let norm = 1.0 / (3.0 * n);
    for &(t, y, x, u, v) in &region {
        let (tx, ty) = (x as i64 + u, y as i64 + v);
        if tx < 0 || ty < 0 || tx >= w as i64 || ty >= h as i64 {
            continue;
        }
        let a = ((t * h + y) * w + x) * 3;
        let b = (((t + 1) * h + ty as usize) * w + tx as usize) * 3;
        for c in 0..3 {
            let r = (pred.data[b + c] - pred.data[a + c]) / SIGNAL_SCALE;
            let g = huber_grad(r, cfg.huber_delta) * norm / SIGNAL_SCALE;
            grad.data[b + c] += g;
            grad.data[a + c] -= g;
        }
    }
    Ok(FlowLoss {
        value: value / n,
        grad,
        motion_pixels: region.len(),
    })
}
