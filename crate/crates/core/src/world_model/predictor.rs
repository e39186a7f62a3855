//! The trainable latent predictor.
//!
//! Every latent cell `(t, y, x)` is processed by the same residual MLP. The
//! base branch sees the noisy cell, its temporal mean, the clean first-frame
//! cell, the noise level and the cell position. The control branch sees the
//! conditioning (mask latents or an action vector) plus the base input, and
//! after every block its features are added to the base features through a
//! projection `F_b` that starts at exactly zero.
//!
//! The head predicts the clean latent `x̂0`; the velocity is derived from it,
//! `v = (√α z̃ − x̂0) / √(1−α)`, so the diffusion loss is the `x̂0` regression.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{LatentVideo, CHANNELS};

use super::WorldModelError;

pub const PARAMS_VERSION: u32 = 1;
/// Base-branch features per cell: noisy cell, temporal mean, first-frame
/// cell, √α, √(1−α), first-frame flag, y, x.
pub const BASE_IN: usize = 3 * CHANNELS + 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Conditioning {
    /// Mask latents of the current and the first latent frame per cell.
    Mask,
    /// Flattened action rows, identical for every cell.
    Coordinates { dim: usize },
    /// No control branch.
    None,
}

impl Conditioning {
    pub fn dim(&self) -> usize {
        match self {
            Conditioning::Mask => 2 * CHANNELS,
            Conditioning::Coordinates { dim } => *dim,
            Conditioning::None => 0,
        }
    }

    fn code(&self) -> u32 {
        match self {
            Conditioning::Mask => 0,
            Conditioning::Coordinates { .. } => 1,
            Conditioning::None => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    pub blocks: usize,
    pub width: usize,
    pub conditioning: Conditioning,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            width: 32,
            conditioning: Conditioning::Mask,
        }
    }
}

impl PredictorConfig {
    pub fn has_control(&self) -> bool {
        !matches!(self.conditioning, Conditioning::None)
    }

    fn shapes(&self) -> (Vec<(usize, usize)>, Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let w = self.width;
        let mut base = vec![(w, BASE_IN), (1, w)];
        for _ in 0..self.blocks {
            base.extend([(w, w), (1, w), (w, w), (1, w)]);
        }
        base.extend([(CHANNELS, w), (1, CHANNELS)]);
        let mut control = Vec::new();
        let mut fuse = Vec::new();
        if self.has_control() {
            control.extend([(w, self.conditioning.dim() + BASE_IN), (1, w)]);
            for _ in 0..self.blocks {
                control.extend([(w, w), (1, w), (w, w), (1, w)]);
                fuse.push((w, w));
            }
        }
        (base, control, fuse)
    }
}

fn total(shapes: &[(usize, usize)]) -> usize {
    shapes.iter().map(|(r, c)| r * c).sum()
}

/// Row-major matrices laid out back to back.
fn views(flat: &[f64], shapes: &[(usize, usize)]) -> Vec<DMatrix<f64>> {
    let mut at = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let m = DMatrix::from_row_slice(r, c, &flat[at..at + r * c]);
            at += r * c;
            m
        })
        .collect()
}

fn flatten(ms: &[DMatrix<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for m in ms {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.push(m[(i, j)]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub config: PredictorConfig,
    pub base: Vec<f64>,
    pub control: Vec<f64>,
    pub fuse: Vec<f64>,
}

impl PredictorParams {
    /// Gaussian weights scaled by fan-in, zero biases, zero fuse.
    pub fn init(config: PredictorConfig, rng: &mut impl rand::Rng) -> Self {
        let (bs, cs, fs) = config.shapes();
        let mut draw = |shapes: &[(usize, usize)], residual_out: bool| {
            let mut out = Vec::new();
            for (i, &(r, c)) in shapes.iter().enumerate() {
                if r == 1 {
                    out.extend(std::iter::repeat_n(0.0, c));
                    continue;
                }
                // second matrix of each residual block starts small
                let block_second = residual_out && i >= 2 && (i - 2) % 4 == 2 && i < 2 + 4 * config.blocks;
                let gain = if block_second { 0.5 } else { 1.0 };
                let n = Normal::new(0.0, gain / (c as f64).sqrt()).expect("positive std");
                out.extend((0..r * c).map(|_| n.sample(rng)));
            }
            out
        };
        let base = draw(&bs, true);
        let control = draw(&cs, true);
        Self {
            config,
            base,
            control,
            fuse: vec![0.0; total(&fs)],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            base: vec![0.0; self.base.len()],
            control: vec![0.0; self.control.len()],
            fuse: vec![0.0; self.fuse.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.base.len() + self.control.len() + self.fuse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.base.iter().chain(&self.control).chain(&self.fuse)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.base.iter_mut().chain(self.control.iter_mut()).chain(self.fuse.iter_mut())
    }

    pub fn validate(&self) -> Result<(), WorldModelError> {
        let (bs, cs, fs) = self.config.shapes();
        if self.base.len() != total(&bs) || self.control.len() != total(&cs) || self.fuse.len() != total(&fs) {
            return Err(WorldModelError::Params("parameter counts do not match the configuration".into()));
        }
        Ok(())
    }

    /// Header of little-endian u32 `{version, blocks, width, conditioning
    /// kind, conditioning dim, parameter count}`, then `f32` base, control
    /// and fuse parameters.
    pub fn write_params<W: Write>(&self, mut w: W) -> Result<(), WorldModelError> {
        let c = self.config;
        let header = [
            PARAMS_VERSION,
            c.blocks as u32,
            c.width as u32,
            c.conditioning.code(),
            c.conditioning.dim() as u32,
            self.len() as u32,
        ];
        let mut buf: Vec<u8> = header.iter().flat_map(|v| v.to_le_bytes()).collect();
        buf.extend(self.iter().flat_map(|&v| (v as f32).to_le_bytes()));
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_params<R: Read>(mut r: R) -> Result<Self, WorldModelError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 24 {
            return Err(WorldModelError::Params("truncated header".into()));
        }
        let h: Vec<u32> = bytes[..24]
            .chunks(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if h[0] != PARAMS_VERSION {
            return Err(WorldModelError::Params(format!("version {} is not supported", h[0])));
        }
        let conditioning = match h[3] {
            0 => Conditioning::Mask,
            1 => Conditioning::Coordinates { dim: h[4] as usize },
            2 => Conditioning::None,
            k => return Err(WorldModelError::Params(format!("unknown conditioning kind {k}"))),
        };
        let config = PredictorConfig {
            blocks: h[1] as usize,
            width: h[2] as usize,
            conditioning,
        };
        let values: Vec<f64> = bytes[24..]
            .chunks(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if bytes.len() % 4 != 0 || values.len() != h[5] as usize {
            return Err(WorldModelError::Params("payload length does not match the header".into()));
        }
        let (bs, cs, _) = config.shapes();
        let (nb, nc) = (total(&bs), total(&cs));
        if values.len() < nb + nc {
            return Err(WorldModelError::Params("payload too short for the configuration".into()));
        }
        let p = Self {
            config,
            base: values[..nb].to_vec(),
            control: values[nb..nb + nc].to_vec(),
            fuse: values[nb + nc..].to_vec(),
        };
        p.validate()?;
        Ok(p)
    }

    /// The same parameters after an `f32` round trip, as read back from disk.
    pub fn quantized(&self) -> Self {
        let q = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect();
        Self {
            config: self.config,
            base: q(&self.base),
            control: q(&self.control),
            fuse: q(&self.fuse),
        }
    }
}

/// Conditioning input for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Cond<'a> {
    Mask(&'a LatentVideo),
    Coordinates(&'a [f64]),
    None,
}

/// Everything the backward pass needs.
pub struct Cache {
    x: DMatrix<f64>,
    c_in: Option<DMatrix<f64>>,
    h: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    sc: Vec<DMatrix<f64>>,
    shape: [usize; 4],
}

fn add_bias(m: &mut DMatrix<f64>, b: &DMatrix<f64>) {
    for j in 0..m.ncols() {
        let v = b[(0, j)];
        m.column_mut(j).add_scalar_mut(v);
    }
}

fn col_sums(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(1, m.ncols(), |_, j| m.column(j).sum())
}

fn base_input(z_init: &LatentVideo, z_noisy: &LatentVideo, alpha: f64) -> DMatrix<f64> {
    let [t, h, w, c] = z_noisy.shape();
    let n = t * h * w;
    let (sa, sb) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    let mut x = DMatrix::zeros(n, BASE_IN);
    for ti in 0..t {
        for y in 0..h {
            for xi in 0..w {
                let row = (ti * h + y) * w + xi;
                let cell = z_noisy.cell(ti, y, xi);
                let init = z_init.cell(0, y, xi);
                for k in 0..c {
                    x[(row, k)] = cell[k];
                    let mean: f64 = (0..t).map(|s| z_noisy.cell(s, y, xi)[k]).sum::<f64>() / t as f64;
                    x[(row, c + k)] = mean;
                    x[(row, 2 * c + k)] = init[k];
                }
                x[(row, 3 * c)] = sa;
                x[(row, 3 * c + 1)] = sb;
                x[(row, 3 * c + 2)] = (ti == 0) as u8 as f64;
                x[(row, 3 * c + 3)] = (y as f64 + 0.5) / h as f64 * 2.0 - 1.0;
                x[(row, 3 * c + 4)] = (xi as f64 + 0.5) / w as f64 * 2.0 - 1.0;
            }
        }
    }
    x
}

fn control_input(cfg: &PredictorConfig, cond: Cond<'_>, x: &DMatrix<f64>, shape: [usize; 4]) -> Result<DMatrix<f64>, WorldModelError> {
    let [t, h, w, c] = shape;
    let d = cfg.conditioning.dim();
    let n = x.nrows();
    let mut ci = DMatrix::zeros(n, d + BASE_IN);
    match (cfg.conditioning, cond) {
        (Conditioning::Mask, Cond::Mask(m)) => {
            if m.shape() != shape {
                return Err(WorldModelError::Shape(format!("mask latent {:?} vs video latent {:?}", m.shape(), shape)));
            }
            for ti in 0..t {
                for y in 0..h {
                    for xi in 0..w {
                        let row = (ti * h + y) * w + xi;
                        let now = m.cell(ti, y, xi);
                        let first = m.cell(0, y, xi);
                        for k in 0..c {
                            ci[(row, k)] = now[k];
                            ci[(row, c + k)] = first[k];
                        }
                    }
                }
            }
        }
        (Conditioning::Coordinates { dim }, Cond::Coordinates(a)) => {
            if a.len() != dim {
                return Err(WorldModelError::Shape(format!("action vector has {} entries, expected {dim}", a.len())));
            }
            for row in 0..n {
                for (k, &v) in a.iter().enumerate() {
                    ci[(row, k)] = v;
                }
            }
        }
        (kind, _) => {
            return Err(WorldModelError::Shape(format!("conditioning input does not match {kind:?}")));
        }
    }
    for row in 0..n {
        for k in 0..BASE_IN {
            ci[(row, d + k)] = x[(row, k)];
        }
    }
    Ok(ci)
}

/// Predicts `x̂0` for every latent entry.
pub fn forward_x0(
    params: &PredictorParams,
    z_init: &LatentVideo,
    cond: Cond<'_>,
    z_noisy: &LatentVideo,
    alpha: f64,
) -> Result<(LatentVideo, Cache), WorldModelError> {
    params.validate()?;
    let cfg = params.config;
    let shape = z_noisy.shape();
    if z_init.t != 1 || z_init.h != z_noisy.h || z_init.w != z_noisy.w || z_init.c != z_noisy.c {
        return Err(WorldModelError::Shape(format!("first-frame latent {:?} vs video latent {:?}", z_init.shape(), shape)));
    }
    let (bs, cs, fs) = cfg.shapes();
    let bp = views(&params.base, &bs);
    let cp = views(&params.control, &cs);
    let fp = views(&params.fuse, &fs);
    let x = base_input(z_init, z_noisy, alpha);
    let mut h0 = &x * bp[0].transpose();
    add_bias(&mut h0, &bp[1]);
    let (c_in, mut c) = if cfg.has_control() {
        let ci = control_input(&cfg, cond, &x, shape)?;
        let mut c0 = &ci * cp[0].transpose();
        add_bias(&mut c0, &cp[1]);
        (Some(ci), vec![c0])
    } else {
        (None, Vec::new())
    };
    let mut hs = vec![h0];
    let mut ss = Vec::new();
    let mut scs = Vec::new();
    for b in 0..cfg.blocks {
        let hb = hs.last().expect("h0");
        let mut a = hb * bp[2 + 4 * b].transpose();
        add_bias(&mut a, &bp[3 + 4 * b]);
        let s = a.map(f64::tanh);
        let mut next = &s * bp[4 + 4 * b].transpose();
        add_bias(&mut next, &bp[5 + 4 * b]);
        next += hb;
        if cfg.has_control() {
            let cb = c.last().expect("c0");
            let mut ac = cb * cp[2 + 4 * b].transpose();
            add_bias(&mut ac, &cp[3 + 4 * b]);
            let sc = ac.map(f64::tanh);
            let mut cn = &sc * cp[4 + 4 * b].transpose();
            add_bias(&mut cn, &cp[5 + 4 * b]);
            cn += cb;
            next += &cn * fp[b].transpose();
            scs.push(sc);
            c.push(cn);
        }
        ss.push(s);
        hs.push(next);
    }
    let nb = bs.len();
    let mut y = hs.last().expect("h") * bp[nb - 2].transpose();
    add_bias(&mut y, &bp[nb - 1]);
    let mut out = LatentVideo::zeros(shape[0], shape[1], shape[2]);
    for row in 0..y.nrows() {
        for k in 0..CHANNELS {
            out.data[row * CHANNELS + k] = y[(row, k)];
        }
    }
    Ok((
        out,
        Cache {
            x,
            c_in,
            h: hs,
            s: ss,
            c,
            sc: scs,
            shape,
        },
    ))
}

/// Gradient of a loss with respect to the parameters, given its gradient
/// with respect to `x̂0`.
pub fn backward_x0(params: &PredictorParams, cache: &Cache, grad_x0: &LatentVideo) -> PredictorParams {
    let cfg = params.config;
    let (bs, cs, fs) = cfg.shapes();
    let bp = views(&params.base, &bs);
    let cp = views(&params.control, &cs);
    let fp = views(&params.fuse, &fs);
    let n = cache.x.nrows();
    debug_assert_eq!(grad_x0.shape(), cache.shape);
    let dy = DMatrix::from_row_slice(n, CHANNELS, &grad_x0.data);
    let nb = bs.len();
    let mut gb: Vec<DMatrix<f64>> = bs.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect();
    let mut gc: Vec<DMatrix<f64>> = cs.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect();
    let mut gf: Vec<DMatrix<f64>> = fs.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect();
    let hb_last = cache.h.last().expect("h");
    gb[nb - 2] = dy.tr_mul(hb_last);
    gb[nb - 1] = col_sums(&dy);
    let mut dh = &dy * &bp[nb - 2];
    let mut dc: Option<DMatrix<f64>> = cfg.has_control().then(|| DMatrix::zeros(n, cfg.width));
    for b in (0..cfg.blocks).rev() {
        if let Some(dcn) = dc.as_mut() {
            gf[b] = dh.tr_mul(&cache.c[b + 1]);
            *dcn += &dh * &fp[b];
            let sc = &cache.sc[b];
            gc[4 + 4 * b] = dcn.tr_mul(sc);
            gc[5 + 4 * b] = col_sums(dcn);
            let dsc = &*dcn * &cp[4 + 4 * b];
            let dac = dsc.zip_map(sc, |g, s| g * (1.0 - s * s));
            gc[2 + 4 * b] = dac.tr_mul(&cache.c[b]);
            gc[3 + 4 * b] = col_sums(&dac);
            *dcn += &dac * &cp[2 + 4 * b];
        }
        let s = &cache.s[b];
        gb[4 + 4 * b] = dh.tr_mul(s);
        gb[5 + 4 * b] = col_sums(&dh);
        let ds = &dh * &bp[4 + 4 * b];
        let da = ds.zip_map(s, |g, s| g * (1.0 - s * s));
        gb[2 + 4 * b] = da.tr_mul(&cache.h[b]);
        gb[3 + 4 * b] = col_sums(&da);
        dh += &da * &bp[2 + 4 * b];
    }
    gb[0] = dh.tr_mul(&cache.x);
    gb[1] = col_sums(&dh);
    if let (Some(dc0), Some(ci)) = (dc, cache.c_in.as_ref()) {
        gc[0] = dc0.tr_mul(ci);
        gc[1] = col_sums(&dc0);
    }
    PredictorParams {
        config: cfg,
        base: flatten(&gb),
        control: flatten(&gc),
        fuse: flatten(&gf),
    }
}

/// Velocity implied by an `x̂0` prediction; zero where `α = 1`, since the
/// velocity then has no effect.
pub fn velocity_from_x0(z_noisy: &LatentVideo, x0: &LatentVideo, alpha: f64) -> LatentVideo {
    let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    let data = if b == 0.0 {
        vec![0.0; x0.data.len()]
    } else {
        z_noisy.data.iter().zip(&x0.data).map(|(z, x)| (a * z - x) / b).collect()
    };
    LatentVideo { data, ..x0.clone() }.with_provenance(crate::codec::Provenance::Predicted)
}

/// Velocity prediction `v_θ`.
pub fn predictor_forward(
    params: &PredictorParams,
    z_init: &LatentVideo,
    cond: Cond<'_>,
    z_noisy: &LatentVideo,
    alpha: f64,
) -> Result<LatentVideo, WorldModelError> {
    let (x0, _) = forward_x0(params, z_init, cond, z_noisy, alpha)?;
    Ok(velocity_from_x0(z_noisy, &x0, alpha))
}
