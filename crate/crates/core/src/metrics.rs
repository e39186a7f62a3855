//! Video quality and policy-evaluation metrics.

use std::io::Write;

use crate::exec::Exec;
use crate::render::{is_arm_color, MaskVideo, RgbFrame, RgbVideo};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("shape: {0}")]
    Shape(String),
    #[error("need at least 2 policies, got {0}")]
    TooFewPolicies(usize),
    #[error("success rates have zero variance")]
    ZeroVariance,
    #[error("invalid success table: {0}")]
    InvalidTable(String),
}

fn check_videos(a: &RgbVideo, b: &RgbVideo) -> Result<(), MetricsError> {
    if a.frames.len() != b.frames.len() {
        return Err(MetricsError::Shape(format!("{} vs {} frames", a.frames.len(), b.frames.len())));
    }
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        if (fa.width, fa.height) != (fb.width, fb.height) {
            return Err(MetricsError::Shape(format!(
                "{}x{} vs {}x{}",
                fa.width, fa.height, fb.width, fb.height
            )));
        }
    }
    Ok(())
}

/// Peak signal-to-noise ratio over all frames, in dB; `+∞` for identical
/// videos.
pub fn psnr(a: &RgbVideo, b: &RgbVideo) -> Result<f64, MetricsError> {
    check_videos(a, b)?;
    let mut se = 0.0;
    let mut n = 0usize;
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        se += fa
            .pixels
            .iter()
            .zip(&fb.pixels)
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>();
        n += fa.pixels.len();
    }
    if se == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / (se / n as f64)).log10())
}

pub fn psnr_frame(a: &RgbFrame, b: &RgbFrame) -> Result<f64, MetricsError> {
    let wrap = |f: &RgbFrame| RgbVideo { frames: vec![f.clone()] };
    psnr(&wrap(a), &wrap(b))
}

/// Renders a metric value for reports; infinities become `inf`.
pub fn fmt_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gray(f: &RgbFrame) -> Vec<f64> {
    f.pixels
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter over valid windows only.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_frame(a: &RgbFrame, b: &RgbFrame) -> f64 {
    let (w, h) = (a.width, a.height);
    let k = gaussian_kernel();
    let (ga, gb) = (gray(a), gray(b));
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filter_valid(&ga, w, h, &k);
    let mu_b = filter_valid(&gb, w, h, &k);
    let e_aa = filter_valid(&prod(&ga, &ga), w, h, &k);
    let e_bb = filter_valid(&prod(&gb, &gb), w, h, &k);
    let e_ab = filter_valid(&prod(&ga, &gb), w, h, &k);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    sum / mu_a.len() as f64
}

/// Single-scale SSIM on luma with an 11×11 Gaussian window (σ = 1.5),
/// averaged over valid windows and then over frames.
pub fn ssim(a: &RgbVideo, b: &RgbVideo) -> Result<f64, MetricsError> {
    ssim_with(Exec::default(), a, b)
}

pub fn ssim_with(exec: Exec, a: &RgbVideo, b: &RgbVideo) -> Result<f64, MetricsError> {
    check_videos(a, b)?;
    if a.frames.is_empty() {
        return Err(MetricsError::Shape("empty video".into()));
    }
    if a.frames.iter().any(|f| f.width < SSIM_WINDOW || f.height < SSIM_WINDOW) {
        return Err(MetricsError::Shape(format!("frames must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let pairs: Vec<(&RgbFrame, &RgbFrame)> = a.frames.iter().zip(&b.frames).collect();
    let per = exec.map(&pairs, |(x, y)| ssim_frame(x, y));
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Arm pixels of a frame by color key.
pub fn key_arm(frame: &RgbFrame) -> Vec<bool> {
    frame
        .pixels
        .chunks_exact(3)
        .map(|p| is_arm_color([p[0], p[1], p[2]]))
        .collect()
}

fn check_masks(pred: &RgbVideo, truth: &MaskVideo) -> Result<(), MetricsError> {
    if pred.frames.len() != truth.frames.len() {
        return Err(MetricsError::Shape(format!("{} frames vs {} masks", pred.frames.len(), truth.frames.len())));
    }
    for (f, m) in pred.frames.iter().zip(&truth.frames) {
        if (f.width, f.height) != (m.width, m.height) {
            return Err(MetricsError::Shape(format!("{}x{} vs {}x{}", f.width, f.height, m.width, m.height)));
        }
    }
    Ok(())
}

fn overlap(frame: &RgbFrame, mask: &crate::render::MaskFrame) -> (usize, usize) {
    let keyed = key_arm(frame);
    let mut inter = 0;
    let mut union = 0;
    for (i, &k) in keyed.iter().enumerate() {
        let m = mask.get(i % mask.width, i / mask.width);
        inter += (k && m) as usize;
        union += (k || m) as usize;
    }
    (inter, union)
}

/// Σ|∩| / Σ|∪| over all frames between color-keyed arm pixels and the true
/// masks. Two empty embodiments count as a perfect match.
pub fn mask_iou(pred: &RgbVideo, truth: &MaskVideo) -> Result<f64, MetricsError> {
    check_masks(pred, truth)?;
    let (mut inter, mut union) = (0, 0);
    for (f, m) in pred.frames.iter().zip(&truth.frames) {
        let (i, u) = overlap(f, m);
        inter += i;
        union += u;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean of per-frame IoU over frames with a non-empty union.
pub fn mask_iou_per_frame(pred: &RgbVideo, truth: &MaskVideo) -> Result<f64, MetricsError> {
    check_masks(pred, truth)?;
    let ious: Vec<f64> = pred
        .frames
        .iter()
        .zip(&truth.frames)
        .map(|(f, m)| overlap(f, m))
        .filter(|&(_, u)| u > 0)
        .map(|(i, u)| i as f64 / u as f64)
        .collect();
    Ok(if ious.is_empty() { 1.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 })
}

/// Real and proxy success rates of the same policies.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SuccessTable {
    pub real: Vec<f64>,
    pub proxy: Vec<f64>,
}

impl SuccessTable {
    pub fn new(real: Vec<f64>, proxy: Vec<f64>) -> Result<Self, MetricsError> {
        if real.len() != proxy.len() {
            return Err(MetricsError::InvalidTable(format!("{} real vs {} proxy rates", real.len(), proxy.len())));
        }
        if real.iter().chain(&proxy).any(|r| !(0.0..=1.0).contains(r)) {
            return Err(MetricsError::InvalidTable("rates must lie in [0, 1]".into()));
        }
        Ok(Self { real, proxy })
    }

    pub fn len(&self) -> usize {
        self.real.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real.is_empty()
    }
}

/// Mean over policies of the worst rank violation weighted by the real
/// rate gap. Real-rate ties contribute nothing; a proxy tie between
/// policies with distinct real rates counts as a violation.
pub fn mmrv(t: &SuccessTable) -> Result<f64, MetricsError> {
    let n = t.len();
    if n < 2 {
        return Err(MetricsError::TooFewPolicies(n));
    }
    let (r, s) = (&t.real, &t.proxy);
    let mut total = 0.0;
    for i in 0..n {
        let mut worst: f64 = 0.0;
        for j in 0..n {
            if (s[i] < s[j]) != (r[i] < r[j]) {
                worst = worst.max((r[i] - r[j]).abs());
            }
        }
        total += worst;
    }
    Ok(total / n as f64)
}

/// Sample Pearson correlation between real and proxy rates.
pub fn pearson_r(t: &SuccessTable) -> Result<f64, MetricsError> {
    let n = t.len();
    if n < 2 {
        return Err(MetricsError::TooFewPolicies(n));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mr, ms) = (mean(&t.real), mean(&t.proxy));
    let mut cov = 0.0;
    let mut vr = 0.0;
    let mut vs = 0.0;
    for (a, b) in t.real.iter().zip(&t.proxy) {
        cov += (a - mr) * (b - ms);
        vr += (a - mr).powi(2);
        vs += (b - ms).powi(2);
    }
    if vr == 0.0 || vs == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((cov / (vr.sqrt() * vs.sqrt())).clamp(-1.0, 1.0))
}

/// One row of a video-quality report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub mask_iou: f64,
}

impl EvalRow {
    pub fn compute(name: &str, pred: &RgbVideo, truth: &RgbVideo, masks: &MaskVideo) -> Result<Self, MetricsError> {
        Ok(Self {
            name: name.into(),
            psnr: psnr(pred, truth)?,
            ssim: ssim(pred, truth)?,
            mask_iou: mask_iou(pred, masks)?,
        })
    }
}

pub const OUT_OF_SCOPE: &str = "n/a (out of scope)";
pub const REPORT_COLUMNS: [&str; 6] = ["name", "psnr", "ssim", "lpips", "fvd", "mask_iou"];

pub fn write_eval_csv<W: Write>(rows: &[EvalRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{}", REPORT_COLUMNS.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.name,
            fmt_metric(r.psnr),
            fmt_metric(r.ssim),
            OUT_OF_SCOPE,
            OUT_OF_SCOPE,
            fmt_metric(r.mask_iou)
        )?;
    }
    Ok(())
}

pub fn write_eval_markdown<W: Write>(rows: &[EvalRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "| Name | PSNR | SSIM | LPIPS | FVD | Mask-IoU |")?;
    writeln!(w, "|---|---|---|---|---|---|")?;
    for r in rows {
        writeln!(
            w,
            "| {} | {} | {} | {} | {} | {} |",
            r.name,
            fmt_metric(r.psnr),
            fmt_metric(r.ssim),
            OUT_OF_SCOPE,
            OUT_OF_SCOPE,
            fmt_metric(r.mask_iou)
        )?;
    }
    Ok(())
}

/// Mean of per-row metrics, for a summary line.
pub fn mean_row(name: &str, rows: &[EvalRow]) -> Option<EvalRow> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some(EvalRow {
        name: name.into(),
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        mask_iou: rows.iter().map(|r| r.mask_iou).sum::<f64>() / n,
    })
}
