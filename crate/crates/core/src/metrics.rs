//! Image quality metrics: PSNR, SSIM and NMSE, plus the bicubic upsampler
//! used for the interpolation baseline.

use thiserror::Error;

use crate::tensor::{Real, Tensor};

/// PSNR reported for (numerically) identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall(usize, usize),
    #[error("reference image has zero energy")]
    ZeroTarget,
    #[error("data range must be positive, got {0}")]
    Range(f64),
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn check_pair<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(MetricError::Shape(pred.shape().to_vec(), target.shape().to_vec()));
    }
    Ok(())
}

fn mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> f64 {
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    s / pred.numel() as f64
}

/// `10 log10(range^2 / MSE)`, capped at [`PSNR_CAP_DB`] once
/// `MSE < range^2 * 1e-10`.
pub fn psnr<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, data_range: f64) -> Result<f64> {
    check_pair(pred, target)?;
    if !(data_range > 0.0) {
        return Err(MetricError::Range(data_range));
    }
    let mse = mse(pred, target);
    let peak = data_range * data_range;
    if mse < peak * 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak / mse).log10())
}

/// `||pred - target||^2 / ||target||^2`.
pub fn nmse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_pair(pred, target)?;
    let energy: f64 = target.data().iter().map(|&v| v.as_f64().powi(2)).sum();
    if energy == 0.0 {
        return Err(MetricError::ZeroTarget);
    }
    Ok(mse(pred, target) * pred.numel() as f64 / energy)
}

pub(crate) fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let n = win.len();
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for xo in 0..wo {
            rows[y * wo + xo] = win.iter().enumerate().map(|(i, &g)| g * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for xo in 0..wo {
            out[yo * wo + xo] = win.iter().enumerate().map(|(i, &g)| g * rows[(yo + i) * wo + xo]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over valid window
/// positions, averaged over every 2-D plane of the tensor.
pub fn ssim<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, data_range: f64) -> Result<f64> {
    check_pair(pred, target)?;
    if !(data_range > 0.0) {
        return Err(MetricError::Range(data_range));
    }
    let shape = pred.shape();
    if shape.len() < 2 {
        return Err(MetricError::TooSmall(1, shape[0]));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall(h, w));
    }
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let win = gaussian_window();
    let planes = pred.numel() / (h * w);
    let mut total = 0.0;
    for p in 0..planes {
        let x: Vec<f64> = pred.data()[p * h * w..(p + 1) * h * w].iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = target.data()[p * h * w..(p + 1) * h * w].iter().map(|v| v.as_f64()).collect();
        let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_x = filter_valid(&x, h, w, &win);
        let mu_y = filter_valid(&y, h, w, &win);
        let xx = filter_valid(&prod(&x, &x), h, w, &win);
        let yy = filter_valid(&prod(&y, &y), h, w, &win);
        let xy = filter_valid(&prod(&x, &y), h, w, &win);
        let mut acc = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += acc / mu_x.len() as f64;
    }
    Ok(total / planes as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub nmse: f64,
}

impl MetricReport {
    /// All three metrics with `data_range = max(target)`.
    pub fn compute<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Self> {
        let max = target.max_value().as_f64();
        let range = if max > 0.0 { max } else { 1.0 };
        Ok(MetricReport {
            psnr_db: psnr(pred, target, range)?,
            ssim: ssim(pred, target, range)?,
            nmse: nmse(pred, target)?,
        })
    }

    pub fn mean(reports: &[MetricReport]) -> Self {
        let n = reports.len().max(1) as f64;
        MetricReport {
            psnr_db: reports.iter().map(|r| r.psnr_db).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
            nmse: reports.iter().map(|r| r.nmse).sum::<f64>() / n,
        }
    }
}

fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.75;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

fn cubic_taps(input: usize, output: usize) -> Vec<[(usize, f64); 4]> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut taps = [(0usize, 0.0); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let idx = (base as isize + k as isize - 1).clamp(0, input as isize - 1) as usize;
                *tap = (idx, cubic_weight(t - (k as f64 - 1.0)));
            }
            taps
        })
        .collect()
}

/// Bicubic (a = -0.75, half-pixel centres, edge clamping) upsampling of every
/// plane of a `[B, C, H, W]` tensor by an integer factor.
pub fn bicubic_upsample(x: &Tensor<f32>, scale: usize) -> Tensor<f32> {
    let [b, c, h, w] = x.dims4("bicubic_upsample").expect("4-D image");
    let (ho, wo) = (h * scale, w * scale);
    let rows = cubic_taps(h, ho);
    let cols = cubic_taps(w, wo);
    let mut out = Vec::with_capacity(b * c * ho * wo);
    for p in 0..b * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let mut tmp = vec![0.0f64; h * wo];
        for y in 0..h {
            for (xo, taps) in cols.iter().enumerate() {
                tmp[y * wo + xo] = taps.iter().map(|&(i, wt)| wt * src[y * w + i] as f64).sum();
            }
        }
        for taps in &rows {
            for xo in 0..wo {
                out.push(taps.iter().map(|&(i, wt)| wt * tmp[i * wo + xo]).sum::<f64>() as f32);
            }
        }
    }
    Tensor::new(vec![b, c, ho, wo], out).expect("positive dims")
}
