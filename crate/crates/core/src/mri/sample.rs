use super::{fft2, ifft2, undersample, CartesianMask, ComplexGrid, MriError, Result};
use crate::tensor::Tensor;

/// One training example: network input, reconstruction target, SR target.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTriple {
    /// Undersampled, degraded magnitude image `[1, 1, h/s, w/s]`.
    pub input_lr: Tensor<f32>,
    /// Fully sampled low-resolution magnitude image `[1, 1, h/s, w/s]`.
    pub target_rec: Tensor<f32>,
    /// Fully sampled high-resolution image `[1, 1, h, w]`.
    pub target_sr: Tensor<f32>,
    pub scale: usize,
    pub mask: CartesianMask,
}

/// Keeps the central `h/s x w/s` block of centred k-space, scaled by `1/s`
/// so image-domain mean intensity survives the orthonormal transforms.
pub fn degrade_lr(ksp: &ComplexGrid, s: usize) -> Result<ComplexGrid> {
    if s == 0 || !ksp.height.is_multiple_of(s) || !ksp.width.is_multiple_of(s) {
        return Err(MriError::Dimension(format!(
            "{}x{} is not divisible by scale {s}",
            ksp.height, ksp.width
        )));
    }
    let (h, w) = (ksp.height / s, ksp.width / s);
    let (y0, x0) = (ksp.height / 2 - h / 2, ksp.width / 2 - w / 2);
    let mut out = ComplexGrid::zeros(h, w);
    let inv = 1.0 / s as f64;
    for y in 0..h {
        for x in 0..w {
            let src = (y0 + y) * ksp.width + x0 + x;
            out.re[y * w + x] = ksp.re[src] * inv;
            out.im[y * w + x] = ksp.im[src] * inv;
        }
    }
    Ok(out)
}

fn plane(t: &Tensor<f32>) -> Result<(usize, usize, Vec<f64>)> {
    match t.shape() {
        [1, 1, h, w] => Ok((*h, *w, t.data().iter().map(|&v| v as f64).collect())),
        other => Err(MriError::Dimension(format!("expected a [1, 1, h, w] image, got {other:?}"))),
    }
}

fn magnitude_image(grid: &ComplexGrid, norm: f64) -> Tensor<f32> {
    let data = grid.magnitude().iter().map(|&v| (v / norm) as f32).collect();
    Tensor::new(vec![1, 1, grid.height, grid.width], data).expect("grid dims are positive")
}

/// Simulates acquisition of `hr`: full k-space, undersampling with `mask`,
/// k-space truncation by `s`. All three images share the normalization `max(hr)`.
pub fn make_sample(hr: &Tensor<f32>, mask: &CartesianMask, s: usize) -> Result<SampleTriple> {
    let (h, w, values) = plane(hr)?;
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(MriError::Dimension(format!("image {h}x{w} must have power-of-two sides")));
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let norm = if max > 0.0 { max } else { 1.0 };
    let y = fft2(&ComplexGrid::from_real(h, w, &values)?)?;
    let target_rec = magnitude_image(&ifft2(&degrade_lr(&y, s)?)?, norm);
    let input_lr = magnitude_image(&ifft2(&degrade_lr(&undersample(&y, mask)?, s)?)?, norm);
    Ok(SampleTriple {
        input_lr,
        target_rec,
        target_sr: hr.map(|v| (v as f64 / norm) as f32),
        scale: s,
        mask: mask.clone(),
    })
}
