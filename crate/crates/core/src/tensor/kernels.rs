use super::{Real, Result, TensorError};

/// Output extent of a sliding window along one axis.
pub(crate) fn window_extent(
    op: &'static str,
    size: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(TensorError::dim(op, "stride must be at least 1"));
    }
    if k == 0 || size + 2 * padding < k {
        return Err(TensorError::dim(
            op,
            format!("window {k} does not fit extent {size} with padding {padding}"),
        ));
    }
    Ok((size + 2 * padding - k) / stride + 1)
}

/// Unrolls every `k x k` window of a `[c, h, w]` plane stack into the
/// columns of a `[c*k*k, ho*wo]` matrix (zero padding).
pub fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let l = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * l];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a `[c, h, w]` buffer.
pub fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
    out: &mut [T],
) {
    let l = ho * wo;
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Number of sliding windows covering each pixel of an `h x w` plane.
pub fn overlap_counts(h: usize, w: usize, k: usize, stride: usize, padding: usize) -> Result<Vec<usize>> {
    let ho = window_extent("overlap_counts", h, k, stride, padding)?;
    let wo = window_extent("overlap_counts", w, k, stride, padding)?;
    let axis = |size: usize, out: usize| {
        let mut counts = vec![0usize; size];
        for o in 0..out {
            for d in 0..k {
                let i = (o * stride + d) as isize - padding as isize;
                if i >= 0 && (i as usize) < size {
                    counts[i as usize] += 1;
                }
            }
        }
        counts
    };
    let cy = axis(h, ho);
    let cx = axis(w, wo);
    Ok(cy.iter().flat_map(|&a| cx.iter().map(move |&b| a * b)).collect())
}

/// Positive rational resampling factor `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scale {
    pub num: usize,
    pub den: usize,
}

impl Scale {
    pub fn new(num: usize, den: usize) -> Self {
        Scale { num, den }
    }

    pub fn integer(s: usize) -> Self {
        Scale { num: s, den: 1 }
    }

    pub fn inverse(self) -> Self {
        Scale {
            num: self.den,
            den: self.num,
        }
    }

    pub(crate) fn apply(self, size: usize) -> Result<usize> {
        if self.num == 0 || self.den == 0 {
            return Err(TensorError::dim("resample", "scale must be positive"));
        }
        if !(size * self.num).is_multiple_of(self.den) {
            return Err(TensorError::dim(
                "resample",
                format!("{size} * {}/{} is not integral", self.num, self.den),
            ));
        }
        Ok(size * self.num / self.den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    Nearest,
    /// Half-pixel-centre (align-corners-false) bilinear interpolation.
    Bilinear,
}

/// Two-tap interpolation weights for every output index along one axis.
#[derive(Clone, Debug)]
pub(crate) struct AxisTaps<T> {
    pub taps: Vec<(usize, usize, T, T)>,
}

impl<T: Real> AxisTaps<T> {
    pub fn new(input: usize, output: usize, mode: ResampleMode) -> Self {
        let ratio = input as f64 / output as f64;
        let taps = (0..output)
            .map(|dst| match mode {
                ResampleMode::Nearest => {
                    let src = ((dst as f64 * ratio).floor() as usize).min(input - 1);
                    (src, src, T::one(), T::zero())
                }
                ResampleMode::Bilinear => {
                    let src = ((dst as f64 + 0.5) * ratio - 0.5).max(0.0);
                    let i0 = (src.floor() as usize).min(input - 1);
                    let i1 = (i0 + 1).min(input - 1);
                    let lambda = src - i0 as f64;
                    (i0, i1, T::of(1.0 - lambda), T::of(lambda))
                }
            })
            .collect();
        AxisTaps { taps }
    }
}
