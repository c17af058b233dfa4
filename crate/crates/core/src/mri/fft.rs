use std::f64::consts::PI;

use super::{MriError, Result};

/// Complex 2-D grid in row-major split storage.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        ComplexGrid {
            height,
            width,
            re: vec![0.0; height * width],
            im: vec![0.0; height * width],
        }
    }

    pub fn from_real(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        if values.len() != height * width {
            return Err(MriError::Dimension(format!(
                "{} values for a {height}x{width} grid",
                values.len()
            )));
        }
        Ok(ComplexGrid {
            height,
            width,
            re: values.to_vec(),
            im: vec![0.0; values.len()],
        })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(a, b)| a.hypot(*b)).collect()
    }

    /// Squared l2 norm.
    pub fn energy(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(a, b)| a * a + b * b).sum()
    }

    pub fn scale(&mut self, c: f64) {
        self.re.iter_mut().chain(self.im.iter_mut()).for_each(|v| *v *= c);
    }

    fn check_pow2(&self) -> Result<()> {
        if !self.height.is_power_of_two() || !self.width.is_power_of_two() {
            return Err(MriError::Dimension(format!(
                "FFT needs power-of-two sides, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Cyclic shift by half the grid in both axes (its own inverse for even sides).
    fn half_shift(&mut self) {
        let (h, w) = (self.height, self.width);
        let (sh, sw) = (h / 2, w / 2);
        let roll = |src: &[f64]| {
            let mut dst = vec![0.0; src.len()];
            for y in 0..h {
                for x in 0..w {
                    dst[((y + sh) % h) * w + (x + sw) % w] = src[y * w + x];
                }
            }
            dst
        };
        self.re = roll(&self.re);
        self.im = roll(&self.im);
    }

    fn transform(&mut self, inverse: bool) {
        let (h, w) = (self.height, self.width);
        let mut buf_re = vec![0.0; h.max(w)];
        let mut buf_im = vec![0.0; h.max(w)];
        for y in 0..h {
            fft_in_place(&mut self.re[y * w..(y + 1) * w], &mut self.im[y * w..(y + 1) * w], inverse);
        }
        for x in 0..w {
            for y in 0..h {
                buf_re[y] = self.re[y * w + x];
                buf_im[y] = self.im[y * w + x];
            }
            fft_in_place(&mut buf_re[..h], &mut buf_im[..h], inverse);
            for y in 0..h {
                self.re[y * w + x] = buf_re[y];
                self.im[y * w + x] = buf_im[y];
            }
        }
        self.scale(1.0 / ((h * w) as f64).sqrt());
    }
}

/// Unnormalized iterative radix-2 transform; `inverse` flips the exponent sign.
fn fft_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = (step * k as f64).sin_cos();
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// Orthonormal 2-D FFT with the zero frequency moved to `(h/2, w/2)`.
pub fn fft2(img: &ComplexGrid) -> Result<ComplexGrid> {
    img.check_pow2()?;
    let mut out = img.clone();
    out.transform(false);
    out.half_shift();
    Ok(out)
}

/// Inverse of [`fft2`]: expects centred k-space.
pub fn ifft2(ksp: &ComplexGrid) -> Result<ComplexGrid> {
    ksp.check_pow2()?;
    let mut out = ksp.clone();
    out.half_shift();
    out.transform(true);
    Ok(out)
}
