use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MriError, Result};
use crate::tensor::Tensor;

/// Ellipse in normalized image coordinates: `x` (columns) and `y` (rows)
/// both span `[-1, 1]` across the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub axes: (f64, f64),
    pub rotation: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.rotation.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.axes.0).powi(2) + (v / self.axes.1).powi(2) <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub size: usize,
    pub num_ellipses: usize,
    pub intensity: (f64, f64),
    pub axis_length: (f64, f64),
    pub rotation: (f64, f64),
    /// Ellipse centres are drawn from `[-center_spread, center_spread]^2`.
    pub center_spread: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(size: usize, num_ellipses: usize, seed: u64) -> Self {
        PhantomSpec {
            size,
            num_ellipses,
            intensity: (0.1, 0.5),
            axis_length: (0.08, 0.6),
            rotation: (0.0, PI),
            center_spread: 0.45,
            seed,
        }
    }

    pub fn sample_ellipses(&self) -> Vec<Ellipse> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        (0..self.num_ellipses)
            .map(|_| {
                let spread = (-self.center_spread, self.center_spread);
                Ellipse {
                    center: (draw(spread), draw(spread)),
                    axes: (draw(self.axis_length), draw(self.axis_length)),
                    rotation: draw(self.rotation),
                    intensity: draw(self.intensity),
                }
            })
            .collect()
    }
}

const SUPERSAMPLE: usize = 4;

/// Sums anti-aliased (4x4 supersampled) ellipses and clamps to `[0, 1]`.
pub fn render_ellipses(size: usize, ellipses: &[Ellipse]) -> Tensor<f32> {
    let half = size as f64 / 2.0;
    let sub = SUPERSAMPLE as f64;
    Tensor::from_fn(&[1, 1, size, size], |i| {
        let (row, col) = (i / size, i % size);
        let mut acc = 0.0;
        for e in ellipses {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                let y = (row as f64 + (sy as f64 + 0.5) / sub - half) / half;
                for sx in 0..SUPERSAMPLE {
                    let x = (col as f64 + (sx as f64 + 0.5) / sub - half) / half;
                    hits += e.contains(x, y) as usize;
                }
            }
            acc += e.intensity * hits as f64 / (sub * sub);
        }
        acc.clamp(0.0, 1.0) as f32
    })
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Tensor<f32>> {
    if spec.size < 16 {
        return Err(MriError::Parameter(format!("phantom size {} is below 16", spec.size)));
    }
    Ok(render_ellipses(spec.size, &spec.sample_ellipses()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_ellipses_is_black() {
        let p = generate_phantom(&PhantomSpec::new(32, 0, 1)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centred_disc_membership() {
        let size = 64;
        let r = 0.25;
        let disc = Ellipse {
            center: (0.0, 0.0),
            axes: (r, r),
            rotation: 0.0,
            intensity: 1.0,
        };
        let img = render_ellipses(size, &[disc]);
        let at = |row: usize, col: usize| img.data()[row * size + col];
        assert_eq!(at(size / 2, size / 2), 1.0);
        // distance 2r along the x axis is 2r * size/2 pixels from the centre
        let off = (2.0 * r * size as f64 / 2.0) as usize;
        assert_eq!(at(size / 2, size / 2 + off), 0.0);
        assert_eq!(at(size / 2 - off, size / 2), 0.0);
    }

    #[test]
    fn generation_is_pure_and_bounded() {
        let spec = PhantomSpec::new(32, 12, 99);
        let a = generate_phantom(&spec).unwrap();
        assert_eq!(a, generate_phantom(&spec).unwrap());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.max_value() > 0.0);
        assert!(generate_phantom(&PhantomSpec::new(8, 1, 0)).is_err());
    }
}
