use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ComplexGrid, MriError, Result};

/// Column (phase-encode line) sampling pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct CartesianMask {
    pub width: usize,
    pub sampled: Vec<bool>,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub seed: u64,
}

impl CartesianMask {
    /// Every column sampled.
    pub fn full(width: usize) -> Self {
        CartesianMask {
            width,
            sampled: vec![true; width],
            acceleration: 1.0,
            center_fraction: 1.0,
            seed: 0,
        }
    }

    /// A mask with an explicit column pattern.
    pub fn from_columns(sampled: Vec<bool>) -> Self {
        let width = sampled.len();
        let count = sampled.iter().filter(|&&s| s).count().max(1);
        CartesianMask {
            width,
            sampled,
            acceleration: width as f64 / count as f64,
            center_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.sampled.iter().filter(|&&s| s).count()
    }

    /// Column range of the fully sampled central band.
    pub fn center_band(width: usize, center_fraction: f64) -> std::ops::Range<usize> {
        let n = ((width as f64 * center_fraction).round() as usize).min(width);
        let start = (width - n).div_ceil(2);
        start..start + n
    }
}

/// Fully sampled central band plus uniformly drawn remaining columns, so that
/// `round(width / acceleration)` columns are sampled in total.
pub fn make_cartesian_mask(width: usize, acceleration: f64, center_fraction: f64, seed: u64) -> Result<CartesianMask> {
    if width == 0 {
        return Err(MriError::Parameter("mask width must be positive".into()));
    }
    if !(acceleration >= 1.0 && acceleration.is_finite()) {
        return Err(MriError::Parameter(format!("acceleration {acceleration} must be at least 1")));
    }
    if !(center_fraction > 0.0 && center_fraction < 1.0) && acceleration > 1.0 {
        return Err(MriError::Parameter(format!(
            "center fraction {center_fraction} must lie in (0, 1)"
        )));
    }
    if width as f64 * center_fraction < 1.0 {
        return Err(MriError::Parameter(format!(
            "center fraction {center_fraction} covers less than one of {width} columns"
        )));
    }
    let budget = ((width as f64 / acceleration).round() as usize).clamp(1, width);
    let band = CartesianMask::center_band(width, center_fraction);
    if band.len() > budget {
        return Err(MriError::Parameter(format!(
            "central band of {} columns exceeds the budget of {budget} at {acceleration}x",
            band.len()
        )));
    }
    let mut sampled = vec![false; width];
    sampled[band.clone()].iter_mut().for_each(|s| *s = true);
    let outside: Vec<usize> = (0..width).filter(|c| !band.contains(c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in sample(&mut rng, outside.len(), budget - band.len()) {
        sampled[outside[i]] = true;
    }
    Ok(CartesianMask {
        width,
        sampled,
        acceleration,
        center_fraction,
        seed,
    })
}

/// Zeroes every k-space column the mask does not sample.
pub fn undersample(ksp: &ComplexGrid, mask: &CartesianMask) -> Result<ComplexGrid> {
    if ksp.width != mask.width {
        return Err(MriError::Dimension(format!(
            "k-space width {} vs mask width {}",
            ksp.width, mask.width
        )));
    }
    let mut out = ksp.clone();
    for y in 0..ksp.height {
        for (x, &keep) in mask.sampled.iter().enumerate() {
            if !keep {
                out.re[y * ksp.width + x] = 0.0;
                out.im[y * ksp.width + x] = 0.0;
            }
        }
    }
    Ok(out)
}
