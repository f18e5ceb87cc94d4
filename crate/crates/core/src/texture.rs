//! Periodic value-noise textures.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const COARSE_CELL: usize = 8;
pub const FINE_CELL: usize = 4;

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

#[derive(Debug, Clone)]
struct Octave {
    lattice: Array2<f64>,
    cell: f64,
}

impl Octave {
    fn sample(&self, x: f64, y: f64) -> f64 {
        let n = self.lattice.nrows();
        let fx = x / self.cell;
        let fy = y / self.cell;
        let (xf, yf) = (fx.floor(), fy.floor());
        let x0 = (xf as i64).rem_euclid(n as i64) as usize;
        let y0 = (yf as i64).rem_euclid(n as i64) as usize;
        let (x1, y1) = ((x0 + 1) % n, (y0 + 1) % n);
        let tx = smoothstep(fx - xf);
        let ty = smoothstep(fy - yf);
        let l = &self.lattice;
        let top = l[[y0, x0]] * (1.0 - tx) + l[[y0, x1]] * tx;
        let bot = l[[y1, x0]] * (1.0 - tx) + l[[y1, x1]] * tx;
        top * (1.0 - ty) + bot * ty
    }
}

/// Continuous two-octave value noise that repeats every `period` pixels.
#[derive(Debug, Clone)]
pub struct Texture {
    coarse: Octave,
    fine: Octave,
    period: usize,
}

impl Texture {
    /// `period` must be a positive multiple of the coarse cell size.
    pub fn value_noise(seed: u64, period: usize) -> Result<Self> {
        if period == 0 || period % COARSE_CELL != 0 {
            return Err(Error::Config(format!(
                "texture period {period} must be a positive multiple of {COARSE_CELL}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut octave = |cell: usize| {
            let n = period / cell;
            Octave {
                lattice: Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0)),
                cell: cell as f64,
            }
        };
        let coarse = octave(COARSE_CELL);
        let fine = octave(FINE_CELL);
        Ok(Texture {
            coarse,
            fine,
            period,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Intensity in `[0.1, 0.9]` at continuous `(x, y)`.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let v = 0.6 * self.coarse.sample(x, y) + 0.4 * self.fine.sample(x, y);
        0.1 + 0.8 * v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: &Texture) -> Vec<f64> {
        (0..64).flat_map(|y| (0..64).map(move |x| (x, y))).map(|(x, y)| t.sample(x as f64 * 0.7, y as f64 * 1.3)).collect()
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = Texture::value_noise(7, 64).unwrap();
        let b = Texture::value_noise(7, 64).unwrap();
        assert_eq!(grid(&a), grid(&b));
        assert!(grid(&a).iter().all(|&v| (0.1..=0.9).contains(&v)));
        assert_ne!(grid(&a), grid(&Texture::value_noise(8, 64).unwrap()));
    }

    #[test]
    fn wraps_periodically() {
        let t = Texture::value_noise(1, 32).unwrap();
        assert!((t.sample(3.25, 4.5) - t.sample(35.25, -27.5)).abs() < 1e-12);
        assert!((t.sample(0.0, 0.0) - t.sample(32.0, 64.0)).abs() < 1e-12);
        assert!(Texture::value_noise(1, 30).is_err());
    }

    #[test]
    fn continuous_across_cells() {
        let t = Texture::value_noise(3, 64).unwrap();
        let eps = 1e-7;
        for x in [4.0, 8.0, 16.0, 63.999] {
            assert!((t.sample(x - eps, 5.0) - t.sample(x + eps, 5.0)).abs() < 1e-5);
        }
    }
}
