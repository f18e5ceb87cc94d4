//! Procedural star-convex polygons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::volume::Mask;

/// Polygon with vertices given relative to its center, ordered by angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarShape {
    pub vertices: Vec<[f64; 2]>,
}

impl StarShape {
    /// Random star-convex polygon with `n` vertices whose radii lie in
    /// `[0.55, 1] * radius` after circular smoothing.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, radius: f64, n: usize) -> Self {
        let n = n.max(3);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.4..1.0)).collect();
        let smooth: Vec<f64> = (0..n)
            .map(|i| 0.25 * raw[(i + n - 1) % n] + 0.5 * raw[i] + 0.25 * raw[(i + 1) % n])
            .collect();
        let max = smooth.iter().cloned().fold(f64::MIN, f64::max);
        let offset = rng.random_range(0.0..std::f64::consts::TAU);
        let vertices = smooth
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let jitter = rng.random_range(-0.3..0.3);
                let theta = offset + (i as f64 + jitter) * std::f64::consts::TAU / n as f64;
                let rr = radius * (0.55 + 0.45 * (r / max));
                [rr * theta.cos(), rr * theta.sin()]
            })
            .collect();
        StarShape { vertices }
    }

    pub fn max_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn min_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
            .fold(f64::INFINITY, f64::min)
    }

    /// Even-odd containment of `(x, y)` for the shape centered at `center`.
    pub fn contains(&self, center: [f64; 2], x: f64, y: f64) -> bool {
        let px = x - center[0];
        let py = y - center[1];
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// Pixel-center rasterization on an `height x width` grid.
    pub fn rasterize(&self, height: usize, width: usize, center: [f64; 2]) -> Mask {
        Mask::from_shape_fn((height, width), |(y, x)| self.contains(center, x as f64, y as f64))
    }
}
