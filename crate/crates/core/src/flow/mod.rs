//! Dense optical flow: storage, `.flo` interchange, multi-scale rescaling
//! and a pyramidal Lucas-Kanade baseline.

mod flo;
mod lucas_kanade;

use ndarray::{Array2, Array3};

pub use flo::{read_flo, read_flo_from, write_flo, write_flo_to, FLO_MAGIC};
pub use lucas_kanade::{lucas_kanade, multiframe_flows, LkConfig};

use crate::error::{Error, Result};
use crate::filter::resize_bilinear;
use crate::motion_energy::level_size;

/// Per-pixel displacement in pixels/frame; `u` is the column component and
/// `v` the row component.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Array2<f32>,
    pub v: Array2<f32>,
}

impl FlowField {
    pub fn new(u: Array2<f32>, v: Array2<f32>) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::Shape(format!("u {:?} vs v {:?}", u.dim(), v.dim())));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Format("flow contains non-finite values".into()));
        }
        Ok(FlowField { u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            u: Array2::zeros((height, width)),
            v: Array2::zeros((height, width)),
        }
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        FlowField {
            u: Array2::from_elem((height, width), u),
            v: Array2::from_elem((height, width), v),
        }
    }

    pub fn height(&self) -> usize {
        self.u.nrows()
    }

    pub fn width(&self) -> usize {
        self.u.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.u.dim()
    }

    /// Bilinear sample at `(x, y)` with clamp-to-edge, in f64.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let (h, w) = self.dim();
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let lerp = |a: &Array2<f32>| {
            let top = f64::from(a[[y0, x0]]) * (1.0 - fx) + f64::from(a[[y0, x1]]) * fx;
            let bot = f64::from(a[[y1, x0]]) * (1.0 - fx) + f64::from(a[[y1, x1]]) * fx;
            top * (1.0 - fy) + bot * fy
        };
        (lerp(&self.u), lerp(&self.v))
    }

    pub fn u_f64(&self) -> Array2<f64> {
        self.u.mapv(f64::from)
    }

    pub fn v_f64(&self) -> Array2<f64> {
        self.v.mapv(f64::from)
    }

    /// Two-channel (u, v) feature map.
    pub fn to_channels(&self) -> Array3<f64> {
        let (h, w) = self.dim();
        Array3::from_shape_fn((2, h, w), |(c, y, x)| {
            f64::from(if c == 0 { self.u[[y, x]] } else { self.v[[y, x]] })
        })
    }

    /// Mean endpoint error against `other` over the pixels selected by `keep`.
    pub fn mean_endpoint_error(&self, other: &FlowField, keep: impl Fn(usize, usize) -> bool) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for ((y, x), &u) in self.u.indexed_iter() {
            if !keep(y, x) {
                continue;
            }
            let du = f64::from(u) - f64::from(other.u[[y, x]]);
            let dv = f64::from(self.v[[y, x]]) - f64::from(other.v[[y, x]]);
            sum += (du * du + dv * dv).sqrt();
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Bilinear resize; `u` is scaled by `W'/W` and `v` by `H'/H` so the result
/// stays in target-resolution pixels.
pub fn rescale_flow(field: &FlowField, height: usize, width: usize) -> Result<FlowField> {
    if height == 0 || width == 0 {
        return Err(Error::BadDims {
            width: width as i64,
            height: height as i64,
        });
    }
    if field.dim() == (height, width) {
        return Ok(field.clone());
    }
    let sx = width as f64 / field.width() as f64;
    let sy = height as f64 / field.height() as f64;
    let u = resize_bilinear(field.u_f64().view(), height, width).mapv(|x| (x * sx) as f32);
    let v = resize_bilinear(field.v_f64().view(), height, width).mapv(|x| (x * sy) as f32);
    Ok(FlowField { u, v })
}

/// Level `k` is `field` rescaled to `ceil(H/2^k) x ceil(W/2^k)`.
pub fn multiscale_flow(field: &FlowField, levels: usize) -> Result<Vec<FlowField>> {
    if levels == 0 {
        return Err(Error::Config("levels must be >= 1".into()));
    }
    (0..levels)
        .map(|k| rescale_flow(field, level_size(field.height(), k), level_size(field.width(), k)))
        .collect()
}
