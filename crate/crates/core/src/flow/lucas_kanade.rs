//! Dense coarse-to-fine Lucas-Kanade.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{rescale_flow, FlowField};
use crate::error::{Error, Result};
use crate::filter::{bilinear, correlate_cols, correlate_rows, pyr_down, reflect};
use crate::volume::VideoVolume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LkConfig {
    pub window: usize,
    pub pyramid_levels: usize,
    pub iterations: usize,
    /// Smallest admissible eigenvalue of the window-averaged structure
    /// tensor, for intensities in `[0, 1]`.
    pub min_eigenvalue: f64,
}

impl Default for LkConfig {
    fn default() -> Self {
        LkConfig {
            window: 7,
            pyramid_levels: 3,
            iterations: 3,
            min_eigenvalue: 1e-4,
        }
    }
}

fn gradients(img: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let gx = Array2::from_shape_fn((h, w), |(y, x)| {
        0.5 * (img[[y, reflect(x as isize + 1, w)]] - img[[y, reflect(x as isize - 1, w)]])
    });
    let gy = Array2::from_shape_fn((h, w), |(y, x)| {
        0.5 * (img[[reflect(y as isize + 1, h), x]] - img[[reflect(y as isize - 1, h), x]])
    });
    (gx, gy)
}

fn box_mean(img: &Array2<f64>, window: usize) -> Array2<f64> {
    let taps = vec![1.0 / window as f64; window];
    correlate_cols(correlate_rows(img.view(), &taps).view(), &taps)
}

fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    half_tr - disc
}

/// Flow from `frame_a` to `frame_b`.
pub fn lucas_kanade(
    frame_a: ArrayView2<'_, f64>,
    frame_b: ArrayView2<'_, f64>,
    config: &LkConfig,
) -> Result<FlowField> {
    if frame_a.dim() != frame_b.dim() {
        return Err(Error::Shape(format!(
            "frames {:?} and {:?} differ",
            frame_a.dim(),
            frame_b.dim()
        )));
    }
    if config.window == 0 || config.pyramid_levels == 0 {
        return Err(Error::Config("window and pyramid_levels must be >= 1".into()));
    }
    let mut pa = vec![frame_a.to_owned()];
    let mut pb = vec![frame_b.to_owned()];
    for _ in 1..config.pyramid_levels {
        let (h, w) = pa.last().expect("non-empty").dim();
        if h < 2 || w < 2 {
            break;
        }
        let na = pyr_down(pa.last().expect("non-empty").view());
        let nb = pyr_down(pb.last().expect("non-empty").view());
        pa.push(na);
        pb.push(nb);
    }

    let coarsest = pa.len() - 1;
    let (ch, cw) = pa[coarsest].dim();
    let mut u = Array2::<f64>::zeros((ch, cw));
    let mut v = Array2::<f64>::zeros((ch, cw));
    let mut reliable = Array2::from_elem((ch, cw), true);

    for level in (0..=coarsest).rev() {
        let a = &pa[level];
        let b = &pb[level];
        let (h, w) = a.dim();
        if (u.dim()) != (h, w) {
            let up = rescale_flow(
                &FlowField {
                    u: u.mapv(|x| x as f32),
                    v: v.mapv(|x| x as f32),
                },
                h,
                w,
            )?;
            u = up.u_f64();
            v = up.v_f64();
        }
        let (gx, gy) = gradients(a.view());
        let sxx = box_mean(&(&gx * &gx), config.window);
        let sxy = box_mean(&(&gx * &gy), config.window);
        let syy = box_mean(&(&gy * &gy), config.window);
        reliable = Array2::from_shape_fn((h, w), |(y, x)| {
            min_eigenvalue(sxx[[y, x]], sxy[[y, x]], syy[[y, x]]) >= config.min_eigenvalue
        });

        let r = (config.window / 2) as isize;
        let norm = 1.0 / (config.window * config.window) as f64;
        for _ in 0..config.iterations {
            for y in 0..h {
                for x in 0..w {
                    if !reliable[[y, x]] {
                        continue;
                    }
                    let (fu, fv) = (u[[y, x]], v[[y, x]]);
                    let (mut bx, mut by) = (0.0, 0.0);
                    for dy in -r..=r {
                        let qy = reflect(y as isize + dy, h);
                        for dx in -r..=r {
                            let qx = reflect(x as isize + dx, w);
                            let it = bilinear(b.view(), qx as f64 + fu, qy as f64 + fv) - a[[qy, qx]];
                            bx += gx[[qy, qx]] * it;
                            by += gy[[qy, qx]] * it;
                        }
                    }
                    bx *= norm;
                    by *= norm;
                    let (a11, a12, a22) = (sxx[[y, x]], sxy[[y, x]], syy[[y, x]]);
                    let det = a11 * a22 - a12 * a12;
                    if det.abs() < 1e-18 {
                        continue;
                    }
                    u[[y, x]] -= (a22 * bx - a12 * by) / det;
                    v[[y, x]] -= (a11 * by - a12 * bx) / det;
                }
            }
        }
    }

    for ((y, x), ok) in reliable.indexed_iter() {
        if !ok {
            u[[y, x]] = 0.0;
            v[[y, x]] = 0.0;
        }
    }
    FlowField::new(u.mapv(|x| x as f32), v.mapv(|x| x as f32))
}

/// Flows from the central frame of a 9-frame window to each of the other
/// eight frames, in temporal order.
pub fn multiframe_flows<F>(window: &VideoVolume, estimator: F) -> Result<Vec<FlowField>>
where
    F: Fn(ArrayView2<'_, f64>, ArrayView2<'_, f64>) -> Result<FlowField>,
{
    if window.len() != 9 {
        return Err(Error::WindowLength {
            expected: 9,
            actual: window.len(),
        });
    }
    let center = window.frame(4);
    (0..9)
        .filter(|&k| k != 4)
        .map(|k| estimator(center, window.frame(k)))
        .collect()
}
