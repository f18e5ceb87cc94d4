//! Per-scale forward and reverse passes of the V1 → MT cascade.
//!
//! The fixed model and the trainable variants share this code path; the
//! fixed model simply never asks for a cache.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};

use super::ablation::{AblationConfig, MtNonlinearity, NormKind, V1Nonlinearity};
use super::bank::FilterBank;
use crate::filter::reflect;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// The learnable layers of the motion energy model.
#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights {
    pub v1_direction_weights: Array2<f64>,
    pub v1_blur: Vec<f64>,
    pub mt_weights: Array2<f64>,
    pub mt_blur: Vec<f64>,
}

impl StageWeights {
    pub fn from_bank(bank: &FilterBank) -> Self {
        StageWeights {
            v1_direction_weights: bank.v1_direction_weights.clone(),
            v1_blur: bank.v1_blur.clone(),
            mt_weights: bank.mt_weights.clone(),
            mt_blur: bank.mt_blur.clone(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        StageWeights {
            v1_direction_weights: Array2::zeros(self.v1_direction_weights.dim()),
            v1_blur: vec![0.0; self.v1_blur.len()],
            mt_weights: Array2::zeros(self.mt_weights.dim()),
            mt_blur: vec![0.0; self.mt_blur.len()],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constants {
    pub sigma_sq_v1: f64,
    pub sigma_sq_mt: f64,
}

/// Intermediate activations needed by [`backward_scale`].
#[derive(Debug, Clone, Default)]
pub struct ScaleCache {
    v1_linear: Array3<f64>,
    v1_act: Array3<f64>,
    v1_norm: Array3<f64>,
    v1_blur_rows: Array3<f64>,
    v1_out: Array3<f64>,
    mt_linear: Array3<f64>,
    mt_act: Array3<f64>,
    mt_norm: Array3<f64>,
    mt_blur_rows: Array3<f64>,
}

pub(crate) fn mix(weights: &Array2<f64>, x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let flat = x
        .view()
        .into_shape_with_order((c, h * w))
        .expect("contiguous activations");
    weights
        .dot(&flat)
        .into_shape_with_order((weights.nrows(), h, w))
        .expect("shape preserved")
}

fn mix_backward(
    weights: &Array2<f64>,
    x: &Array3<f64>,
    grad_out: &Array3<f64>,
) -> (Array2<f64>, Array3<f64>) {
    let (c, h, w) = x.dim();
    let xf = x.view().into_shape_with_order((c, h * w)).expect("contiguous");
    let gf = grad_out
        .view()
        .into_shape_with_order((weights.nrows(), h * w))
        .expect("contiguous");
    let dw = gf.dot(&xf.t());
    let dx = weights
        .t()
        .dot(&gf)
        .into_shape_with_order((c, h, w))
        .expect("shape preserved");
    (dw, dx)
}

fn square(x: f64) -> f64 {
    x * x
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn half_square(x: f64) -> f64 {
    let r = x.max(0.0);
    r * r
}

/// `x_i / (sum_j x_j + sigma_sq)` along axis 0, per pixel.
pub(crate) fn channel_norm_unchecked(x: &Array3<f64>, sigma_sq: f64) -> Array3<f64> {
    let denom = x.sum_axis(Axis(0)).mapv(|s| s + sigma_sq);
    let mut out = x.clone();
    for mut ch in out.axis_iter_mut(Axis(0)) {
        ch /= &denom;
    }
    out
}

fn channel_norm_backward(x: &Array3<f64>, sigma_sq: f64, g: &Array3<f64>) -> Array3<f64> {
    let denom = x.sum_axis(Axis(0)).mapv(|s| s + sigma_sq);
    let gx = (g * x).sum_axis(Axis(0));
    let mut dx = g.clone();
    for mut ch in dx.axis_iter_mut(Axis(0)) {
        Zip::from(&mut ch)
            .and(&denom)
            .and(&gx)
            .for_each(|d, &den, &s| *d = *d / den - s / (den * den));
    }
    dx
}

pub(crate) fn instance_norm_unchecked(x: &Array3<f64>) -> Array3<f64> {
    let mut out = x.clone();
    for mut ch in out.axis_iter_mut(Axis(0)) {
        let n = ch.len() as f64;
        let mean = ch.sum() / n;
        let var = ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        ch.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

fn instance_norm_backward(x: &Array3<f64>, g: &Array3<f64>) -> Array3<f64> {
    let mut dx = Array3::zeros(x.dim());
    for ((xc, gc), mut dc) in x
        .axis_iter(Axis(0))
        .zip(g.axis_iter(Axis(0)))
        .zip(dx.axis_iter_mut(Axis(0)))
    {
        let n = xc.len() as f64;
        let mean = xc.sum() / n;
        let var = xc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        let g_mean = gc.sum() / n;
        let gy_mean = Zip::from(&xc)
            .and(&gc)
            .fold(0.0, |acc, &xv, &gv| acc + gv * (xv - mean) * inv)
            / n;
        Zip::from(&mut dc)
            .and(&xc)
            .and(&gc)
            .for_each(|d, &xv, &gv| {
                let y = (xv - mean) * inv;
                *d = inv * (gv - g_mean - y * gy_mean);
            });
    }
    dx
}

fn normalize(x: &Array3<f64>, kind: NormKind, sigma_sq: f64) -> Array3<f64> {
    match kind {
        NormKind::Channel => channel_norm_unchecked(x, sigma_sq),
        NormKind::Instance => instance_norm_unchecked(x),
        NormKind::None => x.clone(),
    }
}

fn normalize_backward(x: &Array3<f64>, kind: NormKind, sigma_sq: f64, g: &Array3<f64>) -> Array3<f64> {
    match kind {
        NormKind::Channel => channel_norm_backward(x, sigma_sq, g),
        NormKind::Instance => instance_norm_backward(x, g),
        NormKind::None => g.clone(),
    }
}

fn rows_pass(x: ArrayView2<'_, f64>, taps: &[f64], out: &mut ndarray::ArrayViewMut2<'_, f64>) {
    let (h, w) = x.dim();
    let r = (taps.len() / 2) as isize;
    for y in 0..h {
        for xi in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * x[[y, reflect(xi as isize + k as isize - r, w)]];
            }
            out[[y, xi]] = acc;
        }
    }
}

fn cols_pass(x: ArrayView2<'_, f64>, taps: &[f64], out: &mut ndarray::ArrayViewMut2<'_, f64>) {
    let h = x.nrows();
    let r = (taps.len() / 2) as isize;
    out.fill(0.0);
    for y in 0..h {
        for (k, &t) in taps.iter().enumerate() {
            let src = x.row(reflect(y as isize + k as isize - r, h));
            out.row_mut(y).scaled_add(t, &src);
        }
    }
}

/// Separable spatial blur of every channel; returns (row-pass, output).
fn blur_channels(x: &Array3<f64>, taps: &[f64]) -> (Array3<f64>, Array3<f64>) {
    let mut rows = Array3::zeros(x.dim());
    let mut out = Array3::zeros(x.dim());
    for ((xc, mut rc), mut oc) in x
        .axis_iter(Axis(0))
        .zip(rows.axis_iter_mut(Axis(0)))
        .zip(out.axis_iter_mut(Axis(0)))
    {
        rows_pass(xc, taps, &mut rc);
        cols_pass(rc.view(), taps, &mut oc);
    }
    (rows, out)
}

pub(crate) fn blur_forward(x: &Array3<f64>, taps: &[f64]) -> Array3<f64> {
    blur_channels(x, taps).1
}

/// Reverse pass of [`blur_channels`]: gradients for the input and the taps.
fn blur_backward(
    x: &Array3<f64>,
    rows: &Array3<f64>,
    taps: &[f64],
    g: &Array3<f64>,
) -> (Array3<f64>, Vec<f64>) {
    let (c, h, w) = x.dim();
    let r = (taps.len() / 2) as isize;
    let mut dtaps = vec![0.0; taps.len()];
    let mut dx = Array3::zeros((c, h, w));
    let mut drows = Array2::zeros((h, w));
    for ch in 0..c {
        let xc = x.index_axis(Axis(0), ch);
        let rc = rows.index_axis(Axis(0), ch);
        let gc = g.index_axis(Axis(0), ch);
        drows.fill(0.0);
        for y in 0..h {
            for (k, &t) in taps.iter().enumerate() {
                let src = reflect(y as isize + k as isize - r, h);
                let grow = gc.row(y);
                dtaps[k] += grow.dot(&rc.row(src));
                drows.row_mut(src).scaled_add(t, &grow);
            }
        }
        let mut dxc = dx.index_axis_mut(Axis(0), ch);
        for y in 0..h {
            for xi in 0..w {
                let gv = drows[[y, xi]];
                if gv == 0.0 {
                    continue;
                }
                for (k, &t) in taps.iter().enumerate() {
                    let src = reflect(xi as isize + k as isize - r, w);
                    dtaps[k] += gv * xc[[y, src]];
                    dxc[[y, src]] += t * gv;
                }
            }
        }
    }
    (dx, dtaps)
}

/// Run one scale from its basis responses (10×H×W) to the model output.
pub fn forward_scale(
    basis: ArrayView3<'_, f64>,
    weights: &StageWeights,
    consts: Constants,
    ablation: &AblationConfig,
    cache: Option<&mut ScaleCache>,
) -> Array3<f64> {
    let basis = basis.as_standard_layout().into_owned();
    let v1_linear = mix(&weights.v1_direction_weights, &basis);
    let v1_act = match ablation.v1_nonlinearity {
        V1Nonlinearity::Square => v1_linear.mapv(square),
        V1Nonlinearity::Relu => v1_linear.mapv(relu),
    };
    let v1_norm = normalize(&v1_act, ablation.norm_kind, consts.sigma_sq_v1);
    let (v1_blur_rows, v1_out) = if ablation.include_v1_blur {
        blur_channels(&v1_norm, &weights.v1_blur)
    } else {
        (Array3::zeros((0, 0, 0)), v1_norm.clone())
    };

    if !ablation.include_mt_stage {
        if let Some(c) = cache {
            *c = ScaleCache {
                v1_linear,
                v1_act,
                v1_norm,
                v1_blur_rows,
                v1_out: v1_out.clone(),
                ..Default::default()
            };
        }
        return v1_out;
    }

    let mt_linear = if ablation.include_mt_linear {
        mix(&weights.mt_weights, &v1_out)
    } else {
        v1_out.clone()
    };
    let mt_act = match ablation.mt_nonlinearity {
        MtNonlinearity::RectifiedSquare => mt_linear.mapv(half_square),
        MtNonlinearity::Relu => mt_linear.mapv(relu),
    };
    let mt_norm = normalize(&mt_act, ablation.norm_kind, consts.sigma_sq_mt);
    let (mt_blur_rows, out) = if ablation.include_mt_blur {
        blur_channels(&mt_norm, &weights.mt_blur)
    } else {
        (Array3::zeros((0, 0, 0)), mt_norm.clone())
    };
    if let Some(c) = cache {
        *c = ScaleCache {
            v1_linear,
            v1_act,
            v1_norm,
            v1_blur_rows,
            v1_out,
            mt_linear,
            mt_act,
            mt_norm,
            mt_blur_rows,
        };
    }
    out
}

/// Accumulate weight gradients of one scale into `grads`.
pub fn backward_scale(
    basis: ArrayView3<'_, f64>,
    weights: &StageWeights,
    consts: Constants,
    ablation: &AblationConfig,
    cache: &ScaleCache,
    grad_out: &Array3<f64>,
    grads: &mut StageWeights,
) {
    let mut g = grad_out.clone();
    if ablation.include_mt_stage {
        if ablation.include_mt_blur {
            let (dx, dt) = blur_backward(&cache.mt_norm, &cache.mt_blur_rows, &weights.mt_blur, &g);
            grads.mt_blur.iter_mut().zip(dt).for_each(|(a, b)| *a += b);
            g = dx;
        }
        g = normalize_backward(&cache.mt_act, ablation.norm_kind, consts.sigma_sq_mt, &g);
        Zip::from(&mut g).and(&cache.mt_linear).for_each(|gv, &x| {
            *gv *= match ablation.mt_nonlinearity {
                MtNonlinearity::RectifiedSquare => 2.0 * x.max(0.0),
                MtNonlinearity::Relu => {
                    if x > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        });
        if ablation.include_mt_linear {
            let (dw, dx) = mix_backward(&weights.mt_weights, &cache.v1_out, &g);
            grads.mt_weights += &dw;
            g = dx;
        }
    }
    if ablation.include_v1_blur {
        let (dx, dt) = blur_backward(&cache.v1_norm, &cache.v1_blur_rows, &weights.v1_blur, &g);
        grads.v1_blur.iter_mut().zip(dt).for_each(|(a, b)| *a += b);
        g = dx;
    }
    g = normalize_backward(&cache.v1_act, ablation.norm_kind, consts.sigma_sq_v1, &g);
    Zip::from(&mut g).and(&cache.v1_linear).for_each(|gv, &x| {
        *gv *= match ablation.v1_nonlinearity {
            V1Nonlinearity::Square => 2.0 * x,
            V1Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    });
    let basis = basis.as_standard_layout().into_owned();
    let (dw, _) = mix_backward(&weights.v1_direction_weights, &basis, &g);
    grads.v1_direction_weights += &dw;
}
