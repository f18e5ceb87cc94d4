//! Building blocks of the segmentation head and their adjoints. Activations
//! are `C×H×W`, one sample at a time.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis, Zip};

use crate::filter::{reflect, resize_taps};

pub const CELU_ALPHA: f64 = 1.0;
pub const NORM_EPS: f64 = 1e-5;

fn flat(x: &Array3<f64>) -> ArrayView2<'_, f64> {
    let (c, h, w) = x.dim();
    x.view()
        .into_shape_with_order((c, h * w))
        .expect("standard layout")
}

fn unflat(x: Array2<f64>, h: usize, w: usize) -> Array3<f64> {
    let c = x.nrows();
    x.into_shape_with_order((c, h, w)).expect("row-major")
}

/// `weight` is `C_out × C_in`.
pub fn conv1x1(x: &Array3<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> Array3<f64> {
    let (_, h, w) = x.dim();
    let mut y = weight.dot(&flat(x));
    y += &bias.view().insert_axis(Axis(1));
    unflat(y, h, w)
}

/// Returns `(d_input, d_weight, d_bias)`.
pub fn conv1x1_backward(
    x: &Array3<f64>,
    weight: &Array2<f64>,
    g: &Array3<f64>,
) -> (Array3<f64>, Array2<f64>, Array1<f64>) {
    let (_, h, w) = x.dim();
    let gf = flat(g);
    let dw = gf.dot(&flat(x).t());
    let db = gf.sum_axis(Axis(1));
    let dx = weight.t().dot(&gf);
    (unflat(dx, h, w), dw, db)
}

/// 3×3 patches with reflect padding, `(9·C) × (H·W)`, row `c·9 + ky·3 + kx`.
pub fn im2col3(x: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let mut cols = Array2::zeros((c * 9, h * w));
    let out = cols.as_slice_mut().expect("fresh array");
    let (left, right) = (reflect(-1, w), reflect(w as isize, w));
    for ci in 0..c {
        for ky in 0..3 {
            for y in 0..h {
                let sy = reflect(y as isize + ky as isize - 1, h);
                let src = &xs[(ci * h + sy) * w..][..w];
                for kx in 0..3 {
                    let dst = &mut out[((ci * 9 + ky * 3 + kx) * h + y) * w..][..w];
                    match kx {
                        0 => {
                            dst[0] = src[left];
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = src[right];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im3(cols: &Array2<f64>, c: usize, h: usize, w: usize) -> Array3<f64> {
    let cols = cols.as_standard_layout();
    let cs = cols.as_slice().expect("standard layout");
    let mut x = Array3::zeros((c, h, w));
    let xs = x.as_slice_mut().expect("fresh array");
    let (left, right) = (reflect(-1, w), reflect(w as isize, w));
    for ci in 0..c {
        for ky in 0..3 {
            for y in 0..h {
                let sy = reflect(y as isize + ky as isize - 1, h);
                let dst = &mut xs[(ci * h + sy) * w..][..w];
                for kx in 0..3 {
                    let src = &cs[((ci * 9 + ky * 3 + kx) * h + y) * w..][..w];
                    match kx {
                        0 => {
                            dst[left] += src[0];
                            dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s);
                        }
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => {
                            dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s);
                            dst[right] += src[w - 1];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `weight` is `C_out × 9·C_in`; also returns the patch matrix for reuse.
pub fn conv3x3(x: &Array3<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> (Array3<f64>, Array2<f64>) {
    let (_, h, w) = x.dim();
    let cols = im2col3(x);
    let mut y = weight.dot(&cols);
    y += &bias.view().insert_axis(Axis(1));
    (unflat(y, h, w), cols)
}

pub fn conv3x3_backward(
    cols: &Array2<f64>,
    in_dim: (usize, usize, usize),
    weight: &Array2<f64>,
    g: &Array3<f64>,
) -> (Array3<f64>, Array2<f64>, Array1<f64>) {
    let gf = flat(g);
    let dw = gf.dot(&cols.t());
    let db = gf.sum_axis(Axis(1));
    let dcols = weight.t().dot(&gf);
    let (c, h, w) = in_dim;
    (col2im3(&dcols, c, h, w), dw, db)
}

pub fn celu(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { CELU_ALPHA * ((v / CELU_ALPHA).exp() - 1.0) })
}

pub fn celu_backward(pre: &Array3<f64>, g: &Array3<f64>) -> Array3<f64> {
    let mut d = g.clone();
    Zip::from(&mut d).and(pre).for_each(|d, &v| {
        if v <= 0.0 {
            *d *= (v / CELU_ALPHA).exp();
        }
    });
    d
}

/// Per-channel normalization state kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Array3<f64>,
    pub inv_std: Array1<f64>,
}

pub fn instance_norm(x: &Array3<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array3<f64>, NormCache) {
    let c = x.dim().0;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(c);
    let mut y = Array3::zeros(x.dim());
    for (i, (mut xc, mut yc)) in xhat
        .axis_iter_mut(Axis(0))
        .zip(y.axis_iter_mut(Axis(0)))
        .enumerate()
    {
        let n = xc.len() as f64;
        let mean = xc.sum() / n;
        let var = xc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[i] = inv;
        xc.mapv_inplace(|v| (v - mean) * inv);
        Zip::from(&mut yc)
            .and(&xc)
            .for_each(|y, &h| *y = gamma[i] * h + beta[i]);
    }
    (y, NormCache { xhat, inv_std })
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn instance_norm_backward(
    cache: &NormCache,
    gamma: &Array1<f64>,
    g: &Array3<f64>,
) -> (Array3<f64>, Array1<f64>, Array1<f64>) {
    let c = g.dim().0;
    let mut dx = Array3::zeros(g.dim());
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for i in 0..c {
        let gc = g.index_axis(Axis(0), i);
        let hc = cache.xhat.index_axis(Axis(0), i);
        let n = gc.len() as f64;
        let sum_g = gc.sum();
        let sum_gh = Zip::from(&gc).and(&hc).fold(0.0, |a, &g, &h| a + g * h);
        dbeta[i] = sum_g;
        dgamma[i] = sum_gh;
        let k = gamma[i] * cache.inv_std[i] / n;
        Zip::from(dx.index_axis_mut(Axis(0), i))
            .and(&gc)
            .and(&hc)
            .for_each(|d, &g, &h| *d = k * (n * g - sum_g - h * sum_gh));
    }
    (dx, dgamma, dbeta)
}

/// Bilinear resize with half-pixel centers.
pub fn upsample(x: &Array3<f64>, height: usize, width: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let ty = resize_taps(h, height);
    let tx = resize_taps(w, width);
    let mut out = Array3::zeros((c, height, width));
    for ci in 0..c {
        let src = x.index_axis(Axis(0), ci);
        let mut dst = out.index_axis_mut(Axis(0), ci);
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
                let bot = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
                dst[[y, xx]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample_backward(g: &Array3<f64>, height: usize, width: usize) -> Array3<f64> {
    let (c, gh, gw) = g.dim();
    let ty = resize_taps(height, gh);
    let tx = resize_taps(width, gw);
    let mut dx = Array3::zeros((c, height, width));
    for ci in 0..c {
        let gc = g.index_axis(Axis(0), ci);
        let mut d = dx.index_axis_mut(Axis(0), ci);
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (xx, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = gc[[y, xx]];
                d[[y0, x0]] += v * (1.0 - fy) * (1.0 - fx);
                d[[y0, x1]] += v * (1.0 - fy) * fx;
                d[[y1, x0]] += v * fy * (1.0 - fx);
                d[[y1, x1]] += v * fy * fx;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand3(rng: &mut ChaCha8Rng, d: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(d, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn conv3x3_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand3(&mut rng, (2, 5, 4));
        let w = Array2::from_shape_fn((3, 18), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from(vec![0.1, -0.2, 0.3]);
        let (y, _) = conv3x3(&x, &w, &b);
        for o in 0..3 {
            for yy in 0..5 {
                for xx in 0..4 {
                    let mut acc = b[o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = reflect(yy as isize + ky as isize - 1, 5);
                                let sx = reflect(xx as isize + kx as isize - 1, 4);
                                acc += w[[o, c * 9 + ky * 3 + kx]] * x[[c, sy, sx]];
                            }
                        }
                    }
                    assert!((y[[o, yy, xx]] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn patch_scatter_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [(2, 5, 4), (1, 1, 3), (3, 4, 1), (1, 2, 2)] {
            let x = rand3(&mut rng, d);
            let cols = im2col3(&x);
            let g = Array2::from_shape_fn(cols.dim(), |_| rng.random_range(-1.0..1.0));
            let lhs = (&cols * &g).sum();
            let rhs = (&x * &col2im3(&g, d.0, d.1, d.2)).sum();
            assert!((lhs - rhs).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn upsample_adjoint() {
        // <U x, g> == <x, U^T g>
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand3(&mut rng, (2, 3, 5));
        let g = rand3(&mut rng, (2, 7, 10));
        let lhs = (&upsample(&x, 7, 10) * &g).sum();
        let rhs = (&x * &upsample_backward(&g, 3, 5)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn constant_map_normalizes_to_beta() {
        let x = Array3::from_elem((2, 4, 4), 3.0);
        let (y, _) = instance_norm(&x, &Array1::ones(2), &Array1::from(vec![0.5, -1.0]));
        assert!(y.iter().all(|v| v.is_finite()));
        assert!(y.index_axis(Axis(0), 0).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn celu_is_continuous() {
        let x = Array3::from_shape_vec((1, 1, 3), vec![-1e-9, 0.0, 1e-9]).unwrap();
        let y = celu(&x);
        assert!(y.iter().all(|v| v.abs() < 1e-8));
    }
}
