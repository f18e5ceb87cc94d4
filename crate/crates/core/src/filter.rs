//! Separable filtering, resampling and boundary helpers shared by the
//! motion-energy pipeline, the flow estimator and the segmentation head.

use ndarray::{Array2, Array3, ArrayView2, Axis};

/// Reflect padding without edge repetition (`-1 -> 1`), folded for any offset.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// 5-tap binomial kernel used for pyramid construction.
pub const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Correlate every row (along the width axis) with `taps`, reflect padding.
pub fn correlate_rows(img: ArrayView2<'_, f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let r = (taps.len() / 2) as isize;
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        let row = img.row(y);
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * row[reflect(x as isize + k as isize - r, w)];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Correlate every column (along the height axis) with `taps`, reflect padding.
pub fn correlate_cols(img: ArrayView2<'_, f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let r = (taps.len() / 2) as isize;
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for (k, &t) in taps.iter().enumerate() {
            let src = img.row(reflect(y as isize + k as isize - r, h));
            let mut dst = out.row_mut(y);
            dst.scaled_add(t, &src);
        }
    }
    out
}

/// Separable 2D correlation with the same taps along both axes.
pub fn blur2d(img: ArrayView2<'_, f64>, taps: &[f64]) -> Array2<f64> {
    correlate_cols(correlate_rows(img, taps).view(), taps)
}

/// Valid-mode correlation along axis 0 of a T×H×W volume; output has
/// `T - taps.len() + 1` frames.
pub fn correlate_time_valid(vol: &Array3<f64>, taps: &[f64]) -> Array3<f64> {
    let (t, h, w) = vol.dim();
    let n = t + 1 - taps.len();
    let mut out = Array3::zeros((n, h, w));
    for (i, mut frame) in out.axis_iter_mut(Axis(0)).enumerate() {
        for (k, &tap) in taps.iter().enumerate() {
            frame.scaled_add(tap, &vol.index_axis(Axis(0), i + k));
        }
    }
    out
}

/// Keep every other pixel starting at 0; output is `ceil(H/2) x ceil(W/2)`.
pub fn decimate2(img: ArrayView2<'_, f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h.div_ceil(2), w.div_ceil(2)), |(y, x)| img[[2 * y, 2 * x]])
}

/// Binomial blur followed by decimation by two.
pub fn pyr_down(img: ArrayView2<'_, f64>) -> Array2<f64> {
    decimate2(blur2d(img, &BINOMIAL5).view())
}

/// Bilinear sample at continuous `(x, y)` (column, row) with clamp-to-edge.
#[inline]
pub fn bilinear(img: ArrayView2<'_, f64>, x: f64, y: f64) -> f64 {
    let (h, w) = img.dim();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
    let bot = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Sampling positions and weights for resizing one axis with half-pixel
/// centers (`align_corners = false`).
pub(crate) fn resize_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers.
pub fn resize_bilinear(img: ArrayView2<'_, f64>, height: usize, width: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    if (h, w) == (height, width) {
        return img.to_owned();
    }
    let ty = resize_taps(h, height);
    let tx = resize_taps(w, width);
    Array2::from_shape_fn((height, width), |(y, x)| {
        let (y0, y1, fy) = ty[y];
        let (x0, x1, fx) = tx[x];
        let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
        let bot = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Normalized 1D Gaussian with `2 * radius + 1` taps.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|k| {
            let x = k as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn reflect_folds() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-4, 4), 2);
        assert_eq!(reflect(9, 4), 3);
        assert_eq!(reflect(-3, 1), 0);
        for i in -20..20 {
            assert!(reflect(i, 3) < 3);
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let img = Array2::from_elem((7, 5), 0.25);
        let out = blur2d(img.view(), &BINOMIAL5);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn decimate_shapes() {
        let img = Array2::<f64>::zeros((5, 8));
        assert_eq!(decimate2(img.view()).dim(), (3, 4));
    }

    #[test]
    fn bilinear_midpoint() {
        let img = array![[0.0, 1.0], [2.0, 3.0]];
        assert!((bilinear(img.view(), 0.5, 0.5) - 1.5).abs() < 1e-15);
        assert_eq!(bilinear(img.view(), 5.0, -3.0), 1.0);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = Array2::from_shape_fn((4, 6), |(y, x)| (y * 6 + x) as f64);
        assert_eq!(resize_bilinear(img.view(), 4, 6), img);
        let c = Array2::from_elem((8, 8), 2.0);
        assert!(resize_bilinear(c.view(), 3, 5).iter().all(|v| (v - 2.0).abs() < 1e-15));
    }
}
