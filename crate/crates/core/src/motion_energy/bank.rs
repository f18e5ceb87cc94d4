//! Fixed filter bank of the two-stage (V1 → MT) motion energy model.
//!
//! V1 filters are third-order directional derivatives of an isotropic
//! space-time Gaussian. They are built from the ten separable basis kernels
//! `g^(a)(x) g^(b)(y) g^(c)(t)` with `a + b + c = 3` and steered by
//! multinomial direction weights. MT units combine V1 channels according to
//! the intersection-of-constraints rule: a V1 channel contributes to a
//! velocity in proportion to how close its spatiotemporal frequency
//! orientation lies to that velocity's constraint plane.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_taps;

/// Parameter set shipped with the crate.
pub const REFERENCE_PARAMS: &str = include_str!("../../params/reference.toml");

/// Derivative orders `(x, y, t)` of the separable basis, in file order.
pub const BASIS_ORDERS: [[usize; 3]; 10] = [
    [3, 0, 0],
    [0, 3, 0],
    [0, 0, 3],
    [2, 1, 0],
    [2, 0, 1],
    [1, 2, 0],
    [0, 2, 1],
    [1, 0, 2],
    [0, 1, 2],
    [1, 1, 1],
];

const ZERO_MEAN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// 1D derivative-of-Gaussian taps for orders 0..=3, shared by x, y and t.
    pub derivative_taps: [Vec<f64>; 4],
    /// Unit space-time orientation `(dx, dy, dt)` of each V1 channel.
    pub v1_directions: Array2<f64>,
    /// N_v1 × 10 steering weights over [`BASIS_ORDERS`].
    pub v1_direction_weights: Array2<f64>,
    /// N_mt × N_v1 velocity-combination weights.
    pub mt_weights: Array2<f64>,
    /// Preferred velocity `(u, v)` of every MT channel in pixels/frame.
    pub preferred_velocities: Vec<[f64; 2]>,
    pub v1_blur: Vec<f64>,
    pub mt_blur: Vec<f64>,
    pub sigma_sq_v1: f64,
    pub sigma_sq_mt: f64,
    pub pyramid_levels: usize,
}

/// Optional replacements applied on top of a parameter file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BankOverrides {
    pub sigma_sq_v1: Option<f64>,
    pub sigma_sq_mt: Option<f64>,
    pub pyramid_levels: Option<usize>,
    /// Replacing the velocities recomputes the MT weights from the V1
    /// directions.
    pub preferred_velocities: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn from_array(a: &Array2<f64>) -> Self {
        Matrix {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn into_array(self, name: &str) -> Result<Array2<f64>> {
        if self.rows * self.cols != self.data.len() {
            return Err(Error::ParamFile(format!(
                "{name}: {}x{} matrix holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Array2::from_shape_vec((self.rows, self.cols), self.data)
            .map_err(|e| Error::ParamFile(format!("{name}: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct KernelSection {
    order0: Vec<f64>,
    order1: Vec<f64>,
    order2: Vec<f64>,
    order3: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct V1Section {
    blur: Vec<f64>,
    directions: Matrix,
    direction_weights: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MtSection {
    blur: Vec<f64>,
    velocities: Matrix,
    weights: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamFile {
    pyramid_levels: usize,
    sigma_sq_v1: f64,
    sigma_sq_mt: f64,
    kernels: KernelSection,
    v1: V1Section,
    mt: MtSection,
}

/// Parse a parameter file and apply `overrides`.
pub fn build_filter_bank(params: &str, overrides: &BankOverrides) -> Result<FilterBank> {
    let file: ParamFile = toml::from_str(params).map_err(|e| Error::ParamFile(e.to_string()))?;

    let derivative_taps = [
        file.kernels.order0,
        file.kernels.order1,
        file.kernels.order2,
        file.kernels.order3,
    ];
    let taps = derivative_taps[0].len();
    if taps % 2 == 0 || taps == 0 {
        return Err(Error::ParamFile(format!("kernel length {taps} must be odd")));
    }
    for (order, k) in derivative_taps.iter().enumerate() {
        if k.len() != taps {
            return Err(Error::ParamFile(format!(
                "order{order} kernel has {} taps, expected {taps}",
                k.len()
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::ParamFile(format!("order{order} kernel not finite")));
        }
        let sum: f64 = k.iter().sum();
        if order > 0 && sum.abs() > ZERO_MEAN_TOL {
            return Err(Error::ParamFile(format!(
                "order{order} kernel is not zero-mean (sum {sum:e})"
            )));
        }
    }

    let v1_directions = file.v1.directions.into_array("v1.directions")?;
    let v1_direction_weights = file.v1.direction_weights.into_array("v1.direction_weights")?;
    let n_v1 = v1_direction_weights.nrows();
    if v1_direction_weights.ncols() != BASIS_ORDERS.len() {
        return Err(Error::ParamFile(format!(
            "v1.direction_weights needs {} columns",
            BASIS_ORDERS.len()
        )));
    }
    if v1_directions.dim() != (n_v1, 3) {
        return Err(Error::ParamFile(format!(
            "v1.directions must be {n_v1}x3, got {:?}",
            v1_directions.dim()
        )));
    }

    let velocities = file.mt.velocities.into_array("mt.velocities")?;
    if velocities.ncols() != 2 {
        return Err(Error::ParamFile("mt.velocities must have 2 columns".into()));
    }
    let mut preferred_velocities: Vec<[f64; 2]> =
        velocities.rows().into_iter().map(|r| [r[0], r[1]]).collect();
    let mut mt_weights = file.mt.weights.into_array("mt.weights")?;
    if mt_weights.dim() != (preferred_velocities.len(), n_v1) {
        return Err(Error::ParamFile(format!(
            "mt.weights must be {}x{n_v1}, got {:?}",
            preferred_velocities.len(),
            mt_weights.dim()
        )));
    }
    if let Some(v) = &overrides.preferred_velocities {
        preferred_velocities = v.clone();
        mt_weights = ioc_weights(&v1_directions, &preferred_velocities);
    }
    if !preferred_velocities.iter().any(|v| v[0] == 0.0 && v[1] == 0.0) {
        return Err(Error::ParamFile(
            "preferred velocities must include zero".into(),
        ));
    }
    if mt_weights.iter().chain(v1_direction_weights.iter()).any(|v| !v.is_finite()) {
        return Err(Error::ParamFile("non-finite weights".into()));
    }

    let sigma_sq_v1 = overrides.sigma_sq_v1.unwrap_or(file.sigma_sq_v1);
    let sigma_sq_mt = overrides.sigma_sq_mt.unwrap_or(file.sigma_sq_mt);
    for s in [sigma_sq_v1, sigma_sq_mt] {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NonPositiveSigma(s));
        }
    }
    let pyramid_levels = overrides.pyramid_levels.unwrap_or(file.pyramid_levels);
    if pyramid_levels == 0 {
        return Err(Error::ParamFile("pyramid_levels must be >= 1".into()));
    }

    Ok(FilterBank {
        derivative_taps,
        v1_directions,
        v1_direction_weights,
        mt_weights,
        preferred_velocities,
        v1_blur: normalize_blur(file.v1.blur, "v1.blur")?,
        mt_blur: normalize_blur(file.mt.blur, "mt.blur")?,
        sigma_sq_v1,
        sigma_sq_mt,
        pyramid_levels,
    })
}

fn normalize_blur(taps: Vec<f64>, name: &'static str) -> Result<Vec<f64>> {
    let sum: f64 = taps.iter().sum();
    if taps.is_empty()
        || taps.len() % 2 == 0
        || taps.iter().any(|t| !t.is_finite() || *t < 0.0)
        || !(sum > 0.0)
    {
        return Err(Error::BlurKernel(name));
    }
    Ok(taps.into_iter().map(|t| t / sum).collect())
}

impl FilterBank {
    /// The bank described by [`REFERENCE_PARAMS`].
    pub fn reference() -> Self {
        build_filter_bank(REFERENCE_PARAMS, &BankOverrides::default())
            .expect("shipped parameter file is valid")
    }

    pub fn temporal_extent(&self) -> usize {
        self.derivative_taps[0].len()
    }

    pub fn n_v1(&self) -> usize {
        self.v1_direction_weights.nrows()
    }

    pub fn n_mt(&self) -> usize {
        self.mt_weights.nrows()
    }

    /// Index of the zero-velocity MT channel.
    pub fn zero_velocity_channel(&self) -> usize {
        self.preferred_velocities
            .iter()
            .position(|v| v[0] == 0.0 && v[1] == 0.0)
            .expect("bank invariant: zero velocity present")
    }

    /// MT channel whose preferred velocity is closest to `v`.
    pub fn nearest_velocity_channel(&self, v: [f64; 2]) -> usize {
        let d = |p: &[f64; 2]| (p[0] - v[0]).powi(2) + (p[1] - v[1]).powi(2);
        (0..self.n_mt())
            .min_by(|&a, &b| d(&self.preferred_velocities[a]).total_cmp(&d(&self.preferred_velocities[b])))
            .unwrap_or(0)
    }

    /// Serialize to the human-readable parameter format.
    pub fn to_param_text(&self) -> String {
        let velocities = Array2::from_shape_fn((self.preferred_velocities.len(), 2), |(i, j)| {
            self.preferred_velocities[i][j]
        });
        let file = ParamFile {
            pyramid_levels: self.pyramid_levels,
            sigma_sq_v1: self.sigma_sq_v1,
            sigma_sq_mt: self.sigma_sq_mt,
            kernels: KernelSection {
                order0: self.derivative_taps[0].clone(),
                order1: self.derivative_taps[1].clone(),
                order2: self.derivative_taps[2].clone(),
                order3: self.derivative_taps[3].clone(),
            },
            v1: V1Section {
                blur: self.v1_blur.clone(),
                directions: Matrix::from_array(&self.v1_directions),
                direction_weights: Matrix::from_array(&self.v1_direction_weights),
            },
            mt: MtSection {
                blur: self.mt_blur.clone(),
                velocities: Matrix::from_array(&velocities),
                weights: Matrix::from_array(&self.mt_weights),
            },
        };
        let body = toml::to_string(&file).expect("parameter file serializes");
        format!("# Motion energy model parameters (V1 -> MT).\n# Matrices are stored row-major.\n\n{body}")
    }
}

/// Construction recipe for the shipped parameter set.
#[derive(Debug, Clone)]
pub struct BankDesign {
    pub sigma: f64,
    pub radius: usize,
    pub n_v1: usize,
    pub speeds: Vec<f64>,
    pub n_directions: usize,
    pub v1_blur_sigma: f64,
    pub v1_blur_radius: usize,
    pub mt_blur_sigma: f64,
    pub mt_blur_radius: usize,
    pub sigma_sq_v1: f64,
    pub sigma_sq_mt: f64,
    pub pyramid_levels: usize,
}

impl Default for BankDesign {
    fn default() -> Self {
        BankDesign {
            sigma: 1.25,
            radius: 4,
            n_v1: 28,
            speeds: vec![0.5, 1.0, 2.0],
            n_directions: 8,
            v1_blur_sigma: 1.0,
            v1_blur_radius: 2,
            mt_blur_sigma: 2.0,
            mt_blur_radius: 4,
            sigma_sq_v1: 1e-3,
            sigma_sq_mt: 2e-3,
            pyramid_levels: 5,
        }
    }
}

impl BankDesign {
    pub fn build(&self) -> FilterBank {
        let derivative_taps = derivative_kernels(self.sigma, self.radius);
        let v1_directions = hemisphere_directions(self.n_v1);
        let v1_direction_weights = steering_weights(&v1_directions);
        let mut preferred_velocities = vec![[0.0, 0.0]];
        for &speed in &self.speeds {
            for k in 0..self.n_directions {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / self.n_directions as f64;
                preferred_velocities.push([speed * theta.cos(), speed * theta.sin()]);
            }
        }
        let mt_weights = ioc_weights(&v1_directions, &preferred_velocities);
        FilterBank {
            derivative_taps,
            v1_directions,
            v1_direction_weights,
            mt_weights,
            preferred_velocities,
            v1_blur: gaussian_taps(self.v1_blur_sigma, self.v1_blur_radius),
            mt_blur: gaussian_taps(self.mt_blur_sigma, self.mt_blur_radius),
            sigma_sq_v1: self.sigma_sq_v1,
            sigma_sq_mt: self.sigma_sq_mt,
            pyramid_levels: self.pyramid_levels,
        }
    }
}

/// Sampled Gaussian derivatives of orders 0..=3; orders >= 1 are made
/// exactly zero-mean.
pub fn derivative_kernels(sigma: f64, radius: usize) -> [Vec<f64>; 4] {
    let g = gaussian_taps(sigma, radius);
    let s2 = sigma * sigma;
    let xs: Vec<f64> = (0..=2 * radius).map(|k| k as f64 - radius as f64).collect();
    let poly: [&dyn Fn(f64) -> f64; 4] = [
        &|_| 1.0,
        &|x| -x / s2,
        &|x| x * x / (s2 * s2) - 1.0 / s2,
        &|x| -x * x * x / (s2 * s2 * s2) + 3.0 * x / (s2 * s2),
    ];
    let mut out: [Vec<f64>; 4] = Default::default();
    for (order, p) in poly.iter().enumerate() {
        let mut k: Vec<f64> = xs.iter().zip(&g).map(|(&x, &gv)| p(x) * gv).collect();
        if order > 0 {
            let mean = k.iter().sum::<f64>() / k.len() as f64;
            k.iter_mut().for_each(|v| *v -= mean);
            if order % 2 == 1 {
                // restore exact antisymmetry after the mean shift
                let n = k.len();
                for i in 0..n / 2 {
                    let a = 0.5 * (k[i] - k[n - 1 - i]);
                    k[i] = a;
                    k[n - 1 - i] = -a;
                }
                k[n / 2] = 0.0;
            }
        }
        out[order] = k;
    }
    out
}

/// Quasi-uniform unit vectors `(dx, dy, dt)` on the `dt >= 0` hemisphere.
pub fn hemisphere_directions(n: usize) -> Array2<f64> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut d = Array2::zeros((n, 3));
    for i in 0..n {
        let z = (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let phi = golden * i as f64;
        d[[i, 0]] = r * phi.cos();
        d[[i, 1]] = r * phi.sin();
        d[[i, 2]] = z;
    }
    d
}

fn factorial(n: usize) -> f64 {
    (1..=n).product::<usize>() as f64
}

/// Multinomial expansion of `(d · ∇)^3` over the separable basis.
pub fn steering_weights(directions: &Array2<f64>) -> Array2<f64> {
    let mut w = Array2::zeros((directions.nrows(), BASIS_ORDERS.len()));
    for (i, d) in directions.rows().into_iter().enumerate() {
        for (j, &[a, b, c]) in BASIS_ORDERS.iter().enumerate() {
            let coeff = factorial(3) / (factorial(a) * factorial(b) * factorial(c));
            w[[i, j]] = coeff * d[0].powi(a as i32) * d[1].powi(b as i32) * d[2].powi(c as i32);
        }
    }
    w
}

/// Intersection-of-constraints weights.
///
/// For velocity `v` the constraint plane has normal `(u, v, 1)`. A V1
/// channel with orientation `d` sees a fraction `c = 1 - (d·n)^2` of a
/// broadband pattern's energy spread over that plane, and the expected
/// energy profile across channels is `c^3`. Each row is that profile with
/// its mean removed, scaled to unit norm.
pub fn ioc_weights(directions: &Array2<f64>, velocities: &[[f64; 2]]) -> Array2<f64> {
    let n_v1 = directions.nrows();
    let mut w = Array2::zeros((velocities.len(), n_v1));
    for (k, v) in velocities.iter().enumerate() {
        let norm = (v[0] * v[0] + v[1] * v[1] + 1.0).sqrt();
        let n = [v[0] / norm, v[1] / norm, 1.0 / norm];
        let profile: Vec<f64> = directions
            .rows()
            .into_iter()
            .map(|d| {
                let dot = d[0] * n[0] + d[1] * n[1] + d[2] * n[2];
                (1.0 - dot * dot).powi(3)
            })
            .collect();
        let mean = profile.iter().sum::<f64>() / n_v1 as f64;
        let centered: Vec<f64> = profile.iter().map(|p| p - mean).collect();
        let len = centered.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
        for (i, c) in centered.iter().enumerate() {
            w[[k, i]] = c / len;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `cargo test -p motionseg regenerate_reference_params -- --ignored`
    #[test]
    #[ignore]
    fn regenerate_reference_params() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/params/reference.toml");
        std::fs::write(path, BankDesign::default().build().to_param_text()).unwrap();
    }

    #[test]
    fn shipped_file_matches_design() {
        let shipped = FilterBank::reference();
        let derived = BankDesign::default().build();
        assert_eq!(shipped.n_v1(), derived.n_v1());
        assert_eq!(shipped.n_mt(), derived.n_mt());
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        for o in 0..4 {
            assert!(close(&shipped.derivative_taps[o], &derived.derivative_taps[o]));
        }
        assert!(close(
            shipped.mt_weights.as_slice().unwrap(),
            derived.mt_weights.as_slice().unwrap()
        ));
        assert!(close(
            shipped.v1_direction_weights.as_slice().unwrap(),
            derived.v1_direction_weights.as_slice().unwrap()
        ));
    }

    #[test]
    fn reference_has_28_v1_channels() {
        let bank = FilterBank::reference();
        assert_eq!(bank.n_v1(), 28);
        assert_eq!(bank.pyramid_levels, 5);
        assert_eq!(bank.preferred_velocities[bank.zero_velocity_channel()], [0.0, 0.0]);
    }

    #[test]
    fn blur_kernels_sum_to_one() {
        let bank = FilterBank::reference();
        for k in [&bank.v1_blur, &bank.mt_blur] {
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(k.iter().all(|&t| t >= 0.0));
        }
    }

    #[test]
    fn derivative_kernels_reject_dc() {
        let k = derivative_kernels(1.25, 4);
        for order in 1..4 {
            assert!(k[order].iter().sum::<f64>().abs() < 1e-15);
        }
        assert!((k[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let bank = FilterBank::reference();
        let again = build_filter_bank(&bank.to_param_text(), &BankOverrides::default()).unwrap();
        assert_eq!(bank, again);
    }

    #[test]
    fn rejects_bad_sigma() {
        let o = BankOverrides {
            sigma_sq_mt: Some(0.0),
            ..Default::default()
        };
        assert!(matches!(
            build_filter_bank(REFERENCE_PARAMS, &o),
            Err(Error::NonPositiveSigma(_))
        ));
    }

    #[test]
    fn rejects_malformed_file() {
        assert!(matches!(
            build_filter_bank("pyramid_levels = \"five\"", &BankOverrides::default()),
            Err(Error::ParamFile(_))
        ));
        let bad = REFERENCE_PARAMS.replacen("blur = [", "blur = [-1.0, ", 1);
        assert!(build_filter_bank(&bad, &BankOverrides::default()).is_err());
    }

    #[test]
    fn rejects_zero_blur() {
        let mut bank = BankDesign::default().build();
        bank.v1_blur.iter_mut().for_each(|t| *t = 0.0);
        assert!(matches!(
            build_filter_bank(&bank.to_param_text(), &BankOverrides::default()),
            Err(Error::BlurKernel("v1.blur"))
        ));
    }

    #[test]
    fn velocity_override_recomputes_weights() {
        let o = BankOverrides {
            preferred_velocities: Some(vec![[0.0, 0.0], [1.0, 0.0]]),
            ..Default::default()
        };
        let bank = build_filter_bank(REFERENCE_PARAMS, &o).unwrap();
        assert_eq!(bank.mt_weights.dim(), (2, 28));
        let missing_zero = BankOverrides {
            preferred_velocities: Some(vec![[1.0, 0.0]]),
            ..Default::default()
        };
        assert!(build_filter_bank(REFERENCE_PARAMS, &missing_zero).is_err());
    }

    #[test]
    fn ioc_rows_are_zero_mean_unit_norm() {
        let bank = BankDesign::default().build();
        for row in bank.mt_weights.rows() {
            assert!(row.sum().abs() < 1e-12);
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
    }
}
