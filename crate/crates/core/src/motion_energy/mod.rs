//! Two-stage (V1 → MT) motion energy model evaluated on a spatial pyramid.

mod ablation;
mod bank;
mod export;
pub mod pipeline;

use ndarray::{s, Array3, Array4, Axis};

pub use ablation::{AblationConfig, LayerModes, MtNonlinearity, NormKind, TrainMode, V1Nonlinearity};
pub use bank::{
    build_filter_bank, derivative_kernels, hemisphere_directions, ioc_weights, steering_weights,
    BankDesign, BankOverrides, FilterBank, BASIS_ORDERS, REFERENCE_PARAMS,
};
pub use export::{read_energy_maps, write_energy_maps, MAGIC as ENERGY_MAGIC};
pub use pipeline::{Constants, ScaleCache, StageWeights};

use crate::error::{Error, Result};
use crate::filter::{correlate_cols, correlate_rows, correlate_time_valid, pyr_down};
use crate::volume::VideoVolume;

/// Per-scale MT responses, finest scale first; each entry is C×H×W.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionEnergyMaps {
    pub scales: Vec<Array3<f64>>,
}

impl MotionEnergyMaps {
    pub fn channels(&self) -> usize {
        self.scales.first().map_or(0, |s| s.dim().0)
    }
}

/// Blur-and-decimate pyramid; level 0 is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalePyramid {
    pub levels: Vec<VideoVolume>,
}

/// Spatial size of pyramid level `k` for an `n`-pixel axis.
pub fn level_size(n: usize, k: usize) -> usize {
    n.div_ceil(1 << k)
}

pub fn gaussian_pyramid(video: &VideoVolume, levels: usize) -> Result<ScalePyramid> {
    let (h, w) = (video.height(), video.width());
    let min = 1usize << levels.saturating_sub(1);
    if levels == 0 || h < min || w < min {
        return Err(Error::TooManyLevels {
            levels,
            min,
            height: h,
            width: w,
        });
    }
    let mut out = vec![video.clone()];
    for _ in 1..levels {
        let prev = out.last().expect("non-empty").frames();
        let (t, ph, pw) = prev.dim();
        let mut next = Array3::zeros((t, ph.div_ceil(2), pw.div_ceil(2)));
        for (i, frame) in prev.axis_iter(Axis(0)).enumerate() {
            next.slice_mut(s![i, .., ..]).assign(&pyr_down(frame));
        }
        let level = VideoVolume::new(next.mapv(|v| v.clamp(0.0, 1.0)), video.frame_rate())?;
        out.push(level);
    }
    Ok(ScalePyramid { levels: out })
}

/// Responses of the ten separable basis kernels, shape 10×T'×H×W with
/// valid temporal and reflect spatial boundaries.
pub fn basis_responses(frames: &Array3<f64>, bank: &FilterBank) -> Result<Array4<f64>> {
    let need = bank.temporal_extent();
    let (t, h, w) = frames.dim();
    if t < need {
        return Err(Error::TooShort { have: t, need });
    }
    let temporal: Vec<Array3<f64>> = (0..4)
        .map(|order| correlate_time_valid(frames, &bank.derivative_taps[order]))
        .collect();
    let t_out = t + 1 - need;
    let mut out = Array4::zeros((BASIS_ORDERS.len(), t_out, h, w));
    for (j, &[ox, oy, ot]) in BASIS_ORDERS.iter().enumerate() {
        for ti in 0..t_out {
            let f = temporal[ot].index_axis(Axis(0), ti);
            let fy = correlate_cols(f, &bank.derivative_taps[oy]);
            let fxy = correlate_rows(fy.view(), &bank.derivative_taps[ox]);
            out.slice_mut(s![j, ti, .., ..]).assign(&fxy);
        }
    }
    Ok(out)
}

pub fn constants(bank: &FilterBank) -> Constants {
    Constants {
        sigma_sq_v1: bank.sigma_sq_v1,
        sigma_sq_mt: bank.sigma_sq_mt,
    }
}

/// Divisive normalization across channels: `x_i / (sum_j x_j + sigma_sq)`.
pub fn channel_norm(maps: &Array3<f64>, sigma_sq: f64) -> Result<Array3<f64>> {
    if !(sigma_sq > 0.0) {
        return Err(Error::NonPositiveSigma(sigma_sq));
    }
    if let Some(v) = maps.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::NegativeInput(*v));
    }
    Ok(pipeline::channel_norm_unchecked(maps, sigma_sq))
}

/// V1 stage on a single scale; returns N_v1×T'×H×W.
pub fn v1_stage(
    volume: &VideoVolume,
    bank: &FilterBank,
    ablation: &AblationConfig,
) -> Result<Array4<f64>> {
    let basis = basis_responses(volume.frames(), bank)?;
    let v1_only = AblationConfig {
        include_mt_stage: false,
        ..*ablation
    };
    let weights = StageWeights::from_bank(bank);
    let (_, t_out, h, w) = basis.dim();
    let mut out = Array4::zeros((bank.n_v1(), t_out, h, w));
    for ti in 0..t_out {
        let b = basis.slice(s![.., ti, .., ..]);
        let r = pipeline::forward_scale(b, &weights, constants(bank), &v1_only, None);
        out.slice_mut(s![.., ti, .., ..]).assign(&r);
    }
    Ok(out)
}

/// MT stage on one scale of V1 output (N_v1×H×W).
pub fn mt_stage(
    v1_maps: &Array3<f64>,
    bank: &FilterBank,
    ablation: &AblationConfig,
) -> Result<Array3<f64>> {
    if !ablation.include_mt_stage {
        return Ok(v1_maps.clone());
    }
    if v1_maps.dim().0 != bank.n_v1() {
        return Err(Error::Shape(format!(
            "MT stage expects {} V1 channels, got {}",
            bank.n_v1(),
            v1_maps.dim().0
        )));
    }
    let mut x = if ablation.include_mt_linear {
        pipeline::mix(&bank.mt_weights, v1_maps)
    } else {
        v1_maps.clone()
    };
    x.mapv_inplace(|v| match ablation.mt_nonlinearity {
        MtNonlinearity::RectifiedSquare => v.max(0.0).powi(2),
        MtNonlinearity::Relu => v.max(0.0),
    });
    x = match ablation.norm_kind {
        NormKind::Channel => pipeline::channel_norm_unchecked(&x, bank.sigma_sq_mt),
        NormKind::Instance => pipeline::instance_norm_unchecked(&x),
        NormKind::None => x,
    };
    if ablation.include_mt_blur {
        x = pipeline::blur_forward(&x, &bank.mt_blur);
    }
    Ok(x)
}

/// Basis responses of every pyramid level, one 10×T'×H×W array per level.
pub fn basis_pyramid(video: &VideoVolume, bank: &FilterBank) -> Result<Vec<Array4<f64>>> {
    let pyramid = gaussian_pyramid(video, bank.pyramid_levels)?;
    pyramid
        .levels
        .iter()
        .map(|level| basis_responses(level.frames(), bank))
        .collect()
}

/// Model output for a window of exactly `bank.temporal_extent()` frames.
pub fn motion_energy(
    video: &VideoVolume,
    bank: &FilterBank,
    ablation: &AblationConfig,
) -> Result<MotionEnergyMaps> {
    let need = bank.temporal_extent();
    if video.len() != need {
        return Err(Error::WindowLength {
            expected: need,
            actual: video.len(),
        });
    }
    let mut maps = motion_energy_sequence(video, bank, ablation)?;
    Ok(maps.pop().expect("one output frame"))
}

/// Model output for every fully contained window of a video; entry `i`
/// belongs to the window centered on frame `i + extent / 2`.
pub fn motion_energy_sequence(
    video: &VideoVolume,
    bank: &FilterBank,
    ablation: &AblationConfig,
) -> Result<Vec<MotionEnergyMaps>> {
    let weights = StageWeights::from_bank(bank);
    motion_energy_with_weights(video, bank, &weights, ablation)
}

pub fn motion_energy_with_weights(
    video: &VideoVolume,
    bank: &FilterBank,
    weights: &StageWeights,
    ablation: &AblationConfig,
) -> Result<Vec<MotionEnergyMaps>> {
    let basis = basis_pyramid(video, bank)?;
    let t_out = basis[0].dim().1;
    Ok((0..t_out)
        .map(|ti| MotionEnergyMaps {
            scales: basis
                .iter()
                .map(|b| {
                    pipeline::forward_scale(
                        b.slice(s![.., ti, .., ..]),
                        weights,
                        constants(bank),
                        ablation,
                        None,
                    )
                })
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_video(t: usize, h: usize, w: usize, seed: u64) -> VideoVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VideoVolume::new(
            Array3::from_shape_fn((t, h, w), |_| rng.random_range(0.0..0.8)),
            30.0,
        )
        .unwrap()
    }

    #[test]
    fn pyramid_sizes() {
        let p = gaussian_pyramid(&noise_video(2, 64, 64, 1), 5).unwrap();
        let sizes: Vec<usize> = p.levels.iter().map(|l| l.height()).collect();
        assert_eq!(sizes, vec![64, 32, 16, 8, 4]);
        let odd = gaussian_pyramid(&noise_video(1, 13, 9, 1), 3).unwrap();
        assert_eq!((odd.levels[2].height(), odd.levels[2].width()), (4, 3));
    }

    #[test]
    fn pyramid_single_level_is_identity() {
        let v = noise_video(3, 10, 12, 2);
        assert_eq!(gaussian_pyramid(&v, 1).unwrap().levels[0], v);
    }

    #[test]
    fn pyramid_constant_video() {
        let v = VideoVolume::new(Array3::from_elem((2, 32, 32), 0.3), 30.0).unwrap();
        for level in gaussian_pyramid(&v, 5).unwrap().levels {
            assert!(level.frames().iter().all(|x| (x - 0.3).abs() < 1e-12));
        }
    }

    #[test]
    fn pyramid_too_many_levels() {
        assert!(matches!(
            gaussian_pyramid(&noise_video(1, 8, 8, 0), 5),
            Err(Error::TooManyLevels { .. })
        ));
    }

    #[test]
    fn basis_rejects_constant_volume() {
        let bank = FilterBank::reference();
        let v = Array3::from_elem((9, 12, 12), 0.7);
        let b = basis_responses(&v, &bank).unwrap();
        assert!(b.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn dc_offset_leaves_linear_responses_unchanged() {
        let bank = FilterBank::reference();
        let v = noise_video(9, 16, 16, 4);
        let shifted = v.frames().mapv(|x| x + 0.2);
        let a = basis_responses(v.frames(), &bank).unwrap();
        let b = basis_responses(&shifted, &bank).unwrap();
        let lin_a = pipeline::mix(&bank.v1_direction_weights, &a.slice(s![.., 0, .., ..]).to_owned());
        let lin_b = pipeline::mix(&bank.v1_direction_weights, &b.slice(s![.., 0, .., ..]).to_owned());
        let max = (&lin_a - &lin_b).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(max < 1e-9, "{max}");
    }

    #[test]
    fn v1_zero_volume_gives_zero() {
        let bank = FilterBank::reference();
        let v = VideoVolume::new(Array3::zeros((9, 8, 8)), 30.0).unwrap();
        let out = v1_stage(&v, &bank, &AblationConfig::default()).unwrap();
        assert_eq!(out.dim(), (28, 1, 8, 8));
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn v1_valid_temporal_extent() {
        let bank = FilterBank::reference();
        let out = v1_stage(&noise_video(12, 8, 8, 3), &bank, &AblationConfig::default()).unwrap();
        assert_eq!(out.dim().1, 4);
        assert!(matches!(
            v1_stage(&noise_video(8, 8, 8, 3), &bank, &AblationConfig::default()),
            Err(Error::TooShort { have: 8, need: 9 })
        ));
    }

    #[test]
    fn v1_energy_is_homogeneous_of_degree_two() {
        let bank = FilterBank::reference();
        let raw = AblationConfig {
            norm_kind: NormKind::None,
            include_v1_blur: false,
            ..Default::default()
        };
        let v = noise_video(9, 10, 10, 5);
        let v2 = VideoVolume::new(v.frames().mapv(|x| 0.5 * x), 30.0).unwrap();
        let a = v1_stage(&v, &bank, &raw).unwrap();
        let b = v1_stage(&v2, &bank, &raw).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - 4.0 * y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn channel_norm_cases() {
        let z = Array3::<f64>::zeros((3, 2, 2));
        assert!(channel_norm(&z, 0.1).unwrap().iter().all(|&x| x == 0.0));
        let mut one = Array3::<f64>::zeros((3, 1, 1));
        one[[0, 0, 0]] = 0.25;
        let out = channel_norm(&one, 0.25).unwrap();
        assert_eq!(out[[0, 0, 0]], 0.5);
        assert_eq!(out[[1, 0, 0]], 0.0);
        let mut neg = z.clone();
        neg[[1, 1, 1]] = -1.0;
        assert!(matches!(channel_norm(&neg, 0.1), Err(Error::NegativeInput(_))));
        assert!(matches!(channel_norm(&z, 0.0), Err(Error::NonPositiveSigma(_))));
    }

    #[test]
    fn mt_one_hot_at_sigma_gives_half() {
        let bank = FilterBank::reference();
        let ablation = AblationConfig {
            include_mt_linear: false,
            include_mt_blur: false,
            ..Default::default()
        };
        let mut v1 = Array3::zeros((bank.n_v1(), 2, 2));
        v1.slice_mut(s![3, .., ..]).fill(bank.sigma_sq_mt.sqrt());
        let out = mt_stage(&v1, &bank, &ablation).unwrap();
        for ((c, _, _), &v) in out.indexed_iter() {
            let expect = if c == 3 { 0.5 } else { 0.0 };
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn mt_zero_and_passthrough() {
        let bank = FilterBank::reference();
        let z = Array3::zeros((bank.n_v1(), 4, 4));
        let out = mt_stage(&z, &bank, &AblationConfig::default()).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
        let v1 = Array3::from_elem((bank.n_v1(), 4, 4), 0.01);
        let off = AblationConfig {
            include_mt_stage: false,
            ..Default::default()
        };
        assert_eq!(mt_stage(&v1, &bank, &off).unwrap(), v1);
        assert!(mt_stage(&Array3::zeros((3, 4, 4)), &bank, &AblationConfig::default()).is_err());
    }

    #[test]
    fn uniform_video_gives_zero_energy() {
        let bank = FilterBank::reference();
        let v = VideoVolume::new(Array3::from_elem((9, 32, 32), 0.4), 30.0).unwrap();
        let maps = motion_energy(&v, &bank, &AblationConfig::default()).unwrap();
        assert_eq!(maps.scales.len(), 5);
        for s in &maps.scales {
            assert!(s.iter().all(|x| x.abs() < 1e-9));
        }
    }

    #[test]
    fn stages_compose_to_full_model() {
        let bank = FilterBank::reference();
        let v = noise_video(9, 16, 16, 9);
        let ab = AblationConfig::default();
        let v1 = v1_stage(&v, &bank, &ab).unwrap();
        let mt = mt_stage(&v1.index_axis(Axis(1), 0).to_owned(), &bank, &ab).unwrap();
        let full = motion_energy(&v, &bank, &ab).unwrap();
        let diff = (&mt - &full.scales[0]).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        assert!(diff < 1e-12);
    }

    #[test]
    fn normalization_bounds_and_determinism() {
        let bank = FilterBank::reference();
        let v = noise_video(9, 32, 32, 11);
        let a = motion_energy(&v, &bank, &AblationConfig::default()).unwrap();
        let b = motion_energy(&v, &bank, &AblationConfig::default()).unwrap();
        assert_eq!(a, b);
        for s in &a.scales {
            assert!(s.iter().all(|&x| (0.0..1.0).contains(&x)));
            assert!(s.sum_axis(Axis(0)).iter().all(|&x| x < 1.0));
        }
    }

    #[test]
    fn window_length_enforced() {
        let bank = FilterBank::reference();
        assert!(matches!(
            motion_energy(&noise_video(10, 16, 16, 1), &bank, &AblationConfig::default()),
            Err(Error::WindowLength { expected: 9, actual: 10 })
        ));
    }
}
