//! Helpers shared by the integration tests and the acceptance run.

use motionseg::motion_energy::{motion_energy, AblationConfig, FilterBank};
use motionseg::VideoVolume;
use ndarray::{Array3, Axis};

/// Sum of three sinusoids at 60° spacing translating rigidly with `v`, so
/// that the motion is unambiguous (no aperture problem).
pub fn drifting_plaid(v: [f64; 2], freq: f64, size: usize, phase: f64) -> VideoVolume {
    let comps: Vec<(f64, f64, f64)> = (0..3)
        .map(|i| {
            let th = phase + i as f64 * std::f64::consts::PI / 3.0;
            (freq * th.cos(), freq * th.sin(), 1.3 * i as f64 + phase)
        })
        .collect();
    let frames = Array3::from_shape_fn((9, size, size), |(t, y, x)| {
        let xs = x as f64 - v[0] * t as f64;
        let ys = y as f64 - v[1] * t as f64;
        let s: f64 = comps.iter().map(|(kx, ky, p)| (kx * xs + ky * ys + p).cos()).sum();
        0.5 + s / 6.5
    });
    VideoVolume::new(frames, 30.0).unwrap()
}

/// Fraction of interior pixels at the finest scale whose strongest MT
/// channel is `target` when the plaid moves with `v`.
pub fn argmax_fraction(bank: &FilterBank, v: [f64; 2], target: usize, freq: f64) -> f64 {
    let size = 48;
    let margin = 8;
    let video = drifting_plaid(v, freq, size, 0.3);
    let maps = motion_energy(&video, bank, &AblationConfig::default()).unwrap();
    let s0 = &maps.scales[0];
    let mut hit = 0;
    let mut total = 0;
    for y in margin..size - margin {
        for x in margin..size - margin {
            let best = s0
                .index_axis(Axis(1), y)
                .index_axis(Axis(1), x)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            total += 1;
            hit += usize::from(best == target);
        }
    }
    hit as f64 / total as f64
}

/// Worst per-channel argmax fraction over every preferred velocity.
pub fn worst_tuning(bank: &FilterBank, freq: f64) -> f64 {
    bank.preferred_velocities
        .iter()
        .enumerate()
        .map(|(k, &v)| argmax_fraction(bank, v, k, freq))
        .fold(1.0, f64::min)
}
