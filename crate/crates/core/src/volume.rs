//! Grayscale spatiotemporal volumes and binary masks.

use ndarray::{s, Array2, Array3, ArrayView2};

use crate::error::{Error, Result};

/// Binary foreground mask, `true` marks the foreground.
pub type Mask = Array2<bool>;

/// A T×H×W luminance volume with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoVolume {
    frames: Array3<f64>,
    frame_rate: f64,
}

impl VideoVolume {
    pub fn new(frames: Array3<f64>, frame_rate: f64) -> Result<Self> {
        if frames.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidVolume(
                "values must be finite and within [0, 1]".into(),
            ));
        }
        let (t, h, w) = frames.dim();
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidVolume(format!("empty volume {t}x{h}x{w}")));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn from_frames(frames: &[Array2<f64>], frame_rate: f64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidVolume("no frames".into()))?;
        let (h, w) = first.dim();
        let mut vol = Array3::zeros((frames.len(), h, w));
        for (t, f) in frames.iter().enumerate() {
            if f.dim() != (h, w) {
                return Err(Error::Shape(format!(
                    "frame {t} is {:?}, expected {:?}",
                    f.dim(),
                    (h, w)
                )));
            }
            vol.slice_mut(s![t, .., ..]).assign(f);
        }
        Self::new(vol, frame_rate)
    }

    pub fn frames(&self) -> &Array3<f64> {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f64> {
        self.frames.slice(s![t, .., ..])
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.dim().1
    }

    pub fn width(&self) -> usize {
        self.frames.dim().2
    }

    /// Frames `[start, start + len)` as a new volume.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::WindowLength {
                expected: len,
                actual: self.len().saturating_sub(start),
            });
        }
        Ok(Self {
            frames: self.frames.slice(s![start..start + len, .., ..]).to_owned(),
            frame_rate: self.frame_rate,
        })
    }

    /// The window of `len` frames centered on `center`.
    pub fn centered_window(&self, center: usize, len: usize) -> Result<Self> {
        let half = len / 2;
        if center < half {
            return Err(Error::WindowLength {
                expected: len,
                actual: center + 1,
            });
        }
        self.window(center - half, len)
    }

    pub fn into_frames(self) -> Array3<f64> {
        self.frames
    }
}

/// Number of foreground pixels.
pub fn mask_area(mask: &Mask) -> usize {
    mask.iter().filter(|&&m| m).count()
}
