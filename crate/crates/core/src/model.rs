//! A motion source (motion energy or optical flow) feeding the segmentation
//! head, evaluated over sliding 9-frame windows.

use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, ArrayView1, ArrayViewD, ArrayViewMut1, ArrayViewMutD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{lucas_kanade, multiframe_flows, multiscale_flow, FlowField, LkConfig};
use crate::motion_energy::{
    basis_pyramid, constants, motion_energy_with_weights, pipeline, AblationConfig, FilterBank,
    StageWeights,
};
use crate::seg::checkpoint::Checkpoint;
use crate::seg::{predict_mask, seg_forward, SegNetParams};
use crate::volume::{Mask, VideoVolume};

/// Frames in the sliding window; the prediction belongs to its center.
pub const WINDOW: usize = 9;
pub const HALF_WINDOW: usize = WINDOW / 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionSource {
    MotionEnergy,
    /// Flow from the center frame to the next, at every scale.
    FlowMultiscale,
    /// Flows from the center frame to the 8 other window frames.
    FlowMultiframe,
}

impl MotionSource {
    pub fn as_str(self) -> &'static str {
        match self {
            MotionSource::MotionEnergy => "motion_energy",
            MotionSource::FlowMultiscale => "flow_multiscale",
            MotionSource::FlowMultiframe => "flow_multiframe",
        }
    }
}

impl FromStr for MotionSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "motion_energy" | "energy" => Ok(MotionSource::MotionEnergy),
            "flow_multiscale" => Ok(MotionSource::FlowMultiscale),
            "flow_multiframe" => Ok(MotionSource::FlowMultiframe),
            other => Err(Error::Config(format!("unknown motion source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowEstimator {
    #[default]
    LucasKanade,
    /// Precomputed `.flo` predictions stored next to the video.
    External,
}

impl FromStr for FlowEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "lucas_kanade" | "lk" => Ok(FlowEstimator::LucasKanade),
            "external" => Ok(FlowEstimator::External),
            other => Err(Error::Config(format!("unknown flow estimator `{other}`"))),
        }
    }
}

/// Everything except the head's weights that determines the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub source: MotionSource,
    pub estimator: FlowEstimator,
    pub ablation: AblationConfig,
    pub lk: LkConfig,
    pub scales: usize,
    pub features: usize,
}

#[derive(Debug, Clone)]
pub struct SegModel {
    pub spec: ModelSpec,
    pub bank: FilterBank,
    pub stage: StageWeights,
    pub head: SegNetParams,
}

/// Per-window features, finest scale first.
pub type WindowFeatures = Vec<Array3<f64>>;

impl SegModel {
    pub fn new(spec: ModelSpec, bank: FilterBank, seed: u64) -> Result<Self> {
        if spec.scales == 0 || spec.features == 0 {
            return Err(Error::Config("scales and feature width must be >= 1".into()));
        }
        if spec.source == MotionSource::MotionEnergy && spec.scales != bank.pyramid_levels {
            return Err(Error::Config(format!(
                "motion energy produces {} scales, model expects {}",
                bank.pyramid_levels, spec.scales
            )));
        }
        let in_channels = match spec.source {
            MotionSource::MotionEnergy => spec.ablation.output_channels(bank.n_v1(), bank.n_mt()),
            MotionSource::FlowMultiscale => 2,
            MotionSource::FlowMultiframe => 2 * (WINDOW - 1),
        };
        let stage = StageWeights::from_bank(&bank);
        let head = SegNetParams::init(in_channels, spec.features, seed);
        Ok(SegModel {
            spec,
            bank,
            stage,
            head,
        })
    }

    /// Number of evaluable window centers in a `t`-frame video.
    pub fn evaluable_frames(t: usize) -> Result<std::ops::Range<usize>> {
        if t < WINDOW {
            return Err(Error::TooShort { have: t, need: WINDOW });
        }
        Ok(HALF_WINDOW..t - HALF_WINDOW)
    }

    fn flow_features(&self, flows: &[FlowField]) -> Result<WindowFeatures> {
        let pyramids = flows
            .iter()
            .map(|f| multiscale_flow(f, self.spec.scales))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.spec.scales)
            .map(|k| {
                let parts: Vec<Array3<f64>> = pyramids.iter().map(|p| p[k].to_channels()).collect();
                let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
                ndarray::concatenate(ndarray::Axis(0), &views).expect("equal extents")
            })
            .collect())
    }

    fn lk(&self, a: ndarray::ArrayView2<'_, f64>, b: ndarray::ArrayView2<'_, f64>) -> Result<FlowField> {
        lucas_kanade(a, b, &self.spec.lk)
    }

    /// Features for every window center `t` in `[4, T-5]`, in order.
    /// `external` supplies `t -> t+1` flow predictions when the estimator
    /// is [`FlowEstimator::External`].
    pub fn video_features(&self, video: &VideoVolume, external: Option<&[FlowField]>) -> Result<Vec<WindowFeatures>> {
        let centers = Self::evaluable_frames(video.len())?;
        match self.spec.source {
            MotionSource::MotionEnergy => Ok(motion_energy_with_weights(
                video,
                &self.bank,
                &self.stage,
                &self.spec.ablation,
            )?
            .into_iter()
            .map(|m| m.scales)
            .collect()),
            MotionSource::FlowMultiscale => {
                let ext = match self.spec.estimator {
                    FlowEstimator::External => {
                        let e = external.ok_or_else(|| Error::MissingData("external flow predictions".into()))?;
                        if e.len() + 1 < video.len() {
                            return Err(Error::MissingData(format!(
                                "{} flow predictions for {} frames",
                                e.len(),
                                video.len()
                            )));
                        }
                        Some(e)
                    }
                    FlowEstimator::LucasKanade => None,
                };
                centers
                    .into_par_iter()
                    .map(|t| {
                        let flow = match ext {
                            Some(e) => e[t].clone(),
                            None => self.lk(video.frame(t), video.frame(t + 1))?,
                        };
                        self.flow_features(std::slice::from_ref(&flow))
                    })
                    .collect()
            }
            MotionSource::FlowMultiframe => {
                if self.spec.estimator == FlowEstimator::External {
                    return Err(Error::Config(
                        "multi-frame flow needs an in-process estimator".into(),
                    ));
                }
                centers
                    .into_par_iter()
                    .map(|t| {
                        let window = video.centered_window(t, WINDOW)?;
                        let flows = multiframe_flows(&window, |a, b| self.lk(a, b))?;
                        self.flow_features(&flows)
                    })
                    .collect()
            }
        }
    }

    pub fn logits(&self, features: &WindowFeatures) -> Result<Array2<f64>> {
        seg_forward(features, &self.head)
    }

    /// Thresholded predictions for frames `4..T-4`.
    pub fn predict_video(&self, video: &VideoVolume, external: Option<&[FlowField]>) -> Result<Vec<Mask>> {
        let feats = self.video_features(video, external)?;
        feats
            .par_iter()
            .map(|f| self.logits(f).map(|l| predict_mask(&l)))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config = serde_json::json!({
            "model": self.spec,
            "in_channels": self.head.in_channels(),
            "bank": self.bank.to_param_text(),
        });
        let mut ck = Checkpoint::from_params(&self.head, config);
        for (name, t) in stage_tensors(&self.stage) {
            ck.tensors.push((format!("me.{name}"), t.to_owned()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_value(ck.config["model"].clone())?;
        let bank_text = ck.config["bank"]
            .as_str()
            .ok_or_else(|| Error::Format("checkpoint lacks the filter bank".into()))?;
        let bank = crate::motion_energy::build_filter_bank(bank_text, &Default::default())?;
        let mut model = SegModel::new(spec, bank, 0)?;
        model.head = ck.params()?;
        if model.head.in_channels() != SegModel::new(model.spec.clone(), model.bank.clone(), 0)?.head.in_channels() {
            return Err(Error::Format("head input width does not match the motion source".into()));
        }
        for (name, mut dst) in stage_tensors_mut(&mut model.stage) {
            if let Some(src) = ck.tensor(&format!("me.{name}")) {
                if src.shape() != dst.shape() {
                    return Err(Error::Format(format!("stage tensor {name} has the wrong shape")));
                }
                dst.assign(src);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Basis responses per window center, for training with trainable
    /// motion-energy layers. Entry `[t][k]` is the 10×H_k×W_k basis at
    /// scale `k`.
    pub fn video_basis(&self, video: &VideoVolume) -> Result<Vec<Vec<Array3<f64>>>> {
        let basis = basis_pyramid(video, &self.bank)?;
        let n = basis[0].dim().1;
        Ok((0..n)
            .map(|t| basis.iter().map(|b| b.slice(s![.., t, .., ..]).to_owned()).collect())
            .collect())
    }

    /// Motion energy output from cached basis responses with the model's
    /// current stage weights.
    pub fn energy_from_basis(&self, basis: &[Array3<f64>], caches: Option<&mut Vec<pipeline::ScaleCache>>) -> WindowFeatures {
        let consts = constants(&self.bank);
        match caches {
            Some(cs) => {
                cs.clear();
                basis
                    .iter()
                    .map(|b| {
                        let mut c = pipeline::ScaleCache::default();
                        let out = pipeline::forward_scale(b.view(), &self.stage, consts, &self.spec.ablation, Some(&mut c));
                        cs.push(c);
                        out
                    })
                    .collect()
            }
            None => basis
                .iter()
                .map(|b| pipeline::forward_scale(b.view(), &self.stage, consts, &self.spec.ablation, None))
                .collect(),
        }
    }
}

pub const STAGE_NAMES: [&str; 4] = ["v1_direction_weights", "v1_blur", "mt_weights", "mt_blur"];

pub fn stage_tensors(w: &StageWeights) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
    vec![
        (STAGE_NAMES[0], w.v1_direction_weights.view().into_dyn()),
        (STAGE_NAMES[1], ArrayView1::from(&w.v1_blur[..]).into_dyn()),
        (STAGE_NAMES[2], w.mt_weights.view().into_dyn()),
        (STAGE_NAMES[3], ArrayView1::from(&w.mt_blur[..]).into_dyn()),
    ]
}

pub fn stage_tensors_mut(w: &mut StageWeights) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
    vec![
        (STAGE_NAMES[0], w.v1_direction_weights.view_mut().into_dyn()),
        (STAGE_NAMES[1], ArrayViewMut1::from(&mut w.v1_blur[..]).into_dyn()),
        (STAGE_NAMES[2], w.mt_weights.view_mut().into_dyn()),
        (STAGE_NAMES[3], ArrayViewMut1::from(&mut w.mt_blur[..]).into_dyn()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{render_scene, sample_scene, SceneConfig};

    fn small_bank() -> FilterBank {
        let mut bank = FilterBank::reference();
        bank.pyramid_levels = 3;
        bank
    }

    fn spec(source: MotionSource, estimator: FlowEstimator) -> ModelSpec {
        ModelSpec {
            source,
            estimator,
            ablation: AblationConfig::default(),
            lk: LkConfig::default(),
            scales: 3,
            features: 4,
        }
    }

    #[test]
    fn evaluable_window_centers() {
        assert_eq!(SegModel::evaluable_frames(90).unwrap().len(), 82);
        assert_eq!(SegModel::evaluable_frames(9).unwrap(), 4..5);
        assert!(matches!(SegModel::evaluable_frames(8), Err(Error::TooShort { have: 8, need: 9 })));
    }

    #[test]
    fn feature_channels_per_source() {
        let c = SceneConfig {
            height: 16,
            width: 16,
            duration_frames: 10,
            texture_period: 16,
            ..Default::default()
        };
        let (video, gt) = render_scene(&sample_scene(0, &c).unwrap()).unwrap();
        for (source, estimator, channels) in [
            (MotionSource::FlowMultiscale, FlowEstimator::External, 2),
            (MotionSource::FlowMultiframe, FlowEstimator::LucasKanade, 16),
            (MotionSource::MotionEnergy, FlowEstimator::LucasKanade, 25),
        ] {
            let m = SegModel::new(spec(source, estimator), small_bank(), 0).unwrap();
            assert_eq!(m.head.in_channels(), channels);
            let f = m.video_features(&video, Some(&gt.flows)).unwrap();
            assert_eq!(f.len(), 2);
            assert_eq!(f[0].len(), 3);
            assert_eq!(f[0][0].dim(), (channels, 16, 16));
            assert_eq!(f[0][2].dim(), (channels, 4, 4));
            let masks = m.predict_video(&video, Some(&gt.flows)).unwrap();
            assert_eq!(masks.len(), 2);
        }
    }

    #[test]
    fn external_flow_is_required() {
        let c = SceneConfig {
            height: 16,
            width: 16,
            duration_frames: 9,
            texture_period: 16,
            ..Default::default()
        };
        let (video, _) = render_scene(&sample_scene(0, &c).unwrap()).unwrap();
        let m = SegModel::new(spec(MotionSource::FlowMultiscale, FlowEstimator::External), small_bank(), 0).unwrap();
        assert!(m.video_features(&video, None).is_err());
    }

    #[test]
    fn scale_count_must_match_bank() {
        let mut s = spec(MotionSource::MotionEnergy, FlowEstimator::LucasKanade);
        s.scales = 5;
        assert!(SegModel::new(s, small_bank(), 0).is_err());
    }
}
