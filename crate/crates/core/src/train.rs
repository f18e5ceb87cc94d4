//! Supervised training of the segmentation head (and optionally the motion
//! energy layers) on sampled video frames.

use std::fs;
use std::path::Path;

use ndarray::{Array3, ArrayD, ArrayViewD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Condition, Manifest, Split, StoredVideo};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::model::{stage_tensors, stage_tensors_mut, MotionSource, SegModel, HALF_WINDOW};
use crate::motion_energy::{constants, pipeline, StageWeights, TrainMode};
use crate::seg::adam::{Adam, AdamConfig};
use crate::seg::{bce_loss, seg_backward, seg_forward_traced, SegNetParams};
use crate::volume::{Mask, VideoVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Write an intermediate checkpoint every this many steps.
    pub checkpoint_every: Option<usize>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 40_000,
            batch: 8,
            seed: 0,
            adam: AdamConfig::default(),
            checkpoint_every: None,
            log_every: 100,
        }
    }
}

/// One training video: its frames, per-frame masks and, for externally
/// estimated flow, the predictions.
#[derive(Debug, Clone)]
pub struct TrainVideo {
    pub split: Split,
    pub video: VideoVolume,
    pub masks: Vec<Mask>,
    pub external_flows: Option<Vec<FlowField>>,
}

impl TrainVideo {
    pub fn from_stored(stored: StoredVideo, split: Split) -> Result<Self> {
        let external_flows = stored.predicted_flows(Condition::Original)?;
        Ok(TrainVideo {
            split,
            video: stored.video,
            masks: stored.masks,
            external_flows,
        })
    }
}

/// Load every training-split video listed in the manifest under `root`.
pub fn load_training_videos(root: impl AsRef<Path>) -> Result<Vec<TrainVideo>> {
    let root = root.as_ref();
    let manifest = Manifest::read(root)?;
    let entries: Vec<_> = manifest.split(Split::Train).cloned().collect();
    if entries.is_empty() {
        return Err(Error::MissingData(format!("no training videos under {}", root.display())));
    }
    entries
        .par_iter()
        .map(|e| TrainVideo::from_stored(StoredVideo::load(root.join(&e.video_dir))?, Split::Train))
        .collect()
}

/// Uniform sampler over `(video, window center)` pairs of training videos.
#[derive(Debug, Clone)]
pub struct FrameSampler {
    pairs: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
}

impl FrameSampler {
    pub fn new(videos: &[TrainVideo], seed: u64) -> Result<Self> {
        let mut pairs = Vec::new();
        for (vi, v) in videos.iter().enumerate() {
            if v.split != Split::Train {
                return Err(Error::Config(format!("video {vi} belongs to the test split")));
            }
            for t in SegModel::evaluable_frames(v.video.len())? {
                pairs.push((vi, t));
            }
        }
        if pairs.is_empty() {
            return Err(Error::MissingData("no training frames".into()));
        }
        Ok(FrameSampler {
            pairs,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn draw(&mut self) -> (usize, usize) {
        self.pairs[self.rng.random_range(0..self.pairs.len())]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config: TrainConfig,
    pub model: crate::model::ModelSpec,
    pub train_videos: usize,
    pub train_frames: usize,
    pub parameters: usize,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SegModel,
    pub loss_history: Vec<f64>,
    pub manifest: RunManifest,
}

fn to_f32(x: &Array3<f64>) -> Array3<f32> {
    x.mapv(|v| v as f32)
}

fn to_f64(x: &Array3<f32>) -> Array3<f64> {
    x.mapv(|v| v as f64)
}

/// Per-frame inputs cached for the whole run, single precision.
enum Cache {
    /// Fixed motion source: the head's inputs.
    Features(Vec<Vec<Vec<Array3<f32>>>>),
    /// Trainable motion energy layers: the basis responses.
    Basis(Vec<Vec<Vec<Array3<f32>>>>),
}

fn stage_trainable(model: &SegModel) -> bool {
    model.spec.source == MotionSource::MotionEnergy && model.spec.ablation.training.any_trainable()
}

fn group_modes(model: &SegModel) -> [TrainMode; 4] {
    let t = model.spec.ablation.training;
    [t.v1_linear, t.v1_blur, t.mt_linear, t.mt_blur]
}

/// Replace the `scratch` groups of the stage weights with seeded random
/// values.
pub fn scratch_init(model: &mut SegModel, seed: u64) {
    let modes = group_modes(model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_57a6e);
    for ((name, mut t), mode) in stage_tensors_mut(&mut model.stage).into_iter().zip(modes) {
        if mode != TrainMode::Scratch {
            continue;
        }
        if name.ends_with("blur") {
            t.mapv_inplace(|_| rng.random_range(0.0..1.0));
            let sum = t.sum();
            t.mapv_inplace(|v| v / sum);
        } else {
            let fan_in = t.shape()[1] as f64;
            let bound = 1.0 / fan_in.sqrt();
            t.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
    }
}

struct SampleGrad {
    loss: f64,
    head: SegNetParams,
    stage: Option<StageWeights>,
}

fn sample_grad(model: &SegModel, cache: &Cache, masks: &[Vec<Mask>], vi: usize, t: usize) -> Result<SampleGrad> {
    let idx = t - HALF_WINDOW;
    let mask = &masks[vi][t];
    match cache {
        Cache::Features(f) => {
            let feats: Vec<Array3<f64>> = f[vi][idx].iter().map(to_f64).collect();
            let (logits, trace) = seg_forward_traced(&feats, &model.head)?;
            let (loss, dl) = bce_loss(&logits, mask)?;
            let (head, _) = seg_backward(&model.head, &trace, &dl);
            Ok(SampleGrad { loss, head, stage: None })
        }
        Cache::Basis(b) => {
            let basis: Vec<Array3<f64>> = b[vi][idx].iter().map(to_f64).collect();
            let mut caches = Vec::new();
            let feats = model.energy_from_basis(&basis, Some(&mut caches));
            let (logits, trace) = seg_forward_traced(&feats, &model.head)?;
            let (loss, dl) = bce_loss(&logits, mask)?;
            let (head, d_feats) = seg_backward(&model.head, &trace, &dl);
            let mut stage = model.stage.zeros_like();
            let consts = constants(&model.bank);
            for ((b, c), g) in basis.iter().zip(&caches).zip(&d_feats) {
                pipeline::backward_scale(b.view(), &model.stage, consts, &model.spec.ablation, c, g, &mut stage);
            }
            Ok(SampleGrad {
                loss,
                head,
                stage: Some(stage),
            })
        }
    }
}

fn build_cache(model: &SegModel, videos: &[TrainVideo]) -> Result<Cache> {
    if stage_trainable(model) {
        let b = videos
            .iter()
            .map(|v| {
                Ok(model
                    .video_basis(&v.video)?
                    .into_iter()
                    .map(|scales| scales.iter().map(to_f32).collect())
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Cache::Basis(b))
    } else {
        let f = videos
            .iter()
            .map(|v| {
                Ok(model
                    .video_features(&v.video, v.external_flows.as_deref())?
                    .into_iter()
                    .map(|scales| scales.iter().map(to_f32).collect())
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Cache::Features(f))
    }
}

/// Train `model` in place on `videos`. The head is always trained; motion
/// energy layer groups are trained according to the ablation's modes.
pub fn train(
    mut model: SegModel,
    videos: &[TrainVideo],
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if config.batch == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut sampler = FrameSampler::new(videos, config.seed)?;
    let train_frames = sampler.len();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let trainable_stage = stage_trainable(&model);
    if trainable_stage {
        scratch_init(&mut model, config.seed);
    }
    let modes = group_modes(&model);
    let mut loss_history = Vec::with_capacity(config.steps);

    if config.steps > 0 {
        let cache = build_cache(&model, videos)?;
        let masks: Vec<Vec<Mask>> = videos.iter().map(|v| v.masks.clone()).collect();
        let head_views: Vec<ArrayViewD<'_, f64>> = model.head.tensors().into_iter().map(|(_, t)| t).collect();
        let mut head_adam = Adam::new(config.adam, &head_views);
        let stage_shapes: Vec<ArrayD<f64>> = stage_tensors(&model.stage)
            .into_iter()
            .zip(modes)
            .filter(|(_, m)| m.is_trainable())
            .map(|((_, t), _)| t.to_owned())
            .collect();
        let stage_views: Vec<ArrayViewD<'_, f64>> = stage_shapes.iter().map(|t| t.view()).collect();
        let mut stage_adam = Adam::new(config.adam, &stage_views);

        for step in 0..config.steps {
            let batch: Vec<(usize, usize)> = (0..config.batch).map(|_| sampler.draw()).collect();
            let results = batch
                .par_iter()
                .map(|&(vi, t)| sample_grad(&model, &cache, &masks, vi, t))
                .collect::<Result<Vec<_>>>()?;
            // fixed-order reduction keeps runs independent of thread count
            let scale = 1.0 / config.batch as f64;
            let mut loss = 0.0;
            let mut head_grad = model.head.zeros_like();
            let mut stage_grad = model.stage.zeros_like();
            for r in &results {
                loss += r.loss * scale;
                head_grad.scaled_add(scale, &r.head);
                if let Some(s) = &r.stage {
                    for ((_, mut a), (_, b)) in stage_tensors_mut(&mut stage_grad).into_iter().zip(stage_tensors(s)) {
                        a.scaled_add(scale, &b);
                    }
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss });
            }
            loss_history.push(loss);

            let grads: Vec<ArrayViewD<'_, f64>> = head_grad.tensors().into_iter().map(|(_, t)| t).collect();
            let params: Vec<_> = model.head.tensors_mut().into_iter().map(|(_, t)| t).collect();
            head_adam.update(params, &grads)?;
            if trainable_stage {
                let g: Vec<ArrayViewD<'_, f64>> = stage_tensors(&stage_grad)
                    .into_iter()
                    .zip(modes)
                    .filter(|(_, m)| m.is_trainable())
                    .map(|((_, t), _)| t)
                    .collect();
                let p: Vec<_> = stage_tensors_mut(&mut model.stage)
                    .into_iter()
                    .zip(modes)
                    .filter(|(_, m)| m.is_trainable())
                    .map(|((_, t), _)| t)
                    .collect();
                stage_adam.update(p, &g)?;
            }

            if config.log_every > 0 && (step + 1) % config.log_every == 0 {
                let recent = &loss_history[loss_history.len().saturating_sub(config.log_every)..];
                log::info!(
                    "step {}/{} loss {:.4}",
                    step + 1,
                    config.steps,
                    recent.iter().sum::<f64>() / recent.len() as f64
                );
            }
            if let (Some(dir), Some(every)) = (out_dir, config.checkpoint_every) {
                if every > 0 && (step + 1) % every == 0 {
                    model.save(dir.join(format!("checkpoint_{:06}.seg", step + 1)))?;
                }
            }
        }
    }

    let manifest = RunManifest {
        seed: config.seed,
        config: config.clone(),
        model: model.spec.clone(),
        train_videos: videos.len(),
        train_frames,
        parameters: model.head.num_params(),
        loss_history: loss_history.clone(),
    };
    if let Some(dir) = out_dir {
        model.save(dir.join(CHECKPOINT_FILE))?;
        let path = dir.join(RUN_MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TrainOutcome {
        model,
        loss_history,
        manifest,
    })
}

pub const CHECKPOINT_FILE: &str = "checkpoint.seg";
pub const RUN_MANIFEST_FILE: &str = "run.json";

/// Mean of the first and last `n` entries of a loss history.
pub fn loss_endpoints(history: &[f64], n: usize) -> Option<(f64, f64)> {
    if history.len() < n || n == 0 {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&history[..n]), mean(&history[history.len() - n..])))
}
