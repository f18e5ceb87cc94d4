//! On-disk bank of pre-rendered shape identification trials.
//!
//! Layout under the bank root:
//! - `stimuli/<id>/frames/NNNNN.png`: the random-dot video
//! - `stimuli/<id>/option_0.png`, `option_1.png`: the two candidate outlines
//! - `bank.json`: per-trial metadata, including which option is the target
//!
//! Only `stimuli/` is meant to be served; `bank.json` holds the answers.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::frame_name;
use crate::dots::{ShapeTrial, TrialMetadata};
use crate::error::{Error, Result};
use crate::eval::count_informative_dots;
use crate::image_io::{write_gray_png, write_mask_png};

pub const STIMULI_DIR: &str = "stimuli";
pub const BANK_FILE: &str = "bank.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub id: String,
    pub n_frames: usize,
    pub frame_rate: f64,
    /// Dots inside exactly one candidate at the last frame.
    pub informative_dots: usize,
    /// Index of the option image showing the target (0 or 1).
    pub target_option: usize,
    pub metadata: TrialMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusBank {
    pub entries: Vec<BankEntry>,
}

pub fn trial_id(i: usize) -> String {
    format!("trial_{i:05}")
}

pub fn option_name(slot: usize) -> String {
    format!("option_{slot}.png")
}

impl StimulusBank {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let path = root.as_ref().join(BANK_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn get(&self, id: &str) -> Option<&BankEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn write_trial(root: &Path, id: &str, trial: &ShapeTrial, target_option: usize) -> Result<BankEntry> {
    let dir = root.join(STIMULI_DIR).join(id);
    let frames = dir.join("frames");
    fs::create_dir_all(&frames).map_err(|e| Error::io(&frames, e))?;
    for t in 0..trial.stimulus.len() {
        write_gray_png(&trial.stimulus.frame(t).to_owned(), frames.join(frame_name(t)))?;
    }
    let (h, w) = (trial.height(), trial.width());
    let center = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
    let target = trial.target.rasterize(h, w, center);
    let distractor = trial.distractor.rasterize(h, w, center);
    write_mask_png(&target, dir.join(option_name(target_option)))?;
    write_mask_png(&distractor, dir.join(option_name(1 - target_option)))?;
    let last = trial.stimulus.len() - 1;
    let (t_mask, d_mask) = trial.candidate_masks(last);
    Ok(BankEntry {
        id: id.to_string(),
        n_frames: trial.stimulus.len(),
        frame_rate: trial.stimulus.frame_rate(),
        informative_dots: count_informative_dots(&trial.dots[last].dots, &t_mask, &d_mask),
        target_option,
        metadata: TrialMetadata::from(trial),
    })
}

/// Render `trials` under `root`; option slots are shuffled with `seed`.
pub fn write_bank(trials: &[ShapeTrial], root: impl AsRef<Path>, seed: u64) -> Result<StimulusBank> {
    let root = root.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots: Vec<usize> = trials.iter().map(|_| usize::from(rng.random_bool(0.5))).collect();
    let entries = trials
        .par_iter()
        .zip(slots)
        .enumerate()
        .map(|(i, (t, slot))| write_trial(root, &trial_id(i), t, slot))
        .collect::<Result<Vec<_>>>()?;
    let bank = StimulusBank { entries };
    let path = root.join(BANK_FILE);
    fs::write(&path, serde_json::to_string_pretty(&bank)?).map_err(|e| Error::io(&path, e))?;
    Ok(bank)
}
