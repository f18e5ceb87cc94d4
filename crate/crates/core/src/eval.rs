//! Segmentation metrics, sliding-window and zero-shot evaluation, the shape
//! identification task, and psychometric fitting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::dataset::{Condition, Manifest, Split, StoredVideo};
use crate::dots::{Choice, Dot, ShapeTrial};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::model::{SegModel, HALF_WINDOW};
use crate::volume::{Mask, VideoVolume};

/// Confusion counts of a predicted mask against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn of(pred: &Mask, gt: &Mask) -> Result<Self> {
        if pred.dim() != gt.dim() {
            return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.dim(), gt.dim())));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    /// Jaccard index; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    /// Pixelwise F1; 1 when both masks are empty.
    pub fn f_score(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(Confusion::of(pred, gt)?.iou())
}

pub fn f_score(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(Confusion::of(pred, gt)?.f_score())
}

/// Anything that maps a video to one mask per evaluable window center.
pub trait Segmenter: Sync {
    fn segment(&self, video: &VideoVolume, external: Option<&[FlowField]>) -> Result<Vec<Mask>>;
}

impl Segmenter for SegModel {
    fn segment(&self, video: &VideoVolume, external: Option<&[FlowField]>) -> Result<Vec<Mask>> {
        self.predict_video(video, external)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub model: String,
    pub condition: Condition,
    pub video: String,
    pub frame: usize,
    pub iou: f64,
    pub f_score: f64,
}

/// Score every window center `t` in `[4, T-5]` of one video.
pub fn evaluate_video(
    model: &dyn Segmenter,
    model_name: &str,
    video_id: &str,
    video: &VideoVolume,
    external: Option<&[FlowField]>,
    gt_masks: &[Mask],
    condition: Condition,
) -> Result<Vec<FrameResult>> {
    let centers = SegModel::evaluable_frames(video.len())?;
    if gt_masks.len() != video.len() {
        return Err(Error::Shape(format!("{} masks for {} frames", gt_masks.len(), video.len())));
    }
    let preds = model.segment(video, external)?;
    if preds.len() != centers.len() {
        return Err(Error::Shape(format!("{} predictions for {} window centers", preds.len(), centers.len())));
    }
    centers
        .zip(&preds)
        .map(|(t, pred)| {
            let c = Confusion::of(pred, &gt_masks[t])?;
            Ok(FrameResult {
                model: model_name.to_string(),
                condition,
                video: video_id.to_string(),
                frame: t,
                iou: c.iou(),
                f_score: c.f_score(),
            })
        })
        .collect()
}

/// Evaluate one frozen model on every test video in both conditions.
/// Rows are ordered by condition, then video, then frame.
pub fn zero_shot_eval(model: &dyn Segmenter, model_name: &str, root: impl AsRef<Path>) -> Result<Vec<FrameResult>> {
    evaluate_test_split(model, model_name, root, &[Condition::Original, Condition::RandomDots])
}

/// Evaluate on every test video under each of `conditions`.
pub fn evaluate_test_split(
    model: &dyn Segmenter,
    model_name: &str,
    root: impl AsRef<Path>,
    conditions: &[Condition],
) -> Result<Vec<FrameResult>> {
    let root = root.as_ref();
    let manifest = Manifest::read(root)?;
    let entries: Vec<_> = manifest.split(Split::Test).cloned().collect();
    if entries.is_empty() {
        return Err(Error::MissingData(format!("no test videos under {}", root.display())));
    }
    let per_video = entries
        .par_iter()
        .map(|e| {
            let stored = StoredVideo::load(root.join(&e.video_dir))?;
            let mut rows = Vec::new();
            for &condition in conditions {
                let video = stored.frames(condition)?;
                let external = stored.predicted_flows(condition)?;
                rows.push(evaluate_video(
                    model,
                    model_name,
                    &e.video_dir,
                    video,
                    external.as_deref(),
                    &stored.masks,
                    condition,
                )?);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for c in 0..conditions.len() {
        for rows in &per_video {
            out.extend(rows[c].iter().cloned());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: String,
    pub condition: Condition,
    pub frames: usize,
    pub mean_iou: f64,
    pub mean_f_score: f64,
}

/// Per (model, condition) means in first-appearance order of models.
pub fn aggregate(results: &[FrameResult]) -> Vec<Aggregate> {
    let mut models: Vec<&str> = Vec::new();
    let mut sums: BTreeMap<(usize, Condition), (usize, f64, f64)> = BTreeMap::new();
    for r in results {
        let m = match models.iter().position(|&m| m == r.model) {
            Some(i) => i,
            None => {
                models.push(&r.model);
                models.len() - 1
            }
        };
        let e = sums.entry((m, r.condition)).or_default();
        e.0 += 1;
        e.1 += r.iou;
        e.2 += r.f_score;
    }
    sums.into_iter()
        .map(|((m, condition), (n, i, f))| Aggregate {
            model: models[m].to_string(),
            condition,
            frames: n,
            mean_iou: i / n as f64,
            mean_f_score: f / n as f64,
        })
        .collect()
}

pub fn mean_iou(results: &[FrameResult], condition: Condition) -> Option<f64> {
    let v: Vec<f64> = results.iter().filter(|r| r.condition == condition).map(|r| r.iou).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn write_csv<W: Write>(results: &[FrameResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "condition", "video", "frame", "iou", "f_score"])
        .map_err(csv_err)?;
    for r in results {
        w.write_record([
            r.model.as_str(),
            r.condition.as_str(),
            r.video.as_str(),
            &r.frame.to_string(),
            &r.iou.to_string(),
            &r.f_score.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// One row per model with the original and random-dot columns side by side.
pub fn summary_table(aggregates: &[Aggregate]) -> String {
    let mut rows: Vec<(String, [Option<(f64, f64)>; 2])> = Vec::new();
    for a in aggregates {
        let i = match rows.iter().position(|(m, _)| *m == a.model) {
            Some(i) => i,
            None => {
                rows.push((a.model.clone(), [None, None]));
                rows.len() - 1
            }
        };
        let col = usize::from(a.condition == Condition::RandomDots);
        rows[i].1[col] = Some((a.mean_iou, a.mean_f_score));
    }
    let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>9} {:>9}  {:>9} {:>9}",
        "model", "orig IoU", "orig F", "dots IoU", "dots F"
    );
    let cell = |v: Option<(f64, f64)>| match v {
        Some((i, f)) => format!("{i:>9.3} {f:>9.3}"),
        None => format!("{:>9} {:>9}", "-", "-"),
    };
    for (m, [o, d]) in &rows {
        let _ = writeln!(s, "{m:<width$}  {}  {}", cell(*o), cell(*d));
    }
    s
}

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

/// Write `results.csv` and `summary.txt` into `dir`.
pub fn emit_report(results: &[FrameResult], dir: impl AsRef<Path>) -> Result<Vec<Aggregate>> {
    if results.is_empty() {
        return Err(Error::MissingData("no results to report".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(RESULTS_CSV);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_csv(results, std::io::BufWriter::new(file))?;
    let aggregates = aggregate(results);
    let path = dir.join(SUMMARY_TXT);
    fs::write(&path, summary_table(&aggregates)).map_err(|e| Error::io(&path, e))?;
    Ok(aggregates)
}

/// Read back a CSV written by [`write_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<FrameResult>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Format(format!("short csv row in {}", path.display())));
        let num = |i: usize| -> Result<f64> {
            field(i)?
                .parse()
                .map_err(|_| Error::Format(format!("bad number in {}", path.display())))
        };
        out.push(FrameResult {
            model: field(0)?.to_string(),
            condition: field(1)?.parse()?,
            video: field(2)?.to_string(),
            frame: field(3)?
                .parse()
                .map_err(|_| Error::Format(format!("bad frame index in {}", path.display())))?,
            iou: num(4)?,
            f_score: num(5)?,
        });
    }
    Ok(out)
}

/// Pick the candidate whose mask better matches the prediction; exact ties
/// are broken uniformly with `rng`.
pub fn choose_shape<R: Rng + ?Sized>(pred: &Mask, target: &Mask, distractor: &Mask, rng: &mut R) -> Result<Choice> {
    let a = iou(pred, target)?;
    let b = iou(pred, distractor)?;
    Ok(if a > b {
        Choice::Target
    } else if b > a {
        Choice::Distractor
    } else if rng.random_bool(0.5) {
        Choice::Target
    } else {
        Choice::Distractor
    })
}

fn inside(mask: &Mask, d: &Dot) -> bool {
    let (h, w) = mask.dim();
    if !(d.x >= 0.0 && d.y >= 0.0) {
        return false;
    }
    let (c, r) = (d.x.floor() as usize, d.y.floor() as usize);
    r < h && c < w && mask[[r, c]]
}

/// Dots lying in exactly one of the two masks.
pub fn count_informative_dots(dots: &[Dot], target: &Mask, distractor: &Mask) -> usize {
    dots.iter().filter(|d| inside(target, d) != inside(distractor, d)).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeOutcome {
    pub seed: u64,
    pub choice: Choice,
    pub correct: bool,
    pub informative_dots: usize,
}

/// Frame whose prediction and candidate placement decide a trial: the last
/// window center of the stimulus.
pub fn decision_frame(duration: usize) -> Result<usize> {
    Ok(SegModel::evaluable_frames(duration)?.end - 1)
}

/// Run the shape identification task on `trials`.
pub fn shape_eval<R: Rng + ?Sized>(model: &dyn Segmenter, trials: &[ShapeTrial], rng: &mut R) -> Result<Vec<ShapeOutcome>> {
    let preds = trials
        .par_iter()
        .map(|t| model.segment(&t.stimulus, None))
        .collect::<Result<Vec<_>>>()?;
    trials
        .iter()
        .zip(preds)
        .map(|(trial, pred)| {
            let t = decision_frame(trial.stimulus.len())?;
            let (target, distractor) = trial.candidate_masks(t);
            let choice = choose_shape(&pred[t - HALF_WINDOW], &target, &distractor, rng)?;
            Ok(ShapeOutcome {
                seed: trial.seed,
                choice,
                correct: choice == trial.correct_choice,
                informative_dots: count_informative_dots(&trial.dots[t].dots, &target, &distractor),
            })
        })
        .collect()
}

/// One-sided binomial test: P(X >= k) for X ~ Bin(n, p).
pub fn binomial_p_value(k: u64, n: u64, p: f64) -> Result<f64> {
    if k > n {
        return Err(Error::Config(format!("{k} successes out of {n}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let b = Binomial::new(p, n).map_err(|e| Error::Config(e.to_string()))?;
    Ok(b.sf(k - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsychBin {
    pub x: f64,
    pub correct: u64,
    pub total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsychometricFit {
    pub alpha: f64,
    pub beta: f64,
    pub log_likelihood: f64,
    /// False when the optimum sits on the search boundary.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Psychometric {
    Fitted(PsychometricFit),
    NonIdentifiable,
}

/// Two-alternative psychometric function with guess rate 0.5.
pub fn psychometric(x: f64, alpha: f64, beta: f64) -> f64 {
    0.5 + 0.5 / (1.0 + (-(x - alpha) / beta).exp())
}

fn log_likelihood(bins: &[PsychBin], alpha: f64, beta: f64) -> f64 {
    bins.iter()
        .map(|b| {
            let p = psychometric(b.x, alpha, beta).clamp(1e-12, 1.0 - 1e-12);
            b.correct as f64 * p.ln() + (b.total - b.correct) as f64 * (1.0 - p).ln()
        })
        .sum()
}

/// Group trial outcomes by `x` into bins of width `bin_width`, labeled by
/// their mean `x`.
pub fn bin_outcomes(points: &[(f64, bool)], bin_width: f64) -> Vec<PsychBin> {
    let mut groups: BTreeMap<i64, (f64, u64, u64)> = BTreeMap::new();
    for &(x, ok) in points {
        let e = groups.entry((x / bin_width).floor() as i64).or_default();
        e.0 += x;
        e.1 += u64::from(ok);
        e.2 += 1;
    }
    groups
        .into_values()
        .map(|(sx, c, n)| PsychBin {
            x: sx / n as f64,
            correct: c,
            total: n,
        })
        .collect()
}

/// Maximum-likelihood fit of threshold `alpha` and slope `beta`: a grid
/// search followed by a shrinking pattern search, both bounded.
pub fn fit_psychometric(bins: &[PsychBin]) -> Result<Psychometric> {
    if bins.iter().any(|b| b.total == 0 || b.correct > b.total || !b.x.is_finite()) {
        return Err(Error::Config("every bin needs 1 <= total and correct <= total".into()));
    }
    let mut xs: Vec<f64> = bins.iter().map(|b| b.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 2 {
        return Err(Error::Config("need at least two distinct difficulty levels".into()));
    }
    let all_correct = bins.iter().all(|b| b.correct == b.total);
    let at_chance = bins.iter().all(|b| 2 * b.correct <= b.total);
    if all_correct || at_chance {
        return Ok(Psychometric::NonIdentifiable);
    }

    let (lo, hi) = (xs[0], xs[xs.len() - 1]);
    let range = hi - lo;
    let a_bounds = (lo - range, hi + range);
    let b_bounds = (range * 1e-3, range * 2.0);
    let grid = 60;
    let at = |i: usize, (a, b): (f64, f64)| a + (b - a) * i as f64 / grid as f64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=grid {
        for j in 0..=grid {
            let (a, b) = (at(i, a_bounds), at(j, b_bounds));
            let ll = log_likelihood(bins, a, b);
            if ll > best.0 {
                best = (ll, a, b);
            }
        }
    }
    let (mut ll, mut a, mut b) = best;
    let mut step = [
        (a_bounds.1 - a_bounds.0) / grid as f64,
        (b_bounds.1 - b_bounds.0) / grid as f64,
    ];
    while step[0] > 1e-9 * range || step[1] > 1e-9 * range {
        let mut moved = false;
        for (da, db) in [(step[0], 0.0), (-step[0], 0.0), (0.0, step[1]), (0.0, -step[1])] {
            let (na, nb) = (
                (a + da).clamp(a_bounds.0, a_bounds.1),
                (b + db).clamp(b_bounds.0, b_bounds.1),
            );
            let nll = log_likelihood(bins, na, nb);
            if nll > ll {
                (ll, a, b) = (nll, na, nb);
                moved = true;
            }
        }
        if !moved {
            step = [step[0] / 2.0, step[1] / 2.0];
        }
    }
    let edge = |v: f64, (l, h): (f64, f64)| (v - l).abs() < 1e-6 * range || (h - v).abs() < 1e-6 * range;
    Ok(Psychometric::Fitted(PsychometricFit {
        alpha: a,
        beta: b,
        log_likelihood: ll,
        converged: !edge(a, a_bounds) && !edge(b, b_bounds),
    }))
}
