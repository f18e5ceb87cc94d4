//! Acceptance run: one PASS/FAIL line per criterion, measured on freshly
//! generated data. Exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::time::Instant;

use motionseg::dataset::{generate_dataset, render_scene, sample_scene, Condition, SceneConfig, WriteOptions};
use motionseg::dots::{kinematogram_fields, make_shape_trial, DotConfig, ShapeTrialConfig};
use motionseg::eval::{
    binomial_p_value, bin_outcomes, evaluate_video, f_score, fit_psychometric, iou, mean_iou, shape_eval,
    zero_shot_eval, PsychBin, Psychometric,
};
use motionseg::flow::{lucas_kanade, read_flo_from, write_flo_to, FlowField, LkConfig};
use motionseg::model::{FlowEstimator, ModelSpec, MotionSource, SegModel};
use motionseg::motion_energy::{AblationConfig, FilterBank, MtNonlinearity, NormKind};
use motionseg::seg::adam::AdamConfig;
use motionseg::seg::{gradient_check, SegNetParams};
use motionseg::texture::Texture;
use motionseg::train::{load_training_videos, train, TrainConfig, TrainVideo};
use motionseg::{Mask, VideoVolume};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

const TUNING_MIN_FRACTION: f64 = 0.9;
const TUNING_MAX_SECS: f64 = 120.0;
const RETENTION: f64 = 0.6;
const DESK_MAX_SECS: f64 = 3600.0;
const GRAD_MAX_REL: f64 = 1e-4;
const GRAD_MAX_SECS: f64 = 60.0;
const METRIC_PAIRS: usize = 1000;
const F_IDENTITY_TOL: f64 = 1e-12;
const DOT_FIDELITY_TOL: f64 = 1e-9;
const LK_MAX_EPE: f64 = 0.3;
const SHAPE_TRIALS: u64 = 200;
const SHAPE_ALPHA: f64 = 0.01;
const NO_NORM_MAX_RATIO: f64 = 0.3;
const RELU_MAX_CHANGE: f64 = 0.2;
const PSYCH_TOL: f64 = 2.0;

/// Desk-scale training schedule: the step count is fixed by the criterion,
/// the rest is sized to fit a single CPU core.
const DESK_SEED: u64 = 7;
const DESK_VIDEOS: usize = 25;
const DESK_TEST_FRACTION: f64 = 0.2;
const DESK_STEPS: usize = 2000;
const DESK_BATCH: usize = 8;
const DESK_LR: f64 = 1e-3;
const DESK_FEATURES: usize = 8;

struct Report {
    failed: Vec<&'static str>,
}

impl Report {
    fn line(&mut self, name: &'static str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(name);
        }
    }
}

fn tuning(r: &mut Report) {
    let t = Instant::now();
    let bank = FilterBank::reference();
    let worst = common::worst_tuning(&bank, 0.9);
    let secs = t.elapsed().as_secs_f64();
    r.line(
        "tuning_oracle",
        worst >= TUNING_MIN_FRACTION && secs < TUNING_MAX_SECS,
        format!(
            "worst channel argmax fraction {worst:.3} over {} velocities (>= {TUNING_MIN_FRACTION}), {secs:.1} s",
            bank.preferred_velocities.len()
        ),
    );
}

fn gradients(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let feats: Vec<Array3<f64>> = [(8, 8), (4, 4)]
        .iter()
        .map(|&(h, w)| Array3::from_shape_fn((3, h, w), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let mask = Mask::from_shape_fn((8, 8), |(y, x)| (y as f64 - 3.5).hypot(x as f64 - 4.0) < 2.5);
    let mut params = SegNetParams::init(3, 4, 5);
    for (_, mut w) in params.tensors_mut() {
        w.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
    // Small enough a step that O(h^2) truncation error is far below the
    // bound, large enough that rounding error is too.
    let check = gradient_check(&feats, &params, &mask, 1e-5).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let (a, b) = (check.max_element_error(), check.max_tensor_error());
    r.line(
        "gradient_exactness",
        a < GRAD_MAX_REL && secs < GRAD_MAX_SECS,
        format!(
            "{} parameters, max element relative error {a:.2e} (tensor-wise {b:.2e}) at h=1e-5, {secs:.1} s",
            params.num_params()
        ),
    );
}

fn naive_counts(p: &Mask, g: &Mask) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for y in 0..p.nrows() {
        for x in 0..p.ncols() {
            match (p[[y, x]], g[[y, x]]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    (tp, fp, fn_)
}

fn metrics(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut worst_identity: f64 = 0.0;
    for i in 0..METRIC_PAIRS {
        let (h, w) = (rng.random_range(1..24), rng.random_range(1..24));
        // include empty and full masks among the densities
        let (dp, dg) = match i % 10 {
            0 => (0.0, 0.0),
            1 => (1.0, rng.random_range(0.0..1.0)),
            _ => (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)),
        };
        let p = Mask::from_shape_fn((h, w), |_| rng.random_bool(dp));
        let g = Mask::from_shape_fn((h, w), |_| rng.random_bool(dg));
        let (tp, fp, fn_) = naive_counts(&p, &g);
        let j_oracle = if tp + fp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fp + fn_) as f64 };
        let f_oracle = if tp + fp + fn_ == 0 { 1.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
        let (j, f) = (iou(&p, &g).unwrap(), f_score(&p, &g).unwrap());
        if j != j_oracle || f != f_oracle {
            mismatches += 1;
        }
        worst_identity = worst_identity.max((f - 2.0 * j / (1.0 + j)).abs());
    }
    r.line(
        "metric_oracle",
        mismatches == 0 && worst_identity <= F_IDENTITY_TOL,
        format!("{mismatches} mismatches in {METRIC_PAIRS} pairs, max |F - 2J/(1+J)| = {worst_identity:.1e}"),
    );
}

/// Bilinear interpolation of the stored flow, valid away from the last
/// row and column.
fn bilinear(flow: &FlowField, x: f64, y: f64) -> (f64, f64) {
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |a: &Array2<f32>| {
        let c = |yy: usize, xx: usize| f64::from(a[[yy, xx]]);
        (1.0 - fy) * ((1.0 - fx) * c(y0, x0) + fx * c(y0, x0 + 1)) + fy * ((1.0 - fx) * c(y0 + 1, x0) + fx * c(y0 + 1, x0 + 1))
    };
    (at(&flow.u), at(&flow.v))
}

fn dots(r: &mut Report) {
    let scene = sample_scene(21, &SceneConfig::default()).unwrap();
    let (_, gt) = render_scene(&scene).unwrap();
    let config = DotConfig::default();
    let lifetime = config.lifetime.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fields = kinematogram_fields(&gt.flows, &config, &mut rng).unwrap();
    let counts_ok = fields.iter().all(|f| f.dots.len() == 500);
    let max_age = fields.iter().flat_map(|f| f.dots.iter().map(|d| d.age)).max().unwrap();
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for (t, pair) in fields.windows(2).enumerate() {
        let (h, w) = (pair[0].height as f64, pair[0].width as f64);
        for (a, b) in pair[0].dots.iter().zip(&pair[1].dots) {
            if b.age != a.age + 1 || a.x >= w - 1.0 || a.y >= h - 1.0 {
                continue;
            }
            let (u, v) = bilinear(&gt.flows[t], a.x, a.y);
            worst = worst.max((b.x - a.x - u).abs()).max((b.y - a.y - v).abs());
            checked += 1;
        }
    }
    r.line(
        "dot_generator",
        counts_ok && max_age < lifetime && checked > 0 && worst <= DOT_FIDELITY_TOL,
        format!(
            "{} frames of 500 dots: {counts_ok}, max age {max_age} (< {lifetime}), {checked} advections, max error {worst:.1e}",
            fields.len()
        ),
    );
}

struct FirstFrame;

impl motionseg::eval::Segmenter for FirstFrame {
    fn segment(&self, video: &VideoVolume, _: Option<&[FlowField]>) -> motionseg::Result<Vec<Mask>> {
        let range = SegModel::evaluable_frames(video.len())?;
        Ok(range.map(|_| Mask::from_elem((video.height(), video.width()), true)).collect())
    }
}

fn windows(r: &mut Report) {
    let range = SegModel::evaluable_frames(90).unwrap();
    let video = VideoVolume::new(Array3::zeros((90, 4, 4)), 30.0).unwrap();
    let gt: Vec<Mask> = (0..90).map(|_| Mask::from_elem((4, 4), true)).collect();
    let rows = evaluate_video(&FirstFrame, "m", "v", &video, None, &gt, Condition::Original).unwrap();
    let frames: Vec<usize> = rows.iter().map(|r| r.frame).collect();
    let ok = range.len() == 82 && rows.len() == 82 && frames.first() == Some(&4) && frames.last() == Some(&85);
    r.line(
        "window_accounting",
        ok,
        format!("90 frames -> {} evaluated, frames {:?}..={:?}", rows.len(), frames.first(), frames.last()),
    );
}

fn flo(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut exact = true;
    for _ in 0..50 {
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let mut bits = || f32::from_bits(rng.random::<u32>() & 0xBFFF_FFFF);
        let u = Array2::from_shape_simple_fn((h, w), &mut bits);
        let v = Array2::from_shape_simple_fn((h, w), &mut bits);
        let field = FlowField::new(u, v).unwrap();
        let mut buf = Vec::new();
        write_flo_to(&field, &mut buf).unwrap();
        let back = read_flo_from(buf.as_slice()).unwrap();
        let same = |a: &Array2<f32>, b: &Array2<f32>| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        exact &= back.dim() == field.dim() && same(&back.u, &field.u) && same(&back.v, &field.v);
    }
    let mut zero = Vec::new();
    write_flo_to(&FlowField::zeros(2, 2), &mut zero).unwrap();
    let magic_ok = zero[..4] == 202021.25f32.to_le_bytes();
    r.line(
        "flo_round_trip",
        exact && zero.len() == 44 && magic_ok,
        format!("50 random fields bit-exact: {exact}; 2x2 zero field {} bytes, magic ok: {magic_ok}", zero.len()),
    );
}

fn lucas_kanade_translations(r: &mut Report) {
    let texture = Texture::value_noise(5, 128).unwrap();
    let size = 64;
    let margin = 8;
    let frame = |dx: f64, dy: f64| Array2::from_shape_fn((size, size), |(y, x)| texture.sample(x as f64 - dx, y as f64 - dy));
    let a = frame(0.0, 0.0);
    let mut total = 0.0;
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for dy in -4i32..=4 {
        for dx in -4i32..=4 {
            if dx * dx + dy * dy > 16 {
                continue;
            }
            let b = frame(dx as f64, dy as f64);
            let flow = lucas_kanade(a.view(), b.view(), &LkConfig::default()).unwrap();
            let truth = FlowField::constant(size, size, dx as f32, dy as f32);
            let interior = |y: usize, x: usize| (margin..size - margin).contains(&y) && (margin..size - margin).contains(&x);
            let epe = flow.mean_endpoint_error(&truth, interior);
            total += epe;
            worst = worst.max(epe);
            n += 1;
        }
    }
    let mean = total / n as f64;
    r.line(
        "lucas_kanade_translation",
        mean < LK_MAX_EPE,
        format!("{n} integer shifts with |v| <= 4: mean interior EPE {mean:.3} px (worst shift {worst:.3})"),
    );
}

fn psychometric_recovery(r: &mut Report) {
    let (alpha, beta) = (20.0, 5.0);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let bins: Vec<PsychBin> = (1..=10)
        .map(|i| {
            let x = 5.0 * i as f64;
            let p = motionseg::eval::psychometric(x, alpha, beta);
            let correct = Binomial::new(1000, p).unwrap().sample(&mut rng);
            PsychBin { x, correct, total: 1000 }
        })
        .collect();
    let (ok, detail) = match fit_psychometric(&bins).unwrap() {
        Psychometric::Fitted(f) => (
            f.converged && (f.alpha - alpha).abs() <= PSYCH_TOL && (f.beta - beta).abs() <= PSYCH_TOL,
            format!("alpha {:.2} (true 20), beta {:.2} (true 5), converged {}", f.alpha, f.beta, f.converged),
        ),
        Psychometric::NonIdentifiable => (false, "fit reported non-identifiable".into()),
    };
    r.line("psychometric_recovery", ok, detail);
}

struct DeskRun {
    model: SegModel,
    original: f64,
    dots: f64,
    secs: f64,
}

impl DeskRun {
    fn retention(&self) -> f64 {
        self.dots / self.original
    }
}

fn desk_run(root: &Path, videos: &[TrainVideo], name: &str, source: MotionSource, ablation: AblationConfig) -> DeskRun {
    let t = Instant::now();
    let spec = ModelSpec {
        source,
        estimator: FlowEstimator::LucasKanade,
        ablation,
        lk: LkConfig::default(),
        scales: 5,
        features: DESK_FEATURES,
    };
    let model = SegModel::new(spec, FilterBank::reference(), 0).unwrap();
    let config = TrainConfig {
        steps: DESK_STEPS,
        batch: DESK_BATCH,
        adam: AdamConfig {
            lr: DESK_LR,
            ..Default::default()
        },
        log_every: 500,
        ..Default::default()
    };
    let out = train(model, videos, &config, None).unwrap();
    let rows = zero_shot_eval(&out.model, name, root).unwrap();
    let run = DeskRun {
        model: out.model,
        original: mean_iou(&rows, Condition::Original).unwrap(),
        dots: mean_iou(&rows, Condition::RandomDots).unwrap(),
        secs: t.elapsed().as_secs_f64(),
    };
    println!(
        "  {name}: original IoU {:.3}, random-dot IoU {:.3}, retention {:.3}, {:.0} s",
        run.original,
        run.dots,
        run.retention(),
        run.secs
    );
    run
}

fn desk(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let t = Instant::now();
    let opts = WriteOptions {
        test_fraction: DESK_TEST_FRACTION,
        ..Default::default()
    };
    generate_dataset(DESK_VIDEOS, DESK_SEED, &SceneConfig::default(), root, &opts).unwrap();
    let videos = load_training_videos(root).unwrap();
    let gen_secs = t.elapsed().as_secs_f64();
    println!(
        "  desk dataset: {} train / {} test videos at 64x64, {DESK_STEPS} steps, {gen_secs:.0} s",
        videos.len(),
        DESK_VIDEOS - videos.len()
    );

    let me = desk_run(root, &videos, "motion_energy", MotionSource::MotionEnergy, AblationConfig::default());
    let lk = desk_run(root, &videos, "lucas_kanade", MotionSource::FlowMultiscale, AblationConfig::default());
    let secs = gen_secs + me.secs + lk.secs;
    r.line(
        "ordering_random_dots",
        me.dots > lk.dots && me.retention() >= RETENTION && lk.retention() < RETENTION && secs < DESK_MAX_SECS,
        format!(
            "dot IoU motion energy {:.3} vs flow {:.3}; retention {:.3} (>= {RETENTION}) vs {:.3} (< {RETENTION}); {secs:.0} s",
            me.dots,
            lk.dots,
            me.retention(),
            lk.retention()
        ),
    );

    let trials: Vec<_> = (0..SHAPE_TRIALS)
        .map(|s| make_shape_trial(s, &ShapeTrialConfig::default()).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let outcomes = shape_eval(&me.model, &trials, &mut rng).unwrap();
    let correct = outcomes.iter().filter(|o| o.correct).count() as u64;
    let p = binomial_p_value(correct, SHAPE_TRIALS, 0.5).unwrap();
    let points: Vec<(f64, bool)> = outcomes.iter().map(|o| (o.informative_dots as f64, o.correct)).collect();
    println!("  shape bins: {:?}", bin_outcomes(&points, 10.0));
    r.line(
        "shape_task",
        p < SHAPE_ALPHA,
        format!("{correct}/{SHAPE_TRIALS} correct, one-sided binomial p = {p:.2e} (< {SHAPE_ALPHA})"),
    );

    let no_norm = AblationConfig {
        norm_kind: NormKind::None,
        ..Default::default()
    };
    let relu = AblationConfig {
        mt_nonlinearity: MtNonlinearity::Relu,
        ..Default::default()
    };
    let no_norm = desk_run(root, &videos, "no_normalization", MotionSource::MotionEnergy, no_norm);
    let relu = desk_run(root, &videos, "mt_relu", MotionSource::MotionEnergy, relu);
    let ratio = no_norm.dots / me.dots;
    let change = (relu.dots - me.dots).abs() / me.dots;
    r.line(
        "ablation_directions",
        ratio < NO_NORM_MAX_RATIO && change < RELU_MAX_CHANGE,
        format!(
            "no normalization: dot IoU {:.3} = {ratio:.3}x baseline (< {NO_NORM_MAX_RATIO}); MT ReLU: {:.3}, change {change:.3} (< {RELU_MAX_CHANGE})",
            no_norm.dots, relu.dots
        ),
    );
}

fn main() {
    let mut r = Report { failed: Vec::new() };
    tuning(&mut r);
    gradients(&mut r);
    metrics(&mut r);
    dots(&mut r);
    windows(&mut r);
    flo(&mut r);
    lucas_kanade_translations(&mut r);
    psychometric_recovery(&mut r);
    desk(&mut r);
    if r.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", r.failed.len(), r.failed.join(", "));
        std::process::exit(1);
    }
}
