use std::fs;
use std::path::{Path, PathBuf};

use motionseg::dataset::{generate_dataset, read_sequence, write_random_dots, SceneConfig, Split, WriteOptions};
use motionseg::dots::{make_shape_trial, DotConfig, ShapeTrial, ShapeTrialConfig};
use motionseg::eval::{
    bin_outcomes, binomial_p_value, emit_report, evaluate_test_split, fit_psychometric, read_csv, shape_eval,
    summary_table, Psychometric, ShapeOutcome,
};
use motionseg::model::{ModelSpec, SegModel};
use motionseg::motion_energy::{
    build_filter_bank, motion_energy_sequence, write_energy_maps, AblationConfig, BankOverrides, FilterBank, LayerModes,
    REFERENCE_PARAMS,
};
use motionseg::seg::adam::AdamConfig;
use motionseg::stimuli::write_bank;
use motionseg::train::{load_training_videos, train, TrainConfig, CHECKPOINT_FILE};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{AblationArgs, Command, DotArgs, Global, TrialArgs};
use crate::config::echo_config;
use crate::error::CliError;

const FRAME_RATE: f64 = 30.0;
pub const SHAPE_EVAL_FILE: &str = "shape_eval.json";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.to_path_buf(), e)
}

fn dot_config(a: &DotArgs) -> DotConfig {
    DotConfig {
        n_dots: a.n_dots,
        lifetime: (a.lifetime > 0).then_some(a.lifetime),
        dot_radius: a.dot_radius,
    }
}

fn trial_config(a: &TrialArgs) -> ShapeTrialConfig {
    ShapeTrialConfig {
        height: a.height,
        width: a.width,
        duration_frames: a.frames,
        speed_range: (a.speed_min, a.speed_max),
        fixed_speed: a.fixed_speed,
        dots: dot_config(&a.dots),
        ..Default::default()
    }
}

fn ablation(a: &AblationArgs, training: LayerModes) -> AblationConfig {
    AblationConfig {
        v1_nonlinearity: a.v1_nonlinearity,
        mt_nonlinearity: a.mt_nonlinearity,
        norm_kind: a.norm,
        include_v1_blur: !a.no_v1_blur,
        include_mt_blur: !a.no_mt_blur,
        include_mt_linear: !a.no_mt_linear,
        include_mt_stage: !a.no_mt_stage,
        training,
    }
}

fn filter_bank(params: Option<&Path>, levels: Option<usize>) -> Result<FilterBank, CliError> {
    let text = match params {
        Some(p) => fs::read_to_string(p).map_err(io(p))?,
        None => REFERENCE_PARAMS.to_string(),
    };
    let overrides = BankOverrides {
        pyramid_levels: levels,
        ..Default::default()
    };
    Ok(build_filter_bank(&text, &overrides)?)
}

/// Per-trial seeds derived from the run seed.
fn trials(seed: u64, n: usize, cfg: &ShapeTrialConfig) -> Result<Vec<ShapeTrial>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();
    Ok(seeds
        .into_iter()
        .map(|s| make_shape_trial(s, cfg))
        .collect::<motionseg::Result<_>>()?)
}

fn run_dir(data: &Path, motion: motionseg::model::MotionSource) -> PathBuf {
    data.join("runs").join(motion.as_str())
}

#[derive(Serialize)]
struct ShapeReport {
    trials: usize,
    correct: usize,
    accuracy: f64,
    p_value: f64,
    psychometric: Option<Psychometric>,
    outcomes: Vec<ShapeOutcome>,
}

pub fn dispatch(global: &Global, command: &Command) -> Result<(), CliError> {
    match command {
        Command::GenDataset(a) => {
            echo_config(&a.out, global, "gen-dataset", a)?;
            let config = SceneConfig {
                height: a.height,
                width: a.width,
                duration_frames: a.frames,
                max_speed: a.max_speed,
                texture_period: a.texture_period,
                ..Default::default()
            };
            let opts = WriteOptions {
                test_fraction: a.test_fraction,
                dots_for_train: a.dots_for_train,
                dots_for_test: true,
                dots: dot_config(&a.dots),
                dot_seed: global.seed,
            };
            let manifest = generate_dataset(a.videos, global.seed, &config, &a.out, &opts)?;
            println!(
                "wrote {} train and {} test videos to {}",
                manifest.count(Split::Train),
                manifest.count(Split::Test),
                a.out.display()
            );
        }
        Command::GenDots(a) => {
            echo_config(&a.data, global, "gen-dots", a)?;
            let splits = match a.split.as_str() {
                "train" => vec![Split::Train],
                "test" => vec![Split::Test],
                "all" => vec![Split::Train, Split::Test],
                other => return Err(CliError::Usage(format!("unknown split `{other}`"))),
            };
            let opts = WriteOptions {
                dots: dot_config(&a.dots),
                dot_seed: global.seed,
                ..Default::default()
            };
            let n = write_random_dots(&a.data, &splits, &opts)?;
            println!("wrote random dots for {n} videos");
        }
        Command::GenShapeTrials(a) => {
            echo_config(&a.out, global, "gen-shape-trials", a)?;
            let trials = trials(global.seed, a.trials, &trial_config(&a.trial))?;
            let bank = write_bank(&trials, &a.out, global.seed)?;
            println!("wrote {} trials to {}", bank.len(), a.out.display());
        }
        Command::Energy(a) => {
            echo_config(&a.out, global, "energy", a)?;
            let bank = filter_bank(a.ablation.params.as_deref(), None)?;
            let video = read_sequence(&a.frames, FRAME_RATE)?;
            let maps = motion_energy_sequence(&video, &bank, &ablation(&a.ablation, LayerModes::default()))?;
            let first = bank.temporal_extent() / 2;
            for (i, m) in maps.iter().enumerate() {
                let path = a.out.join(format!("{:05}.mem", first + i));
                let file = fs::File::create(&path).map_err(io(&path))?;
                write_energy_maps(m, std::io::BufWriter::new(file)).map_err(io(&path))?;
            }
            println!("wrote {} energy maps to {}", maps.len(), a.out.display());
        }
        Command::Train(a) => {
            let out = a.out.clone().unwrap_or_else(|| run_dir(&a.data, a.model.motion));
            echo_config(&out, global, "train", a)?;
            let modes = LayerModes {
                v1_linear: a.train_v1_linear,
                v1_blur: a.train_v1_blur,
                mt_linear: a.train_mt_linear,
                mt_blur: a.train_mt_blur,
            };
            let spec = ModelSpec {
                source: a.model.motion,
                estimator: a.model.estimator,
                ablation: ablation(&a.ablation, modes),
                lk: Default::default(),
                scales: a.scales,
                features: a.features,
            };
            let bank = filter_bank(a.ablation.params.as_deref(), Some(a.scales))?;
            let model = SegModel::new(spec, bank, global.seed)?;
            let videos = load_training_videos(&a.data)?;
            let config = TrainConfig {
                steps: a.steps,
                batch: a.batch,
                seed: global.seed,
                adam: AdamConfig {
                    lr: a.lr,
                    ..Default::default()
                },
                checkpoint_every: a.checkpoint_every,
                ..Default::default()
            };
            let outcome = train(model, &videos, &config, Some(&out))?;
            println!(
                "trained {} steps on {} frames; checkpoint in {}",
                outcome.loss_history.len(),
                outcome.manifest.train_frames,
                out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Eval(a) => {
            let checkpoint = a
                .checkpoint
                .clone()
                .unwrap_or_else(|| run_dir(&a.data, a.motion).join(CHECKPOINT_FILE));
            let out = a.out.clone().unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_default()
                    .join("eval")
            });
            echo_config(&out, global, "eval", a)?;
            let conditions = a.conditions().map_err(CliError::Usage)?;
            let model = SegModel::load(&checkpoint)?;
            let name = a.name.clone().unwrap_or_else(|| model.spec.source.as_str().to_string());
            let rows = evaluate_test_split(&model, &name, &a.data, &conditions)?;
            let aggregates = emit_report(&rows, &out)?;
            print!("{}", summary_table(&aggregates));
        }
        Command::ShapeEval(a) => {
            let checkpoint = match (&a.checkpoint, &a.data) {
                (Some(c), _) => c.clone(),
                (None, Some(d)) => run_dir(d, a.motion).join(CHECKPOINT_FILE),
                (None, None) => return Err(CliError::Usage("shape-eval needs --checkpoint or --data".into())),
            };
            echo_config(&a.out, global, "shape-eval", a)?;
            let model = SegModel::load(&checkpoint)?;
            let trials = trials(global.seed, a.trials, &trial_config(&a.trial))?;
            let mut rng = ChaCha8Rng::seed_from_u64(global.seed);
            let outcomes = shape_eval(&model, &trials, &mut rng)?;
            let correct = outcomes.iter().filter(|o| o.correct).count();
            let points: Vec<(f64, bool)> = outcomes.iter().map(|o| (o.informative_dots as f64, o.correct)).collect();
            let psychometric = fit_psychometric(&bin_outcomes(&points, a.bin_width)).ok();
            let report = ShapeReport {
                trials: outcomes.len(),
                correct,
                accuracy: correct as f64 / outcomes.len().max(1) as f64,
                p_value: binomial_p_value(correct as u64, outcomes.len() as u64, 0.5)?,
                psychometric,
                outcomes,
            };
            let path = a.out.join(SHAPE_EVAL_FILE);
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            fs::write(&path, text).map_err(io(&path))?;
            println!(
                "accuracy {:.3} ({}/{}), one-sided binomial p = {:.3e}",
                report.accuracy, report.correct, report.trials, report.p_value
            );
        }
        Command::Serve(a) => {
            echo_config(&a.store, global, "serve", a)?;
            let config = motionseg_service::ServeConfig {
                bank_dir: a.bank.clone(),
                data_dir: a.store.clone(),
                addr: a.addr,
            };
            let runtime = tokio::runtime::Runtime::new().map_err(CliError::Server)?;
            runtime.block_on(motionseg_service::serve(config)).map_err(CliError::Server)?;
        }
        Command::Report(a) => {
            echo_config(&a.out, global, "report", a)?;
            let mut rows = Vec::new();
            for p in &a.inputs {
                rows.extend(read_csv(p)?);
            }
            let aggregates = emit_report(&rows, &a.out)?;
            print!("{}", summary_table(&aggregates));
        }
    }
    Ok(())
}
