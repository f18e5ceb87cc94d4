//! Session plans, response records and result summaries. No I/O here.

use chrono::{DateTime, Utc};
use motionseg::eval::{bin_outcomes, fit_psychometric, Psychometric};
use motionseg::stimuli::{option_name, StimulusBank, STIMULI_DIR};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

pub const DEFAULT_TRAINING_TRIALS: usize = 20;
pub const DEFAULT_TEST_TRIALS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    Test,
}

/// Screen position of a shape option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    #[serde(alias = "A")]
    A,
    #[serde(alias = "B")]
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub n_training: usize,
    pub n_test: usize,
    pub seed: Option<u64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            n_training: DEFAULT_TRAINING_TRIALS,
            n_test: DEFAULT_TEST_TRIALS,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrial {
    pub stimulus_id: String,
    pub phase: Phase,
    /// Bank option image shown in slot A; slot B shows the other one.
    pub option_in_a: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub seed: u64,
    pub n_training: usize,
    pub n_test: usize,
    pub plan: Vec<PlannedTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub session_id: String,
    pub trial_index: usize,
    pub stimulus_id: String,
    pub phase: Phase,
    pub choice: Slot,
    pub correct: bool,
    pub response_time_ms: f64,
    pub received_at: DateTime<Utc>,
}

/// Training trials first, then test trials, drawn without replacement
/// from a seeded shuffle of the bank.
pub fn plan_session(bank: &StimulusBank, config: &SessionConfig, seed: u64) -> Result<Vec<PlannedTrial>> {
    let needed = config.n_training + config.n_test;
    if needed > bank.len() {
        return Err(ServiceError::InsufficientStimuli {
            available: bank.len(),
            needed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<&str> = bank.entries.iter().map(|e| e.id.as_str()).collect();
    ids.shuffle(&mut rng);
    Ok(ids[..needed]
        .iter()
        .enumerate()
        .map(|(i, id)| PlannedTrial {
            stimulus_id: id.to_string(),
            phase: if i < config.n_training { Phase::Training } else { Phase::Test },
            option_in_a: usize::from(rng.random_bool(0.5)),
        })
        .collect())
}

impl PlannedTrial {
    pub fn option_in(&self, slot: Slot) -> usize {
        match slot {
            Slot::A => self.option_in_a,
            Slot::B => 1 - self.option_in_a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Options {
    pub a: String,
    pub b: String,
}

/// What a participant's client receives for one trial. Carries no label
/// of which option is correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBundle {
    pub session_id: String,
    pub trial_index: usize,
    pub n_trials: usize,
    pub phase: Phase,
    pub stimulus_id: String,
    pub frame_rate: f64,
    pub frames: Vec<String>,
    pub options: Options,
}

pub fn trial_bundle(session: &Session, index: usize, bank: &StimulusBank) -> Result<TrialBundle> {
    let planned = &session.plan[index];
    let entry = bank
        .get(&planned.stimulus_id)
        .ok_or_else(|| ServiceError::Storage(format!("stimulus {} missing from bank", planned.stimulus_id)))?;
    let base = format!("/{STIMULI_DIR}/{}", entry.id);
    Ok(TrialBundle {
        session_id: session.session_id.clone(),
        trial_index: index,
        n_trials: session.plan.len(),
        phase: planned.phase,
        stimulus_id: entry.id.clone(),
        frame_rate: entry.frame_rate,
        frames: (0..entry.n_frames)
            .map(|t| format!("{base}/frames/{}", motionseg::dataset::frame_name(t)))
            .collect(),
        options: Options {
            a: format!("{base}/{}", option_name(planned.option_in(Slot::A))),
            b: format!("{base}/{}", option_name(planned.option_in(Slot::B))),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponsePayload {
    pub trial_index: usize,
    pub choice: Slot,
    pub response_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub trial_index: usize,
    pub phase: Phase,
    /// Feedback, given during training only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    pub next_trial_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBin {
    pub informative_dots_mean: f64,
    pub n_correct: u64,
    pub n_total: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsSummary {
    pub sessions: usize,
    pub n_training_responses: usize,
    pub n_test: usize,
    pub n_correct: usize,
    /// Test-phase accuracy; absent when no test responses exist.
    pub accuracy: Option<f64>,
    pub accuracy_defined: bool,
    pub bins: Vec<AccuracyBin>,
    /// Absent when fewer than two difficulty levels were seen.
    pub psychometric: Option<Psychometric>,
}

/// Pool `records` from `sessions` sessions into a summary.
pub fn summarize(records: &[TrialRecord], sessions: usize, bank: &StimulusBank, bin_width: f64) -> Result<ResultsSummary> {
    if records.is_empty() {
        return Err(ServiceError::NoData);
    }
    let test: Vec<&TrialRecord> = records.iter().filter(|r| r.phase == Phase::Test).collect();
    let n_correct = test.iter().filter(|r| r.correct).count();
    let points = test
        .iter()
        .map(|r| {
            let e = bank
                .get(&r.stimulus_id)
                .ok_or_else(|| ServiceError::Storage(format!("stimulus {} missing from bank", r.stimulus_id)))?;
            Ok((e.informative_dots as f64, r.correct))
        })
        .collect::<Result<Vec<_>>>()?;
    let bins = bin_outcomes(&points, bin_width);
    let psychometric = fit_psychometric(&bins).ok();
    Ok(ResultsSummary {
        sessions,
        n_training_responses: records.len() - test.len(),
        n_test: test.len(),
        n_correct,
        accuracy: (!test.is_empty()).then(|| n_correct as f64 / test.len() as f64),
        accuracy_defined: !test.is_empty(),
        bins: bins
            .iter()
            .map(|b| AccuracyBin {
                informative_dots_mean: b.x,
                n_correct: b.correct,
                n_total: b.total,
                accuracy: b.correct as f64 / b.total as f64,
            })
            .collect(),
        psychometric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use motionseg::dots::{Choice, TrialMetadata};
    use motionseg::shape::StarShape;
    use motionseg::stimuli::BankEntry;

    pub(crate) fn fake_bank(n: usize) -> StimulusBank {
        let shape = StarShape::sample(&mut ChaCha8Rng::seed_from_u64(0), 5.0, 8);
        StimulusBank {
            entries: (0..n)
                .map(|i| BankEntry {
                    id: format!("trial_{i:05}"),
                    n_frames: 30,
                    frame_rate: 30.0,
                    informative_dots: i * 3,
                    target_option: i % 2,
                    metadata: TrialMetadata {
                        seed: i as u64,
                        motion_direction: 0.0,
                        speed: 1.0,
                        target_shape: shape.clone(),
                        distractor_shape: shape.clone(),
                        correct_choice: Choice::Target,
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn plan_layout() {
        let bank = fake_bank(600);
        let cfg = SessionConfig::default();
        let plan = plan_session(&bank, &cfg, 3).unwrap();
        assert_eq!(plan.len(), 520);
        assert!(plan[..20].iter().all(|p| p.phase == Phase::Training));
        assert!(plan[20..].iter().all(|p| p.phase == Phase::Test));
        assert_eq!(plan, plan_session(&bank, &cfg, 3).unwrap());
        assert_ne!(plan, plan_session(&bank, &cfg, 4).unwrap());
        let mut ids: Vec<_> = plan.iter().map(|p| &p.stimulus_id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 520);
        let a_counts = plan.iter().filter(|p| p.option_in_a == 0).count();
        assert!((200..320).contains(&a_counts), "{a_counts}");

        let training_only = SessionConfig {
            n_test: 0,
            ..Default::default()
        };
        assert_eq!(plan_session(&bank, &training_only, 0).unwrap().len(), 20);
        assert!(matches!(
            plan_session(&fake_bank(100), &cfg, 0),
            Err(ServiceError::InsufficientStimuli { available: 100, needed: 520 })
        ));
    }

    fn record(phase: Phase, correct: bool, stimulus: usize) -> TrialRecord {
        TrialRecord {
            session_id: "s".into(),
            trial_index: 0,
            stimulus_id: format!("trial_{stimulus:05}"),
            phase,
            choice: Slot::A,
            correct,
            response_time_ms: 500.0,
            received_at: Utc::now(),
        }
    }

    #[test]
    fn summary_counts_test_phase_only() {
        let bank = fake_bank(20);
        let mut records: Vec<_> = (0..10).map(|i| record(Phase::Test, i < 7, i)).collect();
        records.push(record(Phase::Training, false, 11));
        let s = summarize(&records, 1, &bank, 10.0).unwrap();
        assert_eq!(s.accuracy, Some(0.7));
        assert_eq!((s.n_test, s.n_training_responses), (10, 1));
        assert_eq!(s.bins.iter().map(|b| b.n_total).sum::<u64>(), 10);

        let training = summarize(&records[10..], 1, &bank, 10.0).unwrap();
        assert!(!training.accuracy_defined);
        assert_eq!(training.accuracy, None);
        assert!(matches!(summarize(&[], 0, &bank, 10.0), Err(ServiceError::NoData)));
    }
}
