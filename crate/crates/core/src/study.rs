//! Verification-study logic: counterbalanced trial plans, sessions,
//! judgment capture and analysis. Transport lives in the study crate.
//!
//! Examples are split into `k` contiguous blocks for `k` scenarios. A
//! participant sees block `j` under the `j`-th scenario of their Latin-square
//! row, so each example is judged once per participant. Example order within
//! a block is shuffled per (participant, scenario).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::RwLock;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::{Document, SampleRef};
use crate::seeds::derive_seed;

/// Client and server elapsed times further apart than this flag the record.
pub const DIVERGENCE_LIMIT_MS: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    NoAlignment,
    BaselineModel,
    SynqaModel,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::NoAlignment, Scenario::BaselineModel, Scenario::SynqaModel];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::NoAlignment => "no_alignment",
            Scenario::BaselineModel => "baseline_model",
            Scenario::SynqaModel => "synqa_model",
        }
    }

    pub fn highlights(self) -> bool {
        self != Scenario::NoAlignment
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyExample {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub documents: Vec<Document>,
    #[serde(default)]
    pub highlights: BTreeMap<Scenario, BTreeSet<SampleRef>>,
    pub gold_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenarios: Vec<Scenario>,
    pub examples: Vec<StudyExample>,
    #[serde(default)]
    pub participants_expected: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StudyError {
    #[error("invalid study config: {0}")]
    InvalidConfig(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("example `{0}` is not part of this session")]
    UnknownExample(String),
    #[error("example `{0}` has not been served yet")]
    NotServed(String),
    #[error("example `{0}` was already judged")]
    Duplicate(String),
    #[error("elapsed_ms must be positive")]
    InvalidElapsed,
    #[error("state file: {0}")]
    State(String),
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: String| Err(StudyError::InvalidConfig(m));
        if self.scenarios.is_empty() {
            return bad("no scenarios".into());
        }
        if self.scenarios.iter().collect::<HashSet<_>>().len() != self.scenarios.len() {
            return bad("scenarios repeat".into());
        }
        if self.examples.len() < self.scenarios.len() {
            return bad(format!(
                "{} examples cannot fill {} scenario blocks",
                self.examples.len(),
                self.scenarios.len()
            ));
        }
        let mut ids = HashSet::new();
        for ex in &self.examples {
            if !ids.insert(ex.id.as_str()) {
                return bad(format!("example id {} repeats", ex.id));
            }
            for s in self.scenarios.iter().filter(|s| s.highlights()) {
                let Some(refs) = ex.highlights.get(s) else {
                    return bad(format!("example {} lacks highlights for {}", ex.id, s.as_str()));
                };
                for r in refs {
                    let ok = ex.documents.get(r.doc).is_some_and(|d| r.sent < d.sentences.len());
                    if !ok {
                        return bad(format!("example {} highlight {r:?} out of range", ex.id));
                    }
                }
            }
        }
        Ok(())
    }

    /// Contiguous block boundaries; earlier blocks take the remainder.
    fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        let (n, k) = (self.examples.len(), self.scenarios.len());
        let mut start = 0;
        (0..k)
            .map(|j| {
                let len = n / k + usize::from(j < n % k);
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }
}

/// Row `participant_index mod k` of the cyclic Latin square: the scenarios
/// rotated left by that amount.
pub fn latin_square<T: Clone>(scenarios: &[T], participant_index: usize) -> Vec<T> {
    let mut row = scenarios.to_vec();
    if !row.is_empty() {
        let k = row.len();
        row.rotate_left(participant_index % k);
    }
    row
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedTrial {
    pub example_index: usize,
    pub scenario: Scenario,
    pub block: usize,
}

/// Full trial sequence for one participant.
pub fn trial_plan(config: &StudyConfig, participant_index: usize) -> Vec<PlannedTrial> {
    let order = latin_square(&config.scenarios, participant_index);
    let mut plan = Vec::with_capacity(config.examples.len());
    for (block, (range, scenario)) in config.blocks().into_iter().zip(order).enumerate() {
        let mut indices: Vec<usize> = range.collect();
        let seed = derive_seed(
            config.seed,
            scenario.as_str(),
            participant_index as u64,
        );
        indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        plan.extend(indices.into_iter().map(|example_index| PlannedTrial { example_index, scenario, block }));
    }
    plan
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
    }
}

/// Clock advanced by hand; for tests and simulations.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Correct,
    Incorrect,
}

impl Judgment {
    pub fn as_str(self) -> &'static str {
        match self {
            Judgment::Correct => "correct",
            Judgment::Incorrect => "incorrect",
        }
    }

    pub fn matches(self, gold_correct: bool) -> bool {
        (self == Judgment::Correct) == gold_correct
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub participant: usize,
    pub session_id: String,
    pub scenario: Scenario,
    pub example_id: String,
    pub judgment: Judgment,
    pub gold_correct: bool,
    pub elapsed_ms: u64,
    pub server_elapsed_ms: u64,
    pub position: usize,
    pub block: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub participant_index: usize,
    pub scenario_order: Vec<Scenario>,
    pub total_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPayload {
    pub example_id: String,
    pub scenario: Scenario,
    pub position: usize,
    pub total: usize,
    pub question: String,
    pub answer: String,
    pub documents: Vec<Document>,
    pub highlights: Vec<SampleRef>,
    /// Shown when nothing is highlighted: the whole context must be read.
    pub read_all: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTrial {
    Trial(TrialPayload),
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub recorded: bool,
    pub flagged: bool,
    pub remaining: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Session {
    id: String,
    participant: usize,
    plan: Vec<PlannedTrial>,
    /// Position of the first unjudged trial.
    cursor: usize,
    served_at_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct State {
    sessions: BTreeMap<String, Session>,
    records: Vec<TrialRecord>,
}

/// Concurrent study state with optional snapshot persistence.
pub struct StudyStore {
    config: StudyConfig,
    clock: Arc<dyn Clock>,
    state: RwLock<State>,
    state_path: Option<PathBuf>,
}

impl StudyStore {
    pub fn new(config: StudyConfig, clock: Arc<dyn Clock>) -> Result<Self, StudyError> {
        config.validate()?;
        Ok(Self { config, clock, state: RwLock::new(State::default()), state_path: None })
    }

    /// Persists state to `path` after every change, resuming from it if it
    /// already exists.
    pub fn with_state_file(mut self, path: impl Into<PathBuf>) -> Result<Self, StudyError> {
        let path = path.into();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| StudyError::State(e.to_string()))?;
            *self.state.get_mut() = serde_json::from_str(&text).map_err(|e| StudyError::State(e.to_string()))?;
        }
        self.state_path = Some(path);
        Ok(self)
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    fn persist(&self, state: &State) -> Result<(), StudyError> {
        let Some(path) = &self.state_path else { return Ok(()) };
        let tmp = path.with_extension("partial");
        let text = serde_json::to_string(state).map_err(|e| StudyError::State(e.to_string()))?;
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| StudyError::State(e.to_string()))
    }

    pub fn create_session(&self) -> Result<SessionInfo, StudyError> {
        let mut state = self.state.write();
        let participant = state.sessions.len();
        let id = format!("p{participant:04}-{:08x}", derive_seed(self.config.seed, "session", participant as u64) as u32);
        let plan = trial_plan(&self.config, participant);
        let info = SessionInfo {
            session_id: id.clone(),
            participant_index: participant,
            scenario_order: latin_square(&self.config.scenarios, participant),
            total_trials: plan.len(),
        };
        state.sessions.insert(id.clone(), Session { id, participant, plan, cursor: 0, served_at_ms: None });
        self.persist(&state)?;
        Ok(info)
    }

    pub fn session_info(&self, session_id: &str) -> Result<SessionInfo, StudyError> {
        let state = self.state.read();
        let s = state.sessions.get(session_id).ok_or_else(|| StudyError::UnknownSession(session_id.into()))?;
        Ok(SessionInfo {
            session_id: s.id.clone(),
            participant_index: s.participant,
            scenario_order: latin_square(&self.config.scenarios, s.participant),
            total_trials: s.plan.len(),
        })
    }

    /// Serves the first unjudged trial. Serving again before a judgment
    /// returns the same trial and restarts the server-side timer.
    pub fn next_trial(&self, session_id: &str) -> Result<NextTrial, StudyError> {
        let mut state = self.state.write();
        let now = self.clock.now_ms();
        let s = state
            .sessions
            .get_mut(session_id)
            .ok_or_else(|| StudyError::UnknownSession(session_id.into()))?;
        let Some(trial) = s.plan.get(s.cursor).cloned() else {
            return Ok(NextTrial::Finished);
        };
        s.served_at_ms = Some(now);
        let (position, total) = (s.cursor, s.plan.len());
        self.persist(&state)?;
        let ex = &self.config.examples[trial.example_index];
        let highlights: Vec<SampleRef> = if trial.scenario.highlights() {
            ex.highlights.get(&trial.scenario).map(|h| h.iter().copied().collect()).unwrap_or_default()
        } else {
            Vec::new()
        };
        Ok(NextTrial::Trial(TrialPayload {
            example_id: ex.id.clone(),
            scenario: trial.scenario,
            position,
            total,
            question: ex.question.clone(),
            answer: ex.answer.clone(),
            documents: ex.documents.clone(),
            read_all: highlights.is_empty(),
            highlights,
        }))
    }

    pub fn submit_judgment(
        &self,
        session_id: &str,
        example_id: &str,
        judgment: Judgment,
        client_elapsed_ms: u64,
    ) -> Result<Ack, StudyError> {
        let mut state = self.state.write();
        let now = self.clock.now_ms();
        let s = state
            .sessions
            .get_mut(session_id)
            .ok_or_else(|| StudyError::UnknownSession(session_id.into()))?;
        let position = s
            .plan
            .iter()
            .position(|t| self.config.examples[t.example_index].id == example_id)
            .ok_or_else(|| StudyError::UnknownExample(example_id.into()))?;
        if position < s.cursor {
            return Err(StudyError::Duplicate(example_id.into()));
        }
        let served_at = match s.served_at_ms {
            Some(t) if position == s.cursor => t,
            _ => return Err(StudyError::NotServed(example_id.into())),
        };
        if client_elapsed_ms == 0 {
            return Err(StudyError::InvalidElapsed);
        }
        let trial = s.plan[position].clone();
        let server_elapsed_ms = now.saturating_sub(served_at);
        let flagged = client_elapsed_ms.abs_diff(server_elapsed_ms) > DIVERGENCE_LIMIT_MS;
        s.cursor += 1;
        s.served_at_ms = None;
        let remaining = s.plan.len() - s.cursor;
        let record = TrialRecord {
            participant: s.participant,
            session_id: s.id.clone(),
            scenario: trial.scenario,
            example_id: example_id.to_string(),
            judgment,
            gold_correct: self.config.examples[trial.example_index].gold_correct,
            elapsed_ms: client_elapsed_ms,
            server_elapsed_ms,
            position,
            block: trial.block,
            flagged,
        };
        state.records.push(record);
        self.persist(&state)?;
        Ok(Ack { recorded: true, flagged, remaining })
    }

    pub fn records(&self) -> Vec<TrialRecord> {
        self.state.read().records.clone()
    }
}

pub const RESULTS_CSV_HEADER: &str =
    "participant,scenario,example,judgment,gold,elapsed_ms_client,elapsed_ms_server,flagged";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn results_csv(records: &[TrialRecord]) -> String {
    let mut out = format!("{RESULTS_CSV_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.participant,
            r.scenario.as_str(),
            csv_field(&r.example_id),
            r.judgment.as_str(),
            if r.gold_correct { "correct" } else { "incorrect" },
            r.elapsed_ms,
            r.server_elapsed_ms,
            r.flagged
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub n: usize,
    pub mean_time_s: f64,
    pub accuracy: f64,
}

/// Mean client time in seconds and accuracy per scenario, in `scenarios`
/// order. Scenarios without records are left out with a warning.
pub fn analyze(records: &[TrialRecord], scenarios: &[Scenario]) -> Vec<ScenarioSummary> {
    scenarios
        .iter()
        .filter_map(|&scenario| {
            let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.scenario == scenario).collect();
            if rows.is_empty() {
                tracing::warn!(scenario = scenario.as_str(), "no records; omitted from analysis");
                return None;
            }
            let n = rows.len();
            let total_ms: u64 = rows.iter().map(|r| r.elapsed_ms).sum();
            let correct = rows.iter().filter(|r| r.judgment.matches(r.gold_correct)).count();
            Some(ScenarioSummary {
                scenario,
                n,
                mean_time_s: total_ms as f64 / 1000.0 / n as f64,
                accuracy: correct as f64 / n as f64,
            })
        })
        .collect()
}

pub const ANALYSIS_CSV_HEADER: &str = "scenario,time_s,accuracy_pct";

/// Analysis table; `label` maps a scenario to its display name.
pub fn analysis_csv(summaries: &[ScenarioSummary], label: impl Fn(Scenario) -> String) -> String {
    let mut out = format!("{ANALYSIS_CSV_HEADER}\n");
    for s in summaries {
        let _ = writeln!(out, "{}, {:.1}, {:.1}", label(s.scenario), s.mean_time_s, s.accuracy * 100.0);
    }
    out
}

pub fn load_config(path: impl AsRef<Path>) -> Result<StudyConfig, StudyError> {
    let text = std::fs::read_to_string(path).map_err(|e| StudyError::InvalidConfig(e.to_string()))?;
    let config: StudyConfig = serde_json::from_str(&text).map_err(|e| StudyError::InvalidConfig(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(i: usize) -> StudyExample {
        StudyExample {
            id: format!("e{i}"),
            question: format!("q{i}"),
            answer: format!("a{i}"),
            documents: vec![Document { article_id: "d".into(), title: "D".into(), sentences: vec!["s0".into(), "s1".into()] }],
            highlights: [
                (Scenario::BaselineModel, [SampleRef::new(0, 0)].into()),
                (Scenario::SynqaModel, [SampleRef::new(0, 1)].into()),
            ]
            .into(),
            gold_correct: i % 2 == 0,
        }
    }

    fn config(n: usize) -> StudyConfig {
        StudyConfig { scenarios: Scenario::ALL.to_vec(), examples: (0..n).map(example).collect(), participants_expected: 12, seed: 1 }
    }

    #[test]
    fn latin_rows() {
        let s = ["A", "B", "C"];
        assert_eq!(latin_square(&s, 0), ["A", "B", "C"]);
        assert_eq!(latin_square(&s, 1), ["B", "C", "A"]);
        assert_eq!(latin_square(&s, 2), ["C", "A", "B"]);
        assert_eq!(latin_square(&s, 3), ["A", "B", "C"]);
        assert_eq!(latin_square(&["X"], 5), ["X"]);
    }

    #[test]
    fn plan_covers_each_example_once() {
        let c = config(7);
        for p in 0..6 {
            let plan = trial_plan(&c, p);
            let mut seen: Vec<usize> = plan.iter().map(|t| t.example_index).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
            let order = latin_square(&c.scenarios, p);
            for t in &plan {
                assert_eq!(t.scenario, order[t.block]);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = config(3);
        c.examples[0].highlights.remove(&Scenario::SynqaModel);
        assert!(c.validate().is_err());
        assert!(config(2).validate().is_err());
        let mut c = config(3);
        c.examples[1].highlights.insert(Scenario::SynqaModel, [SampleRef::new(0, 5)].into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn session_flow_and_errors() {
        let clock = Arc::new(ManualClock::new(1_000));
        let store = StudyStore::new(config(3), clock.clone()).unwrap();
        let info = store.create_session().unwrap();
        assert_eq!(info.total_trials, 3);
        let id = info.session_id.as_str();
        assert!(matches!(store.next_trial("nope"), Err(StudyError::UnknownSession(_))));

        let NextTrial::Trial(t) = store.next_trial(id).unwrap() else { panic!() };
        assert_eq!(t.scenario, Scenario::NoAlignment);
        assert!(t.highlights.is_empty() && t.read_all);
        let other = (0..3).map(|i| format!("e{i}")).find(|e| *e != t.example_id).unwrap();
        assert!(matches!(store.submit_judgment(id, &other, Judgment::Correct, 10), Err(StudyError::NotServed(_))));
        assert!(matches!(store.submit_judgment(id, "zz", Judgment::Correct, 10), Err(StudyError::UnknownExample(_))));
        assert!(matches!(store.submit_judgment(id, &t.example_id, Judgment::Correct, 0), Err(StudyError::InvalidElapsed)));

        clock.advance(3_000);
        let ack = store.submit_judgment(id, &t.example_id, Judgment::Correct, 3_000).unwrap();
        assert_eq!(ack, Ack { recorded: true, flagged: false, remaining: 2 });
        assert!(matches!(store.submit_judgment(id, &t.example_id, Judgment::Correct, 5), Err(StudyError::Duplicate(_))));

        let NextTrial::Trial(t2) = store.next_trial(id).unwrap() else { panic!() };
        assert_eq!(t2.highlights, vec![SampleRef::new(0, 0)]);
        // resume: serving again before judging yields the same trial
        let NextTrial::Trial(again) = store.next_trial(id).unwrap() else { panic!() };
        assert_eq!(again.example_id, t2.example_id);
        clock.advance(20_000);
        let ack = store.submit_judgment(id, &t2.example_id, Judgment::Incorrect, 4_000).unwrap();
        assert!(ack.flagged);

        let NextTrial::Trial(t3) = store.next_trial(id).unwrap() else { panic!() };
        clock.advance(1_000);
        store.submit_judgment(id, &t3.example_id, Judgment::Correct, 1_000).unwrap();
        assert_eq!(store.next_trial(id).unwrap(), NextTrial::Finished);

        let records = store.records();
        assert_eq!(records.len(), 3);
        assert_eq!(records[1].server_elapsed_ms, 20_000);
        assert!(records[1].flagged && !records[0].flagged);
        let csv = results_csv(&records);
        assert!(csv.starts_with(RESULTS_CSV_HEADER));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn state_file_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        let clock = Arc::new(ManualClock::new(0));
        let id = {
            let store = StudyStore::new(config(3), clock.clone()).unwrap().with_state_file(&path).unwrap();
            let id = store.create_session().unwrap().session_id;
            let NextTrial::Trial(t) = store.next_trial(&id).unwrap() else { panic!() };
            store.submit_judgment(&id, &t.example_id, Judgment::Correct, 5).unwrap();
            id
        };
        let store = StudyStore::new(config(3), clock).unwrap().with_state_file(&path).unwrap();
        assert_eq!(store.records().len(), 1);
        let NextTrial::Trial(t) = store.next_trial(&id).unwrap() else { panic!() };
        assert_eq!(t.position, 1);
    }

    fn record(scenario: Scenario, judgment: Judgment, gold: bool, ms: u64) -> TrialRecord {
        TrialRecord {
            participant: 0,
            session_id: "s".into(),
            scenario,
            example_id: "e".into(),
            judgment,
            gold_correct: gold,
            elapsed_ms: ms,
            server_elapsed_ms: ms,
            position: 0,
            block: 0,
            flagged: false,
        }
    }

    #[test]
    fn analysis_means() {
        let recs = vec![
            record(Scenario::SynqaModel, Judgment::Correct, true, 1_000),
            record(Scenario::SynqaModel, Judgment::Correct, false, 3_000),
            record(Scenario::NoAlignment, Judgment::Incorrect, false, 2_500),
        ];
        let out = analyze(&recs, &Scenario::ALL);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].scenario, Scenario::NoAlignment);
        assert_eq!((out[0].mean_time_s, out[0].accuracy), (2.5, 1.0));
        assert_eq!((out[1].mean_time_s, out[1].accuracy), (2.0, 0.5));
    }

    #[test]
    fn analysis_csv_shape() {
        let s = ScenarioSummary { scenario: Scenario::SynqaModel, n: 1, mean_time_s: 148.6, accuracy: 0.864 };
        let csv = analysis_csv(&[s], |_| "SynQA".into());
        assert_eq!(csv, "scenario,time_s,accuracy_pct\nSynQA, 148.6, 86.4\n");
    }
}
