//! Attribution methods: random, embedding threshold, prompted models and
//! majority-vote ensembles.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, LazyLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::eval::prf;
use crate::llmgate::{ChatRequest, GateError, Gateway, Message};
use crate::prompts;
use crate::sample::{AttributionTask, SampleRef};

#[derive(Debug, Error)]
pub enum AttribError {
    #[error(transparent)]
    Gateway(#[from] GateError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no voters")]
    NoVoters,
    #[error("every ensemble member failed")]
    AllMembersFailed,
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributionPrediction {
    pub refs: BTreeSet<SampleRef>,
    pub method: String,
    pub latency_ms: u64,
    pub raw: Option<String>,
    pub unparseable: bool,
}

pub trait Attributor: Send + Sync {
    fn id(&self) -> &str;
    fn attribute(&self, task: &AttributionTask) -> Result<AttributionPrediction, AttribError>;
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis().try_into().unwrap_or(u64::MAX)
}

/// Includes each sentence independently with probability `p`.
pub struct RandomAttributor {
    id: String,
    p: f64,
    seed: u64,
}

impl RandomAttributor {
    pub fn new(p: f64, seed: u64) -> Result<Self, AttribError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(AttribError::InvalidParameter(format!("p = {p} outside [0, 1]")));
        }
        Ok(Self { id: "random".into(), p, seed })
    }

    /// Seed for one task: the master seed mixed with the task's QA text, so
    /// predictions do not depend on evaluation order.
    fn task_seed(&self, task: &AttributionTask) -> u64 {
        let key = format!("{}\u{1f}{}", task.question, task.answer);
        xxh3_64_with_seed(key.as_bytes(), self.seed)
    }
}

impl Attributor for RandomAttributor {
    fn id(&self) -> &str {
        &self.id
    }

    fn attribute(&self, task: &AttributionTask) -> Result<AttributionPrediction, AttribError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.task_seed(task));
        let refs = task.refs().filter(|_| rng.random_bool(self.p)).collect();
        Ok(AttributionPrediction { refs, method: self.id.clone(), latency_ms: 0, raw: None, unparseable: false })
    }
}

/// Default inclusion probability: mean gold size over mean context size.
pub fn default_random_p<'a>(
    validation: impl IntoIterator<Item = (&'a AttributionTask, &'a BTreeSet<SampleRef>)>,
) -> Result<f64, AttribError> {
    let (mut gold, mut context, mut n) = (0usize, 0usize, 0usize);
    for (task, g) in validation {
        gold += g.len();
        context += task.sentence_count();
        n += 1;
    }
    if n == 0 || context == 0 {
        return Err(AttribError::EmptyValidation);
    }
    Ok(gold as f64 / context as f64)
}

/// Cosine of each context sentence (in global order) with the
/// question and answer joined by a space.
pub fn sentence_scores(task: &AttributionTask, gateway: &Gateway) -> Result<Vec<f64>, AttribError> {
    let mut texts: Vec<String> = vec![format!("{} {}", task.question, task.answer)];
    texts.extend(task.documents.iter().flat_map(|d| d.sentences.iter().cloned()));
    let vectors = gateway.embed_all(&texts)?;
    let (query, sentences) = vectors.split_first().expect("query embedded");
    Ok(sentences.iter().map(|v| query.cosine(v)).collect())
}

fn refs_at_threshold(task: &AttributionTask, scores: &[f64], threshold: f64) -> BTreeSet<SampleRef> {
    task.refs()
        .zip(scores)
        .filter(|(_, &s)| s >= threshold)
        .map(|(r, _)| r)
        .collect()
}

/// Keeps sentences whose embedding cosine with the QA pair reaches a threshold.
pub struct EmbedThresholdAttributor {
    id: String,
    gateway: Arc<Gateway>,
    threshold: f64,
}

impl EmbedThresholdAttributor {
    pub fn new(id: impl Into<String>, gateway: Arc<Gateway>, threshold: f64) -> Self {
        Self { id: id.into(), gateway, threshold }
    }
}

impl Attributor for EmbedThresholdAttributor {
    fn id(&self) -> &str {
        &self.id
    }

    fn attribute(&self, task: &AttributionTask) -> Result<AttributionPrediction, AttribError> {
        let start = Instant::now();
        let scores = sentence_scores(task, &self.gateway)?;
        Ok(AttributionPrediction {
            refs: refs_at_threshold(task, &scores, self.threshold),
            method: self.id.clone(),
            latency_ms: elapsed_ms(start),
            raw: None,
            unparseable: false,
        })
    }
}

/// Grid value maximizing mean per-example F1 over precomputed scores; ties
/// go to the larger threshold.
pub fn tune_threshold_on_scores(
    validation: &[(&AttributionTask, &[f64], &BTreeSet<SampleRef>)],
    grid: &[f64],
) -> Result<f64, AttribError> {
    if grid.is_empty() {
        return Err(AttribError::EmptyGrid);
    }
    if validation.is_empty() {
        return Err(AttribError::EmptyValidation);
    }
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let mean = validation
            .iter()
            .map(|(task, scores, gold)| prf(&refs_at_threshold(task, scores, t), gold).f1)
            .sum::<f64>()
            / validation.len() as f64;
        best = match best {
            Some((bt, bf)) if bf > mean || (bf == mean && bt >= t) => Some((bt, bf)),
            _ => Some((t, mean)),
        };
    }
    Ok(best.expect("grid non-empty").0)
}

pub fn tune_threshold(
    validation: &[(&AttributionTask, &BTreeSet<SampleRef>)],
    gateway: &Gateway,
    grid: &[f64],
) -> Result<f64, AttribError> {
    if grid.is_empty() {
        return Err(AttribError::EmptyGrid);
    }
    let scores = validation
        .iter()
        .map(|(task, _)| sentence_scores(task, gateway))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<_> = validation
        .iter()
        .zip(&scores)
        .map(|((task, gold), s)| (*task, s.as_slice(), *gold))
        .collect();
    tune_threshold_on_scores(&rows, grid)
}

/// Result of reading sentence numbers out of a model reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedReply {
    pub numbers: BTreeSet<usize>,
    pub dropped: Vec<u64>,
    pub unparseable: bool,
}

static PARENTHESIZED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(\s*(\d+)\s*\)").unwrap());
static BARE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d+)\b").unwrap());

/// Collects every `(k)` in `reply`, falling back to bare integers when no
/// parenthesized ones appear. Numbers `>= n_sentences` are dropped. A reply
/// with no integers at all is unparseable.
pub fn parse_reply(reply: &str, n_sentences: usize) -> ParsedReply {
    let mut found: Vec<u64> = PARENTHESIZED
        .captures_iter(reply)
        .filter_map(|c| c[1].parse().ok())
        .collect();
    if found.is_empty() {
        found = BARE.captures_iter(reply).filter_map(|c| c[1].parse().ok()).collect();
    }
    let unparseable = found.is_empty();
    let (kept, dropped): (Vec<u64>, Vec<u64>) =
        found.into_iter().partition(|&k| k < n_sentences as u64);
    ParsedReply { numbers: kept.into_iter().map(|k| k as usize).collect(), dropped, unparseable }
}

pub fn render_attribution_request(task: &AttributionTask, model: &str, temperature: f64) -> ChatRequest {
    ChatRequest::new(
        model,
        vec![Message::system(prompts::attribution_system()), Message::user(prompts::attribution_user(task))],
    )
    .with_temperature(temperature)
}

/// Zero-shot prompting of a chat model. Fine-tuned models use the same
/// prompt and parser under their own id and model name.
pub struct PromptAttributor {
    id: String,
    model: String,
    temperature: f64,
    gateway: Arc<Gateway>,
}

impl PromptAttributor {
    pub fn new(id: impl Into<String>, gateway: Arc<Gateway>, model: impl Into<String>) -> Self {
        Self { id: id.into(), model: model.into(), temperature: 0.0, gateway }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }
}

impl Attributor for PromptAttributor {
    fn id(&self) -> &str {
        &self.id
    }

    fn attribute(&self, task: &AttributionTask) -> Result<AttributionPrediction, AttribError> {
        let start = Instant::now();
        let request = render_attribution_request(task, &self.model, self.temperature);
        let raw = self.gateway.chat(&request)?;
        let parsed = parse_reply(&raw, task.sentence_count());
        if !parsed.dropped.is_empty() {
            tracing::warn!(method = %self.id, dropped = ?parsed.dropped, "out-of-range sentence numbers");
        }
        let refs = parsed
            .numbers
            .iter()
            .map(|&n| task.ref_at(n).expect("number is in range"))
            .collect();
        Ok(AttributionPrediction {
            refs,
            method: self.id.clone(),
            latency_ms: elapsed_ms(start),
            raw: Some(raw),
            unparseable: parsed.unparseable,
        })
    }
}

/// Majority vote over ballots; `None` marks an abstaining voter. A ref is
/// kept when `2 * votes >= voters` among non-abstaining voters.
pub fn vote<T: Ord + Clone>(ballots: &[Option<BTreeSet<T>>]) -> Result<BTreeSet<T>, AttribError> {
    let cast: Vec<&BTreeSet<T>> = ballots.iter().flatten().collect();
    if cast.is_empty() {
        return Err(if ballots.is_empty() { AttribError::NoVoters } else { AttribError::AllMembersFailed });
    }
    let mut tally: std::collections::BTreeMap<&T, usize> = std::collections::BTreeMap::new();
    for ballot in &cast {
        for r in *ballot {
            *tally.entry(r).or_default() += 1;
        }
    }
    Ok(tally
        .into_iter()
        .filter(|&(_, votes)| 2 * votes >= cast.len())
        .map(|(r, _)| r.clone())
        .collect())
}

pub struct EnsembleAttributor {
    id: String,
    members: Vec<Box<dyn Attributor>>,
}

impl EnsembleAttributor {
    pub fn new(id: impl Into<String>, members: Vec<Box<dyn Attributor>>) -> Result<Self, AttribError> {
        if members.len() < 2 {
            return Err(AttribError::InvalidParameter("an ensemble needs at least 2 members".into()));
        }
        Ok(Self { id: id.into(), members })
    }
}

impl Attributor for EnsembleAttributor {
    fn id(&self) -> &str {
        &self.id
    }

    fn attribute(&self, task: &AttributionTask) -> Result<AttributionPrediction, AttribError> {
        let start = Instant::now();
        let ballots: Vec<Option<BTreeSet<SampleRef>>> = self
            .members
            .iter()
            .map(|m| match m.attribute(task) {
                Ok(p) => Some(p.refs),
                Err(e) => {
                    tracing::warn!(member = m.id(), error = %e, "ensemble member abstains");
                    None
                }
            })
            .collect();
        Ok(AttributionPrediction {
            refs: vote(&ballots)?,
            method: self.id.clone(),
            latency_ms: elapsed_ms(start),
            raw: None,
            unparseable: false,
        })
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub method: String,
    pub refs: Vec<SampleRef>,
    pub raw: Option<String>,
    #[serde(default)]
    pub unparseable: bool,
}

impl PredictionRecord {
    pub fn new(sample_id: impl Into<String>, prediction: &AttributionPrediction) -> Self {
        Self {
            sample_id: sample_id.into(),
            method: prediction.method.clone(),
            refs: prediction.refs.iter().copied().collect(),
            raw: prediction.raw.clone(),
            unparseable: prediction.unparseable,
        }
    }
}

pub fn save_predictions(records: &[PredictionRecord], path: impl AsRef<Path>) -> Result<(), AttribError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>, AttribError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| AttribError::Parse { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llmgate::{chat_response, embedding_response, Endpoint, FnBackend, GatewayConfig};
    use crate::sample::Document;
    use serde_json::Value;

    fn task(n: usize) -> AttributionTask {
        AttributionTask {
            question: "q".into(),
            answer: "a".into(),
            history: vec![],
            documents: vec![Document {
                article_id: "d".into(),
                title: "D".into(),
                sentences: (0..n).map(|i| format!("s{i}")).collect(),
            }],
        }
    }

    fn refs(xs: &[usize]) -> BTreeSet<SampleRef> {
        xs.iter().map(|&s| SampleRef::new(0, s)).collect()
    }

    #[test]
    fn random_extremes_and_rate() {
        let t = task(10);
        assert!(RandomAttributor::new(0.0, 1).unwrap().attribute(&t).unwrap().refs.is_empty());
        assert_eq!(RandomAttributor::new(1.0, 1).unwrap().attribute(&t).unwrap().refs.len(), 10);
        assert!(RandomAttributor::new(1.5, 1).is_err());

        let big = task(10_000);
        let n = RandomAttributor::new(0.15, 3).unwrap().attribute(&big).unwrap().refs.len();
        let rate = n as f64 / 10_000.0;
        assert!((rate - 0.15).abs() <= 0.01, "rate {rate}");
    }

    #[test]
    fn default_p_is_ratio_of_means() {
        let (t1, t2) = (task(4), task(6));
        let (g1, g2) = (refs(&[0]), refs(&[0, 1, 2]));
        let p = default_random_p([(&t1, &g1), (&t2, &g2)]).unwrap();
        assert!((p - 0.4).abs() < 1e-12);
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_reply("(2), (5)", 6).numbers, [2, 5].into());
        assert_eq!(parse_reply("Sentences (1) and (3) support it", 6).numbers, [1, 3].into());
        let none = parse_reply("none", 6);
        assert!(none.numbers.is_empty() && none.unparseable);
        let bare = parse_reply("1, 4", 6);
        assert_eq!(bare.numbers, [1, 4].into());
        let out_of_range = parse_reply("(2), (9)", 6);
        assert_eq!(out_of_range.numbers, [2].into());
        assert_eq!(out_of_range.dropped, vec![9]);
        assert!(!out_of_range.unparseable);
    }

    #[test]
    fn vote_threshold() {
        let b = |xs: &[usize]| Some(refs(xs));
        assert_eq!(vote(&[b(&[1]), b(&[1]), b(&[])]).unwrap(), refs(&[1]));
        assert_eq!(vote(&[b(&[1]), b(&[])]).unwrap(), refs(&[1]));
        assert_eq!(vote(&[b(&[1]), b(&[]), b(&[])]).unwrap(), refs(&[]));
        assert_eq!(vote(&[b(&[1]), b(&[]), b(&[]), b(&[])]).unwrap(), refs(&[]));
        assert_eq!(vote(&[b(&[1]), None, b(&[])]).unwrap(), refs(&[1]));
        assert!(matches!(vote::<usize>(&[None, None]), Err(AttribError::AllMembersFailed)));
        assert!(matches!(vote::<usize>(&[]), Err(AttribError::NoVoters)));
    }

    #[test]
    fn tuning_picks_best_and_breaks_ties_high() {
        let t = task(2);
        let gold = refs(&[0]);
        let scores = [0.6, 0.4];
        let rows = [(&t, &scores[..], &gold)];
        // 0.3 keeps both (F1 2/3), 0.5 keeps exactly the gold, 0.7 keeps none
        assert_eq!(tune_threshold_on_scores(&rows, &[0.3, 0.5, 0.7]).unwrap(), 0.5);
        let flat = [0.9, 0.9];
        let gold_all = refs(&[0, 1]);
        let rows = [(&t, &flat[..], &gold_all)];
        assert_eq!(tune_threshold_on_scores(&rows, &[0.1, 0.2, 0.3]).unwrap(), 0.3);
        assert!(matches!(tune_threshold_on_scores(&rows, &[]), Err(AttribError::EmptyGrid)));
    }

    fn basis_gateway() -> Arc<Gateway> {
        // query → e0; sentence 0 → (0.9, √0.19); sentence 1 → (0.3, √0.91)
        let backend = FnBackend(|endpoint, body: &Value| {
            assert_eq!(endpoint, Endpoint::Embed);
            let texts = body["input"].as_array().unwrap();
            let vectors = texts
                .iter()
                .map(|t| match t.as_str().unwrap() {
                    "s0" => vec![0.9, 0.19f32.sqrt()],
                    "s1" => vec![0.3, 0.91f32.sqrt()],
                    _ => vec![1.0, 0.0],
                })
                .collect::<Vec<_>>();
            Ok(embedding_response(&vectors))
        });
        Arc::new(Gateway::live(Arc::new(backend), GatewayConfig::default()))
    }

    #[test]
    fn embed_threshold_uses_cosines() {
        let gw = basis_gateway();
        let t = task(2);
        let scores = sentence_scores(&t, &gw).unwrap();
        assert!((scores[0] - 0.9).abs() < 1e-5 && (scores[1] - 0.3).abs() < 1e-5);
        let at = |th| EmbedThresholdAttributor::new("enc", gw.clone(), th).attribute(&t).unwrap().refs;
        assert_eq!(at(0.5), refs(&[0]));
        assert_eq!(at(-1.0), refs(&[0, 1]));
        assert!(at(1.01).is_empty());
    }

    #[test]
    fn prompt_attributor_parses_reply() {
        let backend = FnBackend(|_, body: &Value| {
            let user = body["messages"][1]["content"].as_str().unwrap();
            assert!(user.contains("(1) s1"));
            Ok(chat_response("(1), (7)"))
        });
        let gw = Arc::new(Gateway::live(Arc::new(backend), GatewayConfig::default()));
        let p = PromptAttributor::new("zs", gw, "m").attribute(&task(3)).unwrap();
        assert_eq!(p.refs, refs(&[1]));
        assert_eq!(p.raw.as_deref(), Some("(1), (7)"));
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let rec = PredictionRecord {
            sample_id: "s1".into(),
            method: "m".into(),
            refs: vec![SampleRef::new(0, 2)],
            raw: Some("(2)".into()),
            unparseable: false,
        };
        save_predictions(std::slice::from_ref(&rec), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(r#""refs":[[0,2]]"#));
        assert_eq!(load_predictions(&path).unwrap(), vec![rec]);
    }
}
