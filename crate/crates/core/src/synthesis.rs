//! QA synthesis: render generation prompts, parse and validate model
//! output, and retry until a context yields valid pairs.
//!
//! Every emitted [`QAPair`] cites only sentences that were offered in the
//! prompt; anything else is rejected before it leaves this module.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::attribution::{vote, AttribError, Attributor, PromptAttributor};
use crate::contextselect::{DialogueContext, HopChain};
use crate::corpus::{ArticleStore, SentenceRef};
use crate::llmgate::{ChatRequest, GateError, Gateway, Message, DEFAULT_MAX_TOKENS};
use crate::prompts;
use crate::sample::{AttributionTask, SampleRef, Turn};

pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const MIN_DIALOGUE_PAIRS: usize = 5;
pub const MAX_DIALOGUE_PAIRS: usize = 10;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("malformed output: {0}")]
    MalformedOutput(String),
    #[error("hallucinated reference: {0}")]
    HallucinatedRef(String),
    #[error("empty attribution for pair {0}")]
    EmptyAttribution(usize),
    #[error("expected {MIN_DIALOGUE_PAIRS} to {MAX_DIALOGUE_PAIRS} pairs, got {0}")]
    CountViolation(usize),
    #[error("no parsed pair passed validation")]
    NothingValid,
    #[error("context cannot be rendered: {0}")]
    InvalidContext(String),
    #[error("generation failed after {attempts} attempts: {last}")]
    GenerationFailed { attempts: u32, last: String },
    #[error(transparent)]
    Gateway(#[from] GateError),
    #[error(transparent)]
    Attribution(#[from] AttribError),
}

impl SynthError {
    /// Output-level problems worth another attempt.
    pub fn is_recoverable(&self) -> bool {
        matches!(
            self,
            SynthError::MalformedOutput(_)
                | SynthError::HallucinatedRef(_)
                | SynthError::EmptyAttribution(_)
                | SynthError::CountViolation(_)
                | SynthError::NothingValid
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub answer: String,
    pub attributions: BTreeSet<SentenceRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue_history: Option<Vec<Turn>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GenerationContext {
    MultiHop(HopChain),
    Dialogue(DialogueContext),
}

impl GenerationContext {
    /// Articles whose sentences are offered to the generator.
    pub fn source_ids(&self) -> Vec<String> {
        match self {
            GenerationContext::MultiHop(chain) => chain.article_ids.clone(),
            GenerationContext::Dialogue(ctx) => vec![ctx.article_id.clone()],
        }
    }

    /// Every ref a generated pair may cite.
    pub fn offered(&self) -> BTreeSet<SentenceRef> {
        match self {
            GenerationContext::MultiHop(chain) => chain.refs.iter().cloned().collect(),
            GenerationContext::Dialogue(ctx) => ctx
                .range
                .clone()
                .map(|i| SentenceRef::new(ctx.article_id.clone(), i))
                .collect(),
        }
    }
}

/// Decoding parameters for generation prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Total attempts per context, including the first.
    pub max_retries: u32,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            model: "generator".into(),
            temperature: 0.7,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

impl GenerationSettings {
    fn request(&self, system: &str, user: String) -> ChatRequest {
        ChatRequest::new(self.model.clone(), vec![Message::system(system), Message::user(user)])
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
    }
}

pub fn render_multihop_prompt(
    chain: &HopChain,
    store: &ArticleStore,
    settings: &GenerationSettings,
) -> Result<ChatRequest, SynthError> {
    let items = chain
        .refs
        .iter()
        .map(|r| {
            let article = store
                .get(&r.article_id)
                .ok_or_else(|| SynthError::InvalidContext(format!("unknown article {}", r.article_id)))?;
            let sentence = store
                .resolve(r)
                .ok_or_else(|| SynthError::InvalidContext(format!("unresolvable {r:?}")))?;
            Ok((article.title.as_str(), sentence))
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(settings.request(prompts::multihop_system(), prompts::multihop_user(items)))
}

pub fn render_dialogue_prompt(
    context: &DialogueContext,
    store: &ArticleStore,
    settings: &GenerationSettings,
) -> Result<ChatRequest, SynthError> {
    if context.range.is_empty() {
        return Err(SynthError::InvalidContext("empty sentence range".into()));
    }
    let article = store
        .get(&context.article_id)
        .ok_or_else(|| SynthError::InvalidContext(format!("unknown article {}", context.article_id)))?;
    let sentences = article
        .sentences
        .get(context.range.clone())
        .ok_or_else(|| SynthError::InvalidContext("range exceeds article".into()))?;
    Ok(settings.request(
        prompts::dialogue_system(),
        prompts::dialogue_user(&article.title, sentences.iter().map(String::as_str)),
    ))
}

/// Interior of the first fenced code block, if the text has one.
fn strip_fences(text: &str) -> Option<&str> {
    let open = text.find("```")?;
    let after = &text[open + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let close = body.rfind("```").unwrap_or(body.len());
    Some(body[..close].trim())
}

/// Parses JSON, retrying once on the fenced interior.
pub fn parse_json_lenient(text: &str) -> Result<Value, SynthError> {
    match serde_json::from_str(text.trim()) {
        Ok(v) => Ok(v),
        Err(first) => strip_fences(text)
            .and_then(|inner| serde_json::from_str(inner).ok())
            .ok_or_else(|| SynthError::MalformedOutput(first.to_string())),
    }
}

fn required_str<'a>(obj: &'a Value, key: &str) -> Result<&'a str, SynthError> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s),
        Some(Value::String(_)) => Err(SynthError::MalformedOutput(format!("`{key}` is empty"))),
        Some(_) => Err(SynthError::MalformedOutput(format!("`{key}` is not a string"))),
        None => Err(SynthError::MalformedOutput(format!("missing `{key}`"))),
    }
}

fn as_index(v: &Value, what: &str) -> Result<i64, SynthError> {
    v.as_i64()
        .ok_or_else(|| SynthError::MalformedOutput(format!("{what} is not an integer: {v}")))
}

pub fn parse_multihop_response(text: &str, chain: &HopChain) -> Result<QAPair, SynthError> {
    let obj = parse_json_lenient(text)?;
    if !obj.is_object() {
        return Err(SynthError::MalformedOutput("expected a JSON object".into()));
    }
    let question = required_str(&obj, "question")?;
    let answer = required_str(&obj, "answer")?;
    let reasoning = match obj.get("reasoning") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(SynthError::MalformedOutput("`reasoning` is not a string".into())),
        None => return Err(SynthError::MalformedOutput("missing `reasoning`".into())),
    };
    let ids = obj
        .get("ids")
        .ok_or_else(|| SynthError::MalformedOutput("missing `ids`".into()))?
        .as_array()
        .ok_or_else(|| SynthError::MalformedOutput("`ids` is not an array".into()))?;
    let mut attributions = BTreeSet::new();
    for id in ids {
        let pair = id
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| SynthError::MalformedOutput(format!("id {id} is not a pair")))?;
        let (pos, sent) = (as_index(&pair[0], "id")?, as_index(&pair[1], "id")?);
        let r = usize::try_from(pos)
            .ok()
            .filter(|_| sent == 0)
            .and_then(|p| chain.refs.get(p))
            .ok_or_else(|| SynthError::HallucinatedRef(format!("[{pos}, {sent}]")))?;
        attributions.insert(r.clone());
    }
    if attributions.is_empty() {
        return Err(SynthError::EmptyAttribution(0));
    }
    Ok(QAPair {
        question: question.to_string(),
        answer: answer.to_string(),
        attributions,
        reasoning: Some(reasoning),
        dialogue_history: None,
    })
}

pub fn parse_dialogue_response(
    text: &str,
    context: &DialogueContext,
) -> Result<Vec<QAPair>, SynthError> {
    let value = parse_json_lenient(text)?;
    let items = value
        .as_array()
        .ok_or_else(|| SynthError::MalformedOutput("expected a JSON array".into()))?;
    if !(MIN_DIALOGUE_PAIRS..=MAX_DIALOGUE_PAIRS).contains(&items.len()) {
        return Err(SynthError::CountViolation(items.len()));
    }
    let width = context.range.len();
    let mut pairs = Vec::with_capacity(items.len());
    let mut history: Vec<Turn> = Vec::new();
    for (k, item) in items.iter().enumerate() {
        if !item.is_object() {
            return Err(SynthError::MalformedOutput(format!("item {k} is not an object")));
        }
        let question = required_str(item, "question")?;
        let answer = required_str(item, "answer")?;
        let numbers = item
            .get("sentence_numbers")
            .and_then(Value::as_array)
            .ok_or_else(|| SynthError::MalformedOutput(format!("item {k}: missing `sentence_numbers`")))?;
        let mut attributions = BTreeSet::new();
        for n in numbers {
            let n = as_index(n, "sentence number")?;
            let i = usize::try_from(n)
                .ok()
                .filter(|&i| i < width)
                .ok_or_else(|| SynthError::HallucinatedRef(format!("item {k}: sentence {n}")))?;
            attributions.insert(SentenceRef::new(context.article_id.clone(), context.range.start + i));
        }
        if attributions.is_empty() {
            return Err(SynthError::EmptyAttribution(k));
        }
        pairs.push(QAPair {
            question: question.to_string(),
            answer: answer.to_string(),
            attributions,
            reasoning: None,
            dialogue_history: Some(history.clone()),
        });
        history.push(Turn { question: question.to_string(), answer: answer.to_string() });
    }
    Ok(pairs)
}

/// Outcome of checking one parsed pair against the offered context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub index: usize,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Checks the validation guarantee for one pair.
pub fn validate_pair(
    pair: &QAPair,
    offered: &BTreeSet<SentenceRef>,
    store: &ArticleStore,
) -> Result<(), String> {
    if pair.question.trim().is_empty() || pair.answer.trim().is_empty() {
        return Err("empty question or answer".into());
    }
    if pair.attributions.is_empty() {
        return Err("no attributions".into());
    }
    for r in &pair.attributions {
        if !offered.contains(r) {
            return Err(format!("{r:?} was not offered"));
        }
        if store.resolve(r).is_none() {
            return Err(format!("{r:?} does not resolve"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub attempt: u32,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
    pub verdicts: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<String>,
}

/// Audit record of generating from one context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationBatch {
    pub context: GenerationContext,
    pub attempts: Vec<AttemptLog>,
    pub pairs: Vec<QAPair>,
}

impl GenerationBatch {
    pub fn succeeded(&self) -> bool {
        !self.pairs.is_empty()
    }
}

fn render(
    context: &GenerationContext,
    store: &ArticleStore,
    settings: &GenerationSettings,
) -> Result<ChatRequest, SynthError> {
    match context {
        GenerationContext::MultiHop(chain) => render_multihop_prompt(chain, store, settings),
        GenerationContext::Dialogue(ctx) => render_dialogue_prompt(ctx, store, settings),
    }
}

fn parse(text: &str, context: &GenerationContext) -> Result<Vec<QAPair>, SynthError> {
    match context {
        GenerationContext::MultiHop(chain) => parse_multihop_response(text, chain).map(|p| vec![p]),
        GenerationContext::Dialogue(ctx) => parse_dialogue_response(text, ctx),
    }
}

/// Render, chat, parse and validate, retrying recoverable failures up to
/// `settings.max_retries` total attempts. Attempt `k` (from 0) carries
/// sampling seed `seed + k`, so each attempt is a distinct request.
///
/// The returned batch holds the audit log either way; the error, if any,
/// is [`SynthError::GenerationFailed`] or a gateway failure.
pub fn generate(
    context: &GenerationContext,
    store: &ArticleStore,
    gateway: &Gateway,
    settings: &GenerationSettings,
    seed: u64,
) -> (GenerationBatch, Result<(), SynthError>) {
    let mut batch = GenerationBatch { context: context.clone(), attempts: Vec::new(), pairs: Vec::new() };
    let base = match render(context, store, settings) {
        Ok(r) => r,
        Err(e) => return (batch, Err(e)),
    };
    let offered = context.offered();
    let max = settings.max_retries.max(1);
    let mut last = String::new();
    for attempt in 1..=max {
        let request = base.clone().with_seed(seed.wrapping_add(u64::from(attempt - 1)));
        let mut log = AttemptLog {
            attempt,
            prompt_hash: request.hash(),
            raw_output: None,
            verdicts: Vec::new(),
            rejection: None,
        };
        let raw = match gateway.chat(&request) {
            Ok(raw) => raw,
            Err(e) => {
                log.rejection = Some(e.to_string());
                batch.attempts.push(log);
                return (batch, Err(e.into()));
            }
        };
        log.raw_output = Some(raw.clone());
        let outcome = parse(&raw, context).and_then(|pairs| {
            let mut kept = Vec::new();
            for (index, pair) in pairs.into_iter().enumerate() {
                let check = validate_pair(&pair, &offered, store);
                log.verdicts.push(Verdict { index, accepted: check.is_ok(), reason: check.err() });
                if log.verdicts[index].accepted {
                    kept.push(pair);
                }
            }
            if kept.is_empty() {
                Err(SynthError::NothingValid)
            } else {
                Ok(kept)
            }
        });
        match outcome {
            Ok(pairs) => {
                batch.attempts.push(log);
                batch.pairs = pairs;
                return (batch, Ok(()));
            }
            Err(e) => {
                tracing::info!(attempt, reason = %e, "generation attempt rejected");
                last = e.to_string();
                log.rejection = Some(last.clone());
                batch.attempts.push(log);
                if !e.is_recoverable() {
                    return (batch, Err(e));
                }
            }
        }
    }
    (batch, Err(SynthError::GenerationFailed { attempts: max, last }))
}

/// Syn-Att labels for an existing QA pair: each voter attributes the task
/// with the zero-shot prompt and a sentence is kept when at least half of
/// the voters that answered chose it. Failed voters abstain.
pub fn synatt_labels(
    task: &AttributionTask,
    voters: &[PromptAttributor],
) -> Result<BTreeSet<SampleRef>, SynthError> {
    if voters.is_empty() {
        return Err(AttribError::NoVoters.into());
    }
    let ballots: Vec<Option<BTreeSet<SampleRef>>> = voters
        .iter()
        .map(|v| match v.attribute(task) {
            Ok(p) => Some(p.refs),
            Err(e) => {
                tracing::warn!(voter = v.id(), error = %e, "voter abstains");
                None
            }
        })
        .collect();
    Ok(vote(&ballots)?)
}

/// Standalone rewrite of one dialogue turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Standalone {
    pub question: String,
    pub answer: String,
}

pub fn render_rephrase_prompt(
    history: &[Turn],
    question: &str,
    answer: &str,
    settings: &GenerationSettings,
) -> ChatRequest {
    settings.request(prompts::rephrase_system(), prompts::rephrase_user(history, question, answer))
}

pub fn parse_rephrase_response(text: &str) -> Result<Standalone, SynthError> {
    let obj = parse_json_lenient(text)?;
    Ok(Standalone {
        question: required_str(&obj, "question")?.to_string(),
        answer: required_str(&obj, "answer")?.to_string(),
    })
}

/// Rewrites a history-dependent turn into a standalone question and answer.
pub fn rephrase_multiturn(
    history: &[Turn],
    question: &str,
    answer: &str,
    gateway: &Gateway,
    settings: &GenerationSettings,
) -> Result<Standalone, SynthError> {
    let base = render_rephrase_prompt(history, question, answer, settings);
    let max = settings.max_retries.max(1);
    let mut last = String::new();
    for attempt in 0..max {
        let request = if attempt == 0 { base.clone() } else { base.clone().with_seed(u64::from(attempt)) };
        let raw = gateway.chat(&request)?;
        match parse_rephrase_response(&raw) {
            Ok(s) => return Ok(s),
            Err(e) => last = e.to_string(),
        }
    }
    Err(SynthError::GenerationFailed { attempts: max, last })
}
