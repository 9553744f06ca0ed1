//! A deterministic stand-in for chat and embedding endpoints.
//!
//! It recognizes each prompt this crate renders and answers in the expected
//! format, so pipelines can run, and cassettes can be recorded, without a
//! network. Answers are mechanical: they exercise the plumbing, not the
//! quality of any model.

use std::collections::BTreeSet;

use serde_json::{json, Value};
use xxhash_rust::xxh3::xxh3_64;

use crate::leakage::shingle;
use crate::llmgate::{chat_request_from_wire, chat_response, embedding_response, Backend, CallError, Endpoint};
use crate::prompts;
use crate::synthesis::{MAX_DIALOGUE_PAIRS, MIN_DIALOGUE_PAIRS};

pub const EMBED_DIMENSION: usize = 64;

#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineBackend;

/// Feature-hashed bag of lowercased words, plus a constant component so no
/// vector is zero.
pub fn hashed_embedding(text: &str) -> Vec<f32> {
    let mut v = vec![0f32; EMBED_DIMENSION];
    v[0] = 0.5;
    for word in shingle(text, 1) {
        let h = xxh3_64(word.as_bytes());
        let slot = 1 + (h % (EMBED_DIMENSION as u64 - 1)) as usize;
        v[slot] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    v
}

fn words(text: &str) -> BTreeSet<String> {
    shingle(text, 1).into_iter().filter(|w| w.len() > 3).collect()
}

/// Lines of the form `<prefix><sentence>` after stripping a numbering prefix.
fn numbered_lines<'a>(user: &'a str, parse: impl Fn(&'a str) -> Option<(usize, &'a str)>) -> Vec<(usize, &'a str)> {
    user.lines().filter_map(parse).collect()
}

fn multihop_reply(user: &str) -> String {
    let lines = numbered_lines(user, |l| {
        let rest = l.strip_prefix('[')?;
        let (i, rest) = rest.split_once(", 0] ")?;
        Some((i.parse().ok()?, rest))
    });
    let titles: Vec<&str> = user.lines().filter_map(|l| l.strip_prefix("Title: ")).collect();
    let ids: Vec<[usize; 2]> = lines.iter().map(|(i, _)| [*i, 0]).collect();
    let last = lines.last().map_or("", |(_, s)| *s);
    json!({
        "question": format!("How is {} connected to {}?", titles.first().unwrap_or(&"the first topic"), titles.last().unwrap_or(&"the last topic")),
        "answer": last,
        "ids": ids,
        "reasoning": "Each cited sentence supplies one link of the connection."
    })
    .to_string()
}

fn dialogue_reply(user: &str) -> String {
    let lines = numbered_lines(user, |l| {
        let (i, rest) = l.split_once(". ")?;
        Some((i.parse().ok()?, rest))
    });
    let n = lines.len().max(1);
    let count = (n + 3).clamp(MIN_DIALOGUE_PAIRS, MAX_DIALOGUE_PAIRS);
    let items: Vec<Value> = (0..count)
        .map(|k| {
            let first = (k * 3) % n;
            let mut cited = vec![first];
            if k % 2 == 1 && n > 1 {
                cited.push((first + 1) % n);
            }
            cited.sort_unstable();
            cited.dedup();
            let sentence = lines.get(first).map_or("", |(_, s)| *s);
            json!({
                "question": format!("What does sentence {first} state{}?", if k > 0 { " about it" } else { "" }),
                "answer": sentence,
                "sentence_numbers": cited,
            })
        })
        .collect();
    Value::Array(items).to_string()
}

/// Picks the sentences sharing the most content words with the answer.
fn attribution_reply(user: &str) -> String {
    let lines = numbered_lines(user, |l| {
        let rest = l.strip_prefix('(')?;
        let (i, rest) = rest.split_once(") ")?;
        Some((i.parse().ok()?, rest))
    });
    let answer = user
        .lines()
        .find_map(|l| l.strip_prefix("Answer: "))
        .unwrap_or_default();
    let target = words(answer);
    let scored: Vec<(usize, usize)> = lines
        .iter()
        .map(|(i, s)| (*i, words(s).intersection(&target).count()))
        .collect();
    let best = scored.iter().map(|(_, c)| *c).max().unwrap_or(0);
    if best == 0 {
        return "None of the sentences support the answer.".into();
    }
    let chosen: Vec<usize> = scored.iter().filter(|(_, c)| *c == best).map(|(i, _)| *i).collect();
    prompts::parenthesized(chosen)
}

fn rephrase_reply(user: &str) -> String {
    let question = user.lines().find_map(|l| l.strip_prefix("Question: ")).unwrap_or_default();
    let answer = user.lines().find_map(|l| l.strip_prefix("Answer: ")).unwrap_or_default();
    json!({ "question": question, "answer": answer }).to_string()
}

impl Backend for OfflineBackend {
    fn call(&self, endpoint: Endpoint, body: &Value) -> Result<Value, CallError> {
        match endpoint {
            Endpoint::Embed => {
                let texts = body
                    .get("input")
                    .and_then(Value::as_array)
                    .ok_or_else(|| CallError::Status { code: 400, body: "missing input".into() })?;
                let vectors: Vec<Vec<f32>> =
                    texts.iter().map(|t| hashed_embedding(t.as_str().unwrap_or_default())).collect();
                Ok(embedding_response(&vectors))
            }
            Endpoint::Chat => {
                let request = chat_request_from_wire(body)
                    .ok_or_else(|| CallError::Status { code: 400, body: "bad chat request".into() })?;
                let system = request.messages.first().map(|m| m.content.as_str()).unwrap_or_default();
                let user = request.messages.get(1).map(|m| m.content.as_str()).unwrap_or_default();
                let reply = if system == prompts::multihop_system() {
                    multihop_reply(user)
                } else if system == prompts::dialogue_system() {
                    dialogue_reply(user)
                } else if system == prompts::attribution_system() {
                    attribution_reply(user)
                } else if system == prompts::rephrase_system() {
                    rephrase_reply(user)
                } else {
                    return Err(CallError::Status { code: 400, body: "unrecognized prompt".into() });
                };
                Ok(chat_response(&reply))
            }
        }
    }
}
