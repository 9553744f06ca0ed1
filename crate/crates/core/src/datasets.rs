//! Training-sample assembly, dataset files and fine-tuning export.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{parse_reply, render_attribution_request};
use crate::corpus::ArticleStore;
use crate::llmgate::Message;
use crate::prompts::{self, PROMPT_VERSION};
use crate::sample::{AttributionTask, Document, SampleRef};
use crate::seeds::derive_seed;
use crate::synthesis::QAPair;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("sample {sample}: {message}")]
    Assembly { sample: String, message: String },
    #[error("line {line}: schema_version {found}, expected {SCHEMA_VERSION}")]
    SchemaVersion { line: usize, found: u32 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid sample: {message}")]
    Invalid { line: usize, message: String },
    #[error("nothing to export")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    MultiHop,
    Dialogue,
}

impl SampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::MultiHop => "multi_hop",
            SampleKind::Dialogue => "dialogue",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Articles of the generation context, in context order.
    pub context_ids: Vec<String>,
    pub model: String,
    pub prompt_hash: String,
    pub prompt_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub schema_version: u32,
    pub id: String,
    pub kind: SampleKind,
    pub qa: QAPair,
    pub documents: Vec<Document>,
    pub gold: BTreeSet<SampleRef>,
    pub source_ids: Vec<String>,
    pub provenance: Provenance,
}

impl TrainingSample {
    /// The attribution view: history turns inline, documents as assembled.
    pub fn task(&self) -> AttributionTask {
        AttributionTask {
            question: self.qa.question.clone(),
            answer: self.qa.answer.clone(),
            history: self.qa.dialogue_history.clone().unwrap_or_default(),
            documents: self.documents.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.gold.is_empty() {
            return Err("gold set is empty".into());
        }
        let mut seen = HashSet::new();
        for d in &self.documents {
            if !seen.insert(d.article_id.as_str()) {
                return Err(format!("document {} repeats", d.article_id));
            }
        }
        for s in &self.source_ids {
            if !seen.contains(s.as_str()) {
                return Err(format!("source {s} missing from documents"));
            }
        }
        for r in &self.gold {
            let d = self.documents.get(r.doc).ok_or_else(|| format!("gold {r:?} has no document"))?;
            if r.sent >= d.sentences.len() {
                return Err(format!("gold {r:?} outside document {}", d.article_id));
            }
        }
        Ok(())
    }
}

/// One generated pair awaiting assembly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyInput {
    pub id: String,
    pub kind: SampleKind,
    pub qa: QAPair,
    pub source_ids: Vec<String>,
    pub distractor_ids: BTreeSet<String>,
    pub provenance: Provenance,
}

/// Builds one sample: sources and distractors as first-paragraph excerpts,
/// shuffled by `seed`, with gold refs remapped to document positions.
pub fn assemble_one(
    input: &AssemblyInput,
    store: &ArticleStore,
    seed: u64,
) -> Result<TrainingSample, DatasetError> {
    let fail = |message: String| DatasetError::Assembly { sample: input.id.clone(), message };
    let mut ids: Vec<&str> = Vec::new();
    for s in &input.source_ids {
        if !ids.contains(&s.as_str()) {
            ids.push(s);
        }
    }
    for d in &input.distractor_ids {
        if ids.contains(&d.as_str()) {
            return Err(fail(format!("distractor {d} is also a source")));
        }
        ids.push(d);
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let documents = ids
        .iter()
        .map(|id| {
            let a = store.get(id).ok_or_else(|| fail(format!("article {id} not in store")))?;
            Ok(Document {
                article_id: a.id.clone(),
                title: a.title.clone(),
                sentences: a.first_paragraph_sentences().to_vec(),
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let gold = input
        .qa
        .attributions
        .iter()
        .map(|r| {
            let doc = documents
                .iter()
                .position(|d| d.article_id == r.article_id)
                .ok_or_else(|| fail(format!("gold {r:?} not in any document")))?;
            if r.sentence_index >= documents[doc].sentences.len() {
                return Err(fail(format!("gold {r:?} outside the excerpt")));
            }
            Ok(SampleRef::new(doc, r.sentence_index))
        })
        .collect::<Result<BTreeSet<_>, DatasetError>>()?;
    let sample = TrainingSample {
        schema_version: SCHEMA_VERSION,
        id: input.id.clone(),
        kind: input.kind,
        qa: input.qa.clone(),
        documents,
        gold,
        source_ids: input.source_ids.clone(),
        provenance: input.provenance.clone(),
    };
    sample.validate().map_err(fail)?;
    Ok(sample)
}

/// Assembles every input; input `i` shuffles with a seed derived from
/// `(master_seed, i)`.
pub fn assemble(
    inputs: &[AssemblyInput],
    store: &ArticleStore,
    master_seed: u64,
) -> Result<Vec<TrainingSample>, DatasetError> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| assemble_one(input, store, derive_seed(master_seed, "assemble", i as u64)))
        .collect()
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save(samples: &[TrainingSample], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_jsonl(samples, path.as_ref())
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

/// Loads and validates a dataset file; the first bad line is reported.
pub fn load(path: impl AsRef<Path>) -> Result<Vec<TrainingSample>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let probe: VersionProbe = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
        if probe.schema_version != SCHEMA_VERSION {
            return Err(DatasetError::SchemaVersion { line: line_no, found: probe.schema_version });
        }
        let sample: TrainingSample = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
        sample
            .validate()
            .map_err(|message| DatasetError::Invalid { line: line_no, message })?;
        if !ids.insert(sample.id.clone()) {
            return Err(DatasetError::Invalid { line: line_no, message: format!("duplicate id {}", sample.id) });
        }
        out.push(sample);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportStyle {
    ChatSft,
}

/// One fine-tuning record: the attribution prompt and its target string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub messages: Vec<Message>,
    pub target: String,
}

/// Gold sentences as global numbers, e.g. `(2), (5)`.
pub fn target_string(sample: &TrainingSample) -> String {
    let task = sample.task();
    let numbers: BTreeSet<usize> = sample
        .gold
        .iter()
        .map(|r| task.number_of(*r).expect("validated sample"))
        .collect();
    prompts::parenthesized(numbers)
}

pub fn export_record(sample: &TrainingSample) -> ExportRecord {
    let request = render_attribution_request(&sample.task(), "", 0.0);
    ExportRecord { messages: request.messages, target: target_string(sample) }
}

/// Re-reads a target string into refs over the sample's documents.
pub fn parse_target(sample: &TrainingSample, target: &str) -> BTreeSet<SampleRef> {
    let task = sample.task();
    parse_reply(target, task.sentence_count())
        .numbers
        .into_iter()
        .filter_map(|n| task.ref_at(n))
        .collect()
}

/// Settings handed to the external trainer alongside the export file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterManifest {
    pub style: ExportStyle,
    pub lora_alpha: u32,
    pub lora_rank: u32,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub records: usize,
    pub prompt_version: String,
}

impl HyperparameterManifest {
    pub fn new(style: ExportStyle, records: usize) -> Self {
        Self {
            style,
            lora_alpha: 64,
            lora_rank: 32,
            learning_rate: 1e-5,
            weight_decay: 1e-3,
            records,
            prompt_version: PROMPT_VERSION.to_string(),
        }
    }
}

/// Writes the export file and its manifest; returns the manifest.
pub fn export_train(
    samples: &[TrainingSample],
    style: ExportStyle,
    out_path: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
) -> Result<HyperparameterManifest, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::Empty);
    }
    let records: Vec<ExportRecord> = samples.iter().map(export_record).collect();
    write_jsonl(&records, out_path.as_ref())?;
    let manifest = HyperparameterManifest::new(style, records.len());
    let text = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    std::fs::write(manifest_path, text + "\n")?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub sample_count: usize,
    pub kinds: BTreeMap<String, usize>,
    pub generator_model: String,
    pub seed: u64,
    #[serde(default)]
    pub leakage_report: Option<String>,
    #[serde(default)]
    pub export_hyperparameters: Option<String>,
}

impl DatasetManifest {
    pub fn describe(samples: &[TrainingSample], generator_model: &str, seed: u64) -> Self {
        let mut kinds = BTreeMap::new();
        for s in samples {
            *kinds.entry(s.kind.as_str().to_string()).or_insert(0) += 1;
        }
        Self {
            schema_version: SCHEMA_VERSION,
            sample_count: samples.len(),
            kinds,
            generator_model: generator_model.to_string(),
            seed,
            leakage_report: None,
            export_hyperparameters: None,
        }
    }

    /// Checks that the counts agree with `samples`.
    pub fn matches(&self, samples: &[TrainingSample]) -> bool {
        let fresh = Self::describe(samples, &self.generator_model, self.seed);
        fresh.sample_count == self.sample_count && fresh.kinds == self.kinds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Article, SentenceRef};

    fn store() -> ArticleStore {
        let art = |id: &str, n: usize| Article {
            id: id.into(),
            title: id.to_uppercase(),
            sentences: (0..n + 1).map(|i| format!("{id} sentence {i}.")).collect(),
            first_paragraph_end: n,
            links: vec![],
        };
        ArticleStore::from_articles(vec![art("src", 3), art("d1", 2), art("d2", 4), art("d3", 1)]).unwrap()
    }

    fn input(distractors: &[&str]) -> AssemblyInput {
        AssemblyInput {
            id: "s0".into(),
            kind: SampleKind::MultiHop,
            qa: QAPair {
                question: "Q?".into(),
                answer: "A.".into(),
                attributions: [SentenceRef::new("src", 2)].into(),
                reasoning: None,
                dialogue_history: None,
            },
            source_ids: vec!["src".into()],
            distractor_ids: distractors.iter().map(|s| s.to_string()).collect(),
            provenance: Provenance {
                context_ids: vec!["src".into()],
                model: "m".into(),
                prompt_hash: "h".into(),
                prompt_version: PROMPT_VERSION.into(),
            },
        }
    }

    #[test]
    fn gold_survives_shuffle() {
        for seed in 0..20 {
            let s = assemble_one(&input(&["d1", "d2"]), &store(), seed).unwrap();
            assert_eq!(s.documents.len(), 3);
            let r = *s.gold.iter().next().unwrap();
            assert_eq!(s.documents[r.doc].article_id, "src");
            assert_eq!(s.documents[r.doc].sentences[r.sent], "src sentence 2.");
            // excerpts stop at the first paragraph
            assert_eq!(s.documents[r.doc].sentences.len(), 3);
        }
    }

    #[test]
    fn no_distractors_and_determinism() {
        let s = assemble_one(&input(&[]), &store(), 1).unwrap();
        assert_eq!(s.documents.len(), 1);
        let a = assemble_one(&input(&["d1", "d2", "d3"]), &store(), 7).unwrap();
        let b = assemble_one(&input(&["d1", "d2", "d3"]), &store(), 7).unwrap();
        assert_eq!(a, b);
        let orders: HashSet<Vec<String>> = (0..30)
            .map(|seed| {
                assemble_one(&input(&["d1", "d2", "d3"]), &store(), seed)
                    .unwrap()
                    .documents
                    .into_iter()
                    .map(|d| d.article_id)
                    .collect()
            })
            .collect();
        assert!(orders.len() > 1);
    }

    #[test]
    fn distractor_overlapping_source_is_rejected() {
        assert!(matches!(assemble_one(&input(&["src"]), &store(), 1), Err(DatasetError::Assembly { .. })));
    }

    #[test]
    fn target_string_uses_global_numbers() {
        let mut s = assemble_one(&input(&["d1"]), &store(), 3).unwrap();
        s.documents = vec![
            Document { article_id: "x".into(), title: "X".into(), sentences: vec!["a".into(), "b".into()] },
            Document { article_id: "src".into(), title: "S".into(), sentences: vec!["c".into(), "d".into(), "e".into(), "f".into()] },
        ];
        s.gold = [SampleRef::new(1, 0), SampleRef::new(1, 3)].into();
        assert_eq!(target_string(&s), "(2), (5)");
        assert_eq!(parse_target(&s, &target_string(&s)), s.gold);
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let s = assemble_one(&input(&["d1"]), &store(), 3).unwrap();
        save(std::slice::from_ref(&s), &path).unwrap();
        assert_eq!(load(&path).unwrap(), vec![s.clone()]);

        let good = serde_json::to_string(&s).unwrap();
        std::fs::write(&path, format!("{good}\n{{broken\n")).unwrap();
        assert!(matches!(load(&path), Err(DatasetError::Parse { line: 2, .. })));

        let v2 = good.replace("\"schema_version\":1", "\"schema_version\":2");
        std::fs::write(&path, format!("{v2}\n")).unwrap();
        assert!(matches!(load(&path), Err(DatasetError::SchemaVersion { line: 1, found: 2 })));

        let mut bad = s.clone();
        bad.gold = [SampleRef::new(0, 99)].into();
        std::fs::write(&path, serde_json::to_string(&bad).unwrap() + "\n").unwrap();
        assert!(matches!(load(&path), Err(DatasetError::Invalid { line: 1, .. })));
    }

    #[test]
    fn export_writes_records_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let s = assemble_one(&input(&["d1", "d2"]), &store(), 3).unwrap();
        let (out, man) = (dir.path().join("e.jsonl"), dir.path().join("m.json"));
        let manifest = export_train(&[s.clone(), s.clone()], ExportStyle::ChatSft, &out, &man).unwrap();
        assert_eq!(manifest.records, 2);
        assert_eq!((manifest.lora_alpha, manifest.lora_rank), (64, 32));
        assert_eq!((manifest.learning_rate, manifest.weight_decay), (1e-5, 1e-3));
        let lines: Vec<ExportRecord> = std::fs::read_to_string(&out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(parse_target(&s, &lines[0].target), s.gold);
        assert!(export_train(&[], ExportStyle::ChatSft, &out, &man).is_err());
    }

    #[test]
    fn manifest_counts() {
        let s = assemble_one(&input(&[]), &store(), 1).unwrap();
        let m = DatasetManifest::describe(&[s.clone(), s.clone()], "gen", 5);
        assert_eq!(m.kinds.get("multi_hop"), Some(&2));
        assert!(m.matches(&[s.clone(), s.clone()]));
        assert!(!m.matches(&[s]));
    }
}
