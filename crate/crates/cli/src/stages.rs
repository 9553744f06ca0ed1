//! Pipeline stages. Each reads its inputs from files in the work directory
//! and writes its outputs there, so any stage can be re-run on its own.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use attrib_core::attribution::{
    default_random_p, load_predictions, save_predictions, tune_threshold, AttribError, Attributor,
    EmbedThresholdAttributor, EnsembleAttributor, PredictionRecord, PromptAttributor, RandomAttributor,
};
use attrib_core::contextselect::{sample_hop_chain, select_dialogue_context};
use attrib_core::corpus::{filter_linkable, ArticleStore};
use attrib_core::datasets::{self, AssemblyInput, DatasetManifest, ExportStyle, Provenance, SampleKind, TrainingSample};
use attrib_core::distractor::{build_index, mine, VectorIndex};
use attrib_core::eval::{self, EvalReport, ScoredItem};
use attrib_core::leakage::{self, flag_leaks, LeakDoc};
use attrib_core::llmgate::Gateway;
use attrib_core::prompts::PROMPT_VERSION;
use attrib_core::sample::SampleRef;
use attrib_core::seeds::derive_seed;
use attrib_core::synthesis::{generate, rephrase_multiturn, GenerationBatch, GenerationContext, QAPair, Standalone};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{MethodKind, PipelineConfig};
use crate::error::CliError;
use crate::manifest::{read_jsonl, write_atomic, write_jsonl, write_text, RunManifest};

pub const STORE: &str = "store.jsonl";
pub const CONTEXTS: &str = "contexts.jsonl";
pub const GENERATED: &str = "generated.jsonl";
pub const AUDIT: &str = "generation_audit.jsonl";
pub const INDEX: &str = "index.vidx";
pub const DISTRACTORS: &str = "distractors.jsonl";
pub const LEAKAGE: &str = "leakage.csv";
pub const DATASET: &str = "dataset.jsonl";
pub const DATASET_MANIFEST: &str = "dataset.manifest.json";
pub const TRAIN: &str = "train.jsonl";
pub const HPARAMS: &str = "train.hparams.json";
pub const REPHRASED: &str = "rephrased.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub id: String,
    pub context: GenerationContext,
}

/// One validated pair from the generation stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedPair {
    pub id: String,
    pub context_id: String,
    pub kind: SampleKind,
    pub qa: QAPair,
    pub source_ids: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub context_id: String,
    pub batch: GenerationBatch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorRecord {
    pub id: String,
    pub distractor_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RephraseRecord {
    pub id: String,
    pub standalone: Standalone,
}

/// Runs stages against one configuration.
pub struct Runner {
    pub config: PipelineConfig,
    pool: rayon::ThreadPool,
    gateway: Option<Arc<Gateway>>,
}

impl Runner {
    pub fn new(config: PipelineConfig) -> Result<Self, CliError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(CliError::stage)?;
        Ok(Self { config, pool, gateway: None })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.work_dir.join(name)
    }

    fn gateway(&mut self) -> Result<Arc<Gateway>, CliError> {
        if self.gateway.is_none() {
            self.gateway = Some(Arc::new(self.config.gateway()?));
        }
        Ok(self.gateway.clone().expect("set above"))
    }

    fn save_cassette(&self) -> Result<(), CliError> {
        match &self.gateway {
            Some(g) => g.save_cassette().map_err(CliError::from_gate),
            None => Ok(()),
        }
    }

    /// Runs `body`, then records a manifest for the stage whether or not it
    /// succeeded.
    fn stage(
        &mut self,
        name: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        body: impl FnOnce(&mut Self) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        tracing::info!(stage = name, "starting");
        std::fs::create_dir_all(&self.config.work_dir)?;
        let mut result = body(self);
        if let Err(e) = self.save_cassette() {
            result = result.and(Err(e));
        }
        RunManifest::new(name, &self.config, inputs, outputs, &result).write(&self.config.work_dir)?;
        match &result {
            Ok(()) => tracing::info!(stage = name, "finished"),
            Err(e) => tracing::error!(stage = name, error = %e, "failed"),
        }
        result
    }

    fn load_store(&self) -> Result<ArticleStore, CliError> {
        let path = self.path(STORE);
        if !path.exists() {
            return Err(CliError::Usage(format!("{} not found; run ingest first", path.display())));
        }
        Ok(ArticleStore::ingest(path)?)
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::Usage(format!("{} not found; run {producer} first", path.display())))
        }
    }

    pub fn ingest(&mut self) -> Result<(), CliError> {
        let corpus = self
            .config
            .corpus
            .clone()
            .ok_or_else(|| CliError::Usage("corpus: required by ingest".into()))?;
        if !corpus.exists() {
            return Err(CliError::Usage(format!("corpus: {} does not exist", corpus.display())));
        }
        let out = self.path(STORE);
        self.stage("ingest", &[corpus.clone()], &[out.clone()], |_| {
            let store = ArticleStore::ingest(&corpus)?;
            tracing::info!(articles = store.len(), "ingested");
            write_atomic(&out, |tmp| store.save(tmp))
        })
    }

    pub fn hop_sample(&mut self) -> Result<(), CliError> {
        let input = self.require(STORE, "ingest")?;
        let out = self.path(CONTEXTS);
        self.stage("hop-sample", &[input], &[out.clone()], |r| {
            let store = filter_linkable(&r.load_store()?);
            let s = &r.config.sampling;
            let seed = r.config.seed;
            let mut records = Vec::with_capacity(s.multi_hop_chains + s.dialogue_contexts);
            for i in 0..s.multi_hop_chains {
                let chain = sample_hop_chain(&store, derive_seed(seed, "hop", i as u64), s.max_hops)
                    .map_err(CliError::stage)?;
                records.push(ContextRecord { id: format!("mh-{i:04}"), context: GenerationContext::MultiHop(chain) });
            }
            for i in 0..s.dialogue_contexts {
                let ctx = select_dialogue_context(&store, derive_seed(seed, "dialogue", i as u64))
                    .map_err(CliError::stage)?;
                records.push(ContextRecord { id: format!("dg-{i:04}"), context: GenerationContext::Dialogue(ctx) });
            }
            tracing::info!(contexts = records.len(), candidates = store.candidate_count(), "sampled");
            write_jsonl(&out, &records)
        })
    }

    pub fn generate(&mut self) -> Result<(), CliError> {
        let inputs = [self.require(STORE, "ingest")?, self.require(CONTEXTS, "hop-sample")?];
        let (out, audit) = (self.path(GENERATED), self.path(AUDIT));
        self.stage("generate", &inputs, &[out.clone(), audit.clone()], |r| {
            let store = r.load_store()?;
            let contexts: Vec<ContextRecord> = read_jsonl(&inputs[1])?;
            let gateway = r.gateway()?;
            let settings = r.config.generation.settings();
            let seed = r.config.seed;
            let results: Vec<_> = r.pool.install(|| {
                contexts
                    .par_iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let (batch, result) =
                            generate(&c.context, &store, &gateway, &settings, derive_seed(seed, "generate", i as u64));
                        (c, batch, result)
                    })
                    .collect()
            });
            let mut pairs = Vec::new();
            let mut audits = Vec::with_capacity(results.len());
            let mut endpoint_failure = None;
            for (c, batch, result) in results {
                let kind = match c.context {
                    GenerationContext::MultiHop(_) => SampleKind::MultiHop,
                    GenerationContext::Dialogue(_) => SampleKind::Dialogue,
                };
                let prompt_hash = batch.attempts.last().map(|a| a.prompt_hash.clone()).unwrap_or_default();
                for (k, qa) in batch.pairs.iter().enumerate() {
                    pairs.push(GeneratedPair {
                        id: format!("{}-{k:02}", c.id),
                        context_id: c.id.clone(),
                        kind,
                        qa: qa.clone(),
                        source_ids: c.context.source_ids(),
                        provenance: Provenance {
                            context_ids: c.context.source_ids(),
                            model: settings.model.clone(),
                            prompt_hash: prompt_hash.clone(),
                            prompt_version: PROMPT_VERSION.to_string(),
                        },
                    });
                }
                let error = match result {
                    Ok(()) => None,
                    Err(e) => {
                        tracing::warn!(context = %c.id, error = %e, "context produced no pairs");
                        let message = e.to_string();
                        let e = CliError::from(e);
                        if matches!(e, CliError::Endpoint(_)) && endpoint_failure.is_none() {
                            endpoint_failure = Some(e);
                        }
                        Some(message)
                    }
                };
                audits.push(AuditRecord { context_id: c.id.clone(), batch, error });
            }
            write_jsonl(&audit, &audits)?;
            if let Some(e) = endpoint_failure {
                return Err(e);
            }
            if pairs.is_empty() && !contexts.is_empty() {
                return Err(CliError::stage("no context produced a valid pair"));
            }
            tracing::info!(pairs = pairs.len(), contexts = contexts.len(), "generated");
            write_jsonl(&out, &pairs)
        })
    }

    pub fn distract(&mut self) -> Result<(), CliError> {
        let inputs = [self.require(STORE, "ingest")?, self.require(GENERATED, "generate")?];
        let (index_path, out) = (self.path(INDEX), self.path(DISTRACTORS));
        self.stage("distract", &inputs, &[index_path.clone(), out.clone()], |r| {
            let store = r.load_store()?;
            let pairs: Vec<GeneratedPair> = read_jsonl(&inputs[1])?;
            let gateway = r.gateway()?;
            let d = r.config.distractors.clone();
            let index = build_index(&store, &gateway, d.batch_size)?;
            write_atomic(&index_path, |tmp| index.save(tmp))?;
            let seed = r.config.seed;
            let records = pairs
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let distractor_ids = if p.kind == SampleKind::Dialogue && !d.for_dialogue {
                        BTreeSet::new()
                    } else {
                        mine(&p.source_ids, &index, d.pool_size, d.per_source, derive_seed(seed, "distract", i as u64))?
                    };
                    Ok(DistractorRecord { id: p.id.clone(), distractor_ids })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            write_jsonl(&out, &records)
        })
    }

    /// Loads a previously built index, checking it covers the store.
    pub fn load_index(&self) -> Result<VectorIndex, CliError> {
        let index = VectorIndex::load(self.require(INDEX, "distract")?)?;
        Ok(index)
    }

    pub fn leak_check(&mut self) -> Result<(), CliError> {
        let train_path = self.require(STORE, "ingest")?;
        let test_path = self
            .config
            .test_corpus
            .clone()
            .ok_or_else(|| CliError::Usage("test_corpus: required by leak-check".into()))?;
        if !test_path.exists() {
            return Err(CliError::Usage(format!("test_corpus: {} does not exist", test_path.display())));
        }
        let out = self.path(LEAKAGE);
        self.stage("leak-check", &[train_path, test_path.clone()], &[out.clone()], |r| {
            let train = r.load_store()?;
            let test = ArticleStore::ingest(&test_path)?;
            let docs = |s: &ArticleStore| -> Vec<LeakDoc> {
                s.articles().iter().map(|a| LeakDoc::new(a.id.clone(), a.sentences.join(" "))).collect()
            };
            let config = r.config.leakage.leak_config(r.config.seed);
            let flags = r
                .pool
                .install(|| flag_leaks(&docs(&train), &docs(&test), &config))
                .map_err(CliError::stage)?;
            tracing::info!(flags = flags.len(), "leak check done");
            write_text(&out, &leakage::render_csv(&flags))
        })
    }

    /// Training article ids flagged in the leakage report, if one exists.
    fn flagged_train_ids(&self) -> Result<HashSet<String>, CliError> {
        let path = self.path(LEAKAGE);
        if !self.config.leakage.drop_flagged || !path.exists() {
            return Ok(HashSet::new());
        }
        let text = std::fs::read_to_string(path)?;
        Ok(text
            .lines()
            .skip(1)
            .filter_map(|l| l.split(',').next())
            .filter(|id| !id.is_empty())
            .map(str::to_string)
            .collect())
    }

    pub fn assemble(&mut self) -> Result<(), CliError> {
        let mut inputs = vec![
            self.require(STORE, "ingest")?,
            self.require(GENERATED, "generate")?,
            self.require(DISTRACTORS, "distract")?,
        ];
        if self.path(LEAKAGE).exists() {
            inputs.push(self.path(LEAKAGE));
        }
        let (out, manifest_out) = (self.path(DATASET), self.path(DATASET_MANIFEST));
        self.stage("assemble", &inputs.clone(), &[out.clone(), manifest_out.clone()], |r| {
            let store = r.load_store()?;
            let pairs: Vec<GeneratedPair> = read_jsonl(&inputs[1])?;
            let distractors: BTreeMap<String, BTreeSet<String>> = read_jsonl::<DistractorRecord>(&inputs[2])?
                .into_iter()
                .map(|d| (d.id, d.distractor_ids))
                .collect();
            let flagged = r.flagged_train_ids()?;
            let mut dropped = 0usize;
            let mut assembly = Vec::with_capacity(pairs.len());
            for p in pairs {
                let distractor_ids = distractors
                    .get(&p.id)
                    .cloned()
                    .ok_or_else(|| CliError::Stage(format!("no distractor record for {}", p.id)))?;
                if p.source_ids.iter().chain(&distractor_ids).any(|id| flagged.contains(id)) {
                    dropped += 1;
                    continue;
                }
                assembly.push(AssemblyInput {
                    id: p.id,
                    kind: p.kind,
                    qa: p.qa,
                    source_ids: p.source_ids,
                    distractor_ids,
                    provenance: p.provenance,
                });
            }
            if dropped > 0 {
                tracing::warn!(dropped, "samples dropped for overlapping the test corpus");
            }
            let samples = datasets::assemble(&assembly, &store, r.config.seed)?;
            write_atomic(&out, |tmp| datasets::save(&samples, tmp))?;
            let mut manifest = DatasetManifest::describe(&samples, &r.config.generation.model, r.config.seed);
            manifest.leakage_report = r.path(LEAKAGE).exists().then(|| LEAKAGE.to_string());
            let text = serde_json::to_string_pretty(&manifest).map_err(CliError::stage)? + "\n";
            write_text(&manifest_out, &text)
        })
    }

    fn load_dataset(&self, path: &Path) -> Result<Vec<TrainingSample>, CliError> {
        if !path.exists() {
            return Err(CliError::Usage(format!("{} not found", path.display())));
        }
        Ok(datasets::load(path)?)
    }

    pub fn export_train(&mut self) -> Result<(), CliError> {
        let input = self.require(DATASET, "assemble")?;
        let (out, hparams) = (self.path(TRAIN), self.path(HPARAMS));
        self.stage("export-train", &[input.clone()], &[out.clone(), hparams.clone()], |r| {
            let samples = r.load_dataset(&input)?;
            let mut manifest = None;
            write_atomic(&out, |tmp| {
                let partial_hparams = crate::manifest::partial_path(&hparams);
                manifest = Some(datasets::export_train(&samples, ExportStyle::ChatSft, tmp, &partial_hparams)?);
                std::fs::rename(&partial_hparams, &hparams).map_err(datasets::DatasetError::from)
            })?;
            tracing::info!(records = manifest.map_or(0, |m| m.records), "exported");
            Ok(())
        })
    }

    pub fn rephrase(&mut self) -> Result<(), CliError> {
        let input = self.require(DATASET, "assemble")?;
        let out = self.path(REPHRASED);
        self.stage("rephrase", &[input.clone()], &[out.clone()], |r| {
            let samples = r.load_dataset(&input)?;
            let gateway = r.gateway()?;
            let settings = r.config.generation.settings();
            let todo: Vec<&TrainingSample> = samples
                .iter()
                .filter(|s| s.qa.dialogue_history.as_ref().is_some_and(|h| !h.is_empty()))
                .collect();
            let results: Vec<Result<RephraseRecord, CliError>> = r.pool.install(|| {
                todo.par_iter()
                    .map(|s| {
                        let history = s.qa.dialogue_history.as_deref().unwrap_or_default();
                        let standalone =
                            rephrase_multiturn(history, &s.qa.question, &s.qa.answer, &gateway, &settings)?;
                        Ok(RephraseRecord { id: s.id.clone(), standalone })
                    })
                    .collect()
            });
            let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
            write_jsonl(&out, &records)
        })
    }

    /// Builds the named attributor. Unset parameters are fitted on
    /// `validation`.
    fn build_attributor(
        &mut self,
        name: &str,
        validation: Option<&[TrainingSample]>,
        depth: usize,
    ) -> Result<Box<dyn Attributor>, CliError> {
        if depth > self.config.methods.len() {
            return Err(CliError::Usage(format!("methods: `{name}` is part of an ensemble cycle")));
        }
        let method = self.config.method(name)?.clone();
        let needs_validation = |what: &str| {
            CliError::Usage(format!("methods.{what}: `{name}` has none set and no --validation dataset was given"))
        };
        let pairs = |v: &[TrainingSample]| v.iter().map(|s| (s.task(), s.gold.clone())).collect::<Vec<_>>();
        Ok(match method.kind {
            MethodKind::Random { p } => {
                let p = match (p, validation) {
                    (Some(p), _) => p,
                    (None, Some(v)) => {
                        let rows = pairs(v);
                        default_random_p(rows.iter().map(|(t, g)| (t, g)))?
                    }
                    (None, None) => return Err(needs_validation("p")),
                };
                tracing::info!(method = name, p, "random baseline");
                Box::new(Named(method.name, RandomAttributor::new(p, self.config.seed)?))
            }
            MethodKind::EmbedThreshold { threshold } => {
                let gateway = self.gateway()?;
                let threshold = match (threshold, validation) {
                    (Some(t), _) => t,
                    (None, Some(v)) => {
                        let rows = pairs(v);
                        let refs: Vec<_> = rows.iter().map(|(t, g)| (t, g)).collect();
                        tune_threshold(&refs, &gateway, &self.config.attribution.threshold_grid)?
                    }
                    (None, None) => return Err(needs_validation("threshold")),
                };
                tracing::info!(method = name, threshold, "embedding threshold");
                Box::new(EmbedThresholdAttributor::new(method.name, gateway, threshold))
            }
            MethodKind::Prompt { model, temperature } => {
                let gateway = self.gateway()?;
                Box::new(PromptAttributor::new(method.name, gateway, model).with_temperature(temperature))
            }
            MethodKind::Ensemble { members } => {
                let built = members
                    .iter()
                    .map(|m| self.build_attributor(m, validation, depth + 1))
                    .collect::<Result<Vec<_>, _>>()?;
                Box::new(EnsembleAttributor::new(method.name, built)?)
            }
        })
    }

    pub fn predictions_path(&self, method: &str) -> PathBuf {
        self.path(&format!("predictions-{method}.jsonl"))
    }

    pub fn attribute(&mut self, method: &str, dataset: Option<&Path>, validation: Option<&Path>) -> Result<(), CliError> {
        let dataset = dataset.map_or_else(|| self.path(DATASET), Path::to_path_buf);
        let mut inputs = vec![dataset.clone()];
        inputs.extend(validation.map(Path::to_path_buf));
        let out = self.predictions_path(method);
        let samples = self.load_dataset(&dataset)?;
        let validation = validation.map(|p| self.load_dataset(p)).transpose()?;
        let attributor = self.build_attributor(method, validation.as_deref(), 0)?;
        self.stage(&format!("attribute-{method}"), &inputs, &[out.clone()], |r| {
            let results: Vec<Result<PredictionRecord, AttribError>> = r.pool.install(|| {
                samples
                    .par_iter()
                    .map(|s| attributor.attribute(&s.task()).map(|p| PredictionRecord::new(s.id.clone(), &p)))
                    .collect()
            });
            let mut records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
            for rec in &mut records {
                rec.method = method.to_string();
            }
            write_atomic(&out, |tmp| save_predictions(&records, tmp))
        })
    }

    /// Scores predictions against the dataset's gold sets and merges the
    /// rows into the report, replacing earlier rows for the same method and
    /// dataset.
    pub fn eval(&mut self, predictions: &Path, dataset: Option<&Path>, dataset_name: Option<&str>) -> Result<(), CliError> {
        let dataset = dataset.map_or_else(|| self.path(DATASET), Path::to_path_buf);
        if !predictions.exists() {
            return Err(CliError::Usage(format!("{} not found", predictions.display())));
        }
        let name = dataset_name
            .map(str::to_string)
            .unwrap_or_else(|| dataset.file_stem().unwrap_or_default().to_string_lossy().into_owned());
        let (json_out, csv_out) = (self.path(REPORT_JSON), self.path(REPORT_CSV));
        let predictions = predictions.to_path_buf();
        self.stage("eval", &[dataset.clone(), predictions.clone()], &[json_out.clone(), csv_out.clone()], |r| {
            let samples = r.load_dataset(&dataset)?;
            let records = load_predictions(&predictions)?;
            let rows = score_predictions(&samples, &records, &name)?;
            let mut report: EvalReport = if json_out.exists() {
                serde_json::from_str(&std::fs::read_to_string(&json_out)?).map_err(CliError::stage)?
            } else {
                EvalReport::default()
            };
            report.rows.retain(|row| !rows.iter().any(|n| n.method == row.method && n.dataset == row.dataset));
            report.rows.extend(rows);
            report.rows.sort_by(|a, b| {
                (&a.method, &a.dataset, a.mode.as_str()).cmp(&(&b.method, &b.dataset, b.mode.as_str()))
            });
            let text = serde_json::to_string_pretty(&report).map_err(CliError::stage)? + "\n";
            write_text(&json_out, &text)?;
            write_text(&csv_out, &eval::render_csv(&report))
        })
    }

    pub fn report(&self, input: Option<&Path>, csv: bool) -> Result<String, CliError> {
        let path = input.map_or_else(|| self.path(REPORT_JSON), Path::to_path_buf);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&text).map_err(CliError::stage)?;
        Ok(if csv { eval::render_csv(&report) } else { eval::render_table(&report) })
    }

    /// ingest → hop-sample → generate → distract → leak-check (when a test
    /// corpus is configured) → assemble → export-train.
    pub fn pipeline(&mut self) -> Result<(), CliError> {
        self.ingest()?;
        self.hop_sample()?;
        self.generate()?;
        self.distract()?;
        if self.config.test_corpus.is_some() {
            self.leak_check()?;
        }
        self.assemble()?;
        self.export_train()
    }
}

/// Micro and macro rows for one predictions file. Every sample needs
/// exactly one prediction.
pub fn score_predictions(
    samples: &[TrainingSample],
    records: &[PredictionRecord],
    dataset_name: &str,
) -> Result<Vec<eval::ReportRow>, CliError> {
    let methods: BTreeSet<&str> = records.iter().map(|r| r.method.as_str()).collect();
    let method = match methods.len() {
        1 => *methods.first().expect("one method"),
        0 => return Err(CliError::stage("predictions file is empty")),
        _ => return Err(CliError::stage(format!("predictions mix methods: {methods:?}"))),
    };
    let mut by_id: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    for r in records {
        if by_id.insert(&r.sample_id, r).is_some() {
            return Err(CliError::Stage(format!("sample {} predicted twice", r.sample_id)));
        }
    }
    let known: HashSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    if let Some(extra) = by_id.keys().find(|id| !known.contains(*id)) {
        return Err(CliError::Stage(format!("prediction for unknown sample {extra}")));
    }
    let items = samples
        .iter()
        .map(|s| {
            let r = by_id
                .get(s.id.as_str())
                .ok_or_else(|| CliError::Stage(format!("no prediction for sample {}", s.id)))?;
            Ok(ScoredItem {
                gold: s.gold.clone(),
                pred: r.refs.iter().copied().collect::<BTreeSet<SampleRef>>(),
                unparseable: r.unparseable,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    eval::evaluate(method, dataset_name, &items).map_err(CliError::stage)
}

/// Gives a fixed-id attributor a configured name.
struct Named<A>(String, A);

impl<A: Attributor> Attributor for Named<A> {
    fn id(&self) -> &str {
        &self.0
    }

    fn attribute(&self, task: &attrib_core::sample::AttributionTask) -> Result<attrib_core::attribution::AttributionPrediction, AttribError> {
        let mut p = self.1.attribute(task)?;
        p.method = self.0.clone();
        Ok(p)
    }
}
