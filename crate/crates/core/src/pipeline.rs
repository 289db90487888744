//! Configuration-driven pipeline with a resumable manifest.
//!
//! A run executes these stages in order, each reading its inputs from files
//! written by earlier stages:
//!
//! | stage        | output                       |
//! |--------------|------------------------------|
//! | `ingest`     | `ingested.txt` / `.tsv`      |
//! | `clean`      | `clean.txt`                  |
//! | `split`      | `finetune.txt`               |
//! | `train_base` | `base.lm`                    |
//! | `finetune`   | `finetuned.lm`               |
//! | `generate`   | `generated.txt`              |
//! | `extract`    | `extracted.txt`              |
//! | `translate`  | `translated.txt`             |
//! | `assemble`   | `assembled.tsv`              |
//! | `persist`    | `synthetic.tsv`, side files  |
//! | `score`      | `score.json` (optional)      |
//!
//! Every stage appends a record to the manifest with the SHA-256 hashes of
//! its inputs and outputs. A stage whose inputs and parameters match an
//! earlier complete record, and whose outputs are still on disk unchanged,
//! is not executed again; its record is marked `cached`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corpus::{
    clean_mono_with, load_parallel_tsv, sample_split, MonoCorpus, ParallelCorpus, Provenance, Sentence,
};
use crate::error::{Error, Result};
use crate::generator::{
    extract_lines, finetune, train_ngram_with, GenerationParams, GeneratorBackend, NgramConfig, NgramModel,
    RemoteGenerator, DEFAULT_BLOCK_SIZE, DEFAULT_DISCOUNT, DEFAULT_LAMBDA, DEFAULT_ORDER,
};
use crate::metrics::{corpus_bleu, corpus_chrf};
use crate::subword::{undo_subword, SubwordMode};
use crate::synthesis::{
    back_translation_pairs, extract_speaker_lines, forward_translation_pairs, personalized_prompts,
    speaker_back_translation_pairs, speaker_tagged_side, tag_id, Side, SpeakerLines, SpeakerRegistry, BT_TAG,
    DEFAULT_TAG_FORMAT,
};
use crate::textproc::{detokenize, detruecase};
use crate::translator::{
    translate_corpus, DictionaryTranslator, IdentityTranslator, RemoteTranslator, ReverseTranslator, Translator,
};

pub const MT_URL_ENV: &str = "PARASYNTH_MT_URL";
pub const GEN_URL_ENV: &str = "PARASYNTH_GEN_URL";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const STAGES: [&str; 11] = [
    "ingest",
    "clean",
    "split",
    "train_base",
    "finetune",
    "generate",
    "extract",
    "translate",
    "assemble",
    "persist",
    "score",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    BtTagged,
    FtUntagged,
    BtSpeaker,
}

/// Which monolingual text gets translated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonoSource {
    #[default]
    Generated,
    /// The fine-tuning sample itself.
    HumanFinetune,
    /// All cleaned in-domain text.
    HumanAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Local,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatorKind {
    #[default]
    Remote,
    Identity,
    Reverse,
    Dictionary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub src_lang: String,
    pub tgt_lang: String,
    #[serde(default = "default_domain")]
    pub domain: String,
    pub mode: SynthesisMode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_domain() -> String {
    "general".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// In-domain monolingual text; for `bt_speaker`, a parallel TSV with a
    /// speaker column.
    pub in_domain: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    pub max_tokens: usize,
    pub dedup: bool,
    /// Deduplicate generated lines after extraction.
    pub dedup_generated: bool,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            max_tokens: 120,
            dedup: true,
            dedup_generated: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub fine_tune_size: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { fine_tune_size: 50_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub backend: GeneratorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub order: usize,
    pub discount: f64,
    pub block_size: usize,
    pub lambda: f64,
    pub finetune: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            backend: GeneratorKind::Local,
            url: None,
            order: DEFAULT_ORDER,
            discount: DEFAULT_DISCOUNT,
            block_size: DEFAULT_BLOCK_SIZE,
            lambda: DEFAULT_LAMBDA,
            finetune: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Number of sequences to sample.
    pub size: usize,
    pub temperature: f64,
    pub top_k: usize,
    /// Tokens per sequence.
    pub max_tokens: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let g = GenerationParams::default();
        GenerateConfig {
            size: 1_000_000,
            temperature: g.temperature,
            top_k: g.top_k,
            max_tokens: g.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub source: MonoSource,
    pub bt_tag: String,
    pub tag_format: String,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            source: MonoSource::Generated,
            bt_tag: BT_TAG.into(),
            tag_format: DEFAULT_TAG_FORMAT.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub backend: TranslatorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    /// `source<TAB>target` entries for the dictionary backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    pub beam: usize,
    pub length_norm: f64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retries: u32,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            backend: TranslatorKind::Remote,
            url: None,
            dictionary: None,
            beam: crate::translator::DEFAULT_BEAM,
            length_norm: crate::translator::DEFAULT_LENGTH_NORM,
            batch_size: crate::translator::DEFAULT_BATCH,
            max_in_flight: crate::translator::DEFAULT_IN_FLIGHT,
            retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub hypotheses: PathBuf,
    pub references: PathBuf,
    /// Language of both files; defaults to the run's target language.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    /// Undo subwords, detruecase and detokenize hypotheses before scoring.
    #[serde(default)]
    pub postprocess: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subword: Option<SubwordMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub clean: CleanConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub lm: LmConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub translator: TranslatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreConfig>,
}

fn log_defaults(prefix: &str, full: &toml::Table, given: Option<&toml::Table>) {
    for (k, v) in full {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, given.and_then(|g| g.get(k))) {
            (toml::Value::Table(t), Some(toml::Value::Table(g))) => log_defaults(&key, t, Some(g)),
            (toml::Value::Table(t), None) => log_defaults(&key, t, None),
            (_, None) => log::info!("using default {key} = {v}"),
            _ => {}
        }
    }
}

impl PipelineConfig {
    /// Parses TOML text. Relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(|e| Error::Parse {
            what: "pipeline config".into(),
            offset: e.span().map(|s| s.start).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        if let (Ok(given), Ok(full)) = (text.parse::<toml::Table>(), toml::Table::try_from(&config)) {
            log_defaults("", &full, Some(&given));
        }
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run.output_dir);
        fix(&mut self.data.in_domain);
        if let Some(p) = &mut self.data.base_corpus {
            fix(p);
        }
        if let Some(p) = &mut self.data.base_model {
            fix(p);
        }
        if let Some(p) = &mut self.translator.dictionary {
            fix(p);
        }
        if let Some(s) = &mut self.score {
            fix(&mut s.hypotheses);
            fix(&mut s.references);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::argument(m));
        if self.run.src_lang.is_empty() || self.run.tgt_lang.is_empty() {
            return bad("run.src_lang and run.tgt_lang are required".into());
        }
        if self.clean.max_tokens == 0 || self.split.fine_tune_size == 0 || self.generate.size == 0 {
            return bad("clean.max_tokens, split.fine_tune_size and generate.size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lm.lambda) {
            return bad(format!("lm.lambda {} is outside [0, 1]", self.lm.lambda));
        }
        self.ngram_config().validate()?;
        self.generation_params(0).validate()?;
        let uses_generator = self.synthesis.source == MonoSource::Generated;
        if self.run.mode == SynthesisMode::BtSpeaker && !uses_generator {
            return bad("bt_speaker mode requires synthesis.source = \"generated\"".into());
        }
        if uses_generator && self.lm.backend == GeneratorKind::Local {
            if self.data.base_corpus.is_none() && self.data.base_model.is_none() {
                return bad("a local generator needs data.base_corpus or data.base_model".into());
            }
            if self.data.base_corpus.is_some() && self.data.base_model.is_some() {
                return bad("give only one of data.base_corpus and data.base_model".into());
            }
        }
        if uses_generator && self.lm.backend == GeneratorKind::Remote && self.lm.finetune {
            return bad("a remote generator cannot be fine-tuned here; set lm.finetune = false".into());
        }
        if self.translator.backend == TranslatorKind::Dictionary && self.translator.dictionary.is_none() {
            return bad("the dictionary translator needs translator.dictionary".into());
        }
        if self.translator.batch_size == 0 || self.translator.max_in_flight == 0 {
            return bad("translator.batch_size and translator.max_in_flight must be positive".into());
        }
        if self.synthesis.bt_tag.is_empty() || self.synthesis.bt_tag.contains(char::is_whitespace) {
            return bad(format!("synthesis.bt_tag {:?} is not a single token", self.synthesis.bt_tag));
        }
        SpeakerRegistry::new(Vec::<String>::new(), &self.synthesis.tag_format)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Language of the text that is generated and translated.
    pub fn mono_lang(&self) -> &str {
        match self.run.mode {
            SynthesisMode::FtUntagged => &self.run.src_lang,
            SynthesisMode::BtTagged | SynthesisMode::BtSpeaker => &self.run.tgt_lang,
        }
    }

    /// Language that the translator produces.
    pub fn translated_lang(&self) -> &str {
        match self.run.mode {
            SynthesisMode::FtUntagged => &self.run.tgt_lang,
            SynthesisMode::BtTagged | SynthesisMode::BtSpeaker => &self.run.src_lang,
        }
    }

    fn ngram_config(&self) -> NgramConfig {
        NgramConfig {
            order: self.lm.order,
            discount: self.lm.discount,
            block_size: self.lm.block_size,
        }
    }

    fn generation_params(&self, n: usize) -> GenerationParams {
        GenerationParams {
            temperature: self.generate.temperature,
            top_k: self.generate.top_k,
            max_tokens: self.generate.max_tokens,
            n_sequences: n,
            seed: self.run.seed,
            prompt: Vec::new(),
        }
    }

    fn translator(&self) -> Result<Box<dyn Translator>> {
        let (src, tgt) = (self.mono_lang(), self.translated_lang());
        let t = &self.translator;
        Ok(match t.backend {
            TranslatorKind::Identity => Box::new(IdentityTranslator::new(src, tgt)),
            TranslatorKind::Reverse => Box::new(ReverseTranslator::new(src, tgt)),
            TranslatorKind::Dictionary => Box::new(DictionaryTranslator::load(
                src,
                tgt,
                t.dictionary.as_ref().expect("validated"),
            )?),
            TranslatorKind::Remote => {
                let url = remote_url(t.url.as_deref(), MT_URL_ENV)?;
                let mut r = RemoteTranslator::new(url, src, tgt);
                r.beam = t.beam;
                r.length_norm = t.length_norm;
                r.batch_size = t.batch_size;
                r.max_in_flight = t.max_in_flight;
                r.retry.retries = t.retries;
                Box::new(r)
            }
        })
    }
}

fn remote_url(configured: Option<&str>, env: &str) -> Result<String> {
    if let Some(u) = configured {
        return Ok(u.to_string());
    }
    std::env::var(env).map_err(|_| Error::argument(format!("no service URL configured and {env} is not set")))
}

/// SHA-256 of a file's bytes, hex-encoded.
pub fn hash_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut f = BufReader::new(File::open(path).map_err(|e| Error::path(path, e))?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::path(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Complete,
    Failed,
    Skipped,
    Planned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub inputs: BTreeMap<String, String>,
    pub params: Value,
    pub outputs: Vec<Artifact>,
    pub counts: BTreeMap<String, u64>,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageRecord {
    pub fn is_cached(&self) -> bool {
        self.note.as_deref() == Some("cached")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
    /// Stopped on request after a stage boundary.
    Halted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub status: RunStatus,
    pub stages: Vec<StageRecord>,
}

impl RunRecord {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Stages that did work in this run, neither cached nor skipped.
    pub fn executed(&self) -> Vec<&str> {
        self.stages
            .iter()
            .filter(|s| s.status == StageStatus::Complete && !s.is_cached())
            .map(|s| s.name.as_str())
            .collect()
    }
}

/// Persisted history of pipeline runs. Runs are only ever appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub version: u32,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub runs: Vec<RunRecord>,
}

impl PipelineManifest {
    pub fn last_run(&self) -> Option<&RunRecord> {
        self.runs.last()
    }

    /// Most recent complete, non-skipped record of `stage` across runs.
    fn last_complete(&self, stage: &str) -> Option<&StageRecord> {
        self.runs
            .iter()
            .rev()
            .flat_map(|r| r.stages.iter().rev())
            .find(|s| s.name == stage && s.status == StageStatus::Complete)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            what: "manifest".into(),
            offset: byte_offset(&text, e.line(), e.column()),
            message: e.to_string(),
        })
    }

    /// Writes to a temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&tmp, text).map_err(|e| Error::path(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::path(path, e))
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Exclusive ownership of a manifest, released on drop.
struct ManifestLock {
    path: PathBuf,
}

impl ManifestLock {
    fn acquire(manifest: &Path) -> Result<Self> {
        let mut name = manifest.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| Error::path(&path, e))?;
                Ok(ManifestLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::path(&path, e)),
        }
    }
}

impl Drop for ManifestLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Manifest location; defaults to `manifest.json` in the output directory.
    pub manifest: Option<PathBuf>,
    /// Stop cleanly after this stage completes.
    pub halt_after: Option<String>,
}

struct StageOutput {
    outputs: Vec<PathBuf>,
    counts: BTreeMap<String, u64>,
    note: Option<String>,
}

impl StageOutput {
    fn new(outputs: Vec<PathBuf>) -> Self {
        StageOutput {
            outputs,
            counts: BTreeMap::new(),
            note: None,
        }
    }

    fn count(mut self, k: &str, v: usize) -> Self {
        self.counts.insert(k.into(), v as u64);
        self
    }
}

enum Plan {
    Run {
        inputs: Vec<(String, PathBuf)>,
        params: Value,
    },
    Skip(String),
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    out: PathBuf,
}

impl Runner<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn generates(&self) -> bool {
        self.config.synthesis.source == MonoSource::Generated
    }

    fn local_lm(&self) -> bool {
        self.generates() && self.config.lm.backend == GeneratorKind::Local
    }

    fn speaker_mode(&self) -> bool {
        self.config.run.mode == SynthesisMode::BtSpeaker
    }

    fn ingest_file(&self) -> &'static str {
        if self.speaker_mode() {
            "ingested.tsv"
        } else {
            "ingested.txt"
        }
    }

    fn model_file(&self) -> &'static str {
        if self.config.lm.finetune {
            "finetuned.lm"
        } else {
            "base.lm"
        }
    }

    /// Monolingual text that the translate stage reads.
    fn translate_input(&self) -> &'static str {
        match self.config.synthesis.source {
            MonoSource::Generated => "extracted.txt",
            MonoSource::HumanFinetune => "finetune.txt",
            MonoSource::HumanAll => "clean.txt",
        }
    }

    fn plan(&self, stage: &str) -> Plan {
        let c = self.config;
        let inp = |names: &[&str]| -> Vec<(String, PathBuf)> { names.iter().map(|n| (n.to_string(), self.path(n))).collect() };
        let (inputs, params) = match stage {
            "ingest" => (
                vec![("in_domain".to_string(), c.data.in_domain.clone())],
                json!({"mode": c.run.mode, "src_lang": c.run.src_lang, "tgt_lang": c.run.tgt_lang, "lang": c.mono_lang()}),
            ),
            "clean" => (
                inp(&[self.ingest_file()]),
                json!({"max_tokens": c.clean.max_tokens, "dedup": c.clean.dedup,
                       "tag_format": self.speaker_mode().then_some(&c.synthesis.tag_format)}),
            ),
            "split" => (inp(&["clean.txt"]), json!({"fine_tune_size": c.split.fine_tune_size, "seed": c.run.seed})),
            "train_base" => {
                if !self.local_lm() {
                    return Plan::Skip("no local generator".into());
                }
                let (key, p) = match (&c.data.base_model, &c.data.base_corpus) {
                    (Some(m), _) => ("base_model", m.clone()),
                    (None, Some(b)) => ("base_corpus", b.clone()),
                    (None, None) => return Plan::Skip("no base data".into()),
                };
                (
                    vec![(key.to_string(), p)],
                    json!({"order": c.lm.order, "discount": c.lm.discount, "block_size": c.lm.block_size}),
                )
            }
            "finetune" => {
                if !self.local_lm() {
                    return Plan::Skip("no local generator".into());
                }
                if !c.lm.finetune {
                    return Plan::Skip("fine-tuning disabled".into());
                }
                (inp(&["base.lm", "finetune.txt"]), json!({"lambda": c.lm.lambda}))
            }
            "generate" => {
                if !self.generates() {
                    return Plan::Skip("human text is translated".into());
                }
                let mut inputs = if self.local_lm() { inp(&[self.model_file()]) } else { Vec::new() };
                if self.speaker_mode() {
                    inputs.extend(inp(&["finetune.txt"]));
                }
                let url = (c.lm.backend == GeneratorKind::Remote).then(|| remote_url(c.lm.url.as_deref(), GEN_URL_ENV).ok());
                (
                    inputs,
                    json!({"backend": c.lm.backend, "url": url, "n_sequences": c.generate.size,
                           "temperature": c.generate.temperature, "top_k": c.generate.top_k,
                           "max_tokens": c.generate.max_tokens, "seed": c.run.seed,
                           "prompts": if self.speaker_mode() { "speaker" } else { "none" }}),
                )
            }
            "extract" => {
                if !self.generates() {
                    return Plan::Skip("human text is translated".into());
                }
                (
                    inp(&["generated.txt"]),
                    json!({"max_tokens": c.clean.max_tokens, "dedup": c.clean.dedup_generated,
                           "tag_format": self.speaker_mode().then_some(&c.synthesis.tag_format)}),
                )
            }
            "translate" => {
                let mut inputs = inp(&[self.translate_input()]);
                if let Some(d) = &c.translator.dictionary {
                    if c.translator.backend == TranslatorKind::Dictionary {
                        inputs.push(("dictionary".into(), d.clone()));
                    }
                }
                let t = &c.translator;
                let url = (t.backend == TranslatorKind::Remote).then(|| remote_url(t.url.as_deref(), MT_URL_ENV).ok());
                (
                    inputs,
                    json!({"backend": t.backend, "url": url, "src_lang": c.mono_lang(), "tgt_lang": c.translated_lang(),
                           "beam": t.beam, "length_norm": t.length_norm, "batch_size": t.batch_size,
                           "strip_speaker_tags": self.speaker_mode()}),
                )
            }
            "assemble" => (
                inp(&[self.translate_input(), "translated.txt"]),
                json!({"mode": c.run.mode, "bt_tag": c.synthesis.bt_tag, "tag_format": c.synthesis.tag_format}),
            ),
            "persist" => (inp(&["assembled.tsv"]), json!({"src_lang": c.run.src_lang, "tgt_lang": c.run.tgt_lang})),
            "score" => {
                let Some(s) = &c.score else {
                    return Plan::Skip("no score section".into());
                };
                (
                    vec![
                        ("hypotheses".to_string(), s.hypotheses.clone()),
                        ("references".to_string(), s.references.clone()),
                    ],
                    json!({"lang": s.lang.as_deref().unwrap_or(&c.run.tgt_lang), "postprocess": s.postprocess, "subword": s.subword}),
                )
            }
            other => unreachable!("unknown stage {other}"),
        };
        Plan::Run { inputs, params }
    }

    fn execute(&self, stage: &str) -> Result<StageOutput> {
        let c = self.config;
        let lang = c.mono_lang();
        let domain = c.run.domain.as_str();
        match stage {
            "ingest" => {
                let out = self.path(self.ingest_file());
                if self.speaker_mode() {
                    let ing = load_parallel_tsv(&c.data.in_domain, &c.run.src_lang, &c.run.tgt_lang)?;
                    let n_speakers = ing.corpus.speakers().len();
                    ing.corpus.save_tsv(&out)?;
                    Ok(StageOutput::new(vec![out])
                        .count("pairs", ing.corpus.len())
                        .count("dropped", ing.dropped)
                        .count("speakers", n_speakers))
                } else {
                    let ing = MonoCorpus::load(&c.data.in_domain, lang, domain)?;
                    ing.corpus.save(&out)?;
                    Ok(StageOutput::new(vec![out]).count("lines", ing.corpus.len()).count("dropped", ing.dropped))
                }
            }
            "clean" => {
                let mono = if self.speaker_mode() {
                    let p = load_parallel_tsv(self.path("ingested.tsv"), &c.run.src_lang, &c.run.tgt_lang)?.corpus;
                    let r = SpeakerRegistry::new(p.speakers().iter().cloned(), &c.synthesis.tag_format)?;
                    speaker_tagged_side(&p, &r, Side::Target, domain)?
                } else {
                    load_mono(&self.path("ingested.txt"), lang, domain)?
                };
                let (clean, stats) = clean_mono_with(&mono, c.clean.max_tokens, c.clean.dedup)?;
                let out = self.path("clean.txt");
                clean.save(&out)?;
                Ok(StageOutput::new(vec![out])
                    .count("lines", clean.len())
                    .count("duplicates", stats.duplicates)
                    .count("overlong", stats.overlong))
            }
            "split" => {
                let clean = load_mono(&self.path("clean.txt"), lang, domain)?;
                let want = c.split.fine_tune_size;
                let n = want.min(clean.len());
                let (sample, rest) = sample_split(&clean, n, c.run.seed)?;
                let out = self.path("finetune.txt");
                sample.save(&out)?;
                let mut o = StageOutput::new(vec![out]).count("selected", sample.len()).count("remaining", rest.len());
                if n < want {
                    log::warn!("fine_tune_size {want} exceeds the {} clean lines; using all of them", clean.len());
                    o.note = Some(format!("fine_tune_size {want} clamped to {n}"));
                }
                Ok(o)
            }
            "train_base" => {
                let model = match (&c.data.base_model, &c.data.base_corpus) {
                    (Some(m), _) => NgramModel::load(m)?,
                    (None, Some(b)) => {
                        let base = MonoCorpus::load(b, lang, "base")?.corpus;
                        train_ngram_with(&base, c.ngram_config())?
                    }
                    (None, None) => unreachable!("validated"),
                };
                let out = self.path("base.lm");
                model.save(&out)?;
                Ok(StageOutput::new(vec![out]).count("vocab", model.vocab_len()))
            }
            "finetune" => {
                let base = NgramModel::load(self.path("base.lm"))?;
                let dom = load_mono(&self.path("finetune.txt"), lang, domain)?;
                let model = finetune(&base, &dom, c.lm.lambda)?;
                let out = self.path("finetuned.lm");
                model.save(&out)?;
                Ok(StageOutput::new(vec![out]).count("vocab", model.vocab_len()).count("lines", dom.len()))
            }
            "generate" => {
                let backend: Box<dyn GeneratorBackend> = match c.lm.backend {
                    GeneratorKind::Local => Box::new(NgramModel::load(self.path(self.model_file()))?),
                    GeneratorKind::Remote => Box::new(RemoteGenerator::new(remote_url(c.lm.url.as_deref(), GEN_URL_ENV)?)),
                };
                let n = c.generate.size;
                let params = c.generation_params(n);
                let seqs = if self.speaker_mode() {
                    let r = self.speaker_registry()?;
                    let prompts: Vec<Vec<String>> =
                        personalized_prompts(&r, n, c.run.seed)?.into_iter().map(|t| vec![t]).collect();
                    backend.generate_prompted(&params, &prompts)?
                } else {
                    backend.generate(&params)?
                };
                let out = self.path("generated.txt");
                let mut w = io::BufWriter::new(File::create(&out).map_err(|e| Error::path(&out, e))?);
                let mut tokens = 0;
                for s in &seqs {
                    tokens += s.len();
                    writeln!(w, "{}", s.join(" "))?;
                }
                w.flush()?;
                Ok(StageOutput::new(vec![out]).count("sequences", seqs.len()).count("tokens", tokens))
            }
            "extract" => {
                let text = fs::read_to_string(self.path("generated.txt")).map_err(|e| Error::path(self.path("generated.txt"), e))?;
                let seqs: Vec<Vec<String>> = text
                    .lines()
                    .map(|l| l.split_whitespace().map(String::from).collect())
                    .collect();
                let out = self.path("extracted.txt");
                let (lines, stats, duplicates) = if self.speaker_mode() {
                    let r = self.speaker_registry()?;
                    let prompts: Vec<String> = seqs.iter().map(|s| s.first().cloned().unwrap_or_default()).collect();
                    let (sl, stats) = extract_speaker_lines(&seqs, &prompts, &r, c.clean.max_tokens, lang, domain)?;
                    let tagged = MonoCorpus {
                        sentences: sl
                            .corpus
                            .sentences
                            .iter()
                            .zip(&sl.speakers)
                            .map(|(s, id)| Sentence::new(format!("{} {s}", r.tag(id))).expect("valid"))
                            .collect(),
                        ..sl.corpus.clone()
                    };
                    // Speaker tags are part of the key: identical text from
                    // two speakers is kept for both.
                    let (dedup, cs) = clean_mono_with(&tagged, c.clean.max_tokens + 1, c.clean.dedup_generated)?;
                    (dedup, stats, cs.duplicates)
                } else {
                    let (mono, stats) = extract_lines(&seqs, c.clean.max_tokens, lang, domain);
                    let (dedup, cs) = clean_mono_with(&mono, c.clean.max_tokens, c.clean.dedup_generated)?;
                    (dedup, stats, cs.duplicates)
                };
                lines.save(&out)?;
                Ok(StageOutput::new(vec![out])
                    .count("lines", lines.len())
                    .count("empty", stats.empty)
                    .count("overlong", stats.overlong)
                    .count("duplicates", duplicates))
            }
            "translate" => {
                let mut mono = load_mono(&self.path(self.translate_input()), lang, domain)?;
                if self.speaker_mode() {
                    mono = self.split_speakers(&mono)?.corpus;
                }
                let t = c.translator()?;
                let (translated, stats) = translate_corpus(t.as_ref(), &mono)?;
                let out = self.path("translated.txt");
                translated.save(&out)?;
                Ok(StageOutput::new(vec![out])
                    .count("lines", stats.lines)
                    .count("placeholders", stats.placeholders))
            }
            "assemble" => {
                let mono = load_mono(&self.path(self.translate_input()), lang, domain)?;
                let translated = load_mono(&self.path("translated.txt"), c.translated_lang(), domain)?;
                let tag = &c.synthesis.bt_tag;
                let pairs = match c.run.mode {
                    SynthesisMode::BtTagged => back_translation_pairs(&mono, &translated, tag)?,
                    SynthesisMode::FtUntagged => forward_translation_pairs(&mono, &translated)?,
                    SynthesisMode::BtSpeaker => {
                        let lines = self.split_speakers(&mono)?;
                        let r = SpeakerRegistry::new(lines.speakers.iter().cloned(), &c.synthesis.tag_format)?;
                        speaker_back_translation_pairs(&lines, &translated, tag, &r)?
                    }
                };
                let out = self.path("assembled.tsv");
                pairs.save_tsv(&out)?;
                Ok(StageOutput::new(vec![out]).count("pairs", pairs.len()))
            }
            "persist" => {
                let pairs = self.load_assembled()?;
                let tsv = self.path("synthetic.tsv");
                let src = self.path(&format!("synthetic.{}", c.run.src_lang));
                let tgt = self.path(&format!("synthetic.{}", c.run.tgt_lang));
                pairs.save_tsv(&tsv)?;
                pairs.save_sides(&src, &tgt)?;
                Ok(StageOutput::new(vec![tsv, src, tgt])
                    .count("pairs", pairs.len())
                    .count("speakers", pairs.speakers().len()))
            }
            "score" => {
                let s = c.score.as_ref().expect("planned");
                let lang = s.lang.as_deref().unwrap_or(&c.run.tgt_lang);
                let hyps = read_text_lines(&s.hypotheses)?;
                let refs = read_text_lines(&s.references)?;
                let hyps: Vec<String> = if s.postprocess {
                    hyps.iter().map(|h| postprocess(h, lang, s.subword)).collect::<Result<_>>()?
                } else {
                    hyps
                };
                let bleu = corpus_bleu(&hyps, &refs)?;
                let chrf = corpus_chrf(&hyps, &refs)?;
                let out = self.path("score.json");
                let mut text = serde_json::to_string_pretty(&json!({"bleu": bleu, "chrf": chrf})).expect("serializes");
                text.push('\n');
                fs::write(&out, text).map_err(|e| Error::path(&out, e))?;
                let mut o = StageOutput::new(vec![out]).count("segments", hyps.len());
                o.note = Some(format!("{bleu}; {chrf}"));
                Ok(o)
            }
            other => unreachable!("unknown stage {other}"),
        }
    }

    fn load_assembled(&self) -> Result<ParallelCorpus> {
        Ok(load_parallel_tsv(self.path("assembled.tsv"), &self.config.run.src_lang, &self.config.run.tgt_lang)?.corpus)
    }

    /// Speakers whose tagged lines were used for fine-tuning.
    fn speaker_registry(&self) -> Result<SpeakerRegistry> {
        let c = self.config;
        let sample = load_mono(&self.path("finetune.txt"), c.mono_lang(), &c.run.domain)?;
        let fmt = &c.synthesis.tag_format;
        let ids: Vec<String> = sample
            .sentences
            .iter()
            .filter_map(|s| s.tokens().next().and_then(|t| tag_id(fmt, t)).map(String::from))
            .collect();
        SpeakerRegistry::new(ids, fmt)
    }

    /// Splits `<spk:ID> text` lines into text and speaker ids.
    fn split_speakers(&self, tagged: &MonoCorpus) -> Result<SpeakerLines> {
        let fmt = &self.config.synthesis.tag_format;
        let mut lines = SpeakerLines {
            corpus: MonoCorpus::new(&tagged.lang, &tagged.domain, Provenance::Generated),
            speakers: Vec::new(),
        };
        for (i, s) in tagged.sentences.iter().enumerate() {
            let (head, rest) = s.as_str().split_once(' ').unwrap_or((s.as_str(), ""));
            let id = tag_id(fmt, head).ok_or_else(|| Error::argument(format!("line {} lacks a speaker tag", i + 1)))?;
            lines.corpus.sentences.push(Sentence::new(rest)?);
            lines.speakers.push(id.to_string());
        }
        Ok(lines)
    }
}

fn load_mono(path: &Path, lang: &str, domain: &str) -> Result<MonoCorpus> {
    Ok(MonoCorpus::load(path, lang, domain)?.corpus)
}

fn read_text_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).map_err(|e| Error::path(path, e))?;
    crate::corpus::read_lines(BufReader::new(f))
}

/// Restores a system output to plain text for scoring: subwords merged,
/// then (except for Japanese) detruecased and detokenized.
pub fn postprocess(line: &str, lang: &str, subword: Option<SubwordMode>) -> Result<String> {
    let pieces: Vec<&str> = line.split_whitespace().collect();
    let text = match subword {
        Some(mode) => undo_subword(mode, &pieces),
        None => pieces.join(" "),
    };
    if lang == "ja" {
        return Ok(text);
    }
    let tokens: Vec<&str> = text.split_whitespace().collect();
    detokenize(&detruecase(&tokens), lang)
}

fn stage_names(config: &PipelineConfig) -> impl Iterator<Item = &'static str> + '_ {
    STAGES.iter().copied().filter(move |s| *s != "score" || config.score.is_some())
}

/// The stages a run would execute, with their parameters, without touching
/// any file.
pub fn plan(config: &PipelineConfig) -> Vec<StageRecord> {
    let runner = Runner {
        config,
        out: config.run.output_dir.clone(),
    };
    stage_names(config)
        .map(|name| match runner.plan(name) {
            Plan::Run { inputs, params } => StageRecord {
                name: name.into(),
                status: StageStatus::Planned,
                inputs: inputs.into_iter().map(|(k, p)| (k, p.display().to_string())).collect(),
                params,
                outputs: Vec::new(),
                counts: BTreeMap::new(),
                wall_ms: 0,
                note: None,
                error: None,
            },
            Plan::Skip(reason) => skipped(name, reason),
        })
        .collect()
}

fn skipped(name: &str, reason: String) -> StageRecord {
    StageRecord {
        name: name.into(),
        status: StageStatus::Skipped,
        inputs: BTreeMap::new(),
        params: Value::Null,
        outputs: Vec::new(),
        counts: BTreeMap::new(),
        wall_ms: 0,
        note: Some(reason),
        error: None,
    }
}

fn manifest_path(config: &PipelineConfig, opts: &RunOptions) -> PathBuf {
    opts.manifest
        .clone()
        .unwrap_or_else(|| config.run.output_dir.join(MANIFEST_FILE))
}

/// Runs the pipeline, reusing any stage whose recorded inputs, parameters
/// and outputs are unchanged.
pub fn run(config: &PipelineConfig, opts: &RunOptions) -> Result<PipelineManifest> {
    config.validate()?;
    if let Some(h) = &opts.halt_after {
        if !STAGES.contains(&h.as_str()) {
            return Err(Error::argument(format!("unknown stage `{h}`")));
        }
    }
    let out = &config.run.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::path(out, e))?;
    let mpath = manifest_path(config, opts);
    let _lock = ManifestLock::acquire(&mpath)?;
    let config_hash = config.hash();
    let mut manifest = if mpath.exists() {
        let mut m = PipelineManifest::load(&mpath)?;
        m.config_hash = config_hash.clone();
        m.config = config.clone();
        m
    } else {
        PipelineManifest {
            version: 1,
            config_hash: config_hash.clone(),
            config: config.clone(),
            runs: Vec::new(),
        }
    };
    manifest.runs.push(RunRecord {
        config_hash,
        status: RunStatus::Running,
        stages: Vec::new(),
    });
    manifest.save(&mpath)?;

    let runner = Runner {
        config,
        out: out.clone(),
    };
    for name in stage_names(config) {
        let record = match run_stage(&runner, &manifest, name) {
            Ok(r) => r,
            Err((record, err)) => {
                let run = manifest.runs.last_mut().expect("current run");
                run.stages.push(record);
                run.status = RunStatus::Failed;
                manifest.save(&mpath)?;
                return Err(Error::Stage {
                    stage: name.into(),
                    source: Box::new(err),
                });
            }
        };
        log::info!(
            "stage {name}: {}",
            match (record.status, record.is_cached()) {
                (StageStatus::Skipped, _) => "skipped",
                (_, true) => "cached",
                _ => "done",
            }
        );
        let run = manifest.runs.last_mut().expect("current run");
        run.stages.push(record);
        if opts.halt_after.as_deref() == Some(name) {
            run.status = RunStatus::Halted;
            manifest.save(&mpath)?;
            return Ok(manifest);
        }
        manifest.save(&mpath)?;
    }
    manifest.runs.last_mut().expect("current run").status = RunStatus::Complete;
    manifest.save(&mpath)?;
    Ok(manifest)
}

fn run_stage(runner: &Runner<'_>, manifest: &PipelineManifest, name: &str) -> std::result::Result<StageRecord, (StageRecord, Error)> {
    let fail = |inputs: BTreeMap<String, String>, params: Value, err: Error, wall_ms: u64| {
        let record = StageRecord {
            name: name.into(),
            status: StageStatus::Failed,
            inputs,
            params,
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            wall_ms,
            note: None,
            error: Some(err.to_string()),
        };
        (record, err)
    };
    let (inputs, params) = match runner.plan(name) {
        Plan::Skip(reason) => return Ok(skipped(name, reason)),
        Plan::Run { inputs, params } => (inputs, params),
    };
    let mut hashes = BTreeMap::new();
    for (k, p) in &inputs {
        match hash_file(p) {
            Ok(h) => {
                hashes.insert(k.clone(), h);
            }
            Err(e) => return Err(fail(hashes, params, e, 0)),
        }
    }

    if let Some(prev) = manifest.last_complete(name) {
        let outputs_intact = !prev.outputs.is_empty()
            && prev
                .outputs
                .iter()
                .all(|a| hash_file(runner.out.join(&a.path)).is_ok_and(|h| h == a.hash));
        if prev.inputs == hashes && prev.params == params && outputs_intact {
            return Ok(StageRecord {
                wall_ms: 0,
                note: Some("cached".into()),
                ..prev.clone()
            });
        }
    }

    let start = Instant::now();
    let result = runner.execute(name);
    let wall_ms = start.elapsed().as_millis() as u64;
    let out = match result {
        Ok(o) => o,
        Err(e) => return Err(fail(hashes, params, e, wall_ms)),
    };
    let mut outputs = Vec::new();
    for p in &out.outputs {
        match hash_file(p) {
            Ok(hash) => outputs.push(Artifact {
                path: p
                    .strip_prefix(&runner.out)
                    .unwrap_or(p)
                    .display()
                    .to_string(),
                hash,
            }),
            Err(e) => return Err(fail(hashes, params, e, wall_ms)),
        }
    }
    Ok(StageRecord {
        name: name.into(),
        status: StageStatus::Complete,
        inputs: hashes,
        params,
        outputs,
        counts: out.counts,
        wall_ms,
        note: out.note,
        error: None,
    })
}

/// Continues from a manifest, using the configuration stored in it. Only
/// stages that are incomplete or whose inputs changed are executed.
pub fn resume(manifest: impl AsRef<Path>, opts: &RunOptions) -> Result<PipelineManifest> {
    let path = manifest.as_ref();
    let m = PipelineManifest::load(path)?;
    let opts = RunOptions {
        manifest: Some(path.to_path_buf()),
        ..opts.clone()
    };
    run(&m.config, &opts)
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageStatus::Complete => "complete",
            StageStatus::Failed => "failed",
            StageStatus::Skipped => "skipped",
            StageStatus::Planned => "planned",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> Result<PipelineConfig> {
        PipelineConfig::from_toml(text, Path::new("/work"))
    }

    const MINIMAL: &str = r#"
        [run]
        src_lang = "de"
        tgt_lang = "en"
        mode = "bt_tagged"

        [data]
        in_domain = "mono.en"
        base_corpus = "base.en"
    "#;

    #[test]
    fn defaults_and_paths() {
        let c = config(MINIMAL).unwrap();
        assert_eq!(c.split.fine_tune_size, 50_000);
        assert_eq!(c.generate.size, 1_000_000);
        assert_eq!(c.clean.max_tokens, 120);
        assert_eq!(c.lm.lambda, 0.7);
        assert_eq!(c.data.in_domain, Path::new("/work/mono.en"));
        assert_eq!(c.run.output_dir, Path::new("/work/out"));
        assert_eq!(c.mono_lang(), "en");
        assert_eq!(c.translated_lang(), "de");
    }

    #[test]
    fn invalid_configs() {
        let e = config("[run]\nsrc_lang = 1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
        let e = config(&format!("{MINIMAL}\n[lm]\nlambda = 2.0\n")).unwrap_err();
        assert!(matches!(e, Error::Argument(_)));
        let e = config(&format!("{MINIMAL}\n[bogus]\nx = 1\n")).unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
        let no_base = MINIMAL.replace("base_corpus = \"base.en\"", "");
        assert!(config(&no_base).is_err());
    }

    #[test]
    fn full_scale_plan() {
        let c = config(&format!("{MINIMAL}\n[split]\nfine_tune_size = 50000\n")).unwrap();
        let p = plan(&c);
        assert_eq!(p.len(), 10);
        let g = p.iter().find(|r| r.name == "generate").unwrap();
        assert_eq!(g.params["n_sequences"], 1_000_000);
        assert_eq!(p.iter().find(|r| r.name == "split").unwrap().params["fine_tune_size"], 50_000);
    }

    #[test]
    fn human_source_skips_generation() {
        let c = config(&format!("{MINIMAL}\n[synthesis]\nsource = \"human_all\"\n")).unwrap();
        let p = plan(&c);
        for s in ["train_base", "finetune", "generate", "extract"] {
            assert_eq!(p.iter().find(|r| r.name == s).unwrap().status, StageStatus::Skipped);
        }
        assert_eq!(p.iter().find(|r| r.name == "translate").unwrap().inputs["clean.txt"], "/work/out/clean.txt");
    }

    #[test]
    fn manifest_parse_error_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, "{\n  \"version\": x\n}").unwrap();
        match PipelineManifest::load(&p).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 15),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn postprocessing() {
        assert_eq!(postprocess("hel@@ lo , world !", "en", Some(SubwordMode::TokenBpe)).unwrap(), "Hello, world!");
        assert_eq!(postprocess("▁東京 タワー", "ja", Some(SubwordMode::RawBpe)).unwrap(), "東京タワー");
    }

    #[test]
    fn file_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            hash_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("manifest.json");
        let first = ManifestLock::acquire(&m).unwrap();
        assert!(matches!(ManifestLock::acquire(&m), Err(Error::Locked(_))));
        drop(first);
        assert!(ManifestLock::acquire(&m).is_ok());
    }
}
