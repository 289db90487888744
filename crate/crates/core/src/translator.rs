//! Translation backends.
//!
//! The translation system itself is external. This module defines the
//! interface, deterministic mock translators for tests, and an HTTP client
//! for a remote service (`POST /translate`).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_lines, MonoCorpus, Provenance, Sentence};
use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};

pub const DEFAULT_BEAM: usize = 12;
pub const DEFAULT_LENGTH_NORM: f64 = 1.0;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_IN_FLIGHT: usize = 4;

/// Translates lines between a fixed language pair.
pub trait Translator: Send + Sync {
    fn src_lang(&self) -> &str;
    fn tgt_lang(&self) -> &str;

    /// Returns one translation per input line, in input order.
    fn translate_lines(&self, lines: &[&str]) -> Result<Vec<String>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TranslateStats {
    pub lines: usize,
    /// Empty outputs replaced by a copy of the source.
    pub placeholders: usize,
}

/// Translates a whole corpus. An empty translation is replaced by the
/// source sentence and counted, so the output stays line-aligned.
pub fn translate_corpus(t: &dyn Translator, corpus: &MonoCorpus) -> Result<(MonoCorpus, TranslateStats)> {
    if corpus.lang != t.src_lang() {
        return Err(Error::argument(format!(
            "corpus language {} does not match translator source {}",
            corpus.lang,
            t.src_lang()
        )));
    }
    let lines: Vec<&str> = corpus.iter().collect();
    let out = t.translate_lines(&lines)?;
    if out.len() != lines.len() {
        return Err(Error::Alignment {
            src: lines.len(),
            tgt: out.len(),
            speakers: None,
        });
    }
    let mut stats = TranslateStats { lines: lines.len(), placeholders: 0 };
    let mut result = MonoCorpus::new(t.tgt_lang(), &corpus.domain, Provenance::Translated);
    for (src, hyp) in corpus.sentences.iter().zip(out) {
        let flat = hyp.split_whitespace().collect::<Vec<_>>().join(" ");
        match Sentence::new(flat) {
            Ok(s) => result.sentences.push(s),
            Err(_) => {
                stats.placeholders += 1;
                result.sentences.push(src.clone());
            }
        }
    }
    Ok((result, stats))
}

/// Returns every line unchanged.
#[derive(Debug, Clone)]
pub struct IdentityTranslator {
    pub src: String,
    pub tgt: String,
}

impl IdentityTranslator {
    pub fn new(src: &str, tgt: &str) -> Self {
        IdentityTranslator { src: src.into(), tgt: tgt.into() }
    }
}

impl Translator for IdentityTranslator {
    fn src_lang(&self) -> &str {
        &self.src
    }
    fn tgt_lang(&self) -> &str {
        &self.tgt
    }
    fn translate_lines(&self, lines: &[&str]) -> Result<Vec<String>> {
        Ok(lines.iter().map(|l| l.to_string()).collect())
    }
}

/// Reverses the token order of every line.
#[derive(Debug, Clone)]
pub struct ReverseTranslator {
    pub src: String,
    pub tgt: String,
}

impl ReverseTranslator {
    pub fn new(src: &str, tgt: &str) -> Self {
        ReverseTranslator { src: src.into(), tgt: tgt.into() }
    }
}

impl Translator for ReverseTranslator {
    fn src_lang(&self) -> &str {
        &self.src
    }
    fn tgt_lang(&self) -> &str {
        &self.tgt
    }
    fn translate_lines(&self, lines: &[&str]) -> Result<Vec<String>> {
        Ok(lines
            .iter()
            .map(|l| l.split_whitespace().rev().collect::<Vec<_>>().join(" "))
            .collect())
    }
}

/// Word-by-word lookup; unknown tokens are copied.
#[derive(Debug, Clone)]
pub struct DictionaryTranslator {
    pub src: String,
    pub tgt: String,
    pub entries: HashMap<String, String>,
}

impl DictionaryTranslator {
    pub fn new(src: &str, tgt: &str, entries: impl IntoIterator<Item = (String, String)>) -> Self {
        DictionaryTranslator {
            src: src.into(),
            tgt: tgt.into(),
            entries: entries.into_iter().collect(),
        }
    }

    /// Reads `source\ttarget` lines. A target may hold several tokens or
    /// be empty (the token is deleted).
    pub fn load(src: &str, tgt: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::path(path, e))?;
        Self::read_from(src, tgt, BufReader::new(f))
    }

    pub fn read_from<R: BufRead>(src: &str, tgt: &str, reader: R) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut offset = 0;
        for line in read_lines(reader)? {
            let (k, v) = line.split_once('\t').ok_or_else(|| Error::Parse {
                what: "dictionary".into(),
                offset,
                message: format!("expected `source<TAB>target`, got {line:?}"),
            })?;
            entries.insert(k.to_string(), v.to_string());
            offset += line.len() + 1;
        }
        Ok(Self::new(src, tgt, entries))
    }
}

impl Translator for DictionaryTranslator {
    fn src_lang(&self) -> &str {
        &self.src
    }
    fn tgt_lang(&self) -> &str {
        &self.tgt
    }
    fn translate_lines(&self, lines: &[&str]) -> Result<Vec<String>> {
        Ok(lines
            .iter()
            .map(|l| {
                l.split_whitespace()
                    .map(|t| self.entries.get(t).map(String::as_str).unwrap_or(t))
                    .filter(|t| !t.is_empty())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect())
    }
}

/// Client for a remote translation service.
#[derive(Debug, Clone)]
pub struct RemoteTranslator {
    pub url: String,
    pub src: String,
    pub tgt: String,
    pub beam: usize,
    pub length_norm: f64,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    src_lang: &'a str,
    tgt_lang: &'a str,
    beam: usize,
    length_norm: f64,
    lines: &'a [&'a str],
}

#[derive(Deserialize)]
struct TranslateResponse {
    translations: Vec<String>,
}

impl RemoteTranslator {
    pub fn new(url: impl Into<String>, src: &str, tgt: &str) -> Self {
        RemoteTranslator {
            url: url.into(),
            src: src.into(),
            tgt: tgt.into(),
            beam: DEFAULT_BEAM,
            length_norm: DEFAULT_LENGTH_NORM,
            batch_size: DEFAULT_BATCH,
            max_in_flight: DEFAULT_IN_FLIGHT,
            retry: RetryPolicy::default(),
        }
    }

    fn translate_batch(&self, url: &str, lines: &[&str]) -> Result<Vec<String>> {
        let req = TranslateRequest {
            src_lang: &self.src,
            tgt_lang: &self.tgt,
            beam: self.beam,
            length_norm: self.length_norm,
            lines,
        };
        let resp: TranslateResponse = http::post_json(url, &req, &self.retry)?;
        if resp.translations.len() != lines.len() {
            return Err(Error::Transport {
                attempts: 1,
                message: format!("{url} returned {} translations for {} lines", resp.translations.len(), lines.len()),
                untranslated: Vec::new(),
            });
        }
        Ok(resp.translations)
    }
}

impl Translator for RemoteTranslator {
    fn src_lang(&self) -> &str {
        &self.src
    }
    fn tgt_lang(&self) -> &str {
        &self.tgt
    }

    /// Sends batches of `batch_size` lines with at most `max_in_flight`
    /// requests outstanding. If any batch fails for good, the error lists
    /// the indices of every line left without a translation.
    fn translate_lines(&self, lines: &[&str]) -> Result<Vec<String>> {
        if self.batch_size == 0 || self.max_in_flight == 0 {
            return Err(Error::argument("batch size and in-flight limit must be at least 1"));
        }
        let url = http::endpoint(&self.url, "translate");
        let batches: Vec<&[&str]> = lines.chunks(self.batch_size).collect();
        let results: Vec<Mutex<Option<Result<Vec<String>>>>> = batches.iter().map(|_| Mutex::new(None)).collect();
        let next = Mutex::new(0usize);
        thread::scope(|s| {
            for _ in 0..self.max_in_flight.min(batches.len()) {
                s.spawn(|| loop {
                    let i = {
                        let mut n = next.lock().expect("batch counter");
                        let i = *n;
                        *n += 1;
                        i
                    };
                    let Some(batch) = batches.get(i) else { break };
                    let r = self.translate_batch(&url, batch);
                    *results[i].lock().expect("batch slot") = Some(r);
                });
            }
        });

        let mut out = Vec::with_capacity(lines.len());
        let mut untranslated = Vec::new();
        let mut failure: Option<(u32, String)> = None;
        for (i, slot) in results.into_iter().enumerate() {
            match slot.into_inner().expect("batch slot").expect("every batch ran") {
                Ok(t) => out.extend(t),
                Err(e) => {
                    let start = i * self.batch_size;
                    untranslated.extend(start..start + batches[i].len());
                    if failure.is_none() {
                        failure = Some(match e {
                            Error::Transport { attempts, message, .. } => (attempts, message),
                            other => (1, other.to_string()),
                        });
                    }
                }
            }
        }
        match failure {
            None => Ok(out),
            Some((attempts, message)) => Err(Error::Transport { attempts, message, untranslated }),
        }
    }
}
