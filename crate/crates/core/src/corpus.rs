//! Monolingual and parallel corpora: ingestion, cleaning, splitting, persistence.
//!
//! Corpora are plain line files. A monolingual corpus holds one sentence per
//! line. A parallel corpus is either two line-aligned files (plus an optional
//! line-aligned speaker file) or one TSV file with the columns
//! `src<TAB>tgt[<TAB>speaker[<TAB>provenance]]`.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Languages written without spaces; their sentences are measured in characters.
const UNSEGMENTED_LANGS: &[&str] = &["ja", "zh"];

/// Number of tokens in `text` for length filtering.
///
/// Space-delimited languages count whitespace tokens; unsegmented ones
/// (Japanese, Chinese) count non-whitespace characters.
pub fn token_count(text: &str, lang: &str) -> usize {
    if UNSEGMENTED_LANGS.contains(&lang) {
        text.chars().filter(|c| !c.is_whitespace()).count()
    } else {
        text.split_whitespace().count()
    }
}

/// One line of text: no line breaks, not blank.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Sentence(String);

impl Sentence {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if let Some(reason) = Self::violation(&text) {
            return Err(Error::InvalidSentence { line: 0, reason });
        }
        Ok(Sentence(text))
    }

    fn violation(text: &str) -> Option<String> {
        if text.contains(['\n', '\r']) {
            Some("contains a line break".into())
        } else if text.trim().is_empty() {
            Some("empty after trimming".into())
        } else {
            None
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    pub fn token_count(&self, lang: &str) -> usize {
        token_count(&self.0, lang)
    }

    /// Whitespace tokens of the sentence.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.split_whitespace()
    }
}

impl fmt::Debug for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.0, f)
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Sentence {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Sentence {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Sentence::new(value)
    }
}

impl TryFrom<&str> for Sentence {
    type Error = Error;

    fn try_from(value: &str) -> Result<Self> {
        Sentence::new(value)
    }
}

impl From<Sentence> for String {
    fn from(s: Sentence) -> String {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Human,
    Generated,
    Translated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonoCorpus {
    pub lang: String,
    pub domain: String,
    pub provenance: Provenance,
    pub sentences: Vec<Sentence>,
}

impl MonoCorpus {
    pub fn new(lang: impl Into<String>, domain: impl Into<String>, provenance: Provenance) -> Self {
        MonoCorpus {
            lang: lang.into(),
            domain: domain.into(),
            provenance,
            sentences: Vec::new(),
        }
    }

    /// Builds a corpus from lines that must all be valid sentences.
    pub fn from_lines<I, S>(lang: &str, domain: &str, provenance: Provenance, lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sentences = lines
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                Sentence::new(l).map_err(|e| match e {
                    Error::InvalidSentence { reason, .. } => Error::InvalidSentence { line: i + 1, reason },
                    e => e,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MonoCorpus {
            lang: lang.to_string(),
            domain: domain.to_string(),
            provenance,
            sentences,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(Sentence::as_str)
    }

    fn with_sentences(&self, sentences: Vec<Sentence>) -> Self {
        MonoCorpus {
            lang: self.lang.clone(),
            domain: self.domain.clone(),
            provenance: self.provenance,
            sentences,
        }
    }

    /// Writes one sentence per line with LF terminators.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.sentences {
            w.write_all(s.as_str().as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::path(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>, lang: &str, domain: &str) -> Result<Ingested<MonoCorpus>> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::path(path, e))?;
        ingest_mono(BufReader::new(file), lang, domain)
    }
}

/// Result of an ingestion together with its attrition count.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested<T> {
    pub corpus: T,
    pub dropped: usize,
}

/// Reads lines from `reader`, tracking byte offsets so that encoding errors
/// can be located. Terminators (`\n` or `\r\n`) are stripped.
pub fn read_lines<R: BufRead>(mut reader: R) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    let mut buf = Vec::new();
    let mut offset: u64 = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        let mut body: &[u8] = &buf;
        if let Some(rest) = body.strip_suffix(b"\n") {
            body = rest;
        }
        if let Some(rest) = body.strip_suffix(b"\r") {
            body = rest;
        }
        let text = std::str::from_utf8(body).map_err(|e| Error::InvalidUtf8 {
            offset: offset + e.valid_up_to() as u64,
        })?;
        lines.push(text.to_string());
        offset += n as u64;
    }
    Ok(lines)
}

fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

/// Ingests a monolingual corpus: one sentence per line, blank lines dropped.
pub fn ingest_mono<R: BufRead>(reader: R, lang: &str, domain: &str) -> Result<Ingested<MonoCorpus>> {
    let mut corpus = MonoCorpus::new(lang, domain, Provenance::Human);
    let mut dropped = 0;
    for (i, line) in read_lines(reader)?.into_iter().enumerate() {
        if is_blank(&line) {
            dropped += 1;
            continue;
        }
        let s = Sentence::new(line).map_err(|e| match e {
            Error::InvalidSentence { reason, .. } => Error::InvalidSentence { line: i + 1, reason },
            e => e,
        })?;
        corpus.sentences.push(s);
    }
    Ok(Ingested { corpus, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CleanStats {
    pub duplicates: usize,
    pub overlong: usize,
}

/// Removes exact duplicates (compared after NFC normalization, first
/// occurrence kept) and sentences longer than `max_tokens`.
pub fn clean_mono(c: &MonoCorpus, max_tokens: usize) -> Result<(MonoCorpus, CleanStats)> {
    clean_mono_with(c, max_tokens, true)
}

/// Like [`clean_mono`], with deduplication optional.
pub fn clean_mono_with(c: &MonoCorpus, max_tokens: usize, dedup: bool) -> Result<(MonoCorpus, CleanStats)> {
    if max_tokens == 0 {
        return Err(Error::argument("max_tokens must be at least 1"));
    }
    let mut seen = HashSet::new();
    let mut stats = CleanStats::default();
    let mut kept = Vec::with_capacity(c.len());
    for s in &c.sentences {
        if dedup {
            let key: String = s.as_str().nfc().collect();
            if !seen.insert(key) {
                stats.duplicates += 1;
                continue;
            }
        }
        if s.token_count(&c.lang) > max_tokens {
            stats.overlong += 1;
            continue;
        }
        kept.push(s.clone());
    }
    Ok((c.with_sentences(kept), stats))
}

/// Deterministic pseudo-random partition into a subset of `first_size`
/// sentences and the remainder. Both parts keep the input's relative order.
pub fn sample_split(c: &MonoCorpus, first_size: usize, seed: u64) -> Result<(MonoCorpus, MonoCorpus)> {
    if first_size > c.len() {
        return Err(Error::argument(format!(
            "split size {first_size} exceeds corpus size {}",
            c.len()
        )));
    }
    let mut order: Vec<usize> = (0..c.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut chosen = vec![false; c.len()];
    for &i in &order[..first_size] {
        chosen[i] = true;
    }
    let (mut first, mut rest) = (Vec::with_capacity(first_size), Vec::new());
    for (s, pick) in c.sentences.iter().zip(chosen) {
        if pick {
            first.push(s.clone());
        } else {
            rest.push(s.clone());
        }
    }
    Ok((c.with_sentences(first), c.with_sentences(rest)))
}

/// Where a parallel corpus came from. Synthetic kinds are written to the TSV
/// provenance column as `bt`, `ft` and `bt-speaker`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum ParallelProvenance {
    #[default]
    #[serde(rename = "human")]
    Human,
    #[serde(rename = "bt")]
    BackTranslation,
    #[serde(rename = "ft")]
    ForwardTranslation,
    #[serde(rename = "bt-speaker")]
    SpeakerBackTranslation,
}

impl ParallelProvenance {
    pub fn as_str(self) -> &'static str {
        match self {
            ParallelProvenance::Human => "human",
            ParallelProvenance::BackTranslation => "bt",
            ParallelProvenance::ForwardTranslation => "ft",
            ParallelProvenance::SpeakerBackTranslation => "bt-speaker",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "human" => ParallelProvenance::Human,
            "bt" => ParallelProvenance::BackTranslation,
            "ft" => ParallelProvenance::ForwardTranslation,
            "bt-speaker" => ParallelProvenance::SpeakerBackTranslation,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Sentence,
    pub target: Sentence,
    pub speaker: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub src_lang: String,
    pub tgt_lang: String,
    pub provenance: ParallelProvenance,
    pairs: Vec<SentencePair>,
    speakers: BTreeSet<String>,
}

impl ParallelCorpus {
    pub fn new(src_lang: impl Into<String>, tgt_lang: impl Into<String>, provenance: ParallelProvenance) -> Self {
        ParallelCorpus {
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
            provenance,
            pairs: Vec::new(),
            speakers: BTreeSet::new(),
        }
    }

    /// Appends a pair, registering its speaker. Empty speaker ids are rejected.
    pub fn push(&mut self, pair: SentencePair) -> Result<()> {
        if let Some(id) = &pair.speaker {
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(Error::argument(format!(
                    "invalid speaker id {id:?} at pair {}",
                    self.pairs.len()
                )));
            }
            if !self.speakers.contains(id) {
                self.speakers.insert(id.clone());
            }
        }
        self.pairs.push(pair);
        Ok(())
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    /// Distinct speaker ids seen in the corpus.
    pub fn speakers(&self) -> &BTreeSet<String> {
        &self.speakers
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|p| &p.source)
    }

    pub fn targets(&self) -> impl Iterator<Item = &Sentence> {
        self.pairs.iter().map(|p| &p.target)
    }

    /// Writes the TSV form. The speaker column is emitted when any pair has a
    /// speaker or the corpus is synthetic; the provenance column only for
    /// synthetic corpora.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        let with_provenance = self.provenance != ParallelProvenance::Human;
        let with_speaker = with_provenance || !self.speakers.is_empty();
        for (i, p) in self.pairs.iter().enumerate() {
            if p.source.as_str().contains('\t') || p.target.as_str().contains('\t') {
                return Err(Error::argument(format!("pair {i} contains a tab and cannot be written as TSV")));
            }
            write!(w, "{}\t{}", p.source, p.target)?;
            if with_speaker {
                write!(w, "\t{}", p.speaker.as_deref().unwrap_or(""))?;
            }
            if with_provenance {
                write!(w, "\t{}", self.provenance.as_str())?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::path(path, e))?;
        self.write_tsv(BufWriter::new(file))
    }

    /// Writes source and target sides to two line-aligned files.
    pub fn save_sides(&self, src: impl AsRef<Path>, tgt: impl AsRef<Path>) -> Result<()> {
        let mut ws = BufWriter::new(File::create(src.as_ref()).map_err(|e| Error::path(src.as_ref(), e))?);
        let mut wt = BufWriter::new(File::create(tgt.as_ref()).map_err(|e| Error::path(tgt.as_ref(), e))?);
        for p in &self.pairs {
            writeln!(ws, "{}", p.source)?;
            writeln!(wt, "{}", p.target)?;
        }
        ws.flush()?;
        wt.flush()?;
        Ok(())
    }
}

/// Ingests line-aligned source/target streams with optional speaker ids.
/// Pairs with a blank side are dropped and counted. A blank speaker field
/// means the pair has no speaker.
pub fn ingest_parallel<R1, R2, R3>(
    src: R1,
    tgt: R2,
    src_lang: &str,
    tgt_lang: &str,
    speakers: Option<R3>,
) -> Result<Ingested<ParallelCorpus>>
where
    R1: BufRead,
    R2: BufRead,
    R3: BufRead,
{
    let src_lines = read_lines(src)?;
    let tgt_lines = read_lines(tgt)?;
    let spk_lines = speakers.map(read_lines).transpose()?;
    let spk_len = spk_lines.as_ref().map(Vec::len);
    if src_lines.len() != tgt_lines.len() || spk_len.is_some_and(|n| n != src_lines.len()) {
        return Err(Error::Alignment {
            src: src_lines.len(),
            tgt: tgt_lines.len(),
            speakers: spk_len,
        });
    }
    let mut corpus = ParallelCorpus::new(src_lang, tgt_lang, ParallelProvenance::Human);
    let mut dropped = 0;
    for (i, (s, t)) in src_lines.into_iter().zip(tgt_lines).enumerate() {
        if is_blank(&s) || is_blank(&t) {
            dropped += 1;
            continue;
        }
        let speaker = spk_lines
            .as_ref()
            .map(|v| v[i].trim().to_string())
            .filter(|id| !id.is_empty());
        corpus.push(SentencePair {
            source: Sentence::new(s)?,
            target: Sentence::new(t)?,
            speaker,
        })?;
    }
    Ok(Ingested { corpus, dropped })
}

/// Ingests the TSV form: `src<TAB>tgt[<TAB>speaker[<TAB>provenance]]`.
///
/// All rows must carry the same provenance; rows with a blank side are
/// dropped and counted.
pub fn ingest_parallel_tsv<R: BufRead>(reader: R, src_lang: &str, tgt_lang: &str) -> Result<Ingested<ParallelCorpus>> {
    let mut corpus = ParallelCorpus::new(src_lang, tgt_lang, ParallelProvenance::Human);
    let mut provenance: Option<ParallelProvenance> = None;
    let mut dropped = 0;
    let mut offset = 0usize;
    for line in read_lines(reader)? {
        let line_len = line.len() + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if !(2..=4).contains(&cols.len()) {
            return Err(Error::Parse {
                what: "parallel TSV".into(),
                offset,
                message: format!("expected 2 to 4 columns, found {}", cols.len()),
            });
        }
        if let Some(p) = cols.get(3) {
            let p = ParallelProvenance::parse(p).ok_or_else(|| Error::Parse {
                what: "parallel TSV".into(),
                offset,
                message: format!("unknown provenance {p:?}"),
            })?;
            if provenance.is_some_and(|prev| prev != p) {
                return Err(Error::Parse {
                    what: "parallel TSV".into(),
                    offset,
                    message: "mixed provenance values".into(),
                });
            }
            provenance = Some(p);
        }
        offset += line_len;
        if is_blank(cols[0]) || is_blank(cols[1]) {
            dropped += 1;
            continue;
        }
        let speaker = cols.get(2).map(|s| s.trim()).filter(|s| !s.is_empty()).map(String::from);
        corpus.push(SentencePair {
            source: Sentence::new(cols[0])?,
            target: Sentence::new(cols[1])?,
            speaker,
        })?;
    }
    corpus.provenance = provenance.unwrap_or_default();
    Ok(Ingested { corpus, dropped })
}

pub fn load_parallel_tsv(path: impl AsRef<Path>, src_lang: &str, tgt_lang: &str) -> Result<Ingested<ParallelCorpus>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::path(path, e))?;
    ingest_parallel_tsv(BufReader::new(file), src_lang, tgt_lang)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mono(lines: &[&str]) -> MonoCorpus {
        MonoCorpus::from_lines("en", "test", Provenance::Human, lines.iter().copied()).unwrap()
    }

    #[test]
    fn ingest_drops_blank_lines() {
        let got = ingest_mono("hello\n\nworld\n".as_bytes(), "en", "d").unwrap();
        assert_eq!(got.corpus.iter().collect::<Vec<_>>(), ["hello", "world"]);
        assert_eq!(got.dropped, 1);

        let empty = ingest_mono("".as_bytes(), "en", "d").unwrap();
        assert!(empty.corpus.is_empty());
        assert_eq!(empty.dropped, 0);
    }

    #[test]
    fn ingest_strips_crlf_and_whitespace_only_lines() {
        let got = ingest_mono("a\r\n \t \r\nb".as_bytes(), "en", "d").unwrap();
        assert_eq!(got.corpus.iter().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(got.dropped, 1);
    }

    #[test]
    fn ingest_reports_utf8_offset() {
        let bytes = b"ok\nab\xffc\n";
        match ingest_mono(&bytes[..], "en", "d") {
            Err(Error::InvalidUtf8 { offset }) => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_fifty_thousand_lines() {
        let text: String = (0..50_000).map(|i| format!("sentence {i}\n")).collect();
        let got = ingest_mono(text.as_bytes(), "en", "news").unwrap();
        assert_eq!(got.corpus.len(), 50_000);
        assert_eq!(got.dropped, 0);
    }

    #[test]
    fn sentence_rejects_breaks_and_blanks() {
        assert!(Sentence::new("a\nb").is_err());
        assert!(Sentence::new("a\rb").is_err());
        assert!(Sentence::new("   ").is_err());
        assert!(Sentence::new(" a ").is_ok());
    }

    #[test]
    fn clean_dedups_and_filters() {
        let c = mono(&["a b", "a b", "c"]);
        let (out, stats) = clean_mono(&c, 120).unwrap();
        assert_eq!(out.iter().collect::<Vec<_>>(), ["a b", "c"]);
        assert_eq!(stats, CleanStats { duplicates: 1, overlong: 0 });

        let long = vec!["w"; 121].join(" ");
        let (out, stats) = clean_mono(&mono(&[&long]), 120).unwrap();
        assert!(out.is_empty());
        assert_eq!(stats.overlong, 1);

        let exact = vec!["w"; 120].join(" ");
        assert_eq!(clean_mono(&mono(&[&exact]), 120).unwrap().0.len(), 1);
    }

    #[test]
    fn clean_fixture_counts() {
        let long = vec!["x"; 8].join(" ");
        let lines = ["a", "b", "a", "c", "d", "b", "e", "a", &long, "f"];
        // Independent count: duplicates by first-seen set, then length check.
        let mut seen = std::collections::HashSet::new();
        let mut dups = 0;
        let mut over = 0;
        let mut kept = 0;
        for l in lines {
            if !seen.insert(l) {
                dups += 1;
            } else if l.split_whitespace().count() > 5 {
                over += 1;
            } else {
                kept += 1;
            }
        }
        assert_eq!((kept, dups, over), (6, 3, 1));
        let (out, stats) = clean_mono(&mono(&lines), 5).unwrap();
        assert_eq!(out.len(), kept);
        assert_eq!(stats, CleanStats { duplicates: dups, overlong: over });
    }

    #[test]
    fn clean_compares_after_nfc() {
        let c = mono(&["caf\u{e9}", "cafe\u{301}"]);
        let (out, stats) = clean_mono(&c, 10).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(stats.duplicates, 1);
    }

    #[test]
    fn clean_rejects_zero_max() {
        assert!(clean_mono(&mono(&["a"]), 0).is_err());
    }

    #[test]
    fn japanese_length_counts_characters() {
        assert_eq!(token_count("東京 タワー", "ja"), 5);
        assert_eq!(token_count("東京 タワー", "en"), 2);
    }

    #[test]
    fn split_edge_cases() {
        let c = mono(&["a", "b", "c"]);
        let (a, b) = sample_split(&c, 0, 7).unwrap();
        assert!(a.is_empty());
        assert_eq!(b, c);
        assert!(matches!(sample_split(&c, 4, 7), Err(Error::Argument(_))));
    }

    #[test]
    fn split_hundred_thousand_in_halves() {
        let lines: Vec<String> = (0..100_000).map(|i| format!("s{i}")).collect();
        let c = MonoCorpus::from_lines("en", "d", Provenance::Human, lines).unwrap();
        let (a, b) = sample_split(&c, 50_000, 1).unwrap();
        assert_eq!((a.len(), b.len()), (50_000, 50_000));
        let mut all: Vec<_> = a.iter().chain(b.iter()).collect();
        all.sort_unstable();
        let mut orig: Vec<_> = c.iter().collect();
        orig.sort_unstable();
        assert_eq!(all, orig);
        assert_eq!(sample_split(&c, 50_000, 1).unwrap(), (a, b));
    }

    #[test]
    fn parallel_alignment() {
        let got = ingest_parallel("a\nb\nc\n".as_bytes(), "x\ny\nz\n".as_bytes(), "de", "en", None::<&[u8]>).unwrap();
        assert_eq!(got.corpus.len(), 3);
        match ingest_parallel("a\nb\nc\n".as_bytes(), "x\ny\n".as_bytes(), "de", "en", None::<&[u8]>) {
            Err(Error::Alignment { src: 3, tgt: 2, speakers: None }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parallel_drops_half_empty_pairs() {
        let got = ingest_parallel("a\n\nc\n".as_bytes(), "x\ny\n \n".as_bytes(), "de", "en", None::<&[u8]>).unwrap();
        assert_eq!(got.corpus.len(), 1);
        assert_eq!(got.dropped, 2);
    }

    #[test]
    fn parallel_speakers_build_registry() {
        let src = "a\nb\nc\nd\n";
        let tgt = "w\nx\ny\nz\n";
        let spk = "s1\ns2\ns1\ns3\n";
        let got = ingest_parallel(src.as_bytes(), tgt.as_bytes(), "de", "en", Some(spk.as_bytes())).unwrap();
        let ids: Vec<_> = got.corpus.speakers().iter().cloned().collect();
        assert_eq!(ids, ["s1", "s2", "s3"]);
        assert_eq!(got.corpus.pairs()[2].speaker.as_deref(), Some("s1"));

        let bad = ingest_parallel(src.as_bytes(), tgt.as_bytes(), "de", "en", Some("s1\n".as_bytes()));
        assert!(matches!(bad, Err(Error::Alignment { speakers: Some(1), .. })));
    }

    #[test]
    fn tsv_round_trip_with_provenance() {
        let mut p = ParallelCorpus::new("de", "en", ParallelProvenance::BackTranslation);
        p.push(SentencePair {
            source: Sentence::new("<BT> hallo").unwrap(),
            target: Sentence::new("hello").unwrap(),
            speaker: None,
        })
        .unwrap();
        let mut buf = Vec::new();
        p.write_tsv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "<BT> hallo\thello\t\tbt\n");
        let back = ingest_parallel_tsv(&buf[..], "de", "en").unwrap().corpus;
        assert_eq!(back, p);
    }

    #[test]
    fn tsv_rejects_bad_rows() {
        assert!(matches!(
            ingest_parallel_tsv("only one column\n".as_bytes(), "de", "en"),
            Err(Error::Parse { offset: 0, .. })
        ));
        assert!(matches!(
            ingest_parallel_tsv("a\tb\n\tc\td\tnope\n".as_bytes(), "de", "en"),
            Err(Error::Parse { offset: 4, .. })
        ));
    }

    fn line_strategy() -> impl Strategy<Value = String> {
        "[a-c ]{0,6}".prop_map(|s| s)
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(lines in proptest::collection::vec("[a-c]( [a-c]){0,4}", 0..30), max in 1usize..5) {
            let c = MonoCorpus::from_lines("en", "d", Provenance::Human, lines).unwrap();
            let (once, _) = clean_mono(&c, max).unwrap();
            let (twice, stats) = clean_mono(&once, max).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(stats, CleanStats::default());
        }

        #[test]
        fn split_partitions(n in 0usize..40, frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let c = MonoCorpus::from_lines("en", "d", Provenance::Human, (0..n).map(|i| format!("l{}", i % 7))).unwrap();
            let k = (n as f64 * frac) as usize;
            let (a, b) = sample_split(&c, k, seed).unwrap();
            prop_assert_eq!(a.len(), k);
            let mut union: Vec<_> = a.iter().chain(b.iter()).collect();
            union.sort_unstable();
            let mut orig: Vec<_> = c.iter().collect();
            orig.sort_unstable();
            prop_assert_eq!(union, orig);
        }

        #[test]
        fn persistence_round_trip(lines in proptest::collection::vec(line_strategy(), 0..20)) {
            let lines: Vec<String> = lines.into_iter().filter(|l| !l.trim().is_empty()).collect();
            let c = MonoCorpus::from_lines("en", "d", Provenance::Human, lines).unwrap();
            let mut buf = Vec::new();
            c.write_to(&mut buf).unwrap();
            let back = ingest_mono(&buf[..], "en", "d").unwrap();
            prop_assert_eq!(back.dropped, 0);
            prop_assert_eq!(back.corpus, c);
        }
    }
}
