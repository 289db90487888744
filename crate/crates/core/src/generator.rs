//! Synthetic text generation.
//!
//! The local backend is an interpolated absolute-discounting n-gram model.
//! For a context `h` with continuation counts `c(h, w)`, total `c(h)` and
//! `N1+(h)` distinct continuations,
//!
//! ```text
//! P(w | h) = max(c(h, w) - D, 0) / c(h) + D * N1+(h) / c(h) * P(w | h')
//! ```
//!
//! where `h'` drops the oldest token of `h`. Unseen contexts defer to `h'`
//! unchanged, and the recursion ends in the uniform distribution over the
//! model's vocabulary (every token except `<s>`).
//!
//! Fine-tuning is emulated by interpolation: a model trained on in-domain
//! text is mixed with the base model, `P = λ P_dom + (1 - λ) P_base`. A model
//! is therefore a weighted list of count tables over one shared vocabulary.
//!
//! Training lines are grouped into blocks joined by `<nl>`, so a sampled
//! sequence holds several lines. [`extract_lines`] cuts them apart again.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{MonoCorpus, Provenance, Sentence};
use crate::error::{Error, Result};
use crate::http::{self, RetryPolicy};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const NEWLINE: &str = "<nl>";

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_DISCOUNT: f64 = 0.75;
pub const DEFAULT_LAMBDA: f64 = 0.7;
pub const DEFAULT_BLOCK_SIZE: usize = 5;

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const NL_ID: u32 = 2;
/// Stands in for prompt tokens the model has never seen; matches no context.
const UNSEEN_ID: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramConfig {
    pub order: usize,
    pub discount: f64,
    /// Training lines per `<nl>`-joined sequence.
    pub block_size: usize,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            order: DEFAULT_ORDER,
            discount: DEFAULT_DISCOUNT,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

impl NgramConfig {
    pub fn with_order(order: usize) -> Self {
        NgramConfig {
            order,
            ..NgramConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::argument("n-gram order must be at least 1"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::argument(format!("discount {} is outside (0, 1)", self.discount)));
        }
        if self.block_size == 0 {
            return Err(Error::argument("block size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    fn with_reserved() -> Self {
        let mut v = Vocab::default();
        for t in [BOS, EOS, NEWLINE] {
            v.intern(t);
        }
        v
    }

    fn intern(&mut self, tok: &str) -> u32 {
        if let Some(&id) = self.ids.get(tok) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(tok.to_string());
        self.ids.insert(tok.to_string(), id);
        id
    }

    fn get(&self, tok: &str) -> Option<u32> {
        self.ids.get(tok).copied()
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    /// (token, count), sorted by token id.
    next: Vec<(u32, u64)>,
}

/// Counts for one training corpus over the model's shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
struct CountTable {
    /// Which vocabulary ids this table was trained with (reserved included).
    members: Vec<bool>,
    contexts: HashMap<Vec<u32>, ContextCounts>,
    /// Dense `P(w)` at the unigram level, indexed by vocabulary id.
    unigram: Vec<f64>,
}

impl CountTable {
    fn from_counts(members: Vec<bool>, raw: HashMap<Vec<u32>, BTreeMap<u32, u64>>, discount: f64) -> Self {
        let contexts: HashMap<Vec<u32>, ContextCounts> = raw
            .into_iter()
            .map(|(ctx, next)| {
                let total = next.values().sum();
                (ctx, ContextCounts { total, next: next.into_iter().collect() })
            })
            .collect();
        let mut table = CountTable { members, contexts, unigram: Vec::new() };
        table.unigram = table.unigram_distribution(discount);
        table
    }

    fn unigram_distribution(&self, discount: f64) -> Vec<f64> {
        let support = self
            .members
            .iter()
            .enumerate()
            .filter(|&(id, &m)| m && id as u32 != BOS_ID)
            .count();
        let uniform = 1.0 / support as f64;
        let mut p: Vec<f64> = self
            .members
            .iter()
            .enumerate()
            .map(|(id, &m)| if m && id as u32 != BOS_ID { uniform } else { 0.0 })
            .collect();
        if let Some(cc) = self.contexts.get(&[][..]) {
            apply_level(&mut p, cc, discount);
        }
        p
    }

    fn extend_vocab(&mut self, size: usize) {
        self.members.resize(size, false);
        self.unigram.resize(size, 0.0);
    }

    /// `P(w | history)` for a single token.
    fn prob(&self, history: &[u32], w: u32, order: usize, discount: f64) -> f64 {
        let mut p = self.unigram.get(w as usize).copied().unwrap_or(0.0);
        let max_len = history.len().min(order - 1);
        for k in 1..=max_len {
            if let Some(cc) = self.contexts.get(&history[history.len() - k..]) {
                let c = cc
                    .next
                    .binary_search_by_key(&w, |&(t, _)| t)
                    .map(|i| cc.next[i].1)
                    .unwrap_or(0);
                let total = cc.total as f64;
                p = (c as f64 - discount).max(0.0) / total + discount * cc.next.len() as f64 / total * p;
            }
        }
        p
    }

    /// Adds `weight * P(· | history)` into `out`, using `scratch` as workspace.
    fn accumulate(&self, history: &[u32], order: usize, discount: f64, weight: f64, scratch: &mut Vec<f64>, out: &mut [f64]) {
        scratch.clear();
        scratch.extend_from_slice(&self.unigram);
        let max_len = history.len().min(order - 1);
        for k in 1..=max_len {
            if let Some(cc) = self.contexts.get(&history[history.len() - k..]) {
                apply_level(scratch, cc, discount);
            }
        }
        for (o, p) in out.iter_mut().zip(scratch.iter()) {
            *o += weight * p;
        }
    }
}

/// Turns a lower-order distribution into the next order's, in place.
fn apply_level(p: &mut [f64], cc: &ContextCounts, discount: f64) {
    let total = cc.total as f64;
    let backoff = discount * cc.next.len() as f64 / total;
    for x in p.iter_mut() {
        *x *= backoff;
    }
    for &(w, c) in &cc.next {
        p[w as usize] += (c as f64 - discount).max(0.0) / total;
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Component {
    weight: f64,
    table: CountTable,
}

/// An n-gram language model, possibly an interpolation of several tables.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    config: NgramConfig,
    vocab: Vocab,
    components: Vec<Component>,
}

/// Training sequences: blocks of lines joined by `<nl>`, each wrapped in
/// `<s>` ... `</s>`.
fn sequences<'a>(c: &'a MonoCorpus, block_size: usize) -> impl Iterator<Item = Vec<&'a str>> + 'a {
    c.sentences.chunks(block_size).map(|block| {
        let mut seq = vec![BOS];
        for (i, s) in block.iter().enumerate() {
            if i > 0 {
                seq.push(NEWLINE);
            }
            seq.extend(s.tokens());
        }
        seq.push(EOS);
        seq
    })
}

fn count_table(c: &MonoCorpus, config: &NgramConfig, vocab: &mut Vocab) -> CountTable {
    let mut raw: HashMap<Vec<u32>, BTreeMap<u32, u64>> = HashMap::new();
    let mut seen = vec![false; vocab.len()];
    for seq in sequences(c, config.block_size) {
        let ids: Vec<u32> = seq.iter().map(|t| vocab.intern(t)).collect();
        if seen.len() < vocab.len() {
            seen.resize(vocab.len(), false);
        }
        for &id in &ids {
            seen[id as usize] = true;
        }
        for i in 1..ids.len() {
            for k in 0..config.order.min(i + 1) {
                let ctx = ids[i - k..i].to_vec();
                *raw.entry(ctx).or_default().entry(ids[i]).or_insert(0) += 1;
            }
        }
    }
    let mut members = vec![false; vocab.len()];
    for (m, s) in members.iter_mut().zip(&seen) {
        *m = *s;
    }
    for id in [BOS_ID, EOS_ID, NL_ID] {
        members[id as usize] = true;
    }
    CountTable::from_counts(members, raw, config.discount)
}

/// Trains an n-gram model with the default discount and block size.
pub fn train_ngram(c: &MonoCorpus, order: usize) -> Result<NgramModel> {
    train_ngram_with(c, NgramConfig::with_order(order))
}

pub fn train_ngram_with(c: &MonoCorpus, config: NgramConfig) -> Result<NgramModel> {
    config.validate()?;
    if c.is_empty() {
        return Err(Error::Training("cannot train a language model on an empty corpus".into()));
    }
    let mut vocab = Vocab::with_reserved();
    let table = count_table(c, &config, &mut vocab);
    Ok(NgramModel {
        config,
        vocab,
        components: vec![Component { weight: 1.0, table }],
    })
}

/// Interpolates `base` with a model of the same configuration trained on
/// `in_domain`: `P = λ P_dom + (1 - λ) P_base`.
pub fn finetune(base: &NgramModel, in_domain: &MonoCorpus, lambda: f64) -> Result<NgramModel> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::argument(format!("lambda {lambda} is outside [0, 1]")));
    }
    if in_domain.is_empty() {
        return Err(Error::Training("cannot fine-tune on an empty corpus".into()));
    }
    let mut vocab = base.vocab.clone();
    let dom = count_table(in_domain, &base.config, &mut vocab);
    let mut components: Vec<Component> = base
        .components
        .iter()
        .map(|c| {
            let mut table = c.table.clone();
            table.extend_vocab(vocab.len());
            Component { weight: (1.0 - lambda) * c.weight, table }
        })
        .collect();
    components.push(Component { weight: lambda, table: dom });
    Ok(NgramModel {
        config: base.config,
        vocab,
        components,
    })
}

/// Log-probability summary of scored text.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Score {
    /// Sum of natural-log probabilities over scored tokens.
    pub log_prob: f64,
    /// Scored tokens, `</s>` included.
    pub tokens: usize,
    /// Tokens outside the vocabulary; skipped.
    pub oov: usize,
}

impl Score {
    /// Average negative log-probability per token, in nats.
    pub fn cross_entropy(&self) -> f64 {
        -self.log_prob / self.tokens as f64
    }

    pub fn perplexity(&self) -> f64 {
        self.cross_entropy().exp()
    }
}

impl NgramModel {
    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn discount(&self) -> f64 {
        self.config.discount
    }

    /// All known tokens, reserved ones included.
    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.vocab.tokens.iter().map(String::as_str)
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.vocab.get(tok).is_some()
    }

    /// Component weights, base tables first.
    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Contexts with observations, as token lists.
    pub fn observed_contexts(&self) -> Vec<Vec<&str>> {
        let mut ctxs: Vec<&Vec<u32>> = self.components.iter().flat_map(|c| c.table.contexts.keys()).collect();
        ctxs.sort_unstable();
        ctxs.dedup();
        ctxs.into_iter()
            .map(|c| c.iter().map(|&id| self.vocab.tokens[id as usize].as_str()).collect())
            .collect()
    }

    fn ids(&self, toks: &[&str]) -> Vec<u32> {
        toks.iter().map(|t| self.vocab.get(t).unwrap_or(UNSEEN_ID)).collect()
    }

    /// `P(w | history)`; the history is truncated to the model order.
    /// Unknown `w` has probability zero.
    pub fn prob(&self, history: &[&str], w: &str) -> f64 {
        let Some(w) = self.vocab.get(w) else { return 0.0 };
        let h = self.ids(history);
        self.components
            .iter()
            .map(|c| c.weight * c.table.prob(&h, w, self.config.order, self.config.discount))
            .sum()
    }

    /// `P(· | history)` over the vocabulary, indexed like [`NgramModel::vocab`].
    pub fn distribution(&self, history: &[&str]) -> Vec<f64> {
        let h = self.ids(history);
        let mut out = vec![0.0; self.vocab.len()];
        let mut scratch = Vec::new();
        self.fill_distribution(&h, &mut scratch, &mut out);
        out
    }

    fn fill_distribution(&self, h: &[u32], scratch: &mut Vec<f64>, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for c in &self.components {
            if c.weight > 0.0 {
                c.table.accumulate(h, self.config.order, self.config.discount, c.weight, scratch, out);
            }
        }
    }

    /// Scores each line as `<s> line </s>`.
    pub fn score<'a, I: IntoIterator<Item = &'a str>>(&self, lines: I) -> Score {
        let mut score = Score::default();
        for line in lines {
            let mut history = vec![BOS_ID];
            let toks = line.split_whitespace().map(|t| self.vocab.get(t)).chain([Some(EOS_ID)]);
            for id in toks {
                match id {
                    Some(id) => {
                        let p: f64 = self
                            .components
                            .iter()
                            .map(|c| c.weight * c.table.prob(&history, id, self.config.order, self.config.discount))
                            .sum();
                        score.log_prob += p.ln();
                        score.tokens += 1;
                        history.push(id);
                    }
                    None => {
                        score.oov += 1;
                        history.push(UNSEEN_ID);
                    }
                }
            }
        }
        score
    }

    pub fn perplexity(&self, corpus: &MonoCorpus) -> f64 {
        self.score(corpus.iter()).perplexity()
    }

    fn sample_sequence(&self, params: &GenerationParams, stream: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(stream);
        let mut history = vec![BOS_ID];
        history.extend(self.ids(&params.prompt.iter().map(String::as_str).collect::<Vec<_>>()));
        let mut out: Vec<String> = params.prompt.clone();
        let mut dist = vec![0.0; self.vocab.len()];
        let mut scratch = Vec::new();
        let mut candidates: Vec<u32> = Vec::with_capacity(self.vocab.len());
        let keep = self.config.order.saturating_sub(1);
        for _ in 0..params.max_tokens {
            let start = history.len().saturating_sub(keep);
            self.fill_distribution(&history[start..], &mut scratch, &mut dist);
            let next = sample(&dist, params.temperature, params.top_k, &mut candidates, &mut rng);
            if next == EOS_ID {
                break;
            }
            out.push(self.vocab.tokens[next as usize].clone());
            history.push(next);
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let NgramConfig { order, discount, block_size } = self.config;
        writeln!(
            w,
            "ngram-model order={order} discount={discount:?} block={block_size} vocab={} components={}",
            self.vocab.len(),
            self.components.len()
        )?;
        for t in &self.vocab.tokens {
            writeln!(w, "{t}")?;
        }
        for c in &self.components {
            let members: Vec<String> = c
                .table
                .members
                .iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(i, _)| i.to_string())
                .collect();
            let mut ctxs: Vec<(&Vec<u32>, &ContextCounts)> = c.table.contexts.iter().collect();
            ctxs.sort_unstable_by(|a, b| a.0.cmp(b.0));
            let entries: usize = ctxs.iter().map(|(_, cc)| cc.next.len()).sum();
            writeln!(w, "component weight={:?} entries={entries}", c.weight)?;
            writeln!(w, "{}", members.join(" "))?;
            for (ctx, cc) in ctxs {
                let ctx: Vec<String> = ctx.iter().map(u32::to_string).collect();
                let ctx = ctx.join(" ");
                for (t, n) in &cc.next {
                    writeln!(w, "{ctx}\t{t}\t{n}")?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let lines = crate::corpus::read_lines(reader)?;
        let mut offset = 0usize;
        let mut it = lines.iter();
        let err = |offset: usize, message: String| Error::Parse {
            what: "n-gram model".into(),
            offset,
            message,
        };
        let mut next_line = |offset: &mut usize| -> Result<&String> {
            let line = it.next().ok_or_else(|| err(*offset, "unexpected end of file".into()))?;
            *offset += line.len() + 1;
            Ok(line)
        };

        let header = next_line(&mut offset)?;
        let fields = parse_fields(header, "ngram-model").ok_or_else(|| err(0, format!("bad header {header:?}")))?;
        let get = |k: &str| fields.get(k).ok_or_else(|| err(0, format!("header lacks `{k}`")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| err(0, format!("bad `{k}`"))) };
        let config = NgramConfig {
            order: num("order")?,
            discount: get("discount")?.parse().map_err(|_| err(0, "bad `discount`".into()))?,
            block_size: num("block")?,
        };
        config.validate().map_err(|e| err(0, e.to_string()))?;
        let vocab_len = num("vocab")?;
        let n_components = num("components")?;

        let mut vocab = Vocab::default();
        for _ in 0..vocab_len {
            let at = offset;
            let t = next_line(&mut offset)?;
            if t.is_empty() || t.contains(char::is_whitespace) || vocab.get(t).is_some() {
                return Err(err(at, format!("bad vocabulary entry {t:?}")));
            }
            vocab.intern(t);
        }
        if vocab.tokens.get(..3) != Some(&[BOS.to_string(), EOS.to_string(), NEWLINE.to_string()][..]) {
            return Err(err(offset, "vocabulary must start with the reserved tokens".into()));
        }

        let mut components = Vec::with_capacity(n_components);
        for _ in 0..n_components {
            let at = offset;
            let head = next_line(&mut offset)?;
            let f = parse_fields(head, "component").ok_or_else(|| err(at, format!("bad component header {head:?}")))?;
            let weight: f64 = f
                .get("weight")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(at, "bad component weight".into()))?;
            let entries: usize = f
                .get("entries")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(at, "bad component entries".into()))?;
            let at = offset;
            let member_line = next_line(&mut offset)?;
            let mut members = vec![false; vocab_len];
            for id in member_line.split_whitespace() {
                let id: usize = id.parse().map_err(|_| err(at, format!("bad member id {id:?}")))?;
                *members.get_mut(id).ok_or_else(|| err(at, format!("member id {id} out of range")))? = true;
            }
            let mut raw: HashMap<Vec<u32>, BTreeMap<u32, u64>> = HashMap::new();
            for _ in 0..entries {
                let at = offset;
                let line = next_line(&mut offset)?;
                let parsed = (|| {
                    let mut cols = line.split('\t');
                    let ctx = cols.next()?;
                    let t: u32 = cols.next()?.parse().ok()?;
                    let n: u64 = cols.next()?.parse().ok()?;
                    let ctx: Option<Vec<u32>> = ctx.split_whitespace().map(|s| s.parse().ok()).collect();
                    let ctx = ctx?;
                    let in_range = |id: u32| (id as usize) < vocab_len;
                    (cols.next().is_none() && n > 0 && in_range(t) && ctx.iter().all(|&i| in_range(i)) && ctx.len() < config.order)
                        .then_some((ctx, t, n))
                })();
                let (ctx, t, n) = parsed.ok_or_else(|| err(at, format!("bad count entry {line:?}")))?;
                raw.entry(ctx).or_default().insert(t, n);
            }
            components.push(Component {
                weight,
                table: CountTable::from_counts(members, raw, config.discount),
            });
        }
        if it.next().is_some() {
            return Err(err(offset, "trailing data".into()));
        }
        Ok(NgramModel { config, vocab, components })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::path(path, e))?;
        self.write_to(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::path(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

fn parse_fields<'a>(line: &'a str, tag: &str) -> Option<HashMap<&'a str, &'a str>> {
    let mut parts = line.split(' ');
    if parts.next()? != tag {
        return None;
    }
    parts.map(|p| p.split_once('=')).collect()
}

/// Draws one token: temperature scaling, top-k truncation, renormalization.
/// Ties in probability are ordered by token id so draws are reproducible.
fn sample(dist: &[f64], temperature: f64, top_k: usize, candidates: &mut Vec<u32>, rng: &mut ChaCha8Rng) -> u32 {
    candidates.clear();
    candidates.extend(dist.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(i, _)| i as u32));
    let by_prob = |a: &u32, b: &u32| {
        dist[*b as usize]
            .partial_cmp(&dist[*a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    if candidates.len() > top_k {
        candidates.select_nth_unstable_by(top_k - 1, by_prob);
        candidates.truncate(top_k);
    }
    candidates.sort_unstable_by(by_prob);
    let Some(&best) = candidates.first() else { return EOS_ID };
    let log_max = dist[best as usize].ln();
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&i| ((dist[i as usize].ln() - log_max) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng.gen::<f64>() * total;
    for (&id, w) in candidates.iter().zip(&weights) {
        if r < *w {
            return id;
        }
        r -= w;
    }
    *candidates.last().expect("nonempty")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_k: usize,
    /// Generated tokens per sequence, prompt excluded.
    pub max_tokens: usize,
    pub n_sequences: usize,
    pub seed: u64,
    pub prompt: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 1.0,
            top_k: 40,
            max_tokens: 256,
            n_sequences: 1,
            seed: 0,
            prompt: Vec::new(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::argument(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.top_k == 0 {
            return Err(Error::argument("top_k must be at least 1"));
        }
        if self.max_tokens == 0 {
            return Err(Error::argument("max_tokens must be at least 1"));
        }
        if let Some(t) = self.prompt.iter().find(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(Error::argument(format!("prompt token {t:?} is not a single token")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub fine_tunable: bool,
    pub remote: bool,
}

/// Something that samples token sequences.
pub trait GeneratorBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Returns exactly `params.n_sequences` sequences. Each starts with the
    /// prompt tokens and may contain `<nl>` line separators.
    fn generate(&self, params: &GenerationParams) -> Result<Vec<Vec<String>>>;

    /// One sequence per prompt, `prompts[i]` taking the place of
    /// `params.prompt` and `params.n_sequences`. The default groups equal
    /// prompts into one [`generate`](GeneratorBackend::generate) call each.
    fn generate_prompted(&self, params: &GenerationParams, prompts: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        let mut groups: BTreeMap<&[String], Vec<usize>> = BTreeMap::new();
        for (i, p) in prompts.iter().enumerate() {
            groups.entry(p.as_slice()).or_default().push(i);
        }
        let mut out = vec![Vec::new(); prompts.len()];
        for (prompt, idx) in groups {
            let p = GenerationParams {
                prompt: prompt.to_vec(),
                n_sequences: idx.len(),
                ..params.clone()
            };
            for (i, seq) in idx.into_iter().zip(self.generate(&p)?) {
                out[i] = seq;
            }
        }
        Ok(out)
    }
}

impl GeneratorBackend for NgramModel {
    fn capabilities(&self) -> Capabilities {
        Capabilities { fine_tunable: true, remote: false }
    }

    /// Sequence `i` draws from its own random stream `(seed, i)`, so output
    /// does not depend on how the work is spread over threads.
    fn generate(&self, params: &GenerationParams) -> Result<Vec<Vec<String>>> {
        params.validate()?;
        Ok((0..params.n_sequences)
            .into_par_iter()
            .map(|i| self.sample_sequence(params, i as u64))
            .collect())
    }

    /// Sequence `i` uses `prompts[i]` and the random stream `i`.
    fn generate_prompted(&self, params: &GenerationParams, prompts: &[Vec<String>]) -> Result<Vec<Vec<String>>> {
        params.validate()?;
        for p in prompts {
            GenerationParams { prompt: p.clone(), ..GenerationParams::default() }.validate()?;
        }
        Ok(prompts
            .par_iter()
            .enumerate()
            .map(|(i, prompt)| {
                let p = GenerationParams {
                    prompt: prompt.clone(),
                    ..params.clone()
                };
                self.sample_sequence(&p, i as u64)
            })
            .collect())
    }
}

/// Client for a remote generation service (`POST /generate`).
#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    pub url: String,
    pub retry: RetryPolicy,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    n_sequences: usize,
    max_tokens: usize,
    temperature: f64,
    top_k: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    sequences: Vec<String>,
}

impl RemoteGenerator {
    pub fn new(url: impl Into<String>) -> Self {
        RemoteGenerator {
            url: url.into(),
            retry: RetryPolicy::default(),
        }
    }
}

/// Splits service output into tokens, mapping line breaks to `<nl>`.
pub fn tokens_from_text(text: &str) -> Vec<String> {
    text.split('\n')
        .enumerate()
        .flat_map(|(i, line)| {
            let nl = (i > 0).then(|| NEWLINE.to_string());
            nl.into_iter().chain(line.split_whitespace().map(String::from))
        })
        .collect()
}

impl GeneratorBackend for RemoteGenerator {
    fn capabilities(&self) -> Capabilities {
        Capabilities { fine_tunable: false, remote: true }
    }

    /// Sequences that do not echo the prompt get it prepended.
    fn generate(&self, params: &GenerationParams) -> Result<Vec<Vec<String>>> {
        params.validate()?;
        if params.n_sequences == 0 {
            return Ok(Vec::new());
        }
        let prompt = params.prompt.join(" ");
        let req = GenerateRequest {
            prompt: &prompt,
            n_sequences: params.n_sequences,
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            top_k: params.top_k,
        };
        let url = http::endpoint(&self.url, "generate");
        let resp: GenerateResponse = http::post_json(&url, &req, &self.retry)?;
        if resp.sequences.len() != params.n_sequences {
            return Err(Error::Transport {
                attempts: 1,
                message: format!("{url} returned {} sequences, expected {}", resp.sequences.len(), params.n_sequences),
                untranslated: Vec::new(),
            });
        }
        Ok(resp
            .sequences
            .iter()
            .map(|s| {
                let toks = tokens_from_text(s);
                if toks.starts_with(&params.prompt) {
                    toks
                } else {
                    params.prompt.iter().cloned().chain(toks).collect()
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtractStats {
    pub lines: usize,
    pub empty: usize,
    pub overlong: usize,
}

/// Splits sequences on `<nl>` into sentences, dropping empty lines and lines
/// of more than `max_tokens` tokens.
pub fn extract_lines(sequences: &[Vec<String>], max_tokens: usize, lang: &str, domain: &str) -> (MonoCorpus, ExtractStats) {
    let mut corpus = MonoCorpus::new(lang, domain, Provenance::Generated);
    let mut stats = ExtractStats::default();
    for seq in sequences {
        for line in seq.split(|t| t == NEWLINE) {
            let toks: Vec<&str> = line.iter().map(String::as_str).filter(|t| *t != BOS && *t != EOS).collect();
            if toks.is_empty() {
                stats.empty += 1;
            } else if toks.len() > max_tokens {
                stats.overlong += 1;
            } else {
                let s = Sentence::new(toks.join(" ")).expect("tokens are nonempty and whitespace-free");
                corpus.sentences.push(s);
                stats.lines += 1;
            }
        }
    }
    (corpus, stats)
}
