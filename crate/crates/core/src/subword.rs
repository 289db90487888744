//! Byte-pair-encoding subword segmentation in two flavours.
//!
//! * [`SubwordMode::TokenBpe`] works on tokenized text. Each word ends in an
//!   internal `</w>` sentinel while learning, and every non-final piece of a
//!   segmented word carries the `@@` continuation marker.
//! * [`SubwordMode::RawBpe`] works on raw text. Words are the spans between
//!   single spaces and start with the `▁` (U+2581) boundary symbol, so the
//!   original spacing can be restored exactly.
//!
//! Tokens of the form `<...>` (tags such as `<BT>` or `<spk:ID>`) are never
//! split or merged.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::MonoCorpus;
use crate::error::{Error, Result};

pub const CONTINUATION_MARKER: &str = "@@";
pub const END_OF_WORD: &str = "</w>";
pub const BOUNDARY: char = '\u{2581}';

/// Merge count used for space-delimited languages.
pub const DEFAULT_TOKEN_MERGES: usize = 32_000;
/// Merge count used for raw (Japanese) text.
pub const DEFAULT_RAW_MERGES: usize = 16_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubwordMode {
    TokenBpe,
    RawBpe,
}

impl SubwordMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SubwordMode::TokenBpe => "token_bpe",
            SubwordMode::RawBpe => "raw_bpe",
        }
    }
}

impl fmt::Display for SubwordMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubwordMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token_bpe" | "token" => Ok(SubwordMode::TokenBpe),
            "raw_bpe" | "raw" => Ok(SubwordMode::RawBpe),
            other => Err(Error::argument(format!("unknown subword mode `{other}`"))),
        }
    }
}

/// Whether `word` is a reserved tag token that segmentation keeps whole.
pub fn is_reserved(word: &str) -> bool {
    word.len() >= 3 && word.starts_with('<') && word.ends_with('>') && !word.contains(char::is_whitespace)
}

type Pair = (String, String);

#[derive(Clone, PartialEq, Eq)]
pub struct SubwordModel {
    mode: SubwordMode,
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
}

impl fmt::Debug for SubwordModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubwordModel")
            .field("mode", &self.mode)
            .field("n_merges", &self.merges.len())
            .finish()
    }
}

impl SubwordModel {
    pub fn new(mode: SubwordMode, merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, pair) in merges.iter().enumerate() {
            if pair.0.is_empty() || pair.1.is_empty() || pair.0.contains(' ') || pair.1.contains(' ') {
                return Err(Error::argument(format!("invalid merge {pair:?}")));
            }
            ranks.entry(pair.clone()).or_insert(i);
        }
        Ok(SubwordModel { mode, merges, ranks })
    }

    pub fn mode(&self) -> SubwordMode {
        self.mode
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn n_merges(&self) -> usize {
        self.merges.len()
    }

    /// Every symbol named by a merge, including the merged results.
    pub fn vocab(&self) -> BTreeSet<String> {
        let mut v = BTreeSet::new();
        for (a, b) in &self.merges {
            v.insert(a.clone());
            v.insert(b.clone());
            v.insert(format!("{a}{b}"));
        }
        v
    }

    /// A model truncated to its first `k` merges.
    pub fn truncated(&self, k: usize) -> SubwordModel {
        SubwordModel::new(self.mode, self.merges[..k.min(self.merges.len())].to_vec()).expect("valid prefix")
    }

    fn initial_symbols(&self, word: &str) -> Vec<String> {
        initial_symbols(self.mode, word)
    }

    /// Segments one word by replaying merges, lowest rank first.
    fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = self.initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        if self.mode == SubwordMode::TokenBpe {
            if let Some(last) = symbols.last_mut() {
                if let Some(stripped) = last.strip_suffix(END_OF_WORD) {
                    *last = stripped.to_string();
                }
            }
        }
        symbols
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.mode, self.merges.len())?;
        for (a, b) in &self.merges {
            writeln!(w, "{a} {b}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let lines = crate::corpus::read_lines(reader)?;
        let parse_err = |offset: usize, message: String| Error::Parse {
            what: "subword model".into(),
            offset,
            message,
        };
        let header = lines.first().ok_or_else(|| parse_err(0, "missing header".into()))?;
        let (mode, n) = header
            .split_once(' ')
            .ok_or_else(|| parse_err(0, format!("bad header {header:?}")))?;
        let mode: SubwordMode = mode.parse().map_err(|_| parse_err(0, format!("bad mode {mode:?}")))?;
        let n: usize = n.parse().map_err(|_| parse_err(0, format!("bad merge count {n:?}")))?;
        let mut offset = header.len() + 1;
        let mut merges = Vec::with_capacity(n);
        for line in &lines[1..] {
            match line.split_once(' ') {
                Some((a, b)) if !a.is_empty() && !b.is_empty() && !b.contains(' ') => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => return Err(parse_err(offset, format!("bad merge line {line:?}"))),
            }
            offset += line.len() + 1;
        }
        if merges.len() != n {
            return Err(parse_err(offset, format!("header declares {n} merges, found {}", merges.len())));
        }
        SubwordModel::new(mode, merges)
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

fn initial_symbols(mode: SubwordMode, word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = Vec::with_capacity(word.len() + 1);
    if mode == SubwordMode::RawBpe {
        symbols.push(BOUNDARY.to_string());
    }
    symbols.extend(word.chars().map(String::from));
    if mode == SubwordMode::TokenBpe {
        if let Some(last) = symbols.last_mut() {
            last.push_str(END_OF_WORD);
        }
    }
    symbols
}

fn words(mode: SubwordMode, line: &str) -> Box<dyn Iterator<Item = &str> + '_> {
    match mode {
        SubwordMode::TokenBpe => Box::new(line.split_whitespace()),
        SubwordMode::RawBpe => Box::new(line.split(' ')),
    }
}

/// Learns up to `n_merges` merges by repeatedly joining the most frequent
/// adjacent pair. Ties go to the lexicographically smallest pair. Learning
/// stops early when no pair is left.
pub fn learn_subword(c: &MonoCorpus, n_merges: usize, mode: SubwordMode) -> Result<SubwordModel> {
    if c.is_empty() {
        return Err(Error::Training("cannot learn subwords from an empty corpus".into()));
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for s in &c.sentences {
        for w in words(mode, s.as_str()) {
            if !is_reserved(w) {
                *freq.entry(w).or_insert(0) += 1;
            }
        }
    }
    let mut types: Vec<(&str, u64)> = freq.into_iter().collect();
    types.sort_unstable();
    let mut vocab: Vec<(Vec<String>, u64)> = types.into_iter().map(|(w, f)| (initial_symbols(mode, w), f)).collect();

    let mut counts: HashMap<Pair, u64> = HashMap::new();
    let mut index: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, (syms, f)) in vocab.iter().enumerate() {
        for w in syms.windows(2) {
            let pair = (w[0].clone(), w[1].clone());
            *counts.entry(pair.clone()).or_insert(0) += f;
            index.entry(pair).or_default().insert(wi);
        }
    }

    let mut merges = Vec::with_capacity(n_merges.min(counts.len()));
    while merges.len() < n_merges {
        let best = counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .max_by(|(pa, na), (pb, nb)| na.cmp(nb).then_with(|| pb.cmp(pa)));
        let Some((pair, _)) = best.map(|(p, n)| (p.clone(), *n)) else { break };
        let joined = format!("{}{}", pair.0, pair.1);
        let mut affected: Vec<usize> = index.get(&pair).map(|s| s.iter().copied().collect()).unwrap_or_default();
        affected.sort_unstable();
        for wi in affected {
            let (syms, f) = &mut vocab[wi];
            let f = *f;
            if !syms.windows(2).any(|w| w[0] == pair.0 && w[1] == pair.1) {
                continue;
            }
            for w in syms.windows(2) {
                let key = (w[0].clone(), w[1].clone());
                if let Some(n) = counts.get_mut(&key) {
                    *n -= f;
                    if *n == 0 {
                        counts.remove(&key);
                    }
                }
            }
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
                    merged.push(joined.clone());
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            *syms = merged;
            for w in syms.windows(2) {
                let key = (w[0].clone(), w[1].clone());
                *counts.entry(key.clone()).or_insert(0) += f;
                index.entry(key).or_default().insert(wi);
            }
        }
        merges.push(pair);
    }
    SubwordModel::new(mode, merges)
}

/// Segments a line into pieces.
pub fn apply_subword(m: &SubwordModel, line: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in words(m.mode, line) {
        match m.mode {
            SubwordMode::TokenBpe if is_reserved(word) => out.push(word.to_string()),
            SubwordMode::RawBpe if is_reserved(word) => out.push(format!("{BOUNDARY}{word}")),
            SubwordMode::TokenBpe => {
                let pieces = m.segment_word(word);
                let last = pieces.len() - 1;
                out.extend(
                    pieces
                        .into_iter()
                        .enumerate()
                        .map(|(i, p)| if i < last { p + CONTINUATION_MARKER } else { p }),
                );
            }
            SubwordMode::RawBpe => out.extend(m.segment_word(word)),
        }
    }
    out
}

/// Restores the text that [`apply_subword`] segmented.
pub fn undo_subword<S: AsRef<str>>(mode: SubwordMode, pieces: &[S]) -> String {
    match mode {
        SubwordMode::TokenBpe => {
            let joined = pieces.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
            let joined = joined.replace("@@ ", "");
            joined.strip_suffix(CONTINUATION_MARKER).map(String::from).unwrap_or(joined)
        }
        SubwordMode::RawBpe => {
            let text: String = pieces
                .iter()
                .flat_map(|p| p.as_ref().chars())
                .map(|c| if c == BOUNDARY { ' ' } else { c })
                .collect();
            text.strip_prefix(' ').map(String::from).unwrap_or(text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;
    use proptest::prelude::*;

    fn corpus(lines: &[String]) -> MonoCorpus {
        MonoCorpus::from_lines("en", "t", Provenance::Human, lines.iter().cloned()).unwrap()
    }

    fn fixture() -> MonoCorpus {
        let mut lines = Vec::new();
        for (w, n) in [("low", 5), ("lower", 2), ("newest", 6), ("widest", 3)] {
            lines.extend(std::iter::repeat_n(w.to_string(), n));
        }
        corpus(&lines)
    }

    /// Most frequent adjacent pair by direct enumeration over every word
    /// occurrence, with the sentinel attached to the final character.
    fn brute_force_first_merge(c: &MonoCorpus) -> (Pair, u64) {
        let mut counts: Vec<(Pair, u64)> = Vec::new();
        for s in &c.sentences {
            for w in s.tokens() {
                let mut syms: Vec<String> = w.chars().map(String::from).collect();
                syms.last_mut().unwrap().push_str("</w>");
                for i in 0..syms.len() - 1 {
                    let p = (syms[i].clone(), syms[i + 1].clone());
                    match counts.iter_mut().find(|(q, _)| *q == p) {
                        Some((_, n)) => *n += 1,
                        None => counts.push((p, 1)),
                    }
                }
            }
        }
        let max = counts.iter().map(|(_, n)| *n).max().unwrap();
        let mut best: Vec<_> = counts.into_iter().filter(|(_, n)| *n == max).collect();
        best.sort();
        best.remove(0)
    }

    #[test]
    fn first_merge_matches_oracle() {
        let c = fixture();
        let (pair, n) = brute_force_first_merge(&c);
        assert_eq!(pair, ("e".to_string(), "s".to_string()));
        assert_eq!(n, 9);
        let m = learn_subword(&c, 10, SubwordMode::TokenBpe).unwrap();
        assert_eq!(m.merges()[0], pair);
    }

    #[test]
    fn learning_is_deterministic() {
        let a = learn_subword(&fixture(), 10, SubwordMode::TokenBpe).unwrap();
        let b = learn_subword(&fixture(), 10, SubwordMode::TokenBpe).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_to(&mut ba).unwrap();
        b.write_to(&mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn merged_symbols_are_concatenations() {
        let m = learn_subword(&fixture(), 20, SubwordMode::TokenBpe).unwrap();
        let known: HashSet<String> = "lowernstid".chars().flat_map(|c| [c.to_string(), format!("{c}</w>")]).collect();
        let mut seen = known;
        for (a, b) in m.merges() {
            assert!(seen.contains(a) && seen.contains(b), "merge ({a}, {b}) uses unknown symbol");
            seen.insert(format!("{a}{b}"));
        }
    }

    #[test]
    fn zero_merges_yield_characters() {
        let m = learn_subword(&fixture(), 0, SubwordMode::TokenBpe).unwrap();
        assert_eq!(apply_subword(&m, "low"), ["l@@", "o@@", "w"]);
        let r = learn_subword(&fixture(), 0, SubwordMode::RawBpe).unwrap();
        assert_eq!(apply_subword(&r, "low"), ["\u{2581}", "l", "o", "w"]);
    }

    #[test]
    fn lowest_under_fixture_model() {
        let m = learn_subword(&fixture(), 10, SubwordMode::TokenBpe).unwrap();
        // Hand replay of the learned merges on "l o w e s t</w>".
        let mut syms: Vec<String> = vec!["l", "o", "w", "e", "s", "t</w>"].into_iter().map(String::from).collect();
        for (a, b) in m.merges() {
            let mut i = 0;
            while i + 1 < syms.len() {
                if &syms[i] == a && &syms[i + 1] == b {
                    syms[i] = format!("{a}{b}");
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        let n = syms.len();
        let expected: Vec<String> = syms
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let s = s.trim_end_matches("</w>").to_string();
                if i + 1 < n { s + "@@" } else { s }
            })
            .collect();
        assert_eq!(apply_subword(&m, "lowest"), expected);
        // (e,s) (es,t</w>) (l,o) (e,w) ... leaves "w" unmerged with "lo" at 10 merges.
        assert_eq!(expected, ["lo@@", "w@@", "est"]);
    }

    #[test]
    fn whole_word_symbol_is_unmarked() {
        let m = learn_subword(&fixture(), 100, SubwordMode::TokenBpe).unwrap();
        assert_eq!(apply_subword(&m, "newest"), ["newest"]);
    }

    #[test]
    fn unknown_characters_pass_through() {
        let m = learn_subword(&fixture(), 10, SubwordMode::TokenBpe).unwrap();
        let pieces = apply_subword(&m, "lowxyz");
        assert_eq!(undo_subword(SubwordMode::TokenBpe, &pieces), "lowxyz");
        assert!(pieces.contains(&"x@@".to_string()));
    }

    #[test]
    fn tags_stay_atomic() {
        let lines = vec!["<BT> newest widest".to_string(); 5];
        let m = learn_subword(&corpus(&lines), 50, SubwordMode::TokenBpe).unwrap();
        assert!(m.vocab().iter().all(|s| !s.contains('<') || s.ends_with("</w>")));
        assert_eq!(apply_subword(&m, "<BT> newest")[0], "<BT>");
        let r = learn_subword(&corpus(&lines), 50, SubwordMode::RawBpe).unwrap();
        assert_eq!(apply_subword(&r, "<spk:a> x")[0], "\u{2581}<spk:a>");
    }

    #[test]
    fn raw_mode_marks_word_starts() {
        let c = MonoCorpus::from_lines("ja", "t", Provenance::Human, ["東京 タワー", "東京 駅"]).unwrap();
        let m = learn_subword(&c, 5, SubwordMode::RawBpe).unwrap();
        let pieces = apply_subword(&m, "東京 タワー");
        assert_eq!(pieces.iter().filter(|p| p.starts_with(BOUNDARY)).count(), 2);
        assert_eq!(undo_subword(SubwordMode::RawBpe, &pieces), "東京 タワー");
    }

    #[test]
    fn undo_examples() {
        assert_eq!(undo_subword(SubwordMode::TokenBpe, &["lo@@", "west"]), "lowest");
        assert_eq!(undo_subword::<&str>(SubwordMode::TokenBpe, &[]), "");
        assert_eq!(undo_subword::<&str>(SubwordMode::RawBpe, &[]), "");
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let c = MonoCorpus::new("en", "t", Provenance::Human);
        assert!(matches!(learn_subword(&c, 5, SubwordMode::TokenBpe), Err(Error::Training(_))));
    }

    #[test]
    fn model_file_round_trip() {
        let m = learn_subword(&fixture(), 10, SubwordMode::TokenBpe).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("token_bpe {}\ne s\n", m.n_merges())));
        assert_eq!(SubwordModel::read_from(&buf[..]).unwrap(), m);
        assert!(matches!(
            SubwordModel::read_from("token_bpe 2\na b\n".as_bytes()),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            SubwordModel::read_from("token_bpe 1\nab\n".as_bytes()),
            Err(Error::Parse { offset: 12, .. })
        ));
    }

    fn trained(mode: SubwordMode) -> SubwordModel {
        let lines: Vec<String> = ["abc cab bca", "aab bba cca", "abcabc ab ba", "cba cab"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        learn_subword(&corpus(&lines), 12, mode).unwrap()
    }

    proptest! {
        #[test]
        fn token_round_trip(words in proptest::collection::vec("[abc]{1,7}", 1..8)) {
            let line = words.join(" ");
            let m = trained(SubwordMode::TokenBpe);
            prop_assert_eq!(undo_subword(SubwordMode::TokenBpe, &apply_subword(&m, &line)), line);
        }

        #[test]
        fn raw_round_trip(line in "[abc ]{0,20}") {
            let m = trained(SubwordMode::RawBpe);
            prop_assert_eq!(undo_subword(SubwordMode::RawBpe, &apply_subword(&m, &line)), line);
        }

        #[test]
        fn more_merges_never_lengthen(line in "[abc]{1,6}( [abc]{1,6}){0,5}", k in 0usize..12) {
            for mode in [SubwordMode::TokenBpe, SubwordMode::RawBpe] {
                let m = trained(mode);
                let shorter = apply_subword(&m.truncated(k), &line).len();
                let longer = apply_subword(&m.truncated(k + 1), &line).len();
                prop_assert!(longer <= shorter);
            }
        }
    }
}
