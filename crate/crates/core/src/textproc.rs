//! Rule-based tokenization and truecasing in the style of the Moses scripts.
//!
//! The tokenizer implements a documented subset of the Moses rules:
//!
//! * runs of whitespace collapse to token boundaries;
//! * every character that is not alphanumeric, a combining mark, `.`, `-`,
//!   `,` or `'` becomes its own token;
//! * commas split unless they sit between two digits (`1,000` stays whole);
//! * apostrophes follow the language: English splits before them
//!   (`don't` -> `don 't`, `1990's` -> `1990 's`), French splits after them
//!   (`l'avenir` -> `l' avenir`), German separates them on both sides;
//! * a token-final period splits off unless the word is an abbreviation
//!   (`U.S.`) or a listed non-breaking prefix (`Mr.`); runs of two or more
//!   periods form one token (`...`);
//! * hyphens never split.
//!
//! Japanese text is left untouched: it is segmented by the raw subword model
//! instead, and evaluation runs on the raw text.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use unicode_normalization::char::is_combining_mark;

use crate::corpus::MonoCorpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokLang {
    En,
    Fr,
    De,
    Ja,
}

impl TokLang {
    pub fn parse(code: &str) -> Result<Self> {
        match code {
            "en" => Ok(TokLang::En),
            "fr" => Ok(TokLang::Fr),
            "de" => Ok(TokLang::De),
            "ja" => Ok(TokLang::Ja),
            other => Err(Error::UnsupportedLanguage(other.to_string())),
        }
    }

    fn nonbreaking(self, word: &str) -> bool {
        let list: &[&str] = match self {
            TokLang::En => &["Mr", "Mrs", "Ms", "Dr", "Prof", "Sr", "Jr", "St", "Mt", "vs", "etc", "Inc", "Ltd", "Co", "Corp"],
            TokLang::Fr => &["M", "Mme", "Mlle", "MM", "Dr", "Pr", "etc", "cf", "p"],
            TokLang::De => &["Hr", "Fr", "Dr", "Prof", "usw", "bzw", "Nr", "St", "ca", "vgl"],
            TokLang::Ja => &[],
        };
        let mut chars = word.chars();
        let single_capital = matches!((chars.next(), chars.next()), (Some(c), None) if c.is_uppercase());
        single_capital || list.contains(&word)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c) || c == '.' || c == '-'
}

/// Splits `text` into tokens.
pub fn tokenize(text: &str, lang: &str) -> Result<Vec<String>> {
    let lang = TokLang::parse(lang)?;
    if lang == TokLang::Ja {
        return Ok(if text.trim().is_empty() { Vec::new() } else { vec![text.to_string()] });
    }

    let chars: Vec<char> = text.chars().collect();
    let mut raw: Vec<String> = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, out: &mut Vec<String>| {
        if !cur.is_empty() {
            out.push(std::mem::take(cur));
        }
    };

    for (i, &c) in chars.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        let alpha = |o: Option<char>| o.is_some_and(char::is_alphabetic);
        let digit = |o: Option<char>| o.is_some_and(|c| c.is_numeric());

        if c.is_whitespace() {
            flush(&mut cur, &mut raw);
        } else if is_word_char(c) {
            cur.push(c);
        } else if c == ',' && digit(prev) && digit(next) {
            cur.push(c);
        } else if c == '\'' {
            match lang {
                TokLang::En if (alpha(prev) && alpha(next)) || (digit(prev) && next == Some('s')) => {
                    flush(&mut cur, &mut raw);
                    cur.push(c);
                }
                TokLang::Fr if alpha(prev) && alpha(next) => {
                    cur.push(c);
                    flush(&mut cur, &mut raw);
                }
                _ => {
                    flush(&mut cur, &mut raw);
                    raw.push(c.to_string());
                }
            }
        } else {
            flush(&mut cur, &mut raw);
            raw.push(c.to_string());
        }
    }
    flush(&mut cur, &mut raw);

    let mut out = Vec::with_capacity(raw.len() + 2);
    for tok in raw {
        split_periods(&tok, lang, &mut out);
    }
    Ok(out)
}

/// Separates multi-period runs and token-final periods.
fn split_periods(tok: &str, lang: TokLang, out: &mut Vec<String>) {
    if !tok.contains('.') || tok.chars().all(|c| c == '.') {
        out.push(tok.to_string());
        return;
    }
    // Cut out runs of two or more periods.
    let mut pieces: Vec<String> = Vec::new();
    let mut rest = tok;
    while let Some(start) = rest.find("..") {
        let run = rest[start..].chars().take_while(|&c| c == '.').count();
        if start > 0 {
            pieces.push(rest[..start].to_string());
        }
        pieces.push(rest[start..start + run].to_string());
        rest = &rest[start + run..];
    }
    if !rest.is_empty() {
        pieces.push(rest.to_string());
    }

    for piece in pieces {
        match piece.strip_suffix('.') {
            Some(pre) if !pre.is_empty() && !pre.ends_with('.') => {
                let abbreviation = pre.contains('.') && pre.chars().any(char::is_alphabetic);
                if abbreviation || lang.nonbreaking(pre) {
                    out.push(piece);
                } else {
                    out.push(pre.to_string());
                    out.push(".".to_string());
                }
            }
            _ => out.push(piece),
        }
    }
}

fn all_in(tok: &str, set: &str) -> bool {
    !tok.is_empty() && tok.chars().all(|c| set.contains(c))
}

/// Joins tokens back into text, inverting the spacing rules of [`tokenize`].
///
/// Japanese tokens are joined with single spaces, which is the identity on the
/// one-token output of [`tokenize`].
pub fn detokenize<S: AsRef<str>>(tokens: &[S], lang: &str) -> Result<String> {
    let lang = TokLang::parse(lang)?;
    if lang == TokLang::Ja {
        return Ok(tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" "));
    }
    let mut out = String::new();
    let mut glue_next = false;
    let mut double_open = false;
    let mut single_open = false;
    for tok in tokens.iter().map(AsRef::as_ref) {
        let mut attach_left = false;
        let mut attach_right = false;
        if all_in(tok, ".,!?;:%)]}") {
            attach_left = true;
        } else if all_in(tok, "([{$£€¿¡") {
            attach_right = true;
        } else if tok == "\"" {
            attach_right = !double_open;
            attach_left = double_open;
            double_open = !double_open;
        } else if tok == "'" {
            attach_right = !single_open;
            attach_left = single_open;
            single_open = !single_open;
        } else if lang == TokLang::En && tok.starts_with('\'') && tok[1..].starts_with(char::is_alphabetic) {
            attach_left = out.ends_with(|c: char| c.is_alphanumeric());
        } else if lang == TokLang::Fr && tok.ends_with('\'') && tok.starts_with(char::is_alphabetic) {
            attach_right = true;
        }
        if !out.is_empty() && !attach_left && !glue_next {
            out.push(' ');
        }
        out.push_str(tok);
        glue_next = attach_right;
    }
    Ok(out)
}

/// Surface-form statistics for restoring the natural casing of tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TruecaseModel {
    /// lowercased token -> surface form -> weighted count
    forms: BTreeMap<String, BTreeMap<String, u64>>,
    total_tokens: u64,
}

impl TruecaseModel {
    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    /// Most frequent surface form of `token`'s lowercase; ties go to the
    /// lexicographically smallest form.
    pub fn best_form(&self, token: &str) -> Option<&str> {
        let counts = self.forms.get(&token.to_lowercase())?;
        let mut best: Option<(&String, u64)> = None;
        for (form, &n) in counts {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((form, n));
            }
        }
        best.map(|(f, _)| f.as_str())
    }

    pub fn count(&self, surface: &str) -> u64 {
        self.forms
            .get(&surface.to_lowercase())
            .and_then(|m| m.get(surface))
            .copied()
            .unwrap_or(0)
    }

    fn add(&mut self, surface: &str, n: u64) {
        *self
            .forms
            .entry(surface.to_lowercase())
            .or_default()
            .entry(surface.to_string())
            .or_insert(0) += n;
        self.total_tokens += n;
    }

    /// One `surface<TAB>count` line per form, sorted by lowercase key.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for counts in self.forms.values() {
            for (form, n) in counts {
                writeln!(w, "{form}\t{n}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut model = TruecaseModel::default();
        let mut offset = 0;
        for line in crate::corpus::read_lines(reader)? {
            let parsed = line
                .rsplit_once('\t')
                .and_then(|(form, n)| Some((form, n.parse::<u64>().ok()?)))
                .filter(|(form, n)| !form.is_empty() && *n > 0);
            match parsed {
                Some((form, n)) => model.add(form, n),
                None if line.is_empty() => {}
                None => {
                    return Err(Error::Parse {
                        what: "truecase model".into(),
                        offset,
                        message: format!("expected `surface<TAB>count`, found {line:?}"),
                    })
                }
            }
            offset += line.len() + 1;
        }
        Ok(model)
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

/// Counts surface forms over a tokenized corpus. Sentence-initial tokens
/// carry no weight.
pub fn train_truecaser(c: &MonoCorpus) -> TruecaseModel {
    let mut model = TruecaseModel::default();
    for s in &c.sentences {
        for tok in s.tokens().skip(1) {
            model.add(tok, 1);
        }
    }
    model
}

/// Rewrites the first token to its best form; all others pass through.
pub fn truecase<S: AsRef<str>>(m: &TruecaseModel, tokens: &[S]) -> Vec<String> {
    let mut out: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
    if let Some(first) = out.first_mut() {
        if let Some(best) = m.best_form(first) {
            *first = best.to_string();
        }
    }
    out
}

/// Uppercases the first alphabetic character of the sentence, found in the
/// first token that has one (so leading quotes or brackets are skipped).
pub fn detruecase<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut out: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
    if let Some(tok) = out.iter_mut().find(|t| t.chars().any(char::is_alphabetic)) {
        let (i, c) = tok.char_indices().find(|(_, c)| c.is_alphabetic()).expect("has a letter");
        let upper: String = c.to_uppercase().collect();
        tok.replace_range(i..i + c.len_utf8(), &upper);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;
    use proptest::prelude::*;

    fn tok(text: &str, lang: &str) -> Vec<String> {
        tokenize(text, lang).unwrap()
    }

    #[test]
    fn tokenize_basic() {
        assert_eq!(tok("Hello, world!", "en"), ["Hello", ",", "world", "!"]);
        assert!(tok("", "en").is_empty());
        assert_eq!(tok("abc", "en"), ["abc"]);
        assert_eq!(tok("  a \t  b  ", "de"), ["a", "b"]);
    }

    #[test]
    fn tokenize_apostrophes_by_language() {
        assert_eq!(tok("I don't know", "en"), ["I", "don", "'t", "know"]);
        assert_eq!(tok("the 1990's", "en"), ["the", "1990", "'s"]);
        assert_eq!(tok("l'avenir", "fr"), ["l'", "avenir"]);
        assert_eq!(tok("geht's", "de"), ["geht", "'", "s"]);
        assert_eq!(tok("'quoted'", "en"), ["'", "quoted", "'"]);
    }

    #[test]
    fn tokenize_numbers_periods_hyphens() {
        assert_eq!(tok("It costs 1,000.50 dollars.", "en"), ["It", "costs", "1,000.50", "dollars", "."]);
        assert_eq!(tok("a, b", "en"), ["a", ",", "b"]);
        assert_eq!(tok("Mr. Smith left the U.S.", "en"), ["Mr.", "Smith", "left", "the", "U.S."]);
        assert_eq!(tok("wait... what", "en"), ["wait", "...", "what"]);
        assert_eq!(tok("a well-known fact", "en"), ["a", "well-known", "fact"]);
        assert_eq!(tok("(see \"this\")", "en"), ["(", "see", "\"", "this", "\"", ")"]);
    }

    #[test]
    fn japanese_bypasses_tokenization() {
        assert_eq!(tok("東京タワー、すごい。", "ja"), ["東京タワー、すごい。"]);
        assert_eq!(detokenize(&["東京タワー、すごい。"], "ja").unwrap(), "東京タワー、すごい。");
    }

    #[test]
    fn unsupported_language() {
        assert!(matches!(tokenize("x", "xx"), Err(Error::UnsupportedLanguage(_))));
        assert!(matches!(detokenize(&["x"], "xx"), Err(Error::UnsupportedLanguage(_))));
    }

    #[test]
    fn detokenize_examples() {
        assert_eq!(detokenize(&["Hello", ",", "world", "!"], "en").unwrap(), "Hello, world!");
        assert_eq!(detokenize::<&str>(&[], "en").unwrap(), "");
        assert_eq!(detokenize(&["don", "'t"], "en").unwrap(), "don't");
        assert_eq!(detokenize(&["l'", "avenir"], "fr").unwrap(), "l'avenir");
        assert_eq!(
            detokenize(&["he", "said", "\"", "hi", "\"", "(", "twice", ")", "."], "en").unwrap(),
            "he said \"hi\" (twice)."
        );
    }

    fn tokenized(lines: &[&str]) -> MonoCorpus {
        MonoCorpus::from_lines("en", "t", Provenance::Human, lines.iter().copied()).unwrap()
    }

    #[test]
    fn truecaser_ignores_sentence_initial() {
        let m = train_truecaser(&tokenized(&["the cat", "see The Hague"]));
        assert_eq!(m.best_form("the"), Some("The"));
        assert_eq!(m.best_form("see"), None);
        assert_eq!(m.total_tokens(), 3);
        assert!(train_truecaser(&tokenized(&[])).is_empty());
    }

    #[test]
    fn truecaser_majority_form() {
        let mut lines = vec!["in Paris"; 5];
        lines.extend(["to paris"; 2]);
        let m = train_truecaser(&tokenized(&lines));
        assert_eq!(m.count("Paris"), 5);
        assert_eq!(m.count("paris"), 2);
        assert_eq!(m.best_form("PARIS"), Some("Paris"));
    }

    #[test]
    fn truecaser_ties_break_lexicographically() {
        let m = train_truecaser(&tokenized(&["x Apple", "x apple"]));
        assert_eq!(m.best_form("apple"), Some("Apple"));
    }

    #[test]
    fn truecase_first_token_only() {
        let m = train_truecaser(&tokenized(&["a the", "b the"]));
        assert_eq!(truecase(&m, &["The", "cat"]), ["the", "cat"]);
        assert!(truecase::<&str>(&m, &[]).is_empty());
        assert_eq!(truecase(&m, &["Xyzzy", "runs"]), ["Xyzzy", "runs"]);
        assert_eq!(truecase(&m, &["The", "The"]), ["the", "The"]);
    }

    #[test]
    fn detruecase_examples() {
        assert_eq!(detruecase(&["the", "cat"]), ["The", "cat"]);
        assert!(detruecase::<&str>(&[]).is_empty());
        assert_eq!(detruecase(&["\"hello\""]), ["\"Hello\""]);
        assert_eq!(detruecase(&["\"", "hello"]), ["\"", "Hello"]);
        assert_eq!(detruecase(&["straße"]), ["Straße"]);
    }

    #[test]
    fn truecase_model_file_round_trip() {
        let m = train_truecaser(&tokenized(&["x The", "x the", "x the", "y Zeta"]));
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "The\t1\nthe\t2\nZeta\t1\n");
        assert_eq!(TruecaseModel::read_from(&buf[..]).unwrap(), m);
        assert!(matches!(
            TruecaseModel::read_from("ok\t1\nbroken\n".as_bytes()),
            Err(Error::Parse { offset: 5, .. })
        ));
    }

    const PUNCT: &[&str] = &[",", ".", "!", "?", ";", ":"];

    /// Token sequences a well-formed sentence would produce: words, with
    /// trailing punctuation, contractions, bracketed and quoted spans.
    fn clean_tokens() -> impl Strategy<Value = Vec<String>> {
        let word = "[a-z]{2,6}".prop_filter("prefix", |w| w != "etc" && w != "vs");
        let unit = (word, 0usize..8, 0usize..6).prop_map(|(w, kind, p)| {
            let mut v = match kind {
                0 => vec!["(".to_string(), w, ")".to_string()],
                1 => vec!["\"".to_string(), w, "\"".to_string()],
                2 => vec![w, "'t".to_string()],
                3 => vec![w.to_uppercase()],
                _ => vec![w],
            };
            if p < PUNCT.len() && kind != 2 {
                v.push(PUNCT[p].to_string());
            }
            v
        });
        proptest::collection::vec(unit, 1..8).prop_map(|units| units.concat())
    }

    proptest! {
        #[test]
        fn tokenize_inverts_detokenize(tokens in clean_tokens()) {
            let text = detokenize(&tokens, "en").unwrap();
            prop_assert_eq!(tokenize(&text, "en").unwrap(), tokens);
        }

        #[test]
        fn tokens_are_never_empty(text in "\\PC{0,40}") {
            for t in tokenize(&text, "en").unwrap() {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.contains(char::is_whitespace));
            }
        }

        #[test]
        fn detruecase_capitalizes(tokens in proptest::collection::vec("[a-z,.\"(]{1,5}", 1..6)) {
            let out = detruecase(&tokens);
            if let Some(c) = out.concat().chars().find(|c| c.is_alphabetic()) {
                prop_assert!(c.is_uppercase());
            }
        }

        #[test]
        fn truecase_only_touches_first_token(
            corpus in proptest::collection::vec("[a-cA-C]{1,3}( [a-cA-C]{1,3}){0,4}", 1..20),
            sentence in proptest::collection::vec("[a-cA-C]{1,3}", 1..6),
        ) {
            let m = train_truecaser(&MonoCorpus::from_lines("en", "t", Provenance::Human, corpus).unwrap());
            let out = truecase(&m, &sentence);
            prop_assert_eq!(&out[1..], &sentence[1..]);
            prop_assert_eq!(out[0].to_lowercase(), sentence[0].to_lowercase());
        }
    }
}
