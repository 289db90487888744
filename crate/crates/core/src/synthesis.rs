//! Synthetic parallel corpus assembly.
//!
//! Back-translated pairs get a `<BT>` tag in front of the translated source;
//! forward-translated pairs are left untagged. Speaker personalization puts
//! one `<spk:ID>` tag per speaker in front of the source side.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{MonoCorpus, ParallelCorpus, ParallelProvenance, Provenance, Sentence, SentencePair};
use crate::error::{Error, Result};
use crate::generator::{ExtractStats, NEWLINE};
use crate::translator::{translate_corpus, TranslateStats, Translator};

pub const BT_TAG: &str = "<BT>";
pub const DEFAULT_TAG_FORMAT: &str = "<spk:{}>";

fn check_tag(tag: &str) -> Result<()> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::argument(format!("tag {tag:?} is not a single token")));
    }
    Ok(())
}

fn prefixed(tag: &str, s: &Sentence) -> Sentence {
    Sentence::new(format!("{tag} {s}")).expect("tag and sentence are both valid")
}

/// Pairs each target sentence with `tag` + its translation.
pub fn assemble_back_translation(
    mono_target: &MonoCorpus,
    t: &dyn Translator,
    tag: &str,
) -> Result<(ParallelCorpus, TranslateStats)> {
    check_tag(tag)?;
    let (translated, stats) = translate_corpus(t, mono_target)?;
    Ok((back_translation_pairs(mono_target, &translated, tag)?, stats))
}

fn check_aligned(a: &MonoCorpus, b: &MonoCorpus) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Alignment {
            src: b.len(),
            tgt: a.len(),
            speakers: None,
        });
    }
    Ok(())
}

/// Back-translation pairs from already translated text: source is `tag`
/// followed by `translated[i]`, target is `mono_target[i]`.
pub fn back_translation_pairs(mono_target: &MonoCorpus, translated: &MonoCorpus, tag: &str) -> Result<ParallelCorpus> {
    check_tag(tag)?;
    check_aligned(mono_target, translated)?;
    let mut p = ParallelCorpus::new(&translated.lang, &mono_target.lang, ParallelProvenance::BackTranslation);
    for (src, tgt) in translated.sentences.iter().zip(&mono_target.sentences) {
        p.push(SentencePair {
            source: prefixed(tag, src),
            target: tgt.clone(),
            speaker: None,
        })?;
    }
    Ok(p)
}

/// Pairs each source sentence with its translation. No tags are added.
pub fn assemble_forward_translation(mono_source: &MonoCorpus, t: &dyn Translator) -> Result<(ParallelCorpus, TranslateStats)> {
    let (translated, stats) = translate_corpus(t, mono_source)?;
    Ok((forward_translation_pairs(mono_source, &translated)?, stats))
}

pub fn forward_translation_pairs(mono_source: &MonoCorpus, translated: &MonoCorpus) -> Result<ParallelCorpus> {
    check_aligned(mono_source, translated)?;
    let mut p = ParallelCorpus::new(&mono_source.lang, &translated.lang, ParallelProvenance::ForwardTranslation);
    for (src, tgt) in mono_source.sentences.iter().zip(&translated.sentences) {
        p.push(SentencePair {
            source: src.clone(),
            target: tgt.clone(),
            speaker: None,
        })?;
    }
    Ok(p)
}

/// Speaker ids and the template that turns an id into its tag token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerRegistry {
    speakers: BTreeSet<String>,
    tag_format: String,
}

impl SpeakerRegistry {
    /// `tag_format` must contain `{}` exactly once and look like `<...>`,
    /// so tags stay atomic under subword segmentation.
    pub fn new<I, S>(speakers: I, tag_format: &str) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if tag_format.matches("{}").count() != 1
            || !tag_format.starts_with('<')
            || !tag_format.ends_with('>')
            || tag_format.contains(char::is_whitespace)
        {
            return Err(Error::argument(format!(
                "tag format {tag_format:?} must look like <...{{}}...> with one placeholder"
            )));
        }
        let mut set = BTreeSet::new();
        for id in speakers {
            let id = id.into();
            if id.is_empty() || id.contains(|c: char| c.is_whitespace() || c == '<' || c == '>' || c == '{' || c == '}') {
                return Err(Error::argument(format!("invalid speaker id {id:?}")));
            }
            set.insert(id);
        }
        Ok(SpeakerRegistry {
            speakers: set,
            tag_format: tag_format.to_string(),
        })
    }

    pub fn with_default_format<I, S>(speakers: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(speakers, DEFAULT_TAG_FORMAT)
    }

    /// All speakers seen in `p`.
    pub fn from_corpus(p: &ParallelCorpus) -> Self {
        Self::with_default_format(p.speakers().iter().cloned()).expect("corpus speaker ids are valid tokens")
    }

    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.speakers.contains(id)
    }

    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.speakers.iter().map(String::as_str)
    }

    pub fn tag_format(&self) -> &str {
        &self.tag_format
    }

    /// The tag for `id`, whether or not it is registered.
    pub fn tag(&self, id: &str) -> String {
        self.tag_format.replacen("{}", id, 1)
    }

    /// The registered speaker whose tag is `token`.
    pub fn speaker_of(&self, token: &str) -> Option<&str> {
        let id = tag_id(&self.tag_format, token)?;
        self.speakers.get(id).map(String::as_str)
    }
}

/// The id inside `token` if it has the shape of `tag_format`, registered or
/// not.
pub fn tag_id<'a>(tag_format: &str, token: &'a str) -> Option<&'a str> {
    let (pre, post) = tag_format.split_once("{}")?;
    let id = token.strip_prefix(pre)?.strip_suffix(post)?;
    (!id.is_empty()).then_some(id)
}

fn speaker_at<'a>(pair: &'a SentencePair, index: usize, r: &SpeakerRegistry) -> Result<&'a str> {
    let id = pair.speaker.as_deref().ok_or(Error::MissingSpeaker { index })?;
    if !r.contains(id) {
        return Err(Error::UnknownSpeaker { id: id.to_string(), index });
    }
    Ok(id)
}

/// Prepends each pair's speaker tag to its source sentence.
pub fn tag_speakers(p: &ParallelCorpus, r: &SpeakerRegistry) -> Result<ParallelCorpus> {
    let mut out = ParallelCorpus::new(&p.src_lang, &p.tgt_lang, p.provenance);
    for (i, pair) in p.pairs().iter().enumerate() {
        let id = speaker_at(pair, i, r)?;
        out.push(SentencePair {
            source: prefixed(&r.tag(id), &pair.source),
            target: pair.target.clone(),
            speaker: pair.speaker.clone(),
        })?;
    }
    Ok(out)
}

/// Inverse of [`tag_speakers`]: removes the leading speaker tag of every
/// source sentence. A pair whose source does not start with its own tag is
/// an error.
pub fn strip_speaker_tags(p: &ParallelCorpus, r: &SpeakerRegistry) -> Result<ParallelCorpus> {
    let mut out = ParallelCorpus::new(&p.src_lang, &p.tgt_lang, p.provenance);
    for (i, pair) in p.pairs().iter().enumerate() {
        let id = speaker_at(pair, i, r)?;
        let tag = r.tag(id);
        let rest = pair
            .source
            .as_str()
            .strip_prefix(tag.as_str())
            .and_then(|s| s.strip_prefix(' '))
            .ok_or_else(|| Error::argument(format!("pair {i}: source does not start with {tag}")))?;
        out.push(SentencePair {
            source: Sentence::new(rest).map_err(|_| Error::argument(format!("pair {i}: nothing after {tag}")))?,
            target: pair.target.clone(),
            speaker: pair.speaker.clone(),
        })?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Source,
    Target,
}

/// One side of `p` with each line prefixed by its speaker tag, for
/// fine-tuning a speaker-aware generator.
pub fn speaker_tagged_side(p: &ParallelCorpus, r: &SpeakerRegistry, side: Side, domain: &str) -> Result<MonoCorpus> {
    let lang = match side {
        Side::Source => &p.src_lang,
        Side::Target => &p.tgt_lang,
    };
    let mut out = MonoCorpus::new(lang, domain, Provenance::Human);
    for (i, pair) in p.pairs().iter().enumerate() {
        let id = speaker_at(pair, i, r)?;
        let s = match side {
            Side::Source => &pair.source,
            Side::Target => &pair.target,
        };
        out.sentences.push(prefixed(&r.tag(id), s));
    }
    Ok(out)
}

/// `n` speaker tags drawn uniformly with replacement.
pub fn personalized_prompts(r: &SpeakerRegistry, n: usize, seed: u64) -> Result<Vec<String>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if r.is_empty() {
        return Err(Error::argument("cannot draw prompts from an empty speaker registry"));
    }
    let tags: Vec<String> = r.speakers().map(|s| r.tag(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| tags[rng.gen_range(0..tags.len())].clone()).collect())
}

/// Generated lines attributed to the speaker whose tag prompted them.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerLines {
    pub corpus: MonoCorpus,
    /// Speaker of each line in `corpus`.
    pub speakers: Vec<String>,
}

/// Splits prompted sequences into lines like
/// [`extract_lines`](crate::generator::extract_lines), attributing every
/// line to the speaker of `prompts[i]`. Leading speaker tags emitted by the
/// model are removed from each line.
pub fn extract_speaker_lines(
    sequences: &[Vec<String>],
    prompts: &[String],
    r: &SpeakerRegistry,
    max_tokens: usize,
    lang: &str,
    domain: &str,
) -> Result<(SpeakerLines, ExtractStats)> {
    if sequences.len() != prompts.len() {
        return Err(Error::Alignment {
            src: sequences.len(),
            tgt: prompts.len(),
            speakers: None,
        });
    }
    let mut lines = SpeakerLines {
        corpus: MonoCorpus::new(lang, domain, Provenance::Generated),
        speakers: Vec::new(),
    };
    let mut stats = ExtractStats::default();
    for (i, (seq, prompt)) in sequences.iter().zip(prompts).enumerate() {
        let speaker = r
            .speaker_of(prompt)
            .ok_or_else(|| Error::argument(format!("prompt {i} ({prompt:?}) is not a registered speaker tag")))?;
        for line in seq.split(|t| t == NEWLINE) {
            let start = line.iter().take_while(|t| r.speaker_of(t).is_some()).count();
            let toks: Vec<&str> = line[start..].iter().map(String::as_str).collect();
            if toks.is_empty() {
                stats.empty += 1;
            } else if toks.len() > max_tokens {
                stats.overlong += 1;
            } else {
                lines.corpus.sentences.push(Sentence::new(toks.join(" ")).expect("nonempty tokens"));
                lines.speakers.push(speaker.to_string());
                stats.lines += 1;
            }
        }
    }
    Ok((lines, stats))
}

/// Back-translates speaker-attributed lines. The source side reads
/// `<spk:ID> <BT> translation`.
pub fn assemble_speaker_back_translation(
    lines: &SpeakerLines,
    t: &dyn Translator,
    tag: &str,
    r: &SpeakerRegistry,
) -> Result<(ParallelCorpus, TranslateStats)> {
    check_tag(tag)?;
    let (translated, stats) = translate_corpus(t, &lines.corpus)?;
    Ok((speaker_back_translation_pairs(lines, &translated, tag, r)?, stats))
}

pub fn speaker_back_translation_pairs(
    lines: &SpeakerLines,
    translated: &MonoCorpus,
    tag: &str,
    r: &SpeakerRegistry,
) -> Result<ParallelCorpus> {
    if lines.speakers.len() != lines.corpus.len() {
        return Err(Error::Alignment {
            src: lines.corpus.len(),
            tgt: lines.corpus.len(),
            speakers: Some(lines.speakers.len()),
        });
    }
    let bt = back_translation_pairs(&lines.corpus, translated, tag)?;
    let mut attributed = ParallelCorpus::new(&bt.src_lang, &bt.tgt_lang, ParallelProvenance::SpeakerBackTranslation);
    for (pair, id) in bt.pairs().iter().zip(&lines.speakers) {
        attributed.push(SentencePair {
            speaker: Some(id.clone()),
            ..pair.clone()
        })?;
    }
    tag_speakers(&attributed, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translator::{IdentityTranslator, ReverseTranslator};

    fn mono(lang: &str, lines: &[&str]) -> MonoCorpus {
        MonoCorpus::from_lines(lang, "t", Provenance::Generated, lines.iter().copied()).unwrap()
    }

    fn pair(src: &str, tgt: &str, spk: Option<&str>) -> SentencePair {
        SentencePair {
            source: Sentence::new(src).unwrap(),
            target: Sentence::new(tgt).unwrap(),
            speaker: spk.map(String::from),
        }
    }

    #[test]
    fn back_translation_example() {
        let t = ReverseTranslator::new("en", "fr");
        let (p, _) = assemble_back_translation(&mono("en", &["the cat sat"]), &t, BT_TAG).unwrap();
        assert_eq!(p.pairs(), [pair("<BT> sat cat the", "the cat sat", None)]);
        assert_eq!((p.src_lang.as_str(), p.tgt_lang.as_str()), ("fr", "en"));
        assert_eq!(p.provenance, ParallelProvenance::BackTranslation);
        let (empty, _) = assemble_back_translation(&mono("en", &[]), &t, BT_TAG).unwrap();
        assert!(empty.is_empty());
        assert!(assemble_back_translation(&mono("en", &["a"]), &t, "two words").is_err());
    }

    #[test]
    fn forward_translation_example() {
        let t = IdentityTranslator::new("en", "de");
        let (p, _) = assemble_forward_translation(&mono("en", &["hello"]), &t).unwrap();
        assert_eq!(p.pairs(), [pair("hello", "hello", None)]);
        assert_eq!(p.provenance, ParallelProvenance::ForwardTranslation);
    }

    #[test]
    fn registry_tags() {
        let r = SpeakerRegistry::with_default_format(["s1", "s2"]).unwrap();
        assert_eq!(r.tag("s1"), "<spk:s1>");
        assert_eq!(r.speaker_of("<spk:s2>"), Some("s2"));
        assert_eq!(r.speaker_of("<spk:s3>"), None);
        assert!(crate::subword::is_reserved(&r.tag("s1")));
        assert!(SpeakerRegistry::new(["a"], "spk_{}").is_err());
        assert!(SpeakerRegistry::new(["a"], "<{}{}>").is_err());
        assert!(SpeakerRegistry::with_default_format(["a b"]).is_err());
    }

    #[test]
    fn tag_speakers_example_and_errors() {
        let mut p = ParallelCorpus::new("en", "fr", ParallelProvenance::Human);
        p.push(pair("hello world", "bonjour monde", Some("s1"))).unwrap();
        let r = SpeakerRegistry::from_corpus(&p);
        let tagged = tag_speakers(&p, &r).unwrap();
        assert_eq!(tagged.pairs()[0].source.as_str(), "<spk:s1> hello world");
        assert_eq!(tagged.pairs()[0].target.as_str(), "bonjour monde");
        assert_eq!(strip_speaker_tags(&tagged, &r).unwrap(), p);

        let other = SpeakerRegistry::with_default_format(["s2"]).unwrap();
        match tag_speakers(&p, &other).unwrap_err() {
            Error::UnknownSpeaker { id, index } => assert_eq!((id.as_str(), index), ("s1", 0)),
            e => panic!("unexpected {e:?}"),
        }
        let mut anon = ParallelCorpus::new("en", "fr", ParallelProvenance::Human);
        anon.push(pair("a", "b", None)).unwrap();
        assert!(matches!(tag_speakers(&anon, &r), Err(Error::MissingSpeaker { index: 0 })));
    }

    #[test]
    fn prompts() {
        let r = SpeakerRegistry::with_default_format(["only"]).unwrap();
        assert!(personalized_prompts(&r, 0, 1).unwrap().is_empty());
        assert_eq!(personalized_prompts(&r, 10, 1).unwrap(), vec!["<spk:only>"; 10]);
        let empty = SpeakerRegistry::with_default_format(Vec::<String>::new()).unwrap();
        assert!(personalized_prompts(&empty, 0, 1).unwrap().is_empty());
        assert!(matches!(personalized_prompts(&empty, 1, 1), Err(Error::Argument(_))));
        let r = SpeakerRegistry::with_default_format(["a", "b", "c"]).unwrap();
        assert_eq!(personalized_prompts(&r, 50, 7).unwrap(), personalized_prompts(&r, 50, 7).unwrap());
    }

    #[test]
    fn speaker_lines_and_assembly() {
        let r = SpeakerRegistry::with_default_format(["a", "b"]).unwrap();
        let seqs: Vec<Vec<String>> = vec![
            ["<spk:a>", "x", "y", "<nl>", "<spk:a>", "z"].iter().map(|s| s.to_string()).collect(),
            ["<spk:b>", "w", "<nl>"].iter().map(|s| s.to_string()).collect(),
        ];
        let prompts = vec!["<spk:a>".to_string(), "<spk:b>".to_string()];
        let (lines, stats) = extract_speaker_lines(&seqs, &prompts, &r, 120, "en", "gen").unwrap();
        assert_eq!(lines.corpus.iter().collect::<Vec<_>>(), ["x y", "z", "w"]);
        assert_eq!(lines.speakers, ["a", "a", "b"]);
        assert_eq!(stats.empty, 1);

        let t = ReverseTranslator::new("en", "de");
        let (p, _) = assemble_speaker_back_translation(&lines, &t, BT_TAG, &r).unwrap();
        assert_eq!(p.provenance, ParallelProvenance::SpeakerBackTranslation);
        assert_eq!(p.pairs()[0], pair("<spk:a> <BT> y x", "x y", Some("a")));
        assert_eq!(p.pairs()[2], pair("<spk:b> <BT> w", "w", Some("b")));
    }

    #[test]
    fn tagged_side_export() {
        let mut p = ParallelCorpus::new("de", "en", ParallelProvenance::Human);
        p.push(pair("hallo", "hello", Some("s9"))).unwrap();
        let r = SpeakerRegistry::from_corpus(&p);
        let m = speaker_tagged_side(&p, &r, Side::Target, "dialogue").unwrap();
        assert_eq!(m.lang, "en");
        assert_eq!(m.iter().collect::<Vec<_>>(), ["<spk:s9> hello"]);
    }
}
