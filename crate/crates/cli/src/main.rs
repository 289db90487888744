use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use parasynth::corpus::{self, MonoCorpus, ParallelCorpus};
use parasynth::generator::{self, GenerationParams, GeneratorBackend, NgramConfig, NgramModel, RemoteGenerator};
use parasynth::metrics::{corpus_bleu, corpus_chrf};
use parasynth::pipeline::{self, PipelineConfig, RunOptions, GEN_URL_ENV, MT_URL_ENV};
use parasynth::subword::{self, SubwordMode, SubwordModel};
use parasynth::synthesis::{self, SpeakerRegistry};
use parasynth::textproc::{self, TruecaseModel};
use parasynth::translator::{
    self, DictionaryTranslator, IdentityTranslator, RemoteTranslator, ReverseTranslator, Translator,
};
use parasynth::{Error, Result};

#[derive(Parser)]
#[command(name = "parasynth", version, about = "Build synthetic parallel corpora from small in-domain monolingual data")]
struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed for sampling, splitting and prompting.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline manifest path.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize a corpus, dropping blank lines.
    #[command(subcommand)]
    Ingest(IngestCmd),
    /// Remove duplicates and overlong sentences.
    Clean {
        #[arg(long)]
        lang: String,
        #[arg(long, default_value_t = 120)]
        max_tokens: usize,
        /// Keep duplicate sentences.
        #[arg(long)]
        no_dedup: bool,
        #[command(flatten)]
        io: LineIo,
    },
    /// Draw a random subset of a corpus.
    Split {
        #[arg(long)]
        size: usize,
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Where to write the sentences that were not selected.
        #[arg(long)]
        rest: Option<PathBuf>,
    },
    /// Tokenize one sentence per line.
    Tokenize {
        #[arg(long)]
        lang: String,
        #[command(flatten)]
        io: LineIo,
    },
    /// Join tokens back into running text.
    Detokenize {
        #[arg(long)]
        lang: String,
        #[command(flatten)]
        io: LineIo,
    },
    #[command(subcommand)]
    Truecase(TruecaseCmd),
    #[command(subcommand)]
    Bpe(BpeCmd),
    #[command(subcommand)]
    Lm(LmCmd),
    /// Translate one sentence per line.
    Translate {
        #[command(flatten)]
        translator: TranslatorArgs,
        #[command(flatten)]
        io: LineIo,
    },
    #[command(subcommand)]
    Synth(SynthCmd),
    #[command(subcommand)]
    Score(ScoreCmd),
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Subcommand)]
enum IngestCmd {
    /// One sentence per line.
    Mono {
        #[arg(long)]
        lang: String,
        #[arg(long, default_value = "general")]
        domain: String,
        #[command(flatten)]
        io: LineIo,
    },
    /// Two aligned files, or a TSV with `src<TAB>tgt[<TAB>speaker]` rows.
    Parallel {
        #[arg(long)]
        src_lang: String,
        #[arg(long)]
        tgt_lang: String,
        #[arg(long, conflicts_with_all = ["src", "tgt"])]
        tsv: Option<PathBuf>,
        #[arg(long, requires = "tgt")]
        src: Option<PathBuf>,
        #[arg(long, requires = "src")]
        tgt: Option<PathBuf>,
        /// Speaker id per line, aligned with --src/--tgt.
        #[arg(long, requires = "src")]
        speakers: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TruecaseCmd {
    /// Learn surface-form frequencies from tokenized text.
    Train {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: LineIo,
    },
    /// Capitalize the first word of each line.
    Undo {
        #[command(flatten)]
        io: LineIo,
    },
}

#[derive(Subcommand)]
enum BpeCmd {
    Learn {
        #[arg(long, value_parser = parse_mode, default_value = "token_bpe")]
        mode: SubwordMode,
        /// Merge operations; defaults to 32000 (token_bpe) or 16000 (raw_bpe).
        #[arg(long)]
        merges: Option<usize>,
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        io: LineIo,
    },
    Undo {
        #[arg(long, value_parser = parse_mode, default_value = "token_bpe")]
        mode: SubwordMode,
        #[command(flatten)]
        io: LineIo,
    },
}

#[derive(Subcommand)]
enum LmCmd {
    /// Train an n-gram model.
    Train {
        #[arg(long, default_value_t = generator::DEFAULT_ORDER)]
        order: usize,
        #[arg(long, default_value_t = generator::DEFAULT_DISCOUNT)]
        discount: f64,
        /// Lines per training sequence.
        #[arg(long, default_value_t = generator::DEFAULT_BLOCK_SIZE)]
        block_size: usize,
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Interpolate a model with one trained on in-domain text.
    Finetune {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, default_value_t = generator::DEFAULT_LAMBDA)]
        lambda: f64,
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Sample sequences, one per output line.
    Generate {
        /// Local model; omit to use the remote service.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, env = GEN_URL_ENV)]
        url: Option<String>,
        #[arg(short, long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        max_tokens: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 40)]
        top_k: usize,
        /// Space-separated prompt tokens.
        #[arg(long, default_value = "")]
        prompt: String,
        /// Split sequences into sentences, dropping empty and overlong ones.
        #[arg(long)]
        lines: bool,
        #[arg(long, default_value_t = 120)]
        max_line_tokens: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Perplexity of a model on a corpus.
    Perplexity {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Tagged back-translation of target-language text.
    Bt {
        #[arg(long, default_value = synthesis::BT_TAG)]
        tag: String,
        #[command(flatten)]
        translator: TranslatorArgs,
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Untagged forward translation of source-language text.
    Ft {
        #[command(flatten)]
        translator: TranslatorArgs,
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Prefix source sentences of a speaker-annotated TSV with speaker tags.
    SpeakerTag {
        #[arg(long)]
        src_lang: String,
        #[arg(long)]
        tgt_lang: String,
        #[arg(long, default_value = synthesis::DEFAULT_TAG_FORMAT)]
        tag_format: String,
        /// Remove the tags instead.
        #[arg(long)]
        strip: bool,
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Draw speaker-tag prompts uniformly from the speakers of a TSV.
    Prompts {
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value = synthesis::DEFAULT_TAG_FORMAT)]
        tag_format: String,
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ScoreCmd {
    Bleu(ScoreArgs),
    Chrf(ScoreArgs),
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Print a JSON object instead of the one-line report.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Run every stage, reusing unchanged results.
    Run {
        /// Print the planned stages as JSON without running anything.
        #[arg(long)]
        dry_run: bool,
        /// Stop after this stage.
        #[arg(long)]
        halt_after: Option<String>,
    },
    /// Continue the run recorded in a manifest.
    Resume {
        #[arg(long)]
        halt_after: Option<String>,
    },
}

#[derive(Args)]
struct LineIo {
    /// Input file; standard input if omitted.
    input: Option<PathBuf>,
    /// Output file; standard output if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Identity,
    Reverse,
    Dictionary,
    Remote,
}

#[derive(Args)]
struct TranslatorArgs {
    /// Language of the input text.
    #[arg(long)]
    from: String,
    /// Language of the translations.
    #[arg(long)]
    to: String,
    #[arg(long, value_enum, default_value = "remote")]
    backend: Backend,
    #[arg(long, env = MT_URL_ENV)]
    url: Option<String>,
    /// `source<TAB>target` entries for the dictionary backend.
    #[arg(long)]
    dictionary: Option<PathBuf>,
    #[arg(long, default_value_t = translator::DEFAULT_BATCH)]
    batch_size: usize,
    #[arg(long, default_value_t = translator::DEFAULT_IN_FLIGHT)]
    max_in_flight: usize,
}

impl TranslatorArgs {
    fn build(&self) -> Result<Box<dyn Translator>> {
        let (f, t) = (self.from.as_str(), self.to.as_str());
        Ok(match self.backend {
            Backend::Identity => Box::new(IdentityTranslator::new(f, t)),
            Backend::Reverse => Box::new(ReverseTranslator::new(f, t)),
            Backend::Dictionary => {
                let path = self
                    .dictionary
                    .as_ref()
                    .ok_or_else(|| Error::Argument("--dictionary is required for the dictionary backend".into()))?;
                Box::new(DictionaryTranslator::load(f, t, path)?)
            }
            Backend::Remote => {
                let url = self
                    .url
                    .clone()
                    .ok_or_else(|| Error::Argument(format!("--url or {MT_URL_ENV} is required for the remote backend")))?;
                let mut r = RemoteTranslator::new(url, f, t);
                r.batch_size = self.batch_size;
                r.max_in_flight = self.max_in_flight;
                Box::new(r)
            }
        })
    }
}

fn parse_mode(s: &str) -> std::result::Result<SubwordMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    Ok(match path {
        None => Box::new(BufReader::new(io::stdin())),
        Some(p) if p == Path::new("-") => Box::new(BufReader::new(io::stdin())),
        Some(p) => Box::new(BufReader::new(File::open(p).map_err(|e| Error::Path { path: p.into(), source: e })?)),
    })
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        None => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) if p == Path::new("-") => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Path { path: p.into(), source: e })?)),
    })
}

fn read_lines(path: Option<&Path>) -> Result<Vec<String>> {
    corpus::read_lines(open_input(path)?)
}

/// Applies `f` to every input line, writing one output line each.
fn map_lines(io: &LineIo, mut f: impl FnMut(&str) -> Result<String>) -> Result<()> {
    let mut out = open_output(io.output.as_deref())?;
    for line in read_lines(io.input.as_deref())? {
        writeln!(out, "{}", f(&line)?)?;
    }
    out.flush()?;
    Ok(())
}

fn tokens(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

fn load_mono(path: &Path, lang: &str) -> Result<MonoCorpus> {
    let ing = MonoCorpus::load(path, lang, "general")?;
    if ing.dropped > 0 {
        log::info!("{}: skipped {} blank lines", path.display(), ing.dropped);
    }
    Ok(ing.corpus)
}

fn write_parallel(p: &ParallelCorpus, output: Option<&Path>) -> Result<()> {
    p.write_tsv(open_output(output)?)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Ingest(IngestCmd::Mono { lang, domain, io }) => {
            let ing = corpus::ingest_mono(open_input(io.input.as_deref())?, &lang, &domain)?;
            eprintln!("{} sentences, {} dropped", ing.corpus.len(), ing.dropped);
            ing.corpus.write_to(open_output(io.output.as_deref())?)
        }
        Command::Ingest(IngestCmd::Parallel { src_lang, tgt_lang, tsv, src, tgt, speakers, output }) => {
            let ing = match (tsv, src, tgt) {
                (Some(t), _, _) => corpus::load_parallel_tsv(t, &src_lang, &tgt_lang)?,
                (None, Some(s), Some(t)) => {
                    let spk = speakers.as_deref().map(|p| open_input(Some(p))).transpose()?;
                    corpus::ingest_parallel(open_input(Some(&s))?, open_input(Some(&t))?, &src_lang, &tgt_lang, spk)?
                }
                _ => return Err(Error::Argument("give --tsv or both --src and --tgt".into())),
            };
            eprintln!(
                "{} pairs, {} dropped, {} speakers",
                ing.corpus.len(),
                ing.dropped,
                ing.corpus.speakers().len()
            );
            write_parallel(&ing.corpus, output.as_deref())
        }
        Command::Clean { lang, max_tokens, no_dedup, io } => {
            let c = corpus::ingest_mono(open_input(io.input.as_deref())?, &lang, "general")?.corpus;
            let (clean, stats) = corpus::clean_mono_with(&c, max_tokens, !no_dedup)?;
            eprintln!(
                "kept {}, removed {} duplicates and {} overlong",
                clean.len(),
                stats.duplicates,
                stats.overlong
            );
            clean.write_to(open_output(io.output.as_deref())?)
        }
        Command::Split { size, input, output, rest } => {
            let c = load_mono(&input, "und")?;
            let (first, remainder) = corpus::sample_split(&c, size, seed)?;
            first.save(&output)?;
            if let Some(r) = rest {
                remainder.save(r)?;
            }
            Ok(())
        }
        Command::Tokenize { lang, io } => map_lines(&io, |l| Ok(textproc::tokenize(l, &lang)?.join(" "))),
        Command::Detokenize { lang, io } => map_lines(&io, |l| textproc::detokenize(&tokens(l), &lang)),
        Command::Truecase(TruecaseCmd::Train { input, output }) => {
            let m = textproc::train_truecaser(&load_mono(&input, "und")?);
            m.save(output)
        }
        Command::Truecase(TruecaseCmd::Apply { model, io }) => {
            let m = TruecaseModel::load(model)?;
            map_lines(&io, |l| Ok(textproc::truecase(&m, &tokens(l)).join(" ")))
        }
        Command::Truecase(TruecaseCmd::Undo { io }) => map_lines(&io, |l| Ok(textproc::detruecase(&tokens(l)).join(" "))),
        Command::Bpe(BpeCmd::Learn { mode, merges, input, output }) => {
            let n = merges.unwrap_or(match mode {
                SubwordMode::TokenBpe => subword::DEFAULT_TOKEN_MERGES,
                SubwordMode::RawBpe => subword::DEFAULT_RAW_MERGES,
            });
            let m = subword::learn_subword(&load_mono(&input, "und")?, n, mode)?;
            if m.n_merges() < n {
                eprintln!("stopped after {} merges: no pairs left", m.n_merges());
            }
            m.save(output)
        }
        Command::Bpe(BpeCmd::Apply { model, io }) => {
            let m = SubwordModel::load(model)?;
            map_lines(&io, |l| Ok(subword::apply_subword(&m, l).join(" ")))
        }
        Command::Bpe(BpeCmd::Undo { mode, io }) => map_lines(&io, |l| Ok(subword::undo_subword(mode, &tokens(l)))),
        Command::Lm(LmCmd::Train { order, discount, block_size, input, output }) => {
            let cfg = NgramConfig { order, discount, block_size };
            let m = generator::train_ngram_with(&load_mono(&input, "und")?, cfg)?;
            eprintln!("vocabulary of {} tokens", m.vocab_len());
            m.save(output)
        }
        Command::Lm(LmCmd::Finetune { base, lambda, input, output }) => {
            let base = NgramModel::load(base)?;
            let m = generator::finetune(&base, &load_mono(&input, "und")?, lambda)?;
            m.save(output)
        }
        Command::Lm(LmCmd::Generate {
            model,
            url,
            n,
            max_tokens,
            temperature,
            top_k,
            prompt,
            lines,
            max_line_tokens,
            output,
        }) => {
            let backend: Box<dyn GeneratorBackend> = match (model, url) {
                (Some(m), _) => Box::new(NgramModel::load(m)?),
                (None, Some(u)) => Box::new(RemoteGenerator::new(u)),
                (None, None) => return Err(Error::Argument(format!("give --model, --url or {GEN_URL_ENV}"))),
            };
            let params = GenerationParams {
                temperature,
                top_k,
                max_tokens,
                n_sequences: n,
                seed,
                prompt: prompt.split_whitespace().map(String::from).collect(),
            };
            let seqs = backend.generate(&params)?;
            let mut out = open_output(output.as_deref())?;
            if lines {
                let (c, stats) = generator::extract_lines(&seqs, max_line_tokens, "und", "generated");
                eprintln!("{} lines, {} empty, {} overlong", stats.lines, stats.empty, stats.overlong);
                c.write_to(out)
            } else {
                for s in seqs {
                    writeln!(out, "{}", s.join(" "))?;
                }
                out.flush()?;
                Ok(())
            }
        }
        Command::Lm(LmCmd::Perplexity { model, input }) => {
            let m = NgramModel::load(model)?;
            let c = load_mono(&input, "und")?;
            let s = m.score(c.iter());
            println!(
                "perplexity = {:.4} (cross-entropy = {:.4} nats, tokens = {}, oov = {})",
                s.perplexity(),
                s.cross_entropy(),
                s.tokens,
                s.oov
            );
            Ok(())
        }
        Command::Translate { translator, io } => {
            let t = translator.build()?;
            let c = corpus::ingest_mono(open_input(io.input.as_deref())?, &translator.from, "general")?.corpus;
            let (out, stats) = translator::translate_corpus(t.as_ref(), &c)?;
            if stats.placeholders > 0 {
                eprintln!("{} empty translations replaced by their source", stats.placeholders);
            }
            out.write_to(open_output(io.output.as_deref())?)
        }
        Command::Synth(SynthCmd::Bt { tag, translator, input, output }) => {
            let t = translator.build()?;
            let (p, _) = synthesis::assemble_back_translation(&load_mono(&input, &translator.from)?, t.as_ref(), &tag)?;
            write_parallel(&p, output.as_deref())
        }
        Command::Synth(SynthCmd::Ft { translator, input, output }) => {
            let t = translator.build()?;
            let (p, _) = synthesis::assemble_forward_translation(&load_mono(&input, &translator.from)?, t.as_ref())?;
            write_parallel(&p, output.as_deref())
        }
        Command::Synth(SynthCmd::SpeakerTag { src_lang, tgt_lang, tag_format, strip, input, output }) => {
            let p = corpus::load_parallel_tsv(input, &src_lang, &tgt_lang)?.corpus;
            let r = SpeakerRegistry::new(p.speakers().iter().cloned(), &tag_format)?;
            let out = if strip {
                synthesis::strip_speaker_tags(&p, &r)?
            } else {
                synthesis::tag_speakers(&p, &r)?
            };
            write_parallel(&out, output.as_deref())
        }
        Command::Synth(SynthCmd::Prompts { n, tag_format, input, output }) => {
            let p = corpus::load_parallel_tsv(input, "src", "tgt")?.corpus;
            let r = SpeakerRegistry::new(p.speakers().iter().cloned(), &tag_format)?;
            let mut out = open_output(output.as_deref())?;
            for t in synthesis::personalized_prompts(&r, n, seed)? {
                writeln!(out, "{t}")?;
            }
            out.flush()?;
            Ok(())
        }
        Command::Score(cmd) => {
            let (args, bleu) = match &cmd {
                ScoreCmd::Bleu(a) => (a, true),
                ScoreCmd::Chrf(a) => (a, false),
            };
            let hyps = read_lines(Some(&args.hyp))?;
            let refs = read_lines(Some(&args.reference))?;
            let (line, json) = if bleu {
                let r = corpus_bleu(&hyps, &refs)?;
                (r.to_string(), serde_json::to_string(&r))
            } else {
                let r = corpus_chrf(&hyps, &refs)?;
                (r.to_string(), serde_json::to_string(&r))
            };
            if args.json {
                println!("{}", json.expect("report serializes"));
            } else {
                println!("{line}");
            }
            Ok(())
        }
        Command::Pipeline(PipelineCmd::Run { dry_run, halt_after }) => {
            let path = cli
                .config
                .ok_or_else(|| Error::Argument("pipeline run needs --config".into()))?;
            let mut config = PipelineConfig::load(path)?;
            if let Some(s) = cli.seed {
                config.run.seed = s;
            }
            if dry_run {
                let plan = pipeline::plan(&config);
                println!("{}", serde_json::to_string_pretty(&plan).expect("plan serializes"));
                return Ok(());
            }
            let opts = RunOptions { manifest: cli.manifest, halt_after };
            report(&pipeline::run(&config, &opts)?);
            Ok(())
        }
        Command::Pipeline(PipelineCmd::Resume { halt_after }) => {
            let path = match (cli.manifest, cli.config) {
                (Some(m), _) => m,
                (None, Some(c)) => PipelineConfig::load(c)?.run.output_dir.join(pipeline::MANIFEST_FILE),
                (None, None) => return Err(Error::Argument("pipeline resume needs --manifest or --config".into())),
            };
            let opts = RunOptions { manifest: None, halt_after };
            report(&pipeline::resume(path, &opts)?);
            Ok(())
        }
    }
}

fn report(m: &pipeline::PipelineManifest) {
    let Some(run) = m.last_run() else { return };
    for s in &run.stages {
        let state = if s.is_cached() { "cached".to_string() } else { s.status.to_string() };
        let counts: Vec<String> = s.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        eprintln!("{:<10} {:<8} {}", s.name, state, counts.join(" "));
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_argument() {
        2
    } else if e.is_transport() {
        3
    } else {
        4
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
