#![allow(dead_code)]

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lines from a first-order Markov source over `{prefix}0 .. {prefix}{v-1}`.
/// Each word has a handful of likely successors, so an n-gram model has
/// something to learn.
pub fn markov_lines(prefix: &str, vocab: usize, n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(4..=12);
            let mut w = rng.gen_range(0..vocab);
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                words.push(format!("{prefix}{w}"));
                w = (w * 7 + rng.gen_range(1..4)) % vocab;
            }
            words.join(" ")
        })
        .collect()
}

pub fn write_lines(path: &Path, lines: &[String]) {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).unwrap();
}

/// Desk-scale configuration: 10k in-domain lines, 5k generated sequences
/// of one line each, reversing mock translator, optional scoring.
pub fn desk_config(dir: &Path, mode: &str, score: bool) -> String {
    let mono = markov_lines("d", 400, 10_000, 1);
    let base = markov_lines("g", 600, 10_000, 2);
    write_lines(&dir.join("mono.txt"), &mono);
    write_lines(&dir.join("base.txt"), &base);
    let mut config = format!(
        r#"
[run]
src_lang = "de"
tgt_lang = "en"
domain = "desk"
mode = "{mode}"
output_dir = "out"
seed = 11

[data]
in_domain = "mono.txt"
base_corpus = "base.txt"

[split]
fine_tune_size = 2000

[lm]
order = 3
block_size = 1

[generate]
size = 5000
max_tokens = 40

[translator]
backend = "reverse"
"#
    );
    if score {
        write_lines(&dir.join("hyp.txt"), &mono[..200].to_vec());
        write_lines(&dir.join("ref.txt"), &mono[100..300].to_vec());
        config.push_str("\n[score]\nhypotheses = \"hyp.txt\"\nreferences = \"ref.txt\"\n");
    }
    config
}
