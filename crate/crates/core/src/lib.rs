pub mod corpus;
pub mod error;
pub mod generator;
pub mod http;
pub mod metrics;
pub mod pipeline;
pub mod subword;
pub mod synthesis;
pub mod textproc;
pub mod translator;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpora.md")]
    mod corpora {}
    #[doc = include_str!("../../../book/src/subword.md")]
    mod subword {}
    #[doc = include_str!("../../../book/src/generator.md")]
    mod generator {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/speakers.md")]
    mod speakers {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
