pub mod gateway;
pub mod imaging;
pub mod kb;
pub mod prediction;
pub mod prompt;
pub mod retrieval;
pub mod service;
pub mod metrics;
pub mod pipeline;
pub mod train;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/pipeline.md")]
    struct Pipeline;
    #[doc = include_str!("../../../book/src/retrieval.md")]
    struct Retrieval;
    #[doc = include_str!("../../../book/src/index-format.md")]
    struct IndexFormat;
    #[doc = include_str!("../../../book/src/metrics.md")]
    struct Metrics;
    #[doc = include_str!("../../../book/src/imaging.md")]
    struct Imaging;
    #[doc = include_str!("../../../book/src/adapters.md")]
    struct Adapters;
    #[doc = include_str!("../../../book/src/endpoints.md")]
    struct Endpoints;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
