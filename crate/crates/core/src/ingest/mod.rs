//! Annotation and score-file formats, the synthetic corpus, and batch sampling.

pub mod batch;
pub mod synth;
pub mod tsv;

pub use batch::{sample_batch, BatchComposition, EpochState};
pub use synth::{generate_synthetic_corpus, CorpusConfig, EvalKind, EvalSplit, SyntheticCorpus};
pub use tsv::{
    format_events_tsv, format_soft_tsv, parse_events_tsv, parse_soft_tsv, read_posteriorgram_tsv,
    read_score_dir, write_posteriorgram_tsv, write_score_dir, SoftSegment,
};
