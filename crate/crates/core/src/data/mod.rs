//! Interaction logs, vocabularies, sample construction and batching.

mod batch;
mod log;
mod split;
mod synth;
mod vocab;

pub use batch::make_batches;
pub use log::{filter_infrequent, ingest, ingest_str, IngestStats, InteractionLog, Record, Schema};
pub use split::{
    build_splits, downsample_train, flip_labels, pad_front, read_snapshot, save_snapshot, unpad, write_snapshot,
    DatasetSplit, Sample, SplitStats, MIN_BEHAVIORS,
};
pub use synth::{cluster_token, item_token, synth_generate, SynthSpec};
pub use vocab::{FieldVocab, Vocabulary, PAD_ID, UNK_ID};
