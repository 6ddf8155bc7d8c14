//! Dataset files, label spaces, batching and the synthetic planted-rule corpus.

mod batch;
mod dataset;
mod synth;

pub use batch::{make_batches, Batch};
pub use dataset::{
    encode_document, encode_split, load_dataset, read_documents, save_dataset, write_documents, Document,
    LabelSpace, LabeledExample,
};
pub use synth::{generate_synthetic, LabelRule, Manifest, Rule, SynthCorpus, SynthSpec};
