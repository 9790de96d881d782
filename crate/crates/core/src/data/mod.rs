//! Annotated sentences, vocabularies, dependency adjacency and the
//! candidate-index encoding of gold structures.

mod graph;
mod index;
mod sentence;
mod vocab;

pub use graph::{build_adjacency, AdjacencyMatrix};
pub use index::{
    decoder_input, gold_predictions, index_kind, linearize_predictions, linearize_targets,
    CandidateIndexSpace, IndexKind, Prediction, Slot, SubtaskKind,
};
pub use sentence::{
    parse_dataset, parse_dataset_str, write_dataset, GoldTriplet, Polarity, Sentence, Span,
};
pub use vocab::{pos_id, Vocabulary, BOS, EOS, PAD, POS_VOCAB_SIZE, UNK, UPOS_TAGS};
