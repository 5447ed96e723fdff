//! Interactive multi-label scoring of short texts.
//!
//! Texts are encoded as presence rows over a frequency-filtered 1–3-gram
//! vocabulary and stacked with a sparse 0/1 label block into a single matrix
//! `X = [F | L]`. A rank-k factorization learned by clipped, regularized SGD
//! (with negative sampling in the feature block) fills in the empty label
//! cells, and user corrections are folded back in with a cheap local refresh.
//!
//! Module map:
//!
//! * [`featurize`]: tokenizer, n-gram extraction, vocabulary, row encoding
//! * [`store`]: the observed cells of `X`
//! * [`model`]: factor matrices, hyperparameters, binary snapshots
//! * [`train`]: SGD steps, passes, early stopping, corrections
//! * [`rank`]: top texts per label, top labels per text
//! * [`eval`]: dataset loaders, binarization, k-fold BER/RMSE benchmark
//! * [`par`]: rayon-backed data parallelism with a sequential fallback

pub mod error;
pub mod eval;
pub mod featurize;
pub mod model;
pub mod par;
pub mod rank;
pub mod store;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use featurize::{
    build_vocab, encode, extract_ngrams, feature_store, tokenize, NGramCounter, NGramVocab, TextDoc,
};
pub use model::{Decay, FactorModel, HyperParams, ModelSnapshot};
pub use par::Execution;
pub use rank::{
    full_label_block, top_labels_for_text, top_texts_for_label, ScoreTable, ScoredItem,
};
pub use store::{CellRef, ObservationStore, StoreStats};
pub use train::{
    apply_correction, rmse, sgd_step, squared_error_gradient, train, train_pass, PassStats,
    TrainReport, TrainingRun,
};
