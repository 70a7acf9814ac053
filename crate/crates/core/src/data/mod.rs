//! Dataset construction: IDX image files, outlier and novelty mixes,
//! backdoor poisoning, and log-session corpora with ground-truth labels.

mod glyphs;
mod idx;
mod images;
mod sequences;

pub use glyphs::{render_digit, render_letter, synthetic_digits, synthetic_letters, SyntheticSplit};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx, write_idx_images, write_idx_labels};
pub use images::{
    apply_trigger, build_nd_test, build_outlier_mix, poison, ratio_count, stratified_subsample, DatasetMeta,
    ImageDataset, PoisonSpec, Provenance,
};
pub use sequences::{
    gen_sessions, load_sequences, window_sequences, write_sequences, AnomalyKind, AnomalyPattern, SequenceCorpus,
    SessionLabel, SyntheticLogModel, Window, WindowMode, END_TOKEN, START_TOKEN,
};
