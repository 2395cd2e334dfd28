//! Transcript analysis for collaboration sessions: grounding measures,
//! statistical tests and corpus reports.

pub mod annotate;
pub mod grounding;
pub mod report;
pub mod stats;

pub use annotate::{ActAnnotator, ExternalAnnotator, RuleBasedAnnotator};
pub use grounding::{
    annotate_dialogue_act, classify_reference, extract_piece_noun_phrases, partition_vocabulary, segment_turns,
    word_count, DialogueAct, DialogueActLabel, PieceReference, Utterance,
};
pub use report::{analyze_corpus, write_outputs, AnalyzeOptions, Analysis, MetricsReport};
pub use stats::{chi_square_2x2, cluster_permutation_test, mann_whitney_u, trial_trend, TestResult};
