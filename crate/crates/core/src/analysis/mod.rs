//! Corpus-level studies: sentence fusion, training-data overlap and bigram
//! frequencies.

pub mod bigrams;
pub mod fusion;
pub mod overlap;

pub use bigrams::{bigram_stats, ft_bigrams, BigramCounts, BigramReport, BigramStat};
pub use fusion::{find_fusion, fusion_rate, FusionRecord, FusionSummary};
pub use overlap::{naive_scan, normalize_words, overlap_scan, OverlapHit, OverlapIndex, OverlapReport};
