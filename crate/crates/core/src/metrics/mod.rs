//! Caption metrics and agreement statistics.

pub mod agreement;
pub mod grounding;
pub mod report;
pub mod stem;
pub mod text;

pub use agreement::{krippendorff_alpha, pearson, spearman, Distance, StatsError};
pub use grounding::{gmeteor, grounding_scores, GroundingScore};
pub use report::{score_caption, score_corpus, Criterion, LanguageScores, MetricReport, RatingRecord};
pub use text::{bleu4, meteor, rouge_l, tokenize, tokenize_caption};
