//! Bias measurements: retrieval skew, answer disproportion, ambiguous-QA
//! accuracy and the same-group similarity gap.

mod qa;
mod retrieval;
mod similarity;
mod skew;
mod stats;

pub use qa::{ambiguous_qa_accuracy, parse_responses, AliasTable, QaReport, QaResponse};
pub use retrieval::{cosine, cosine_retrieval, Query, QueryRanking, RetrievalRun};
pub use similarity::{similarity_gap, SimilarityGapReport};
pub use skew::{max_skew, max_skew_at_k, DesiredDistribution, QuerySkew, SkewReport};
pub use stats::{
    disproportion_rate, parse_answers, two_proportion_test, Answer, DisproportionReport, PromptResult, ZTest,
    DEFAULT_ALPHA_SIG,
};
