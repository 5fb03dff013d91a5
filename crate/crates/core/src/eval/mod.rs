//! Answer-quality evaluation: lexical and embedding similarity with
//! bucketed histograms, category counts, and numeric accuracy.

mod metrics;
mod numeric;
mod report;

pub use metrics::{bucket_index, bucket_scores, cosine_eval, jaccard, tokenize, BUCKET_COUNT, BUCKET_EDGES, BUCKET_LABELS};
pub use numeric::{extract_numbers, parse_reference, score_numeric, Expected, ScoringMode, Verdict, DEFAULT_TOLERANCE};
pub use report::{
    category_distribution, load_pairs, read_pairs, run_eval, summary, write_reports, Answerer, EvalConfig, EvalOutcome,
    EvalPair, InvalidRow, NumericAccuracyReport, NumericScore, PairKind, PairScore, SimilarityReport, CATEGORY_REPORT,
    HISTOGRAM_REPORT, NUMERIC_REPORT, SIMILARITY_REPORT, SUMMARY,
};
