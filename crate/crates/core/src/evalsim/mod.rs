//! Ranking metrics and the multi-step critiquing simulator.

pub mod evaluate;
pub mod metrics;
pub mod sim;

pub use evaluate::{evaluate_model, evaluate_popularity, excluded_items, popularity_scores, EvalReport};
pub use metrics::{
    explanation_metrics, metrics_from_ranking, rank_desc, rank_metrics, rank_metrics_excluding, rank_subset,
    MetricReport,
};
pub use sim::{
    candidate_pool, compare_runs, comparison_csv, diff_score, mean_ci, run_session, select_critique, simulate,
    valid_critiques, BlendCritiquer, ComparisonRow, CritiqueState, Critiquer, IdentityCritiquer, SelectionState,
    SessionRecord, SimConfig, SimResult, Strategy, TopNSummary, UacCritiquer,
};
