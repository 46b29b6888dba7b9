pub mod agent;
pub mod corpus;
pub mod crashdump;
pub mod evalkit;
pub mod explain;
pub mod llm;
pub mod ranking;
pub mod reponav;

/// Exact vote-aggregated ranking.
pub type Ranking = ranking::ScoredRanking<num_rational::BigRational>;
/// Calibration model over double-precision scores.
pub type Calibration = evalkit::CalibrationModel<f64>;
