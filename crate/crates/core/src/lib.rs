//! Conformal prediction over labels and concepts linked by a knowledge base,
//! with joint revision of the two prediction sets.

pub mod conformal;
pub mod error;
pub mod evalues;
pub mod knowledge;
pub mod metrics;
pub mod pipeline;
pub mod revision;
pub mod sets;
pub mod synthio;

pub use conformal::{
    calibrate_quantile, score, CalibrationScores, FactorizedConceptDistribution, NonconformityScore,
    QuantileCalibration,
};
pub use error::{Error, Result};
pub use evalues::{
    budget_select, soft_rank_evalue, Aggregation, BudgetConfig, BudgetInput, BudgetSelection,
    EValueCalibration, SelectionRule,
};
pub use knowledge::{ConceptSpace, ConceptVector, KnowledgeProgram, KnowledgeTable, LabelSpace};
pub use metrics::{evaluate, theoretical_bounds, Bounds, EvaluationReport, MeanStd};
pub use revision::{apply_method, revise, Method, MethodInputs, PredictionSets, Provenance};
pub use sets::{ConceptSet, LabelSet};
pub use pipeline::{CalibrationState, RecordPrediction};
pub use synthio::{ConceptNoise, ConceptPrior, ExampleRecord, PredictorSpec, TiePolicy};
