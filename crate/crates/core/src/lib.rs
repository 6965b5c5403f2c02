//! Reservoir-assisted ensemble data assimilation and forecasting for chaotic
//! systems.
//!
//! The pipeline: an imperfect "knowledge" model of a chaotic system is run
//! through an ensemble transform Kalman filter (ETKF) against noisy, partial
//! measurements; the resulting analysis time series trains a reservoir
//! computer whose readout corrects the knowledge model's one-step forecasts.
//! The corrected (hybrid) model both forecasts farther than the knowledge
//! model alone and can be fed back into the assimilation loop to produce
//! better analyses, which in turn retrain a better readout.
//!
//! Modules follow the pipeline order:
//!
//! * [`dynamics`] — the chaotic test systems (Lorenz '63, Kuramoto–
//!   Sivashinsky) and their integrators.
//! * [`observation`] — measurement operators and additive Gaussian noise.
//! * [`etkf`] — the ensemble transform Kalman filter and assimilation loop.
//! * [`reservoir`] — reservoir construction, driving, and ridge readout fit.
//! * [`hybrid`] — training, hybrid prediction, and iterated assimilation.
//! * [`metrics`] — forecast/analysis error measures, valid time, Lyapunov
//!   exponents, summary statistics.
//! * [`experiment`] — replicated twin experiments, parameter sweeps, and
//!   CSV/JSON output.

pub mod dynamics;
pub mod error;
pub mod etkf;
pub mod experiment;
pub mod hybrid;
pub mod metrics;
pub mod observation;
pub mod reservoir;
pub mod rng;

pub use dynamics::{
    lorenz_rhs, rk4_step, simulate, IntegratorConfig, KsModel, KsParams, LorenzModel, LorenzParams,
    Model, State,
};
pub use error::{Error, Result};
pub use etkf::{etkf_analysis, forecast_ensemble, run_da, AnalysisSeries, DAConfig, Ensemble};
pub use experiment::{
    iterate_experiment, read_rows_csv, run_experiment, summarize, sweep, system_lambda, write_json,
    write_rows_csv, write_summary_csv, BestRho, ExperimentConfig, ExperimentOutput, MeasuredSpec,
    ReplicaFailure, ResultRow, RhoSpec, Scheme, SummaryRow, SweepParam, SystemSpec, SCHEMA_VERSION,
};
pub use hybrid::{
    baseline_forecast, iterate_ml_da, predict_hybrid, train_ml_da, Forecast, IterationRecord,
    TrainedHybrid, TrainingConfig,
};
pub use metrics::{
    analysis_rms, box_stats, largest_lyapunov, normalized_rms, valid_time, AnalysisRms, BoxStats,
    ErrorSeries, LyapunovConfig, LyapunovEstimate, ValidTime,
};
pub use observation::{observe_series, MeasurementOperator, MeasurementRecord, NoiseModel};
pub use reservoir::{
    build_reservoir, drive, fit_readout, hybrid_readout, reservoir_step, InputMatrix,
    ReadoutMatrix, ReservoirMatrices, ReservoirSpec, SparseMatrix,
};
pub use rng::{SeedSpec, StreamRole};
