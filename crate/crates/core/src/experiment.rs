//! Replicated twin experiments, parameter sweeps, and result output.
//!
//! A twin experiment draws a truth trajectory from the exact system, makes
//! noisy partial measurements of it, and compares two forecast schemes that
//! see only those measurements: the knowledge model alone (`baseline`) and
//! the reservoir-corrected knowledge model (`mlda`). Both schemes within a
//! replica share the truth, the measurements, and the initial ensemble, so
//! every comparison is paired. Results come back as long-form rows (one per
//! replica, scheme, and swept value), summary statistics per group, and a
//! failure list — one bad replica never discards the rest of the experiment.

use crate::dynamics::KsParams;
use crate::dynamics::{
    simulate, IntegratorConfig, KsModel, LorenzModel, LorenzParams, Model, State,
};
use crate::error::{Error, Result};
use crate::etkf::{DAConfig, Ensemble};
use crate::hybrid::{
    baseline_forecast, iterate_ml_da, predict_hybrid, train_ml_da, Forecast, TrainingConfig,
};
use crate::metrics::{
    analysis_rms, box_stats, largest_lyapunov, normalized_rms, valid_time, LyapunovConfig,
    ValidTime,
};
use crate::observation::{observe_series, MeasurementOperator, NoiseModel};
use crate::reservoir::{build_reservoir, ReservoirSpec};
use crate::rng::{SeedSpec, StreamRole};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Config/output format version, bumped on breaking schema changes.
pub const SCHEMA_VERSION: u32 = 1;

fn default_kappa() -> f64 {
    0.9
}

/// The chaotic system under study and the knowledge model's error.
///
/// The truth always comes from the exact system (`eps = 0`); `eps` scales
/// the error of the knowledge model used for assimilation and forecasting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Lorenz '63 with the classical parameters, sampled every 0.01 time
    /// units; model error multiplies the driving term by `1 + eps`.
    Lorenz { eps: f64 },
    /// Kuramoto–Sivashinsky on a periodic domain, sampled every 0.25 time
    /// units; model error multiplies the second-derivative term by `1 + eps`.
    Ks { eps: f64, length: f64, grid: usize },
}

impl SystemSpec {
    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::Lorenz { .. } => 3,
            SystemSpec::Ks { grid, .. } => *grid,
        }
    }

    pub fn delta_t(&self) -> f64 {
        match self {
            SystemSpec::Lorenz { .. } => 0.01,
            SystemSpec::Ks { .. } => 0.25,
        }
    }

    pub fn eps(&self) -> f64 {
        match self {
            SystemSpec::Lorenz { eps } | SystemSpec::Ks { eps, .. } => *eps,
        }
    }

    pub fn set_eps(&mut self, value: f64) {
        match self {
            SystemSpec::Lorenz { eps } | SystemSpec::Ks { eps, .. } => *eps = value,
        }
    }

    fn model(&self, eps: f64) -> Result<Arc<dyn Model>> {
        let cfg = IntegratorConfig {
            tau: self.delta_t(),
            delta_t: self.delta_t(),
        };
        Ok(match self {
            SystemSpec::Lorenz { .. } => {
                Arc::new(LorenzModel::new(LorenzParams::with_model_error(eps), cfg)?)
            }
            SystemSpec::Ks { length, grid, .. } => Arc::new(KsModel::new(
                KsParams {
                    eps,
                    length: *length,
                    grid: *grid,
                },
                cfg,
            )?),
        })
    }

    /// The system the truth is drawn from.
    pub fn exact_model(&self) -> Result<Arc<dyn Model>> {
        self.model(0.0)
    }

    /// The imperfect model the schemes are allowed to use.
    pub fn knowledge_model(&self) -> Result<Arc<dyn Model>> {
        self.model(self.eps())
    }

    /// Sampling steps discarded to land the truth on the attractor.
    fn transient_steps(&self) -> usize {
        match self {
            SystemSpec::Lorenz { .. } => 2000,
            SystemSpec::Ks { .. } => 1000,
        }
    }

    /// A random pre-transient initial state.
    fn initial_state(&self, rng: &mut impl rand::Rng) -> State {
        use rand_distr::StandardNormal;
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        match self {
            SystemSpec::Lorenz { .. } => {
                State::from_vec(vec![5.0 * normal(), 5.0 * normal(), 25.0 + 5.0 * normal()])
            }
            SystemSpec::Ks { grid, .. } => {
                // A few random low modes: smooth, attractor-scale amplitude.
                let mut u = State::zeros(*grid);
                for mode in 1..=4 {
                    let (a, b) = (0.3 * normal(), 0.3 * normal());
                    for n in 0..*grid {
                        let arg =
                            2.0 * std::f64::consts::PI * mode as f64 * n as f64 / *grid as f64;
                        u[n] += a * arg.cos() + b * arg.sin();
                    }
                }
                u
            }
        }
    }

    /// Settings that resolve the largest exponent of the exact system well
    /// enough for valid-time normalization.
    fn lyapunov_config(&self) -> LyapunovConfig {
        match self {
            SystemSpec::Lorenz { .. } => LyapunovConfig {
                transient_steps: 2000,
                renorm_interval: 10,
                n_intervals: 20_000,
                d0: 1e-7,
                discard_intervals: 100,
            },
            SystemSpec::Ks { .. } => LyapunovConfig {
                transient_steps: 800,
                renorm_interval: 4,
                n_intervals: 5000,
                d0: 1e-7,
                discard_intervals: 50,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps() > -1.0 && self.eps().is_finite()) {
            return Err(Error::Config(format!(
                "model error eps must be finite and > -1, got {}",
                self.eps()
            )));
        }
        // Surface bad system parameters at config time, not mid-replica.
        self.exact_model()?;
        self.knowledge_model()?;
        Ok(())
    }
}

/// Which state components are measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasuredSpec {
    /// `count` components spread evenly over the state vector.
    Uniform(usize),
    /// Explicit component indices.
    Indices(Vec<usize>),
}

impl MeasuredSpec {
    pub fn operator(&self, state_dim: usize) -> Result<MeasurementOperator> {
        match self {
            MeasuredSpec::Uniform(count) => MeasurementOperator::uniform(*count, state_dim),
            MeasuredSpec::Indices(indices) => MeasurementOperator::new(indices.clone(), state_dim),
        }
    }
}

/// Covariance inflation: one value, or a grid searched per replica.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSpec {
    Single(f64),
    Grid(Vec<f64>),
}

impl RhoSpec {
    pub fn values(&self) -> &[f64] {
        match self {
            RhoSpec::Single(v) => std::slice::from_ref(v),
            RhoSpec::Grid(vs) => vs,
        }
    }

    pub fn single(&self) -> Result<f64> {
        match self {
            RhoSpec::Single(v) => Ok(*v),
            RhoSpec::Grid(_) => Err(Error::Config(
                "this mode needs a single inflation value, not a grid".into(),
            )),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.values().is_empty() {
            return Err(Error::Empty("inflation grid"));
        }
        for &rho in self.values() {
            if !(rho >= 1.0 && rho.is_finite()) {
                return Err(Error::Config(format!(
                    "covariance inflation must be >= 1, got {rho}"
                )));
            }
        }
        Ok(())
    }
}

/// A full experiment description; serializable as the CLI config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub measured: MeasuredSpec,
    /// Measurement noise standard deviation.
    pub sigma: f64,
    pub rho: RhoSpec,
    pub ensemble_size: usize,
    /// Standard deviation of the initial ensemble around the truth.
    pub ensemble_spread: f64,
    /// Synchronization cycles at the start of the assimilation window.
    pub t_sync: usize,
    /// Training cycles after synchronization.
    pub t_train: usize,
    /// Forecast length in sampling steps.
    pub horizon: usize,
    /// Ridge parameter; `None` selects `1e-6 * t_train`.
    #[serde(default)]
    pub beta: Option<f64>,
    pub reservoir: ReservoirSpec,
    pub replicas: usize,
    /// Normalized-error threshold defining the valid time.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Lorenz '63 study at publication scale.
    pub fn lorenz_default(seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            system: SystemSpec::Lorenz { eps: 0.1 },
            measured: MeasuredSpec::Indices(vec![0]),
            sigma: 0.1,
            rho: RhoSpec::Grid(vec![1.0, 1.01, 1.05, 1.1, 1.2, 1.3, 1.5, 2.0, 3.0]),
            ensemble_size: 15,
            ensemble_spread: 1.0,
            t_sync: 100,
            t_train: 20_000,
            horizon: 2500,
            beta: None,
            reservoir: ReservoirSpec {
                size: 1000,
                in_degree: 3,
                spectral_radius: 0.9,
                input_scale: 0.1,
            },
            replicas: 100,
            kappa: default_kappa(),
            seed,
        }
    }

    /// Kuramoto–Sivashinsky study at publication scale.
    pub fn ks_default(seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            system: SystemSpec::Ks {
                eps: 0.1,
                length: 35.0,
                grid: 64,
            },
            measured: MeasuredSpec::Uniform(16),
            sigma: 0.1,
            rho: RhoSpec::Grid(vec![1.0, 1.01, 1.05, 1.1, 1.2, 1.3, 1.5, 2.0, 3.0]),
            ensemble_size: 30,
            ensemble_spread: 0.5,
            t_sync: 200,
            t_train: 10_000,
            horizon: 1000,
            beta: None,
            reservoir: ReservoirSpec {
                size: 2000,
                in_degree: 3,
                spectral_radius: 0.6,
                input_scale: 1.0,
            },
            replicas: 50,
            kappa: default_kappa(),
            seed,
        }
    }

    pub fn window(&self) -> usize {
        self.t_sync + self.t_train + 1
    }

    fn training(&self) -> TrainingConfig {
        TrainingConfig {
            t_sync: self.t_sync,
            t_train: self.t_train,
            beta: self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config schema version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.system.validate()?;
        self.rho.validate()?;
        self.measured.operator(self.system.dim())?;
        NoiseModel::new(self.sigma)?;
        self.training().validate()?;
        self.reservoir.validate(self.system.dim())?;
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble needs at least 2 members".into()));
        }
        if !(self.ensemble_spread > 0.0 && self.ensemble_spread.is_finite()) {
            return Err(Error::Config("ensemble spread must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("forecast horizon must be positive".into()));
        }
        if self.replicas == 0 {
            return Err(Error::Config("at least one replica required".into()));
        }
        if !(self.kappa > 0.0 && self.kappa < 2.0) {
            return Err(Error::Config(format!(
                "valid-time threshold kappa must be in (0, 2), got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Forecast scheme compared in an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Knowledge model forecast from the knowledge-model analysis.
    Baseline,
    /// Reservoir-corrected knowledge model.
    Mlda,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Baseline => "baseline",
            Scheme::Mlda => "mlda",
        })
    }
}

/// One measurement of one scheme in one replica (long-form output).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_param: String,
    pub sweep_value: f64,
    pub replica: usize,
    pub scheme: Scheme,
    /// Lyapunov-scaled forecast valid time; absent for assimilation-only
    /// rows (iterated experiments).
    pub valid_time: Option<f64>,
    /// True when no error crossing happened within the horizon, so
    /// `valid_time` is a lower bound.
    pub censored: Option<bool>,
    pub analysis_rmse_total: f64,
    pub analysis_rmse_measured: f64,
    /// Absent when every component is measured.
    pub analysis_rmse_unmeasured: Option<f64>,
    /// Analysis generation: 0 for knowledge-model DA, `g >= 1` for analyses
    /// assimilated with the generation `g - 1` hybrid.
    pub iteration: usize,
    pub seed: u64,
}

/// Distribution summary of one metric within one row group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_param: String,
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub iteration: usize,
    pub metric: String,
    pub n: usize,
    pub min: f64,
    pub p5: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
    pub max: f64,
    pub mean: f64,
}

/// A replica (or one inflation point of a replica) that errored out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaFailure {
    pub point: usize,
    pub replica: usize,
    pub context: String,
    pub message: String,
}

/// Inflation chosen per scheme by best median valid time over the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRho {
    pub baseline_rho: f64,
    pub baseline_median_valid_time: f64,
    pub mlda_rho: f64,
    pub mlda_median_valid_time: f64,
}

/// Everything an experiment produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// Largest Lyapunov exponent of the exact system (valid-time scale).
    pub lambda_max: f64,
    pub rows: Vec<ResultRow>,
    pub summaries: Vec<SummaryRow>,
    pub best_rho: Option<BestRho>,
    pub failures: Vec<ReplicaFailure>,
}

/// How rows of a point are tagged in the sweep columns.
#[derive(Clone, Copy)]
enum RowTag {
    /// Tag each row with its inflation value (single runs).
    Rho,
    /// Tag every row with a fixed swept parameter (sweep points).
    Fixed { param: &'static str, value: f64 },
}

impl RowTag {
    fn apply(self, rho: f64) -> (String, f64) {
        match self {
            RowTag::Rho => ("rho".to_string(), rho),
            RowTag::Fixed { param, value } => (param.to_string(), value),
        }
    }
}

/// Largest Lyapunov exponent of the exact system, for valid-time scaling.
pub fn system_lambda(cfg: &ExperimentConfig) -> Result<f64> {
    let exact = cfg.system.exact_model()?;
    let mut rng = SeedSpec::new(cfg.seed, 0, 0).stream(StreamRole::Lyapunov);
    let x0 = cfg.system.initial_state(&mut rng);
    let est = largest_lyapunov(exact.as_ref(), &x0, &cfg.system.lyapunov_config(), &mut rng)?;
    Ok(est.lambda)
}

/// Truth trajectory: random initial state, attractor transient, then
/// `total` states sampled every `delta_t`.
fn generate_truth(
    system: &SystemSpec,
    total: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<State>> {
    let exact = system.exact_model()?;
    let x0 = system.initial_state(rng);
    let spin = simulate(exact.as_ref(), &x0, system.transient_steps())?;
    simulate(exact.as_ref(), spin.last().expect("nonempty"), total - 1)
}

/// Valid time of a forecast against the matching truth slice; a blown-up
/// forecast counts as crossing the threshold at the blow-up step.
fn forecast_valid_time(
    forecast: &Forecast,
    future: &[State],
    kappa: f64,
    lambda: f64,
    delta_t: f64,
) -> Result<ValidTime> {
    if forecast.states.is_empty() {
        return match forecast.truncated {
            Some(step) => Ok(ValidTime {
                time: lambda * step as f64 * delta_t,
                censored: false,
            }),
            None => Err(Error::Empty("forecast")),
        };
    }
    let errors = normalized_rms(&forecast.states, &future[..forecast.states.len()])?;
    let vt = valid_time(&errors, kappa, lambda, delta_t)?;
    match forecast.truncated {
        Some(step) if vt.censored => Ok(ValidTime {
            time: lambda * step as f64 * delta_t,
            censored: false,
        }),
        _ => Ok(vt),
    }
}

struct ReplicaProducts {
    rows: Vec<ResultRow>,
    failures: Vec<ReplicaFailure>,
}

fn fail(point: usize, replica: usize, context: &str, err: &Error) -> ReplicaFailure {
    ReplicaFailure {
        point,
        replica,
        context: context.to_string(),
        message: err.to_string(),
    }
}

/// One replica of the paired baseline/hybrid comparison.
fn run_replica(
    cfg: &ExperimentConfig,
    point: usize,
    replica: usize,
    tag: RowTag,
    lambda: f64,
) -> ReplicaProducts {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    macro_rules! try_setup {
        ($expr:expr, $context:literal) => {
            match $expr {
                Ok(v) => v,
                Err(e) => {
                    failures.push(fail(point, replica, $context, &e));
                    return ReplicaProducts { rows, failures };
                }
            }
        };
    }

    let seeds = SeedSpec::new(cfg.seed, point as u32, replica as u32);
    let window = cfg.window();
    let dim = cfg.system.dim();
    let delta_t = cfg.system.delta_t();
    let truth = try_setup!(
        generate_truth(
            &cfg.system,
            window + cfg.horizon,
            &mut seeds.stream(StreamRole::TruthInit),
        ),
        "truth generation"
    );
    let h = try_setup!(cfg.measured.operator(dim), "measurement operator");
    let noise = try_setup!(NoiseModel::new(cfg.sigma), "noise model");
    let measurements = try_setup!(
        observe_series(
            &truth[..window],
            &h,
            &noise,
            &mut seeds.stream(StreamRole::MeasurementNoise),
        ),
        "measurement synthesis"
    );
    let matrices = Arc::new(try_setup!(
        build_reservoir(&cfg.reservoir, dim, &seeds),
        "reservoir build"
    ));
    let init = try_setup!(
        Ensemble::random_around(
            &truth[0],
            cfg.ensemble_spread,
            cfg.ensemble_size,
            &mut seeds.stream(StreamRole::EnsembleInit),
        ),
        "initial ensemble"
    );
    let knowledge = try_setup!(cfg.system.knowledge_model(), "knowledge model");
    let future = &truth[window..];
    let train = cfg.training();

    for &rho in cfg.rho.values() {
        let context = format!("rho={rho}");
        let result = (|| -> Result<[ResultRow; 2]> {
            let da = DAConfig::new(h.clone(), noise, rho)?;
            let (hybrid, series) = train_ml_da(
                knowledge.clone(),
                matrices.clone(),
                &measurements,
                &da,
                init.clone(),
                &train,
            )?;
            let arms = analysis_rms(&series.means, &truth[..window], h.indices())?;
            let unmeasured = arms.unmeasured.is_finite().then_some(arms.unmeasured);
            let (sweep_param, sweep_value) = tag.apply(rho);
            let row = |scheme: Scheme, vt: ValidTime| ResultRow {
                sweep_param: sweep_param.clone(),
                sweep_value,
                replica,
                scheme,
                valid_time: Some(vt.time),
                censored: Some(vt.censored),
                analysis_rmse_total: arms.total,
                analysis_rmse_measured: arms.measured,
                analysis_rmse_unmeasured: unmeasured,
                iteration: 0,
                seed: cfg.seed,
            };
            let base = baseline_forecast(knowledge.as_ref(), &hybrid.x0, cfg.horizon)?;
            let vt_base = forecast_valid_time(&base, future, cfg.kappa, lambda, delta_t)?;
            let hyb = predict_hybrid(&hybrid, cfg.horizon)?;
            let vt_hyb = forecast_valid_time(&hyb, future, cfg.kappa, lambda, delta_t)?;
            Ok([row(Scheme::Baseline, vt_base), row(Scheme::Mlda, vt_hyb)])
        })();
        match result {
            Ok(pair) => rows.extend(pair),
            Err(e) => failures.push(fail(point, replica, &context, &e)),
        }
    }
    ReplicaProducts { rows, failures }
}

/// Run every replica of one sweep point in parallel.
fn run_point(
    cfg: &ExperimentConfig,
    point: usize,
    tag: RowTag,
    lambda: f64,
) -> (Vec<ResultRow>, Vec<ReplicaFailure>) {
    let products: Vec<ReplicaProducts> = (0..cfg.replicas)
        .into_par_iter()
        .map(|replica| run_replica(cfg, point, replica, tag, lambda))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for p in products {
        rows.extend(p.rows);
        failures.extend(p.failures);
    }
    (rows, failures)
}

/// Group rows by (sweep value, scheme, iteration) and summarize each metric.
///
/// This is the same aggregation `run_experiment` applies before returning;
/// exposed so persisted row tables can be re-summarized offline.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (u64, Scheme, usize);
    type Metric = (&'static str, fn(&ResultRow) -> Option<f64>);
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.sweep_value.to_bits(), row.scheme, row.iteration))
            .or_default()
            .push(row);
    }
    let metrics: [Metric; 4] = [
        ("valid_time", |r| r.valid_time),
        ("analysis_rmse_total", |r| Some(r.analysis_rmse_total)),
        ("analysis_rmse_measured", |r| Some(r.analysis_rmse_measured)),
        ("analysis_rmse_unmeasured", |r| r.analysis_rmse_unmeasured),
    ];
    let mut out = Vec::new();
    for ((bits, scheme, iteration), members) in &groups {
        for (metric, extract) in &metrics {
            let values: Vec<f64> = members
                .iter()
                .filter_map(|r| extract(r))
                .filter(|v| v.is_finite())
                .collect();
            let Ok(stats) = box_stats(&values) else {
                continue;
            };
            out.push(SummaryRow {
                sweep_param: members[0].sweep_param.clone(),
                sweep_value: f64::from_bits(*bits),
                scheme: *scheme,
                iteration: *iteration,
                metric: metric.to_string(),
                n: stats.n,
                min: stats.min,
                p5: stats.p5,
                p25: stats.p25,
                median: stats.median,
                p75: stats.p75,
                p95: stats.p95,
                max: stats.max,
                mean: stats.mean,
            });
        }
    }
    out
}

/// Median valid time per inflation value for one scheme, in grid order.
fn medians_by_rho(summaries: &[SummaryRow], grid: &[f64], scheme: Scheme) -> Vec<Option<f64>> {
    grid.iter()
        .map(|rho| {
            summaries
                .iter()
                .find(|s| {
                    s.scheme == scheme
                        && s.metric == "valid_time"
                        && s.sweep_value.to_bits() == rho.to_bits()
                })
                .map(|s| s.median)
        })
        .collect()
}

fn pick_best_rho(summaries: &[SummaryRow], grid: &[f64]) -> Option<BestRho> {
    let pick = |scheme: Scheme| -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for (rho, median) in grid.iter().zip(medians_by_rho(summaries, grid, scheme)) {
            let Some(median) = median else { continue };
            if best.map_or(true, |(_, b)| median > b) {
                best = Some((*rho, median));
            }
        }
        best
    };
    let (baseline_rho, baseline_median_valid_time) = pick(Scheme::Baseline)?;
    let (mlda_rho, mlda_median_valid_time) = pick(Scheme::Mlda)?;
    Some(BestRho {
        baseline_rho,
        baseline_median_valid_time,
        mlda_rho,
        mlda_median_valid_time,
    })
}

fn finish(
    cfg: &ExperimentConfig,
    lambda: f64,
    rows: Vec<ResultRow>,
    failures: Vec<ReplicaFailure>,
    grid_for_best: Option<&[f64]>,
) -> Result<ExperimentOutput> {
    if rows.is_empty() {
        let detail = failures
            .first()
            .map(|f| format!("; first failure ({}): {}", f.context, f.message))
            .unwrap_or_default();
        return Err(Error::Config(format!(
            "no replica produced results{detail}"
        )));
    }
    let summaries = summarize(&rows);
    let best_rho = grid_for_best
        .filter(|g| g.len() > 1)
        .and_then(|g| pick_best_rho(&summaries, g));
    Ok(ExperimentOutput {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        lambda_max: lambda,
        rows,
        summaries,
        best_rho,
        failures,
    })
}

/// Run the paired baseline/hybrid experiment described by `cfg`.
///
/// Every row is tagged `sweep_param = "rho"`, making a grid config a
/// per-replica inflation search; `best_rho` then reports each scheme's
/// best-median choice.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let lambda = system_lambda(cfg)?;
    let (rows, failures) = run_point(cfg, 0, RowTag::Rho, lambda);
    finish(cfg, lambda, rows, failures, Some(cfg.rho.values()))
}

/// Parameter swept by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Sigma,
    ModelError,
    Rho,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Sigma => "sigma",
            SweepParam::ModelError => "model_error",
            SweepParam::Rho => "rho",
            SweepParam::Beta => "beta",
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: f64) {
        match self {
            SweepParam::Sigma => cfg.sigma = value,
            SweepParam::ModelError => cfg.system.set_eps(value),
            SweepParam::Rho => cfg.rho = RhoSpec::Single(value),
            SweepParam::Beta => cfg.beta = Some(value),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sweep one parameter over `values`, running the full replicated
/// experiment at each point. Points use independent random streams, so
/// truths differ across points; within a point, schemes stay paired.
///
/// A sweep of anything but the inflation itself requires a single `rho` in
/// the base config (rows can carry only one swept value).
pub fn sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    if param != SweepParam::Rho {
        cfg.rho.single()?;
    }
    let lambda = system_lambda(cfg)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (point, &value) in values.iter().enumerate() {
        let mut point_cfg = cfg.clone();
        param.apply(&mut point_cfg, value);
        point_cfg.validate()?;
        let tag = RowTag::Fixed {
            param: param.name(),
            value,
        };
        let (r, f) = run_point(&point_cfg, point, tag, lambda);
        rows.extend(r);
        failures.extend(f);
    }
    finish(cfg, lambda, rows, failures, None)
}

/// Iterated assimilation experiment: per replica, run the generations of
/// DA-train-reassimilate and report each generation's analysis error.
///
/// Rows carry no valid time; generation 0 (knowledge-model DA) is tagged
/// `baseline`, later generations `mlda`, with `iteration` the generation.
pub fn iterate_experiment(cfg: &ExperimentConfig, iterations: usize) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let rho = cfg.rho.single()?;
    if iterations == 0 {
        return Err(Error::Config(
            "iterated experiment needs at least one hybrid generation".into(),
        ));
    }
    let lambda = system_lambda(cfg)?;
    let products: Vec<ReplicaProducts> = (0..cfg.replicas)
        .into_par_iter()
        .map(|replica| iterate_replica(cfg, replica, rho, iterations))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for p in products {
        rows.extend(p.rows);
        failures.extend(p.failures);
    }
    finish(cfg, lambda, rows, failures, None)
}

fn iterate_replica(
    cfg: &ExperimentConfig,
    replica: usize,
    rho: f64,
    iterations: usize,
) -> ReplicaProducts {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let result = (|| -> Result<Vec<ResultRow>> {
        let seeds = SeedSpec::new(cfg.seed, 0, replica as u32);
        let window = cfg.window();
        let dim = cfg.system.dim();
        let truth = generate_truth(
            &cfg.system,
            window + cfg.horizon,
            &mut seeds.stream(StreamRole::TruthInit),
        )?;
        let h = cfg.measured.operator(dim)?;
        let noise = NoiseModel::new(cfg.sigma)?;
        let measurements = observe_series(
            &truth[..window],
            &h,
            &noise,
            &mut seeds.stream(StreamRole::MeasurementNoise),
        )?;
        let matrices = Arc::new(build_reservoir(&cfg.reservoir, dim, &seeds)?);
        let init = Ensemble::random_around(
            &truth[0],
            cfg.ensemble_spread,
            cfg.ensemble_size,
            &mut seeds.stream(StreamRole::EnsembleInit),
        )?;
        let knowledge = cfg.system.knowledge_model()?;
        let da = DAConfig::new(h, noise, rho)?;
        let (records, _hybrid) = iterate_ml_da(
            knowledge,
            matrices,
            &measurements,
            &da,
            init,
            &cfg.training(),
            iterations,
            Some(&truth[..window]),
        )?;
        Ok(records
            .iter()
            .map(|record| {
                let arms = record
                    .analysis_error
                    .as_ref()
                    .expect("truth was supplied to iterate_ml_da");
                ResultRow {
                    sweep_param: "rho".to_string(),
                    sweep_value: rho,
                    replica,
                    scheme: if record.iteration == 0 {
                        Scheme::Baseline
                    } else {
                        Scheme::Mlda
                    },
                    valid_time: None,
                    censored: None,
                    analysis_rmse_total: arms.total,
                    analysis_rmse_measured: arms.measured,
                    analysis_rmse_unmeasured: arms
                        .unmeasured
                        .is_finite()
                        .then_some(arms.unmeasured),
                    iteration: record.iteration,
                    seed: cfg.seed,
                }
            })
            .collect())
    })();
    match result {
        Ok(r) => rows.extend(r),
        Err(e) => failures.push(fail(0, replica, "iterated assimilation", &e)),
    }
    ReplicaProducts { rows, failures }
}

/// Write long-form rows as CSV (header included).
pub fn write_rows_csv<W: std::io::Write>(writer: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Write summary statistics as CSV (header included).
pub fn write_summary_csv<W: std::io::Write>(writer: W, summaries: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in summaries {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the complete output as one JSON document.
pub fn write_json<W: std::io::Write>(mut writer: W, output: &ExperimentOutput) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, output)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Read rows back from CSV.
pub fn read_rows_csv<R: std::io::Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for record in r.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A Lorenz config small enough for unit tests (seconds, not minutes).
    fn tiny_lorenz(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            rho: RhoSpec::Single(1.05),
            t_sync: 10,
            t_train: 60,
            horizon: 30,
            ensemble_size: 5,
            replicas: 2,
            reservoir: ReservoirSpec {
                size: 30,
                in_degree: 3,
                spectral_radius: 0.9,
                input_scale: 0.1,
            },
            ..ExperimentConfig::lorenz_default(seed)
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = ExperimentConfig::ks_default(7);
        cfg.measured = MeasuredSpec::Indices(vec![0, 5, 9]);
        cfg.beta = Some(0.25);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);

        // Grid and single rho forms both survive.
        let single = tiny_lorenz(1);
        let back: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&single).unwrap()).unwrap();
        assert_eq!(single, back);
    }

    #[test]
    fn config_rejects_unknown_fields_and_bad_versions() {
        let mut value = serde_json::to_value(tiny_lorenz(1)).unwrap();
        value["surprise"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ExperimentConfig>(value).is_err());

        let mut wrong = tiny_lorenz(1);
        wrong.schema_version = 99;
        assert!(wrong.validate().is_err());

        let mut bad = tiny_lorenz(1);
        bad.rho = RhoSpec::Single(0.5);
        assert!(bad.validate().is_err());

        let mut bad = tiny_lorenz(1);
        bad.kappa = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn experiment_is_deterministic_and_paired() {
        let cfg = tiny_lorenz(42);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.lambda_max, b.lambda_max);
        assert!(a.failures.is_empty(), "failures: {:?}", a.failures);

        // One baseline and one mlda row per replica, sharing the analysis.
        assert_eq!(a.rows.len(), 2 * cfg.replicas);
        for pair in a.rows.chunks(2) {
            assert_eq!(pair[0].scheme, Scheme::Baseline);
            assert_eq!(pair[1].scheme, Scheme::Mlda);
            assert_eq!(pair[0].replica, pair[1].replica);
            assert_eq!(pair[0].analysis_rmse_total, pair[1].analysis_rmse_total);
            assert!(pair[0].valid_time.unwrap() > 0.0);
            // Only component 0 is measured, so the unmeasured subset exists.
            assert!(pair[0].analysis_rmse_unmeasured.unwrap().is_finite());
            assert_eq!(pair[0].sweep_param, "rho");
            assert_eq!(pair[0].sweep_value, 1.05);
            assert_eq!(pair[0].iteration, 0);
            assert_eq!(pair[0].seed, 42);
        }
        // Truths differ between replicas, so the analyses do too.
        assert_ne!(a.rows[0].analysis_rmse_total, a.rows[2].analysis_rmse_total);
        // Lorenz largest exponent, loosely.
        assert!(
            (0.7..1.1).contains(&a.lambda_max),
            "lambda {}",
            a.lambda_max
        );
    }

    #[test]
    fn rho_grid_tags_rows_and_selects_a_best_value() {
        let mut cfg = tiny_lorenz(3);
        cfg.rho = RhoSpec::Grid(vec![1.05, 1.3]);
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.rows.len(), 2 * 2 * cfg.replicas);
        let best = out.best_rho.expect("grid run must pick best rho");
        assert!([1.05, 1.3].contains(&best.baseline_rho));
        assert!([1.05, 1.3].contains(&best.mlda_rho));
        assert!(best.baseline_median_valid_time > 0.0);
        assert!(best.mlda_median_valid_time > 0.0);
        // Summaries exist for each (rho, scheme) and metric, with full n.
        let vt_groups: Vec<&SummaryRow> = out
            .summaries
            .iter()
            .filter(|s| s.metric == "valid_time")
            .collect();
        assert_eq!(vt_groups.len(), 4);
        assert!(vt_groups.iter().all(|s| s.n == cfg.replicas));
    }

    #[test]
    fn sweeps_tag_points_and_reject_rho_grids() {
        let mut cfg = tiny_lorenz(5);
        cfg.replicas = 1;
        let out = sweep(&cfg, SweepParam::Sigma, &[0.05, 0.5]).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert!(out.rows.iter().all(|r| r.sweep_param == "sigma"));
        assert_eq!(out.rows[0].sweep_value, 0.05);
        assert_eq!(out.rows[2].sweep_value, 0.5);
        // Independent streams per point: different truth, different result.
        assert_ne!(
            out.rows[0].analysis_rmse_total,
            out.rows[2].analysis_rmse_total
        );

        let mut grid = tiny_lorenz(5);
        grid.rho = RhoSpec::Grid(vec![1.0, 1.1]);
        assert!(sweep(&grid, SweepParam::Sigma, &[0.1]).is_err());
        // Sweeping rho itself is fine even from a grid config.
        assert!(sweep(&grid, SweepParam::Rho, &[1.0, 1.1]).is_ok());
    }

    #[test]
    fn iterated_experiment_reports_generations() {
        let mut cfg = tiny_lorenz(9);
        cfg.system.set_eps(0.2);
        cfg.t_train = 100;
        let out = iterate_experiment(&cfg, 2).unwrap();
        assert!(out.failures.is_empty(), "failures: {:?}", out.failures);
        assert_eq!(out.rows.len(), 3 * cfg.replicas);
        for rows in out.rows.chunks(3) {
            assert_eq!(rows[0].scheme, Scheme::Baseline);
            assert_eq!(rows[0].iteration, 0);
            assert_eq!(rows[1].scheme, Scheme::Mlda);
            assert_eq!(rows[1].iteration, 1);
            assert_eq!(rows[2].iteration, 2);
            for row in rows {
                assert!(row.valid_time.is_none() && row.censored.is_none());
                assert!(row.analysis_rmse_total.is_finite());
            }
        }
        // A rho grid cannot drive the iterated mode.
        let mut grid = tiny_lorenz(9);
        grid.rho = RhoSpec::Grid(vec![1.0, 2.0]);
        assert!(iterate_experiment(&grid, 1).is_err());
    }

    #[test]
    fn per_rho_failures_leave_other_rows_standing() {
        // An absurd inflation explodes the ensemble within a few cycles;
        // the sane grid point must survive alongside the recorded failure.
        let mut cfg = tiny_lorenz(11);
        cfg.rho = RhoSpec::Grid(vec![1.05, 1e12]);
        let out = run_experiment(&cfg).unwrap();
        let sane: Vec<_> = out.rows.iter().filter(|r| r.sweep_value == 1.05).collect();
        assert_eq!(sane.len(), 2 * cfg.replicas);
        assert_eq!(out.failures.len(), cfg.replicas);
        assert!(out
            .failures
            .iter()
            .all(|f| f.context == "rho=1000000000000"));
    }

    #[test]
    fn rows_round_trip_through_csv_with_the_pinned_header() {
        let cfg = tiny_lorenz(13);
        let out = run_experiment(&cfg).unwrap();
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &out.rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "sweep_param,sweep_value,replica,scheme,valid_time,censored,\
             analysis_rmse_total,analysis_rmse_measured,analysis_rmse_unmeasured,\
             iteration,seed"
        );
        let back = read_rows_csv(buf.as_slice()).unwrap();
        assert_eq!(out.rows, back);

        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &out.summaries).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("sweep_param,"));

        let mut buf = Vec::new();
        write_json(&mut buf, &out).unwrap();
        let parsed: ExperimentOutput = serde_json::from_slice(&buf).unwrap();
        assert_eq!(parsed, out);
    }

    #[test]
    fn truncated_forecasts_get_finite_uncensored_valid_times() {
        let lambda = 1.0;
        let dt = 0.5;
        let future = vec![State::from_vec(vec![1.0]); 8];
        // Blown up at step 3 without crossing first: VT = lambda * 3 * dt.
        let fc = Forecast {
            states: vec![State::from_vec(vec![1.05]), State::from_vec(vec![1.1])],
            truncated: Some(3),
        };
        let vt = forecast_valid_time(&fc, &future, 0.9, lambda, dt).unwrap();
        assert!(!vt.censored);
        assert!((vt.time - 1.5).abs() < 1e-12);
        // Blown up immediately: VT as if crossing at step 1.
        let fc = Forecast {
            states: vec![],
            truncated: Some(1),
        };
        let vt = forecast_valid_time(&fc, &future, 0.9, lambda, dt).unwrap();
        assert!(!vt.censored && (vt.time - 0.5).abs() < 1e-12);
        // Complete and under threshold: censored at the horizon.
        let fc = Forecast {
            states: vec![State::from_vec(vec![1.0]); 8],
            truncated: None,
        };
        let vt = forecast_valid_time(&fc, &future, 0.9, lambda, dt).unwrap();
        assert!(vt.censored && (vt.time - 4.0).abs() < 1e-12);
    }
}
