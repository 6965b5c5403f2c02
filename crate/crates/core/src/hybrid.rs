//! Training and running the hybrid forecast model, including the iterated
//! assimilation scheme.
//!
//! The hybrid model corrects the knowledge model's one-step forecast with a
//! reservoir readout trained on analysis states — the output of a DA run —
//! rather than on (unavailable) true states. Prediction alternates
//!
//! ```text
//! r_{j+1}   = tanh(A r_j + W_in x_j)
//! x^M_{j+1} = knowledge-model step from x_j
//! x_{j+1}   = W_out [r_{j+1}; x^M_{j+1}]
//! ```
//!
//! seeded with the final analysis state. In the iterated scheme the hybrid
//! itself becomes the DA forecast model: each ensemble member carries its own
//! reservoir (driven by that member's analyses), the assimilation window is
//! re-run, and the readout is refit on the improved analyses.

use crate::dynamics::{Model, State};
use crate::error::{Error, Result};
use crate::etkf::{etkf_analysis, forecast_ensemble, run_da, AnalysisSeries, DAConfig, Ensemble};
use crate::metrics::{analysis_rms, AnalysisRms};
use crate::observation::MeasurementRecord;
use crate::reservoir::{
    drive, fit_readout, hybrid_readout, reservoir_step, ReadoutMatrix, ReservoirMatrices,
};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// A hybrid state beyond this norm ends the forecast as a blow-up.
pub const HYBRID_BLOW_UP_NORM: f64 = 1e6;

/// Assimilation-window layout and ridge strength for readout training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Synchronization cycles before the training interval; these analyses
    /// drive the reservoir but contribute no training pairs.
    pub t_sync: usize,
    /// Number of training pairs.
    pub t_train: usize,
    /// Ridge parameter; `None` selects `1e-6 * t_train`.
    pub beta: Option<f64>,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_sync == 0 || self.t_train == 0 {
            return Err(Error::Config(
                "sync and training intervals must be at least one cycle".into(),
            ));
        }
        if let Some(beta) = self.beta {
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(Error::Config(format!(
                    "ridge parameter must be nonnegative, got {beta}"
                )));
            }
        }
        Ok(())
    }

    /// Measurement count spanned by the window: sync cycles, training
    /// cycles, and the shared initial analysis.
    pub fn window(&self) -> usize {
        self.t_sync + self.t_train + 1
    }

    pub fn resolved_beta(&self) -> f64 {
        self.beta.unwrap_or(1e-6 * self.t_train as f64)
    }
}

/// Everything needed to run hybrid forecasts from the end of the window.
#[derive(Clone)]
pub struct TrainedHybrid {
    pub matrices: Arc<ReservoirMatrices>,
    pub readout: ReadoutMatrix,
    pub model: Arc<dyn Model>,
    /// Reservoir state synchronized to the analyses, valid at the final
    /// analysis time (it has consumed every analysis except the last).
    pub r0: DVector<f64>,
    /// Final analysis mean, the forecast initial condition.
    pub x0: State,
}

/// A forecast trajectory; `states[i]` is the state `i + 1` sampling
/// intervals past the initial condition.
#[derive(Clone, Debug)]
pub struct Forecast {
    pub states: Vec<State>,
    /// `Some(j)` if prediction step `j` (1-based) blew up; `states` then
    /// holds the `j - 1` finite states before it.
    pub truncated: Option<usize>,
}

impl Forecast {
    pub fn is_complete(&self) -> bool {
        self.truncated.is_none()
    }
}

/// Drive a fresh reservoir through the analysis means and fit the readout.
///
/// `means[w]` is the analysis at window index `w`; training pairs cover
/// `w in [t_sync + 1, means.len() - 1]`, each pairing the features
/// `[r_w; step(means[w-1])]` with the target `means[w]`. Returns the fitted
/// readout and the reservoir state at the final window index.
fn fit_from_analyses(
    model: &dyn Model,
    matrices: &ReservoirMatrices,
    means: &[State],
    t_sync: usize,
    beta: f64,
) -> Result<(ReadoutMatrix, DVector<f64>)> {
    let len = means.len();
    if len < t_sync + 2 {
        return Err(Error::Config(format!(
            "analysis series of {len} cycles leaves no training pairs after {t_sync} sync cycles"
        )));
    }
    // states[k] is the reservoir state after consuming means[0..=k], i.e.
    // the reservoir at window index k + 1; the last analysis is input only
    // to prediction, not training.
    let states = drive(
        matrices,
        &DVector::zeros(matrices.size()),
        &means[..len - 1],
    )?;
    let mut forecasts = Vec::with_capacity(len - 1 - t_sync);
    let mut targets = Vec::with_capacity(len - 1 - t_sync);
    for w in (t_sync + 1)..len {
        forecasts.push(model.step(&means[w - 1])?);
        targets.push(means[w].clone());
    }
    let readout = fit_readout(&states[t_sync..len - 1], &forecasts, &targets, beta)?;
    let r_end = states[len - 2].clone();
    Ok((readout, r_end))
}

/// Train a hybrid from scratch: run knowledge-model DA over the window, then
/// fit the readout on the analysis means.
///
/// `measurements` must span exactly the training window; `init` is the
/// ensemble at the first measurement time.
pub fn train_ml_da(
    model: Arc<dyn Model>,
    matrices: Arc<ReservoirMatrices>,
    measurements: &[MeasurementRecord],
    da: &DAConfig,
    init: Ensemble,
    train: &TrainingConfig,
) -> Result<(TrainedHybrid, AnalysisSeries)> {
    train.validate()?;
    check_window(measurements.len(), train)?;
    check_dims(model.as_ref(), matrices.as_ref())?;
    let series = run_da(model.as_ref(), measurements, da, init)?;
    let (readout, r0) = fit_from_analyses(
        model.as_ref(),
        matrices.as_ref(),
        &series.means,
        train.t_sync,
        train.resolved_beta(),
    )?;
    let x0 = series.means.last().expect("nonempty window").clone();
    Ok((
        TrainedHybrid {
            matrices,
            readout,
            model,
            r0,
            x0,
        },
        series,
    ))
}

/// Run the hybrid forward `horizon` sampling intervals from its final
/// analysis state.
pub fn predict_hybrid(hybrid: &TrainedHybrid, horizon: usize) -> Result<Forecast> {
    let mut states = Vec::with_capacity(horizon);
    let mut r = hybrid.r0.clone();
    let mut x = hybrid.x0.clone();
    for j in 1..=horizon {
        r = reservoir_step(&hybrid.matrices, &r, &x);
        let xm = match hybrid.model.step(&x) {
            Ok(v) => v,
            Err(Error::BlowUp { .. }) | Err(Error::NonFinite(_)) => {
                return Ok(Forecast {
                    states,
                    truncated: Some(j),
                })
            }
            Err(e) => return Err(e),
        };
        let xh = hybrid_readout(&hybrid.readout, &r, &xm)?;
        let norm = xh.norm();
        if !norm.is_finite() || norm > HYBRID_BLOW_UP_NORM {
            return Ok(Forecast {
                states,
                truncated: Some(j),
            });
        }
        states.push(xh.clone());
        x = xh;
    }
    Ok(Forecast {
        states,
        truncated: None,
    })
}

/// Run the knowledge model alone from `x0`, with the same blow-up handling
/// as the hybrid (for paired comparisons).
pub fn baseline_forecast(model: &dyn Model, x0: &State, horizon: usize) -> Result<Forecast> {
    let mut states = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    for j in 1..=horizon {
        x = match model.step(&x) {
            Ok(v) => v,
            Err(Error::BlowUp { .. }) | Err(Error::NonFinite(_)) => {
                return Ok(Forecast {
                    states,
                    truncated: Some(j),
                })
            }
            Err(e) => return Err(e),
        };
        states.push(x.clone());
    }
    Ok(Forecast {
        states,
        truncated: None,
    })
}

/// One generation of the iterated scheme.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    /// Generation index: 0 is the knowledge-model DA, generation `i >= 1`
    /// assimilated with the hybrid trained on generation `i - 1` analyses.
    pub iteration: usize,
    /// Analysis means over the full window (sync prefix included; the
    /// prefix is shared by every generation).
    pub analyses: Vec<State>,
    /// Analysis error against the true states, when truth was supplied.
    pub analysis_error: Option<AnalysisRms>,
}

/// Iterated ML-DA: assimilate, train, re-assimilate with the hybrid.
///
/// The sync segment is always assimilated with the knowledge model and is
/// computed once; each ensemble member carries a reservoir (initialized to
/// zero) driven by that member's own analyses across the sync segment, and
/// those reservoir states are reused by every generation. Generation 0
/// finishes the window with the knowledge model; generation `i >= 1` builds
/// each background member as the hybrid forecast `W_out [r^k; step(x^{a,k})]`
/// of the previous cycle's analysis member, with the ETKF transform applied
/// to the physical states only. After every generation the readout is refit
/// on that generation's analysis means, so the returned hybrid reflects the
/// final generation.
///
/// `truth[w]`, when given, must hold the true state at window index `w` and
/// enables per-generation analysis errors.
#[allow(clippy::too_many_arguments)]
pub fn iterate_ml_da(
    model: Arc<dyn Model>,
    matrices: Arc<ReservoirMatrices>,
    measurements: &[MeasurementRecord],
    da: &DAConfig,
    init: Ensemble,
    train: &TrainingConfig,
    iterations: usize,
    truth: Option<&[State]>,
) -> Result<(Vec<IterationRecord>, TrainedHybrid)> {
    train.validate()?;
    check_window(measurements.len(), train)?;
    check_dims(model.as_ref(), matrices.as_ref())?;
    if !measurements.windows(2).all(|w| w[1].step == w[0].step + 1) {
        return Err(Error::Config(
            "measurements must be at consecutive sampling steps".into(),
        ));
    }
    let window = train.window();
    if let Some(t) = truth {
        if t.len() != window {
            return Err(Error::Dimension(format!(
                "truth series has {} states, window has {window}",
                t.len()
            )));
        }
    }
    let e = init.size();
    let m = model.dim();
    let dr = matrices.size();
    let beta = train.resolved_beta();

    // Knowledge-model sync, computed once: analyses through window index
    // t_sync, plus each member's reservoir state (which by the end has
    // consumed that member's analyses at indices 0..t_sync).
    let mut ensemble = etkf_analysis(&init, &measurements[0].y, da)?;
    let mut sync_means = Vec::with_capacity(train.t_sync + 1);
    sync_means.push(ensemble.mean());
    let mut member_rs = vec![DVector::zeros(dr); e];
    for record in &measurements[1..=train.t_sync] {
        for (k, r) in member_rs.iter_mut().enumerate() {
            *r = reservoir_step(&matrices, r, &ensemble.member(k));
        }
        let background = forecast_ensemble(model.as_ref(), &ensemble)?;
        ensemble = etkf_analysis(&background, &record.y, da)?;
        sync_means.push(ensemble.mean());
    }
    let sync_ensemble = ensemble;

    let rms = |means: &[State]| -> Result<Option<AnalysisRms>> {
        truth
            .map(|t| analysis_rms(means, t, da.h.indices()))
            .transpose()
    };

    // Generation 0: finish the window with the knowledge model.
    let mut full = sync_means.clone();
    let mut ensemble = sync_ensemble.clone();
    for record in &measurements[train.t_sync + 1..] {
        let background = forecast_ensemble(model.as_ref(), &ensemble)?;
        ensemble = etkf_analysis(&background, &record.y, da)?;
        full.push(ensemble.mean());
    }
    let (mut readout, mut r_end) =
        fit_from_analyses(model.as_ref(), matrices.as_ref(), &full, train.t_sync, beta)?;
    let mut records = Vec::with_capacity(iterations + 1);
    records.push(IterationRecord {
        iteration: 0,
        analysis_error: rms(&full)?,
        analyses: full,
    });

    // Hybrid generations.
    let mut features = DMatrix::zeros(dr + m, e);
    let mut background = DMatrix::zeros(m, e);
    for generation in 1..=iterations {
        let mut ensemble = sync_ensemble.clone();
        let mut rs = member_rs.clone();
        let mut full = sync_means.clone();
        for (offset, record) in measurements[train.t_sync + 1..].iter().enumerate() {
            for (k, r) in rs.iter_mut().enumerate() {
                let xa = ensemble.member(k);
                *r = reservoir_step(&matrices, r, &xa);
                features.view_mut((0, k), (dr, 1)).copy_from(r);
                features
                    .view_mut((dr, k), (m, 1))
                    .copy_from(&model.step(&xa)?);
            }
            background.gemm(1.0, &readout.w, &features, 0.0);
            for k in 0..e {
                let norm = background.column(k).norm();
                if !norm.is_finite() {
                    return Err(Error::NonFinite("hybrid background member"));
                }
                if norm > HYBRID_BLOW_UP_NORM {
                    return Err(Error::BlowUp {
                        norm,
                        threshold: HYBRID_BLOW_UP_NORM,
                        step: train.t_sync + 1 + offset,
                    });
                }
            }
            ensemble = etkf_analysis(&Ensemble::new(background.clone())?, &record.y, da)?;
            full.push(ensemble.mean());
        }
        (readout, r_end) =
            fit_from_analyses(model.as_ref(), matrices.as_ref(), &full, train.t_sync, beta)?;
        records.push(IterationRecord {
            iteration: generation,
            analysis_error: rms(&full)?,
            analyses: full,
        });
    }

    let last = records.last().expect("at least generation 0");
    let x0 = last.analyses[window - 1].clone();
    Ok((
        records,
        TrainedHybrid {
            matrices,
            readout,
            model,
            r0: r_end,
            x0,
        },
    ))
}

fn check_window(measurements: usize, train: &TrainingConfig) -> Result<()> {
    if measurements != train.window() {
        return Err(Error::Dimension(format!(
            "window needs {} measurements (sync {} + train {} + 1), got {measurements}",
            train.window(),
            train.t_sync,
            train.t_train
        )));
    }
    Ok(())
}

fn check_dims(model: &dyn Model, matrices: &ReservoirMatrices) -> Result<()> {
    if matrices.input.inputs() != model.dim() {
        return Err(Error::Dimension(format!(
            "reservoir expects {} inputs, model state has {} components",
            matrices.input.inputs(),
            model.dim()
        )));
    }
    Ok(())
}
