//! Forecast and analysis error measures, valid time, Lyapunov exponents, and
//! summary statistics.

use crate::dynamics::{Model, State};
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Per-step normalized forecast errors.
#[derive(Clone, Debug)]
pub struct ErrorSeries {
    pub values: Vec<f64>,
}

/// e_j = ||forecast_j - truth_j|| / sqrt(<||truth||^2>), the average taken
/// over the whole prediction interval, so e ~ 1 marks errors as large as a
/// typical state.
pub fn normalized_rms(forecast: &[State], truth: &[State]) -> Result<ErrorSeries> {
    if forecast.is_empty() {
        return Err(Error::Empty("forecast series"));
    }
    if forecast.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "forecast has {} states, truth has {}",
            forecast.len(),
            truth.len()
        )));
    }
    let scale = (truth.iter().map(|t| t.norm_squared()).sum::<f64>() / truth.len() as f64).sqrt();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::NonFinite("truth normalization"));
    }
    let values = forecast
        .iter()
        .zip(truth)
        .map(|(f, t)| {
            if f.len() == t.len() {
                Ok((f - t).norm() / scale)
            } else {
                Err(Error::Dimension(
                    "forecast/truth state lengths differ".into(),
                ))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ErrorSeries { values })
}

/// Forecast valid time in Lyapunov units (`lambda_max * t`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidTime {
    /// Lyapunov-scaled time at which the error first exceeded the threshold,
    /// or the end of the series if it never did.
    pub time: f64,
    /// True when the error stayed below the threshold for the whole series,
    /// so `time` is only a lower bound.
    pub censored: bool,
}

/// First crossing of `kappa` by the error series. `errors.values[i]` is the
/// error `i + 1` sampling intervals after the forecast start.
pub fn valid_time(
    errors: &ErrorSeries,
    kappa: f64,
    lambda_max: f64,
    delta_t: f64,
) -> Result<ValidTime> {
    if errors.values.is_empty() {
        return Err(Error::Empty("error series"));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Config(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::Config(format!(
            "lambda_max must be positive to express valid time in Lyapunov units, got {lambda_max}"
        )));
    }
    for (i, &e) in errors.values.iter().enumerate() {
        if e > kappa {
            return Ok(ValidTime {
                time: lambda_max * (i + 1) as f64 * delta_t,
                censored: false,
            });
        }
    }
    Ok(ValidTime {
        time: lambda_max * errors.values.len() as f64 * delta_t,
        censored: true,
    })
}

/// Normalized analysis RMS error over a DA window, total and split into
/// measured/unmeasured components:
/// sqrt( <||x^a - truth||^2> / <||truth||^2> ), norms restricted to the
/// component subset. `unmeasured` is NaN when every component is measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRms {
    pub total: f64,
    pub measured: f64,
    pub unmeasured: f64,
}

pub fn analysis_rms(
    analyses: &[State],
    truth: &[State],
    measured: &[usize],
) -> Result<AnalysisRms> {
    if analyses.is_empty() {
        return Err(Error::Empty("analysis series"));
    }
    if analyses.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "analysis series has {} states, truth has {}",
            analyses.len(),
            truth.len()
        )));
    }
    let dim = truth[0].len();
    if measured.iter().any(|&i| i >= dim) {
        return Err(Error::Dimension("measured index out of range".into()));
    }
    let mut is_measured = vec![false; dim];
    for &i in measured {
        is_measured[i] = true;
    }
    // err[0]/ref[0]: measured subset, err[1]/ref[1]: unmeasured subset.
    let mut err = [0.0; 2];
    let mut reference = [0.0; 2];
    for (a, t) in analyses.iter().zip(truth) {
        if a.len() != dim || t.len() != dim {
            return Err(Error::Dimension(
                "state lengths differ within series".into(),
            ));
        }
        for i in 0..dim {
            let subset = usize::from(!is_measured[i]);
            let d = a[i] - t[i];
            err[subset] += d * d;
            reference[subset] += t[i] * t[i];
        }
    }
    let ratio = |e: f64, r: f64| if r > 0.0 { (e / r).sqrt() } else { f64::NAN };
    Ok(AnalysisRms {
        total: ratio(err[0] + err[1], reference[0] + reference[1]),
        measured: ratio(err[0], reference[0]),
        unmeasured: ratio(err[1], reference[1]),
    })
}

/// Benettin-style largest-Lyapunov-exponent estimation: carry a perturbed
/// trajectory alongside the reference, renormalize the separation every
/// `renorm_interval` sampling steps, and average the log growth rates.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LyapunovConfig {
    /// Sampling steps to discard before measuring (attractor transient).
    pub transient_steps: usize,
    /// Sampling steps between renormalizations.
    pub renorm_interval: usize,
    /// Number of measured growth intervals.
    pub n_intervals: usize,
    /// Separation magnitude at the start of each interval, relative to the
    /// current state norm (floored at 1), so unbounded test systems stay
    /// representable.
    pub d0: f64,
    /// Leading intervals dropped from the average (perturbation alignment).
    pub discard_intervals: usize,
}

impl LyapunovConfig {
    pub fn validate(&self) -> Result<()> {
        if self.renorm_interval == 0 || self.n_intervals == 0 {
            return Err(Error::Config(
                "renorm_interval and n_intervals must be positive".into(),
            ));
        }
        if !(self.d0 > 0.0 && self.d0.is_finite()) {
            return Err(Error::Config(format!(
                "d0 must be positive, got {}",
                self.d0
            )));
        }
        if self.discard_intervals >= self.n_intervals {
            return Err(Error::Config(
                "discard_intervals must leave at least one interval".into(),
            ));
        }
        Ok(())
    }
}

/// Estimate with a crude standard error from block averaging.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub lambda: f64,
    pub std_error: f64,
}

pub fn largest_lyapunov(
    model: &dyn Model,
    x0: &State,
    cfg: &LyapunovConfig,
    rng: &mut impl Rng,
) -> Result<LyapunovEstimate> {
    cfg.validate()?;
    let mut x = x0.clone();
    for _ in 0..cfg.transient_steps {
        x = model.step(&x)?;
    }
    // Random initial perturbation direction.
    let mut dir = State::from_fn(x.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = dir.norm();
    if norm == 0.0 {
        return Err(Error::NonFinite("perturbation direction"));
    }
    dir /= norm;
    let mut target = cfg.d0 * x.norm().max(1.0);
    let mut y = &x + target * dir;

    let dt_interval = cfg.renorm_interval as f64 * model.delta_t();
    let mut rates = Vec::with_capacity(cfg.n_intervals - cfg.discard_intervals);
    for interval in 0..cfg.n_intervals {
        for _ in 0..cfg.renorm_interval {
            x = model.step(&x)?;
            y = model.step(&y)?;
        }
        let mut sep = &y - &x;
        let d = sep.norm();
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::NonFinite("trajectory separation"));
        }
        if interval >= cfg.discard_intervals {
            rates.push((d / target).ln() / dt_interval);
        }
        // Renormalize the separation relative to the new state magnitude.
        target = cfg.d0 * x.norm().max(1.0);
        sep *= target / d;
        y = &x + sep;
    }

    let n = rates.len() as f64;
    let lambda = rates.iter().sum::<f64>() / n;
    // Block averaging absorbs the short-range correlation of growth rates.
    let n_blocks = rates.len().min(20);
    let block_len = rates.len() / n_blocks;
    let blocks: Vec<f64> = (0..n_blocks)
        .map(|b| {
            let s = &rates[b * block_len..(b + 1) * block_len];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect();
    let var = blocks
        .iter()
        .map(|m| (m - lambda) * (m - lambda))
        .sum::<f64>()
        / (n_blocks as f64 - 1.0).max(1.0);
    Ok(LyapunovEstimate {
        lambda,
        std_error: (var / n_blocks as f64).sqrt(),
    })
}

/// Five-number summary (plus 5/95 tails and mean) of a sample.
/// Percentiles use linear interpolation between order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
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

pub fn box_stats(samples: &[f64]) -> Result<BoxStats> {
    if samples.is_empty() {
        return Err(Error::Empty("sample set for box statistics"));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("box statistics input"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN ruled out above"));
    let q = |p: f64| -> f64 {
        let h = (sorted.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        if lo + 1 < sorted.len() {
            sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
        } else {
            sorted[lo]
        }
    };
    Ok(BoxStats {
        n: sorted.len(),
        min: sorted[0],
        p5: q(0.05),
        p25: q(0.25),
        median: q(0.5),
        p75: q(0.75),
        p95: q(0.95),
        max: *sorted.last().expect("nonempty"),
        mean: samples.iter().sum::<f64>() / samples.len() as f64,
    })
}
