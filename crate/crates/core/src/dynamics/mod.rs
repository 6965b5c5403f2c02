//! Dynamical models advanced on a fixed sampling grid.
//!
//! All downstream stages (assimilation, training, prediction) exchange states
//! at multiples of a sampling interval `delta_t`; each model may take several
//! internal integrator steps of size `tau` per sample.

mod ks;
mod lorenz;

pub use ks::{KsModel, KsParams};
pub use lorenz::{lorenz_rhs, rk4_step, LorenzModel, LorenzParams};

use crate::error::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// System state at one sample time.
pub type State = DVector<f64>;

/// Internal integrator step `tau` and sampling interval `delta_t` at which
/// states are exchanged with the rest of the pipeline. `delta_t` must be a
/// whole multiple of `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub tau: f64,
    pub delta_t: f64,
}

impl IntegratorConfig {
    /// Number of internal steps per sample; errors unless `delta_t` is a
    /// positive whole multiple of `tau`.
    pub fn substeps(&self) -> Result<usize> {
        if !(self.tau > 0.0 && self.tau.is_finite())
            || !(self.delta_t > 0.0 && self.delta_t.is_finite())
        {
            return Err(Error::Config(
                "tau and delta_t must be positive and finite".into(),
            ));
        }
        let ratio = self.delta_t / self.tau;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "delta_t = {} is not a whole multiple of tau = {}",
                self.delta_t, self.tau
            )));
        }
        Ok(n as usize)
    }
}

/// A model that advances a state by one sampling interval.
pub trait Model: Send + Sync {
    /// State dimension.
    fn dim(&self) -> usize;
    /// Sampling interval.
    fn delta_t(&self) -> f64;
    /// Advance by one sampling interval.
    fn step(&self, x: &State) -> Result<State>;
}

/// Integrate `n_steps` sampling intervals from `x0`; the returned trajectory
/// includes the initial state (`n_steps + 1` entries).
pub fn simulate(model: &dyn Model, x0: &State, n_steps: usize) -> Result<Vec<State>> {
    if x0.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "initial state has {} components, model expects {}",
            x0.len(),
            model.dim()
        )));
    }
    let mut traj = Vec::with_capacity(n_steps + 1);
    traj.push(x0.clone());
    for _ in 0..n_steps {
        let next = model.step(traj.last().expect("trajectory is never empty"))?;
        traj.push(next);
    }
    Ok(traj)
}
