//! Measurement geometry and noise: which state components are seen, and how.

use crate::dynamics::State;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Linear measurement operator selecting a subset of state components
/// (a 0/1 matrix with one 1 per row). Indices are strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementOperator {
    indices: Vec<usize>,
    state_dim: usize,
}

impl MeasurementOperator {
    pub fn new(indices: Vec<usize>, state_dim: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("measurement index set is empty".into()));
        }
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "measurement indices must be strictly increasing (no duplicates)".into(),
            ));
        }
        if *indices.last().expect("nonempty") >= state_dim {
            return Err(Error::Config(format!(
                "measurement index {} out of range for state dimension {}",
                indices.last().expect("nonempty"),
                state_dim
            )));
        }
        Ok(Self { indices, state_dim })
    }

    /// `count` indices spread evenly over `0..state_dim`:
    /// index i = floor(i * state_dim / count).
    pub fn uniform(count: usize, state_dim: usize) -> Result<Self> {
        if count == 0 || count > state_dim {
            return Err(Error::Config(format!(
                "cannot spread {count} measurement sites over {state_dim} components"
            )));
        }
        let indices = (0..count).map(|i| i * state_dim / count).collect();
        Self::new(indices, state_dim)
    }

    /// Number of measured components.
    pub fn measured_dim(&self) -> usize {
        self.indices.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Unmeasured component indices (complement of `indices`).
    pub fn complement(&self) -> Vec<usize> {
        let mut mask = vec![true; self.state_dim];
        for &i in &self.indices {
            mask[i] = false;
        }
        (0..self.state_dim).filter(|&i| mask[i]).collect()
    }

    /// Apply H: extract the measured components.
    pub fn observe(&self, x: &State) -> Result<DVector<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::Dimension(format!(
                "state has {} components, operator expects {}",
                x.len(),
                self.state_dim
            )));
        }
        Ok(DVector::from_iterator(
            self.indices.len(),
            self.indices.iter().map(|&i| x[i]),
        ))
    }

    /// Dense H matrix (for oracles and small tests).
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.indices.len(), self.state_dim);
        for (row, &col) in self.indices.iter().enumerate() {
            h[(row, col)] = 1.0;
        }
        h
    }
}

/// Additive iid Gaussian measurement noise with covariance R = sigma^2 I.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise sigma must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// One measurement: `y = H truth[step] + sigma * xi`, with `step` indexing
/// the sampled trajectory the measurement was taken from.
#[derive(Clone, Debug)]
pub struct MeasurementRecord {
    pub step: usize,
    pub y: DVector<f64>,
}

/// Measure every state in `truth`, adding fresh Gaussian noise per component.
pub fn observe_series(
    truth: &[State],
    h: &MeasurementOperator,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Result<Vec<MeasurementRecord>> {
    if truth.is_empty() {
        return Err(Error::Empty("truth series to observe"));
    }
    truth
        .iter()
        .enumerate()
        .map(|(step, x)| {
            let mut y = h.observe(x)?;
            for v in y.iter_mut() {
                let xi: f64 = rng.sample(StandardNormal);
                *v += noise.sigma() * xi;
            }
            Ok(MeasurementRecord { step, y })
        })
        .collect()
}
