//! Lorenz '63 with a tunable error in the driving parameter.

use super::{IntegratorConfig, Model, State};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Parameters of the Lorenz '63 system
///
/// ```text
/// dx1/dt = -a x1 + a x2
/// dx2/dt = b (1 + eps) x1 - x2 - x1 x3
/// dx3/dt = -c x3 + x1 x2
/// ```
///
/// `eps` is a relative error applied to the driving parameter `b`; `eps = 0`
/// with the classical `a = 10, b = 28, c = 8/3` is the reference (true)
/// system, `eps != 0` plays the role of an imperfect knowledge model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub eps: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            a: 10.0,
            b: 28.0,
            c: 8.0 / 3.0,
            eps: 0.0,
        }
    }
}

impl LorenzParams {
    /// Classical parameters with a relative error `eps` on `b`.
    pub fn with_model_error(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }
}

/// Right-hand side of the Lorenz system.
pub fn lorenz_rhs(x: &State, p: &LorenzParams) -> State {
    State::from_vec(vec![
        -p.a * x[0] + p.a * x[1],
        p.b * (1.0 + p.eps) * x[0] - x[1] - x[0] * x[2],
        -p.c * x[2] + x[0] * x[1],
    ])
}

/// One classical fourth-order Runge–Kutta step of size `tau`.
pub fn rk4_step(rhs: impl Fn(&State) -> State, x: &State, tau: f64) -> State {
    let k1 = rhs(x);
    let k2 = rhs(&(x + 0.5 * tau * &k1));
    let k3 = rhs(&(x + 0.5 * tau * &k2));
    let k4 = rhs(&(x + tau * &k3));
    x + (tau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Lorenz '63 advanced by RK4.
#[derive(Clone, Debug)]
pub struct LorenzModel {
    params: LorenzParams,
    cfg: IntegratorConfig,
    substeps: usize,
}

impl LorenzModel {
    pub fn new(params: LorenzParams, cfg: IntegratorConfig) -> Result<Self> {
        let substeps = cfg.substeps()?;
        Ok(Self {
            params,
            cfg,
            substeps,
        })
    }

    pub fn params(&self) -> &LorenzParams {
        &self.params
    }
}

impl Model for LorenzModel {
    fn dim(&self) -> usize {
        3
    }

    fn delta_t(&self) -> f64 {
        self.cfg.delta_t
    }

    fn step(&self, x: &State) -> Result<State> {
        if x.len() != 3 {
            return Err(Error::Dimension(format!(
                "Lorenz state must have 3 components, got {}",
                x.len()
            )));
        }
        let mut x = x.clone();
        for _ in 0..self.substeps {
            x = rk4_step(|s| lorenz_rhs(s, &self.params), &x, self.cfg.tau);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Lorenz RK4 step"));
        }
        Ok(x)
    }
}
