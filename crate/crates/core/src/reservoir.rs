//! Reservoir computer: fixed random recurrent network, linear ridge readout.
//!
//! The reservoir state evolves as `r' = tanh(A r + W_in x)` with a sparse
//! adjacency A (fixed in-degree, rescaled to a target spectral radius) and a
//! one-nonzero-per-row input coupling W_in. The only trained parameters are
//! the readout `W_out`, fit by ridge regression on feature vectors that stack
//! the reservoir state with the knowledge model's one-step forecast.

use crate::dynamics::State;
use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Power-iteration convergence tolerance for the spectral radius.
const POWER_TOL: f64 = 1e-9;
/// Iteration budget per build attempt.
const POWER_MAX_ITERS: usize = 10_000;
/// Fresh-substream rebuilds before giving up.
const BUILD_ATTEMPTS: u8 = 5;
/// Column chunk width for the readout normal-equation products.
const GRAM_CHUNK: usize = 1024;

/// Reservoir hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    /// Number of reservoir nodes D_r.
    pub size: usize,
    /// Incoming recurrent connections per node.
    pub in_degree: usize,
    /// Spectral radius the adjacency is scaled to.
    pub spectral_radius: f64,
    /// Input weights are drawn from U[-input_scale, input_scale).
    pub input_scale: f64,
}

impl ReservoirSpec {
    pub fn validate(&self, inputs: usize) -> Result<()> {
        if self.size == 0 || inputs == 0 {
            return Err(Error::Config(
                "reservoir and input sizes must be positive".into(),
            ));
        }
        if self.in_degree == 0 || self.in_degree > self.size {
            return Err(Error::Config(format!(
                "in-degree {} must be in 1..={}",
                self.in_degree, self.size
            )));
        }
        if self.size < inputs {
            return Err(Error::Config(format!(
                "reservoir size {} is smaller than the input dimension {}",
                self.size, inputs
            )));
        }
        if !(self.spectral_radius > 0.0 && self.spectral_radius.is_finite()) {
            return Err(Error::Config("spectral radius must be positive".into()));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) {
            return Err(Error::Config("input scale must be positive".into()));
        }
        Ok(())
    }
}

/// Sparse adjacency with exactly `in_degree` entries per row.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    size: usize,
    in_degree: usize,
    /// Column indices, row-major: row i owns `[i*in_degree, (i+1)*in_degree)`.
    cols: Vec<u32>,
    weights: Vec<f64>,
}

impl SparseMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    /// `out = A r`.
    pub fn mul_to(&self, r: &DVector<f64>, out: &mut DVector<f64>) {
        debug_assert_eq!(r.len(), self.size);
        debug_assert_eq!(out.len(), self.size);
        for i in 0..self.size {
            let base = i * self.in_degree;
            let mut acc = 0.0;
            for j in 0..self.in_degree {
                acc += self.weights[base + j] * r[self.cols[base + j] as usize];
            }
            out[i] = acc;
        }
    }

    /// Dense copy (tests and small diagnostics only).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut dense = DMatrix::zeros(self.size, self.size);
        for i in 0..self.size {
            let base = i * self.in_degree;
            for j in 0..self.in_degree {
                dense[(i, self.cols[base + j] as usize)] += self.weights[base + j];
            }
        }
        dense
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let base = i * self.in_degree;
        (0..self.in_degree).map(move |j| (self.cols[base + j] as usize, self.weights[base + j]))
    }
}

/// Input coupling with one nonzero per row; input `i` feeds a contiguous
/// block of `size/inputs` nodes (the first `size % inputs` inputs get one
/// extra node).
#[derive(Clone, Debug)]
pub struct InputMatrix {
    size: usize,
    inputs: usize,
    source: Vec<u32>,
    weights: Vec<f64>,
}

impl InputMatrix {
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// `out += W_in x`.
    pub fn add_mul_to(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        debug_assert_eq!(x.len(), self.inputs);
        debug_assert_eq!(out.len(), self.size);
        for i in 0..self.size {
            out[i] += self.weights[i] * x[self.source[i] as usize];
        }
    }

    pub fn entry(&self, row: usize) -> (usize, f64) {
        (self.source[row] as usize, self.weights[row])
    }
}

/// A built reservoir: adjacency scaled to the requested spectral radius plus
/// the input coupling.
#[derive(Clone, Debug)]
pub struct ReservoirMatrices {
    pub spec: ReservoirSpec,
    pub adjacency: SparseMatrix,
    pub input: InputMatrix,
}

impl ReservoirMatrices {
    pub fn size(&self) -> usize {
        self.spec.size
    }
}

/// Draw the adjacency and input coupling from `rng` and scale the adjacency
/// to the requested spectral radius (estimated by power iteration, which
/// converges cleanly because the raw weights are nonnegative).
///
/// A draw whose power iteration fails to converge is discarded and redrawn
/// from the next substream, up to a small attempt budget.
pub fn build_reservoir(
    spec: &ReservoirSpec,
    inputs: usize,
    seeds: &crate::rng::SeedSpec,
) -> Result<ReservoirMatrices> {
    spec.validate(inputs)?;
    for attempt in 0..BUILD_ATTEMPTS {
        let mut rng = seeds.stream_attempt(crate::rng::StreamRole::ReservoirBuild, attempt);
        let mut adjacency = draw_adjacency(spec, &mut rng);
        if let Some(radius) = spectral_radius(&adjacency, &mut rng) {
            let scale = spec.spectral_radius / radius;
            for w in adjacency.weights.iter_mut() {
                *w *= scale;
            }
            let input = draw_input(spec, inputs, &mut rng);
            return Ok(ReservoirMatrices {
                spec: *spec,
                adjacency,
                input,
            });
        }
    }
    Err(Error::SpectralRadius {
        attempts: BUILD_ATTEMPTS as usize,
    })
}

fn draw_adjacency(spec: &ReservoirSpec, rng: &mut impl Rng) -> SparseMatrix {
    let d = spec.in_degree;
    let mut cols = Vec::with_capacity(spec.size * d);
    let mut row: Vec<u32> = Vec::with_capacity(d);
    for _ in 0..spec.size {
        row.clear();
        // Rejection sampling of d distinct sources; d << size in practice.
        while row.len() < d {
            let c = rng.random_range(0..spec.size) as u32;
            if !row.contains(&c) {
                row.push(c);
            }
        }
        cols.extend_from_slice(&row);
    }
    let weights = (0..spec.size * d).map(|_| rng.random::<f64>()).collect();
    SparseMatrix {
        size: spec.size,
        in_degree: d,
        cols,
        weights,
    }
}

fn draw_input(spec: &ReservoirSpec, inputs: usize, rng: &mut impl Rng) -> InputMatrix {
    let base = spec.size / inputs;
    let extra = spec.size % inputs;
    let mut source = Vec::with_capacity(spec.size);
    for input in 0..inputs {
        let block = base + usize::from(input < extra);
        source.extend(std::iter::repeat(input as u32).take(block));
    }
    let zeta = spec.input_scale;
    let weights = (0..spec.size)
        .map(|_| rng.random_range(-zeta..zeta))
        .collect();
    InputMatrix {
        size: spec.size,
        inputs,
        source,
        weights,
    }
}

/// Largest-magnitude eigenvalue via power iteration; `None` if the iterate
/// fails to settle within the budget (degenerate draw).
fn spectral_radius(a: &SparseMatrix, rng: &mut impl Rng) -> Option<f64> {
    let n = a.size;
    let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() + 0.1);
    v /= v.norm();
    let mut av = DVector::zeros(n);
    let mut last = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        a.mul_to(&v, &mut av);
        let lambda = av.norm();
        if !(lambda > 0.0 && lambda.is_finite()) {
            return None;
        }
        v.copy_from(&av);
        v /= lambda;
        if (lambda - last).abs() <= POWER_TOL * lambda {
            return Some(lambda);
        }
        last = lambda;
    }
    None
}

/// One reservoir update `tanh(A r + W_in x)`.
pub fn reservoir_step(matrices: &ReservoirMatrices, r: &DVector<f64>, x: &State) -> DVector<f64> {
    let mut next = DVector::zeros(matrices.size());
    matrices.adjacency.mul_to(r, &mut next);
    matrices.input.add_mul_to(x, &mut next);
    next.apply(|v| *v = v.tanh());
    next
}

/// Drive the reservoir through an input series; `out[k]` is the state after
/// consuming `inputs[0..=k]` (the initial state is not echoed back).
pub fn drive(
    matrices: &ReservoirMatrices,
    r0: &DVector<f64>,
    inputs: &[State],
) -> Result<Vec<DVector<f64>>> {
    if r0.len() != matrices.size() {
        return Err(Error::Dimension(format!(
            "initial reservoir state has {} entries, reservoir has {}",
            r0.len(),
            matrices.size()
        )));
    }
    let mut out = Vec::with_capacity(inputs.len());
    let mut r = r0.clone();
    for x in inputs {
        if x.len() != matrices.input.inputs() {
            return Err(Error::Dimension("drive input dimension mismatch".into()));
        }
        r = reservoir_step(matrices, &r, x);
        out.push(r.clone());
    }
    Ok(out)
}

/// Trained linear readout mapping `[r; x_model]` to a corrected state.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutMatrix {
    /// `outputs x (reservoir + outputs)` coefficient matrix.
    pub w: DMatrix<f64>,
    /// Split point: number of reservoir features.
    pub reservoir_dim: usize,
}

impl ReadoutMatrix {
    /// The readout that ignores the reservoir and echoes the model forecast:
    /// `W = [0 | I]`. A hybrid with this readout reproduces the knowledge
    /// model exactly.
    pub fn pass_through(reservoir_dim: usize, outputs: usize) -> Self {
        let mut w = DMatrix::zeros(outputs, reservoir_dim + outputs);
        for i in 0..outputs {
            w[(i, reservoir_dim + i)] = 1.0;
        }
        Self { w, reservoir_dim }
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }
}

/// Apply the readout to one feature pair.
pub fn hybrid_readout(readout: &ReadoutMatrix, r: &DVector<f64>, x_model: &State) -> Result<State> {
    if r.len() != readout.reservoir_dim || x_model.len() != readout.outputs() {
        return Err(Error::Dimension(format!(
            "readout expects features {} + {}, got {} + {}",
            readout.reservoir_dim,
            readout.outputs(),
            r.len(),
            x_model.len()
        )));
    }
    let reservoir_part = readout.w.columns(0, readout.reservoir_dim) * r;
    let model_part = readout.w.columns(readout.reservoir_dim, readout.outputs()) * x_model;
    Ok(reservoir_part + model_part)
}

/// Ridge regression for the readout:
///
/// ```text
/// W_out = Y Z^T (Z Z^T + beta I)^-1
/// ```
///
/// where column j of Z stacks `[reservoir[j]; model_forecast[j]]` and column
/// j of Y is `target[j]`. Solved through the Cholesky factorization of the
/// (symmetric positive definite for beta > 0) Gram matrix; a singular system
/// (possible at beta = 0) is reported as an error suggesting beta > 0.
pub fn fit_readout(
    reservoir_states: &[DVector<f64>],
    model_forecasts: &[State],
    targets: &[State],
    beta: f64,
) -> Result<ReadoutMatrix> {
    let t = reservoir_states.len();
    if t == 0 {
        return Err(Error::Empty("training pairs"));
    }
    if model_forecasts.len() != t || targets.len() != t {
        return Err(Error::Dimension(format!(
            "training series lengths differ: {} reservoir states, {} forecasts, {} targets",
            t,
            model_forecasts.len(),
            targets.len()
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!(
            "ridge parameter must be nonnegative, got {beta}"
        )));
    }
    let dr = reservoir_states[0].len();
    let m = targets[0].len();
    if model_forecasts[0].len() != m {
        return Err(Error::Dimension(
            "model forecast and target dimensions differ".into(),
        ));
    }
    let n = dr + m;

    // Accumulate G = Z Z^T and B = Y Z^T in column chunks. The chunk
    // transpose is materialized because the multiply kernel is much faster
    // than a transposed product on matrices this size.
    let mut gram = DMatrix::zeros(n, n);
    let mut cross = DMatrix::zeros(m, n);
    let mut chunk = DMatrix::zeros(n, GRAM_CHUNK.min(t));
    let mut ychunk = DMatrix::zeros(m, GRAM_CHUNK.min(t));
    let mut start = 0;
    while start < t {
        let width = (t - start).min(GRAM_CHUNK);
        for j in 0..width {
            let idx = start + j;
            if reservoir_states[idx].len() != dr
                || model_forecasts[idx].len() != m
                || targets[idx].len() != m
            {
                return Err(Error::Dimension(
                    "training vector dimensions differ within the series".into(),
                ));
            }
            chunk
                .view_mut((0, j), (dr, 1))
                .copy_from(&reservoir_states[idx]);
            chunk
                .view_mut((dr, j), (m, 1))
                .copy_from(&model_forecasts[idx]);
            ychunk.view_mut((0, j), (m, 1)).copy_from(&targets[idx]);
        }
        let z = chunk.view((0, 0), (n, width));
        let zt = z.transpose();
        gram.gemm(1.0, &z, &zt, 1.0);
        cross.gemm(1.0, &ychunk.view((0, 0), (m, width)), &zt, 1.0);
        start += width;
    }
    for i in 0..n {
        gram[(i, i)] += beta;
    }

    let chol = Cholesky::new(gram).ok_or(Error::SingularRidge { beta })?;
    // A numerically rank-deficient Gram matrix can still factor if rounding
    // lands a zero pivot on the positive side; reject it by the usual
    // relative-pivot criterion instead of returning a garbage solve.
    let diag = chol.l_dirty().diagonal();
    let max_pivot = diag.amax();
    let min_pivot = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    // Negated so that NaN pivots also take the error path.
    let pivots_ok = min_pivot * min_pivot > (n as f64) * f64::EPSILON * max_pivot * max_pivot;
    if !pivots_ok {
        return Err(Error::SingularRidge { beta });
    }
    let solved = chol.solve(&cross.transpose());
    Ok(ReadoutMatrix {
        w: solved.transpose(),
        reservoir_dim: dr,
    })
}
