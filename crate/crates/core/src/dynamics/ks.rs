//! Kuramoto–Sivashinsky equation on a periodic domain, integrated
//! pseudo-spectrally with the ETDRK4 scheme of Kassam & Trefethen.

use super::{IntegratorConfig, Model, State};
use crate::error::{Error, Result};
use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Norm beyond which the integration is declared blown up.
const BLOW_UP_NORM: f64 = 1e6;

/// Number of contour points used to evaluate the ETDRK4 phi-coefficients.
const CONTOUR_POINTS: usize = 32;

/// Parameters for
///
/// ```text
/// u_t = -u u_x - (1 + eps) u_xx - u_xxxx
/// ```
///
/// on `[0, length)` with `grid` equally spaced points. `eps` scales the
/// anti-diffusion term and is the knowledge-model error dial; `eps = 0` is
/// the reference (true) system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsParams {
    pub length: f64,
    pub grid: usize,
    pub eps: f64,
}

impl Default for KsParams {
    fn default() -> Self {
        Self {
            length: 35.0,
            grid: 64,
            eps: 0.0,
        }
    }
}

impl KsParams {
    /// Default domain with a relative error `eps` on the anti-diffusion term.
    pub fn with_model_error(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }
}

/// Kuramoto–Sivashinsky advanced by ETDRK4 in Fourier space, with the
/// quadratic term dealiased by the 3/2 rule (products evaluated on a
/// `3*grid/2` point grid).
pub struct KsModel {
    params: KsParams,
    cfg: IntegratorConfig,
    substeps: usize,
    fine: usize,
    // ETDRK4 tables over the coarse spectral grid (real because the linear
    // symbol is real).
    tab_e: Vec<f64>,
    tab_e2: Vec<f64>,
    tab_q: Vec<f64>,
    tab_f1: Vec<f64>,
    tab_f2: Vec<f64>,
    tab_f3: Vec<f64>,
    /// Spectral factor applied to the dealiased product: derivative, the
    /// -1/2 of the nonlinear term, and all FFT normalizations folded in.
    dk: Vec<Complex64>,
    fft_coarse: Arc<dyn Fft<f64>>,
    ifft_coarse: Arc<dyn Fft<f64>>,
    fft_fine: Arc<dyn Fft<f64>>,
    ifft_fine: Arc<dyn Fft<f64>>,
}

impl KsModel {
    pub fn new(params: KsParams, cfg: IntegratorConfig) -> Result<Self> {
        if !(params.length > 0.0 && params.length.is_finite()) {
            return Err(Error::Config("KS domain length must be positive".into()));
        }
        if params.grid < 8 || params.grid % 2 != 0 {
            return Err(Error::Config(format!(
                "KS grid must be even and at least 8, got {}",
                params.grid
            )));
        }
        if !params.eps.is_finite() {
            return Err(Error::Config("KS eps must be finite".into()));
        }
        let substeps = cfg.substeps()?;
        let q = params.grid;
        let fine = 3 * q / 2;
        let h = cfg.tau;

        // Signed wavenumbers 2*pi*m/L with m = 0..Q/2, -(Q/2-1)..-1.
        let wn: Vec<f64> = (0..q)
            .map(|k| {
                let m = if k <= q / 2 {
                    k as f64
                } else {
                    k as f64 - q as f64
                };
                2.0 * std::f64::consts::PI * m / params.length
            })
            .collect();
        // Linear symbol: anti-diffusion (destabilizing) minus hyperdiffusion.
        let lin: Vec<f64> = wn
            .iter()
            .map(|&qk| (1.0 + params.eps) * qk * qk - qk.powi(4))
            .collect();

        let tab_e: Vec<f64> = lin.iter().map(|&l| (h * l).exp()).collect();
        let tab_e2: Vec<f64> = lin.iter().map(|&l| (h * l / 2.0).exp()).collect();

        // Phi-coefficients via averaging over a unit circle around each
        // h*lin value; the half-point offset keeps the nodes away from the
        // real axis and the average is real by symmetry.
        let contour: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64;
                Complex64::new(th.cos(), th.sin())
            })
            .collect();
        let mut tab_q = vec![0.0; q];
        let mut tab_f1 = vec![0.0; q];
        let mut tab_f2 = vec![0.0; q];
        let mut tab_f3 = vec![0.0; q];
        for k in 0..q {
            let x = Complex64::new(h * lin[k], 0.0);
            let (mut sq, mut s1, mut s2, mut s3) = (
                Complex64::ZERO,
                Complex64::ZERO,
                Complex64::ZERO,
                Complex64::ZERO,
            );
            for &z in &contour {
                let lr = x + z;
                let elr = lr.exp();
                let lr3 = lr * lr * lr;
                sq += ((lr / 2.0).exp() - 1.0) / lr;
                s1 += (-4.0 - lr + elr * (4.0 - 3.0 * lr + lr * lr)) / lr3;
                s2 += (2.0 + lr + elr * (lr - 2.0)) / lr3;
                s3 += (-4.0 - 3.0 * lr - lr * lr + elr * (4.0 - lr)) / lr3;
            }
            let n = CONTOUR_POINTS as f64;
            tab_q[k] = h * (sq / n).re;
            tab_f1[k] = h * (s1 / n).re;
            tab_f2[k] = h * (s2 / n).re;
            tab_f3[k] = h * (s3 / n).re;
        }

        // N(u) = -1/2 (u^2)_x in spectral form on the unnormalized transforms
        // used below: i*wn carries the derivative, and the 1/(grid*fine)
        // undoes the unnormalized fine-grid round trip. The coarse Nyquist
        // mode is the one place an aliased product can land, so it is zeroed.
        let dk: Vec<Complex64> = (0..q)
            .map(|k| {
                if k == q / 2 {
                    Complex64::ZERO
                } else {
                    Complex64::new(0.0, -wn[k] / (2.0 * q as f64 * fine as f64))
                }
            })
            .collect();

        let mut planner = FftPlanner::new();
        Ok(Self {
            params,
            cfg,
            substeps,
            fine,
            tab_e,
            tab_e2,
            tab_q,
            tab_f1,
            tab_f2,
            tab_f3,
            dk,
            fft_coarse: planner.plan_fft_forward(q),
            ifft_coarse: planner.plan_fft_inverse(q),
            fft_fine: planner.plan_fft_forward(fine),
            ifft_fine: planner.plan_fft_inverse(fine),
        })
    }

    pub fn params(&self) -> &KsParams {
        &self.params
    }

    /// Grid coordinates x_n = n * length / grid.
    pub fn grid_points(&self) -> Vec<f64> {
        let q = self.params.grid;
        (0..q)
            .map(|n| n as f64 * self.params.length / q as f64)
            .collect()
    }

    /// Spectral image of N(u) from the (unnormalized) spectral state `v`,
    /// with the product formed on the 3/2-dealiased fine grid.
    fn nonlinear(&self, v: &[Complex64]) -> Vec<Complex64> {
        let q = self.params.grid;
        let half = q / 2;
        let mut fine_buf = vec![Complex64::ZERO; self.fine];
        // Zero-pad, splitting the (real) Nyquist coefficient across the two
        // fine-grid slots that alias to it so the padded spectrum stays
        // Hermitian.
        fine_buf[..half].copy_from_slice(&v[..half]);
        fine_buf[half] = 0.5 * v[half];
        fine_buf[self.fine - half] = 0.5 * v[half].conj();
        for k in half + 1..q {
            fine_buf[k + self.fine - q] = v[k];
        }
        self.ifft_fine.process(&mut fine_buf);
        for c in fine_buf.iter_mut() {
            let re = c.re;
            *c = Complex64::new(re * re, 0.0);
        }
        self.fft_fine.process(&mut fine_buf);
        // Truncate back to the coarse band and apply the derivative factor.
        let mut out = vec![Complex64::ZERO; q];
        for k in 0..=half {
            out[k] = self.dk[k] * fine_buf[k];
        }
        for k in half + 1..q {
            out[k] = self.dk[k] * fine_buf[k + self.fine - q];
        }
        out
    }

    fn etdrk4_substep(&self, v: &mut [Complex64]) {
        let q = self.params.grid;
        let nv = self.nonlinear(v);
        let mut a = vec![Complex64::ZERO; q];
        for k in 0..q {
            a[k] = self.tab_e2[k] * v[k] + self.tab_q[k] * nv[k];
        }
        let na = self.nonlinear(&a);
        let mut b = vec![Complex64::ZERO; q];
        for k in 0..q {
            b[k] = self.tab_e2[k] * v[k] + self.tab_q[k] * na[k];
        }
        let nb = self.nonlinear(&b);
        let mut c = vec![Complex64::ZERO; q];
        for k in 0..q {
            c[k] = self.tab_e2[k] * a[k] + self.tab_q[k] * (2.0 * nb[k] - nv[k]);
        }
        let nc = self.nonlinear(&c);
        for k in 0..q {
            v[k] = self.tab_e[k] * v[k]
                + self.tab_f1[k] * nv[k]
                + 2.0 * self.tab_f2[k] * (na[k] + nb[k])
                + self.tab_f3[k] * nc[k];
        }
    }

    fn check_norm(&self, x: &State, step: usize) -> Result<()> {
        let norm = x.norm();
        if !norm.is_finite() || norm > BLOW_UP_NORM {
            return Err(Error::BlowUp {
                norm,
                threshold: BLOW_UP_NORM,
                step,
            });
        }
        Ok(())
    }
}

impl Model for KsModel {
    fn dim(&self) -> usize {
        self.params.grid
    }

    fn delta_t(&self) -> f64 {
        self.cfg.delta_t
    }

    fn step(&self, x: &State) -> Result<State> {
        let q = self.params.grid;
        if x.len() != q {
            return Err(Error::Dimension(format!(
                "KS state must have {} components, got {}",
                q,
                x.len()
            )));
        }
        self.check_norm(x, 0)?;
        let mut v: Vec<Complex64> = x.iter().map(|&u| Complex64::new(u, 0.0)).collect();
        self.fft_coarse.process(&mut v);
        for _ in 0..self.substeps {
            self.etdrk4_substep(&mut v);
        }
        self.ifft_coarse.process(&mut v);
        let out = State::from_iterator(q, v.iter().map(|c| c.re / q as f64));
        self.check_norm(&out, self.substeps)?;
        Ok(out)
    }
}
