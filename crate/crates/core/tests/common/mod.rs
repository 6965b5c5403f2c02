//! Shared oracles for the acceptance tests.
//!
//! These deliberately re-derive results through independent routes — an
//! exact Kalman filter for the ensemble filter, double-double arithmetic for
//! the ridge solve — so the library under test never checks itself.

#![allow(dead_code)] // each acceptance binary uses its own subset
#![allow(clippy::needless_range_loop)] // matrix algorithms read clearer indexed

use chaoscast_core::{Model, Result, State};
use nalgebra::{DMatrix, DVector};

// ---------------------------------------------------------------------------
// Double-double arithmetic (~31 significant decimal digits).
// ---------------------------------------------------------------------------

/// An unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

/// Error-free sum of two floats (Knuth).
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

/// Error-free sum assuming |a| >= |b| (Dekker).
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let err = b - (s - a);
    (s, err)
}

/// Error-free product via fused multiply-add.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from_f64(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Exact product of two plain floats as a Dd.
    pub fn prod(a: f64, b: f64) -> Dd {
        let (hi, lo) = two_prod(a, b);
        Dd { hi, lo }
    }

    pub fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let e = e + self.lo + other.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, other: Dd) -> Dd {
        self.add(other.neg())
    }

    pub fn mul(self, other: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, other.hi);
        let e = e + self.hi * other.lo + self.lo * other.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn div(self, other: Dd) -> Dd {
        // One Newton-style correction on the leading quotient digit.
        let q1 = self.hi / other.hi;
        let r = self.sub(other.mul(Dd::from_f64(q1)));
        let q2 = (r.hi + r.lo) / (other.hi + other.lo);
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            self.neg()
        } else {
            self
        }
    }
}

/// Solve `A X = B` by Gaussian elimination with partial pivoting, entirely
/// in double-double arithmetic. `a` is row-major `n x n`, `b` row-major
/// `n x m`; the solution overwrites `b`.
pub fn dd_solve(a: &mut [Vec<Dd>], b: &mut [Vec<Dd>]) {
    let n = a.len();
    let m = b[0].len();
    for col in 0..n {
        // Partial pivot on the leading component.
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                a[i][col]
                    .abs()
                    .hi
                    .partial_cmp(&a[j][col].abs().hi)
                    .expect("finite pivots")
            })
            .expect("nonempty column");
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let pivot = a[col][col];
        assert!(pivot.hi != 0.0, "oracle matrix is singular");
        for row in (col + 1)..n {
            let factor = a[row][col].div(pivot);
            for k in col..n {
                let delta = factor.mul(a[col][k]);
                a[row][k] = a[row][k].sub(delta);
            }
            for k in 0..m {
                let delta = factor.mul(b[col][k]);
                b[row][k] = b[row][k].sub(delta);
            }
        }
    }
    // Back substitution.
    for col in (0..n).rev() {
        for k in 0..m {
            let mut acc = b[col][k];
            for j in (col + 1)..n {
                acc = acc.sub(a[col][j].mul(b[j][k]));
            }
            b[col][k] = acc.div(a[col][col]);
        }
    }
}

// ---------------------------------------------------------------------------
// Linear-Gaussian reference: a linear model and the exact Kalman filter.
// ---------------------------------------------------------------------------

/// Deterministic linear dynamics `x' = A x` exposed as a forecast model.
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub delta_t: f64,
}

impl Model for LinearModel {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn delta_t(&self) -> f64 {
        self.delta_t
    }

    fn step(&self, x: &State) -> Result<State> {
        Ok(&self.a * x)
    }
}

/// Exact Kalman filter state (mean and covariance).
#[derive(Clone, Debug)]
pub struct Kalman {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Kalman {
    /// Propagate through the deterministic linear dynamics (no process
    /// noise, matching an ensemble forecast of a deterministic model).
    pub fn forecast(&mut self, a: &DMatrix<f64>) {
        self.mean = a * &self.mean;
        self.cov = a * &self.cov * a.transpose();
    }

    /// Measurement update with `y = H x + noise`, noise covariance `r`.
    /// Joseph-form covariance update for numerical symmetry.
    pub fn update(&mut self, h: &DMatrix<f64>, r: &DMatrix<f64>, y: &DVector<f64>) {
        let innovation_cov = h * &self.cov * h.transpose() + r;
        let inv = innovation_cov
            .try_inverse()
            .expect("innovation covariance invertible");
        let gain = &self.cov * h.transpose() * inv;
        self.mean = &self.mean + &gain * (y - h * &self.mean);
        let n = self.cov.nrows();
        let ikh = DMatrix::identity(n, n) - &gain * h;
        self.cov = &ikh * &self.cov * ikh.transpose() + &gain * r * gain.transpose();
    }
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn dd_keeps_digits_f64_drops() {
        // (1e16 + 1) - 1e16 collapses to 0 in f64 but not in Dd.
        let big = Dd::from_f64(1e16);
        let out = big.add(Dd::from_f64(1.0)).sub(big);
        assert_eq!(out.to_f64(), 1.0);

        // Division round-trips: (x / y) * y == x to ~30 digits.
        let x = Dd::from_f64(std::f64::consts::PI);
        let y = Dd::from_f64(std::f64::consts::E);
        let back = x.div(y).mul(y).sub(x);
        assert!(back.to_f64().abs() < 1e-30);
    }

    #[test]
    fn dd_solve_recovers_a_known_system() {
        // [2 1; 1 3] x = [5; 10] has x = (1, 3).
        let mut a = vec![
            vec![Dd::from_f64(2.0), Dd::from_f64(1.0)],
            vec![Dd::from_f64(1.0), Dd::from_f64(3.0)],
        ];
        let mut b = vec![vec![Dd::from_f64(5.0)], vec![Dd::from_f64(10.0)]];
        dd_solve(&mut a, &mut b);
        assert!((b[0][0].to_f64() - 1.0).abs() < 1e-28);
        assert!((b[1][0].to_f64() - 3.0).abs() < 1e-28);
    }

    #[test]
    fn kalman_matches_the_scalar_textbook_update() {
        // P = 1, R = 1, H = 1: gain 1/2, analysis variance 1/2.
        let mut kf = Kalman {
            mean: DVector::from_vec(vec![0.0]),
            cov: DMatrix::from_vec(1, 1, vec![1.0]),
        };
        let h = DMatrix::from_vec(1, 1, vec![1.0]);
        let r = DMatrix::from_vec(1, 1, vec![1.0]);
        kf.update(&h, &r, &DVector::from_vec(vec![2.0]));
        assert!((kf.mean[0] - 1.0).abs() < 1e-14);
        assert!((kf.cov[(0, 0)] - 0.5).abs() < 1e-14);
    }
}
