//! Adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Used for noise moments, tail probabilities of densities given only by a
//! pdf, and the deterministic distortion oracle. The integrator is globally
//! adaptive: the interval with the largest error estimate is bisected until
//! the summed estimate meets the tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge: value {value:e}, error estimate {error:e} after {intervals} intervals")]
    NotConverged {
        value: f64,
        error: f64,
        intervals: usize,
    },
    #[error("integrand is not finite at x = {0}")]
    NonFinite(f64),
}

/// Integral value together with its absolute error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-11,
            max_intervals: 2000,
        }
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64), QuadError> {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    if !fc.is_finite() {
        return Err(QuadError::NonFinite(centre));
    }
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * x;
        let (xl, xr) = (centre - dx, centre + dx);
        let (fl, fr) = (f(xl), f(xr));
        if !fl.is_finite() {
            return Err(QuadError::NonFinite(xl));
        }
        if !fr.is_finite() {
            return Err(QuadError::NonFinite(xr));
        }
        kron += w * (fl + fr);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (fl + fr);
        }
    }
    let value = kron * half;
    let error = ((kron - gauss) * half).abs();
    Ok((value, error))
}

impl Quadrature {
    pub fn with_tolerance(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    /// Integrates `f` over the finite interval `[a, b]`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<Estimate, QuadError> {
        if a == b {
            return Ok(Estimate {
                value: 0.0,
                error: 0.0,
            });
        }
        let (value, error) = kronrod(&f, a, b)?;
        let mut heap = BinaryHeap::new();
        heap.push(Piece { a, b, value, error });
        let mut total = value;
        let mut total_err = error;
        loop {
            let tol = self.abs_tol.max(self.rel_tol * total.abs());
            if total_err <= tol {
                return Ok(Estimate {
                    value: total,
                    error: total_err,
                });
            }
            if heap.len() >= self.max_intervals {
                return Err(QuadError::NotConverged {
                    value: total,
                    error: total_err,
                    intervals: heap.len(),
                });
            }
            let worst = heap.pop().expect("heap is never empty");
            let mid = 0.5 * (worst.a + worst.b);
            if mid <= worst.a || mid >= worst.b {
                // Interval cannot be split further in floating point.
                return Err(QuadError::NotConverged {
                    value: total,
                    error: total_err,
                    intervals: heap.len() + 1,
                });
            }
            let (lv, le) = kronrod(&f, worst.a, mid)?;
            let (rv, re) = kronrod(&f, mid, worst.b)?;
            total += lv + rv - worst.value;
            total_err += le + re - worst.error;
            heap.push(Piece {
                a: worst.a,
                b: mid,
                value: lv,
                error: le,
            });
            heap.push(Piece {
                a: mid,
                b: worst.b,
                value: rv,
                error: re,
            });
        }
    }

    /// Integrates `f` over `[a, ∞)` through the map `x = a + t / (1 - t)`.
    pub fn integrate_to_infinity<F: Fn(f64) -> f64>(&self, f: F, a: f64) -> Result<Estimate, QuadError> {
        self.integrate(
            |t| {
                let s = 1.0 - t;
                let v = f(a + t / s) / (s * s);
                // The map sends t -> 1 to infinity where integrable densities vanish.
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            },
            0.0,
            1.0,
        )
    }
}
