//! I.i.d. zero-mean noise families: exact samplers plus moment and tail
//! oracles.
//!
//! Moments `E[‖w‖∞^m]` of the non-Gaussian families are computed from the
//! tail function through `E[X^m] = ∫ m u^(m-1) T(u) du`, integrated in the
//! variable `y = ln u` so heavy tails stay representable. Integration runs
//! until an analytic bound on the remaining tail mass drops below `1e-10` of
//! the running value.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::quad::{QuadError, Quadrature};

/// Relative size of the neglected tail mass in moment integrals.
const TAIL_REMAINDER_REL: f64 = 1e-10;
/// Width, in `ln u`, of one integration segment.
const SEGMENT: f64 = 4.0;
/// Largest `ln u` a moment integral may reach before giving up.
const MAX_LOG_U: f64 = 5e4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("invalid noise specification: {0}")]
    Invalid(String),
    #[error("moment order must be positive and finite, got {0}")]
    BadOrder(f64),
    #[error("{what} is not available for {family} noise")]
    Unsupported {
        what: &'static str,
        family: &'static str,
    },
    #[error("moment integral did not settle: tail remainder still above tolerance at ln u = {0}")]
    Truncation(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Per-axis i.i.d. noise given by a density and its inverse CDF.
///
/// The density is trusted to integrate to one and to have zero mean.
#[derive(Clone)]
pub struct CustomNoise {
    pdf: ScalarFn,
    inverse_cdf: ScalarFn,
    dim: usize,
}

impl fmt::Debug for CustomNoise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomNoise").field("dim", &self.dim).finish_non_exhaustive()
    }
}

/// Law of the i.i.d. disturbance `w_t` (or of a random initial state).
#[derive(Clone, Debug)]
pub enum NoiseSpec {
    /// Zero-mean Gaussian with the given covariance.
    Gaussian { covariance: DMatrix<f64> },
    /// Each axis is `scale · Z` with `Z` Bucklew–Gallagher distributed:
    /// density `(1 + δ/2) / (1 + |z|)^(3 + δ)`.
    ScaledBg { scale: f64, delta: f64, dim: usize },
    Custom(CustomNoise),
    /// Identically zero. Degenerate; intended for deterministic tests.
    Zero { dim: usize },
}

impl NoiseSpec {
    pub fn gaussian(covariance: DMatrix<f64>) -> Result<Self, NoiseError> {
        let n = covariance.nrows();
        if n == 0 || covariance.ncols() != n {
            return Err(NoiseError::Invalid("covariance must be a non-empty square matrix".into()));
        }
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(NoiseError::Invalid("covariance has non-finite entries".into()));
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        if (&covariance - covariance.transpose()).amax() > 1e-12 * scale {
            return Err(NoiseError::Invalid("covariance is not symmetric".into()));
        }
        let eig = covariance.clone().symmetric_eigenvalues();
        if eig.min() < -1e-12 * scale {
            return Err(NoiseError::Invalid(format!(
                "covariance is not positive semidefinite (eigenvalue {:e})",
                eig.min()
            )));
        }
        Ok(NoiseSpec::Gaussian { covariance })
    }

    pub fn scalar_gaussian(variance: f64) -> Result<Self, NoiseError> {
        Self::gaussian(DMatrix::from_element(1, 1, variance))
    }

    pub fn scaled_bg(scale: f64, delta: f64, dim: usize) -> Result<Self, NoiseError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(NoiseError::Invalid(format!("scale must be positive, got {scale}")));
        }
        // delta > 0 keeps the second moment finite.
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(NoiseError::Invalid(format!("delta must be positive, got {delta}")));
        }
        if dim == 0 {
            return Err(NoiseError::Invalid("dimension must be positive".into()));
        }
        Ok(NoiseSpec::ScaledBg { scale, delta, dim })
    }

    pub fn custom(pdf: ScalarFn, inverse_cdf: ScalarFn, dim: usize) -> Result<Self, NoiseError> {
        if dim == 0 {
            return Err(NoiseError::Invalid("dimension must be positive".into()));
        }
        Ok(NoiseSpec::Custom(CustomNoise { pdf, inverse_cdf, dim }))
    }

    pub fn zero(dim: usize) -> Self {
        NoiseSpec::Zero { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseSpec::Gaussian { covariance } => covariance.nrows(),
            NoiseSpec::ScaledBg { dim, .. } | NoiseSpec::Zero { dim } => *dim,
            NoiseSpec::Custom(c) => c.dim,
        }
    }

    fn family(&self) -> &'static str {
        match self {
            NoiseSpec::Gaussian { .. } => "gaussian",
            NoiseSpec::ScaledBg { .. } => "bucklew-gallagher",
            NoiseSpec::Custom(_) => "custom",
            NoiseSpec::Zero { .. } => "zero",
        }
    }

    /// `E[w wᵀ]`.
    pub fn second_moment_matrix(&self) -> Result<DMatrix<f64>, NoiseError> {
        let n = self.dim();
        match self {
            NoiseSpec::Gaussian { covariance } => Ok(covariance.clone()),
            NoiseSpec::ScaledBg { scale, delta, .. } => {
                let var = scale * scale * 2.0 / (delta * (1.0 + delta));
                Ok(DMatrix::from_diagonal_element(n, n, var))
            }
            NoiseSpec::Custom(c) => {
                let pdf = &c.pdf;
                let var = log_moment_from_pdf(|x| pdf(x), 2.0)?;
                Ok(DMatrix::from_diagonal_element(n, n, var))
            }
            NoiseSpec::Zero { .. } => Ok(DMatrix::zeros(n, n)),
        }
    }

    pub fn sampler(&self) -> NoiseSampler {
        let dim = self.dim();
        let kind = match self {
            NoiseSpec::Gaussian { covariance } => SamplerKind::Gaussian {
                factor: square_root_factor(covariance),
            },
            NoiseSpec::ScaledBg { scale, delta, .. } => SamplerKind::Bg {
                scale: *scale,
                law: BucklewGallagher::new(*delta),
            },
            NoiseSpec::Custom(c) => SamplerKind::Custom(c.inverse_cdf.clone()),
            NoiseSpec::Zero { .. } => SamplerKind::Zero,
        };
        NoiseSampler { dim, kind }
    }

    /// Draws one vector from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sampler().sample_into(rng, &mut out);
        out
    }

    /// `E[‖w‖∞^order]`; `f64::INFINITY` when the moment diverges.
    pub fn moment(&self, order: f64) -> Result<f64, NoiseError> {
        if !(order > 0.0 && order.is_finite()) {
            return Err(NoiseError::BadOrder(order));
        }
        match self {
            NoiseSpec::Zero { .. } => Ok(0.0),
            NoiseSpec::Gaussian { covariance } => {
                let sigmas = diagonal_sigmas(covariance).ok_or(NoiseError::Unsupported {
                    what: "moment",
                    family: "correlated gaussian",
                })?;
                if sigmas.len() == 1 {
                    return Ok(gaussian_abs_moment(sigmas[0], order));
                }
                let live: Vec<f64> = sigmas.iter().copied().filter(|s| *s > 0.0).collect();
                if live.is_empty() {
                    return Ok(0.0);
                }
                let smax = live.iter().copied().fold(0.0, f64::max);
                let smin = live.iter().copied().fold(f64::INFINITY, f64::min);
                let n = live.len() as f64;
                log_moment_from_tail(
                    order,
                    smin.ln() - 40.0 / order,
                    smax.ln(),
                    |y| ln_gaussian_tail(&live, y.exp()),
                    |y| ln_gaussian_remainder(order, n, smax, y),
                )
            }
            NoiseSpec::ScaledBg { scale, delta, dim } => {
                let gamma = 2.0 + delta;
                if order >= gamma {
                    return Ok(f64::INFINITY);
                }
                let (s, n) = (*scale, *dim as f64);
                let ln_s = s.ln();
                log_moment_from_tail(
                    order,
                    ln_s - 40.0 / order,
                    ln_s,
                    |y| ln_bg_tail(s, gamma, n, y),
                    |y| (n * order / (gamma - order)).ln() + gamma * ln_s + (order - gamma) * y,
                )
            }
            NoiseSpec::Custom(c) => {
                if c.dim != 1 {
                    return Err(NoiseError::Unsupported {
                        what: "moment",
                        family: "multi-axis custom",
                    });
                }
                let pdf = &c.pdf;
                log_moment_from_pdf(|x| pdf(x), order)
            }
        }
    }

    /// `T(u) = P(‖w‖∞ > u)`.
    pub fn tail(&self, u: f64) -> Result<f64, NoiseError> {
        if !(u >= 0.0) {
            return Err(NoiseError::Invalid(format!("tail argument must be nonnegative, got {u}")));
        }
        match self {
            NoiseSpec::Zero { .. } => Ok(0.0),
            NoiseSpec::ScaledBg { scale, delta, dim } => {
                let t1 = (1.0 + u / scale).powf(-(2.0 + delta));
                Ok(any_axis(t1, *dim))
            }
            NoiseSpec::Gaussian { covariance } => {
                let sigmas = diagonal_sigmas(covariance).ok_or(NoiseError::Unsupported {
                    what: "tail",
                    family: "correlated gaussian",
                })?;
                let ln_stay: f64 = sigmas.iter().map(|&s| (-gaussian_axis_tail(s, u)).ln_1p()).sum();
                Ok(-ln_stay.exp_m1())
            }
            NoiseSpec::Custom(c) => {
                let pdf = &c.pdf;
                let q = Quadrature::default();
                let t1 = q.integrate_to_infinity(|x| pdf(x) + pdf(-x), u)?.value.clamp(0.0, 1.0);
                Ok(any_axis(t1, c.dim))
            }
        }
    }

    /// Density of a one-dimensional law, for quadrature oracles.
    ///
    /// `None` for the zero law (a point mass) and for multi-axis specs.
    pub fn scalar_pdf(&self) -> Option<ScalarFn> {
        if self.dim() != 1 {
            return None;
        }
        match self {
            NoiseSpec::Gaussian { covariance } => {
                let sigma = covariance[(0, 0)].sqrt();
                if sigma == 0.0 {
                    return None;
                }
                Some(Arc::new(move |x: f64| {
                    let z = x / sigma;
                    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
                }))
            }
            NoiseSpec::ScaledBg { scale, delta, .. } => {
                let (s, d) = (*scale, *delta);
                Some(Arc::new(move |x: f64| bg_pdf(d, x / s) / s))
            }
            NoiseSpec::Custom(c) => Some(c.pdf.clone()),
            NoiseSpec::Zero { .. } => None,
        }
    }

    /// Whether the law has a density that is positive everywhere.
    pub fn has_positive_density(&self) -> bool {
        match self {
            NoiseSpec::Gaussian { covariance } => covariance.clone().symmetric_eigenvalues().min() > 0.0,
            NoiseSpec::ScaledBg { .. } | NoiseSpec::Custom(_) => true,
            NoiseSpec::Zero { .. } => false,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            NoiseSpec::Gaussian { covariance } => format!("gaussian (n = {})", covariance.nrows()),
            NoiseSpec::ScaledBg { scale, delta, dim } => {
                format!("{scale} x bucklew-gallagher(delta = {delta}) per axis, n = {dim}")
            }
            other => format!("{} (n = {})", other.family(), other.dim()),
        }
    }
}

/// Bucklew–Gallagher law with density `(1 + δ/2) / (1 + |x|)^(3 + δ)`.
///
/// `|X| + 1` is Pareto with scale 1 and shape `2 + δ`; sampling draws the
/// sign and the magnitude `(1 - V)^(-1/(2 + δ)) - 1` from one 64-bit word.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BucklewGallagher {
    delta: f64,
    neg_inv_shape: f64,
}

impl BucklewGallagher {
    pub fn new(delta: f64) -> Self {
        assert!(delta > 0.0, "delta must be positive");
        Self {
            delta,
            neg_inv_shape: -1.0 / (2.0 + delta),
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Distribution<f64> for BucklewGallagher {
    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let bits: u64 = rng.random();
        // Top 53 bits give V in [0, 1); the low bit is the sign.
        let v = (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let magnitude = if self.neg_inv_shape == -0.25 {
            1.0 / (1.0 - v).sqrt().sqrt() - 1.0
        } else {
            (1.0 - v).powf(self.neg_inv_shape) - 1.0
        };
        if bits & 1 == 0 {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Bucklew–Gallagher density at `x`.
pub fn bg_pdf(delta: f64, x: f64) -> f64 {
    (1.0 + 0.5 * delta) * (1.0 + x.abs()).powf(-(3.0 + delta))
}

/// Inverse CDF of the Bucklew–Gallagher law.
///
/// # Panics
///
/// If `u` is outside the open interval `(0, 1)`.
pub fn bg_inverse_cdf(delta: f64, u: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0, "bg_inverse_cdf needs u in (0, 1), got {u}");
    let c = u - 0.5;
    let magnitude = (1.0 - 2.0 * c.abs()).powf(-1.0 / (2.0 + delta)) - 1.0;
    magnitude.copysign(c)
}

/// Precomputed sampler for a [`NoiseSpec`].
#[derive(Clone)]
pub struct NoiseSampler {
    dim: usize,
    kind: SamplerKind,
}

#[derive(Clone)]
enum SamplerKind {
    Gaussian { factor: Vec<f64> },
    Bg { scale: f64, law: BucklewGallagher },
    Custom(ScalarFn),
    Zero,
}

impl fmt::Debug for NoiseSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.kind {
            SamplerKind::Gaussian { .. } => "gaussian",
            SamplerKind::Bg { .. } => "bucklew-gallagher",
            SamplerKind::Custom(_) => "custom",
            SamplerKind::Zero => "zero",
        };
        f.debug_struct("NoiseSampler").field("dim", &self.dim).field("kind", &kind).finish()
    }
}

impl NoiseSampler {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            SamplerKind::Bg { scale, law } => {
                for o in out.iter_mut() {
                    *o = scale * law.sample(rng);
                }
            }
            SamplerKind::Gaussian { factor } => {
                let n = self.dim;
                let z: smallvec::SmallVec<[f64; 8]> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = factor[i * n..(i + 1) * n].iter().zip(&z).map(|(a, b)| a * b).sum();
                }
            }
            SamplerKind::Custom(inverse_cdf) => {
                for o in out.iter_mut() {
                    let v: f64 = rng.sample(Open01);
                    *o = inverse_cdf(v);
                }
            }
            SamplerKind::Zero => out.fill(0.0),
        }
    }
}

/// Row-major `F` with `F Fᵀ = covariance` (Cholesky, or the symmetric
/// square root for singular covariances).
fn square_root_factor(covariance: &DMatrix<f64>) -> Vec<f64> {
    let n = covariance.nrows();
    let factor = match covariance.clone().cholesky() {
        Some(ch) => ch.l(),
        None => {
            let eig = covariance.clone().symmetric_eigen();
            let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
        }
    };
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(factor[(i, j)]);
        }
    }
    out
}

fn diagonal_sigmas(covariance: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = covariance.nrows();
    for i in 0..n {
        for j in 0..n {
            if i != j && covariance[(i, j)] != 0.0 {
                return None;
            }
        }
    }
    Some((0..n).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect())
}

/// `E|σZ|^m` for standard normal `Z`.
fn gaussian_abs_moment(sigma: f64, m: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    (m * sigma.ln() + 0.5 * m * std::f64::consts::LN_2 + libm::lgamma(0.5 * (m + 1.0)) - 0.5 * PI.ln()).exp()
}

fn gaussian_axis_tail(sigma: f64, u: f64) -> f64 {
    if sigma == 0.0 {
        return if u < 0.0 { 1.0 } else { 0.0 };
    }
    libm::erfc(u / (sigma * SQRT_2))
}

/// `P(max_i |X_i| > u)` from a common per-axis tail over `n` i.i.d. axes.
fn any_axis(t1: f64, n: usize) -> f64 {
    if n == 1 {
        t1
    } else {
        -((n as f64) * (-t1).ln_1p()).exp_m1()
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn ln_bg_tail(scale: f64, gamma: f64, n: f64, y: f64) -> f64 {
    // ln(1 + e^y / s) = softplus(y - ln s)
    let ln_t1 = -gamma * softplus(y - scale.ln());
    if n == 1.0 {
        return ln_t1;
    }
    let t1 = ln_t1.exp();
    if t1 < 1e-12 {
        n.ln() + ln_t1
    } else {
        (-(n * (-t1).ln_1p()).exp_m1()).ln()
    }
}

fn ln_gaussian_tail(sigmas: &[f64], u: f64) -> f64 {
    let s: f64 = sigmas.iter().map(|&sg| (-gaussian_axis_tail(sg, u)).ln_1p()).sum();
    (-s.exp_m1()).ln()
}

/// Log of a bound on `∫_U^∞ m u^(m-1) T(u) du` for Gaussian axes, `U = e^y`.
///
/// Uses `T(u) ≤ n exp(-u²/2σ²)` and log-concavity of the integrand beyond
/// `U`, which holds once `U ≥ 2σ sqrt(1 + |m - 1|)`.
fn ln_gaussian_remainder(m: f64, n: f64, sigma: f64, y: f64) -> f64 {
    let u = y.exp();
    if u < 2.0 * sigma * (1.0 + (m - 1.0).abs()).sqrt() {
        return f64::INFINITY;
    }
    let slope = u / (sigma * sigma) - (m - 1.0) / u;
    (m * n).ln() + (m - 1.0) * y - u * u / (2.0 * sigma * sigma) - slope.ln()
}

/// `∫ m u^(m-1) T(u) du` in the variable `y = ln u`.
///
/// `ln_tail(y)` returns `ln T(e^y)`; `ln_remainder(y)` bounds the log of the
/// integral over `[e^y, ∞)`. Integration starts at `y_start` and stops once
/// past `y_bulk` with the remainder below [`TAIL_REMAINDER_REL`].
fn log_moment_from_tail<T, R>(m: f64, y_start: f64, y_bulk: f64, ln_tail: T, ln_remainder: R) -> Result<f64, NoiseError>
where
    T: Fn(f64) -> f64,
    R: Fn(f64) -> f64,
{
    let ln_m = m.ln();
    let integrand = |y: f64| {
        let v = ln_m + m * y + ln_tail(y);
        if v == f64::NEG_INFINITY {
            0.0
        } else {
            v.exp()
        }
    };
    let mut total = 0.0;
    let mut y = y_start;
    loop {
        let q = Quadrature::with_tolerance(1e-14 * total, 1e-12);
        total += q.integrate(integrand, y, y + SEGMENT)?.value;
        y += SEGMENT;
        if y > y_bulk && total > 0.0 && ln_remainder(y) < (TAIL_REMAINDER_REL * total).ln() {
            return Ok(total);
        }
        if y > MAX_LOG_U {
            return Err(NoiseError::Truncation(y));
        }
    }
}

/// `∫ |x|^m p(x) dx` for a density known only pointwise. Without an analytic
/// remainder, integration stops once three consecutive segments each add
/// less than `1e-13` of the running value.
fn log_moment_from_pdf<P: Fn(f64) -> f64>(pdf: P, m: f64) -> Result<f64, NoiseError> {
    let integrand = |y: f64| {
        let u = y.exp();
        let p = pdf(u) + pdf(-u);
        if p <= 0.0 {
            0.0
        } else {
            ((m + 1.0) * y + p.ln()).exp()
        }
    };
    let mut total = 0.0;
    let mut quiet = 0;
    let mut y = -40.0 / m;
    while y < 700.0 {
        let q = Quadrature::with_tolerance(1e-15 * total, 1e-12);
        let piece = q.integrate(integrand, y, y + SEGMENT)?.value;
        total += piece;
        y += SEGMENT;
        quiet = if y > 3.0 && piece < 1e-13 * total { quiet + 1 } else { 0 };
        if quiet >= 3 {
            return Ok(total);
        }
    }
    Err(NoiseError::Truncation(y))
}
