//! Plant, cost and scheme parameters, the conditions the scheme places on
//! them, and closed-form reference quantities.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{NoiseError, NoiseSpec};

pub type Matrix = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("input matrix B is singular (|det B| = {det:e}, threshold {threshold:e})")]
    SingularInput { det: f64, threshold: f64 },
    #[error("cost matrix Q is not symmetric positive definite: {0}")]
    CostNotPositiveDefinite(String),
    #[error("invalid scheme parameter: {0}")]
    Params(String),
    #[error("invalid rational {0:?}: expected \"numerator/denominator\" with positive integers")]
    Rational(String),
    #[error("complex Jordan blocks are not supported here")]
    ComplexBlock,
    #[error("invalid Jordan mode: {0}")]
    Jordan(String),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Maximum absolute row sum.
pub fn infinity_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Exact positive rational, kept in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Rational {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `base^exp` by square-and-multiply in floating point.
fn float_pow(mut base: f64, mut exp: u32) -> f64 {
    let mut acc = 1.0;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base;
        }
        base *= base;
        exp >>= 1;
    }
    acc
}

const EXACT_INT: u64 = 1 << 53;

impl Rational {
    pub fn new(num: u64, den: u64) -> Result<Self, ModelError> {
        if num == 0 || den == 0 {
            return Err(ModelError::Rational(format!("{num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `self^exp` as a pure function of the integer exponent. Correctly
    /// rounded while numerator and denominator powers stay below 2^53.
    pub fn pow(self, exp: i32) -> f64 {
        let e = exp.unsigned_abs();
        let (n, d) = if exp >= 0 { (self.num, self.den) } else { (self.den, self.num) };
        match (n.checked_pow(e), d.checked_pow(e)) {
            (Some(a), Some(b)) if a <= EXACT_INT && b <= EXACT_INT => a as f64 / b as f64,
            _ => float_pow(n as f64 / d as f64, e),
        }
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Rational {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::Rational(s.to_string());
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        let num = n.parse::<u64>().map_err(|_| bad())?;
        let den = d.parse::<u64>().map_err(|_| bad())?;
        Rational::new(num, den).map_err(|_| bad())
    }
}

impl TryFrom<String> for Rational {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Rational> for String {
    fn from(r: Rational) -> String {
        r.to_string()
    }
}

/// Distribution of the initial state.
#[derive(Clone, Debug)]
pub enum InitSpec {
    Point(Vec<f64>),
    Random(NoiseSpec),
}

impl InitSpec {
    pub fn dim(&self) -> usize {
        match self {
            InitSpec::Point(x) => x.len(),
            InitSpec::Random(spec) => spec.dim(),
        }
    }
}

/// `x_{t+1} = A x_t + B u_t + w_t` with stage cost `xᵀ Q x`.
#[derive(Clone, Debug)]
pub struct SystemModel {
    dynamics: Matrix,
    input: Matrix,
    cost: Matrix,
    noise: NoiseSpec,
    init: InitSpec,
    control_gain: Matrix,
}

impl SystemModel {
    pub fn new(dynamics: Matrix, input: Matrix, cost: Matrix, noise: NoiseSpec, init: InitSpec) -> Result<Self, ModelError> {
        let n = dynamics.nrows();
        if n == 0 {
            return Err(ModelError::Dimension("state dimension must be positive".into()));
        }
        for (name, m) in [("A", &dynamics), ("B", &input), ("Q", &cost)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(ModelError::Dimension(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Dimension(format!("{name} has non-finite entries")));
            }
        }
        if noise.dim() != n {
            return Err(ModelError::Dimension(format!("noise has dimension {}, expected {n}", noise.dim())));
        }
        if init.dim() != n {
            return Err(ModelError::Dimension(format!("initial state has dimension {}, expected {n}", init.dim())));
        }

        // Hadamard's bound scales the singularity threshold to B's magnitude.
        let det = input.determinant();
        let hadamard: f64 = input.row_iter().map(|r| r.norm()).product();
        let threshold = 1e-12 * hadamard;
        if !(det.abs() > threshold) {
            return Err(ModelError::SingularInput { det, threshold });
        }

        let qmax = cost.amax();
        if (&cost - cost.transpose()).amax() > 1e-12 * qmax {
            return Err(ModelError::CostNotPositiveDefinite("not symmetric".into()));
        }
        let eig = cost.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(hi > 0.0 && lo > 1e-10 * hi) {
            return Err(ModelError::CostNotPositiveDefinite(format!("eigenvalues span [{lo:e}, {hi:e}]")));
        }

        let inverse = input
            .clone()
            .try_inverse()
            .ok_or(ModelError::SingularInput { det, threshold })?;
        let control_gain = inverse * &dynamics;
        Ok(Self {
            dynamics,
            input,
            cost,
            noise,
            init,
            control_gain,
        })
    }

    /// Scalar plant `x' = a x + b u + w` with cost `x²` and `x₀ = 0`.
    pub fn scalar(a: f64, b: f64, noise: NoiseSpec) -> Result<Self, ModelError> {
        let m = |v| DMatrix::from_element(1, 1, v);
        Self::new(m(a), m(b), m(1.0), noise, InitSpec::Point(vec![0.0]))
    }

    pub fn with_init(self, init: InitSpec) -> Result<Self, ModelError> {
        Self::new(self.dynamics, self.input, self.cost, self.noise, init)
    }

    pub fn with_noise(self, noise: NoiseSpec) -> Result<Self, ModelError> {
        Self::new(self.dynamics, self.input, self.cost, noise, self.init)
    }

    pub fn dim(&self) -> usize {
        self.dynamics.nrows()
    }

    pub fn dynamics(&self) -> &Matrix {
        &self.dynamics
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn init(&self) -> &InitSpec {
        &self.init
    }

    /// `B⁻¹ A`, the certainty-equivalent feedback gain.
    pub fn control_gain(&self) -> &Matrix {
        &self.control_gain
    }

    pub fn dynamics_norm(&self) -> f64 {
        infinity_norm(&self.dynamics)
    }

    /// `tr(Q Σ)` for the model's noise.
    pub fn optimal_cost(&self) -> Result<f64, ModelError> {
        Ok(classical_optimum(&self.cost, &self.noise.second_moment_matrix()?))
    }
}

/// Optimal average cost with perfect state information: `tr(Q Σ)`.
///
/// # Panics
///
/// If the matrices are not square of equal size.
pub fn classical_optimum(cost: &Matrix, sigma: &Matrix) -> f64 {
    assert!(
        cost.is_square() && sigma.is_square() && cost.nrows() == sigma.nrows(),
        "classical_optimum: dimension mismatch"
    );
    (cost * sigma).trace()
}

/// Lower bound on the optimality gap of any scalar scheme over a channel of
/// `capacity` bits: `a²σ² / (2^(2C) - a²)`, or `+∞` when `2^(2C) ≤ a²`.
pub fn scalar_gap_lower_bound(a: f64, sigma2: f64, capacity: f64) -> f64 {
    let denom = (2.0 * capacity).exp2() - a * a;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        a * a * sigma2 / denom
    }
}

/// Bits per step used by the two-part code: `log₂(Kⁿ + 1) + n log₂(N + 1)`.
pub fn capacity_bits(adaptive_bins: u32, fixed_bins: u32, dim: usize) -> f64 {
    let n = dim as i32;
    (f64::from(adaptive_bins).powi(n) + 1.0).log2() + f64::from(n) * (f64::from(fixed_bins) + 1.0).log2()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JordanKind {
    Real,
    Complex,
}

/// One block of a real Jordan normal form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JordanMode {
    eigenvalue: Complex<f64>,
    size: usize,
    kind: JordanKind,
}

impl JordanMode {
    pub fn real(lambda: f64, size: usize) -> Result<Self, ModelError> {
        if size == 0 {
            return Err(ModelError::Jordan("block size must be positive".into()));
        }
        Ok(Self {
            eigenvalue: Complex::new(lambda, 0.0),
            size,
            kind: JordanKind::Real,
        })
    }

    /// Block for the pair `a ± bi`; `size` counts real dimensions.
    pub fn complex(re: f64, im: f64, size: usize) -> Result<Self, ModelError> {
        if size < 2 || !size.is_multiple_of(2) {
            return Err(ModelError::Jordan(format!("complex block needs even size >= 2, got {size}")));
        }
        Ok(Self {
            eigenvalue: Complex::new(re, im),
            size,
            kind: JordanKind::Complex,
        })
    }

    pub fn eigenvalue(&self) -> Complex<f64> {
        self.eigenvalue
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kind(&self) -> JordanKind {
        self.kind
    }

    /// Explicit block matrix: `λ` on the diagonal with ones above it, or
    /// 2×2 rotation-scaling blocks `[[a, -b], [b, a]]` with identities above.
    pub fn block(&self) -> Matrix {
        let n = self.size;
        let mut m = Matrix::zeros(n, n);
        match self.kind {
            JordanKind::Real => {
                for i in 0..n {
                    m[(i, i)] = self.eigenvalue.re;
                    if i + 1 < n {
                        m[(i, i + 1)] = 1.0;
                    }
                }
            }
            JordanKind::Complex => {
                let (a, b) = (self.eigenvalue.re, self.eigenvalue.im);
                for k in (0..n).step_by(2) {
                    m[(k, k)] = a;
                    m[(k, k + 1)] = -b;
                    m[(k + 1, k)] = b;
                    m[(k + 1, k + 1)] = a;
                    if k + 2 < n {
                        m[(k, k + 2)] = 1.0;
                        m[(k + 1, k + 3)] = 1.0;
                    }
                }
            }
        }
        m
    }
}

/// Closed-form `‖·‖∞` of a real Jordan block.
pub fn jordan_mode_norm(mode: &JordanMode) -> f64 {
    let lambda = mode.eigenvalue;
    match (mode.kind, mode.size) {
        (JordanKind::Real, 1) => lambda.re.abs(),
        (JordanKind::Real, _) => lambda.re.abs() + 1.0,
        (JordanKind::Complex, 2) => lambda.re.abs() + lambda.im.abs(),
        (JordanKind::Complex, _) => lambda.re.abs() + lambda.im.abs() + 1.0,
    }
}

/// `S = diag(1, ε, ε², …)`.
pub fn similarity_transform(size: usize, eps: f64) -> Matrix {
    Matrix::from_diagonal(&nalgebra::DVector::from_iterator(size, (0..size).map(|k| eps.powi(k as i32))))
}

/// `S⁻¹ J S` for a real Jordan block `J`, which has `eps` in place of the
/// superdiagonal ones and so `‖·‖∞ = |λ| + eps` for blocks larger than 1.
pub fn similarity_scale(mode: &JordanMode, eps: f64) -> Result<Matrix, ModelError> {
    if mode.kind == JordanKind::Complex {
        return Err(ModelError::ComplexBlock);
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ModelError::Jordan(format!("scaling must be positive, got {eps}")));
    }
    let s = similarity_transform(mode.size, eps);
    let s_inv = Matrix::from_diagonal(&s.diagonal().map(|d| 1.0 / d));
    Ok(s_inv * mode.block() * s)
}

/// Zoom and quantizer parameters of the two-part scheme.
///
/// Bin sizes are `L · g^m` for an integer exponent `m`; the contraction is
/// `α = g^(-p)` and the expansion `ρ = g^(q)`, so `α^q ρ^p = 1` exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeParams {
    /// `K`: adaptive bins per axis (even).
    pub adaptive_bins: u32,
    /// `N`: fixed bins per axis (even).
    pub fixed_bins: u32,
    /// `g > 1`: common zoom base.
    pub zoom_base: Rational,
    /// `p`: α = g^(-p).
    pub contract_steps: u32,
    /// `q`: ρ = g^q.
    pub expand_steps: u32,
    /// `L`: below this bin size the zoom holds.
    pub hold_threshold: f64,
    /// `m₀`: Δ₀ = L · g^(m₀).
    pub initial_exponent: i32,
    /// `β`: noise moment order.
    pub moment_order: f64,
    /// `ε` in `(0, β - 2)`.
    pub moment_slack: f64,
}

impl SchemeParams {
    /// Scalar example scheme: K = 2, α = 3/4, ρ = (4/3)³, L = 9, β = 3.95,
    /// ε = 0.95.
    pub fn scalar_example(fixed_bins: u32) -> Self {
        Self {
            adaptive_bins: 2,
            fixed_bins,
            zoom_base: Rational { num: 4, den: 3 },
            contract_steps: 1,
            expand_steps: 3,
            hold_threshold: 9.0,
            initial_exponent: 0,
            moment_order: 3.95,
            moment_slack: 0.95,
        }
    }

    /// Rejects parameters that make the scheme meaningless. Inequalities
    /// against the plant are checked by [`validate_scheme`] instead.
    pub fn check_structure(&self) -> Result<(), ModelError> {
        let err = |s: &str| Err(ModelError::Params(s.to_string()));
        if self.adaptive_bins < 2 {
            return err("K must be at least 2");
        }
        if !self.adaptive_bins.is_multiple_of(2) {
            return err("K must be even");
        }
        if self.fixed_bins < 2 {
            return err("N must be at least 2");
        }
        if !self.fixed_bins.is_multiple_of(2) {
            return err("N must be even");
        }
        if self.zoom_base.num <= self.zoom_base.den {
            return err("g must be greater than 1");
        }
        if self.contract_steps == 0 {
            return err("p must be positive");
        }
        if self.expand_steps == 0 {
            return err("q_exp must be positive");
        }
        if !(self.hold_threshold > 0.0 && self.hold_threshold.is_finite()) {
            return err("L must be positive and finite");
        }
        if !self.moment_order.is_finite() || !self.moment_slack.is_finite() {
            return err("beta and eps must be finite");
        }
        Ok(())
    }

    pub fn with_fixed_bins(mut self, fixed_bins: u32) -> Self {
        self.fixed_bins = fixed_bins;
        self
    }

    /// α.
    pub fn contraction(&self) -> f64 {
        self.zoom_base.pow(-(self.contract_steps as i32))
    }

    /// ρ.
    pub fn expansion(&self) -> f64 {
        self.zoom_base.pow(self.expand_steps as i32)
    }

    /// `Δ₍N₎ = 2 N^(-1 + 2/(β - ε))`.
    pub fn fixed_bin_size(&self) -> f64 {
        fixed_bin_size(self.fixed_bins, self.moment_order - self.moment_slack)
    }

    /// `L · g^m`.
    pub fn bin_size(&self, exponent: i32) -> f64 {
        self.hold_threshold * self.zoom_base.pow(exponent)
    }

    pub fn initial_bin_size(&self) -> f64 {
        self.bin_size(self.initial_exponent)
    }

    /// Smallest exponent reachable from `m₀`: the hold rule stops contraction
    /// one step below `L`.
    pub fn min_exponent(&self) -> i32 {
        self.initial_exponent.min(-(self.contract_steps as i32))
    }

    pub fn capacity_bits(&self, dim: usize) -> f64 {
        capacity_bits(self.adaptive_bins, self.fixed_bins, dim)
    }
}

/// Bin size `2 N^(-1 + 2/m)` that balances granular and overload distortion
/// for a source with finite `m`-th moment.
pub fn fixed_bin_size(bins: u32, moment: f64) -> f64 {
    2.0 * f64::from(bins).powf(-1.0 + 2.0 / moment)
}

/// Outcome of one condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionCheck {
    pub id: &'static str,
    pub label: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<ConditionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConditionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    fn push(&mut self, id: &'static str, label: &'static str, passed: bool, detail: String) {
        self.checks.push(ConditionCheck {
            id,
            label,
            passed,
            detail,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "[{mark}] {}: {}", c.label, c.detail)?;
        }
        Ok(())
    }
}

/// Checks every inequality the scheme needs against the plant, collecting
/// all results rather than stopping at the first failure.
pub fn validate_scheme(params: &SchemeParams, model: &SystemModel) -> ValidationReport {
    let mut r = ValidationReport::default();
    if let Err(e) = params.check_structure() {
        r.push("structure", "parameter structure", false, e.to_string());
        return r;
    }
    r.push("structure", "parameter structure", true, "K, N even; g > 1; p, q_exp >= 1; L > 0".into());

    let norm = model.dynamics_norm();
    let k = f64::from(params.adaptive_bins);
    let (alpha, rho) = (params.contraction(), params.expansion());
    let (beta, eps) = (params.moment_order, params.moment_slack);
    let dn = params.fixed_bin_size();
    let hold = params.hold_threshold;

    r.push("beta", "moment order", beta > 2.0, format!("beta = {beta} > 2"));
    r.push(
        "eps",
        "moment slack",
        eps > 0.0 && eps < beta - 2.0,
        format!("eps = {eps} in (0, {})", beta - 2.0),
    );
    let moment = model.noise().moment(beta);
    let (ok, detail) = match moment {
        Ok(v) => (v.is_finite(), format!("E|w|^{beta} = {v}")),
        Err(e) => (false, format!("could not evaluate E|w|^{beta}: {e}")),
    };
    r.push("noise-moment", "finite noise moment (condition 2)", ok, detail);

    r.push(
        "alpha-lower",
        "contraction above |A|/K",
        alpha > norm / k,
        format!("alpha = {alpha} > |A|inf/K = {}", norm / k),
    );
    r.push("alpha-upper", "contraction below 1", alpha < 1.0, format!("alpha = {alpha} < 1"));
    let rho_floor = norm.powf(beta / eps);
    r.push(
        "rho-moment",
        "expansion above |A|^(beta/eps)",
        rho > rho_floor,
        format!("rho = {rho} > |A|inf^(beta/eps) = {rho_floor}"),
    );
    r.push(
        "rho-capture",
        "expansion at least K alpha",
        rho >= k * alpha,
        format!("rho = {rho} >= K alpha = {}", k * alpha),
    );

    let (p, q) = (params.contract_steps, params.expand_steps);
    let g = gcd(u64::from(p), u64::from(q)) as u32;
    r.push(
        "countability",
        "rational zoom ratio (condition 3)",
        true,
        format!(
            "alpha^{} rho^{} = {}^({} - {}) = 1 exactly",
            q / g,
            p / g,
            params.zoom_base,
            p * q / g,
            p * q / g
        ),
    );

    let margin = k * alpha - norm;
    let rhs = if margin > 0.0 { norm / margin * dn } else { f64::INFINITY };
    r.push(
        "min-bin",
        "minimum adaptive bin size (condition 5)",
        alpha * hold > rhs,
        format!(
            "alpha L = {} > |A|inf/(K alpha - |A|inf) * Delta_N = {rhs} (N = {})",
            alpha * hold,
            params.fixed_bins
        ),
    );
    r.push(
        "initial-bin",
        "initial bin size at least L",
        params.initial_exponent >= 0,
        format!("Delta_0 = {} >= L = {hold}", params.initial_bin_size()),
    );

    let n = model.dim() as u32;
    let alphabet = u64::from(params.adaptive_bins).checked_pow(n).and_then(|v| v.checked_add(1));
    let ok = alphabet.is_some_and(|a| a <= u64::from(u32::MAX)) && params.fixed_bins <= u32::from(u16::MAX);
    r.push(
        "wire",
        "symbols fit the wire format",
        ok,
        format!("K^n + 1 <= 2^32 and N <= 65535 (n = {n})"),
    );
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSpec;

    fn example_model() -> SystemModel {
        SystemModel::scalar(1.2, 1.0, NoiseSpec::scaled_bg(4.0, 2.0, 1).unwrap()).unwrap()
    }

    #[test]
    fn infinity_norm_examples() {
        assert_eq!(infinity_norm(&Matrix::identity(2, 2)), 1.0);
        assert_eq!(infinity_norm(&Matrix::from_element(1, 1, 1.2)), 1.2);
        assert_eq!(infinity_norm(&Matrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 0.5])), 3.5);
    }

    #[test]
    fn jordan_norm_cases() {
        assert_eq!(jordan_mode_norm(&JordanMode::real(1.2, 1).unwrap()), 1.2);
        assert_eq!(jordan_mode_norm(&JordanMode::real(2.0, 3).unwrap()), 3.0);
        assert_eq!(jordan_mode_norm(&JordanMode::complex(1.0, 1.0, 2).unwrap()), 2.0);
        assert_eq!(jordan_mode_norm(&JordanMode::complex(1.0, -0.5, 4).unwrap()), 2.5);
        assert!(JordanMode::complex(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn similarity_scale_examples() {
        let m = similarity_scale(&JordanMode::real(2.0, 2).unwrap(), 0.1).unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[2.0, 0.1, 0.0, 2.0]));
        assert!((infinity_norm(&m) - 2.1).abs() < 1e-15);
        let m = similarity_scale(&JordanMode::real(1.5, 1).unwrap(), 0.3).unwrap();
        assert_eq!(m, Matrix::from_element(1, 1, 1.5));
        let mode = JordanMode::complex(1.0, 1.0, 2).unwrap();
        assert_eq!(similarity_scale(&mode, 0.1), Err(ModelError::ComplexBlock));
    }

    #[test]
    fn rational_parsing() {
        let r: Rational = "8/6".parse().unwrap();
        assert_eq!((r.numer(), r.denom()), (4, 3));
        assert_eq!("3".parse::<Rational>().unwrap().to_f64(), 3.0);
        assert!("0/3".parse::<Rational>().is_err());
        assert!("4/x".parse::<Rational>().is_err());
        assert!("-4/3".parse::<Rational>().is_err());
        assert_eq!(r.pow(3), 64.0 / 27.0);
        assert_eq!(r.pow(-1), 0.75);
        assert_eq!(r.pow(0), 1.0);
        let big = r.pow(1000);
        assert!(big.is_finite() && (big.ln() - 1000.0 * (4f64 / 3.0).ln()).abs() < 1e-9);
        assert!(r.pow(-1000) > 0.0);
    }

    #[test]
    fn capacity_examples() {
        assert!((capacity_bits(2, 100, 1) - (3f64.log2() + 101f64.log2())).abs() < 1e-12);
        assert!((capacity_bits(2, 100, 1) - 8.243_17).abs() < 1e-5);
        assert!((capacity_bits(2, 2, 1) - 2.0 * 3f64.log2()).abs() < 1e-12);
        assert!((capacity_bits(2, 4, 2) - (5f64.log2() + 25f64.log2())).abs() < 1e-12);
    }

    #[test]
    fn classical_optimum_examples() {
        let one = |v| Matrix::from_element(1, 1, v);
        assert!((classical_optimum(&one(1.0), &one(16.0 / 3.0)) - 16.0 / 3.0).abs() < 1e-15);
        assert_eq!(classical_optimum(&Matrix::identity(2, 2), &Matrix::identity(2, 2)), 2.0);
        let q = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        let s = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.5]));
        assert_eq!(classical_optimum(&q, &s), 2.5);
    }

    #[test]
    fn gap_lower_bound_examples() {
        assert!((scalar_gap_lower_bound(1.0, 1.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(scalar_gap_lower_bound(2.0, 1.0, 0.5), f64::INFINITY);
        let v = scalar_gap_lower_bound(1.2, 16.0 / 3.0, 8.2421);
        assert!((v - 8.37e-5).abs() < 0.01e-5, "{v}");
    }

    #[test]
    fn model_rejects_singular_and_indefinite() {
        let noise = NoiseSpec::scalar_gaussian(1.0).unwrap();
        assert!(matches!(
            SystemModel::scalar(1.2, 0.0, noise.clone()),
            Err(ModelError::SingularInput { .. })
        ));
        let r = SystemModel::new(
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_element(1, 1, -1.0),
            noise.clone(),
            InitSpec::Point(vec![0.0]),
        );
        assert!(matches!(r, Err(ModelError::CostNotPositiveDefinite(_))));
        let r = SystemModel::new(
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            noise,
            InitSpec::Point(vec![0.0, 0.0]),
        );
        assert!(matches!(r, Err(ModelError::Dimension(_))));
    }

    #[test]
    fn example_parameters_pass() {
        let report = validate_scheme(&SchemeParams::scalar_example(2), &example_model());
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn weak_contraction_fails() {
        let mut p = SchemeParams::scalar_example(100);
        p.zoom_base = Rational::new(2, 1).unwrap();
        let report = validate_scheme(&p, &example_model());
        assert!(!report.get("alpha-lower").unwrap().passed);
        assert!(!report.passed());
    }

    #[test]
    fn small_hold_threshold_fails_condition_five() {
        let mut p = SchemeParams::scalar_example(2);
        p.hold_threshold = 0.1;
        let report = validate_scheme(&p, &example_model());
        let c = report.get("min-bin").unwrap();
        assert!(!c.passed);
        // every other condition still holds
        assert_eq!(report.failures().count(), 1);
        // alpha L = 0.075 against 4 * 2 * 2^(-1/3)
        let rhs = 1.2 / (2.0 * 0.75 - 1.2) * 2.0 * 2f64.powf(-1.0 / 3.0);
        assert!(0.075 < rhs);
    }

    #[test]
    fn structural_errors() {
        let mut p = SchemeParams::scalar_example(100);
        p.adaptive_bins = 3;
        assert_eq!(p.check_structure(), Err(ModelError::Params("K must be even".into())));
        let mut p = SchemeParams::scalar_example(7);
        assert!(p.check_structure().is_err());
        p.fixed_bins = 8;
        p.zoom_base = Rational::new(3, 4).unwrap();
        assert!(p.check_structure().is_err());
    }

    #[test]
    fn bin_sizes_follow_exponent() {
        let p = SchemeParams::scalar_example(100);
        assert_eq!(p.bin_size(0), 9.0);
        assert_eq!(p.bin_size(-1), 6.75);
        assert_eq!(p.bin_size(3), 9.0 * 64.0 / 27.0);
        assert_eq!(p.contraction(), 0.75);
        assert_eq!(p.min_exponent(), -1);
        assert!((p.fixed_bin_size() - 2.0 * 100f64.powf(-1.0 / 3.0)).abs() < 1e-15);
    }
}
