//! Monte Carlo trials, sweeps over `N` and the estimators built on them.

use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::codec::{dot, mat_vec, row_major, ClosedLoop, CodecError, CoderState, Scheme, Snapshot};
use crate::model::{validate_scheme, InitSpec, ModelError, SchemeParams, SystemModel, ValidationReport};
use crate::noise::{NoiseError, NoiseSpec};
use crate::quad::{QuadError, Quadrature};
use crate::quantizer::UniformGrid;
use crate::trial_rng;

#[derive(Debug, Error, Clone)]
pub enum SimError {
    #[error("scheme fails validation:\n{0}")]
    Validation(ValidationReport),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("regression needs at least 3 rows with positive gap, got {usable} ({excluded} excluded)")]
    TooFewRows { usable: usize, excluded: usize },
    #[error("tail bound argument {argument:e} at k = {k} is not positive; the minimum bin size condition fails")]
    BoundArgument { k: u32, argument: f64 },
}

/// Stopping rule: halt once `|S_{T+1} - S_T| < eps` for `settle` consecutive
/// steps, or at `max_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub eps: f64,
    pub settle: u64,
    pub max_steps: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            settle: 10_000,
            max_steps: 50_000_000,
        }
    }
}

impl StopRule {
    fn check(&self) -> Result<(), SimError> {
        if !(self.eps > 0.0) {
            return Err(SimError::Config("stop_eps must be positive".into()));
        }
        if self.settle == 0 {
            return Err(SimError::Config("settle_T must be positive".into()));
        }
        if self.max_steps < self.settle {
            return Err(SimError::Config("max_T must be at least settle_T".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub model: SystemModel,
    pub params: SchemeParams,
    pub seed: u64,
    /// Generator stream; distinct streams of one seed are independent.
    pub stream: u64,
    pub stop: StopRule,
    /// Steps simulated before the running average starts.
    pub burn_in: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Rule,
    Cap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub fixed_bins: u32,
    pub seed: u64,
    pub stream: u64,
    /// Final `S_T`.
    pub avg_cost: f64,
    /// `T` at stop, excluding burn-in.
    pub steps: u64,
    pub stopped_by: StopReason,
    pub optimum: f64,
    pub gap: f64,
    /// Batch-means standard error of `S_T`.
    pub stderr: f64,
    pub max_state: f64,
    pub max_bin_size: f64,
    pub overflow_fraction: f64,
}

/// Batch-means variance estimate with a bounded number of batches; batches
/// are merged pairwise whenever the table fills.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    batch_len: u64,
    current: f64,
    filled: u64,
    sums: Vec<f64>,
}

const MAX_BATCHES: usize = 64;

impl Default for BatchMeans {
    fn default() -> Self {
        Self {
            batch_len: 1,
            current: 0.0,
            filled: 0,
            sums: Vec::with_capacity(MAX_BATCHES),
        }
    }
}

impl BatchMeans {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.current += v;
        self.filled += 1;
        if self.filled == self.batch_len {
            self.sums.push(self.current);
            self.current = 0.0;
            self.filled = 0;
            if self.sums.len() == MAX_BATCHES {
                for i in 0..MAX_BATCHES / 2 {
                    self.sums[i] = self.sums[2 * i] + self.sums[2 * i + 1];
                }
                self.sums.truncate(MAX_BATCHES / 2);
                self.batch_len *= 2;
            }
        }
    }

    /// Standard error of the overall mean, or NaN with fewer than 2 batches.
    pub fn stderr(&self) -> f64 {
        let k = self.sums.len();
        if k < 2 {
            return f64::NAN;
        }
        let len = self.batch_len as f64;
        let mean = self.sums.iter().sum::<f64>() / (k as f64 * len);
        let var = self.sums.iter().map(|s| (s / len - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
        (var / k as f64).sqrt()
    }
}

fn prepare(model: &SystemModel, params: &SchemeParams) -> Result<Scheme, SimError> {
    let report = validate_scheme(params, model);
    if !report.passed() {
        return Err(SimError::Validation(report));
    }
    Ok(Scheme::new(*params, model.dim())?)
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn run_trial(cfg: &TrialConfig) -> Result<TrialResult, SimError> {
    cfg.stop.check()?;
    let scheme = prepare(&cfg.model, &cfg.params)?;
    let optimum = cfg.model.optimal_cost()?;
    let mut rng = trial_rng(cfg.seed, cfg.stream);
    let mut cl = ClosedLoop::from_init(scheme, &cfg.model, &mut rng)?;
    for _ in 0..cfg.burn_in {
        cl.step(&mut rng)?;
    }

    let stop = cfg.stop;
    let mut avg = 0.0f64;
    let mut steps = 0u64;
    let mut quiet = 0u64;
    let mut batches = BatchMeans::default();
    let mut max_state = 0.0f64;
    let mut max_exp = i32::MIN;
    let mut overflows = 0u64;
    let mut stopped_by = StopReason::Cap;
    while steps < stop.max_steps {
        max_state = max_state.max(inf_norm(cl.state()));
        let o = cl.step(&mut rng)?;
        max_exp = max_exp.max(o.delta_exp);
        overflows += u64::from(!o.in_view);
        batches.push(o.cost);
        let next = avg + (o.cost - avg) / (steps + 1) as f64;
        if steps >= 1 {
            if (next - avg).abs() < stop.eps {
                quiet += 1;
            } else {
                quiet = 0;
            }
        }
        avg = next;
        steps += 1;
        if quiet >= stop.settle {
            stopped_by = StopReason::Rule;
            break;
        }
    }
    Ok(TrialResult {
        fixed_bins: cfg.params.fixed_bins,
        seed: cfg.seed,
        stream: cfg.stream,
        avg_cost: avg,
        steps,
        stopped_by,
        optimum,
        gap: avg - optimum,
        stderr: batches.stderr(),
        max_state,
        max_bin_size: cfg.params.bin_size(max_exp),
        overflow_fraction: overflows as f64 / steps.max(1) as f64,
    })
}

/// Stream used for replicate `rep` at fixed-bin count `n`.
pub fn trial_stream(n: u32, rep: u32) -> u64 {
    (u64::from(n) << 32) | u64::from(rep)
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub model: SystemModel,
    pub params: SchemeParams,
    pub n_list: Vec<u32>,
    pub seeds: u32,
    pub seed: u64,
    pub stop: StopRule,
    pub burn_in: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub fixed_bins: u32,
    pub replicate: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub fixed_bins: u32,
    pub capacity: f64,
    pub trials: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    pub mean_gap: f64,
    /// Across replicates when there are several, else the single trial's
    /// batch-means error.
    pub stderr_gap: f64,
    pub mean_steps: f64,
    pub capped: usize,
}

impl SweepRow {
    fn new(fixed_bins: u32, capacity: f64, trials: Vec<TrialResult>, failures: Vec<TrialFailure>) -> Self {
        let k = trials.len();
        let gaps: Vec<f64> = trials.iter().map(|t| t.gap).collect();
        let mean_gap = mean(&gaps);
        let stderr_gap = match k {
            0 => f64::NAN,
            1 => trials[0].stderr,
            _ => (gaps.iter().map(|g| (g - mean_gap).powi(2)).sum::<f64>() / (k as f64 - 1.0) / k as f64).sqrt(),
        };
        let steps: Vec<f64> = trials.iter().map(|t| t.steps as f64).collect();
        Self {
            fixed_bins,
            capacity,
            mean_gap,
            stderr_gap,
            mean_steps: mean(&steps),
            capped: trials.iter().filter(|t| t.stopped_by == StopReason::Cap).count(),
            trials,
            failures,
        }
    }

    pub fn succeeded(&self) -> bool {
        !self.trials.is_empty()
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: &str = "N,C_bits,mean_gap,stderr_gap,mean_T_stop,stopped_by_cap_count";

impl SweepResult {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "{SWEEP_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.fixed_bins, r.capacity, r.mean_gap, r.stderr_gap, r.mean_steps, r.capped
            )?;
        }
        Ok(())
    }

    pub fn write_failures_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "N,replicate,error")?;
        for f in self.rows.iter().flat_map(|r| &r.failures) {
            writeln!(w, "{},{},\"{}\"", f.fixed_bins, f.replicate, f.error.replace('"', "'").replace('\n', " "))?;
        }
        Ok(())
    }

    pub fn success_fraction(&self) -> f64 {
        let ok = self.rows.iter().filter(|r| r.succeeded()).count();
        ok as f64 / self.rows.len().max(1) as f64
    }
}

/// Runs every `(N, replicate)` trial, in parallel, and aggregates per `N`.
/// `progress` is called after each finished trial.
pub fn sweep<F>(cfg: &SweepConfig, progress: F) -> Result<SweepResult, SimError>
where
    F: Fn(&Result<TrialResult, TrialFailure>) + Sync,
{
    cfg.stop.check()?;
    if cfg.seeds == 0 {
        return Err(SimError::Config("seeds must be positive".into()));
    }
    if let Some(n) = cfg.n_list.iter().find(|&&n| n < 2 || n % 2 != 0) {
        return Err(SimError::Config(format!("N = {n} must be even and at least 2")));
    }
    let mut n_list = cfg.n_list.clone();
    n_list.sort_unstable();
    n_list.dedup();
    let jobs: Vec<(u32, u32)> = n_list.iter().flat_map(|&n| (0..cfg.seeds).map(move |r| (n, r))).collect();

    let run = |&(n, rep): &(u32, u32)| {
        let trial = TrialConfig {
            model: cfg.model.clone(),
            params: cfg.params.with_fixed_bins(n),
            seed: cfg.seed,
            stream: trial_stream(n, rep),
            stop: cfg.stop,
            burn_in: cfg.burn_in,
        };
        let out = run_trial(&trial).map_err(|e| TrialFailure {
            fixed_bins: n,
            replicate: rep,
            error: e.to_string(),
        });
        progress(&out);
        out
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| SimError::Config(e.to_string()))?;
    let outcomes: Vec<_> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut rows = Vec::with_capacity(n_list.len());
    let mut it = outcomes.into_iter();
    for &n in &n_list {
        let (mut ok, mut bad) = (Vec::new(), Vec::new());
        for out in it.by_ref().take(cfg.seeds as usize) {
            match out {
                Ok(t) => ok.push(t),
                Err(f) => bad.push(f),
            }
        }
        rows.push(SweepRow::new(n, cfg.params.with_fixed_bins(n).capacity_bits(cfg.model.dim()), ok, bad));
    }
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub rows_used: usize,
    pub rows_excluded: usize,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<RegressionFit> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return None;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(RegressionFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        rows_used: n,
        rows_excluded: 0,
    })
}

/// Regresses `log₂ gap` on capacity over rows with a positive mean gap.
pub fn fit_convergence_order(sweep: &SweepResult) -> Result<RegressionFit, SimError> {
    fit_gap_rows(sweep.rows.iter().map(|r| (r.capacity, r.mean_gap)))
}

pub fn fit_gap_rows(rows: impl IntoIterator<Item = (f64, f64)>) -> Result<RegressionFit, SimError> {
    let (mut xs, mut ys, mut excluded) = (Vec::new(), Vec::new(), 0);
    for (c, gap) in rows {
        if gap > 0.0 && gap.is_finite() {
            xs.push(c);
            ys.push(gap.log2());
        } else {
            excluded += 1;
        }
    }
    if xs.len() < 3 {
        return Err(SimError::TooFewRows {
            usable: xs.len(),
            excluded,
        });
    }
    let mut fit = fit_line(&xs, &ys).ok_or(SimError::TooFewRows {
        usable: xs.len(),
        excluded,
    })?;
    fit.rows_excluded = excluded;
    Ok(fit)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation, ties given average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Return-time bound `k·T_w((Δ/2)((hξ^k - 1)/k - Δ₍N₎/(αL)))` with
/// `h = Kα/ρ` and `ξ = ρ/‖A‖∞`, clipped to `[0, 1]`.
pub fn tail_bound_value(params: &SchemeParams, model: &SystemModel, delta: f64, k: u32) -> Result<f64, SimError> {
    if k == 0 {
        return Err(SimError::Config("tail bound needs k >= 1".into()));
    }
    let (alpha, rho) = (params.contraction(), params.expansion());
    let h = f64::from(params.adaptive_bins) * alpha / rho;
    let xi = rho / model.dynamics_norm();
    let kf = f64::from(k);
    let argument =
        delta / 2.0 * ((h * xi.powi(k as i32) - 1.0) / kf - params.fixed_bin_size() / (alpha * params.hold_threshold));
    if !(argument > 0.0) {
        return Err(SimError::BoundArgument { k, argument });
    }
    Ok((kf * model.noise().tail(argument)?).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnTail {
    /// `p[k]` estimates `P(τ ≥ k + 1)` for `k = 0..=k_max`.
    pub survival: Vec<f64>,
    pub episodes: u64,
}

impl ReturnTail {
    /// One-sided binomial standard error of `p[k]`.
    pub fn stderr(&self, k: usize) -> f64 {
        let p = self.survival[k];
        (p * (1.0 - p) / self.episodes as f64).sqrt()
    }
}

/// Monte Carlo estimate of the return-time tail to the in-view set from an
/// in-view start `(x, Δ = L·g^exponent)`.
pub fn estimate_return_tail(
    model: &SystemModel,
    params: &SchemeParams,
    start: &[f64],
    exponent: i32,
    k_max: u32,
    episodes: u64,
    seed: u64,
) -> Result<ReturnTail, SimError> {
    let scheme = prepare(model, params)?;
    let state = CoderState { delta_exp: exponent };
    let half = scheme.adaptive_grid(state)?.half_range();
    if inf_norm(start) > half {
        return Err(SimError::Config(format!("start {start:?} is not in view (half range {half})")));
    }
    let snap = Snapshot {
        t: 0,
        x: start.to_vec(),
        encoder: state,
        decoder: state,
    };
    let template = ClosedLoop::restore(scheme, model, &snap)?;
    let mut rng = trial_rng(seed, 0);
    let mut counts = vec![0u64; k_max as usize + 1];
    for _ in 0..episodes {
        let mut cl = template.clone();
        // τ ≥ 1 always; survive while out of view for t = 1..=k
        counts[0] += 1;
        cl.step(&mut rng)?;
        for count in &mut counts[1..] {
            let grid = scheme.adaptive_grid(cl.encoder().state())?;
            if inf_norm(cl.state()) <= grid.half_range() {
                break;
            }
            *count += 1;
            cl.step(&mut rng)?;
        }
    }
    Ok(ReturnTail {
        survival: counts.iter().map(|&c| c as f64 / episodes as f64).collect(),
        episodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistortionPoint {
    pub bins: u32,
    pub delta: f64,
    pub monte_carlo: f64,
    pub mc_stderr: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionCurve {
    pub moment: f64,
    pub points: Vec<DistortionPoint>,
    /// Slope of `log₂ D` against `log₂ N` from the quadrature oracle.
    pub oracle_fit: RegressionFit,
    pub mc_fit: Option<RegressionFit>,
}

/// Exact `E[(X - U(X))²]` for a scalar source with density `pdf`.
pub fn distortion_oracle(pdf: &dyn Fn(f64) -> f64, grid: &UniformGrid) -> Result<f64, QuadError> {
    let q = Quadrature::with_tolerance(1e-15, 1e-10);
    let mut total = 0.0;
    for i in 0..grid.bins() {
        let lo = (f64::from(i) - f64::from(grid.bins() / 2)) * grid.delta();
        let mid = grid.midpoint(i);
        total += q.integrate(|x| (x - mid).powi(2) * pdf(x), lo, lo + grid.delta())?.value;
    }
    let r = grid.half_range();
    total += q.integrate_to_infinity(|x| x * x * pdf(x), r)?.value;
    total += q.integrate_to_infinity(|x| x * x * pdf(-x), r)?.value;
    Ok(total)
}

/// Distortion of `U_N` with `Δ₍N₎ = 2N^(-1+2/m)` for a scalar source, by
/// Monte Carlo and by quadrature. A zero source has the exact value `Δ²/4`.
pub fn quantizer_distortion(
    source: &NoiseSpec,
    n_list: &[u32],
    moment: f64,
    samples: u64,
    seed: u64,
) -> Result<DistortionCurve, SimError> {
    if source.dim() != 1 {
        return Err(SimError::Config("distortion sources must be scalar".into()));
    }
    if !(moment > 2.0) {
        return Err(SimError::Config(format!("moment order {moment} must exceed 2")));
    }
    let sampler = source.sampler();
    let mut points = Vec::with_capacity(n_list.len());
    let mut draw = [0.0];
    for (idx, &n) in n_list.iter().enumerate() {
        let delta = crate::model::fixed_bin_size(n, moment);
        let grid = UniformGrid::new(n, delta).map_err(|e| SimError::Config(e.to_string()))?;
        let oracle = match (source, source.scalar_pdf()) {
            (NoiseSpec::Zero { .. }, _) => (delta / 2.0).powi(2),
            (_, Some(pdf)) => distortion_oracle(&*pdf, &grid)?,
            (_, None) => f64::NAN,
        };
        let mut rng = trial_rng(seed, idx as u64);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..samples {
            sampler.sample_into(&mut rng, &mut draw);
            let d = (draw[0] - grid.quantize(draw[0])).powi(2);
            s += d;
            s2 += d * d;
        }
        let ns = samples as f64;
        let mc = s / ns;
        let var = (s2 / ns - mc * mc).max(0.0);
        points.push(DistortionPoint {
            bins: n,
            delta,
            monte_carlo: mc,
            mc_stderr: (var / ns).sqrt(),
            oracle,
        });
    }
    let log_n: Vec<f64> = points.iter().map(|p| f64::from(p.bins).log2()).collect();
    let fit_of = |vals: Vec<f64>| fit_line(&log_n, &vals.iter().map(|v| v.log2()).collect::<Vec<_>>());
    let oracle_fit = fit_of(points.iter().map(|p| p.oracle).collect())
        .filter(|f| f.slope.is_finite())
        .ok_or_else(|| SimError::Config("need at least two distinct N for the oracle fit".into()))?;
    let mc_fit = if samples > 0 {
        fit_of(points.iter().map(|p| p.monte_carlo).collect())
    } else {
        None
    };
    Ok(DistortionCurve {
        moment,
        points,
        oracle_fit,
        mc_fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapCheck {
    pub gap_direct: f64,
    pub gap_identity: f64,
    pub relative_difference: f64,
    pub agrees: bool,
}

/// Compares `S_T - tr(QΣ)` with the time average of
/// `(e - U(e))ᵀ AᵀQA (e - U(e))` over one run of `steps` steps.
pub fn gap_cross_check(model: &SystemModel, params: &SchemeParams, seed: u64, steps: u64) -> Result<GapCheck, SimError> {
    let scheme = prepare(model, params)?;
    let optimum = model.optimal_cost()?;
    let mut rng = trial_rng(seed, 0);
    let mut cl = ClosedLoop::from_init(scheme, model, &mut rng)?;
    let n = model.dim();
    let weight = row_major(&(model.dynamics().transpose() * model.cost() * model.dynamics()));
    let mut buf = vec![0.0; n];
    let (mut direct, mut identity) = (0.0, 0.0);
    for _ in 0..steps {
        direct += cl.step(&mut rng)?.cost;
        mat_vec(&weight, cl.residual(), &mut buf);
        identity += dot(cl.residual(), &buf);
    }
    let t = steps.max(1) as f64;
    let gap_direct = direct / t - optimum;
    let gap_identity = identity / t;
    let relative_difference = (gap_direct - gap_identity).abs() / gap_identity.abs().max(f64::MIN_POSITIVE);
    Ok(GapCheck {
        gap_direct,
        gap_identity,
        relative_difference,
        agrees: relative_difference < 0.1 || (gap_direct - gap_identity).abs() < 1e-4,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicRun {
    pub x0: Vec<f64>,
    pub avg_cost: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicReport {
    pub runs: Vec<ErgodicRun>,
    /// Largest `|S_i - S_j| / sqrt(se_i² + se_j²)` over pairs.
    pub max_z: f64,
    pub consistent: bool,
}

/// Long-run averages from several initial states, each on its own stream,
/// after discarding `burn_in` steps of transient.
pub fn ergodic_consistency(
    model: &SystemModel,
    params: &SchemeParams,
    x0_list: &[Vec<f64>],
    seed: u64,
    steps: u64,
    burn_in: u64,
) -> Result<ErgodicReport, SimError> {
    if x0_list.len() < 2 {
        return Err(SimError::Config("need at least two initial states".into()));
    }
    let scheme = prepare(model, params)?;
    let runs = x0_list
        .iter()
        .enumerate()
        .map(|(i, x0)| {
            let mut rng = trial_rng(seed, i as u64);
            let mut cl = ClosedLoop::new(scheme, model, x0)?;
            for _ in 0..burn_in {
                cl.step(&mut rng)?;
            }
            let mut bm = BatchMeans::default();
            let mut sum = 0.0;
            for _ in 0..steps {
                let c = cl.step(&mut rng)?.cost;
                sum += c;
                bm.push(c);
            }
            Ok(ErgodicRun {
                x0: x0.clone(),
                avg_cost: sum / steps.max(1) as f64,
                stderr: bm.stderr(),
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let mut max_z = 0.0f64;
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            let z = (a.avg_cost - b.avg_cost).abs() / (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
            max_z = max_z.max(z);
        }
    }
    Ok(ErgodicReport {
        runs,
        max_z,
        consistent: max_z <= 4.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselineResult {
    pub avg_cost: f64,
    pub stderr: f64,
    pub optimum: f64,
}

/// Average cost of `u = -B⁻¹A x` with the state observed exactly.
pub fn fully_observed_baseline(model: &SystemModel, seed: u64, steps: u64) -> Result<BaselineResult, SimError> {
    let n = model.dim();
    let mut rng = trial_rng(seed, 0);
    let mut x = match model.init() {
        InitSpec::Point(x) => x.clone(),
        InitSpec::Random(spec) => spec.sample(&mut rng),
    };
    let a = row_major(model.dynamics());
    let b = row_major(model.input());
    let neg_gain = row_major(&-model.control_gain());
    let q = row_major(model.cost());
    let sampler = model.noise().sampler();
    let (mut u, mut w, mut next, mut qx) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut bm = BatchMeans::default();
    let mut sum = 0.0;
    for _ in 0..steps {
        mat_vec(&q, &x, &mut qx);
        let c = dot(&x, &qx);
        sum += c;
        bm.push(c);
        mat_vec(&neg_gain, &x, &mut u);
        sampler.sample_into(&mut rng, &mut w);
        for i in 0..n {
            next[i] = dot(&a[i * n..(i + 1) * n], &x) + dot(&b[i * n..(i + 1) * n], &u) + w[i];
        }
        std::mem::swap(&mut x, &mut next);
    }
    Ok(BaselineResult {
        avg_cost: sum / steps.max(1) as f64,
        stderr: bm.stderr(),
        optimum: model.optimal_cost()?,
    })
}

/// Draws `count` uniform points in `[-r, r]` per axis; test helper for
/// property checks that need many inputs.
pub fn uniform_points<R: Rng + ?Sized>(rng: &mut R, count: usize, dim: usize, r: f64) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..dim).map(|_| rng.random_range(-r..=r)).collect()).collect()
}
