//! Encoder, decoder/controller and plant as separate state machines.
//!
//! Each side holds its own [`CoderState`]. The decoder learns whether the
//! state was in view from the adaptive symbol alone (0 means overflow), which
//! is all the bin update needs, so the two exponents agree at every step.

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::model::{InitSpec, ModelError, SchemeParams, SystemModel};
use crate::noise::NoiseSampler;
use crate::quantizer::{
    adaptive_alphabet, decode_adaptive_into, decode_fixed_into, encode_adaptive, encode_fixed_into, fixed_alphabet,
    ChannelMessage, QuantizerError, UniformGrid,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("protocol violation: {0}")]
    Protocol(#[from] QuantizerError),
    #[error("encoder/decoder exponents diverged at t = {t}: encoder {encoder}, decoder {decoder}")]
    SyncLost { t: u64, encoder: i32, decoder: i32 },
    #[error("bin size L*g^{exponent} is not finite")]
    BinSizeOverflow { exponent: i32 },
    #[error("dynamics identity violated at t = {t}, axis {axis}: pipeline {pipeline:e}, formula {formula:e}")]
    DynamicsMismatch {
        t: u64,
        axis: usize,
        pipeline: f64,
        formula: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("adaptive alphabet K^n + 1 or fixed bin count N does not fit the wire format")]
    WireFormat,
}

/// Scheme parameters bound to a state dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scheme {
    params: SchemeParams,
    dim: usize,
    fixed: UniformGrid,
}

impl Scheme {
    pub fn new(params: SchemeParams, dim: usize) -> Result<Self, CodecError> {
        params.check_structure()?;
        if dim == 0 {
            return Err(CodecError::Dimension { expected: 1, got: 0 });
        }
        if dim > 32 || adaptive_alphabet(params.adaptive_bins, dim) > u128::from(u32::MAX) || params.fixed_bins >= u32::from(u16::MAX) {
            return Err(CodecError::WireFormat);
        }
        let fixed = UniformGrid::new(params.fixed_bins, params.fixed_bin_size())?;
        Ok(Self { params, dim, fixed })
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fixed_grid(&self) -> &UniformGrid {
        &self.fixed
    }

    pub fn adaptive_grid(&self, state: CoderState) -> Result<UniformGrid, CodecError> {
        let delta = self.params.bin_size(state.delta_exp);
        if !(delta.is_finite() && delta > 0.0) {
            return Err(CodecError::BinSizeOverflow {
                exponent: state.delta_exp,
            });
        }
        Ok(UniformGrid::new_unchecked(self.params.adaptive_bins, delta))
    }

    pub fn initial_state(&self) -> CoderState {
        CoderState {
            delta_exp: self.params.initial_exponent,
        }
    }

    /// `(Kⁿ + 1)(N + 1)ⁿ`.
    pub fn alphabet_size(&self) -> u128 {
        adaptive_alphabet(self.params.adaptive_bins, self.dim) * fixed_alphabet(self.params.fixed_bins, self.dim)
    }
}

/// Last adaptive grid, rebuilt only when the exponent changes.
#[derive(Debug, Clone, Copy, Default)]
struct GridCache {
    slot: Option<(i32, UniformGrid)>,
}

impl GridCache {
    #[inline]
    fn get(&mut self, scheme: &Scheme, state: CoderState) -> Result<UniformGrid, CodecError> {
        match self.slot {
            Some((exp, grid)) if exp == state.delta_exp => Ok(grid),
            _ => {
                let grid = scheme.adaptive_grid(state)?;
                self.slot = Some((state.delta_exp, grid));
                Ok(grid)
            }
        }
    }
}

/// Bin-size exponent `m`, with `Δ = L·g^m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CoderState {
    pub delta_exp: i32,
}

impl CoderState {
    pub fn bin_size(&self, params: &SchemeParams) -> f64 {
        params.bin_size(self.delta_exp)
    }
}

/// Zoom out by ρ on overflow, in by α while `Δ ≥ L`, else hold.
#[inline]
pub fn bin_update(exp: i32, in_view: bool, params: &SchemeParams) -> i32 {
    if !in_view {
        exp + params.expand_steps as i32
    } else if exp >= 0 {
        exp - params.contract_steps as i32
    } else {
        exp
    }
}

/// Encoder side: quantizes the state and tracks its own exponent.
#[derive(Debug, Clone)]
pub struct Encoder {
    scheme: Scheme,
    state: CoderState,
    coarse: Vec<f64>,
    error: Vec<f64>,
    message: ChannelMessage,
    grid: GridCache,
}

impl Encoder {
    pub fn new(scheme: Scheme) -> Self {
        Self::with_state(scheme, scheme.initial_state())
    }

    pub fn with_state(scheme: Scheme, state: CoderState) -> Self {
        let n = scheme.dim;
        Self {
            scheme,
            state,
            coarse: vec![0.0; n],
            error: vec![0.0; n],
            message: ChannelMessage::zeros(n),
            grid: GridCache::default(),
        }
    }

    pub fn state(&self) -> CoderState {
        self.state
    }

    /// Adaptive reconstruction `Q(x)` of the last encoded state.
    pub fn coarse(&self) -> &[f64] {
        &self.coarse
    }

    /// Adaptive error `e = x - Q(x)` of the last encoded state.
    pub fn error(&self) -> &[f64] {
        &self.error
    }

    pub fn message(&self) -> &ChannelMessage {
        &self.message
    }

    pub fn encode(&mut self, x: &[f64]) -> Result<&ChannelMessage, CodecError> {
        if x.len() != self.scheme.dim {
            return Err(CodecError::Dimension {
                expected: self.scheme.dim,
                got: x.len(),
            });
        }
        let grid = self.grid.get(&self.scheme, self.state)?;
        self.message.adaptive = encode_adaptive(&grid, x);
        decode_adaptive_into(self.message.adaptive, &grid, &mut self.coarse)?;
        for ((e, &xi), &q) in self.error.iter_mut().zip(x).zip(&self.coarse) {
            *e = xi - q;
        }
        encode_fixed_into(&self.scheme.fixed, &self.error, &mut self.message.fixed.coords);
        self.state.delta_exp = bin_update(self.state.delta_exp, !self.message.adaptive.is_overflow(), &self.scheme.params);
        Ok(&self.message)
    }
}

/// Decoder/controller side: reconstructs the estimate and applies
/// `u = -B⁻¹A x̂`.
#[derive(Debug, Clone)]
pub struct Decoder {
    scheme: Scheme,
    state: CoderState,
    grid: GridCache,
    neg_gain: Vec<f64>,
    coarse: Vec<f64>,
    fine: Vec<f64>,
    estimate: Vec<f64>,
    control: Vec<f64>,
}

impl Decoder {
    pub fn new(scheme: Scheme, model: &SystemModel) -> Result<Self, CodecError> {
        Self::with_state(scheme, model, scheme.initial_state())
    }

    pub fn with_state(scheme: Scheme, model: &SystemModel, state: CoderState) -> Result<Self, CodecError> {
        let n = scheme.dim;
        if model.dim() != n {
            return Err(CodecError::Dimension {
                expected: n,
                got: model.dim(),
            });
        }
        Ok(Self {
            scheme,
            state,
            grid: GridCache::default(),
            neg_gain: row_major(&-model.control_gain()),
            coarse: vec![0.0; n],
            fine: vec![0.0; n],
            estimate: vec![0.0; n],
            control: vec![0.0; n],
        })
    }

    pub fn state(&self) -> CoderState {
        self.state
    }

    /// `x̂ = Q(x) + U(e)` from the last message.
    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    /// Decoded `U(e)` from the last message.
    pub fn fine(&self) -> &[f64] {
        &self.fine
    }

    pub fn control(&self) -> &[f64] {
        &self.control
    }

    /// Decodes one message and returns the control. On error the state is
    /// left unchanged.
    pub fn decode(&mut self, msg: &ChannelMessage) -> Result<&[f64], CodecError> {
        let n = self.scheme.dim;
        if msg.dim() != n {
            return Err(CodecError::Dimension {
                expected: n,
                got: msg.dim(),
            });
        }
        let grid = self.grid.get(&self.scheme, self.state)?;
        decode_adaptive_into(msg.adaptive, &grid, &mut self.coarse)?;
        decode_fixed_into(&msg.fixed.coords, &self.scheme.fixed, &mut self.fine)?;
        for ((h, &c), &f) in self.estimate.iter_mut().zip(&self.coarse).zip(&self.fine) {
            *h = c + f;
        }
        mat_vec(&self.neg_gain, &self.estimate, &mut self.control);
        self.state.delta_exp = bin_update(self.state.delta_exp, !msg.adaptive.is_overflow(), &self.scheme.params);
        Ok(&self.control)
    }
}

/// One encoder pass from `state`: the message, the next state and `e`.
pub fn encode_step(scheme: &Scheme, state: CoderState, x: &[f64]) -> Result<(ChannelMessage, CoderState, Vec<f64>), CodecError> {
    let mut enc = Encoder::with_state(*scheme, state);
    let msg = enc.encode(x)?.clone();
    Ok((msg, enc.state, enc.error))
}

/// One decoder pass from `state`: `x̂`, `u` and the next state.
pub fn decode_step(
    scheme: &Scheme,
    state: CoderState,
    msg: &ChannelMessage,
    model: &SystemModel,
) -> Result<(Vec<f64>, Vec<f64>, CoderState), CodecError> {
    let mut dec = Decoder::with_state(*scheme, model, state)?;
    dec.decode(msg)?;
    Ok((dec.estimate, dec.control, dec.state))
}

/// `A x + B u + w`.
pub fn plant_step(model: &SystemModel, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
    let n = model.dim();
    assert!(x.len() == n && u.len() == n && w.len() == n, "plant_step: dimension mismatch");
    let a = row_major(model.dynamics());
    let b = row_major(model.input());
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = dot(&a[i * n..(i + 1) * n], x) + dot(&b[i * n..(i + 1) * n], u) + w[i];
    }
    out
}

pub(crate) fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&m[i * n..(i + 1) * n], v);
    }
}

/// Everything observable about one closed-loop step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub x: Vec<f64>,
    pub delta_exp: i32,
    pub delta: f64,
    pub e: Vec<f64>,
    pub xhat: Vec<f64>,
    pub u: Vec<f64>,
    pub in_view: bool,
    pub message: ChannelMessage,
}

impl StepRecord {
    /// Rebuilds a record from what the channel carried.
    pub fn reconstruct(
        scheme: &Scheme,
        model: &SystemModel,
        t: u64,
        x: Vec<f64>,
        state: CoderState,
        message: ChannelMessage,
    ) -> Result<Self, CodecError> {
        let grid = scheme.adaptive_grid(state)?;
        let mut coarse = vec![0.0; scheme.dim];
        decode_adaptive_into(message.adaptive, &grid, &mut coarse)?;
        let e = x.iter().zip(&coarse).map(|(a, b)| a - b).collect();
        let (xhat, u, _) = decode_step(scheme, state, &message, model)?;
        Ok(Self {
            t,
            x,
            delta_exp: state.delta_exp,
            delta: grid.delta(),
            e,
            xhat,
            u,
            in_view: !message.adaptive.is_overflow(),
            message,
        })
    }
}

/// Summary of one step, returned on the hot path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub t: u64,
    /// `x_tᵀ Q x_t` for the state before the step.
    pub cost: f64,
    pub in_view: bool,
    pub delta_exp: i32,
}

/// Restartable closed-loop state.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: u64,
    pub x: Vec<f64>,
    pub encoder: CoderState,
    pub decoder: CoderState,
}

/// Plant, encoder and decoder wired together.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    scheme: Scheme,
    encoder: Encoder,
    decoder: Decoder,
    sampler: NoiseSampler,
    a: Vec<f64>,
    b: Vec<f64>,
    q: Vec<f64>,
    x: Vec<f64>,
    w: Vec<f64>,
    next: Vec<f64>,
    residual: Vec<f64>,
    t: u64,
    verify: bool,
    ring: Option<(usize, VecDeque<StepRecord>)>,
}

impl ClosedLoop {
    pub fn new(scheme: Scheme, model: &SystemModel, x0: &[f64]) -> Result<Self, CodecError> {
        let n = scheme.dim;
        if x0.len() != n {
            return Err(CodecError::Dimension {
                expected: n,
                got: x0.len(),
            });
        }
        Ok(Self {
            scheme,
            encoder: Encoder::new(scheme),
            decoder: Decoder::new(scheme, model)?,
            sampler: model.noise().sampler(),
            a: row_major(model.dynamics()),
            b: row_major(model.input()),
            q: row_major(model.cost()),
            x: x0.to_vec(),
            w: vec![0.0; n],
            next: vec![0.0; n],
            residual: vec![0.0; n],
            t: 0,
            verify: true,
            ring: None,
        })
    }

    /// Starts from the model's initial-state law, drawing from `rng` if random.
    pub fn from_init<R: Rng + ?Sized>(scheme: Scheme, model: &SystemModel, rng: &mut R) -> Result<Self, CodecError> {
        let x0 = match model.init() {
            InitSpec::Point(x) => x.clone(),
            InitSpec::Random(spec) => spec.sample(rng),
        };
        Self::new(scheme, model, &x0)
    }

    pub fn restore(scheme: Scheme, model: &SystemModel, snap: &Snapshot) -> Result<Self, CodecError> {
        let mut cl = Self::new(scheme, model, &snap.x)?;
        cl.t = snap.t;
        cl.encoder.state = snap.encoder;
        cl.decoder.state = snap.decoder;
        Ok(cl)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            t: self.t,
            x: self.x.clone(),
            encoder: self.encoder.state,
            decoder: self.decoder.state,
        }
    }

    /// Toggles the per-step check of the closed-form dynamics.
    pub fn set_verify(&mut self, on: bool) {
        self.verify = on;
    }

    /// Keeps the last `capacity` step records; 0 disables retention.
    pub fn set_ring_capacity(&mut self, capacity: usize) {
        self.ring = (capacity > 0).then(|| (capacity, VecDeque::with_capacity(capacity.min(1 << 16))));
    }

    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        self.ring.iter().flat_map(|(_, r)| r.iter())
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// `e - U(e)` from the last step.
    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    /// Noise applied in the last step.
    pub fn last_noise(&self) -> &[f64] {
        &self.w
    }

    pub fn quadratic_cost(&self, x: &[f64]) -> f64 {
        let n = x.len();
        (0..n).map(|i| x[i] * dot(&self.q[i * n..(i + 1) * n], x)).sum()
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<StepOutcome, CodecError> {
        self.sampler.sample_into(rng, &mut self.w);
        self.advance()
    }

    pub fn step_with_noise(&mut self, w: &[f64]) -> Result<StepOutcome, CodecError> {
        if w.len() != self.scheme.dim {
            return Err(CodecError::Dimension {
                expected: self.scheme.dim,
                got: w.len(),
            });
        }
        self.w.copy_from_slice(w);
        self.advance()
    }

    fn advance(&mut self) -> Result<StepOutcome, CodecError> {
        let (enc_state, dec_state) = (self.encoder.state, self.decoder.state);
        if enc_state != dec_state {
            return Err(CodecError::SyncLost {
                t: self.t,
                encoder: enc_state.delta_exp,
                decoder: dec_state.delta_exp,
            });
        }
        let cost = self.quadratic_cost(&self.x);
        let msg = self.encoder.encode(&self.x)?;
        let in_view = !msg.adaptive.is_overflow();
        self.decoder.decode(msg)?;

        let n = self.scheme.dim;
        let u = &self.decoder.control;
        for i in 0..n {
            self.next[i] = dot(&self.a[i * n..(i + 1) * n], &self.x) + dot(&self.b[i * n..(i + 1) * n], u) + self.w[i];
        }
        for ((r, &e), &f) in self.residual.iter_mut().zip(&self.encoder.error).zip(&self.decoder.fine) {
            *r = e - f;
        }
        if self.verify {
            self.check_dynamics()?;
        }
        if let Some((cap, ring)) = &mut self.ring {
            if ring.len() == *cap {
                ring.pop_front();
            }
            ring.push_back(StepRecord {
                t: self.t,
                x: self.x.clone(),
                delta_exp: enc_state.delta_exp,
                delta: self.scheme.params.bin_size(enc_state.delta_exp),
                e: self.encoder.error.clone(),
                xhat: self.decoder.estimate.clone(),
                u: self.decoder.control.clone(),
                in_view,
                message: self.encoder.message.clone(),
            });
        }
        let outcome = StepOutcome {
            t: self.t,
            cost,
            in_view,
            delta_exp: enc_state.delta_exp,
        };
        std::mem::swap(&mut self.x, &mut self.next);
        self.t += 1;
        Ok(outcome)
    }

    /// `x' = A(e - U(e)) + w`, relative to the magnitude of the summed terms.
    fn check_dynamics(&self) -> Result<(), CodecError> {
        let n = self.scheme.dim;
        let u = &self.decoder.control;
        for i in 0..n {
            let row_a = &self.a[i * n..(i + 1) * n];
            let row_b = &self.b[i * n..(i + 1) * n];
            let formula = dot(row_a, &self.residual) + self.w[i];
            let scale: f64 = row_a.iter().zip(&self.x).map(|(a, x)| (a * x).abs()).sum::<f64>()
                + row_b.iter().zip(u).map(|(b, u)| (b * u).abs()).sum::<f64>()
                + self.w[i].abs();
            if (self.next[i] - formula).abs() > 1e-12 * scale.max(1.0) {
                return Err(CodecError::DynamicsMismatch {
                    t: self.t,
                    axis: i,
                    pipeline: self.next[i],
                    formula,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Matrix;
    use crate::noise::NoiseSpec;

    fn example() -> (Scheme, SystemModel) {
        let model = SystemModel::scalar(1.2, 1.0, NoiseSpec::scaled_bg(4.0, 2.0, 1).unwrap()).unwrap();
        (Scheme::new(SchemeParams::scalar_example(100), 1).unwrap(), model)
    }

    #[test]
    fn bin_update_branches() {
        let p = SchemeParams::scalar_example(100);
        assert_eq!(bin_update(0, true, &p), -1);
        assert_eq!(p.bin_size(-1), 6.75);
        assert_eq!(bin_update(0, false, &p), 3);
        assert_eq!(p.bin_size(3), 64.0 / 3.0);
        assert_eq!(bin_update(-1, true, &p), -1);
        assert_eq!(bin_update(-1, false, &p), 2);
    }

    #[test]
    fn encode_in_view_contracts() {
        let (scheme, _) = example();
        let (msg, next, e) = encode_step(&scheme, CoderState { delta_exp: 0 }, &[0.4]).unwrap();
        // bins [-9, 0) and [0, 9] with midpoints -4.5 and 4.5
        assert_eq!(msg.adaptive.0, 2);
        assert_eq!(e, vec![0.4 - 4.5]);
        assert_eq!(next.bin_size(scheme.params()), 6.75);
    }

    #[test]
    fn encode_overflow_expands() {
        let (scheme, _) = example();
        let (msg, next, e) = encode_step(&scheme, CoderState { delta_exp: 0 }, &[100.0]).unwrap();
        assert!(msg.adaptive.is_overflow());
        assert_eq!(e, vec![100.0]);
        assert_eq!(next.bin_size(scheme.params()), 64.0 / 3.0);
        // |e| exceeds (N/2)Δ(N) so the fixed part overflows too
        assert_eq!(msg.fixed.coords.as_slice(), &[0]);
    }

    #[test]
    fn encode_below_threshold_holds() {
        let (scheme, _) = example();
        let (_, next, _) = encode_step(&scheme, CoderState { delta_exp: -1 }, &[0.4]).unwrap();
        assert_eq!(next.delta_exp, -1);
    }

    #[test]
    fn decode_examples() {
        let (scheme, model) = example();
        let msg = ChannelMessage::zeros(1);
        let (xhat, u, next) = decode_step(&scheme, CoderState { delta_exp: 0 }, &msg, &model).unwrap();
        assert_eq!((xhat, u, next.delta_exp), (vec![0.0], vec![0.0], 3));

        let mut dec = Decoder::new(scheme, &model).unwrap();
        let bad = ChannelMessage {
            adaptive: crate::AdaptiveSymbol(3),
            fixed: crate::FixedSymbol::new(&[1]),
        };
        assert!(matches!(dec.decode(&bad), Err(CodecError::Protocol(_))));
        assert_eq!(dec.state().delta_exp, 0);

        let n2 = SystemModel::new(
            Matrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            NoiseSpec::zero(2),
            InitSpec::Point(vec![0.0, 0.0]),
        )
        .unwrap();
        let gain = -n2.control_gain() * nalgebra::DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(gain.as_slice(), &[-2.0, 0.0]);
    }

    #[test]
    fn controller_gain_scalar() {
        let (scheme, model) = example();
        // fixed part overflowing leaves x̂ at the adaptive midpoint
        let msg = ChannelMessage {
            adaptive: crate::AdaptiveSymbol(2),
            fixed: crate::FixedSymbol::new(&[0]),
        };
        let (xhat, u, _) = decode_step(&scheme, CoderState { delta_exp: 0 }, &msg, &model).unwrap();
        assert_eq!(xhat, vec![4.5]);
        assert!((u[0] + 5.4).abs() < 1e-15);
        // gain alone: x̂ = 2.25 gives u = -2.7
        let u = -model.control_gain() * nalgebra::DVector::from_vec(vec![2.25]);
        assert!((u[0] + 2.7).abs() < 1e-15);
    }

    #[test]
    fn plant_step_examples() {
        let m = SystemModel::scalar(1.2, 1.0, NoiseSpec::zero(1)).unwrap();
        assert_eq!(plant_step(&m, &[1.0], &[0.0], &[0.0]), vec![1.2]);
        let m = SystemModel::new(
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            NoiseSpec::zero(2),
            InitSpec::Point(vec![0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(plant_step(&m, &[1.0, 1.0], &[-1.0, -1.0], &[0.5, 0.0]), vec![0.5, 0.0]);
    }

    #[test]
    fn composed_step_matches_closed_form() {
        let (scheme, model) = example();
        let state = CoderState { delta_exp: 0 };
        let (msg, _, e) = encode_step(&scheme, state, &[0.4]).unwrap();
        let (_, u, _) = decode_step(&scheme, state, &msg, &model).unwrap();
        let w = 0.37;
        let x1 = plant_step(&model, &[0.4], &u, &[w])[0];
        let ue = scheme.fixed_grid().quantize(e[0]);
        assert!((x1 - (1.2 * (e[0] - ue) + w)).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_granular_bound() {
        let params = SchemeParams::scalar_example(1000);
        let model = SystemModel::scalar(1.2, 1.0, NoiseSpec::zero(1)).unwrap();
        let scheme = Scheme::new(params, 1).unwrap();
        let mut cl = ClosedLoop::new(scheme, &model, &[3.3]).unwrap();
        cl.step_with_noise(&[0.0]).unwrap();
        assert!(cl.state()[0].abs() <= 1.2 * params.fixed_bin_size() / 2.0 + 1e-15);
    }

    #[test]
    fn far_start_zooms_out_each_step() {
        let (scheme, model) = example();
        let mut cl = ClosedLoop::new(scheme, &model, &[1e6]).unwrap();
        let model0 = model.with_noise(NoiseSpec::zero(1)).unwrap();
        let mut cl0 = ClosedLoop::new(scheme, &model0, &[1e6]).unwrap();
        let mut prev = 0;
        for k in 0..10 {
            let o = cl0.step_with_noise(&[0.0]).unwrap();
            assert!(!o.in_view);
            assert_eq!(o.delta_exp, 3 * k);
            prev = o.delta_exp;
        }
        assert_eq!(prev, 27);
        let o = cl.step_with_noise(&[0.0]).unwrap();
        assert!(!o.in_view);
    }

    #[test]
    fn snapshot_replay_is_identical() {
        let (scheme, model) = example();
        let mut rng = crate::trial_rng(7, 0);
        let mut cl = ClosedLoop::new(scheme, &model, &[0.0]).unwrap();
        for _ in 0..500 {
            cl.step(&mut rng).unwrap();
        }
        let snap = cl.snapshot();
        let mut rng2 = rng.clone();
        let mut replay = ClosedLoop::restore(scheme, &model, &snap).unwrap();
        for _ in 0..500 {
            let a = cl.step(&mut rng).unwrap();
            let b = replay.step(&mut rng2).unwrap();
            assert_eq!(a, b);
            assert_eq!(cl.state(), replay.state());
        }
    }

    #[test]
    fn ring_keeps_latest_records() {
        let (scheme, model) = example();
        let mut cl = ClosedLoop::new(scheme, &model, &[0.0]).unwrap();
        cl.set_ring_capacity(3);
        let mut rng = crate::trial_rng(1, 0);
        for _ in 0..10 {
            cl.step(&mut rng).unwrap();
        }
        let ts: Vec<u64> = cl.records().map(|r| r.t).collect();
        assert_eq!(ts, vec![7, 8, 9]);
        for r in cl.records() {
            let rebuilt = StepRecord::reconstruct(&scheme, &model, r.t, r.x.clone(), CoderState { delta_exp: r.delta_exp }, r.message.clone()).unwrap();
            assert_eq!(&rebuilt, r);
        }
    }

    #[test]
    fn desync_is_detected() {
        let (scheme, model) = example();
        let snap = Snapshot {
            t: 4,
            x: vec![0.0],
            encoder: CoderState { delta_exp: 0 },
            decoder: CoderState { delta_exp: 3 },
        };
        let mut cl = ClosedLoop::restore(scheme, &model, &snap).unwrap();
        assert_eq!(
            cl.step_with_noise(&[0.0]),
            Err(CodecError::SyncLost {
                t: 4,
                encoder: 0,
                decoder: 3
            })
        );
    }
}
