//! Modified uniform quantizers and their integer channel symbols.
//!
//! A grid with `M` bins of width `Δ` covers `[-(M/2)Δ, (M/2)Δ]`. Bin `i`
//! (0-based) has midpoint `(i - M/2 + 1/2)Δ`; the right endpoint belongs to the
//! top bin and anything outside the range quantizes to 0. Symbols carry bin
//! indices shifted by one so that 0 can mean overflow.

use std::io::{self, Read, Write};

use smallvec::SmallVec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizerError {
    #[error("grid needs an even bin count >= 2, got {0}")]
    BinCount(u32),
    #[error("bin width must be positive and finite, got {0}")]
    BinWidth(f64),
    #[error("corrupted message: {0}")]
    Corrupted(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    bins: u32,
    delta: f64,
}

impl UniformGrid {
    pub fn new(bins: u32, delta: f64) -> Result<Self, QuantizerError> {
        if bins < 2 || !bins.is_multiple_of(2) {
            return Err(QuantizerError::BinCount(bins));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(QuantizerError::BinWidth(delta));
        }
        Ok(Self { bins, delta })
    }

    /// Caller guarantees the invariants checked by [`UniformGrid::new`].
    pub(crate) fn new_unchecked(bins: u32, delta: f64) -> Self {
        debug_assert!(bins >= 2 && bins.is_multiple_of(2) && delta > 0.0);
        Self { bins, delta }
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `(M/2)Δ`.
    pub fn half_range(&self) -> f64 {
        f64::from(self.bins / 2) * self.delta
    }

    /// 0-based bin of `x`, or `None` on overflow (NaN included).
    #[inline]
    pub fn bin_index(&self, x: f64) -> Option<u32> {
        if !(x.abs() <= self.half_range()) {
            return None;
        }
        // |x/Δ| ≤ bins/2 here, so truncation toward zero fits in i64.
        let r = x / self.delta;
        let t = r as i64;
        let i = t - i64::from((t as f64) > r) + i64::from(self.bins / 2);
        Some(i.clamp(0, i64::from(self.bins) - 1) as u32)
    }

    /// Midpoint of 0-based bin `i`.
    #[inline]
    pub fn midpoint(&self, i: u32) -> f64 {
        (f64::from(i) - f64::from(self.bins / 2) + 0.5) * self.delta
    }

    #[inline]
    pub fn quantize(&self, x: f64) -> f64 {
        self.bin_index(x).map_or(0.0, |i| self.midpoint(i))
    }

    /// Every reconstruction point, in increasing order.
    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.bins).map(|i| self.midpoint(i))
    }
}

pub fn scalar_quantize(grid: &UniformGrid, x: f64) -> f64 {
    grid.quantize(x)
}

/// Joint quantizer: per-axis midpoints, or all zeros if any axis overflows.
pub fn type1_quantize(grid: &UniformGrid, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    type1_quantize_into(grid, x, &mut out);
    out
}

pub fn type1_quantize_into(grid: &UniformGrid, x: &[f64], out: &mut [f64]) {
    assert_eq!(x.len(), out.len());
    let in_view = x.iter().all(|&v| grid.bin_index(v).is_some());
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if in_view { grid.quantize(v) } else { 0.0 };
    }
}

/// Component-wise quantizer: overflow zeroes only the offending axis.
pub fn type2_quantize(grid: &UniformGrid, x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| grid.quantize(v)).collect()
}

pub fn type2_quantize_into(grid: &UniformGrid, x: &[f64], out: &mut [f64]) {
    assert_eq!(x.len(), out.len());
    for (o, &v) in out.iter_mut().zip(x) {
        *o = grid.quantize(v);
    }
}

/// `0` for overflow, else `1 + Σ i_j K^j` over 0-based axis bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AdaptiveSymbol(pub u32);

impl AdaptiveSymbol {
    pub const OVERFLOW: Self = Self(0);

    pub fn is_overflow(self) -> bool {
        self.0 == 0
    }
}

/// Per-axis `i + 1`, or `0` where that axis overflows.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FixedSymbol {
    pub coords: SmallVec<[u16; 4]>,
}

impl FixedSymbol {
    pub fn new(coords: &[u16]) -> Self {
        Self {
            coords: SmallVec::from_slice(coords),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// `Kⁿ + 1`.
pub fn adaptive_alphabet(bins: u32, dim: usize) -> u128 {
    u128::from(bins).pow(dim as u32) + 1
}

/// `(N + 1)ⁿ`.
pub fn fixed_alphabet(bins: u32, dim: usize) -> u128 {
    (u128::from(bins) + 1).pow(dim as u32)
}

/// # Panics
///
/// If `Kⁿ + 1` does not fit in 32 bits.
pub fn encode_adaptive(grid: &UniformGrid, x: &[f64]) -> AdaptiveSymbol {
    let k = u64::from(grid.bins);
    let mut index = 0u64;
    let mut place = 1u64;
    for &v in x {
        match grid.bin_index(v) {
            Some(i) => index += u64::from(i) * place,
            None => return AdaptiveSymbol::OVERFLOW,
        }
        place *= k;
    }
    AdaptiveSymbol(u32::try_from(index + 1).expect("adaptive alphabet exceeds 32 bits"))
}

pub fn decode_adaptive(sym: AdaptiveSymbol, grid: &UniformGrid, dim: usize) -> Result<Vec<f64>, QuantizerError> {
    let mut out = vec![0.0; dim];
    decode_adaptive_into(sym, grid, &mut out)?;
    Ok(out)
}

pub fn decode_adaptive_into(sym: AdaptiveSymbol, grid: &UniformGrid, out: &mut [f64]) -> Result<(), QuantizerError> {
    if sym.is_overflow() {
        out.fill(0.0);
        return Ok(());
    }
    let k = u64::from(grid.bins);
    let mut rest = u64::from(sym.0) - 1;
    for o in out.iter_mut() {
        *o = grid.midpoint((rest % k) as u32);
        rest /= k;
    }
    if rest != 0 {
        return Err(QuantizerError::Corrupted(format!(
            "adaptive symbol {} exceeds K^n = {}^{}",
            sym.0,
            grid.bins,
            out.len()
        )));
    }
    Ok(())
}

pub fn encode_fixed(grid: &UniformGrid, e: &[f64]) -> FixedSymbol {
    let mut sym = FixedSymbol {
        coords: SmallVec::from_elem(0, e.len()),
    };
    encode_fixed_into(grid, e, &mut sym.coords);
    sym
}

/// # Panics
///
/// If the grid has more than 65534 bins.
pub fn encode_fixed_into(grid: &UniformGrid, e: &[f64], coords: &mut [u16]) {
    assert_eq!(e.len(), coords.len());
    assert!(grid.bins < u32::from(u16::MAX), "fixed alphabet exceeds 16 bits");
    for (c, &v) in coords.iter_mut().zip(e) {
        *c = grid.bin_index(v).map_or(0, |i| i as u16 + 1);
    }
}

pub fn decode_fixed(sym: &FixedSymbol, grid: &UniformGrid) -> Result<Vec<f64>, QuantizerError> {
    let mut out = vec![0.0; sym.dim()];
    decode_fixed_into(&sym.coords, grid, &mut out)?;
    Ok(out)
}

pub fn decode_fixed_into(coords: &[u16], grid: &UniformGrid, out: &mut [f64]) -> Result<(), QuantizerError> {
    if coords.len() != out.len() {
        return Err(QuantizerError::Dimension {
            expected: out.len(),
            got: coords.len(),
        });
    }
    for (o, &c) in out.iter_mut().zip(coords) {
        *o = match c {
            0 => 0.0,
            c if u32::from(c) <= grid.bins => grid.midpoint(u32::from(c) - 1),
            c => {
                return Err(QuantizerError::Corrupted(format!(
                    "fixed coordinate {c} exceeds N = {}",
                    grid.bins
                )))
            }
        };
    }
    Ok(())
}

/// One step's channel payload.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ChannelMessage {
    pub adaptive: AdaptiveSymbol,
    pub fixed: FixedSymbol,
}

impl ChannelMessage {
    pub fn zeros(dim: usize) -> Self {
        Self {
            adaptive: AdaptiveSymbol::OVERFLOW,
            fixed: FixedSymbol {
                coords: SmallVec::from_elem(0, dim),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.fixed.dim()
    }

    /// Bytes on the wire: `u32` adaptive index then `n` `u16` coordinates,
    /// little-endian.
    pub fn wire_len(dim: usize) -> usize {
        4 + 2 * dim
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.adaptive.0.to_le_bytes())?;
        for c in &self.fixed.coords {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::wire_len(self.dim()));
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: &mut R, dim: usize) -> io::Result<Self> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let mut coords = SmallVec::with_capacity(dim);
        let mut b2 = [0u8; 2];
        for _ in 0..dim {
            r.read_exact(&mut b2)?;
            coords.push(u16::from_le_bytes(b2));
        }
        Ok(Self {
            adaptive: AdaptiveSymbol(u32::from_le_bytes(b4)),
            fixed: FixedSymbol { coords },
        })
    }

    pub fn from_bytes(bytes: &[u8], dim: usize) -> Result<Self, QuantizerError> {
        if bytes.len() != Self::wire_len(dim) {
            return Err(QuantizerError::Corrupted(format!(
                "message is {} bytes, expected {} for n = {dim}",
                bytes.len(),
                Self::wire_len(dim)
            )));
        }
        Self::read_from(&mut &bytes[..], dim).map_err(|e| QuantizerError::Corrupted(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: u32, d: f64) -> UniformGrid {
        UniformGrid::new(m, d).unwrap()
    }

    /// Midpoint table built independently from the bin edges.
    fn brute_force(m: u32, d: f64, x: f64) -> f64 {
        let half = f64::from(m) / 2.0;
        if x.abs() > half * d {
            return 0.0;
        }
        for i in 0..m {
            let lo = (f64::from(i) - half) * d;
            let hi = lo + d;
            let last = i == m - 1;
            if x >= lo && (x < hi || (last && x <= hi)) {
                return lo + d / 2.0;
            }
        }
        unreachable!("x = {x} not covered")
    }

    #[test]
    fn scalar_examples() {
        let g = grid(4, 1.0);
        assert_eq!(scalar_quantize(&g, 0.3), 0.5);
        assert_eq!(scalar_quantize(&g, 2.0), 1.5);
        assert_eq!(scalar_quantize(&g, 3.0), 0.0);
        assert_eq!(scalar_quantize(&g, -2.0), -1.5);
        assert_eq!(brute_force(4, 1.0, -2.0), -1.5);
        assert_eq!(scalar_quantize(&g, f64::NAN), 0.0);
    }

    #[test]
    fn matches_brute_force_table() {
        for &(m, d) in &[(2, 1.0), (4, 0.5), (8, 0.3), (6, 2.5)] {
            let g = grid(m, d);
            let h = g.half_range();
            for k in -400..=400 {
                let x = h * 1.1 * f64::from(k) / 400.0;
                assert!((g.quantize(x) - brute_force(m, d, x)).abs() < 1e-12, "m={m} d={d} x={x}");
            }
        }
    }

    #[test]
    fn type1_examples() {
        assert_eq!(type1_quantize(&grid(2, 2.0), &[0.4, -0.9]), vec![1.0, -1.0]);
        assert_eq!(type1_quantize(&grid(2, 2.0), &[0.4, 5.0]), vec![0.0, 0.0]);
        assert_eq!(type1_quantize(&grid(4, 1.0), &[2.0, 2.0]), vec![1.5, 1.5]);
    }

    #[test]
    fn type2_examples() {
        assert_eq!(type2_quantize(&grid(2, 1.0), &[0.3, 9.0]), vec![0.5, 0.0]);
        assert_eq!(type2_quantize(&grid(2, 1.0), &[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(type2_quantize(&grid(4, 0.5), &[-0.6]), vec![-0.75]);
        assert_eq!(brute_force(4, 0.5, -0.6), -0.75);
    }

    #[test]
    fn adaptive_codec_examples() {
        let g = grid(2, 2.0);
        assert_eq!(encode_adaptive(&g, &[0.4]), AdaptiveSymbol(2));
        assert_eq!(encode_adaptive(&g, &[5.0]), AdaptiveSymbol(0));
        assert_eq!(encode_adaptive(&g, &[0.4, -0.9]), AdaptiveSymbol(2));
        assert_eq!(decode_adaptive(AdaptiveSymbol(2), &g, 1).unwrap(), vec![1.0]);
        assert_eq!(decode_adaptive(AdaptiveSymbol(0), &g, 3).unwrap(), vec![0.0; 3]);
        assert!(matches!(
            decode_adaptive(AdaptiveSymbol(5), &g, 2),
            Err(QuantizerError::Corrupted(_))
        ));
    }

    #[test]
    fn adaptive_alphabet_is_exhausted_for_k4_n2() {
        let g = grid(4, 1.0);
        let mut seen = std::collections::HashSet::new();
        for s in 0..17u32 {
            let x = decode_adaptive(AdaptiveSymbol(s), &g, 2).unwrap();
            if s == 0 {
                assert_eq!(x, vec![0.0, 0.0]);
            } else {
                assert_eq!(encode_adaptive(&g, &x), AdaptiveSymbol(s));
                assert!(seen.insert(x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
            }
        }
        assert_eq!(seen.len(), 16);
        assert!(decode_adaptive(AdaptiveSymbol(17), &g, 2).is_err());
        assert_eq!(adaptive_alphabet(4, 2), 17);
    }

    #[test]
    fn fixed_codec_examples() {
        let g = grid(2, 1.0);
        let s = encode_fixed(&g, &[0.3, 9.0]);
        assert_eq!(s.coords.as_slice(), &[2, 0]);
        assert_eq!(decode_fixed(&s, &g).unwrap(), vec![0.5, 0.0]);
        let s = encode_fixed(&g, &[0.0, 0.0, 0.0]);
        assert_eq!(s.coords.as_slice(), &[2, 2, 2]);
        let g = grid(4, 0.5);
        let s = encode_fixed(&g, &[-0.6]);
        assert_eq!(s.coords.as_slice(), &[1]);
        assert_eq!(decode_fixed(&s, &g).unwrap(), vec![-0.75]);
        assert!(decode_fixed(&FixedSymbol::new(&[5]), &g).is_err());
        assert_eq!(fixed_alphabet(4, 2), 25);
    }

    #[test]
    fn wire_format_layout() {
        let msg = ChannelMessage {
            adaptive: AdaptiveSymbol(0x0102_0304),
            fixed: FixedSymbol::new(&[0x0506, 7]),
        };
        let bytes = msg.to_bytes();
        assert_eq!(bytes, vec![4, 3, 2, 1, 6, 5, 7, 0]);
        assert_eq!(ChannelMessage::from_bytes(&bytes, 2).unwrap(), msg);
        assert!(ChannelMessage::from_bytes(&bytes[..7], 2).is_err());
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert_eq!(UniformGrid::new(3, 1.0), Err(QuantizerError::BinCount(3)));
        assert_eq!(UniformGrid::new(0, 1.0), Err(QuantizerError::BinCount(0)));
        assert!(UniformGrid::new(2, 0.0).is_err());
        assert!(UniformGrid::new(2, f64::INFINITY).is_err());
    }
}
