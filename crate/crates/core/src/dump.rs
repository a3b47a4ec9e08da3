//! Binary trajectory dumps.
//!
//! Layout, all little-endian:
//!
//! | field        | type      |
//! |--------------|-----------|
//! | magic        | `b"QCTR"` |
//! | version      | u16 (= 1) |
//! | reserved     | u16 (= 0) |
//! | n            | u32       |
//! | params hash  | u64       |
//! | record count | u64       |
//!
//! followed by records `(t: u64, x: n×f64, delta_exp: i32, adaptive: u32,
//! fixed: n×u16)`. The count is patched in when the writer finishes.

use std::io::{self, Read, Seek, SeekFrom, Write};

use thiserror::Error;

use crate::codec::{CodecError, CoderState, Scheme, StepRecord};
use crate::model::{SchemeParams, SystemModel};
use crate::quantizer::ChannelMessage;

pub const MAGIC: [u8; 4] = *b"QCTR";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 28;

#[derive(Debug, Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a trajectory dump (bad magic {0:?})")]
    Magic([u8; 4]),
    #[error("unsupported dump version {0}")]
    Version(u16),
    #[error("dump was written for parameters with hash {found:016x}, expected {expected:016x}")]
    ParamsMismatch { expected: u64, found: u64 },
    #[error("dump has n = {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// FNV-1a over the scheme parameters and state dimension.
pub fn params_hash(params: &SchemeParams, dim: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(&(dim as u64).to_le_bytes());
    feed(&params.adaptive_bins.to_le_bytes());
    feed(&params.fixed_bins.to_le_bytes());
    feed(&params.zoom_base.numer().to_le_bytes());
    feed(&params.zoom_base.denom().to_le_bytes());
    feed(&params.contract_steps.to_le_bytes());
    feed(&params.expand_steps.to_le_bytes());
    feed(&params.hold_threshold.to_bits().to_le_bytes());
    feed(&params.initial_exponent.to_le_bytes());
    feed(&params.moment_order.to_bits().to_le_bytes());
    feed(&params.moment_slack.to_bits().to_le_bytes());
    h
}

/// One stored step: what the encoder saw and sent.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub t: u64,
    pub x: Vec<f64>,
    pub delta_exp: i32,
    pub message: ChannelMessage,
}

pub struct TrajectoryWriter<W: Write + Seek> {
    inner: W,
    dim: usize,
    count: u64,
}

impl<W: Write + Seek> TrajectoryWriter<W> {
    pub fn new(mut inner: W, scheme: &Scheme) -> io::Result<Self> {
        inner.write_all(&MAGIC)?;
        inner.write_all(&VERSION.to_le_bytes())?;
        inner.write_all(&0u16.to_le_bytes())?;
        inner.write_all(&(scheme.dim() as u32).to_le_bytes())?;
        inner.write_all(&params_hash(scheme.params(), scheme.dim()).to_le_bytes())?;
        inner.write_all(&0u64.to_le_bytes())?;
        Ok(Self {
            inner,
            dim: scheme.dim(),
            count: 0,
        })
    }

    pub fn push(&mut self, t: u64, x: &[f64], state: CoderState, message: &ChannelMessage) -> io::Result<()> {
        assert!(x.len() == self.dim && message.dim() == self.dim, "record dimension mismatch");
        self.inner.write_all(&t.to_le_bytes())?;
        for v in x {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        self.inner.write_all(&state.delta_exp.to_le_bytes())?;
        message.write_to(&mut self.inner)?;
        self.count += 1;
        Ok(())
    }

    /// Writes the record count into the header and returns the sink.
    pub fn finish(mut self) -> io::Result<W> {
        let end = self.inner.stream_position()?;
        self.inner.seek(SeekFrom::Start(HEADER_LEN - 8))?;
        self.inner.write_all(&self.count.to_le_bytes())?;
        self.inner.seek(SeekFrom::Start(end))?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dump {
    pub dim: usize,
    pub params_hash: u64,
    pub records: Vec<RawRecord>,
}

fn read_array<const L: usize, R: Read>(r: &mut R) -> io::Result<[u8; L]> {
    let mut b = [0u8; L];
    r.read_exact(&mut b)?;
    Ok(b)
}

impl Dump {
    pub fn read<R: Read>(r: &mut R) -> Result<Self, DumpError> {
        let magic = read_array::<4, _>(r)?;
        if magic != MAGIC {
            return Err(DumpError::Magic(magic));
        }
        let version = u16::from_le_bytes(read_array(r)?);
        if version != VERSION {
            return Err(DumpError::Version(version));
        }
        let _reserved = read_array::<2, _>(r)?;
        let dim = u32::from_le_bytes(read_array(r)?) as usize;
        let params_hash = u64::from_le_bytes(read_array(r)?);
        let count = u64::from_le_bytes(read_array(r)?);
        let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
        for _ in 0..count {
            let t = u64::from_le_bytes(read_array(r)?);
            let x = (0..dim)
                .map(|_| read_array(r).map(f64::from_le_bytes))
                .collect::<io::Result<Vec<_>>>()?;
            let delta_exp = i32::from_le_bytes(read_array(r)?);
            let message = ChannelMessage::read_from(r, dim)?;
            records.push(RawRecord {
                t,
                x,
                delta_exp,
                message,
            });
        }
        Ok(Self {
            dim,
            params_hash,
            records,
        })
    }

    /// Decodes every record against `scheme`, which must match the header.
    pub fn step_records(&self, scheme: &Scheme, model: &SystemModel) -> Result<Vec<StepRecord>, DumpError> {
        if self.dim != scheme.dim() {
            return Err(DumpError::Dimension {
                expected: scheme.dim(),
                found: self.dim,
            });
        }
        let expected = params_hash(scheme.params(), scheme.dim());
        if self.params_hash != expected {
            return Err(DumpError::ParamsMismatch {
                expected,
                found: self.params_hash,
            });
        }
        self.records
            .iter()
            .map(|r| {
                StepRecord::reconstruct(
                    scheme,
                    model,
                    r.t,
                    r.x.clone(),
                    CoderState { delta_exp: r.delta_exp },
                    r.message.clone(),
                )
                .map_err(DumpError::from)
            })
            .collect()
    }

    /// CSV projection with columns `t, x0, …, x{n-1}, delta`.
    pub fn write_csv<W: Write>(&self, params: &SchemeParams, w: &mut W) -> io::Result<()> {
        let xs: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "t,{},delta", xs.join(","))?;
        for r in &self.records {
            write!(w, "{}", r.t)?;
            for v in &r.x {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", params.bin_size(r.delta_exp))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::ClosedLoop;
    use crate::noise::NoiseSpec;
    use std::io::Cursor;

    fn setup() -> (Scheme, SystemModel) {
        let model = SystemModel::scalar(1.2, 1.0, NoiseSpec::scaled_bg(4.0, 2.0, 1).unwrap()).unwrap();
        (Scheme::new(SchemeParams::scalar_example(100), 1).unwrap(), model)
    }

    #[test]
    fn empty_dump_has_valid_header() {
        let (scheme, model) = setup();
        let w = TrajectoryWriter::new(Cursor::new(Vec::new()), &scheme).unwrap();
        let bytes = w.finish().unwrap().into_inner();
        assert_eq!(bytes.len() as u64, HEADER_LEN);
        let dump = Dump::read(&mut &bytes[..]).unwrap();
        assert!(dump.records.is_empty());
        assert!(dump.step_records(&scheme, &model).unwrap().is_empty());
    }

    #[test]
    fn records_round_trip_bit_exact() {
        let (scheme, model) = setup();
        let mut cl = ClosedLoop::new(scheme, &model, &[0.0]).unwrap();
        cl.set_ring_capacity(300);
        let mut w = TrajectoryWriter::new(Cursor::new(Vec::new()), &scheme).unwrap();
        let mut rng = crate::trial_rng(5, 0);
        for _ in 0..300 {
            let x = cl.state().to_vec();
            let state = cl.encoder().state();
            cl.step(&mut rng).unwrap();
            w.push(cl.t() - 1, &x, state, cl.encoder().message()).unwrap();
        }
        let bytes = w.finish().unwrap().into_inner();
        assert_eq!(bytes.len() as u64, HEADER_LEN + 300 * (8 + 8 + 4 + 4 + 2));
        let dump = Dump::read(&mut &bytes[..]).unwrap();
        let rebuilt = dump.step_records(&scheme, &model).unwrap();
        let kept: Vec<_> = cl.records().cloned().collect();
        assert_eq!(rebuilt, kept);
    }

    #[test]
    fn wrong_params_are_rejected() {
        let (scheme, model) = setup();
        let bytes = TrajectoryWriter::new(Cursor::new(Vec::new()), &scheme).unwrap().finish().unwrap().into_inner();
        let other = Scheme::new(SchemeParams::scalar_example(102), 1).unwrap();
        let dump = Dump::read(&mut &bytes[..]).unwrap();
        assert!(matches!(dump.step_records(&other, &model), Err(DumpError::ParamsMismatch { .. })));
        assert!(matches!(Dump::read(&mut &b"XXXX"[..]), Err(DumpError::Magic(_))));
    }
}
