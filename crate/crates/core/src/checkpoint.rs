//! Binary snapshot format shared by checkpoints and field files.
//!
//! Layout, all little-endian: the 8-byte magic `TFLOWCK1`, a `u32` version,
//! `u32 m`, `m × u64` dims, `m × f64` periods, `f64 t`, `u64 step`, `u64 rows`,
//! `u64` run hash, `u8` flow code, `u8` presence flags, then `f64` planes:
//! the packed metric, and when flagged `f`, `u`, a warm-start vector, and the
//! model (`w`, `h`, then `m` harmonic coefficients). A CRC-32 of everything
//! before it closes the file. Values are widened to `f64`, so `f32` data
//! round-trips exactly.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{sym_len, MetricField, SymTensorField};
use crate::flow::{FlowKind, FlowState};
use crate::grid::ChartGrid;
use crate::model::FoliationModel;
use crate::scalar::Real;

pub const MAGIC: &[u8; 8] = b"TFLOWCK1";
pub const VERSION: u32 = 1;

const HAS_F: u8 = 1;
const HAS_U: u8 = 2;
const HAS_WARM: u8 = 4;
const HAS_MODEL: u8 = 8;

/// Everything needed to continue a run, or to seed one from a file.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub kind: FlowKind,
    /// Fingerprint of the configuration that produced the file.
    pub run_hash: u64,
    /// Number of series rows written when the snapshot was taken.
    pub rows: u64,
    pub state: FlowState<T>,
    /// Starting vector for the next eigensolve, so a resumed run repeats the
    /// uninterrupted one exactly.
    pub warm_start: Option<Vec<T>>,
    pub model: Option<FoliationModel<T>>,
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn put_plane<T: Real>(buf: &mut Vec<u8>, plane: &[T]) {
    for &x in plane {
        buf.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn encode(&self) -> Vec<u8> {
        let g = &self.state.g;
        let grid = g.grid();
        let m = grid.m();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(m as u32).to_le_bytes());
        for &d in grid.dims() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_plane(&mut buf, grid.periods());
        put_plane(&mut buf, &[self.state.t]);
        buf.extend_from_slice(&self.state.step.to_le_bytes());
        buf.extend_from_slice(&self.rows.to_le_bytes());
        buf.extend_from_slice(&self.run_hash.to_le_bytes());
        buf.push(self.kind.code());
        let mut flags = 0;
        for (present, bit) in [
            (self.state.f.is_some(), HAS_F),
            (self.state.u.is_some(), HAS_U),
            (self.warm_start.is_some(), HAS_WARM),
            (self.model.is_some(), HAS_MODEL),
        ] {
            if present {
                flags |= bit;
            }
        }
        buf.push(flags);
        for plane in &g.tensor().comps {
            put_plane(&mut buf, plane);
        }
        for plane in [&self.state.f, &self.state.u, &self.warm_start].into_iter().flatten() {
            put_plane(&mut buf, plane);
        }
        if let Some(model) = &self.model {
            put_plane(&mut buf, model.w());
            put_plane(&mut buf, model.h());
            put_plane(&mut buf, model.harmonic());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("missing magic".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let m = r.u32()? as usize;
        if !(1..=3).contains(&m) {
            return Err(Error::Format(format!("unsupported dimension {m}")));
        }
        let dims = (0..m).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let periods: Vec<T> = r.plane(m)?;
        let grid = Arc::new(ChartGrid::new(&dims, &periods)?);
        let n = grid.len();
        let t = r.plane::<T>(1)?[0];
        let step = r.u64()?;
        let rows = r.u64()?;
        let run_hash = r.u64()?;
        let kind = FlowKind::from_code(r.u8()?)?;
        let flags = r.u8()?;
        let comps = (0..sym_len(m)).map(|_| r.plane(n)).collect::<Result<Vec<_>>>()?;
        let g = MetricField::new(grid.clone(), SymTensorField::from_planes(m, comps)?)?;
        let mut optional = |bit: u8| -> Result<Option<Vec<T>>> {
            if flags & bit != 0 {
                r.plane(n).map(Some)
            } else {
                Ok(None)
            }
        };
        let f = optional(HAS_F)?;
        let u = optional(HAS_U)?;
        let warm_start = optional(HAS_WARM)?;
        let model = if flags & HAS_MODEL != 0 {
            let w = r.plane(n)?;
            let h = r.plane(n)?;
            let harmonic = r.plane(m)?;
            Some(FoliationModel::from_parts(grid, w, h, harmonic)?)
        } else {
            None
        };
        if r.pos != body.len() {
            return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            kind,
            run_hash,
            rows,
            state: FlowState { t, step, g, f, u },
            warm_start,
            model,
        })
    }

    /// Writes to a temporary sibling and renames it into place, so readers
    /// never observe a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut file = File::create(&tmp)?;
            file.write_all(&self.encode())?;
            file.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn plane<T: Real>(&mut self, len: usize) -> Result<Vec<T>> {
        let bytes = self.take(len.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        bytes
            .chunks_exact(8)
            .map(|c| {
                let x = f64::from_le_bytes(c.try_into().expect("8 bytes"));
                T::from_f64(x).ok_or_else(|| Error::Format("value not representable".into()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::build;

    #[test]
    fn round_trip_is_bit_exact() {
        let s = build::<f64>("weighted-exact", 8).unwrap();
        let n = s.grid().len();
        let f: Vec<f64> = (0..n).map(|i| (i as f64).sin() / 3.0).collect();
        let mut state = FlowState::new(s.g0.clone(), Some(f.clone()));
        state.t = 0.123456789;
        state.step = 42;
        state.u = Some(f.iter().map(|x| (-x).exp()).collect());
        let ck = Checkpoint {
            kind: FlowKind::Gauged,
            run_hash: 99,
            rows: 5,
            state,
            warm_start: Some(vec![0.5; n]),
            model: Some(s.model.clone()),
        };
        let bytes = ck.encode();
        let back = Checkpoint::<f64>::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.model.as_ref(), Some(&s.model));
        assert_eq!(back.state.f.unwrap(), f);
    }

    #[test]
    fn corruption_is_detected() {
        let s = build::<f64>("flat-taut", 8).unwrap();
        let ck = Checkpoint {
            kind: FlowKind::Ricci,
            run_hash: 0,
            rows: 0,
            state: FlowState::new(s.g0.clone(), None),
            warm_start: None,
            model: None,
        };
        let mut bytes = ck.encode();
        bytes[40] ^= 1;
        assert!(matches!(Checkpoint::<f64>::decode(&bytes), Err(Error::Format(_))));
        assert!(Checkpoint::<f64>::decode(&bytes[..20]).is_err());
    }
}
