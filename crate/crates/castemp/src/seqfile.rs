//! Binary per-task sequence file.
//!
//! Little-endian layout: magic `CTSQ`, `u32` version, `u64` task count, then
//! three `u32` capacities (self, cross, mixed; 0 = absent). Each task is its
//! `u32` cascade index and `f64` cutoff followed by the fixed-width records
//! `(u8 mask, u32 promoter, f64 time)` of each present sequence.

use std::io::{BufReader, Read, Write};
use std::path::Path;

use castemp_core::precompute::{Precomputed, TaskInputs};
use castemp_core::sequences::{PropagationSequence, SequenceKind};
use castemp_core::{CascadeId, PromoterId};

use crate::error::{Error, Result};
use crate::io::create_file;

const MAGIC: &[u8; 4] = b"CTSQ";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub cascade: CascadeId,
    pub cutoff: f64,
    pub self_seq: PropagationSequence,
    pub cross_seq: Option<PropagationSequence>,
    pub mixed_seq: Option<PropagationSequence>,
}

impl SequenceRecord {
    pub fn of(inp: &TaskInputs) -> Self {
        SequenceRecord {
            cascade: inp.cascade,
            cutoff: inp.cutoff,
            self_seq: inp.self_seq.clone(),
            cross_seq: inp.cross_seq.clone(),
            mixed_seq: inp.mixed_seq.clone(),
        }
    }
}

fn capacities(path: &Path, records: &[SequenceRecord]) -> Result<[u32; 3]> {
    let cap = |s: Option<&PropagationSequence>| s.map_or(0, |s| s.capacity() as u32);
    let Some(first) = records.first() else { return Ok([0; 3]) };
    let caps = [cap(Some(&first.self_seq)), cap(first.cross_seq.as_ref()), cap(first.mixed_seq.as_ref())];
    for r in records {
        if [cap(Some(&r.self_seq)), cap(r.cross_seq.as_ref()), cap(r.mixed_seq.as_ref())] != caps {
            return Err(Error::format(path, "tasks disagree on sequence capacities"));
        }
    }
    Ok(caps)
}

pub fn write_sequences(path: &Path, records: &[SequenceRecord]) -> Result<()> {
    let caps = capacities(path, records)?;
    let mut w = create_file(path)?;
    let mut buf: Vec<u8> = Vec::with_capacity(64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for c in caps {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    for r in records {
        buf.clear();
        buf.extend_from_slice(&r.cascade.0.to_le_bytes());
        buf.extend_from_slice(&r.cutoff.to_le_bytes());
        for s in [Some(&r.self_seq), r.cross_seq.as_ref(), r.mixed_seq.as_ref()].into_iter().flatten() {
            for k in 0..s.capacity() {
                buf.push(u8::from(s.mask[k]));
                buf.extend_from_slice(&s.promoters[k].0.to_le_bytes());
                buf.extend_from_slice(&s.times[k].to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    at: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.at + N;
        let slice = self.bytes.get(self.at..end).ok_or_else(|| Error::format(self.path, "truncated sequence file"))?;
        self.at = end;
        Ok(slice.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn sequence(&mut self, kind: SequenceKind, cap: u32) -> Result<PropagationSequence> {
        let n = cap as usize;
        let (mut promoters, mut times, mut mask) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let [m] = self.take::<1>()?;
            if m > 1 {
                return Err(Error::format(self.path, format!("invalid mask byte {m} at offset {}", self.at - 1)));
            }
            mask.push(m == 1);
            promoters.push(PromoterId(self.u32()?));
            times.push(self.f64()?);
        }
        Ok(PropagationSequence { kind, promoters, times, mask })
    }
}

pub fn read_sequences(path: &Path) -> Result<Vec<SequenceRecord>> {
    let mut bytes = Vec::new();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { path, bytes, at: 0 };
    if &c.take::<4>()? != MAGIC {
        return Err(Error::format(path, "not a CTSQ sequence file"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported CTSQ version {version}")));
    }
    let n = c.u64()? as usize;
    let caps = [c.u32()?, c.u32()?, c.u32()?];
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let cascade = CascadeId(c.u32()?);
        let cutoff = c.f64()?;
        let self_seq = c.sequence(SequenceKind::SelfPropagation, caps[0])?;
        let cross_seq = (caps[1] > 0).then(|| c.sequence(SequenceKind::Cross, caps[1])).transpose()?;
        let mixed_seq = (caps[2] > 0).then(|| c.sequence(SequenceKind::Mixed, caps[2])).transpose()?;
        out.push(SequenceRecord { cascade, cutoff, self_seq, cross_seq, mixed_seq });
    }
    if c.at != c.bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last task"));
    }
    Ok(out)
}

/// Replaces the sequences of `pre` with stored ones, task by task.
pub fn apply_sequences(path: &Path, pre: &mut Precomputed, records: Vec<SequenceRecord>) -> Result<()> {
    if records.len() != pre.inputs.len() {
        return Err(Error::format(path, format!("{} stored tasks, {} expected", records.len(), pre.inputs.len())));
    }
    for (k, (inp, r)) in pre.inputs.iter_mut().zip(records).enumerate() {
        if inp.cascade != r.cascade || inp.cutoff.to_bits() != r.cutoff.to_bits() {
            return Err(Error::format(path, format!("task {k} does not match the manifest")));
        }
        inp.self_seq = r.self_seq;
        inp.cross_seq = r.cross_seq;
        inp.mixed_seq = r.mixed_seq;
    }
    Ok(())
}
