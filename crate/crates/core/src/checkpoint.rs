//! Versioned little-endian binary checkpoint.
//!
//! ```text
//! magic "BIMDIFF\0" | u32 version
//! u64 len | resolved config TOML (UTF-8)
//! u64 channels | f64 mean[channels] | f64 std[channels]
//! u64 tensors | per tensor: u64 len | id | u64 ndim | u64 dims[ndim] | f64 values[prod]
//! u64 stores  | per store: u64 capacity, queue_capacity, top_k, dim, next_seq
//!               u64 entries | per record: u64 seq | u64 freq | f64 pattern[dim]
//!               u64 queue   | same, head first
//! ```

use std::path::Path;

use crate::config::Config;
use crate::data::Normalizer;
use crate::episodic::{EpisodicStore, Record};
use crate::error::{Error, Result};
use crate::model::BimDiff;
use crate::nn::ParamStore;

const MAGIC: &[u8; 8] = b"BIMDIFF\0";
pub const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.usize(b.len());
        self.0.extend_from_slice(b);
    }

    fn record(&mut self, r: &Record) {
        self.u64(r.seq);
        self.u64(r.freq);
        self.f64s(&r.pattern);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Data(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Data("checkpoint length overflows".into()))
    }

    /// A count of items that each occupy at least `min_bytes`, bounded by what is left.
    fn count(&mut self, min_bytes: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(min_bytes.max(1)) > self.buf.len() - self.pos {
            return Err(Error::Data(format!("checkpoint count {n} exceeds remaining bytes")));
        }
        Ok(n)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Data("checkpoint length overflows".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.count(1)?;
        self.take(n)
    }

    fn record(&mut self, dim: usize) -> Result<Record> {
        let seq = self.u64()?;
        let freq = self.u64()?;
        Ok(Record { pattern: self.f64s(dim)?, freq, seq })
    }
}

pub fn to_bytes(model: &BimDiff, norm: &Normalizer) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    w.bytes(model.config().resolved_toml().as_bytes());
    w.usize(norm.channels());
    w.f64s(&norm.mean);
    w.f64s(&norm.std);
    w.usize(model.store.len());
    for t in model.store.tensors() {
        w.bytes(t.id.as_bytes());
        w.usize(t.shape.len());
        t.shape.iter().for_each(|&d| w.usize(d));
        w.f64s(&t.values);
    }
    w.usize(model.episodic().len());
    for s in model.episodic() {
        for v in [s.capacity(), s.queue_capacity(), s.top_k(), s.dim()] {
            w.usize(v);
        }
        w.u64(s.next_seq());
        w.usize(s.entries().len());
        s.entries().iter().for_each(|r| w.record(r));
        w.usize(s.queue().len());
        s.queue().iter().for_each(|r| w.record(r));
    }
    w.0
}

pub fn from_bytes(buf: &[u8]) -> Result<(BimDiff, Normalizer)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Data("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let text = std::str::from_utf8(r.bytes()?).map_err(|_| Error::Data("checkpoint config is not UTF-8".into()))?;
    let config = Config::from_toml(text)?;
    let channels = r.count(16)?;
    let norm = Normalizer { mean: r.f64s(channels)?, std: r.f64s(channels)? };

    let mut loaded = ParamStore::new();
    for _ in 0..r.count(16)? {
        let id = std::str::from_utf8(r.bytes()?).map_err(|_| Error::Data("parameter id is not UTF-8".into()))?;
        let ndim = r.count(8)?;
        let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Data(format!("parameter {id} shape overflows")))?;
        if loaded.find(id).is_some() {
            return Err(Error::Data(format!("parameter {id} appears twice")));
        }
        let values = r.f64s(n)?;
        loaded.add(id, shape, values);
    }
    let mut model = BimDiff::new(&config)?;
    if loaded.len() != model.store.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} tensors, model expects {}",
            loaded.len(),
            model.store.len()
        )));
    }
    model.store.load_values(&loaded)?;

    let mut stores = Vec::new();
    for _ in 0..r.count(48)? {
        let capacity = r.usize()?;
        let queue_capacity = r.usize()?;
        let top_k = r.usize()?;
        let dim = r.usize()?;
        let next_seq = r.u64()?;
        let record_bytes = 16 + 8 * dim;
        let entries = (0..r.count(record_bytes)?).map(|_| r.record(dim)).collect::<Result<Vec<_>>>()?;
        let queue = (0..r.count(record_bytes)?).map(|_| r.record(dim)).collect::<Result<Vec<_>>>()?;
        stores.push(EpisodicStore::from_parts(capacity, queue_capacity, top_k, dim, entries, queue, next_seq)?);
    }
    model.replace_episodic(stores)?;
    if r.pos != buf.len() {
        return Err(Error::Data(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
    }
    Ok((model, norm))
}

pub fn save(path: &Path, model: &BimDiff, norm: &Normalizer) -> Result<()> {
    std::fs::write(path, to_bytes(model, norm))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(BimDiff, Normalizer)> {
    let buf = std::fs::read(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    from_bytes(&buf)
}
