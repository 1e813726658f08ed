//! Non-parametric store of "special" query patterns: top-k cosine recall,
//! access-frequency counting, and frequency-ranked eviction behind a circular
//! candidate queue that shelters fresh patterns.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::attention::{attend, cosine_score, Attended};
use crate::error::{Error, Result};

/// A stored snapshot. `seq` is the insertion order into the store; lower is older.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub pattern: Vec<f64>,
    pub freq: u64,
    pub seq: u64,
}

/// Where a recalled record lives at recall time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Entry(usize),
    Queue(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicRecall {
    /// Zero vector when the store is empty.
    pub output: Vec<f64>,
    pub slots: Vec<Slot>,
    pub attended: Option<Attended>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicStore {
    entries: Vec<Record>,
    /// Front is the head (newest); records leave from the back.
    queue: VecDeque<Record>,
    capacity: usize,
    queue_capacity: usize,
    top_k: usize,
    dim: usize,
    next_seq: u64,
}

impl EpisodicStore {
    pub fn new(capacity: usize, queue_capacity: usize, top_k: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || queue_capacity == 0 || top_k == 0 || dim == 0 {
            return Err(Error::Config("episodic capacities, top-k and dim must be positive".into()));
        }
        if queue_capacity > capacity {
            return Err(Error::Config(format!(
                "candidate queue capacity {queue_capacity} exceeds memory capacity {capacity}"
            )));
        }
        Ok(Self {
            entries: Vec::with_capacity(capacity),
            queue: VecDeque::with_capacity(queue_capacity),
            capacity,
            queue_capacity,
            top_k,
            dim,
            next_seq: 0,
        })
    }

    /// Rebuilds a store from dumped state, checking every invariant.
    pub fn from_parts(
        capacity: usize,
        queue_capacity: usize,
        top_k: usize,
        dim: usize,
        entries: Vec<Record>,
        queue: Vec<Record>,
        next_seq: u64,
    ) -> Result<Self> {
        let mut s = Self::new(capacity, queue_capacity, top_k, dim)?;
        if entries.len() > capacity || queue.len() > queue_capacity {
            return Err(Error::Data(format!(
                "episodic dump holds {}/{} records for capacities {capacity}/{queue_capacity}",
                entries.len(),
                queue.len()
            )));
        }
        if entries.iter().chain(&queue).any(|r| r.pattern.len() != dim || r.seq >= next_seq) {
            return Err(Error::Data("episodic dump has a malformed record".into()));
        }
        s.entries = entries;
        s.queue = queue.into();
        s.next_seq = next_seq;
        Ok(s)
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn queue_capacity(&self) -> usize {
        self.queue_capacity
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Record] {
        &self.entries
    }

    pub fn queue(&self) -> &VecDeque<Record> {
        &self.queue
    }

    /// Records visible to recall: entries then queue (head first).
    pub fn len(&self) -> usize {
        self.entries.len() + self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn slot(&self, i: usize) -> Slot {
        if i < self.entries.len() {
            Slot::Entry(i)
        } else {
            Slot::Queue(i - self.entries.len())
        }
    }

    pub fn record(&self, slot: Slot) -> &Record {
        match slot {
            Slot::Entry(i) => &self.entries[i],
            Slot::Queue(i) => &self.queue[i],
        }
    }

    fn record_mut(&mut self, slot: Slot) -> &mut Record {
        match slot {
            Slot::Entry(i) => &mut self.entries[i],
            Slot::Queue(i) => &mut self.queue[i],
        }
    }

    /// Flattened `len() x dim` table in recall order.
    pub fn pattern_table(&self) -> Vec<f64> {
        self.entries.iter().chain(self.queue.iter()).flat_map(|r| r.pattern.iter().copied()).collect()
    }

    /// Cosine score of every stored record against `query`, in recall order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .chain(self.queue.iter())
            .map(|r| cosine_score(&r.pattern, query))
            .collect()
    }

    /// Top-k recall without touching frequencies.
    pub fn recall(&self, query: &[f64]) -> Result<EpisodicRecall> {
        if self.is_empty() {
            if crate::nn::norm(query) == 0.0 {
                return Err(Error::ZeroNorm);
            }
            return Ok(EpisodicRecall { output: vec![0.0; self.dim], slots: vec![], attended: None });
        }
        let scores = self.scores(query)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(self.top_k.min(scores.len()));
        let table = self.pattern_table();
        let att = attend(&table, self.dim, order, query)?;
        let slots = att.indices.iter().map(|&i| self.slot(i)).collect();
        Ok(EpisodicRecall { output: att.output.clone(), slots, attended: Some(att) })
    }

    /// Recall and count the access of every recalled record.
    pub fn recall_and_count(&mut self, query: &[f64]) -> Result<EpisodicRecall> {
        let r = self.recall(query)?;
        self.record_hits(&r.slots);
        Ok(r)
    }

    pub fn record_hits(&mut self, slots: &[Slot]) {
        for &s in slots {
            self.record_mut(s).freq += 1;
        }
    }

    /// Overrides the frequency of one record.
    pub fn set_freq(&mut self, slot: Slot, freq: u64) {
        self.record_mut(slot).freq = freq;
    }

    /// Inserts one batch of new patterns.
    ///
    /// While the memory has room, patterns go straight into it. After that,
    /// new patterns enter the head of the candidate queue; if the queue would
    /// overflow, records leave from its tail and compete with the current
    /// entries by frequency (ties: older wins) for the `capacity` slots. All
    /// frequencies are reset to zero afterwards.
    pub fn update(&mut self, new_patterns: Vec<Vec<f64>>) -> Result<()> {
        if new_patterns.len() > self.queue_capacity {
            return Err(Error::Config(format!(
                "{} new patterns per update exceed queue capacity {}",
                new_patterns.len(),
                self.queue_capacity
            )));
        }
        if let Some(p) = new_patterns.iter().find(|p| p.len() != self.dim) {
            return Err(Error::Shape(format!("pattern width {} expected {}", p.len(), self.dim)));
        }
        let mut incoming = Vec::with_capacity(new_patterns.len());
        for pattern in new_patterns {
            incoming.push(Record { pattern, freq: 0, seq: self.next_seq });
            self.next_seq += 1;
        }
        let mut fresh: Vec<Record> = Vec::new();
        for r in incoming {
            if self.entries.len() < self.capacity {
                self.entries.push(r);
            } else {
                fresh.push(r);
            }
        }
        if !fresh.is_empty() {
            let overflow = (self.queue.len() + fresh.len()).saturating_sub(self.queue_capacity);
            let popped: Vec<Record> = (0..overflow).filter_map(|_| self.queue.pop_back()).collect();
            if !popped.is_empty() {
                let mut pool = std::mem::take(&mut self.entries);
                pool.extend(popped);
                pool.sort_by(|a, b| b.freq.cmp(&a.freq).then(a.seq.cmp(&b.seq)));
                pool.truncate(self.capacity);
                self.entries = pool;
            }
            // Batch order is kept: the first new pattern ends up at the head.
            for r in fresh.into_iter().rev() {
                self.queue.push_front(r);
            }
        }
        for r in self.entries.iter_mut().chain(self.queue.iter_mut()) {
            r.freq = 0;
        }
        Ok(())
    }
}

/// Index of the batch sample with the largest finite loss (ties: lowest index).
pub fn select_special_index(losses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, l) in losses.iter().enumerate() {
        if !l.is_finite() {
            continue;
        }
        match best {
            Some(b) if losses[b] >= *l => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Channel query vectors of the hardest sample. `queries[b][j]` is channel
/// `j` of sample `b`.
pub fn select_special(losses: &[f64], queries: &[Vec<Vec<f64>>]) -> Option<Vec<Vec<f64>>> {
    select_special_index(losses).map(|i| queries[i].clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(n2: usize, n3: usize, k: usize) -> EpisodicStore {
        EpisodicStore::new(n2, n3, k, 2).unwrap()
    }

    #[test]
    fn empty_store_recalls_zero() {
        let s = store(4, 2, 2);
        let r = s.recall(&[1.0, 2.0]).unwrap();
        assert_eq!(r.output, vec![0.0, 0.0]);
        assert!(r.slots.is_empty());
        assert!(matches!(s.recall(&[0.0, 0.0]), Err(Error::ZeroNorm)));
    }

    #[test]
    fn single_entry_recall_counts_access() {
        let mut s = store(4, 2, 3);
        s.update(vec![vec![0.3, -0.7]]).unwrap();
        let r = s.recall_and_count(&[1.0, 1.0]).unwrap();
        assert_eq!(r.output, vec![0.3, -0.7]);
        assert_eq!(s.entries()[0].freq, 1);
    }

    #[test]
    fn top_two_of_three_weighted_by_score() {
        // Unit patterns whose cosine with e1 is 0.9, 0.5, 0.1.
        let unit = |c: f64| vec![c, (1.0 - c * c).sqrt()];
        let mut s = store(4, 2, 2);
        s.update(vec![unit(0.9), unit(0.5)]).unwrap();
        s.update(vec![unit(0.1)]).unwrap();
        let r = s.recall(&[1.0, 0.0]).unwrap();
        assert_eq!(r.slots, vec![Slot::Entry(0), Slot::Entry(1)]);
        let (w0, w1) = (0.9 / 1.4, 0.5 / 1.4);
        for i in 0..2 {
            let expect = w0 * unit(0.9)[i] + w1 * unit(0.5)[i];
            assert!((r.output[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn below_capacity_goes_to_entries() {
        let mut s = store(4, 2, 2);
        s.update(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(s.entries().len(), 2);
        assert!(s.queue().is_empty());
    }

    #[test]
    fn frequent_entries_survive_unused_queue_tail() {
        let mut s = store(2, 2, 2);
        s.update(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        s.update(vec![vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let before: Vec<u64> = s.entries().iter().map(|r| r.seq).collect();
        s.set_freq(Slot::Entry(0), 3);
        s.set_freq(Slot::Entry(1), 1);
        s.update(vec![vec![2.0, 1.0], vec![3.0, 1.0]]).unwrap();
        let after: Vec<u64> = s.entries().iter().map(|r| r.seq).collect();
        assert_eq!(before, after);
        assert!(s.entries().iter().all(|r| r.freq == 0));
    }

    #[test]
    fn oversized_batch_is_a_config_error() {
        let mut s = store(4, 2, 2);
        assert!(matches!(s.update(vec![vec![1.0, 0.0]; 3]), Err(Error::Config(_))));
        assert!(EpisodicStore::new(2, 3, 1, 2).is_err());
    }

    #[test]
    fn select_special_rules() {
        assert_eq!(select_special_index(&[0.4]), Some(0));
        assert_eq!(select_special_index(&[0.1, 0.9, 0.3]), Some(1));
        assert_eq!(select_special_index(&[0.5, 0.5]), Some(0));
        assert_eq!(select_special_index(&[f64::NAN, 0.2, f64::INFINITY]), Some(1));
        assert_eq!(select_special_index(&[f64::NAN]), None);
        let q = vec![vec![vec![1.0]], vec![vec![2.0]]];
        assert_eq!(select_special(&[0.0, 1.0], &q), Some(vec![vec![2.0]]));
    }
}
