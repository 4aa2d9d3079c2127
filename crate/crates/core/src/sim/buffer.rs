//! Bounded FIFO of length-binned mini-batches with a bin → open-element index.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::workload::Request;
use super::SimError;

/// Bin geometry shared by the buffer and the dispatcher.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binning {
    pub bin_width: usize,
    pub num_bins: usize,
    pub max_len: usize,
}

impl Binning {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.bin_width == 0 || self.num_bins == 0 || self.max_len == 0 {
            return Err(SimError::Config("bin_width, num_bins and max_len must be at least 1".into()));
        }
        if self.bin_width * self.num_bins != self.max_len {
            return Err(SimError::Config(format!(
                "num_bins·bin_width = {} but max_len = {}",
                self.bin_width * self.num_bins,
                self.max_len
            )));
        }
        Ok(())
    }

    pub fn padded_len(&self, bin: usize) -> usize {
        self.bin_width * (bin + 1)
    }
}

/// `⌈min(length, max_len) / bin_width⌉ − 1`.
pub fn bin_of(length: usize, b: &Binning) -> Result<usize, SimError> {
    if length == 0 {
        return Err(SimError::Config("request length 0 has no bin".into()));
    }
    Ok(length.min(b.max_len).div_ceil(b.bin_width) - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferElement {
    pub bin: usize,
    pub padded_len: usize,
    pub requests: Vec<Request>,
    /// Time the element was appended to the buffer.
    pub created_ms: f64,
}

impl BufferElement {
    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PushOutcome {
    Merged,
    Appended,
    /// Buffer is at capacity; the request is handed back to the caller.
    Rejected(Request),
}

#[derive(Clone, Debug)]
pub struct LengthAwareBuffer {
    fifo: VecDeque<BufferElement>,
    /// Sequence number of `fifo[0]`; element `i` has sequence `head_seq + i`.
    head_seq: u64,
    /// Per bin, the sequence number of its open (non-full) element.
    index: Vec<Option<u64>>,
    capacity: usize,
    max_merge: usize,
    binning: Binning,
    last_touched: usize,
    max_touched: usize,
}

impl LengthAwareBuffer {
    pub fn new(binning: Binning, capacity: usize, max_merge: usize) -> Result<Self, SimError> {
        binning.validate()?;
        if capacity == 0 || max_merge == 0 {
            return Err(SimError::Config("buffer capacity and max_merge must be at least 1".into()));
        }
        Ok(LengthAwareBuffer {
            fifo: VecDeque::with_capacity(capacity),
            head_seq: 0,
            index: vec![None; binning.num_bins],
            capacity,
            max_merge,
            binning,
            last_touched: 0,
            max_touched: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.fifo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fifo.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.fifo.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_merge(&self) -> usize {
        self.max_merge
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    /// Fails if more elements are queued than the new capacity allows.
    pub fn set_capacity(&mut self, capacity: usize) -> Result<(), SimError> {
        if capacity == 0 || capacity < self.fifo.len() {
            return Err(SimError::Config(format!(
                "capacity {capacity} below current length {}",
                self.fifo.len()
            )));
        }
        self.capacity = capacity;
        Ok(())
    }

    pub fn elements(&self) -> impl Iterator<Item = &BufferElement> {
        self.fifo.iter()
    }

    /// Position in the FIFO of the open element of `bin`, if any.
    pub fn open_position(&self, bin: usize) -> Option<usize> {
        self.index
            .get(bin)
            .copied()
            .flatten()
            .map(|s| (s - self.head_seq) as usize)
    }

    /// Elements read or written by the most recent push or pop.
    pub fn last_touched(&self) -> usize {
        self.last_touched
    }

    pub fn max_touched(&self) -> usize {
        self.max_touched
    }

    fn touched(&mut self, n: usize) {
        self.last_touched = n;
        self.max_touched = self.max_touched.max(n);
    }

    pub fn push(&mut self, req: Request, now_ms: f64) -> Result<PushOutcome, SimError> {
        let bin = bin_of(req.length_tokens, &self.binning)?;
        if let Some(seq) = self.index[bin] {
            let pos = (seq - self.head_seq) as usize;
            let el = &mut self.fifo[pos];
            el.requests.push(req);
            if el.requests.len() >= self.max_merge {
                self.index[bin] = None;
            }
            self.touched(1);
            return Ok(PushOutcome::Merged);
        }
        if self.is_full() {
            self.touched(0);
            return Ok(PushOutcome::Rejected(req));
        }
        let seq = self.head_seq + self.fifo.len() as u64;
        self.fifo.push_back(BufferElement {
            bin,
            padded_len: self.binning.padded_len(bin),
            requests: vec![req],
            created_ms: now_ms,
        });
        if self.max_merge > 1 {
            self.index[bin] = Some(seq);
        }
        self.touched(1);
        Ok(PushOutcome::Appended)
    }

    pub fn pop(&mut self) -> Result<BufferElement, SimError> {
        let el = self
            .fifo
            .pop_front()
            .ok_or_else(|| SimError::Config("pop from an empty buffer".into()))?;
        if self.index[el.bin] == Some(self.head_seq) {
            self.index[el.bin] = None;
        }
        self.head_seq += 1;
        self.touched(1);
        Ok(el)
    }

    /// Index integrity: every entry points at a live, non-full element of its
    /// own bin, and at most one open element exists per bin.
    pub fn check_integrity(&self) -> Result<(), String> {
        for (bin, entry) in self.index.iter().enumerate() {
            if let Some(seq) = entry {
                let pos = seq
                    .checked_sub(self.head_seq)
                    .ok_or(format!("bin {bin} indexes a popped element"))? as usize;
                let el = self.fifo.get(pos).ok_or(format!("bin {bin} indexes past the tail"))?;
                if el.bin != bin {
                    return Err(format!("bin {bin} indexes an element of bin {}", el.bin));
                }
                if el.len() >= self.max_merge {
                    return Err(format!("bin {bin} indexes a full element"));
                }
            }
        }
        for (pos, el) in self.fifo.iter().enumerate() {
            if el.len() < self.max_merge && self.open_position(el.bin) != Some(pos) {
                return Err(format!("open element at {pos} is not indexed"));
            }
        }
        if self.fifo.len() > self.capacity {
            return Err("buffer exceeds capacity".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binning() -> Binning {
        Binning {
            bin_width: 8,
            num_bins: 16,
            max_len: 128,
        }
    }

    fn req(id: u64, len: usize) -> Request {
        Request {
            id,
            arrival_ms: 0.0,
            length_tokens: len,
        }
    }

    #[test]
    fn bins() {
        let b = binning();
        assert_eq!(bin_of(1, &b).unwrap(), 0);
        assert_eq!(b.padded_len(0), 8);
        assert_eq!(bin_of(8, &b).unwrap(), 0);
        assert_eq!(bin_of(9, &b).unwrap(), 1);
        assert_eq!(bin_of(30, &b).unwrap(), 3);
        assert_eq!(b.padded_len(3), 32);
        assert_eq!(bin_of(128, &b).unwrap(), 15);
        assert_eq!(bin_of(500, &b).unwrap(), 15);
        assert!(bin_of(0, &b).is_err());
    }

    #[test]
    fn merge_append_reject() {
        let mut buf = LengthAwareBuffer::new(binning(), 2, 4).unwrap();
        assert_eq!(buf.push(req(0, 30), 0.0).unwrap(), PushOutcome::Appended);
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.push(req(1, 27), 0.0).unwrap(), PushOutcome::Merged);
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.elements().next().unwrap().len(), 2);
        buf.push(req(2, 25), 0.0).unwrap();
        buf.push(req(3, 32), 0.0).unwrap();
        assert_eq!(buf.open_position(3), None);
        assert_eq!(buf.push(req(4, 30), 0.0).unwrap(), PushOutcome::Appended);
        assert_eq!(buf.len(), 2);
        assert!(matches!(buf.push(req(5, 100), 0.0).unwrap(), PushOutcome::Rejected(r) if r.id == 5));
        assert_eq!(buf.push(req(6, 31), 0.0).unwrap(), PushOutcome::Merged);
        buf.check_integrity().unwrap();
    }

    #[test]
    fn pop_is_fifo_and_clears_index() {
        let mut buf = LengthAwareBuffer::new(binning(), 4, 4).unwrap();
        buf.push(req(0, 20), 0.0).unwrap();
        buf.push(req(1, 44), 0.0).unwrap();
        assert_eq!(buf.pop().unwrap().bin, 2);
        assert_eq!(buf.open_position(2), None);
        assert_eq!(buf.push(req(2, 20), 0.0).unwrap(), PushOutcome::Appended);
        assert_eq!(buf.open_position(2), Some(1));
        assert_eq!(buf.pop().unwrap().bin, 5);
        assert_eq!(buf.pop().unwrap().requests[0].id, 2);
        assert!(buf.pop().is_err());
    }

    #[test]
    fn capacity_changes() {
        let mut buf = LengthAwareBuffer::new(binning(), 2, 1).unwrap();
        buf.push(req(0, 1), 0.0).unwrap();
        buf.push(req(1, 1), 0.0).unwrap();
        assert!(buf.is_full());
        assert!(buf.set_capacity(1).is_err());
        buf.set_capacity(3).unwrap();
        assert_eq!(buf.push(req(2, 1), 0.0).unwrap(), PushOutcome::Appended);
        buf.check_integrity().unwrap();
    }
}
