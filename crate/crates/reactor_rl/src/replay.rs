//! Fixed-capacity experience replay with uniform minibatch sampling.
//!
//! Two buffers are used by the two-stage trainer: E1 filled during offline
//! learning against the nominal model, and E2 for the online stage, seeded
//! from E1. Both are plain FIFO rings.

use rand::{Rng, RngExt};
use std::io::{Read, Write};
use std::path::Path;

use crate::binio;
use crate::error::{Error, Result};

const BUF_MAGIC: &[u8; 4] = b"RPB1";

/// One (s, a, r, s', done) tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.s.iter().all(|v| v.is_finite())
            && self.a.iter().all(|v| v.is_finite())
            && self.r.is_finite()
            && self.s_next.iter().all(|v| v.is_finite())
    }
}

/// FIFO ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    data: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            data: Vec::new(),
            capacity,
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Append a transition, overwriting the oldest entry once full.
    pub fn push(&mut self, tr: Transition) -> Result<()> {
        if !tr.is_finite() {
            return Err(Error::fault("replay push: non-finite transition rejected"));
        }
        if self.data.len() < self.capacity {
            self.data.push(tr);
        } else {
            self.data[self.cursor] = tr;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(())
    }

    /// Uniform sampling with replacement. Errors while the buffer holds
    /// fewer than `batch_size` transitions (warm-up not finished).
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>> {
        if self.data.len() < batch_size {
            return Err(Error::BufferUnderfull {
                have: self.data.len(),
                need: batch_size,
            });
        }
        Ok((0..batch_size)
            .map(|_| &self.data[rng.random_range(0..self.data.len())])
            .collect())
    }

    /// Transitions from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let (tail, head) = self.data.split_at(self.cursor);
        head.iter().chain(tail.iter())
    }

    /// Fill `self` with the newest `min(src.len, self.capacity)` transitions
    /// of `src`, preserving their order. Existing contents are dropped.
    pub fn preload(&mut self, src: &ReplayBuffer) {
        self.data.clear();
        self.cursor = 0;
        let take = src.len().min(self.capacity);
        let skip = src.len() - take;
        for tr in src.iter_ordered().skip(skip) {
            self.data.push(tr.clone());
        }
    }

    /// Binary dump, suitable for resuming the online stage.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(BUF_MAGIC)?;
        let (s_dim, a_dim) = match self.data.first() {
            Some(tr) => (tr.s.len(), tr.a.len()),
            None => (0, 0),
        };
        binio::write_u32(w, s_dim as u32)?;
        binio::write_u32(w, a_dim as u32)?;
        binio::write_u64(w, self.capacity as u64)?;
        binio::write_u64(w, self.data.len() as u64)?;
        for tr in self.iter_ordered() {
            binio::write_f64_slice(w, &tr.s)?;
            binio::write_f64_slice(w, &tr.a)?;
            binio::write_f64(w, tr.r)?;
            binio::write_f64_slice(w, &tr.s_next)?;
            binio::write_u8(w, tr.done as u8)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<ReplayBuffer> {
        binio::expect_magic(r, BUF_MAGIC, "replay buffer file")?;
        let s_dim = binio::read_u32(r)? as usize;
        let a_dim = binio::read_u32(r)? as usize;
        let capacity = binio::read_u64(r)? as usize;
        let len = binio::read_u64(r)? as usize;
        if capacity == 0 || len > capacity {
            return Err(Error::Checkpoint(format!(
                "replay buffer file: bad sizes len={len} capacity={capacity}"
            )));
        }
        let mut buf = ReplayBuffer::new(capacity);
        for _ in 0..len {
            let s = binio::read_f64_vec(r, s_dim)?;
            let a = binio::read_f64_vec(r, a_dim)?;
            let rew = binio::read_f64(r)?;
            let s_next = binio::read_f64_vec(r, s_dim)?;
            let done = binio::read_u8(r)? != 0;
            buf.push(Transition {
                s,
                a,
                r: rew,
                s_next,
                done,
            })?;
        }
        Ok(buf)
    }

    pub fn save_to_path(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f)
    }

    pub fn load_from_path(path: &Path) -> Result<ReplayBuffer> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::load(&mut f)
    }
}
