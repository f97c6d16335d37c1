//! Concurrent open-addressing voxel table.
//!
//! Each slot holds a 64-bit tag, the running radiance sum and sample count of
//! the current frame, and a previous generation used for temporal reuse.
//!
//! ```text
//!  tag word
//!  ┌──────────────────────────┬──────────┬──────────────────────────────────┐
//!  │        age (frames)      │ 255-cnt  │           fingerprint            │
//!  │          24 bit          │  8 bit   │              32 bit              │
//!  │63                      40│39      32│31                               0│
//!  └──────────────────────────┴──────────┴──────────────────────────────────┘
//! ```
//!
//! The high 32 bits are the eviction priority. Priority 0 marks a cell that
//! has been touched in the current frame. `begin_frame` stamps every kept
//! cell with its age and inverted history count, so a larger tag is a better
//! eviction victim: old cells first, sparse cells before dense ones among
//! equally old cells. [`EMPTY`] is the largest possible tag and carries the
//! sentinel fingerprint.
//!
//! Tag transitions only ever move a slot to a smaller tag while claiming or
//! refreshing, and each is a single compare-exchange on the tag word. A
//! claim only succeeds against an empty or evictable tag; live cells of the
//! current frame can never be displaced. A claim passes through [`BUSY`]
//! while the claimer resets the slot's payload.
//!
//! Removal uses backward-shift compaction, so a key's probe chain never
//! contains holes and a scan may stop at the first empty slot.

use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use crate::keys::{CellHashes, CellKey, SENTINEL};
use crate::math::{round, Rgb};

/// Tag of a never-used or cleared slot.
pub const EMPTY: u64 = 0xFFFF_FFFF_0000_0000 | SENTINEL as u64;
/// Tag of a slot whose payload is being reset by its new owner.
pub const BUSY: u64 = SENTINEL as u64;

/// Scale of fixed-point sums: one unit is `2^-16` radiance units.
pub const FIXED_ONE: f64 = 65536.0;

const AGE_SHIFT: u32 = 40;
const MAX_AGE: u64 = (1 << 24) - 1;

#[inline]
pub const fn tag_fingerprint(tag: u64) -> u32 {
    tag as u32
}

#[inline]
pub const fn tag_priority(tag: u64) -> u32 {
    (tag >> 32) as u32
}

#[inline]
pub const fn live_tag(fingerprint: u32) -> u64 {
    fingerprint as u64
}

/// Tag of a cell kept across a frame boundary.
#[inline]
pub fn stale_tag(fingerprint: u32, age: u32, count: u64) -> u64 {
    let age = (age as u64).clamp(1, MAX_AGE);
    let inverted = 255 - count.min(255);
    age << AGE_SHIFT | inverted << 32 | fingerprint as u64
}

#[inline]
pub const fn tag_age(tag: u64) -> u32 {
    (tag >> AGE_SHIFT) as u32
}

/// Representation of radiance sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SumMode {
    /// Integer sums in units of `2^-16`; accumulation is order independent.
    #[default]
    Fixed,
    /// `f64` sums updated by compare-exchange; order dependent.
    Float,
}

impl SumMode {
    #[inline]
    pub fn encode(self, v: f64) -> u64 {
        match self {
            SumMode::Fixed => round(v * FIXED_ONE) as u64,
            SumMode::Float => v.to_bits(),
        }
    }

    #[inline]
    pub fn decode(self, raw: u64) -> f64 {
        match self {
            SumMode::Fixed => raw as f64 / FIXED_ONE,
            SumMode::Float => f64::from_bits(raw),
        }
    }

    #[inline]
    pub fn add_raw(self, a: u64, b: u64) -> u64 {
        match self {
            SumMode::Fixed => a.wrapping_add(b),
            SumMode::Float => (f64::from_bits(a) + f64::from_bits(b)).to_bits(),
        }
    }

    /// Value a single contribution adds to a sum, after representation.
    #[inline]
    pub fn quantize(self, v: f64) -> f64 {
        self.decode(self.encode(v))
    }

    #[inline]
    fn atomic_add(self, cell: &AtomicU64, v: f64) {
        match self {
            SumMode::Fixed => {
                cell.fetch_add(self.encode(v), Ordering::Relaxed);
            }
            SumMode::Float => {
                let mut cur = cell.load(Ordering::Relaxed);
                loop {
                    let next = (f64::from_bits(cur) + v).to_bits();
                    match cell.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
                        Ok(_) => break,
                        Err(actual) => cur = actual,
                    }
                }
            }
        }
    }
}

/// Counts of the previous generation use the same `2^-16` scale so that
/// fractional (discounted) history is representable.
#[inline]
pub fn encode_count(n: f64) -> u64 {
    round(n * FIXED_ONE) as u64
}

#[inline]
pub fn decode_count(raw: u64) -> f64 {
    raw as f64 / FIXED_ONE
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TableError {
    CapacityNotPowerOfTwo(usize),
    CapacityTooLarge(usize),
    ZeroProbeLimit,
}

impl fmt::Display for TableError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableError::CapacityNotPowerOfTwo(c) => write!(f, "capacity {c} is not a power of two"),
            TableError::CapacityTooLarge(c) => write!(f, "capacity {c} exceeds 2^32 slots"),
            TableError::ZeroProbeLimit => write!(f, "probe limit must be at least 1"),
        }
    }
}

impl core::error::Error for TableError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableConfig {
    pub capacity: usize,
    pub probe_limit: u32,
    pub sum_mode: SumMode,
    /// Store each cell's full key (needed for resolution migration and for
    /// auditing fingerprint collisions).
    pub record_keys: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertStatus {
    Accumulated,
    EvictedThenAccumulated,
    ProbeLimitExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsertOutcome {
    pub status: InsertStatus,
    /// Slot that received the contribution; `None` when the probe limit was hit.
    pub slot: Option<usize>,
    /// Slots inspected by the final attempt.
    pub probes: u32,
}

impl InsertOutcome {
    pub fn succeeded(&self) -> bool {
        self.status != InsertStatus::ProbeLimitExceeded
    }
}

/// Result of searching a fingerprint's probe chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Found { slot: usize, probes: u32 },
    /// The chain ended at an empty slot.
    Empty { probes: u32 },
    /// `probe_limit` slots were inspected without a match or an empty slot.
    LimitExceeded { probes: u32 },
}

/// Both generations of one cell, decoded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellView {
    pub slot: usize,
    pub tag: u64,
    pub sum: Rgb,
    pub count: u32,
    pub prev_sum: Rgb,
    pub prev_count: f64,
    /// Change metric carried from earlier frames.
    pub delta: f64,
    pub reeval_new: Rgb,
    pub reeval_old: Rgb,
    pub reeval_count: u32,
    pub last_touch: u32,
    pub key: Option<CellKey>,
}

impl CellView {
    pub fn fingerprint(&self) -> u32 {
        tag_fingerprint(self.tag)
    }

    /// Mean of the current generation.
    pub fn mean(&self) -> Option<Rgb> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn prev_mean(&self) -> Option<Rgb> {
        (self.prev_count > 0.0).then(|| self.prev_sum / self.prev_count)
    }
}

/// Raw previous-generation payload written by a frame rotation or migration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct History {
    pub sum: [u64; 3],
    /// `2^-16` fixed point, see [`encode_count`].
    pub count: u64,
}

/// Raw payload of a cell handed to the frame-rotation fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawCell {
    pub sum: [u64; 3],
    pub count: u32,
    pub prev: History,
    pub delta: f64,
    pub reeval_new: [u64; 3],
    pub reeval_old: [u64; 3],
    pub reeval_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvictionPolicy {
    /// Cells untouched for more than this many frames are removed.
    pub horizon: u32,
    /// Cells touched within this many frames may not be displaced.
    pub protected_frames: u32,
}

impl Default for EvictionPolicy {
    fn default() -> Self {
        Self {
            horizon: 8,
            protected_frames: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RotationReport {
    pub kept: usize,
    pub evicted: usize,
}

#[derive(Debug, Default)]
struct HotCell {
    tag: AtomicU64,
    sum: [AtomicU64; 3],
    count: AtomicU32,
    last_touch: AtomicU32,
}

#[derive(Debug, Default)]
struct ColdCell {
    prev_sum: [AtomicU64; 3],
    prev_count: AtomicU64,
    delta: AtomicU64,
    reeval_new: [AtomicU64; 3],
    reeval_old: [AtomicU64; 3],
    reeval_count: AtomicU32,
    home: AtomicU32,
}

pub struct HashTable {
    hot: Vec<HotCell>,
    cold: Vec<ColdCell>,
    keys: Vec<[AtomicU64; 3]>,
    mask: usize,
    probe_limit: u32,
    sum_mode: SumMode,
    frame: u32,
    protected_frames: u32,
    false_merges: AtomicU64,
    evictions: AtomicU64,
}

impl fmt::Debug for HashTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HashTable")
            .field("capacity", &self.capacity())
            .field("probe_limit", &self.probe_limit)
            .field("sum_mode", &self.sum_mode)
            .field("frame", &self.frame)
            .finish_non_exhaustive()
    }
}

fn new_vec<T: Default>(n: usize) -> Vec<T> {
    let mut v = Vec::with_capacity(n);
    v.resize_with(n, T::default);
    v
}

impl HashTable {
    pub fn new(cfg: TableConfig) -> Result<Self, TableError> {
        if !cfg.capacity.is_power_of_two() {
            return Err(TableError::CapacityNotPowerOfTwo(cfg.capacity));
        }
        if cfg.capacity > 1 << 32 {
            return Err(TableError::CapacityTooLarge(cfg.capacity));
        }
        if cfg.probe_limit == 0 {
            return Err(TableError::ZeroProbeLimit);
        }
        let hot: Vec<HotCell> = new_vec(cfg.capacity);
        for c in &hot {
            c.tag.store(EMPTY, Ordering::Relaxed);
        }
        Ok(Self {
            hot,
            cold: new_vec(cfg.capacity),
            keys: if cfg.record_keys { new_vec(cfg.capacity) } else { Vec::new() },
            mask: cfg.capacity - 1,
            probe_limit: cfg.probe_limit,
            sum_mode: cfg.sum_mode,
            frame: 0,
            protected_frames: EvictionPolicy::default().protected_frames,
            false_merges: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        })
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.mask + 1
    }

    #[inline]
    pub fn probe_limit(&self) -> u32 {
        self.probe_limit
    }

    #[inline]
    pub fn sum_mode(&self) -> SumMode {
        self.sum_mode
    }

    pub fn records_keys(&self) -> bool {
        !self.keys.is_empty()
    }

    /// Frame index of the most recent `begin_frame`.
    pub fn frame(&self) -> u32 {
        self.frame
    }

    #[inline]
    pub fn home_slot(&self, h: &CellHashes) -> usize {
        h.index as usize & self.mask
    }

    /// Hits whose stored key differed from the accumulated key.
    pub fn false_merges(&self) -> u64 {
        self.false_merges.load(Ordering::Relaxed)
    }

    /// Cells displaced while claiming, since construction.
    pub fn displacements(&self) -> u64 {
        self.evictions.load(Ordering::Relaxed)
    }

    pub fn occupied(&self) -> usize {
        self.hot
            .iter()
            .filter(|c| c.tag.load(Ordering::Relaxed) != EMPTY)
            .count()
    }

    pub fn occupancy(&self) -> f64 {
        self.occupied() as f64 / self.capacity() as f64
    }

    /// Adds `contribution` to the voxel identified by `h`.
    pub fn accumulate(&self, h: &CellHashes, contribution: Rgb, frame: u32) -> InsertOutcome {
        self.accumulate_impl(h, None, contribution, frame)
    }

    /// Like [`accumulate`](Self::accumulate), additionally storing the key on
    /// claim and counting hits whose stored key differs (false merges).
    pub fn accumulate_keyed(&self, key: &CellKey, h: &CellHashes, contribution: Rgb, frame: u32) -> InsertOutcome {
        self.accumulate_impl(h, Some(key), contribution, frame)
    }

    fn accumulate_impl(&self, h: &CellHashes, key: Option<&CellKey>, c: Rgb, frame: u32) -> InsertOutcome {
        debug_assert!(c.is_finite() && c.min_component() >= 0.0, "invalid contribution {c:?}");
        debug_assert_ne!(h.fingerprint, SENTINEL);
        let home = self.home_slot(h);
        'retry: loop {
            let mut empty: Option<(usize, u64)> = None;
            let mut victim: Option<(usize, u64)> = None;
            let mut probes = 0;
            for step in 0..self.probe_limit as usize {
                let slot = (home + step) & self.mask;
                let cell = &self.hot[slot];
                probes += 1;
                let mut tag = cell.tag.load(Ordering::Acquire);
                while tag == BUSY {
                    core::hint::spin_loop();
                    tag = cell.tag.load(Ordering::Acquire);
                }
                if tag_fingerprint(tag) == h.fingerprint && tag != EMPTY {
                    if tag_priority(tag) != 0
                        && cell
                            .tag
                            .compare_exchange(tag, live_tag(h.fingerprint), Ordering::AcqRel, Ordering::Acquire)
                            .is_err()
                    {
                        continue 'retry;
                    }
                    if let Some(k) = key {
                        if self.stored_key(slot) != Some(*k) {
                            self.false_merges.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                    self.add(slot, c, frame);
                    return InsertOutcome {
                        status: InsertStatus::Accumulated,
                        slot: Some(slot),
                        probes,
                    };
                }
                if tag == EMPTY {
                    empty = Some((slot, tag));
                    break;
                }
                if tag_priority(tag) != 0
                    && tag_age(tag) > self.protected_frames
                    && victim.is_none_or(|(_, best)| tag > best)
                {
                    victim = Some((slot, tag));
                }
            }
            let Some((slot, observed)) = empty.or(victim) else {
                return InsertOutcome {
                    status: InsertStatus::ProbeLimitExceeded,
                    slot: None,
                    probes,
                };
            };
            let cell = &self.hot[slot];
            if cell
                .tag
                .compare_exchange(observed, BUSY, Ordering::AcqRel, Ordering::Acquire)
                .is_err()
            {
                continue 'retry;
            }
            let evicted = observed != EMPTY;
            if evicted {
                self.reset_payload(slot);
                self.evictions.fetch_add(1, Ordering::Relaxed);
            }
            self.cold[slot].home.store(home as u32, Ordering::Relaxed);
            if let Some(k) = key {
                if let Some(words) = self.keys.get(slot) {
                    for (w, v) in words.iter().zip(k.words()) {
                        w.store(v, Ordering::Relaxed);
                    }
                }
            }
            cell.tag.store(live_tag(h.fingerprint), Ordering::Release);
            self.add(slot, c, frame);
            return InsertOutcome {
                status: if evicted {
                    InsertStatus::EvictedThenAccumulated
                } else {
                    InsertStatus::Accumulated
                },
                slot: Some(slot),
                probes,
            };
        }
    }

    #[inline]
    fn add(&self, slot: usize, c: Rgb, frame: u32) {
        let cell = &self.hot[slot];
        for (s, v) in cell.sum.iter().zip(c.to_array()) {
            self.sum_mode.atomic_add(s, v);
        }
        cell.count.fetch_add(1, Ordering::Relaxed);
        cell.last_touch.store(frame, Ordering::Relaxed);
    }

    fn reset_payload(&self, slot: usize) {
        let hot = &self.hot[slot];
        let cold = &self.cold[slot];
        let zero = self.sum_mode.encode(0.0);
        for s in hot.sum.iter().chain(&cold.prev_sum).chain(&cold.reeval_new).chain(&cold.reeval_old) {
            s.store(zero, Ordering::Relaxed);
        }
        hot.count.store(0, Ordering::Relaxed);
        cold.prev_count.store(0, Ordering::Relaxed);
        cold.reeval_count.store(0, Ordering::Relaxed);
        cold.delta.store(0f64.to_bits(), Ordering::Relaxed);
    }

    fn stored_key(&self, slot: usize) -> Option<CellKey> {
        let words = self.keys.get(slot)?;
        Some(CellKey::from_words([
            words[0].load(Ordering::Relaxed),
            words[1].load(Ordering::Relaxed),
            words[2].load(Ordering::Relaxed),
        ]))
    }

    /// Adds a re-evaluated contribution and its original to an existing cell;
    /// returns `false` when the voxel is not in the table.
    pub fn accumulate_difference(&self, h: &CellHashes, new: Rgb, old: Rgb) -> bool {
        let Probe::Found { slot, .. } = self.find(h) else {
            return false;
        };
        let cold = &self.cold[slot];
        for (s, v) in cold.reeval_new.iter().zip(new.to_array()) {
            self.sum_mode.atomic_add(s, v);
        }
        for (s, v) in cold.reeval_old.iter().zip(old.to_array()) {
            self.sum_mode.atomic_add(s, v);
        }
        cold.reeval_count.fetch_add(1, Ordering::Relaxed);
        true
    }

    /// Searches the probe chain of `h` for its fingerprint.
    pub fn find(&self, h: &CellHashes) -> Probe {
        self.find_fingerprint(self.home_slot(h), h.fingerprint)
    }

    fn find_fingerprint(&self, home: usize, fingerprint: u32) -> Probe {
        let mut probes = 0;
        for step in 0..self.probe_limit as usize {
            let slot = (home + step) & self.mask;
            probes += 1;
            let tag = self.hot[slot].tag.load(Ordering::Acquire);
            if tag == EMPTY {
                return Probe::Empty { probes };
            }
            if tag_fingerprint(tag) == fingerprint {
                return Probe::Found { slot, probes };
            }
        }
        Probe::LimitExceeded { probes }
    }

    /// Mean and count of the current generation of the voxel `h`.
    pub fn lookup(&self, h: &CellHashes) -> Option<(Rgb, u32)> {
        match self.find(h) {
            Probe::Found { slot, .. } => {
                let v = self.cell(slot);
                v.mean().map(|m| (m, v.count))
            }
            _ => None,
        }
    }

    /// All occupied cells within the probe window of `h` whose fingerprint
    /// passes `accept`; mismatching fingerprints do not stop the scan.
    pub fn probe_scan(&self, h: &CellHashes, accept: impl Fn(u32) -> bool) -> Vec<CellView> {
        let home = self.home_slot(h);
        let mut out = Vec::new();
        for step in 0..self.probe_limit as usize {
            let slot = (home + step) & self.mask;
            let tag = self.hot[slot].tag.load(Ordering::Acquire);
            if tag == EMPTY {
                break;
            }
            if accept(tag_fingerprint(tag)) {
                out.push(self.cell(slot));
            }
        }
        out
    }

    /// Decoded contents of `slot`. Reads are plain loads; call after the
    /// accumulation phase has completed.
    pub fn cell(&self, slot: usize) -> CellView {
        let hot = &self.hot[slot];
        let cold = &self.cold[slot];
        let m = self.sum_mode;
        let rgb = |a: &[AtomicU64; 3]| {
            Rgb::new(
                m.decode(a[0].load(Ordering::Relaxed)),
                m.decode(a[1].load(Ordering::Relaxed)),
                m.decode(a[2].load(Ordering::Relaxed)),
            )
        };
        CellView {
            slot,
            tag: hot.tag.load(Ordering::Acquire),
            sum: rgb(&hot.sum),
            count: hot.count.load(Ordering::Relaxed),
            prev_sum: rgb(&cold.prev_sum),
            prev_count: decode_count(cold.prev_count.load(Ordering::Relaxed)),
            delta: f64::from_bits(cold.delta.load(Ordering::Relaxed)),
            reeval_new: rgb(&cold.reeval_new),
            reeval_old: rgb(&cold.reeval_old),
            reeval_count: cold.reeval_count.load(Ordering::Relaxed),
            last_touch: hot.last_touch.load(Ordering::Relaxed),
            key: self.stored_key(slot),
        }
    }

    /// Raw sums of the current generation, for exact comparisons.
    pub fn raw_sum(&self, slot: usize) -> [u64; 3] {
        let s = &self.hot[slot].sum;
        [
            s[0].load(Ordering::Relaxed),
            s[1].load(Ordering::Relaxed),
            s[2].load(Ordering::Relaxed),
        ]
    }

    pub fn raw_history(&self, slot: usize) -> History {
        let c = &self.cold[slot];
        History {
            sum: [
                c.prev_sum[0].load(Ordering::Relaxed),
                c.prev_sum[1].load(Ordering::Relaxed),
                c.prev_sum[2].load(Ordering::Relaxed),
            ],
            count: c.prev_count.load(Ordering::Relaxed),
        }
    }

    /// Occupied slots in index order.
    pub fn occupied_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.capacity()).filter(|s| self.hot[*s].tag.load(Ordering::Relaxed) != EMPTY)
    }

    pub fn home_of(&self, slot: usize) -> usize {
        self.cold[slot].home.load(Ordering::Relaxed) as usize
    }

    /// Starts frame `frame`: folds the current generation into the previous
    /// one with `fold`, zeroes the current generation, removes cells older
    /// than the horizon and re-stamps the eviction priority of kept cells.
    ///
    /// `fold` also returns the change metric to carry forward.
    pub fn begin_frame(
        &mut self,
        frame: u32,
        policy: EvictionPolicy,
        mut fold: impl FnMut(&RawCell) -> (History, f64),
    ) -> RotationReport {
        self.frame = frame;
        self.protected_frames = policy.protected_frames;
        let zero = self.sum_mode.encode(0.0);
        let mut report = RotationReport::default();
        let mut removed = false;
        for slot in 0..self.capacity() {
            let hot = &mut self.hot[slot];
            let tag = *hot.tag.get_mut();
            if tag == EMPTY {
                continue;
            }
            let cold = &mut self.cold[slot];
            let raw = RawCell {
                sum: [*hot.sum[0].get_mut(), *hot.sum[1].get_mut(), *hot.sum[2].get_mut()],
                count: *hot.count.get_mut(),
                prev: History {
                    sum: [
                        *cold.prev_sum[0].get_mut(),
                        *cold.prev_sum[1].get_mut(),
                        *cold.prev_sum[2].get_mut(),
                    ],
                    count: *cold.prev_count.get_mut(),
                },
                delta: f64::from_bits(*cold.delta.get_mut()),
                reeval_new: [
                    *cold.reeval_new[0].get_mut(),
                    *cold.reeval_new[1].get_mut(),
                    *cold.reeval_new[2].get_mut(),
                ],
                reeval_old: [
                    *cold.reeval_old[0].get_mut(),
                    *cold.reeval_old[1].get_mut(),
                    *cold.reeval_old[2].get_mut(),
                ],
                reeval_count: *cold.reeval_count.get_mut(),
            };
            let age = frame.saturating_sub(*hot.last_touch.get_mut());
            if age > policy.horizon {
                *hot.tag.get_mut() = EMPTY;
                clear_cell(hot, cold, zero);
                report.evicted += 1;
                removed = true;
                continue;
            }
            let (history, delta) = fold(&raw);
            for (s, v) in cold.prev_sum.iter_mut().zip(history.sum) {
                *s.get_mut() = v;
            }
            *cold.prev_count.get_mut() = history.count;
            *cold.delta.get_mut() = delta.to_bits();
            for s in hot.sum.iter_mut().chain(&mut cold.reeval_new).chain(&mut cold.reeval_old) {
                *s.get_mut() = zero;
            }
            *hot.count.get_mut() = 0;
            *cold.reeval_count.get_mut() = 0;
            let weight = (history.count >> 16).min(u32::MAX as u64);
            *hot.tag.get_mut() = stale_tag(tag_fingerprint(tag), age, weight);
            report.kept += 1;
        }
        if removed {
            self.compact();
        }
        report
    }

    /// Removes the cell in `slot` (exclusive access).
    pub fn remove(&mut self, slot: usize) {
        self.remove_slots(&[slot]);
    }

    /// Removes several cells at once; slot indices refer to the layout
    /// before the call.
    pub fn remove_slots(&mut self, slots: &[usize]) {
        if slots.is_empty() {
            return;
        }
        let zero = self.sum_mode.encode(0.0);
        for &slot in slots {
            *self.hot[slot].tag.get_mut() = EMPTY;
            clear_cell(&mut self.hot[slot], &mut self.cold[slot], zero);
        }
        self.compact();
    }

    /// Adds `history` to the previous generation of `key`'s voxel, claiming a
    /// slot if needed (exclusive access). Returns `false` if no slot is
    /// available within the probe limit.
    pub fn add_history(&mut self, key: &CellKey, h: &CellHashes, history: History) -> bool {
        let slot = match self.find(h) {
            Probe::Found { slot, .. } => slot,
            Probe::Empty { probes } => {
                let slot = (self.home_slot(h) + probes as usize - 1) & self.mask;
                *self.hot[slot].tag.get_mut() = stale_tag(h.fingerprint, 1, 0);
                *self.hot[slot].last_touch.get_mut() = self.frame.saturating_sub(1);
                *self.cold[slot].home.get_mut() = self.home_slot(h) as u32;
                if let Some(words) = self.keys.get_mut(slot) {
                    for (w, v) in words.iter_mut().zip(key.words()) {
                        *w.get_mut() = v;
                    }
                }
                slot
            }
            Probe::LimitExceeded { .. } => return false,
        };
        let mode = self.sum_mode;
        let cold = &mut self.cold[slot];
        for (s, v) in cold.prev_sum.iter_mut().zip(history.sum) {
            *s.get_mut() = mode.add_raw(*s.get_mut(), v);
        }
        *cold.prev_count.get_mut() += history.count;
        true
    }

    /// Restores the no-hole invariant of every probe chain after removals by
    /// moving cells toward their home slot.
    fn compact(&mut self) {
        let cap = self.capacity();
        let Some(start) = (0..cap).find(|s| *self.hot[*s].tag.get_mut() == EMPTY) else {
            return;
        };
        loop {
            let mut moved = false;
            for i in 1..cap {
                let j = (start + i) & self.mask;
                if *self.hot[j].tag.get_mut() == EMPTY {
                    continue;
                }
                let mut p = *self.cold[j].home.get_mut() as usize;
                while p != j && *self.hot[p].tag.get_mut() != EMPTY {
                    p = (p + 1) & self.mask;
                }
                if p != j {
                    self.hot.swap(p, j);
                    self.cold.swap(p, j);
                    if !self.keys.is_empty() {
                        self.keys.swap(p, j);
                    }
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
    }
}

fn clear_cell(hot: &mut HotCell, cold: &mut ColdCell, zero: u64) {
    for s in hot.sum.iter_mut().chain(&mut cold.prev_sum).chain(&mut cold.reeval_new).chain(&mut cold.reeval_old) {
        *s.get_mut() = zero;
    }
    *hot.count.get_mut() = 0;
    *hot.last_touch.get_mut() = 0;
    *cold.prev_count.get_mut() = 0;
    *cold.reeval_count.get_mut() = 0;
    *cold.delta.get_mut() = 0;
    *cold.home.get_mut() = 0;
}
