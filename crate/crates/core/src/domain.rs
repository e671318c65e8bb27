//! Finite integer domains with cached bounds, and the events produced when
//! they shrink.
//!
//! A domain is a bitset over a fixed base range chosen at construction time.
//! Domains only ever shrink, so the base range never needs to grow. Every
//! mutating operation reports what happened as an [`EventMask`]; an operation
//! that would empty the domain fails *without* mutating, so an observable
//! domain is never empty.

use crate::error::Inconsistency;

/// Handle to an integer variable in an engine. Stable for the lifetime of the
/// engine instance and never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Kinds of domain change, as a bitmask so that one mutation can report
/// several kinds at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventMask(pub(crate) u8);

impl EventMask {
    pub const NONE: EventMask = EventMask(0);
    /// Domain became a singleton.
    pub const INSTANTIATED: EventMask = EventMask(1);
    /// Minimum strictly increased.
    pub const MIN: EventMask = EventMask(2);
    /// Maximum strictly decreased.
    pub const MAX: EventMask = EventMask(4);
    /// At least one value was removed.
    pub const REMOVED: EventMask = EventMask(8);
    /// Any change at all.
    pub const ANY: EventMask = EventMask(15);
    /// Bound changes only.
    pub const BOUNDS: EventMask = EventMask(2 | 4);

    pub fn contains(self, other: EventMask) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(self, other: EventMask) -> EventMask {
        EventMask(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// A finite, non-empty set of integers with cached min and max.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiniteDomain {
    /// Lowest representable value; bit i of `words` stands for `base + i`.
    base: i64,
    words: Vec<u64>,
    size: u32,
    min: i64,
    max: i64,
}

impl FiniteDomain {
    /// Builds a domain from an explicit value set. Fails on an empty set.
    pub fn from_values<I: IntoIterator<Item = i64>>(values: I) -> Option<FiniteDomain> {
        let mut vals: Vec<i64> = values.into_iter().collect();
        vals.sort_unstable();
        vals.dedup();
        let (&lo, &hi) = (vals.first()?, vals.last().unwrap());
        let width = (hi - lo) as usize + 1;
        let mut words = vec![0u64; width.div_ceil(64)];
        for v in &vals {
            let bit = (v - lo) as usize;
            words[bit / 64] |= 1 << (bit % 64);
        }
        Some(FiniteDomain {
            base: lo,
            words,
            size: vals.len() as u32,
            min: lo,
            max: hi,
        })
    }

    /// Builds the interval domain `{lo..hi}`.
    pub fn from_range(lo: i64, hi: i64) -> Option<FiniteDomain> {
        if lo > hi {
            return None;
        }
        FiniteDomain::from_values(lo..=hi)
    }

    pub fn singleton(v: i64) -> FiniteDomain {
        FiniteDomain::from_values([v]).unwrap()
    }

    pub fn min(&self) -> i64 {
        self.min
    }

    pub fn max(&self) -> i64 {
        self.max
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn is_singleton(&self) -> bool {
        self.size == 1
    }

    /// The single remaining value; only meaningful on a singleton.
    pub fn value(&self) -> i64 {
        debug_assert!(self.is_singleton());
        self.min
    }

    pub fn contains(&self, v: i64) -> bool {
        if v < self.base {
            return false;
        }
        let bit = (v - self.base) as usize;
        match self.words.get(bit / 64) {
            Some(w) => w & (1 << (bit % 64)) != 0,
            None => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> + '_ {
        let base = self.base;
        (self.min..=self.max).filter(move |&v| {
            let bit = (v - base) as usize;
            self.words[bit / 64] & (1 << (bit % 64)) != 0
        })
    }

    pub fn values(&self) -> Vec<i64> {
        self.iter().collect()
    }

    /// True when the domain is exactly the interval `{min..max}`.
    pub fn is_contiguous(&self) -> bool {
        (self.max - self.min + 1) as u32 == self.size
    }

    fn clear_bit(&mut self, v: i64) {
        let bit = (v - self.base) as usize;
        self.words[bit / 64] &= !(1 << (bit % 64));
        self.size -= 1;
    }

    fn rescan_min(&mut self) {
        let mut v = self.min;
        while !self.contains(v) {
            v += 1;
        }
        self.min = v;
    }

    fn rescan_max(&mut self) {
        let mut v = self.max;
        while !self.contains(v) {
            v -= 1;
        }
        self.max = v;
    }

    fn post_events(&self, old_min: i64, old_max: i64, removed: bool) -> EventMask {
        let mut m = EventMask::NONE;
        if removed {
            m = m.union(EventMask::REMOVED);
        }
        if self.min > old_min {
            m = m.union(EventMask::MIN);
        }
        if self.max < old_max {
            m = m.union(EventMask::MAX);
        }
        if removed && self.size == 1 {
            m = m.union(EventMask::INSTANTIATED);
        }
        m
    }

    /// Removes `v`. Absent values are a no-op; emptying the domain fails
    /// without mutating.
    pub fn remove(&mut self, v: i64) -> Result<EventMask, Inconsistency> {
        if !self.contains(v) {
            return Ok(EventMask::NONE);
        }
        if self.size == 1 {
            return Err(Inconsistency);
        }
        let (old_min, old_max) = (self.min, self.max);
        self.clear_bit(v);
        if v == old_min {
            self.rescan_min();
        }
        if v == old_max {
            self.rescan_max();
        }
        Ok(self.post_events(old_min, old_max, true))
    }

    /// Intersects with `[lb, +inf)`.
    pub fn tighten_min(&mut self, lb: i64) -> Result<EventMask, Inconsistency> {
        if lb <= self.min {
            return Ok(EventMask::NONE);
        }
        if lb > self.max {
            return Err(Inconsistency);
        }
        let (old_min, old_max) = (self.min, self.max);
        for v in self.min..lb {
            if self.contains(v) {
                self.clear_bit(v);
            }
        }
        self.min = lb;
        self.rescan_min();
        Ok(self.post_events(old_min, old_max, true))
    }

    /// Intersects with `(-inf, ub]`.
    pub fn tighten_max(&mut self, ub: i64) -> Result<EventMask, Inconsistency> {
        if ub >= self.max {
            return Ok(EventMask::NONE);
        }
        if ub < self.min {
            return Err(Inconsistency);
        }
        let (old_min, old_max) = (self.min, self.max);
        for v in (ub + 1)..=self.max {
            if self.contains(v) {
                self.clear_bit(v);
            }
        }
        self.max = ub;
        self.rescan_max();
        Ok(self.post_events(old_min, old_max, true))
    }

    /// Reduces the domain to `{v}`. Fails when `v` is not present.
    pub fn assign(&mut self, v: i64) -> Result<EventMask, Inconsistency> {
        if !self.contains(v) {
            return Err(Inconsistency);
        }
        if self.size == 1 {
            return Ok(EventMask::NONE);
        }
        let (old_min, old_max) = (self.min, self.max);
        *self = FiniteDomain::singleton(v);
        Ok(self.post_events(old_min, old_max, true))
    }

    /// Removes every value for which `keep` is false.
    pub fn retain(&mut self, keep: impl Fn(i64) -> bool) -> Result<EventMask, Inconsistency> {
        let doomed: Vec<i64> = self.iter().filter(|&v| !keep(v)).collect();
        if doomed.len() as u32 == self.size {
            return Err(Inconsistency);
        }
        let (old_min, old_max) = (self.min, self.max);
        for v in doomed.iter() {
            self.clear_bit(*v);
        }
        if !doomed.is_empty() {
            self.rescan_min();
            self.rescan_max();
        }
        Ok(self.post_events(old_min, old_max, !doomed.is_empty()))
    }

    pub fn intersects(&self, other: &FiniteDomain) -> bool {
        self.iter().any(|v| other.contains(v))
    }

    pub fn is_subset_of(&self, values: &[i64]) -> bool {
        self.iter().all(|v| values.contains(&v))
    }
}
