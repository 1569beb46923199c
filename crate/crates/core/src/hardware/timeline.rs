use std::collections::BTreeMap;

/// Reserved, pairwise disjoint `[start, end)` intervals on one channel.
#[derive(Clone, Debug, Default)]
pub struct Timeline {
    intervals: BTreeMap<u64, u64>,
}

impl Timeline {
    /// Earliest `s >= t` such that `[s, s + len)` overlaps no reservation.
    pub fn first_gap(&self, t: u64, len: u64) -> u64 {
        let mut s = t;
        loop {
            // The interval with the greatest start below s + len is the only
            // candidate that can still overlap, as intervals are disjoint.
            match self.intervals.range(..s + len.max(1)).next_back() {
                Some((_, &end)) if end > s => s = end,
                _ => return s,
            }
        }
    }

    pub fn is_free(&self, start: u64, end: u64) -> bool {
        self.first_gap(start, end - start) == start
    }

    pub fn reserve(&mut self, start: u64, end: u64) {
        debug_assert!(start < end);
        debug_assert!(self.is_free(start, end), "overlapping reservation [{start}, {end})");
        self.intervals.insert(start, end);
    }

    /// Drops reservations that ended at or before `now`.
    pub fn prune(&mut self, now: u64) {
        while let Some((&start, &end)) = self.intervals.first_key_value() {
            if end > now {
                break;
            }
            self.intervals.remove(&start);
        }
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}
