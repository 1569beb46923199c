//! Garbage collection and wear leveling policies.
//!
//! GC keeps `greediness` writable blocks free on every LUN on top of
//! `reserve_blocks` held back for relocations. Victims are chosen greedily by
//! fewest valid pages. Static wear leveling relocates data off blocks that are
//! younger than average and have not been erased for a long time; dynamic wear
//! leveling steers hot data to young free blocks and cold data to old ones.

use crate::engine::VirtualTime;
use crate::hardware::{BlockState, FlashArray, LunId, Ppa};
use crate::io::{IdAllocator, IoId, IoKind, IoRequest, Source};
use crate::temperature::Temperature;

/// Free blocks per LUN that host-originated writes may not consume, one per
/// temperature class, so a relocation can always open a destination block.
pub const RESERVED_BLOCKS: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcConfig {
    pub greediness: u32,
    pub copyback: bool,
}

impl Default for GcConfig {
    fn default() -> Self {
        GcConfig { greediness: 2, copyback: false }
    }
}

impl GcConfig {
    /// GC runs while a LUN has fewer free blocks than this.
    pub fn trigger_floor(&self) -> u32 {
        self.greediness + RESERVED_BLOCKS
    }
}

/// Free block to open for a write of the given temperature.
pub fn pick_free_block(flash: &FlashArray, lun: LunId, temperature: Temperature, dynamic_wl: bool) -> Option<u32> {
    let free = (0..flash.geometry().blocks_per_lun).filter(|&b| flash.block(lun, b).state == BlockState::Free);
    if !dynamic_wl {
        return free.min();
    }
    let erase = |b: &u32| flash.block(lun, *b).erase_count;
    match temperature {
        Temperature::Hot => free.min_by_key(|b| (erase(b), *b)),
        // Largest erase count; among equals the lowest index.
        Temperature::Cold => free.min_by_key(|b| (u32::MAX - erase(b), *b)),
    }
}

/// FULL block with the fewest valid pages; ties by erase count then index.
pub fn select_victim(flash: &FlashArray, lun: LunId, eligible: impl Fn(u32) -> bool) -> Option<u32> {
    (0..flash.geometry().blocks_per_lun)
        .filter(|&b| flash.block(lun, b).state == BlockState::Full && eligible(b))
        .min_by_key(|&b| {
            let r = flash.block(lun, b);
            (r.valid_count, r.erase_count, b)
        })
}

/// Valid pages of one block to migrate, followed by its erase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelocationPlan {
    pub lun: LunId,
    pub block: u32,
    pub block_addr: Ppa,
    pub moves: Vec<Ppa>,
    pub copyback: bool,
}

impl RelocationPlan {
    pub fn for_block(flash: &FlashArray, lun: LunId, block: u32, copyback: bool) -> Self {
        let g = flash.geometry();
        let moves = flash.block(lun, block).valid_pages().map(|p| g.ppa_at(lun, block, p)).collect();
        RelocationPlan { lun, block, block_addr: g.ppa_at(lun, block, 0), moves, copyback }
    }

    /// Expands the plan into requests in dependency order: each move is a
    /// COPYBACK or a READ feeding a WRITE, and the ERASE waits for all of them.
    pub fn into_requests(self, source: Source, now: VirtualTime, ids: &mut IdAllocator) -> Vec<IoRequest> {
        let mut out = Vec::with_capacity(self.moves.len() * 2 + 1);
        let mut erase_after: Vec<IoId> = Vec::new();
        for src in &self.moves {
            if self.copyback {
                let mut cb = IoRequest::new(ids.next_id(), source, IoKind::Copyback, now);
                cb.src_ppa = Some(*src);
                cb.lun = Some(self.lun);
                erase_after.push(cb.id);
                out.push(cb);
            } else {
                let read = IoRequest::new(ids.next_id(), source, IoKind::Read, now).with_ppa(*src);
                let mut write = IoRequest::new(ids.next_id(), source, IoKind::Write, now).after([read.id]);
                write.src_ppa = Some(*src);
                write.lun = Some(self.lun);
                erase_after.extend([read.id, write.id]);
                out.push(read);
                out.push(write);
            }
        }
        out.push(
            IoRequest::new(ids.next_id(), source, IoKind::Erase, now).with_ppa(self.block_addr).after(erase_after),
        );
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GcDecision {
    /// Enough free blocks, or a GC is already running on the LUN.
    Idle,
    /// Below the floor but every FULL block is fully valid or busy.
    NoVictim,
    Collect(RelocationPlan),
}

pub fn check_gc(
    flash: &FlashArray,
    lun: LunId,
    config: &GcConfig,
    in_flight: bool,
    eligible: impl Fn(u32) -> bool,
) -> GcDecision {
    if in_flight || flash.free_blocks(lun) >= config.trigger_floor() {
        return GcDecision::Idle;
    }
    match select_victim(flash, lun, eligible) {
        Some(b) if flash.block(lun, b).valid_count < flash.geometry().pages_per_block => {
            GcDecision::Collect(RelocationPlan::for_block(flash, lun, b, config.copyback))
        }
        _ => GcDecision::NoVictim,
    }
}

/// Erase-interval statistics and the static wear-leveling trigger.
#[derive(Clone, Debug)]
pub struct WearLeveler {
    pub staleness_factor: u64,
    seed_interval: u64,
    interval_sum: u128,
    erases: u64,
}

impl WearLeveler {
    pub fn new(staleness_factor: u64, t_erase: u64) -> Self {
        WearLeveler { staleness_factor, seed_interval: t_erase * 1000, interval_sum: 0, erases: 0 }
    }

    /// Mean time between consecutive erases of the same block.
    pub fn avg_erase_interval(&self) -> u64 {
        if self.erases == 0 {
            self.seed_interval
        } else {
            (self.interval_sum / self.erases as u128) as u64
        }
    }

    pub fn record_erase(&mut self, previous_erase: VirtualTime, erased_at: VirtualTime) {
        self.interval_sum += (erased_at - previous_erase) as u128;
        self.erases += 1;
    }

    /// FULL block below the mean erase count whose last erase is older than
    /// `staleness_factor` average intervals. The stalest wins; ties by erase
    /// count, then LUN and block index.
    pub fn static_candidate(
        &self,
        flash: &FlashArray,
        now: VirtualTime,
        eligible: impl Fn(LunId, u32) -> bool,
    ) -> Option<(LunId, u32)> {
        let g = flash.geometry();
        let blocks = flash.blocks();
        let total: u64 = blocks.iter().map(|b| b.erase_count as u64).sum();
        let n = blocks.len() as u64;
        let threshold = self.staleness_factor.saturating_mul(self.avg_erase_interval());
        g.luns()
            .flat_map(|lun| (0..g.blocks_per_lun).map(move |b| (lun, b)))
            .filter(|&(lun, b)| {
                let r = flash.block(lun, b);
                r.state == BlockState::Full
                    && (r.erase_count as u64) * n < total
                    && now - r.last_erase_time > threshold
                    && eligible(lun, b)
            })
            .min_by_key(|&(lun, b)| {
                let r = flash.block(lun, b);
                (r.last_erase_time, r.erase_count, lun, b)
            })
    }
}
