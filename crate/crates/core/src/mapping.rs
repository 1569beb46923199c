//! Logical-to-physical translation and write placement.
//!
//! Two schemes share one resident truth table: the plain page map, and DFTL,
//! which additionally models a bounded cached mapping table (CMT) backed by
//! translation pages on flash. DFTL changes what the device has to do (extra
//! translation reads and writes) but never what a read returns.

use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap as HashMap;

use thiserror::Error;

use crate::gc_wl::{pick_free_block, RESERVED_BLOCKS};
use crate::hardware::{BlockState, FlashArray, Geometry, LunId, Ppa, RamBudget, RamPool};
use crate::temperature::Temperature;

/// Serialized size of one mapping entry.
pub const MAP_ENTRY_BYTES: u64 = 8;
/// RAM footprint of one cached DFTL entry.
pub const CMT_ENTRY_BYTES: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MappingScheme {
    PageMap,
    Dftl { cmt_capacity: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MappingError {
    #[error("read of unmapped logical page {0}")]
    Unmapped(u64),
    #[error("logical page {lpn} outside [0, {limit})")]
    OutOfRange { lpn: u64, limit: u64 },
    #[error("no free space left on any LUN")]
    OutOfSpace,
    #[error("binding logical page {lpn} to {ppa}, which holds no programmed data")]
    BindUnprogrammed { lpn: u64, ppa: Ppa },
    #[error("mapping tables need {needed} bytes of controller RAM, {available} available")]
    RamExhausted { needed: u64, available: u64 },
}

/// What a physical page currently stores, from the mapping's point of view.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Owner {
    None,
    Data(u64),
    Translation(u32),
}

/// Flash work a DFTL lookup or update requires.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideIo {
    ReadTranslation(u32),
    WriteTranslation(u32),
}

/// LRU cache of mapping entries with dirty flags.
#[derive(Clone, Debug)]
pub struct Cmt {
    capacity: usize,
    entries: HashMap<u64, (bool, u64)>,
    lru: BTreeMap<u64, u64>,
    clock: u64,
}

impl Cmt {
    pub fn new(capacity: usize) -> Self {
        Cmt { capacity: capacity.max(1), entries: HashMap::default(), lru: BTreeMap::new(), clock: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, lpn: u64) -> bool {
        self.entries.contains_key(&lpn)
    }

    pub fn is_dirty(&self, lpn: u64) -> bool {
        self.entries.get(&lpn).is_some_and(|e| e.0)
    }

    fn clean_where(&mut self, pred: impl Fn(u64) -> bool) {
        for (lpn, entry) in self.entries.iter_mut() {
            if pred(*lpn) {
                entry.0 = false;
            }
        }
    }

    /// Refreshes a cached entry; false on a miss.
    fn touch(&mut self, lpn: u64, dirty: bool) -> bool {
        let Some(entry) = self.entries.get_mut(&lpn) else { return false };
        self.lru.remove(&entry.1);
        self.clock += 1;
        entry.1 = self.clock;
        entry.0 |= dirty;
        self.lru.insert(self.clock, lpn);
        true
    }

    /// Inserts a missing entry, evicting the least recently used one when full.
    fn insert(&mut self, lpn: u64, dirty: bool) -> Option<(u64, bool)> {
        let evicted = if self.entries.len() >= self.capacity {
            let (_, victim) = self.lru.pop_first().expect("non-empty cache");
            let (was_dirty, _) = self.entries.remove(&victim).expect("lru and map agree");
            Some((victim, was_dirty))
        } else {
            None
        };
        self.clock += 1;
        self.entries.insert(lpn, (dirty, self.clock));
        self.lru.insert(self.clock, lpn);
        evicted
    }
}

#[derive(Clone, Debug)]
pub struct Dftl {
    pub cmt: Cmt,
    gtd: Vec<Option<Ppa>>,
    gtd_version: Vec<u64>,
    entries_per_tpage: u64,
    /// Translation pages whose flash copy misses relocations of uncached entries.
    stale: BTreeSet<u32>,
}

impl Dftl {
    pub fn new(cmt_capacity: usize, logical_pages: u64, page_size: u32) -> Self {
        let entries_per_tpage = (page_size as u64 / MAP_ENTRY_BYTES).max(1);
        let tpages = logical_pages.div_ceil(entries_per_tpage) as usize;
        Dftl {
            cmt: Cmt::new(cmt_capacity),
            gtd: vec![None; tpages],
            gtd_version: vec![0; tpages],
            entries_per_tpage,
            stale: BTreeSet::new(),
        }
    }

    pub fn tpage_of(&self, lpn: u64) -> u32 {
        (lpn / self.entries_per_tpage) as u32
    }

    pub fn translation_pages(&self) -> usize {
        self.gtd.len()
    }

    pub fn gtd(&self, tpage: u32) -> Option<Ppa> {
        self.gtd[tpage as usize]
    }

    pub fn gtd_bytes(&self) -> u64 {
        self.gtd.len() as u64 * MAP_ENTRY_BYTES
    }

    /// Looks `lpn` up, loading it on a miss. The eviction write (if the LRU
    /// victim was dirty) precedes the translation read.
    pub fn access(&mut self, lpn: u64, dirty: bool, ram: &mut RamBudget) -> Vec<SideIo> {
        if self.cmt.touch(lpn, dirty) {
            return Vec::new();
        }
        let mut side = self.load(lpn, dirty, ram);
        let t = self.tpage_of(lpn);
        if self.gtd[t as usize].is_some() {
            side.push(SideIo::ReadTranslation(t));
        }
        side
    }

    /// Marks `lpn` dirty; a missing entry is installed without a read since
    /// its new value is already known.
    pub fn mark_dirty(&mut self, lpn: u64, ram: &mut RamBudget) -> Vec<SideIo> {
        if self.cmt.touch(lpn, true) {
            return Vec::new();
        }
        self.load(lpn, true, ram)
    }

    /// Records a relocation: a cached entry is updated in place, otherwise
    /// its translation page is rewritten by the next [`Dftl::flush_stale`].
    pub fn relocated(&mut self, lpn: u64) {
        if !self.cmt.touch(lpn, true) {
            self.stale.insert(self.tpage_of(lpn));
        }
    }

    /// One translation write per page left stale by relocations.
    pub fn flush_stale(&mut self) -> Vec<SideIo> {
        std::mem::take(&mut self.stale).into_iter().map(SideIo::WriteTranslation).collect()
    }

    fn load(&mut self, lpn: u64, dirty: bool, ram: &mut RamBudget) -> Vec<SideIo> {
        match self.cmt.insert(lpn, dirty) {
            Some((victim, true)) => {
                // The written translation page carries every entry it covers.
                let t = self.tpage_of(victim);
                let per = self.entries_per_tpage;
                self.cmt.clean_where(|l| l / per == t as u64);
                self.stale.remove(&t);
                vec![SideIo::WriteTranslation(t)]
            }
            Some(_) => Vec::new(),
            None => {
                let reserved = ram.reserve(RamPool::Ram, CMT_ENTRY_BYTES);
                debug_assert!(reserved, "CMT capacity was checked against RAM at construction");
                Vec::new()
            }
        }
    }
}

/// A write destination picked by [`Ftl::choose_write_location`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub ppa: Ppa,
    pub lun: LunId,
    pub temperature: Temperature,
    pub opens_block: bool,
    pub group: Option<u32>,
}

/// Who is asking for space: host-side writes may not dip into the relocation reserve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Writer {
    Host,
    Relocation,
}

const UNMAPPED: u32 = u32::MAX;

pub struct Ftl {
    geometry: Geometry,
    logical_pages: u64,
    table: Vec<u32>,
    version: Vec<u64>,
    owner: Vec<Owner>,
    dftl: Option<Dftl>,
    ram: RamBudget,
    open: Vec<[Option<u32>; 2]>,
    cursor: u32,
    groups: HashMap<u32, (LunId, Temperature, u32)>,
    pending_programs: Vec<u32>,
    dynamic_wl: bool,
}

impl Ftl {
    pub fn new(
        geometry: Geometry,
        overprovision: f64,
        scheme: MappingScheme,
        mut ram: RamBudget,
        dynamic_wl: bool,
    ) -> Result<Self, MappingError> {
        let logical_pages = logical_page_count(&geometry, overprovision);
        let dftl = match scheme {
            MappingScheme::PageMap => {
                let needed = logical_pages * MAP_ENTRY_BYTES;
                if !ram.reserve(RamPool::Ram, needed) {
                    return Err(MappingError::RamExhausted { needed, available: ram.capacity(RamPool::Ram) });
                }
                None
            }
            MappingScheme::Dftl { cmt_capacity } => {
                let dftl = Dftl::new(cmt_capacity, logical_pages, geometry.page_size_bytes);
                let needed = cmt_capacity as u64 * CMT_ENTRY_BYTES + dftl.gtd_bytes();
                if needed > ram.capacity(RamPool::Ram) - ram.used(RamPool::Ram) {
                    return Err(MappingError::RamExhausted { needed, available: ram.capacity(RamPool::Ram) });
                }
                ram.reserve(RamPool::Ram, dftl.gtd_bytes());
                Some(dftl)
            }
        };
        Ok(Ftl {
            geometry,
            logical_pages,
            table: vec![UNMAPPED; logical_pages as usize],
            version: vec![0; logical_pages as usize],
            owner: vec![Owner::None; geometry.total_pages() as usize],
            dftl,
            ram,
            open: vec![[None; 2]; geometry.total_luns() as usize],
            cursor: 0,
            groups: HashMap::default(),
            pending_programs: vec![0; geometry.total_blocks()],
            dynamic_wl,
        })
    }

    pub fn logical_pages(&self) -> u64 {
        self.logical_pages
    }

    pub fn dftl(&self) -> Option<&Dftl> {
        self.dftl.as_ref()
    }

    pub fn ram(&self) -> &RamBudget {
        &self.ram
    }

    pub fn check_lpn(&self, lpn: u64) -> Result<(), MappingError> {
        if lpn < self.logical_pages {
            Ok(())
        } else {
            Err(MappingError::OutOfRange { lpn, limit: self.logical_pages })
        }
    }

    /// Current physical location of `lpn`, with no side effects.
    pub fn lookup(&self, lpn: u64) -> Option<Ppa> {
        match self.table[lpn as usize] {
            UNMAPPED => None,
            idx => Some(self.geometry.ppa_of_page_index(idx as usize)),
        }
    }

    pub fn owner(&self, ppa: Ppa) -> Owner {
        self.owner[self.geometry.page_index(ppa)]
    }

    pub fn mapped_count(&self) -> usize {
        self.table.iter().filter(|&&e| e != UNMAPPED).count()
    }

    pub fn translate_read(&mut self, lpn: u64) -> Result<(Ppa, Vec<SideIo>), MappingError> {
        self.check_lpn(lpn)?;
        let side = self.cache_access(lpn, false);
        let ppa = self.lookup(lpn).ok_or(MappingError::Unmapped(lpn))?;
        Ok((ppa, side))
    }

    /// DFTL lookup cost of touching `lpn`; empty for the page map.
    pub fn cache_access(&mut self, lpn: u64, dirty: bool) -> Vec<SideIo> {
        match self.dftl.as_mut() {
            Some(d) => d.access(lpn, dirty, &mut self.ram),
            None => Vec::new(),
        }
    }

    pub fn pending_programs(&self, lun: LunId, block: u32) -> u32 {
        self.pending_programs[lun.0 as usize * self.geometry.blocks_per_lun as usize + block as usize]
    }

    pub fn open_block(&self, lun: LunId, temperature: Temperature) -> Option<u32> {
        self.open[lun.0 as usize][temperature.class_index()]
    }

    fn writable_open_block(&self, flash: &FlashArray, lun: LunId, temperature: Temperature) -> Option<u32> {
        self.open_block(lun, temperature).filter(|&b| flash.block(lun, b).state != BlockState::Full)
    }

    fn has_space(&self, flash: &FlashArray, lun: LunId, temperature: Temperature, writer: Writer) -> bool {
        // Host writes must leave RESERVED_BLOCKS worth of free pages on the
        // LUN, wherever they are, so a relocation job can always finish.
        let reserve = RESERVED_BLOCKS as u64 * self.geometry.pages_per_block as u64;
        if writer == Writer::Host && flash.free_pages(lun) <= reserve {
            return false;
        }
        self.writable_open_block(flash, lun, temperature).is_some() || flash.free_blocks(lun) > 0
    }

    /// Picks the page a write should go to without changing any state.
    ///
    /// A locality group keeps using the block its previous write went to while
    /// that block is still open. Otherwise, among LUNs accepted by `lun_ok` that
    /// have room, the one with the most free pages wins, ties going round-robin
    /// from the LUN after the last one used. `Ok(None)` means nothing is usable
    /// right now.
    pub fn choose_write_location(
        &self,
        flash: &FlashArray,
        temperature: Temperature,
        group: Option<u32>,
        writer: Writer,
        lun_ok: impl Fn(LunId) -> bool,
    ) -> Result<Option<Placement>, MappingError> {
        if let Some(g) = group {
            if let Some(&(lun, class, block)) = self.groups.get(&g) {
                if self.writable_open_block(flash, lun, class) == Some(block) {
                    if !lun_ok(lun) {
                        return Ok(None);
                    }
                    let ppa = self.geometry.ppa_at(lun, block, flash.block(lun, block).write_ptr);
                    return Ok(Some(Placement { ppa, lun, temperature: class, opens_block: false, group }));
                }
            }
        }
        let n = self.geometry.total_luns();
        let best = self
            .geometry
            .luns()
            .filter(|&lun| self.has_space(flash, lun, temperature, writer) && lun_ok(lun))
            .min_by_key(|&lun| (u64::MAX - flash.free_pages(lun), (lun.0 + n - self.cursor % n) % n));
        let Some(lun) = best else {
            if self.geometry.luns().all(|l| flash.free_pages(l) == 0) {
                return Err(MappingError::OutOfSpace);
            }
            return Ok(None);
        };
        let (block, opens_block) = match self.writable_open_block(flash, lun, temperature) {
            Some(b) => (b, false),
            None => match pick_free_block(flash, lun, temperature, self.dynamic_wl) {
                Some(b) => (b, true),
                None => return Ok(None),
            },
        };
        let ppa = self.geometry.ppa_at(lun, block, flash.block(lun, block).write_ptr);
        Ok(Some(Placement { ppa, lun, temperature, opens_block, group }))
    }

    /// Records that a program to `placement` is being issued now.
    pub fn commit_placement(&mut self, flash: &mut FlashArray, placement: &Placement) {
        let lun = placement.lun;
        let block = placement.ppa.block;
        if placement.opens_block {
            flash.open_block(lun, block);
            self.open[lun.0 as usize][placement.temperature.class_index()] = Some(block);
        }
        self.cursor = (lun.0 + 1) % self.geometry.total_luns();
        if let Some(g) = placement.group {
            self.groups.insert(g, (lun, placement.temperature, block));
        }
        self.pending_programs[self.geometry.block_index(placement.ppa)] += 1;
    }

    fn program_finished(&mut self, ppa: Ppa) {
        let idx = self.geometry.block_index(ppa);
        self.pending_programs[idx] = self.pending_programs[idx].saturating_sub(1);
    }

    fn set_owner(&mut self, ppa: Ppa, owner: Owner) {
        let idx = self.geometry.page_index(ppa);
        self.owner[idx] = owner;
    }

    fn drop_page(&mut self, flash: &mut FlashArray, ppa: Ppa) {
        flash.invalidate(ppa);
        self.set_owner(ppa, Owner::None);
    }

    /// Binds `lpn` to a freshly programmed page. `version` orders competing
    /// writes of the same page: an older write completing late is discarded.
    pub fn bind_write(
        &mut self,
        flash: &mut FlashArray,
        lpn: u64,
        ppa: Ppa,
        version: u64,
    ) -> Result<BindOutcome, MappingError> {
        self.program_finished(ppa);
        if !flash.is_valid(ppa) {
            return Err(MappingError::BindUnprogrammed { lpn, ppa });
        }
        if version < self.version[lpn as usize] {
            self.drop_page(flash, ppa);
            return Ok(BindOutcome { invalidated: None, superseded: true, side: Vec::new() });
        }
        let old = self.lookup(lpn);
        self.table[lpn as usize] = self.geometry.page_index(ppa) as u32;
        self.version[lpn as usize] = version;
        self.set_owner(ppa, Owner::Data(lpn));
        if let Some(old) = old {
            self.drop_page(flash, old);
        }
        let side = match self.dftl.as_mut() {
            Some(d) => d.mark_dirty(lpn, &mut self.ram),
            None => Vec::new(),
        };
        Ok(BindOutcome { invalidated: old, superseded: false, side })
    }

    /// Removes the mapping of `lpn` unless a newer write already replaced it.
    pub fn unmap(&mut self, flash: &mut FlashArray, lpn: u64, version: u64) -> Option<Ppa> {
        if version < self.version[lpn as usize] {
            return None;
        }
        self.version[lpn as usize] = version;
        let old = self.lookup(lpn)?;
        self.table[lpn as usize] = UNMAPPED;
        self.drop_page(flash, old);
        Some(old)
    }

    /// Moves whatever `src` held to `dst` (already programmed with the same
    /// payload). If `src` was superseded in the meantime the copy is dropped
    /// and `false` is returned.
    pub fn relocate(&mut self, flash: &mut FlashArray, owner: Owner, src: Ppa, dst: Ppa) -> Result<bool, MappingError> {
        self.program_finished(dst);
        let current = match owner {
            Owner::Data(lpn) => self.lookup(lpn),
            Owner::Translation(t) => self.dftl.as_ref().and_then(|d| d.gtd(t)),
            Owner::None => None,
        };
        if current != Some(src) {
            self.drop_page(flash, dst);
            return Ok(false);
        }
        match owner {
            Owner::Data(lpn) => {
                self.table[lpn as usize] = self.geometry.page_index(dst) as u32;
                if let Some(d) = self.dftl.as_mut() {
                    d.relocated(lpn);
                }
            }
            Owner::Translation(t) => {
                self.dftl.as_mut().expect("translation owner implies DFTL").gtd[t as usize] = Some(dst);
            }
            Owner::None => unreachable!(),
        }
        self.set_owner(dst, owner);
        self.drop_page(flash, src);
        Ok(true)
    }

    /// Translation writes owed for relocations since the last flush.
    pub fn flush_relocations(&mut self) -> Vec<SideIo> {
        self.dftl.as_mut().map_or_else(Vec::new, Dftl::flush_stale)
    }

    /// Points the directory at a newly written translation page.
    pub fn bind_translation(&mut self, flash: &mut FlashArray, tpage: u32, ppa: Ppa, version: u64) {
        self.program_finished(ppa);
        let dftl = self.dftl.as_mut().expect("translation write without DFTL");
        let t = tpage as usize;
        if version < dftl.gtd_version[t] {
            self.drop_page(flash, ppa);
            return;
        }
        dftl.gtd_version[t] = version;
        let old = dftl.gtd[t].replace(ppa);
        self.set_owner(ppa, Owner::Translation(tpage));
        if let Some(old) = old {
            self.drop_page(flash, old);
        }
    }

    /// Checks the mapping/flash bijection. Only meaningful when no program is in flight.
    pub fn audit(&self, flash: &FlashArray) -> Result<(), String> {
        let g = &self.geometry;
        for (lpn, &idx) in self.table.iter().enumerate() {
            if idx == UNMAPPED {
                continue;
            }
            let ppa = g.ppa_of_page_index(idx as usize);
            if !flash.is_valid(ppa) {
                return Err(format!("lpn {lpn} maps to invalid page {ppa}"));
            }
            if self.owner[idx as usize] != Owner::Data(lpn as u64) {
                return Err(format!("page {ppa} mapped by lpn {lpn} is owned by {:?}", self.owner[idx as usize]));
            }
        }
        for idx in 0..g.total_pages() as usize {
            let ppa = g.ppa_of_page_index(idx);
            let valid = flash.is_valid(ppa);
            let ok = match self.owner[idx] {
                Owner::None => !valid,
                Owner::Data(lpn) => valid && self.table[lpn as usize] == idx as u32,
                Owner::Translation(t) => valid && self.dftl.as_ref().and_then(|d| d.gtd(t)) == Some(ppa),
            };
            if !ok {
                return Err(format!("page {ppa} valid={valid} owner={:?} disagrees with the tables", self.owner[idx]));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BindOutcome {
    pub invalidated: Option<Ppa>,
    pub superseded: bool,
    pub side: Vec<SideIo>,
}

pub fn logical_page_count(geometry: &Geometry, overprovision: f64) -> u64 {
    (geometry.total_pages() as f64 * (1.0 - overprovision)).floor() as u64
}
