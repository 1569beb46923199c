//! Flash array model: geometry, per-command timing, channel and LUN
//! occupancy, and the per-block state that commands mutate.
//!
//! A command's effects on block state are applied when it is reserved.
//! Every LUN command starts at or after the end of the previous one on that
//! LUN, so reservation order and completion order coincide per LUN.

mod geometry;
pub mod ram;
mod timeline;

pub use geometry::{Geometry, LunId, Ppa};
pub use ram::{RamBudget, RamPool};
pub use timeline::Timeline;

use thiserror::Error;

use crate::engine::VirtualTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellType {
    Slc,
    Mlc,
}

/// Whether a channel is released while LUNs perform cell operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interleaving {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimingProfile {
    pub t_cmd: u64,
    pub t_data: u64,
    pub t_read: u64,
    pub t_prog_fast: u64,
    pub t_prog_slow: u64,
    pub t_erase: u64,
    pub cell_type: CellType,
    pub copyback: bool,
    pub pipelined_program: bool,
}

impl Default for TimingProfile {
    fn default() -> Self {
        TimingProfile {
            t_cmd: 2_000,
            t_data: 100_000,
            t_read: 25_000,
            t_prog_fast: 200_000,
            t_prog_slow: 200_000,
            t_erase: 1_500_000,
            cell_type: CellType::Slc,
            copyback: false,
            pipelined_program: false,
        }
    }
}

impl TimingProfile {
    /// Cell program time of a page. MLC alternates fast (even) and slow (odd) pages.
    pub fn t_prog(&self, page: u32) -> u64 {
        match self.cell_type {
            CellType::Mlc if page % 2 == 1 => self.t_prog_slow,
            _ => self.t_prog_fast,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockState {
    Free,
    Open,
    Full,
}

#[derive(Clone, Debug)]
pub struct BlockRecord {
    pub state: BlockState,
    valid: Vec<u64>,
    pub valid_count: u32,
    pub write_ptr: u32,
    pub erase_count: u32,
    pub last_erase_time: VirtualTime,
}

impl BlockRecord {
    fn new(pages: u32) -> Self {
        BlockRecord {
            state: BlockState::Free,
            valid: vec![0; (pages as usize).div_ceil(64)],
            valid_count: 0,
            write_ptr: 0,
            erase_count: 0,
            last_erase_time: VirtualTime::ZERO,
        }
    }

    pub fn is_valid(&self, page: u32) -> bool {
        self.valid[page as usize / 64] >> (page % 64) & 1 == 1
    }

    fn set_valid(&mut self, page: u32) {
        if !self.is_valid(page) {
            self.valid[page as usize / 64] |= 1 << (page % 64);
            self.valid_count += 1;
        }
    }

    fn clear_valid(&mut self, page: u32) -> bool {
        let was = self.is_valid(page);
        if was {
            self.valid[page as usize / 64] &= !(1 << (page % 64));
            self.valid_count -= 1;
        }
        was
    }

    pub fn valid_pages(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.write_ptr).filter(|&p| self.is_valid(p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlashOp {
    Read,
    Program,
    Erase,
    Copyback,
}

/// A command against the array. Erase ignores the page index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlashCommand {
    Read(Ppa),
    Program { at: Ppa, tag: u64 },
    Erase(Ppa),
    Copyback { src: Ppa, dst: Ppa },
}

impl FlashCommand {
    pub fn op(&self) -> FlashOp {
        match self {
            FlashCommand::Read(_) => FlashOp::Read,
            FlashCommand::Program { .. } => FlashOp::Program,
            FlashCommand::Erase(_) => FlashOp::Erase,
            FlashCommand::Copyback { .. } => FlashOp::Copyback,
        }
    }

    /// The address that decides which channel and LUN the command occupies.
    pub fn target(&self) -> Ppa {
        match *self {
            FlashCommand::Read(p) | FlashCommand::Erase(p) => p,
            FlashCommand::Program { at, .. } => at,
            FlashCommand::Copyback { src, .. } => src,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommandTiming {
    pub start: VirtualTime,
    pub complete: VirtualTime,
    /// Total time the channel is held by this command.
    pub channel_busy: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlashError {
    #[error("address {0} outside the array")]
    BadAddress(Ppa),
    #[error("out-of-order program at {at}: block write pointer is {write_ptr}")]
    OutOfOrderProgram { at: Ppa, write_ptr: u32 },
    #[error("erase of block {block} holding {valid} valid pages")]
    EraseWithValidPages { block: Ppa, valid: u32 },
    #[error("copyback from {src} to {dst} crosses LUNs")]
    CopybackAcrossLuns { src: Ppa, dst: Ppa },
    #[error("copyback is not enabled on this device")]
    CopybackUnsupported,
    #[error("read of invalid or unwritten page {0}")]
    InvalidPage(Ppa),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resource {
    Channel(u32),
    Lun(LunId),
}

/// One reserved interval, recorded when logging is enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reservation {
    pub resource: Resource,
    pub start: u64,
    pub end: u64,
    pub op: FlashOp,
}

#[derive(Clone, Copy, Debug, Default)]
struct LunState {
    busy_until: u64,
    // Start of the cell phase when the most recent command was a program.
    program_cell_start: Option<u64>,
}

struct Plan {
    channel: Vec<(u64, u64)>,
    lun_start: u64,
    cell: Option<(u64, u64)>,
    complete: u64,
}

pub struct FlashArray {
    geometry: Geometry,
    timing: TimingProfile,
    interleaving: Interleaving,
    blocks: Vec<BlockRecord>,
    tags: Vec<u64>,
    channels: Vec<Timeline>,
    luns: Vec<LunState>,
    free_blocks: Vec<u32>,
    free_pages: Vec<u64>,
    log: Option<Vec<Reservation>>,
}

impl FlashArray {
    pub fn new(geometry: Geometry, timing: TimingProfile, interleaving: Interleaving) -> Self {
        let luns = geometry.total_luns() as usize;
        FlashArray {
            geometry,
            timing,
            interleaving,
            blocks: vec![BlockRecord::new(geometry.pages_per_block); geometry.total_blocks()],
            tags: vec![0; geometry.total_pages() as usize],
            channels: vec![Timeline::default(); geometry.channels as usize],
            luns: vec![LunState::default(); luns],
            free_blocks: vec![geometry.blocks_per_lun; luns],
            free_pages: vec![geometry.blocks_per_lun as u64 * geometry.pages_per_block as u64; luns],
            log: None,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn timing(&self) -> &TimingProfile {
        &self.timing
    }

    pub fn interleaving(&self) -> Interleaving {
        self.interleaving
    }

    /// Starts recording every reserved interval.
    pub fn enable_log(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn reservations(&self) -> &[Reservation] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn block(&self, lun: LunId, block: u32) -> &BlockRecord {
        &self.blocks[lun.0 as usize * self.geometry.blocks_per_lun as usize + block as usize]
    }

    pub fn block_of(&self, ppa: Ppa) -> &BlockRecord {
        &self.blocks[self.geometry.block_index(ppa)]
    }

    pub fn blocks(&self) -> &[BlockRecord] {
        &self.blocks
    }

    pub fn is_valid(&self, ppa: Ppa) -> bool {
        self.block_of(ppa).is_valid(ppa.page)
    }

    pub fn free_blocks(&self, lun: LunId) -> u32 {
        self.free_blocks[lun.0 as usize]
    }

    /// Unprogrammed pages across the LUN's FREE and OPEN blocks.
    pub fn free_pages(&self, lun: LunId) -> u64 {
        self.free_pages[lun.0 as usize]
    }

    pub fn open_block(&mut self, lun: LunId, block: u32) {
        let idx = lun.0 as usize * self.geometry.blocks_per_lun as usize + block as usize;
        if self.blocks[idx].state == BlockState::Free {
            self.blocks[idx].state = BlockState::Open;
            self.free_blocks[lun.0 as usize] -= 1;
        }
    }

    /// Clears a page's valid bit; returns whether it was set.
    pub fn invalidate(&mut self, ppa: Ppa) -> bool {
        let idx = self.geometry.block_index(ppa);
        self.blocks[idx].clear_valid(ppa.page)
    }

    pub fn read_page_payload(&self, ppa: Ppa) -> Result<u64, FlashError> {
        if !self.geometry.contains(ppa) {
            return Err(FlashError::BadAddress(ppa));
        }
        if !self.is_valid(ppa) {
            return Err(FlashError::InvalidPage(ppa));
        }
        Ok(self.tags[self.geometry.page_index(ppa)])
    }

    /// Time at which the channel is next free to carry a command starting at `now`.
    pub fn channel_free_at(&self, channel: u32, now: VirtualTime) -> bool {
        self.channels[channel as usize].first_gap(now.0, self.timing.t_cmd) == now.0
    }

    /// First time at or after `now` at which the channel can carry a command phase.
    pub fn next_channel_gap(&self, channel: u32, now: VirtualTime) -> VirtualTime {
        VirtualTime(self.channels[channel as usize].first_gap(now.0, self.timing.t_cmd))
    }

    /// Earliest time at or after `earliest` at which `cmd` could start.
    pub fn earliest_start(&self, cmd: &FlashCommand, earliest: VirtualTime) -> VirtualTime {
        let target = cmd.target();
        let lun = self.geometry.lun_of(target);
        let channel = &self.channels[target.channel as usize];
        let state = self.luns[lun.0 as usize];
        let lun_ready = match (cmd, state.program_cell_start) {
            (FlashCommand::Program { .. }, Some(cell)) if self.timing.pipelined_program => cell,
            _ => state.busy_until,
        };
        let base = earliest.0.max(lun_ready);
        match self.interleaving {
            Interleaving::On => VirtualTime(channel.first_gap(base, self.timing.t_cmd)),
            Interleaving::Off => {
                let mut s = base;
                loop {
                    let len = self.held_span(cmd, s, state) - s;
                    let next = channel.first_gap(s, len);
                    if next == s {
                        return VirtualTime(s);
                    }
                    s = next;
                }
            }
        }
    }

    // End of the command when the channel is held throughout.
    fn held_span(&self, cmd: &FlashCommand, s: u64, state: LunState) -> u64 {
        let t = &self.timing;
        match *cmd {
            FlashCommand::Read(_) => s + t.t_cmd + t.t_read + t.t_data,
            FlashCommand::Program { at, .. } => (s + t.t_cmd + t.t_data).max(state.busy_until) + t.t_prog(at.page),
            FlashCommand::Erase(_) => s + t.t_cmd + t.t_erase,
            FlashCommand::Copyback { dst, .. } => s + t.t_cmd + t.t_read + t.t_prog(dst.page),
        }
    }

    fn plan(&self, cmd: &FlashCommand, s: u64) -> Plan {
        let t = &self.timing;
        let target = cmd.target();
        let state = self.luns[self.geometry.lun_of(target).0 as usize];
        if self.interleaving == Interleaving::Off {
            let complete = self.held_span(cmd, s, state);
            let cell = match *cmd {
                FlashCommand::Program { at, .. } => Some((complete - t.t_prog(at.page), complete)),
                _ => None,
            };
            return Plan { channel: vec![(s, complete)], lun_start: s, cell, complete };
        }
        let channel = &self.channels[target.channel as usize];
        let cmd_phase = (s, s + t.t_cmd);
        match *cmd {
            FlashCommand::Read(_) => {
                let out = channel.first_gap(s + t.t_cmd + t.t_read, t.t_data);
                Plan {
                    channel: vec![cmd_phase, (out, out + t.t_data)],
                    lun_start: s,
                    cell: None,
                    complete: out + t.t_data,
                }
            }
            FlashCommand::Program { at, .. } => {
                let data_in = channel.first_gap(s + t.t_cmd, t.t_data);
                let cell_start = (data_in + t.t_data).max(state.busy_until);
                let complete = cell_start + t.t_prog(at.page);
                Plan {
                    channel: vec![cmd_phase, (data_in, data_in + t.t_data)],
                    lun_start: s,
                    cell: Some((cell_start, complete)),
                    complete,
                }
            }
            FlashCommand::Erase(_) => {
                Plan { channel: vec![cmd_phase], lun_start: s, cell: None, complete: s + t.t_cmd + t.t_erase }
            }
            FlashCommand::Copyback { dst, .. } => Plan {
                channel: vec![cmd_phase],
                lun_start: s,
                cell: None,
                complete: s + t.t_cmd + t.t_read + t.t_prog(dst.page),
            },
        }
    }

    fn check(&self, cmd: &FlashCommand) -> Result<(), FlashError> {
        let g = &self.geometry;
        match *cmd {
            FlashCommand::Read(p) => {
                if !g.contains(p) {
                    return Err(FlashError::BadAddress(p));
                }
                if !self.is_valid(p) {
                    return Err(FlashError::InvalidPage(p));
                }
            }
            FlashCommand::Program { at, .. } => self.check_program(at)?,
            FlashCommand::Erase(p) => {
                if !g.contains(p.with_page(0)) {
                    return Err(FlashError::BadAddress(p));
                }
                let valid = self.block_of(p).valid_count;
                if valid > 0 {
                    return Err(FlashError::EraseWithValidPages { block: p.with_page(0), valid });
                }
            }
            FlashCommand::Copyback { src, dst } => {
                if !self.timing.copyback {
                    return Err(FlashError::CopybackUnsupported);
                }
                if !g.contains(src) {
                    return Err(FlashError::BadAddress(src));
                }
                if g.lun_of(src) != g.lun_of(dst) {
                    return Err(FlashError::CopybackAcrossLuns { src, dst });
                }
                if !self.is_valid(src) {
                    return Err(FlashError::InvalidPage(src));
                }
                self.check_program(dst)?;
            }
        }
        Ok(())
    }

    fn check_program(&self, at: Ppa) -> Result<(), FlashError> {
        if !self.geometry.contains(at) {
            return Err(FlashError::BadAddress(at));
        }
        let block = self.block_of(at);
        if block.state == BlockState::Full || block.write_ptr != at.page {
            return Err(FlashError::OutOfOrderProgram { at, write_ptr: block.write_ptr });
        }
        Ok(())
    }

    /// Reserves `cmd` at its earliest feasible start and applies its effects.
    pub fn execute(&mut self, cmd: FlashCommand, earliest: VirtualTime) -> Result<CommandTiming, FlashError> {
        self.check(&cmd)?;
        let start = self.earliest_start(&cmd, earliest).0;
        let plan = self.plan(&cmd, start);
        let target = cmd.target();
        let lun = self.geometry.lun_of(target);
        let op = cmd.op();

        let channel = &mut self.channels[target.channel as usize];
        channel.prune(earliest.0);
        let mut channel_busy = 0;
        for &(a, b) in &plan.channel {
            channel.reserve(a, b);
            channel_busy += b - a;
        }
        let state = &mut self.luns[lun.0 as usize];
        state.busy_until = plan.complete;
        state.program_cell_start = plan.cell.map(|(c, _)| c);
        if let Some(log) = self.log.as_mut() {
            for &(a, b) in &plan.channel {
                log.push(Reservation { resource: Resource::Channel(target.channel), start: a, end: b, op });
            }
            log.push(Reservation { resource: Resource::Lun(lun), start: plan.lun_start, end: plan.complete, op });
        }

        match cmd {
            FlashCommand::Read(_) => {}
            FlashCommand::Program { at, tag } => self.program(at, tag),
            FlashCommand::Copyback { src, dst } => {
                let tag = self.tags[self.geometry.page_index(src)];
                self.program(dst, tag);
            }
            FlashCommand::Erase(p) => {
                let idx = self.geometry.block_index(p);
                let ppb = self.geometry.pages_per_block;
                let block = &mut self.blocks[idx];
                if block.state != BlockState::Free {
                    self.free_blocks[lun.0 as usize] += 1;
                }
                self.free_pages[lun.0 as usize] += block.write_ptr as u64;
                *block = BlockRecord {
                    erase_count: block.erase_count + 1,
                    last_erase_time: VirtualTime(plan.complete),
                    ..BlockRecord::new(ppb)
                };
            }
        }
        Ok(CommandTiming { start: VirtualTime(start), complete: VirtualTime(plan.complete), channel_busy })
    }

    fn program(&mut self, at: Ppa, tag: u64) {
        let lun = self.geometry.lun_of(at).0 as usize;
        let idx = self.geometry.block_index(at);
        let ppb = self.geometry.pages_per_block;
        let block = &mut self.blocks[idx];
        if block.state == BlockState::Free {
            block.state = BlockState::Open;
            self.free_blocks[lun] -= 1;
        }
        block.set_valid(at.page);
        block.write_ptr += 1;
        if block.write_ptr == ppb {
            block.state = BlockState::Full;
        }
        self.free_pages[lun] -= 1;
        self.tags[self.geometry.page_index(at)] = tag;
    }

    /// Reserves a bare command phase on a channel (used for TRIM).
    pub fn reserve_command_slot(&mut self, channel: u32, earliest: VirtualTime) -> CommandTiming {
        let t_cmd = self.timing.t_cmd;
        let timeline = &mut self.channels[channel as usize];
        timeline.prune(earliest.0);
        let start = timeline.first_gap(earliest.0, t_cmd);
        timeline.reserve(start, start + t_cmd);
        if let Some(log) = self.log.as_mut() {
            log.push(Reservation {
                resource: Resource::Channel(channel),
                start,
                end: start + t_cmd,
                op: FlashOp::Read,
            });
        }
        CommandTiming { start: VirtualTime(start), complete: VirtualTime(start + t_cmd), channel_busy: t_cmd }
    }

    /// Whether the LUN could start a non-pipelined command at `now`.
    pub fn lun_idle_at(&self, lun: LunId, now: VirtualTime) -> bool {
        self.luns[lun.0 as usize].busy_until <= now.0
    }
}
