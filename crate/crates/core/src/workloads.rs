//! Workload threads: the init/call_back lifecycle and built-in generators.
//!
//! A thread submits messages through its [`ThreadCtx`]. Generators here are
//! resubmission-driven: they keep up to `window` IOs outstanding and issue
//! the next one from `call_back`.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::VirtualTime;
use crate::io::{IdAllocator, IoId, IoKind, IoRequest, Source, ThreadId};
use crate::messages::Message;
use crate::temperature::Temperature;

pub const DEFAULT_WINDOW: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("thread {0} submitted after finishing")]
    SubmitAfterDone(u32),
    #[error("thread {thread}: lpn {lpn} outside the logical space of {limit} pages")]
    OutOfRange { thread: u32, lpn: u64, limit: u64 },
}

/// Something a thread hands to the OS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outgoing {
    Io(IoRequest),
    Tag(Message),
}

/// Mixes a run seed and a thread id into an independent stream seed.
pub fn thread_seed(seed: u64, thread: u32) -> u64 {
    fn splitmix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^ (x >> 31)
    }
    splitmix(seed ^ splitmix(thread as u64 + 1))
}

/// Per-thread state owned by the driver and lent to the thread on each call.
pub struct ThreadState {
    pub id: ThreadId,
    pub rng: ChaCha8Rng,
    pub in_flight: usize,
    pub finished: bool,
    pub measured: bool,
    next_tag: u64,
}

impl ThreadState {
    pub fn new(id: ThreadId, seed: u64, measured: bool) -> Self {
        ThreadState {
            id,
            rng: ChaCha8Rng::seed_from_u64(thread_seed(seed, id.0)),
            in_flight: 0,
            finished: false,
            measured,
            next_tag: 0,
        }
    }
}

pub struct ThreadCtx<'a> {
    pub now: VirtualTime,
    pub logical_pages: u64,
    pub state: &'a mut ThreadState,
    ids: &'a mut IdAllocator,
    outbox: &'a mut Vec<Outgoing>,
    error: Option<WorkloadError>,
}

impl<'a> ThreadCtx<'a> {
    pub fn new(
        now: VirtualTime,
        logical_pages: u64,
        state: &'a mut ThreadState,
        ids: &'a mut IdAllocator,
        outbox: &'a mut Vec<Outgoing>,
    ) -> Self {
        ThreadCtx { now, logical_pages, state, ids, outbox, error: None }
    }

    pub fn thread(&self) -> ThreadId {
        self.state.id
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.state.rng
    }

    /// IOs submitted by this thread that have not completed yet.
    pub fn in_flight(&self) -> usize {
        self.state.in_flight
    }

    pub fn finish(&mut self) {
        self.state.finished = true;
    }

    pub fn take_error(&mut self) -> Option<WorkloadError> {
        self.error.take()
    }

    /// Submits a message; IO-carrying messages return the new IO's id.
    pub fn send(&mut self, message: Message) -> Option<IoId> {
        let thread = self.state.id;
        if self.state.finished {
            self.error.get_or_insert(WorkloadError::SubmitAfterDone(thread.0));
            return None;
        }
        let (kind, lpn, priority, deadline) = match message {
            Message::SubmitIo { kind, lpn, priority, deadline } => (kind, lpn, priority, deadline),
            Message::Trim { lpn } => (IoKind::Trim, lpn, 0, None),
            tag => {
                self.outbox.push(Outgoing::Tag(tag));
                return None;
            }
        };
        if lpn >= self.logical_pages {
            self.error.get_or_insert(WorkloadError::OutOfRange { thread: thread.0, lpn, limit: self.logical_pages });
            return None;
        }
        let id = self.ids.next_id();
        let mut io = IoRequest::new(id, Source::App(thread), kind, self.now).with_lpn(lpn);
        io.priority = priority;
        io.deadline = deadline.map(|d| self.now + d);
        io.measured = self.state.measured;
        if kind == IoKind::Write {
            io.payload = Some(((thread.0 as u64) << 40) | self.state.next_tag);
            self.state.next_tag += 1;
        }
        self.state.in_flight += 1;
        self.outbox.push(Outgoing::Io(io));
        Some(id)
    }

    pub fn read(&mut self, lpn: u64) -> Option<IoId> {
        self.send(Message::SubmitIo { kind: IoKind::Read, lpn, priority: 0, deadline: None })
    }

    pub fn write(&mut self, lpn: u64) -> Option<IoId> {
        self.send(Message::SubmitIo { kind: IoKind::Write, lpn, priority: 0, deadline: None })
    }
}

/// A workload thread.
pub trait Workload: Send {
    fn init(&mut self, ctx: &mut ThreadCtx);
    fn call_back(&mut self, ctx: &mut ThreadCtx, io: &IoRequest);
}

/// What a pattern did when asked for more work.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Issued,
    /// Nothing to issue until something completes.
    Wait,
    Done,
}

/// An IO sequence driven by a window of outstanding IOs.
pub trait Pattern: Send {
    fn start(&mut self, _ctx: &mut ThreadCtx) {}
    fn next(&mut self, ctx: &mut ThreadCtx) -> Step;
    fn completed(&mut self, _ctx: &mut ThreadCtx, _io: &IoRequest) {}
}

pub struct Windowed<P> {
    pub pattern: P,
    pub window: usize,
}

impl<P: Pattern> Windowed<P> {
    pub fn new(pattern: P, window: usize) -> Self {
        Windowed { pattern, window: window.max(1) }
    }

    fn fill(&mut self, ctx: &mut ThreadCtx) {
        while !ctx.state.finished && ctx.in_flight() < self.window {
            match self.pattern.next(ctx) {
                Step::Issued => {}
                Step::Wait => break,
                Step::Done => ctx.finish(),
            }
        }
    }
}

impl<P: Pattern> Workload for Windowed<P> {
    fn init(&mut self, ctx: &mut ThreadCtx) {
        self.pattern.start(ctx);
        self.fill(ctx);
    }

    fn call_back(&mut self, ctx: &mut ThreadCtx, io: &IoRequest) {
        self.pattern.completed(ctx, io);
        self.fill(ctx);
    }
}

/// Writes `[start, start+count)` in order, `passes` times.
pub struct SequentialWriter {
    pub start: u64,
    pub count: u64,
    pub passes: u64,
    issued: u64,
}

impl SequentialWriter {
    pub fn new(start: u64, count: u64, passes: u64) -> Self {
        SequentialWriter { start, count, passes, issued: 0 }
    }
}

impl Pattern for SequentialWriter {
    fn next(&mut self, ctx: &mut ThreadCtx) -> Step {
        if self.count == 0 || self.issued == self.count * self.passes {
            return Step::Done;
        }
        ctx.write(self.start + self.issued % self.count);
        self.issued += 1;
        Step::Issued
    }
}

/// Reads `[start, start+count)` once, in order.
pub struct SequentialReader {
    pub start: u64,
    pub count: u64,
    issued: u64,
}

impl SequentialReader {
    pub fn new(start: u64, count: u64) -> Self {
        SequentialReader { start, count, issued: 0 }
    }
}

impl Pattern for SequentialReader {
    fn next(&mut self, ctx: &mut ThreadCtx) -> Step {
        if self.issued == self.count {
            return Step::Done;
        }
        ctx.read(self.start + self.issued);
        self.issued += 1;
        Step::Issued
    }
}

/// Writes every page of `[start, start+count)` exactly once in a random order.
pub struct PermutationWriter {
    pub start: u64,
    pub count: u64,
    order: Vec<u64>,
}

impl PermutationWriter {
    pub fn new(start: u64, count: u64) -> Self {
        PermutationWriter { start, count, order: Vec::new() }
    }
}

impl Pattern for PermutationWriter {
    fn start(&mut self, ctx: &mut ThreadCtx) {
        self.order = (self.start..self.start + self.count).collect();
        self.order.shuffle(ctx.rng());
        self.order.reverse();
    }

    fn next(&mut self, ctx: &mut ThreadCtx) -> Step {
        match self.order.pop() {
            Some(lpn) => {
                ctx.write(lpn);
                Step::Issued
            }
            None => Step::Done,
        }
    }
}

/// Hot/cold skew: `hot_fraction` of the range receives `hot_write_prob` of the writes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Skew {
    pub hot_fraction: f64,
    pub hot_write_prob: f64,
}

impl Skew {
    fn hot_pages(&self, count: u64) -> u64 {
        ((count as f64 * self.hot_fraction).round() as u64).clamp(1, count.saturating_sub(1).max(1))
    }

    fn pick(&self, rng: &mut ChaCha8Rng, count: u64) -> u64 {
        let hot = self.hot_pages(count);
        if hot >= count || rng.gen_bool(self.hot_write_prob) {
            rng.gen_range(0..hot)
        } else {
            rng.gen_range(hot..count)
        }
    }
}

/// Uniform (or skewed) random overwrites of `[start, start+count)`.
pub struct RandomWriter {
    pub start: u64,
    pub count: u64,
    pub ios: u64,
    pub skew: Option<Skew>,
    /// Announce the skew's hot and cold ranges with temperature tags.
    pub hint_temperature: bool,
    issued: u64,
}

impl RandomWriter {
    pub fn new(start: u64, count: u64, ios: u64) -> Self {
        RandomWriter { start, count, ios, skew: None, hint_temperature: false, issued: 0 }
    }
}

impl Pattern for RandomWriter {
    fn start(&mut self, ctx: &mut ThreadCtx) {
        if let (true, Some(skew)) = (self.hint_temperature, self.skew) {
            let hot = skew.hot_pages(self.count);
            let (s, e) = (self.start, self.start + self.count - 1);
            ctx.send(Message::TagTemperature { start: s, end: s + hot - 1, temperature: Temperature::Hot });
            if hot < self.count {
                ctx.send(Message::TagTemperature { start: s + hot, end: e, temperature: Temperature::Cold });
            }
        }
    }

    fn next(&mut self, ctx: &mut ThreadCtx) -> Step {
        if self.issued == self.ios {
            return Step::Done;
        }
        let count = self.count;
        let offset = match self.skew {
            Some(skew) => skew.pick(ctx.rng(), count),
            None => ctx.rng().gen_range(0..count),
        };
        ctx.write(self.start + offset);
        self.issued += 1;
        Step::Issued
    }
}

/// Uniform random reads, optionally prioritized or with a relative deadline.
pub struct RandomReader {
    pub start: u64,
    pub count: u64,
    pub ios: u64,
    /// Sent as a priority tag right after each submission when non-zero.
    pub tag_priority: i32,
    pub deadline: Option<u64>,
    issued: u64,
}

impl RandomReader {
    pub fn new(start: u64, count: u64, ios: u64) -> Self {
        RandomReader { start, count, ios, tag_priority: 0, deadline: None, issued: 0 }
    }
}

impl Pattern for RandomReader {
    fn next(&mut self, ctx: &mut ThreadCtx) -> Step {
        if self.issued == self.ios {
            return Step::Done;
        }
        let lpn = self.start + ctx.rng().gen_range(0..self.count);
        let id = ctx.send(Message::SubmitIo { kind: IoKind::Read, lpn, priority: 0, deadline: self.deadline });
        if let (Some(id), true) = (id, self.tag_priority != 0) {
            ctx.send(Message::TagPriority { io: id, priority: self.tag_priority });
        }
        self.issued += 1;
        Step::Issued
    }
}

/// Two-phase Grace hash join over relations R and S.
///
/// Phase 1 scans R then S and writes each scanned page into its hash
/// partition. After every partition write has completed, phase 2 reads each
/// partition's R part followed by its S part. Layout from `start`: R, S, then
/// the partitions, each holding its R pages followed by its S pages.
pub struct GraceHashJoin {
    pub start: u64,
    pub r_pages: u64,
    pub s_pages: u64,
    pub partitions: u64,
    pub locality_tags: bool,
    /// Partition slot for each scanned page.
    target: Vec<u64>,
    /// `[first, end)` of each partition.
    extents: Vec<(u64, u64)>,
    scanned: u64,
    writes: VecDeque<u64>,
    writes_done: u64,
    probe: Vec<u64>,
}

impl GraceHashJoin {
    pub fn new(start: u64, r_pages: u64, s_pages: u64, partitions: u64) -> Self {
        let partitions = partitions.max(1);
        let total = r_pages + s_pages;
        let part = |page: u64| {
            let mut h = page.wrapping_mul(0x9e37_79b9_7f4a_7c15);
            h ^= h >> 29;
            h % partitions
        };
        // Within a partition, R pages come first because R is scanned first.
        let mut sizes = vec![0u64; partitions as usize];
        for page in 0..total {
            sizes[part(page) as usize] += 1;
        }
        let mut extents = Vec::new();
        let mut base = start + total;
        for size in &sizes {
            extents.push((base, base + size));
            base += size;
        }
        let mut fill: Vec<u64> = extents.iter().map(|e| e.0).collect();
        let target = (0..total)
            .map(|page| {
                let p = part(page) as usize;
                fill[p] += 1;
                fill[p] - 1
            })
            .collect();
        let mut probe: Vec<u64> = extents.iter().flat_map(|&(a, b)| a..b).collect();
        probe.reverse();
        GraceHashJoin {
            start,
            r_pages,
            s_pages,
            partitions,
            locality_tags: false,
            target,
            extents,
            scanned: 0,
            writes: VecDeque::new(),
            writes_done: 0,
            probe,
        }
    }

    /// Logical pages touched: R, S and the partition area.
    pub fn footprint(&self) -> u64 {
        2 * (self.r_pages + self.s_pages)
    }

    pub fn partition_extents(&self) -> &[(u64, u64)] {
        &self.extents
    }

    fn total(&self) -> u64 {
        self.r_pages + self.s_pages
    }
}

impl Pattern for GraceHashJoin {
    fn start(&mut self, ctx: &mut ThreadCtx) {
        if self.locality_tags {
            for (group, &(a, b)) in self.extents.iter().enumerate() {
                if a < b {
                    ctx.send(Message::TagLocality { group: group as u32, lpns: (a..b).collect() });
                }
            }
        }
    }

    fn next(&mut self, ctx: &mut ThreadCtx) -> Step {
        if let Some(lpn) = self.writes.pop_front() {
            ctx.write(lpn);
            return Step::Issued;
        }
        if self.scanned < self.total() {
            ctx.read(self.start + self.scanned);
            self.scanned += 1;
            return Step::Issued;
        }
        if self.writes_done < self.total() {
            return Step::Wait;
        }
        match self.probe.pop() {
            Some(lpn) => {
                ctx.read(lpn);
                Step::Issued
            }
            None => Step::Done,
        }
    }

    fn completed(&mut self, _ctx: &mut ThreadCtx, io: &IoRequest) {
        let lpn = io.lpn.expect("join IOs carry an lpn");
        match io.kind {
            IoKind::Read if lpn < self.start + self.total() => {
                self.writes.push_back(self.target[(lpn - self.start) as usize]);
            }
            IoKind::Write => self.writes_done += 1,
            _ => {}
        }
    }
}

/// File-system-like extent churn: allocate, write and free extents in a 2:6:2 mix.
pub struct ExtentAllocator {
    pub start: u64,
    pub extent_pages: u64,
    pub ops: u64,
    free: Vec<u64>,
    allocated: Vec<u64>,
    trims: VecDeque<u64>,
    done_ops: u64,
}

impl ExtentAllocator {
    pub fn new(start: u64, count: u64, extent_pages: u64, ops: u64) -> Self {
        let extent_pages = extent_pages.max(1);
        let extents = count / extent_pages;
        ExtentAllocator {
            start,
            extent_pages,
            ops,
            free: (0..extents).rev().collect(),
            allocated: Vec::new(),
            trims: VecDeque::new(),
            done_ops: 0,
        }
    }

    fn first_page(&self, extent: u64) -> u64 {
        self.start + extent * self.extent_pages
    }
}

impl Pattern for ExtentAllocator {
    fn next(&mut self, ctx: &mut ThreadCtx) -> Step {
        if let Some(lpn) = self.trims.pop_front() {
            ctx.send(Message::Trim { lpn });
            return Step::Issued;
        }
        if self.done_ops == self.ops || (self.free.is_empty() && self.allocated.is_empty()) {
            return Step::Done;
        }
        self.done_ops += 1;
        let roll = ctx.rng().gen_range(0..10);
        let op = match roll {
            0..=1 if !self.free.is_empty() => 0,
            8..=9 if !self.allocated.is_empty() => 2,
            _ if self.allocated.is_empty() => 0,
            _ => 1,
        };
        match op {
            0 => {
                let i = ctx.rng().gen_range(0..self.free.len());
                let extent = self.free.swap_remove(i);
                self.allocated.push(extent);
                ctx.write(self.first_page(extent));
            }
            1 => {
                let extent = self.allocated[ctx.rng().gen_range(0..self.allocated.len())];
                let page = ctx.rng().gen_range(0..self.extent_pages);
                ctx.write(self.first_page(extent) + page);
            }
            _ => {
                let i = ctx.rng().gen_range(0..self.allocated.len());
                let extent = self.allocated.swap_remove(i);
                self.free.push(extent);
                let first = self.first_page(extent);
                self.trims.extend(first + 1..first + self.extent_pages);
                ctx.send(Message::Trim { lpn: first });
            }
        }
        Step::Issued
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PreconditionMode {
    None,
    Sequential,
    Random,
    SeqThenRandom,
}

/// Preparation threads covering `[0, logical_pages)`; each depends on the previous one.
pub fn precondition(mode: PreconditionMode, logical_pages: u64, window: usize) -> Vec<(String, Box<dyn Workload>)> {
    let seq = || -> Box<dyn Workload> { Box::new(Windowed::new(SequentialWriter::new(0, logical_pages, 1), window)) };
    let rnd = || -> Box<dyn Workload> { Box::new(Windowed::new(PermutationWriter::new(0, logical_pages), window)) };
    match mode {
        PreconditionMode::None => vec![],
        PreconditionMode::Sequential => vec![("precondition_seq".into(), seq())],
        PreconditionMode::Random => vec![("precondition_random".into(), rnd())],
        PreconditionMode::SeqThenRandom => {
            vec![("precondition_seq".into(), seq()), ("precondition_random".into(), rnd())]
        }
    }
}
