//! One simulation instance: the controller (mapping, GC, wear leveling and
//! command issue), the device scheduler, the host OS and the workload threads,
//! all driven by a single event queue.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use rustc_hash::FxHashMap;

use log::{debug, info};
use thiserror::Error;

use crate::engine::{Engine, EngineError, EventId, VirtualTime};
use crate::gc_wl::{check_gc, GcConfig, GcDecision, RelocationPlan, WearLeveler};
use crate::hardware::{
    FlashArray, FlashCommand, FlashError, Geometry, Interleaving, LunId, Ppa, RamBudget, TimingProfile,
};
use crate::host_os::{Hint, HostError, HostOs, OsConfig};
use crate::io::{IdAllocator, IoId, IoKind, IoRequest, IoStatus, Source};
use crate::mapping::{Ftl, MappingError, MappingScheme, Owner, Placement, SideIo, Writer};
use crate::scheduler::{Executor, Scheduler, SchedulerConfig, StartOutcome};
use crate::temperature::{DetectorConfig, Temperature, TemperatureDetector};
use crate::workloads::{Outgoing, ThreadCtx, ThreadState, Workload, WorkloadError};

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub geometry: Geometry,
    pub timing: TimingProfile,
    pub interleaving: Interleaving,
    pub ram_bytes: u64,
    pub bbram_bytes: u64,
    pub overprovision: f64,
    pub scheme: MappingScheme,
    pub gc: GcConfig,
    pub wl_enabled: bool,
    pub staleness_factor: u64,
    /// Completed application writes between static wear-leveling scans.
    pub wl_scan_interval: u64,
    pub detector_enabled: bool,
    pub detector: DetectorConfig,
    pub scheduler: SchedulerConfig,
    /// Relative deadlines stamped on application reads and writes that carry none.
    pub read_deadline: Option<u64>,
    pub write_deadline: Option<u64>,
    pub os: OsConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        let geometry = Geometry::default();
        SimConfig {
            geometry,
            timing: TimingProfile::default(),
            interleaving: Interleaving::On,
            ram_bytes: 64 << 20,
            bbram_bytes: 0,
            overprovision: 0.10,
            scheme: MappingScheme::PageMap,
            gc: GcConfig::default(),
            wl_enabled: true,
            staleness_factor: 4,
            wl_scan_interval: 1024,
            detector_enabled: true,
            detector: DetectorConfig::default(),
            scheduler: SchedulerConfig::default(),
            read_deadline: None,
            write_deadline: None,
            os: OsConfig {
                queue_depth: 2 * geometry.total_luns() as usize,
                policy: crate::host_os::OsPolicy::Fifo,
                open_interface: true,
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Flash(#[from] FlashError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("simulation stalled at {now} with {pending} IOs outstanding (out of space or a dependency cycle)")]
    Stall { now: VirtualTime, pending: usize },
    #[error("garbage collection stopped reclaiming space at {now}: {erases} erases without a host IO completing")]
    Thrashing { now: VirtualTime, erases: u64 },
    #[error("{0}")]
    Setup(String),
}

/// A workload thread and how it fits into the run.
pub struct ThreadSpec {
    pub name: String,
    pub workload: Box<dyn Workload>,
    pub depends_on: Vec<String>,
    pub measured: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ThreadPhase {
    Waiting,
    Running,
    Done,
}

struct ThreadSlot {
    name: String,
    workload: Box<dyn Workload>,
    state: ThreadState,
    depends_on: Vec<usize>,
    phase: ThreadPhase,
}

#[derive(Clone, Copy, Debug)]
enum Event {
    Complete(IoId),
    Wake,
    StartThread(usize),
}

/// State of one page move inside a GC or wear-leveling job.
#[derive(Clone, Copy, Debug)]
struct Move {
    owner: Owner,
    payload: u64,
    skipped: bool,
}

/// Controller state touched while starting IOs.
struct Controller {
    flash: FlashArray,
    ftl: Ftl,
    detector: Option<TemperatureDetector>,
    hints: Vec<(u64, u64, Temperature)>,
    locality: FxHashMap<u64, u32>,
    /// Keyed by the migration READ (or the COPYBACK) id.
    moves: FxHashMap<IoId, Move>,
    /// Last erase time of the block an in-flight ERASE cleared.
    erase_prev: FxHashMap<IoId, VirtualTime>,
    ids: IdAllocator,
    spawned: Vec<IoRequest>,
    error: Option<SimError>,
    /// Program start probes per LUN, valid until the next issued command.
    probes: Vec<Cell<Option<VirtualTime>>>,
    /// Placements that found no usable LUN, with their retry time, valid as long as the probes.
    stalled: Vec<(PlacementKey, Option<VirtualTime>)>,
}

type PlacementKey = (Temperature, Option<u32>, Writer, Option<LunId>);

impl Controller {
    fn classify(&self, lpn: u64) -> Temperature {
        if let Some(&(_, _, t)) = self.hints.iter().rev().find(|(s, e, _)| (*s..=*e).contains(&lpn)) {
            return t;
        }
        match &self.detector {
            Some(d) => d.classify(lpn),
            None => Temperature::Cold,
        }
    }

    fn fail(&mut self, err: impl Into<SimError>) -> StartOutcome {
        self.error.get_or_insert(err.into());
        StartOutcome::Blocked { retry_at: None }
    }

    /// Earliest start of `cmd`, memoized per LUN and command shape until the next issued command.
    fn probe(&self, cmd: &FlashCommand, now: VirtualTime) -> VirtualTime {
        if self.flash.interleaving() == Interleaving::Off {
            return self.flash.earliest_start(cmd, now);
        }
        let lun = self.flash.geometry().lun_of(cmd.target()).0 as usize;
        let slot = &self.probes[2 * lun + usize::from(matches!(cmd, FlashCommand::Program { .. }))];
        if let Some(t) = slot.get() {
            return t;
        }
        let t = self.flash.earliest_start(cmd, now);
        slot.set(Some(t));
        t
    }

    fn program_probe(&self, lun: LunId, now: VirtualTime) -> VirtualTime {
        let at = self.flash.geometry().ppa_at(lun, 0, 0);
        self.probe(&FlashCommand::Program { at, tag: 0 }, now)
    }

    fn forget_probes(&mut self) {
        self.probes.iter().for_each(|p| p.set(None));
        self.stalled.clear();
    }

    /// Issues `cmd` if it can start at `now`.
    fn issue(&mut self, cmd: FlashCommand, now: VirtualTime) -> Result<Option<VirtualTime>, StartOutcome> {
        let start = self.probe(&cmd, now);
        if start > now {
            return Err(StartOutcome::Blocked { retry_at: Some(start) });
        }
        self.forget_probes();
        match self.flash.execute(cmd, now) {
            Ok(t) => {
                debug_assert_eq!(t.start, now);
                Ok(Some(t.complete))
            }
            Err(e) => Err(self.fail(e)),
        }
    }

    fn side_requests(&mut self, side: Vec<SideIo>, now: VirtualTime) -> Vec<IoId> {
        side.into_iter()
            .map(|s| {
                let (kind, tpage) = match s {
                    SideIo::ReadTranslation(t) => (IoKind::Read, t),
                    SideIo::WriteTranslation(t) => (IoKind::Write, t),
                };
                let mut io = IoRequest::new(self.ids.next_id(), Source::Mapping, kind, now);
                io.tpage = Some(tpage);
                let id = io.id;
                self.spawned.push(io);
                id
            })
            .collect()
    }

    /// Picks and commits a write destination, or reports why none is usable now.
    fn place(
        &mut self,
        temperature: Temperature,
        group: Option<u32>,
        writer: Writer,
        pinned: Option<LunId>,
        now: VirtualTime,
    ) -> Result<Placement, StartOutcome> {
        let key = (temperature, group, writer, pinned);
        if let Some(&(_, retry_at)) = self.stalled.iter().find(|(k, _)| *k == key) {
            return Err(StartOutcome::Blocked { retry_at });
        }
        let probe = |lun: LunId| self.program_probe(lun, now);
        let chosen = self.ftl.choose_write_location(&self.flash, temperature, group, writer, |lun| {
            pinned.is_none_or(|p| p == lun) && probe(lun) == now
        });
        match chosen {
            Ok(Some(p)) => {
                self.ftl.commit_placement(&mut self.flash, &p);
                Ok(p)
            }
            Ok(None) => {
                let retry = self
                    .flash
                    .geometry()
                    .luns()
                    .filter(|&l| pinned.is_none_or(|p| p == l))
                    .map(|l| self.program_probe(l, now))
                    .filter(|&t| t > now)
                    .min();
                self.stalled.push((key, retry));
                Err(StartOutcome::Blocked { retry_at: retry })
            }
            Err(e) => Err(self.fail(e)),
        }
    }

    fn start_app(&mut self, io: &mut IoRequest, now: VirtualTime) -> StartOutcome {
        let lpn = io.lpn.expect("application IOs carry an lpn");
        match io.kind {
            IoKind::Read => {
                let Some(ppa) = self.ftl.lookup(lpn) else {
                    io.status = IoStatus::Failed;
                    return StartOutcome::Finished;
                };
                match self.issue(FlashCommand::Read(ppa), now) {
                    Ok(Some(complete)) => {
                        io.ppa = Some(ppa);
                        io.payload = self.flash.read_page_payload(ppa).ok();
                        StartOutcome::Started { complete }
                    }
                    Ok(None) => unreachable!(),
                    Err(blocked) => blocked,
                }
            }
            IoKind::Write => {
                let temperature = self.classify(lpn);
                let group = self.locality.get(&lpn).copied();
                let p = match self.place(temperature, group, Writer::Host, None, now) {
                    Ok(p) => p,
                    Err(blocked) => return blocked,
                };
                let tag = io.payload.expect("writes carry a payload tag");
                match self.issue(FlashCommand::Program { at: p.ppa, tag }, now) {
                    Ok(Some(complete)) => {
                        io.ppa = Some(p.ppa);
                        StartOutcome::Started { complete }
                    }
                    Ok(None) => unreachable!(),
                    Err(blocked) => blocked,
                }
            }
            IoKind::Trim => {
                let Some(old) = self.ftl.lookup(lpn) else {
                    io.status = IoStatus::Ok;
                    return StartOutcome::Finished;
                };
                let start = self.flash.next_channel_gap(old.channel, now);
                if start > now {
                    return StartOutcome::Blocked { retry_at: Some(start) };
                }
                self.forget_probes();
                let timing = self.flash.reserve_command_slot(old.channel, now);
                self.ftl.unmap(&mut self.flash, lpn, io.id.0);
                let side = match self.ftl.dftl().is_some() {
                    true => self.ftl.cache_access(lpn, true),
                    false => Vec::new(),
                };
                self.side_requests(side, now);
                io.ppa = Some(old);
                StartOutcome::Started { complete: timing.complete }
            }
            other => unreachable!("application {other} IO"),
        }
    }

    fn page_temperature(&self, owner: Owner, source: Source) -> Temperature {
        match (owner, source) {
            (Owner::Data(lpn), Source::Gc) => self.classify(lpn),
            _ => Temperature::Cold,
        }
    }

    fn start_migration(&mut self, io: &mut IoRequest, now: VirtualTime) -> StartOutcome {
        match io.kind {
            IoKind::Read => {
                let src = io.ppa.expect("migration read has a source page");
                let owner = self.ftl.owner(src);
                if owner == Owner::None || !self.flash.is_valid(src) {
                    self.moves.insert(io.id, Move { owner, payload: 0, skipped: true });
                    io.status = IoStatus::Skipped;
                    return StartOutcome::Finished;
                }
                match self.issue(FlashCommand::Read(src), now).map_err(busy) {
                    Ok(Some(complete)) => {
                        let payload = self.flash.read_page_payload(src).expect("valid page");
                        io.payload = Some(payload);
                        self.note_owner(io, owner);
                        self.moves.insert(io.id, Move { owner, payload, skipped: false });
                        StartOutcome::Started { complete }
                    }
                    Ok(None) => unreachable!(),
                    Err(blocked) => blocked,
                }
            }
            IoKind::Write => {
                let read = io.predecessors[0];
                let mv = self.moves[&read];
                let src = io.src_ppa.expect("migration write has a source page");
                if mv.skipped || !self.flash.is_valid(src) || self.ftl.owner(src) != mv.owner {
                    io.status = IoStatus::Skipped;
                    return StartOutcome::Finished;
                }
                if let Some(lun) = io.lun {
                    let start = self.program_probe(lun, now);
                    if start > now {
                        return StartOutcome::Busy { retry_at: start };
                    }
                }
                let temperature = self.page_temperature(mv.owner, io.source);
                let p = match self.place(temperature, None, Writer::Relocation, io.lun, now) {
                    Ok(p) => p,
                    Err(blocked) => return blocked,
                };
                match self.issue(FlashCommand::Program { at: p.ppa, tag: mv.payload }, now) {
                    Ok(Some(complete)) => {
                        io.ppa = Some(p.ppa);
                        io.payload = Some(mv.payload);
                        self.note_owner(io, mv.owner);
                        StartOutcome::Started { complete }
                    }
                    Ok(None) => unreachable!(),
                    Err(blocked) => blocked,
                }
            }
            IoKind::Copyback => {
                let src = io.src_ppa.expect("copyback has a source page");
                let owner = self.ftl.owner(src);
                if owner == Owner::None || !self.flash.is_valid(src) {
                    io.status = IoStatus::Skipped;
                    return StartOutcome::Finished;
                }
                let lun = io.lun.expect("copyback is pinned to its LUN");
                let probe = self.probe(&FlashCommand::Copyback { src, dst: src }, now);
                if probe > now {
                    return StartOutcome::Busy { retry_at: probe };
                }
                let temperature = self.page_temperature(owner, io.source);
                let p = match self.place(temperature, None, Writer::Relocation, Some(lun), now) {
                    Ok(p) => p,
                    Err(blocked) => return blocked,
                };
                match self.issue(FlashCommand::Copyback { src, dst: p.ppa }, now) {
                    Ok(Some(complete)) => {
                        io.ppa = Some(p.ppa);
                        io.payload = self.flash.read_page_payload(src).ok();
                        self.note_owner(io, owner);
                        self.moves.insert(io.id, Move { owner, payload: io.payload.unwrap_or(0), skipped: false });
                        StartOutcome::Started { complete }
                    }
                    Ok(None) => unreachable!(),
                    Err(blocked) => blocked,
                }
            }
            IoKind::Erase => {
                let at = io.ppa.expect("erase has a block address");
                let prev = self.flash.block_of(at).last_erase_time;
                match self.issue(FlashCommand::Erase(at), now) {
                    Ok(Some(complete)) => {
                        self.erase_prev.insert(io.id, prev);
                        StartOutcome::Started { complete }
                    }
                    Ok(None) => unreachable!(),
                    Err(blocked) => blocked,
                }
            }
            other => unreachable!("migration {other} IO"),
        }
    }

    /// Records in the request what a moved page belongs to, for the trace.
    fn note_owner(&self, io: &mut IoRequest, owner: Owner) {
        match owner {
            Owner::Data(lpn) => io.lpn = Some(lpn),
            Owner::Translation(t) => io.tpage = Some(t),
            Owner::None => {}
        }
    }

    fn start_mapping(&mut self, io: &mut IoRequest, now: VirtualTime) -> StartOutcome {
        let tpage = io.tpage.expect("mapping IOs name a translation page");
        match io.kind {
            IoKind::Read => {
                let Some(ppa) = self.ftl.dftl().and_then(|d| d.gtd(tpage)) else {
                    io.status = IoStatus::Skipped;
                    return StartOutcome::Finished;
                };
                match self.issue(FlashCommand::Read(ppa), now) {
                    Ok(Some(complete)) => {
                        io.ppa = Some(ppa);
                        StartOutcome::Started { complete }
                    }
                    Ok(None) => unreachable!(),
                    Err(blocked) => blocked,
                }
            }
            IoKind::Write => {
                let p = match self.place(Temperature::Cold, None, Writer::Host, None, now) {
                    Ok(p) => p,
                    Err(blocked) => return blocked,
                };
                let tag = (1 << 63) | tpage as u64;
                match self.issue(FlashCommand::Program { at: p.ppa, tag }, now) {
                    Ok(Some(complete)) => {
                        io.ppa = Some(p.ppa);
                        io.payload = Some(tag);
                        StartOutcome::Started { complete }
                    }
                    Ok(None) => unreachable!(),
                    Err(blocked) => blocked,
                }
            }
            other => unreachable!("mapping {other} IO"),
        }
    }
}

/// Marks a probe-blocked migration as blocked on its LUN.
fn busy(outcome: StartOutcome) -> StartOutcome {
    match outcome {
        StartOutcome::Blocked { retry_at: Some(t) } => StartOutcome::Busy { retry_at: t },
        other => other,
    }
}

impl Executor for Controller {
    fn begin_round(&mut self, _now: VirtualTime) {
        self.forget_probes();
    }

    fn try_start(&mut self, io: &mut IoRequest, now: VirtualTime) -> StartOutcome {
        if self.error.is_some() {
            return StartOutcome::Blocked { retry_at: None };
        }
        match io.source {
            Source::App(_) => self.start_app(io, now),
            Source::Gc | Source::Wl => self.start_migration(io, now),
            Source::Mapping => self.start_mapping(io, now),
        }
    }
}

/// What a finished run leaves behind.
pub struct RunOutput {
    /// Every IO, in completion order.
    pub trace: Vec<IoRequest>,
    /// Indexed by thread id.
    pub thread_names: Vec<String>,
    pub measure_start: Option<VirtualTime>,
    pub end: VirtualTime,
    pub flash: FlashArray,
    pub ftl: Ftl,
}

pub struct Simulation {
    config: SimConfig,
    engine: Engine<Event>,
    ctl: Controller,
    sched: Scheduler,
    host: HostOs,
    wl: WearLeveler,
    threads: Vec<ThreadSlot>,
    /// Active GC or WL job per LUN, identified by its ERASE.
    jobs: Vec<Option<IoId>>,
    erased: Vec<LunId>,
    erases_since_host: u64,
    /// A scan found a block to level only on busy LUNs; retried as LUNs free up.
    wl_due: bool,
    app_writes_completed: u64,
    measure_start: Option<VirtualTime>,
    wake: Option<(EventId, VirtualTime)>,
    retry_at: Option<VirtualTime>,
    trace: Vec<IoRequest>,
}

impl Simulation {
    pub fn new(config: SimConfig, threads: Vec<ThreadSpec>, seed: u64) -> Result<Self, SimError> {
        let g = config.geometry;
        if g.channels == 0 || g.luns_per_channel == 0 || g.pages_per_block == 0 {
            return Err(SimError::Setup("geometry dimensions must be positive".into()));
        }
        if config.gc.greediness == 0 || config.gc.trigger_floor() >= g.blocks_per_lun {
            return Err(SimError::Setup(format!(
                "greediness {} leaves no room on a LUN with {} blocks",
                config.gc.greediness, g.blocks_per_lun
            )));
        }
        let mut timing = config.timing;
        timing.copyback |= config.gc.copyback;
        let flash = FlashArray::new(g, timing, config.interleaving);
        let ram = RamBudget::new(config.ram_bytes, config.bbram_bytes);
        let ftl = Ftl::new(g, config.overprovision, config.scheme, ram, config.wl_enabled)?;
        if ftl.logical_pages() == 0 {
            return Err(SimError::Setup("overprovisioning leaves no logical pages".into()));
        }
        let names: HashMap<String, usize> = threads.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();
        if names.len() != threads.len() {
            return Err(SimError::Setup("thread names must be unique".into()));
        }
        let mut slots = Vec::with_capacity(threads.len());
        for (i, spec) in threads.into_iter().enumerate() {
            let mut depends_on = Vec::new();
            for dep in &spec.depends_on {
                match names.get(dep) {
                    Some(&j) if j != i => depends_on.push(j),
                    _ => {
                        return Err(SimError::Setup(format!("thread {} depends on unknown thread {dep:?}", spec.name)))
                    }
                }
            }
            slots.push(ThreadSlot {
                state: ThreadState::new(crate::io::ThreadId(i as u32), seed, spec.measured),
                name: spec.name,
                workload: spec.workload,
                depends_on,
                phase: ThreadPhase::Waiting,
            });
        }
        let mut host = HostOs::new(config.os);
        for slot in &slots {
            host.register_thread(slot.state.id);
        }
        let ctl = Controller {
            flash,
            ftl,
            detector: config.detector_enabled.then(|| TemperatureDetector::new(config.detector)),
            hints: Vec::new(),
            locality: FxHashMap::default(),
            moves: FxHashMap::default(),
            erase_prev: FxHashMap::default(),
            ids: IdAllocator::default(),
            spawned: Vec::new(),
            error: None,
            probes: vec![Cell::new(None); 2 * g.total_luns() as usize],
            stalled: Vec::new(),
        };
        Ok(Simulation {
            sched: Scheduler::new(config.scheduler),
            wl: WearLeveler::new(config.staleness_factor, config.timing.t_erase),
            jobs: vec![None; g.total_luns() as usize],
            erased: Vec::new(),
            erases_since_host: 0,
            wl_due: false,
            config,
            engine: Engine::new(),
            ctl,
            host,
            threads: slots,
            app_writes_completed: 0,
            measure_start: None,
            wake: None,
            retry_at: None,
            trace: Vec::new(),
        })
    }

    pub fn logical_pages(&self) -> u64 {
        self.ctl.ftl.logical_pages()
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        for i in 0..self.threads.len() {
            if self.threads[i].depends_on.is_empty() {
                self.engine.schedule(Event::StartThread(i), VirtualTime::ZERO)?;
            }
        }
        while let Some((now, event)) = self.engine.advance() {
            match event {
                Event::Complete(id) => {
                    let io = self.sched.complete(id, now);
                    self.on_complete(io, now)?;
                }
                Event::Wake => self.wake = None,
                Event::StartThread(i) => self.start_thread(i, now)?,
            }
            if self.engine.peek_time() == Some(now) {
                continue;
            }
            self.pump(now)?;
        }
        let now = self.engine.now();
        let pending = self.sched.outstanding() + self.host.pooled() + self.host.outstanding();
        if pending > 0 || self.threads.iter().any(|t| t.phase != ThreadPhase::Done) {
            return Err(SimError::Stall { now, pending });
        }
        info!("run finished at {now} after {} IOs", self.trace.len());
        Ok(RunOutput {
            trace: self.trace,
            thread_names: self.threads.iter().map(|t| t.name.clone()).collect(),
            measure_start: self.measure_start,
            end: now,
            flash: self.ctl.flash,
            ftl: self.ctl.ftl,
        })
    }

    fn start_thread(&mut self, i: usize, now: VirtualTime) -> Result<(), SimError> {
        let slot = &mut self.threads[i];
        slot.phase = ThreadPhase::Running;
        if slot.state.measured && self.measure_start.is_none() {
            self.measure_start = Some(now);
        }
        debug!("thread {} starts at {now}", slot.name);
        self.with_thread(i, now, |w, ctx| w.init(ctx))
    }

    /// Runs a thread hook and routes whatever it sent.
    fn with_thread(
        &mut self,
        i: usize,
        now: VirtualTime,
        hook: impl FnOnce(&mut dyn Workload, &mut ThreadCtx),
    ) -> Result<(), SimError> {
        let logical_pages = self.ctl.ftl.logical_pages();
        let mut outbox = Vec::new();
        let slot = &mut self.threads[i];
        let mut ctx = ThreadCtx::new(now, logical_pages, &mut slot.state, &mut self.ctl.ids, &mut outbox);
        hook(slot.workload.as_mut(), &mut ctx);
        if let Some(e) = ctx.take_error() {
            return Err(e.into());
        }
        for out in outbox {
            match out {
                Outgoing::Io(io) => self.host.submit_io(io)?,
                Outgoing::Tag(msg) => {
                    if let Some(hint) = self.host.tag(msg) {
                        self.apply_hint(hint);
                    }
                }
            }
        }
        self.maybe_finish_thread(i, now)
    }

    fn apply_hint(&mut self, hint: Hint) {
        match hint {
            Hint::Temperature { start, end, temperature } => self.ctl.hints.push((start, end, temperature)),
            Hint::Locality { group, lpns } => {
                for lpn in lpns {
                    self.ctl.locality.insert(lpn, group);
                }
            }
            Hint::Custom { kind, args } => info!("custom message {kind} {args:?} has no controller handler"),
        }
    }

    fn maybe_finish_thread(&mut self, i: usize, now: VirtualTime) -> Result<(), SimError> {
        let slot = &mut self.threads[i];
        if slot.phase != ThreadPhase::Running || !slot.state.finished || slot.state.in_flight > 0 {
            return Ok(());
        }
        slot.phase = ThreadPhase::Done;
        debug!("thread {} done at {now}", slot.name);
        for j in 0..self.threads.len() {
            let t = &self.threads[j];
            if t.phase == ThreadPhase::Waiting
                && t.depends_on.contains(&i)
                && t.depends_on.iter().all(|&d| self.threads[d].phase == ThreadPhase::Done)
            {
                self.engine.schedule(Event::StartThread(j), now)?;
            }
        }
        Ok(())
    }

    /// Device-side intake of an application IO forwarded by the OS.
    fn enqueue_app(&mut self, mut io: IoRequest, now: VirtualTime) {
        let lpn = io.lpn.expect("application IOs carry an lpn");
        let relative = match io.kind {
            IoKind::Read => self.config.read_deadline,
            IoKind::Write => self.config.write_deadline,
            _ => None,
        };
        if io.deadline.is_none() {
            io.deadline = relative.map(|d| io.times.created + d);
        }
        if io.kind == IoKind::Write {
            if let Some(d) = self.ctl.detector.as_mut() {
                d.record_write(lpn);
            }
        }
        if matches!(io.kind, IoKind::Read | IoKind::Write) && self.ctl.ftl.dftl().is_some() {
            let side = self.ctl.ftl.cache_access(lpn, false);
            let preds = self.ctl.side_requests(side, now);
            io.predecessors.extend(preds);
        }
        self.submit_spawned(now);
        self.sched.submit(io, now);
    }

    fn submit_spawned(&mut self, now: VirtualTime) -> bool {
        let spawned = std::mem::take(&mut self.ctl.spawned);
        let any = !spawned.is_empty();
        for io in spawned {
            self.sched.submit(io, now);
        }
        any
    }

    fn pump(&mut self, now: VirtualTime) -> Result<(), SimError> {
        loop {
            let mut progress = false;
            for io in self.host.dispatch(now) {
                self.enqueue_app(io, now);
                progress = true;
            }
            progress |= self.start_maintenance(now);
            let round = self.sched.dispatch(now, &mut self.ctl);
            if let Some(e) = self.ctl.error.take() {
                return Err(e);
            }
            progress |= self.submit_spawned(now);
            for &(id, complete) in &round.started {
                self.engine.schedule(Event::Complete(id), complete)?;
            }
            if !round.started.is_empty() {
                progress |= self.start_maintenance(now);
            }
            for io in round.finished {
                self.on_complete(io, now)?;
                progress = true;
            }
            self.retry_at = round.retry_at;
            if !progress {
                break;
            }
        }
        self.arm_wake()
    }

    fn arm_wake(&mut self) -> Result<(), SimError> {
        match (self.retry_at, self.wake) {
            (Some(r), Some((_, t))) if r == t => {}
            (retry, current) => {
                if let Some((id, _)) = current {
                    self.engine.cancel(id);
                }
                self.wake = match retry {
                    Some(r) => Some((self.engine.schedule(Event::Wake, r)?, r)),
                    None => None,
                };
            }
        }
        Ok(())
    }

    /// Starts GC on every LUN below its free-block floor.
    fn start_maintenance(&mut self, now: VirtualTime) -> bool {
        let mut started = false;
        let luns: Vec<LunId> = self.ctl.flash.geometry().luns().collect();
        for lun in luns {
            if self.jobs[lun.0 as usize].is_some() {
                continue;
            }
            let ftl = &self.ctl.ftl;
            let decision =
                check_gc(&self.ctl.flash, lun, &self.config.gc, false, |b| ftl.pending_programs(lun, b) == 0);
            if let GcDecision::Collect(plan) = decision {
                self.launch(plan, Source::Gc, now);
                started = true;
            }
        }
        // Relocated map entries are written back once a LUN's GC episode ends.
        if std::mem::take(&mut self.erased).into_iter().any(|l| self.jobs[l.0 as usize].is_none()) {
            let side = self.ctl.ftl.flush_relocations();
            started |= !self.ctl.side_requests(side, now).is_empty();
        }
        started
    }

    fn launch(&mut self, plan: RelocationPlan, source: Source, now: VirtualTime) {
        debug!("{} job on lun {} block {} with {} moves", source.label(), plan.lun.0, plan.block, plan.moves.len());
        let lun = plan.lun;
        let requests = plan.into_requests(source, now, &mut self.ctl.ids);
        self.jobs[lun.0 as usize] = requests.last().map(|e| e.id);
        for io in requests {
            self.sched.submit(io, now);
        }
    }

    fn static_wl_scan(&mut self, now: VirtualTime) {
        let jobs = &self.jobs;
        let ftl = &self.ctl.ftl;
        let settled = |lun: LunId, b: u32| ftl.pending_programs(lun, b) == 0;
        let candidate =
            self.wl.static_candidate(&self.ctl.flash, now, |lun, b| jobs[lun.0 as usize].is_none() && settled(lun, b));
        self.wl_due = candidate.is_none() && self.wl.static_candidate(&self.ctl.flash, now, settled).is_some();
        if let Some((lun, block)) = candidate {
            let plan = RelocationPlan::for_block(&self.ctl.flash, lun, block, self.config.gc.copyback);
            self.launch(plan, Source::Wl, now);
        }
    }

    fn on_complete(&mut self, io: IoRequest, now: VirtualTime) -> Result<(), SimError> {
        let ok = io.status == IoStatus::Ok;
        match (io.source, io.kind) {
            (Source::App(_), IoKind::Write) if ok => {
                let out = self.ctl.ftl.bind_write(&mut self.ctl.flash, io.lpn.unwrap(), io.ppa.unwrap(), io.id.0)?;
                self.ctl.side_requests(out.side, now);
                self.app_writes_completed += 1;
                if self.config.wl_enabled
                    && self.app_writes_completed.is_multiple_of(self.config.wl_scan_interval.max(1))
                {
                    self.static_wl_scan(now);
                }
            }
            (Source::Gc | Source::Wl, IoKind::Read) if !ok => {}
            (Source::Gc | Source::Wl, IoKind::Write | IoKind::Copyback) => {
                let key = if io.kind == IoKind::Write { io.predecessors[0] } else { io.id };
                let mv = self.ctl.moves.remove(&key);
                if let (true, Some(mv)) = (ok, mv) {
                    self.ctl.ftl.relocate(&mut self.ctl.flash, mv.owner, io.src_ppa.unwrap(), io.ppa.unwrap())?;
                }
            }
            (Source::Gc | Source::Wl, IoKind::Erase) => {
                let prev = self.ctl.erase_prev.remove(&io.id).expect("erase was issued");
                self.wl.record_erase(prev, now);
                let lun = self.ctl.flash.geometry().lun_of(io.ppa.unwrap());
                debug_assert_eq!(self.jobs[lun.0 as usize], Some(io.id));
                self.jobs[lun.0 as usize] = None;
                self.erased.push(lun);
                self.erases_since_host += 1;
                if self.erases_since_host > self.ctl.flash.geometry().total_pages() {
                    return Err(SimError::Thrashing { now, erases: self.erases_since_host });
                }
                if self.wl_due {
                    self.static_wl_scan(now);
                }
            }
            (Source::Mapping, IoKind::Write) if ok => {
                self.ctl.ftl.bind_translation(&mut self.ctl.flash, io.tpage.unwrap(), io.ppa.unwrap(), io.id.0);
            }
            _ => {}
        }
        self.submit_spawned(now);
        let thread = io.source.thread();
        let id = io.id;
        self.trace.push(io);
        if let Some(t) = thread {
            self.erases_since_host = 0;
            self.host.on_interrupt(id)?;
            let i = t.0 as usize;
            self.threads[i].state.in_flight -= 1;
            let done = self.trace.last().unwrap().clone();
            self.with_thread(i, now, |w, ctx| w.call_back(ctx, &done))?;
        }
        Ok(())
    }
}

/// Every valid data page is mapped by exactly one lpn and vice versa.
pub fn audit(output: &RunOutput) -> Result<(), String> {
    output.ftl.audit(&output.flash)
}

/// Ids of all IOs in a trace, for quick membership checks.
pub fn trace_ids(trace: &[IoRequest]) -> HashSet<IoId> {
    trace.iter().map(|io| io.id).collect()
}

/// Block address helper for tests and checkers.
pub fn block_of(geometry: &Geometry, ppa: Ppa) -> (LunId, u32) {
    (geometry.lun_of(ppa), ppa.block)
}
