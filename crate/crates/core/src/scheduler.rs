//! Device-side IO scheduler.
//!
//! IOs wait here until their predecessors complete, then sit in a ready set
//! ranked by source class, per-IO priority, read preference and age. A
//! dispatch round walks the ready set in rank order and asks an [`Executor`]
//! to start each IO; the executor decides whether the target resources are
//! free right now.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap as HashMap;

use crate::engine::VirtualTime;
use crate::io::{IoId, IoKind, IoRequest, IoStatus, Source, SourceClass};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchedulerConfig {
    /// Indexed by [`SourceClass`].
    pub class_priority: [i32; 4],
    pub reads_over_writes: bool,
    pub deadline_boost: bool,
    /// When off, a blocked IO also blocks everything ranked below it in its source class.
    pub greedy_lookahead: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            class_priority: [3, 2, 1, 0],
            reads_over_writes: true,
            deadline_boost: true,
            greedy_lookahead: true,
        }
    }
}

impl SchedulerConfig {
    pub fn class_priority(&self, class: SourceClass) -> i32 {
        self.class_priority[class as usize]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartOutcome {
    /// Resources reserved; the IO completes at `complete`.
    Started { complete: VirtualTime },
    /// Resolved without flash work (status set by the executor).
    Finished,
    /// Cannot start now; `retry_at` is the earliest time it might.
    Blocked { retry_at: Option<VirtualTime> },
    /// Cannot start before `retry_at` because the resource of its [`lane`]
    /// is taken; the rest of the pass skips that lane.
    Busy { retry_at: VirtualTime },
}

pub trait Executor {
    fn try_start(&mut self, io: &mut IoRequest, now: VirtualTime) -> StartOutcome;

    /// Called before each pass over the ready set.
    fn begin_round(&mut self, _now: VirtualTime) {}
}

/// Resource a migration queues on: the LUN it reads from or is pinned to,
/// split by command shape and source.
pub fn lane(io: &IoRequest) -> Option<u64> {
    if !matches!(io.source, Source::Gc | Source::Wl) {
        return None;
    }
    let (unit, shape) = match io.kind {
        IoKind::Read => io.ppa.map(|p| ((p.channel as u64) << 32 | p.lun as u64, 0))?,
        IoKind::Write => (io.lun?.0 as u64, 1),
        IoKind::Copyback => (io.lun?.0 as u64, 2),
        _ => return None,
    };
    Some((unit << 2 | shape) << 1 | u64::from(io.source == Source::Wl))
}

type RankKey = (Reverse<i64>, u8, VirtualTime, IoId);

#[derive(Debug, Default)]
pub struct DispatchRound {
    pub started: Vec<(IoId, VirtualTime)>,
    /// IOs resolved on the spot; already removed from the scheduler.
    pub finished: Vec<IoRequest>,
    pub retry_at: Option<VirtualTime>,
}

pub struct Scheduler {
    config: SchedulerConfig,
    waiting: HashMap<IoId, (IoRequest, usize)>,
    dependents: HashMap<IoId, Vec<IoId>>,
    /// Rank order of ready IOs, with their lanes.
    ready: BTreeMap<RankKey, Option<u64>>,
    by_deadline: BTreeSet<(VirtualTime, IoId)>,
    ready_ios: HashMap<IoId, (RankKey, IoRequest)>,
    in_flight: HashMap<IoId, IoRequest>,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Self {
        Scheduler {
            config,
            waiting: HashMap::default(),
            dependents: HashMap::default(),
            ready: BTreeMap::new(),
            by_deadline: BTreeSet::new(),
            ready_ios: HashMap::default(),
            in_flight: HashMap::default(),
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn is_idle(&self) -> bool {
        self.waiting.is_empty() && self.ready_ios.is_empty() && self.in_flight.is_empty()
    }

    pub fn outstanding(&self) -> usize {
        self.waiting.len() + self.ready_ios.len() + self.in_flight.len()
    }

    pub fn contains(&self, id: IoId) -> bool {
        self.waiting.contains_key(&id) || self.ready_ios.contains_key(&id) || self.in_flight.contains_key(&id)
    }

    pub fn ready(&self) -> impl Iterator<Item = &IoRequest> {
        self.ready_ios.values().map(|(_, io)| io)
    }

    pub fn in_flight(&self) -> impl Iterator<Item = &IoRequest> {
        self.in_flight.values()
    }

    pub fn get(&self, id: IoId) -> Option<&IoRequest> {
        self.in_flight
            .get(&id)
            .or_else(|| self.ready_ios.get(&id).map(|(_, io)| io))
            .or_else(|| self.waiting.get(&id).map(|(io, _)| io))
    }

    /// Accepts an IO. Predecessors that are not outstanding here count as done.
    pub fn submit(&mut self, mut io: IoRequest, now: VirtualTime) {
        io.times.ssd_enqueued = Some(now);
        let mut blocking = 0;
        for pred in io.predecessors.clone() {
            if self.contains(pred) {
                self.dependents.entry(pred).or_default().push(io.id);
                blocking += 1;
            }
        }
        if blocking == 0 {
            self.make_ready(io);
        } else {
            self.waiting.insert(io.id, (io, blocking));
        }
    }

    fn rank(&self, io: &IoRequest) -> RankKey {
        let prio = self.config.class_priority(io.source.class()) as i64 + io.priority as i64;
        let read_first = u8::from(!(self.config.reads_over_writes && io.kind == IoKind::Read));
        (Reverse(prio), read_first, io.times.ssd_enqueued.unwrap_or(io.times.created), io.id)
    }

    fn make_ready(&mut self, io: IoRequest) {
        let key = self.rank(&io);
        self.ready.insert(key, lane(&io));
        if let Some(d) = io.deadline {
            self.by_deadline.insert((d, io.id));
        }
        self.ready_ios.insert(io.id, (key, io));
    }

    /// Drops the ordering entries of an IO that is leaving the ready set.
    fn unindex(&mut self, key: RankKey, io: &IoRequest) {
        self.ready.remove(&key);
        if let Some(d) = io.deadline {
            self.by_deadline.remove(&(d, io.id));
        }
    }

    /// Ready IO ids and lanes in dispatch order at `now`.
    pub fn dispatch_order(&self, now: VirtualTime) -> Vec<(IoId, Option<u64>)> {
        let mut overdue: Vec<RankKey> = Vec::new();
        if self.config.deadline_boost {
            overdue = self.by_deadline.range(..(now, IoId(0))).map(|(_, id)| self.ready_ios[id].0).collect();
            overdue.sort();
        }
        if overdue.is_empty() {
            return self.ready.iter().map(|(k, lane)| (k.3, *lane)).collect();
        }
        let mut order: Vec<(IoId, Option<u64>)> = overdue.iter().map(|k| (k.3, self.ready[k])).collect();
        let boosted: std::collections::HashSet<IoId> = order.iter().map(|o| o.0).collect();
        order.extend(self.ready.iter().map(|(k, lane)| (k.3, *lane)).filter(|(id, _)| !boosted.contains(id)));
        order
    }

    /// Starts every ready IO the executor accepts at `now`.
    pub fn dispatch(&mut self, now: VirtualTime, exec: &mut impl Executor) -> DispatchRound {
        let mut round = DispatchRound::default();
        loop {
            let mut resolved_any = false;
            let mut blocked_classes = [false; 4];
            let mut retry_at: Option<VirtualTime> = None;
            let mut busy: Vec<u64> = Vec::new();
            exec.begin_round(now);
            for (id, lane) in self.dispatch_order(now) {
                if lane.is_some_and(|l| busy.contains(&l)) {
                    continue;
                }
                let Some((key, io)) = self.ready_ios.get_mut(&id) else {
                    continue;
                };
                let key = *key;
                let class = io.source.class() as usize;
                if !self.config.greedy_lookahead && blocked_classes[class] {
                    continue;
                }
                let outcome = exec.try_start(io, now);
                let blocked_until = match outcome {
                    StartOutcome::Blocked { retry_at } => Some(retry_at),
                    StartOutcome::Busy { retry_at } => {
                        busy.extend(lane);
                        Some(Some(retry_at))
                    }
                    _ => None,
                };
                if let Some(r) = blocked_until {
                    if let Some(r) = r {
                        debug_assert!(r > now, "blocked IO must retry in the future");
                        retry_at = Some(retry_at.map_or(r, |x| x.min(r)));
                    }
                    blocked_classes[class] = true;
                    continue;
                }
                let (_, mut io) = self.ready_ios.remove(&id).unwrap();
                self.unindex(key, &io);
                match outcome {
                    StartOutcome::Started { complete } => {
                        io.times.exec_started = Some(now);
                        round.started.push((id, complete));
                        self.in_flight.insert(id, io);
                    }
                    StartOutcome::Finished => {
                        debug_assert_ne!(io.status, IoStatus::Pending);
                        io.times.exec_started = Some(now);
                        io.times.completed = Some(now);
                        self.release_dependents(id);
                        round.finished.push(io);
                        resolved_any = true;
                    }
                    StartOutcome::Blocked { .. } | StartOutcome::Busy { .. } => unreachable!(),
                }
            }
            round.retry_at = retry_at;
            if !resolved_any {
                return round;
            }
        }
    }

    /// Marks an in-flight IO complete and releases its dependents.
    pub fn complete(&mut self, id: IoId, now: VirtualTime) -> IoRequest {
        let mut io = self.in_flight.remove(&id).expect("completing an IO that is not in flight");
        io.times.completed = Some(now);
        if io.status == IoStatus::Pending {
            io.status = IoStatus::Ok;
        }
        self.release_dependents(id);
        io
    }

    fn release_dependents(&mut self, id: IoId) {
        for dep in self.dependents.remove(&id).unwrap_or_default() {
            let entry = self.waiting.get_mut(&dep).expect("dependent is waiting");
            entry.1 -= 1;
            if entry.1 == 0 {
                let (io, _) = self.waiting.remove(&dep).unwrap();
                self.make_ready(io);
            }
        }
    }
}
