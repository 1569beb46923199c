//! Host OS: per-thread pending pools, queue-depth-capped dispatch to the
//! device, and delivery of open-interface tags.

use std::collections::{BTreeMap, HashSet, VecDeque};

use log::warn;
use thiserror::Error;

use crate::engine::VirtualTime;
use crate::io::{IoId, IoRequest, ThreadId};
use crate::messages::Message;
use crate::temperature::Temperature;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OsPolicy {
    Fifo,
    Priority,
    FairShare,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OsConfig {
    pub queue_depth: usize,
    pub policy: OsPolicy,
    /// When off, every tag message is dropped on arrival.
    pub open_interface: bool,
}

/// A tag the controller has to act on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Hint {
    Temperature { start: u64, end: u64, temperature: Temperature },
    Locality { group: u32, lpns: Vec<u64> },
    Custom { kind: String, args: Vec<String> },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HostError {
    #[error("interrupt for io {0}, which is not outstanding")]
    UnknownInterrupt(IoId),
    #[error("io {io} submitted by unregistered thread {thread}")]
    UnregisteredThread { io: IoId, thread: u32 },
}

pub struct HostOs {
    config: OsConfig,
    pools: BTreeMap<ThreadId, VecDeque<IoRequest>>,
    outstanding: HashSet<IoId>,
    last_served: Option<ThreadId>,
}

impl HostOs {
    pub fn new(config: OsConfig) -> Self {
        assert!(config.queue_depth >= 1, "queue depth must be at least 1");
        HostOs { config, pools: BTreeMap::new(), outstanding: HashSet::new(), last_served: None }
    }

    pub fn config(&self) -> &OsConfig {
        &self.config
    }

    pub fn register_thread(&mut self, thread: ThreadId) {
        self.pools.entry(thread).or_default();
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    pub fn pooled(&self) -> usize {
        self.pools.values().map(VecDeque::len).sum()
    }

    /// Puts an application IO into its thread's pool.
    pub fn submit_io(&mut self, io: IoRequest) -> Result<(), HostError> {
        let thread = io.source.thread().expect("host pools hold application IOs only");
        let pool = self.pools.get_mut(&thread).ok_or(HostError::UnregisteredThread { io: io.id, thread: thread.0 })?;
        pool.push_back(io);
        Ok(())
    }

    /// Handles a tag message; returns what the controller must apply.
    pub fn tag(&mut self, message: Message) -> Option<Hint> {
        debug_assert!(message.is_tag());
        if !self.config.open_interface {
            return None;
        }
        match message {
            Message::TagPriority { io, priority } => {
                match self.pools.values_mut().flat_map(|p| p.iter_mut()).find(|p| p.id == io) {
                    Some(pending) => pending.priority = priority,
                    None => warn!("stale TAG_PRIORITY for io {io}: already dispatched or unknown"),
                }
                None
            }
            Message::TagTemperature { start, end, temperature } => Some(Hint::Temperature { start, end, temperature }),
            Message::TagLocality { group, lpns } => Some(Hint::Locality { group, lpns }),
            Message::Custom { kind, args } => Some(Hint::Custom { kind, args }),
            Message::SubmitIo { .. } | Message::Trim { .. } => unreachable!("not a tag"),
        }
    }

    fn pick(&self) -> Option<ThreadId> {
        let heads = self.pools.iter().filter_map(|(t, p)| p.front().map(|io| (*t, io)));
        match self.config.policy {
            OsPolicy::Fifo => heads.min_by_key(|(_, io)| io.id).map(|(t, _)| t),
            OsPolicy::Priority => self
                .pools
                .iter()
                .flat_map(|(t, p)| p.iter().map(move |io| (*t, io)))
                .min_by_key(|(_, io)| (std::cmp::Reverse(io.priority), io.id))
                .map(|(t, _)| t),
            OsPolicy::FairShare => {
                let nonempty: Vec<ThreadId> = heads.map(|(t, _)| t).collect();
                match self.last_served {
                    Some(last) => nonempty.iter().find(|&&t| t > last).or(nonempty.first()).copied(),
                    None => nonempty.first().copied(),
                }
            }
        }
    }

    /// Forwards pooled IOs to the device while the queue depth allows.
    pub fn dispatch(&mut self, now: VirtualTime) -> Vec<IoRequest> {
        let mut out = Vec::new();
        while self.outstanding.len() < self.config.queue_depth {
            let Some(thread) = self.pick() else { break };
            let pool = self.pools.get_mut(&thread).unwrap();
            let idx = match self.config.policy {
                OsPolicy::Priority => {
                    let (i, _) =
                        pool.iter().enumerate().min_by_key(|(_, io)| (std::cmp::Reverse(io.priority), io.id)).unwrap();
                    i
                }
                _ => 0,
            };
            let mut io = pool.remove(idx).unwrap();
            io.times.os_dispatched = Some(now);
            self.outstanding.insert(io.id);
            self.last_served = Some(thread);
            out.push(io);
        }
        out
    }

    pub fn on_interrupt(&mut self, io: IoId) -> Result<(), HostError> {
        if self.outstanding.remove(&io) {
            Ok(())
        } else {
            Err(HostError::UnknownInterrupt(io))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{IoKind, Source};

    fn os(policy: OsPolicy, depth: usize, threads: u32) -> HostOs {
        let mut os = HostOs::new(OsConfig { queue_depth: depth, policy, open_interface: true });
        for t in 0..threads {
            os.register_thread(ThreadId(t));
        }
        os
    }

    fn io(id: u64, thread: u32) -> IoRequest {
        IoRequest::new(IoId(id), Source::App(ThreadId(thread)), IoKind::Write, VirtualTime::ZERO).with_lpn(id)
    }

    fn ids(ios: &[IoRequest]) -> Vec<u64> {
        ios.iter().map(|io| io.id.0).collect()
    }

    #[test]
    fn depth_one_forwards_exactly_one() {
        let mut os = os(OsPolicy::Fifo, 1, 1);
        os.submit_io(io(0, 0)).unwrap();
        os.submit_io(io(1, 0)).unwrap();
        assert_eq!(os.dispatch(VirtualTime(5)).len(), 1);
        assert_eq!(os.outstanding(), 1);
        assert!(os.dispatch(VirtualTime(6)).is_empty());
    }

    #[test]
    fn cap_holds_with_no_completions() {
        let mut os = os(OsPolicy::Fifo, 4, 2);
        for i in 0..10 {
            os.submit_io(io(i, (i % 2) as u32)).unwrap();
        }
        assert_eq!(os.dispatch(VirtualTime::ZERO).len(), 4);
        assert_eq!(os.outstanding(), 4);
    }

    #[test]
    fn fifo_is_global_submission_order() {
        let mut os = os(OsPolicy::Fifo, 10, 3);
        for (id, t) in [(0, 2), (1, 0), (2, 2), (3, 1), (4, 0)] {
            os.submit_io(io(id, t)).unwrap();
        }
        let out = os.dispatch(VirtualTime(1));
        assert_eq!(ids(&out), vec![0, 1, 2, 3, 4]);
        assert!(out.iter().all(|io| io.times.os_dispatched == Some(VirtualTime(1))));
    }

    #[test]
    fn fair_share_serves_small_thread_early() {
        let mut os = os(OsPolicy::FairShare, 2, 2);
        for i in 0..10 {
            os.submit_io(io(i, 0)).unwrap();
        }
        os.submit_io(io(10, 1)).unwrap();
        assert!(ids(&os.dispatch(VirtualTime::ZERO)).contains(&10));
    }

    #[test]
    fn fair_share_deficit_at_most_one() {
        let threads = 3;
        let mut os = os(OsPolicy::FairShare, 1, threads);
        let mut next = 0;
        for t in 0..threads {
            for _ in 0..5 {
                os.submit_io(io(next, t)).unwrap();
                next += 1;
            }
        }
        let mut served = [0i64; 3];
        for step in 0..12 {
            let out = os.dispatch(VirtualTime(step));
            let t = out[0].source.thread().unwrap();
            served[t.0 as usize] += 1;
            // Keep every pool backlogged.
            os.submit_io(io(next, t.0)).unwrap();
            next += 1;
            os.on_interrupt(out[0].id).unwrap();
            let total: i64 = served.iter().sum();
            for s in served {
                assert!((s * threads as i64 - total).abs() <= threads as i64);
            }
        }
    }

    #[test]
    fn priority_policy_and_tag() {
        let mut os = os(OsPolicy::Priority, 1, 1);
        for i in 0..3 {
            os.submit_io(io(i, 0)).unwrap();
        }
        assert_eq!(os.tag(Message::TagPriority { io: IoId(2), priority: 5 }), None);
        assert_eq!(ids(&os.dispatch(VirtualTime::ZERO)), vec![2]);
        // Stale tag for the already dispatched io is ignored.
        os.tag(Message::TagPriority { io: IoId(2), priority: 9 });
        os.on_interrupt(IoId(2)).unwrap();
        assert_eq!(ids(&os.dispatch(VirtualTime::ZERO)), vec![0]);
    }

    #[test]
    fn closed_interface_drops_tags() {
        let mut os = HostOs::new(OsConfig { queue_depth: 1, policy: OsPolicy::Fifo, open_interface: false });
        let hint = Message::TagTemperature { start: 0, end: 3, temperature: Temperature::Hot };
        assert_eq!(os.tag(hint.clone()), None);
        let mut open = HostOs::new(OsConfig { queue_depth: 1, policy: OsPolicy::Fifo, open_interface: true });
        assert_eq!(open.tag(hint), Some(Hint::Temperature { start: 0, end: 3, temperature: Temperature::Hot }));
    }

    #[test]
    fn unknown_interrupt_is_an_error() {
        let mut os = os(OsPolicy::Fifo, 1, 1);
        assert_eq!(os.on_interrupt(IoId(3)), Err(HostError::UnknownInterrupt(IoId(3))));
    }

    #[test]
    fn unregistered_thread_rejected() {
        let mut os = os(OsPolicy::Fifo, 1, 1);
        assert!(os.submit_io(io(0, 7)).is_err());
    }
}
