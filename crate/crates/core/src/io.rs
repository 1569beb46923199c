//! The IO request record shared by every layer, and its lifecycle timestamps.

use std::fmt;
use std::str::FromStr;

use crate::engine::VirtualTime;
use crate::hardware::{LunId, Ppa};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IoId(pub u64);

impl fmt::Display for IoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ThreadId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    App(ThreadId),
    Gc,
    Wl,
    Mapping,
}

/// Source classes as scheduled; the index into per-class tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceClass {
    Mapping = 0,
    App = 1,
    Gc = 2,
    Wl = 3,
}

impl Source {
    pub fn class(self) -> SourceClass {
        match self {
            Source::App(_) => SourceClass::App,
            Source::Gc => SourceClass::Gc,
            Source::Wl => SourceClass::Wl,
            Source::Mapping => SourceClass::Mapping,
        }
    }

    pub fn thread(self) -> Option<ThreadId> {
        match self {
            Source::App(t) => Some(t),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Source::App(_) => "APP",
            Source::Gc => "GC",
            Source::Wl => "WL",
            Source::Mapping => "MAPPING",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IoKind {
    Read,
    Write,
    Erase,
    Copyback,
    Trim,
}

impl IoKind {
    pub fn label(self) -> &'static str {
        match self {
            IoKind::Read => "READ",
            IoKind::Write => "WRITE",
            IoKind::Erase => "ERASE",
            IoKind::Copyback => "COPYBACK",
            IoKind::Trim => "TRIM",
        }
    }
}

impl fmt::Display for IoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for IoKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "READ" => IoKind::Read,
            "WRITE" => IoKind::Write,
            "ERASE" => IoKind::Erase,
            "COPYBACK" => IoKind::Copyback,
            "TRIM" => IoKind::Trim,
            other => return Err(format!("unknown io kind {other:?}")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IoStatus {
    Pending,
    Ok,
    /// Completed without touching flash because it could not be served (unmapped read).
    Failed,
    /// Internal IO made redundant before it ran (its page was overwritten meanwhile).
    Skipped,
}

impl IoStatus {
    pub fn label(self) -> &'static str {
        match self {
            IoStatus::Pending => "PENDING",
            IoStatus::Ok => "OK",
            IoStatus::Failed => "FAILED",
            IoStatus::Skipped => "SKIPPED",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Timestamps {
    pub created: VirtualTime,
    pub os_dispatched: Option<VirtualTime>,
    pub ssd_enqueued: Option<VirtualTime>,
    pub exec_started: Option<VirtualTime>,
    pub completed: Option<VirtualTime>,
}

impl Timestamps {
    pub fn is_ordered(&self) -> bool {
        let stamps = [Some(self.created), self.os_dispatched, self.ssd_enqueued, self.exec_started, self.completed];
        stamps.windows(2).all(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => a <= b,
            _ => true,
        })
    }

    pub fn latency(&self) -> Option<u64> {
        self.completed.map(|c| c - self.created)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IoRequest {
    pub id: IoId,
    pub source: Source,
    pub kind: IoKind,
    pub lpn: Option<u64>,
    /// Translation page index for mapping IOs and migrations of translation pages.
    pub tpage: Option<u32>,
    /// Physical target; for APP and migration writes it is bound at dispatch.
    pub ppa: Option<Ppa>,
    /// Source page of a migration or copyback.
    pub src_ppa: Option<Ppa>,
    /// LUN an internal write must land on.
    pub lun: Option<LunId>,
    pub priority: i32,
    pub deadline: Option<VirtualTime>,
    pub payload: Option<u64>,
    pub status: IoStatus,
    pub measured: bool,
    pub predecessors: Vec<IoId>,
    pub times: Timestamps,
}

impl IoRequest {
    pub fn new(id: IoId, source: Source, kind: IoKind, created: VirtualTime) -> Self {
        IoRequest {
            id,
            source,
            kind,
            lpn: None,
            tpage: None,
            ppa: None,
            src_ppa: None,
            lun: None,
            priority: 0,
            deadline: None,
            payload: None,
            status: IoStatus::Pending,
            measured: false,
            predecessors: Vec::new(),
            times: Timestamps { created, ..Default::default() },
        }
    }

    pub fn with_lpn(mut self, lpn: u64) -> Self {
        self.lpn = Some(lpn);
        self
    }

    pub fn with_ppa(mut self, ppa: Ppa) -> Self {
        self.ppa = Some(ppa);
        self
    }

    pub fn after(mut self, preds: impl IntoIterator<Item = IoId>) -> Self {
        self.predecessors.extend(preds);
        self
    }

    pub fn is_internal(&self) -> bool {
        !matches!(self.source, Source::App(_))
    }
}

/// Hands out globally unique, increasing IO ids.
#[derive(Clone, Debug, Default)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    pub fn next_id(&mut self) -> IoId {
        let id = IoId(self.next);
        self.next += 1;
        id
    }
}
