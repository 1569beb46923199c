//! Per-IO trace rows as CSV, one row per IO in completion order.
//!
//! Empty fields mean "not applicable". Physical addresses are written as
//! `channel:lun:block:page`, predecessor ids are `;`-separated and all
//! timestamps are absolute virtual nanoseconds.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::io::IoRequest;

pub const TRACE_HEADER: &str = "id,source,thread,kind,status,lpn,tpage,ppa,src_ppa,priority,deadline,payload,measured,\
created,os_dispatched,ssd_enqueued,exec_started,completed,predecessors";

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// One CSV line (without the newline).
pub fn trace_row(io: &IoRequest, thread_names: &[String]) -> String {
    let thread = io.source.thread().map(|t| thread_names.get(t.0 as usize).cloned().unwrap_or_else(|| t.0.to_string()));
    let preds: Vec<String> = io.predecessors.iter().map(|p| p.to_string()).collect();
    let t = &io.times;
    let mut line = String::with_capacity(128);
    write!(
        line,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        io.id,
        io.source.label(),
        thread.unwrap_or_default(),
        io.kind,
        io.status.label(),
        opt(io.lpn),
        opt(io.tpage),
        opt(io.ppa),
        opt(io.src_ppa),
        io.priority,
        opt(io.deadline.map(|d| d.0)),
        opt(io.payload),
        u8::from(io.measured),
        t.created.0,
        opt(t.os_dispatched.map(|v| v.0)),
        opt(t.ssd_enqueued.map(|v| v.0)),
        opt(t.exec_started.map(|v| v.0)),
        opt(t.completed.map(|v| v.0)),
        preds.join(";"),
    )
    .unwrap();
    line
}

pub fn write_trace(out: &mut impl Write, trace: &[IoRequest], thread_names: &[String]) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for io in trace {
        writeln!(out, "{}", trace_row(io, thread_names))?;
    }
    Ok(())
}
