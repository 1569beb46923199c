//! Run statistics derived from the trace.
//!
//! The measurement window opens at the creation of the first measured IO
//! and closes at the last completion in the trace. Device counters only
//! include IOs that started executing inside the window.
//!
//! `metrics.csv` has the columns `scope,subject,kind,metric,value`:
//!
//! | scope        | subject          | kind              | metrics |
//! |--------------|------------------|-------------------|---------|
//! | `thread`     | thread name      | io kind or `ALL`  | `count`, `failed`, `throughput_iops`, `latency_mean_ns`, `latency_std_ns`, `latency_p50_ns`, `latency_p99_ns` |
//! | `device`     | `all`            |                   | `window_start_ns`, `window_end_ns`, `app_writes`, `data_programs`, `write_amplification`, `gc_migrations`, `wl_migrations` |
//! | `erase_count`| erase count      |                   | `blocks` |
//! | `channel`    | channel index    |                   | `busy_fraction` |
//! | `lun`        | global LUN index |                   | `busy_fraction` |
//!
//! Durations are integer nanoseconds, ratios carry six fractional digits and
//! undefined values are left empty.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::hardware::{Geometry, Interleaving, TimingProfile};
use crate::io::{IoKind, IoRequest, IoStatus, Source};

pub const METRICS_HEADER: &str = "scope,subject,kind,metric,value";

/// Lower nearest-rank percentile of an ascending sample: index `ceil(q·n/100) − 1`.
pub fn percentile(sorted: &[u64], q: u64) -> u64 {
    debug_assert!(!sorted.is_empty() && (1..=100).contains(&q));
    let rank = (q * sorted.len() as u64).div_ceil(100);
    sorted[rank.max(1) as usize - 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencySummary {
    pub mean_ns: u64,
    pub std_ns: u64,
    pub p50_ns: u64,
    pub p99_ns: u64,
}

impl LatencySummary {
    /// Mean and population standard deviation rounded to whole nanoseconds.
    pub fn of(mut sample: Vec<u64>) -> Option<LatencySummary> {
        if sample.is_empty() {
            return None;
        }
        sample.sort_unstable();
        let n = sample.len() as u128;
        let sum: u128 = sample.iter().map(|&x| x as u128).sum();
        let squares: u128 = sample.iter().map(|&x| x as u128 * x as u128).sum();
        let variance = (n * squares - sum * sum) as f64 / (n * n) as f64;
        Some(LatencySummary {
            mean_ns: ((sum + n / 2) / n) as u64,
            std_ns: variance.sqrt().round() as u64,
            p50_ns: percentile(&sample, 50),
            p99_ns: percentile(&sample, 99),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KindStats {
    pub count: u64,
    pub failed: u64,
    pub throughput_iops: f64,
    pub latency: Option<LatencySummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThreadMetrics {
    pub name: String,
    pub per_kind: BTreeMap<IoKind, KindStats>,
    pub all: KindStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceMetrics {
    pub window_start: u64,
    pub window_end: u64,
    pub app_writes: u64,
    pub data_programs: u64,
    pub write_amplification: Option<f64>,
    pub gc_migrations: u64,
    pub wl_migrations: u64,
    /// Erase count → number of blocks with that count.
    pub erase_histogram: BTreeMap<u64, u64>,
    pub channel_busy: Vec<f64>,
    pub lun_busy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub threads: Vec<ThreadMetrics>,
    pub device: DeviceMetrics,
}

/// What the busy-time accounting needs to know about the hardware.
#[derive(Clone, Copy, Debug)]
pub struct DeviceModel {
    pub geometry: Geometry,
    pub timing: TimingProfile,
    pub interleaving: Interleaving,
}

fn kind_stats(rows: &[&IoRequest], span: u64) -> KindStats {
    let ok: Vec<u64> = rows.iter().filter(|io| io.status == IoStatus::Ok).filter_map(|io| io.times.latency()).collect();
    let count = ok.len() as u64;
    KindStats {
        count,
        failed: rows.iter().filter(|io| io.status == IoStatus::Failed).count() as u64,
        throughput_iops: if span == 0 { 0.0 } else { count as f64 * 1e9 / span as f64 },
        latency: LatencySummary::of(ok),
    }
}

fn is_data_program(io: &IoRequest) -> bool {
    matches!(io.kind, IoKind::Write | IoKind::Copyback)
        && io.status == IoStatus::Ok
        && io.source != Source::Mapping
        && io.tpage.is_none()
}

/// Channel occupancy of one executed command.
fn channel_time(io: &IoRequest, model: &DeviceModel) -> u64 {
    let t = &model.timing;
    match model.interleaving {
        Interleaving::Off if io.kind != IoKind::Trim => {
            io.times.completed.unwrap().0 - io.times.exec_started.unwrap().0
        }
        _ => match io.kind {
            IoKind::Read | IoKind::Write => t.t_cmd + t.t_data,
            _ => t.t_cmd,
        },
    }
}

/// Total length of the union of `[start, end)` intervals.
fn union_length(mut spans: Vec<(u64, u64)>) -> u64 {
    spans.sort_unstable();
    let mut total = 0;
    let mut current: Option<(u64, u64)> = None;
    for (s, e) in spans {
        current = match current {
            Some((cs, ce)) if s <= ce => Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                Some((s, e))
            }
            None => Some((s, e)),
        };
    }
    total + current.map_or(0, |(s, e)| e - s)
}

pub fn compute(trace: &[IoRequest], thread_names: &[String], model: &DeviceModel) -> Metrics {
    let g = &model.geometry;
    let measured: Vec<&IoRequest> = trace.iter().filter(|io| io.measured && io.source.thread().is_some()).collect();
    let window_start = measured.iter().map(|io| io.times.created.0).min().unwrap_or(0);
    let window_end = trace.iter().filter_map(|io| io.times.completed).map(|t| t.0).max().unwrap_or(0).max(window_start);
    let in_window = |io: &&IoRequest| io.times.exec_started.is_some_and(|t| t.0 >= window_start);

    let mut by_thread: BTreeMap<u32, Vec<&IoRequest>> = BTreeMap::new();
    for io in &measured {
        by_thread.entry(io.source.thread().unwrap().0).or_default().push(io);
    }
    let threads = by_thread
        .into_iter()
        .map(|(id, rows)| {
            let first = rows.iter().map(|io| io.times.created.0).min().unwrap();
            let last = rows.iter().filter_map(|io| io.times.completed).map(|t| t.0).max().unwrap_or(first);
            let span = last - first;
            let mut kinds: BTreeMap<IoKind, Vec<&IoRequest>> = BTreeMap::new();
            for io in &rows {
                kinds.entry(io.kind).or_default().push(io);
            }
            ThreadMetrics {
                name: thread_names.get(id as usize).cloned().unwrap_or_else(|| id.to_string()),
                per_kind: kinds.into_iter().map(|(k, r)| (k, kind_stats(&r, span))).collect(),
                all: kind_stats(&rows, span),
            }
        })
        .collect();

    let app_writes = measured.iter().filter(|io| io.kind == IoKind::Write && io.status == IoStatus::Ok).count() as u64;
    let programs = |source: Option<Source>| {
        trace.iter().filter(in_window).filter(|io| is_data_program(io) && source.is_none_or(|s| io.source == s)).count()
            as u64
    };
    let data_programs = programs(None);

    let mut erases: BTreeMap<(u32, u32, u32), u64> = BTreeMap::new();
    for io in trace.iter().filter(|io| io.kind == IoKind::Erase && io.status == IoStatus::Ok) {
        let p = io.ppa.expect("erase rows name their block");
        *erases.entry((p.channel, p.lun, p.block)).or_default() += 1;
    }
    let total_blocks = g.total_luns() as u64 * g.blocks_per_lun as u64;
    let mut erase_histogram: BTreeMap<u64, u64> = BTreeMap::new();
    for &count in erases.values() {
        *erase_histogram.entry(count).or_default() += 1;
    }
    let never = total_blocks - erases.len() as u64;
    if never > 0 {
        erase_histogram.insert(0, never);
    }

    let length = window_end - window_start;
    let fraction = |busy: u64| if length == 0 { 0.0 } else { busy as f64 / length as f64 };
    let hw_rows: Vec<&IoRequest> =
        trace.iter().filter(in_window).filter(|io| io.status == IoStatus::Ok && io.ppa.is_some()).collect();
    let mut channel_busy = vec![0u64; g.channels as usize];
    let mut lun_spans: Vec<Vec<(u64, u64)>> = vec![Vec::new(); g.total_luns() as usize];
    for io in &hw_rows {
        let p = io.ppa.unwrap();
        channel_busy[p.channel as usize] += channel_time(io, model);
        if io.kind != IoKind::Trim {
            let lun = g.lun_of(p).0 as usize;
            lun_spans[lun].push((io.times.exec_started.unwrap().0, io.times.completed.unwrap().0));
        }
    }

    Metrics {
        threads,
        device: DeviceMetrics {
            window_start,
            window_end,
            app_writes,
            data_programs,
            write_amplification: (app_writes > 0).then(|| data_programs as f64 / app_writes as f64),
            gc_migrations: programs(Some(Source::Gc)),
            wl_migrations: programs(Some(Source::Wl)),
            erase_histogram,
            channel_busy: channel_busy.into_iter().map(fraction).collect(),
            lun_busy: lun_spans.into_iter().map(|s| fraction(union_length(s))).collect(),
        },
    }
}

fn ratio(v: f64) -> String {
    format!("{v:.6}")
}

impl Metrics {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        let mut row = |scope: &str, subject: &str, kind: &str, metric: &str, value: String| {
            writeln!(out, "{scope},{subject},{kind},{metric},{value}").unwrap();
        };
        for t in &self.threads {
            let kinds = t.per_kind.iter().map(|(k, s)| (k.label(), s)).chain([("ALL", &t.all)]);
            for (kind, s) in kinds {
                let lat =
                    |f: fn(&LatencySummary) -> u64| s.latency.as_ref().map_or(String::new(), |l| f(l).to_string());
                row("thread", &t.name, kind, "count", s.count.to_string());
                row("thread", &t.name, kind, "failed", s.failed.to_string());
                row("thread", &t.name, kind, "throughput_iops", ratio(s.throughput_iops));
                row("thread", &t.name, kind, "latency_mean_ns", lat(|l| l.mean_ns));
                row("thread", &t.name, kind, "latency_std_ns", lat(|l| l.std_ns));
                row("thread", &t.name, kind, "latency_p50_ns", lat(|l| l.p50_ns));
                row("thread", &t.name, kind, "latency_p99_ns", lat(|l| l.p99_ns));
            }
        }
        let d = &self.device;
        row("device", "all", "", "window_start_ns", d.window_start.to_string());
        row("device", "all", "", "window_end_ns", d.window_end.to_string());
        row("device", "all", "", "app_writes", d.app_writes.to_string());
        row("device", "all", "", "data_programs", d.data_programs.to_string());
        row("device", "all", "", "write_amplification", d.write_amplification.map_or(String::new(), ratio));
        row("device", "all", "", "gc_migrations", d.gc_migrations.to_string());
        row("device", "all", "", "wl_migrations", d.wl_migrations.to_string());
        for (count, blocks) in &d.erase_histogram {
            row("erase_count", &count.to_string(), "", "blocks", blocks.to_string());
        }
        for (i, b) in d.channel_busy.iter().enumerate() {
            row("channel", &i.to_string(), "", "busy_fraction", ratio(*b));
        }
        for (i, b) in d.lun_busy.iter().enumerate() {
            row("lun", &i.to_string(), "", "busy_fraction", ratio(*b));
        }
        out
    }

    pub fn thread(&self, name: &str) -> Option<&ThreadMetrics> {
        self.threads.iter().find(|t| t.name == name)
    }

    /// Largest minus smallest block erase count.
    pub fn erase_spread(&self) -> u64 {
        let h = &self.device.erase_histogram;
        match (h.keys().next(), h.keys().next_back()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0,
        }
    }
}
