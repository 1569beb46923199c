//! INI-style configuration: `[section]` headers, `key = value` entries,
//! `#`/`;` comments. Every entry is addressable by its dotted path
//! (`controller.greediness_K`, `workload.reader.window`).
//!
//! A file may start with `include = <preset>` to layer its entries over a
//! shipped preset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::gc_wl::GcConfig;
use crate::hardware::{CellType, Interleaving};
use crate::host_os::{OsConfig, OsPolicy};
use crate::mapping::{logical_page_count, MappingScheme};
use crate::sim::{SimConfig, ThreadSpec};
use crate::temperature::DetectorConfig;
use crate::workloads::{
    precondition, ExtentAllocator, GraceHashJoin, PermutationWriter, PreconditionMode, RandomReader, RandomWriter,
    SequentialReader, SequentialWriter, Skew, Windowed, Workload, DEFAULT_WINDOW,
};

pub const PRESETS: [(&str, &str); 5] = [
    ("slc-small", include_str!("../presets/slc-small.ini")),
    ("mlc-small", include_str!("../presets/mlc-small.ini")),
    ("fifo-baseline", include_str!("../presets/fifo-baseline.ini")),
    ("priority-reads", include_str!("../presets/priority-reads.ini")),
    ("open-interface-on", include_str!("../presets/open-interface-on.ini")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("{key} = {value:?}: expected {expected}")]
    BadValue { key: String, value: String, expected: String },
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
    }
}

const THREAD_KEYS: [&str; 19] = [
    "generator",
    "start",
    "count",
    "passes",
    "ios",
    "window",
    "depends_on",
    "measured",
    "hot_fraction",
    "hot_write_prob",
    "hint_temperature",
    "tag_priority",
    "deadline_ns",
    "r_pages",
    "s_pages",
    "partitions",
    "locality_tags",
    "extent_pages",
    "ops",
];

/// Raw entries keyed by dotted path, in insertion-independent order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Config::parse(&text)
    }

    /// Loads a file, or a shipped preset when `spec` names one and no such file exists.
    pub fn load_or_preset(spec: &str) -> Result<Config, ConfigError> {
        let path = Path::new(spec);
        if !path.exists() {
            if let Some(text) = preset(spec) {
                return Config::parse(text);
            }
        }
        Config::load(path)
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut config = Config::default();
        let mut included: Vec<String> = Vec::new();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') || content.starts_with(';') {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, message: format!("unterminated section {content:?}") })?
                    .trim();
                if name.is_empty() {
                    return Err(ConfigError::Syntax { line, message: "empty section name".into() });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected key = value, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match &section {
                None if key == "include" => {
                    let base = preset(value).ok_or_else(|| ConfigError::UnknownPreset(value.to_string()))?;
                    let base = Config::parse(base)?;
                    included.extend(base.entries.keys().cloned());
                    config.entries.extend(base.entries);
                }
                None => return Err(ConfigError::Syntax { line, message: format!("{key} outside any section") }),
                Some(s) => {
                    let path = format!("{s}.{key}");
                    config.set(&path, value)?;
                    included.retain(|k| *k != path);
                }
            }
        }
        // A redefined thread list drops inherited settings of threads it no longer names.
        if !included.iter().any(|k| k == "workload.threads") {
            let names = config.get("workload.threads").map(parse_list).unwrap_or_default();
            for key in included {
                let thread = key.strip_prefix("workload.").and_then(|r| r.split_once('.')).map(|(t, _)| t);
                if thread.is_some_and(|t| !names.iter().any(|n| n == t)) {
                    config.entries.remove(&key);
                }
            }
        }
        Ok(config)
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.entries.get(path).map(String::as_str)
    }

    /// Sets one entry; unknown paths and malformed values are rejected here.
    pub fn set(&mut self, path: &str, value: &str) -> Result<(), ConfigError> {
        check_entry(path, value)?;
        self.entries.insert(path.to_string(), value.to_string());
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let mut sim = SimConfig::default();
        let mut cmt_capacity: Option<u64> = None;
        let mut dftl = false;
        let mut queue_depth: Option<usize> = None;
        for (path, value) in self.entries.range("controller.".to_string().."controller/".to_string()) {
            if path == "controller.scheme" {
                dftl = value == "dftl";
            } else if path == "controller.cmt_capacity" {
                cmt_capacity = Some(parse_u64(path, value)?);
            }
        }
        for (path, value) in &self.entries {
            match path.split_once('.').map(|(s, _)| s) {
                Some("controller") if path == "controller.cmt_capacity" => {}
                Some("hardware") | Some("controller") => apply_device(&mut sim, path, value)?,
                Some("os") if path == "os.queue_depth" => queue_depth = Some(parse_u64(path, value)? as usize),
                Some("os") => apply_device(&mut sim, path, value)?,
                _ => {}
            }
        }
        let logical_pages = logical_page_count(&sim.geometry, sim.overprovision);
        sim.scheme = match dftl {
            true => MappingScheme::Dftl { cmt_capacity: cmt_capacity.unwrap_or((logical_pages / 100).max(1)) as usize },
            false => MappingScheme::PageMap,
        };
        sim.os.queue_depth = queue_depth.unwrap_or(2 * sim.geometry.total_luns() as usize);
        validate_device(&sim)?;
        let workload = WorkloadPlan::resolve(self, logical_pages)?;
        let experiment = ExperimentPlan::resolve(self)?;
        Ok(Resolved { sim, logical_pages, workload, experiment })
    }
}

fn bad(key: &str, value: &str, expected: &str) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), value: value.to_string(), expected: expected.to_string() }
}

fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    value.replace('_', "").parse().map_err(|_| bad(key, value, "an unsigned integer"))
}

fn parse_u32(key: &str, value: &str) -> Result<u32, ConfigError> {
    value.replace('_', "").parse().map_err(|_| bad(key, value, "an unsigned 32-bit integer"))
}

fn parse_i32(key: &str, value: &str) -> Result<i32, ConfigError> {
    value.parse().map_err(|_| bad(key, value, "an integer"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(bad(key, value, "a number")),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn parse_fraction(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v = parse_f64(key, value)?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(bad(key, value, "a fraction in [0, 1)"))
    }
}

fn parse_optional_ns(key: &str, value: &str) -> Result<Option<u64>, ConfigError> {
    match value {
        "none" => Ok(None),
        v => parse_u64(key, v).map(Some),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

fn check_entry(path: &str, value: &str) -> Result<(), ConfigError> {
    let Some((section, key)) = path.split_once('.') else {
        return Err(ConfigError::UnknownKey(path.to_string()));
    };
    match section {
        "hardware" | "controller" | "os" => {
            if path == "controller.cmt_capacity" || path == "os.queue_depth" {
                parse_u64(path, value).map(drop)
            } else {
                apply_device(&mut SimConfig::default(), path, value)
            }
        }
        "workload" => check_workload_entry(path, key, value),
        "experiment" => match key {
            "name" | "param" | "values" => Ok(()),
            "seeds" => parse_u64(path, value).map(drop),
            _ => Err(ConfigError::UnknownKey(path.to_string())),
        },
        _ => Err(ConfigError::UnknownKey(path.to_string())),
    }
}

/// Applies one hardware, controller or os entry.
fn apply_device(sim: &mut SimConfig, path: &str, value: &str) -> Result<(), ConfigError> {
    let g = &mut sim.geometry;
    let t = &mut sim.timing;
    let class = |sim: &mut SimConfig, i: usize| -> Result<(), ConfigError> {
        sim.scheduler.class_priority[i] = parse_i32(path, value)?;
        Ok(())
    };
    match path {
        "hardware.channels" => g.channels = parse_u32(path, value)?,
        "hardware.luns_per_channel" => g.luns_per_channel = parse_u32(path, value)?,
        "hardware.blocks_per_lun" => g.blocks_per_lun = parse_u32(path, value)?,
        "hardware.pages_per_block" => g.pages_per_block = parse_u32(path, value)?,
        "hardware.page_size_bytes" => g.page_size_bytes = parse_u32(path, value)?,
        "hardware.cell_type" => {
            t.cell_type = match value {
                "SLC" | "slc" => CellType::Slc,
                "MLC" | "mlc" => CellType::Mlc,
                _ => return Err(bad(path, value, "SLC or MLC")),
            }
        }
        "hardware.t_cmd" => t.t_cmd = parse_u64(path, value)?,
        "hardware.t_data" => t.t_data = parse_u64(path, value)?,
        "hardware.t_read" => t.t_read = parse_u64(path, value)?,
        "hardware.t_prog_fast" => t.t_prog_fast = parse_u64(path, value)?,
        "hardware.t_prog_slow" => t.t_prog_slow = parse_u64(path, value)?,
        "hardware.t_erase" => t.t_erase = parse_u64(path, value)?,
        "hardware.advanced_commands" => {
            t.copyback = false;
            t.pipelined_program = false;
            for cmd in parse_list(value) {
                match cmd.as_str() {
                    "copyback" => t.copyback = true,
                    "pipelined_program" => t.pipelined_program = true,
                    "none" => {}
                    _ => return Err(bad(path, value, "a list drawn from copyback, pipelined_program")),
                }
            }
        }
        "hardware.ram_bytes" => sim.ram_bytes = parse_u64(path, value)?,
        "hardware.bbram_bytes" => sim.bbram_bytes = parse_u64(path, value)?,
        "controller.scheme" => {
            if !matches!(value, "pagemap" | "dftl") {
                return Err(bad(path, value, "pagemap or dftl"));
            }
        }
        "controller.overprovision_fraction" => sim.overprovision = parse_fraction(path, value)?,
        "controller.greediness_K" => sim.gc.greediness = parse_u32(path, value)?,
        "controller.copyback_enabled" => sim.gc.copyback = parse_bool(path, value)?,
        "controller.wl_enabled" => sim.wl_enabled = parse_bool(path, value)?,
        "controller.staleness_factor" => sim.staleness_factor = parse_u64(path, value)?,
        "controller.wl_scan_interval" => sim.wl_scan_interval = parse_u64(path, value)?,
        "controller.detector_enabled" => sim.detector_enabled = parse_bool(path, value)?,
        "controller.detector_filters" => sim.detector.filters = parse_u64(path, value)? as usize,
        "controller.detector_bits_per_filter" => sim.detector.bits_per_filter = parse_u64(path, value)? as usize,
        "controller.detector_hashes" => sim.detector.hashes = parse_u32(path, value)?,
        "controller.window_writes" => sim.detector.window_writes = parse_u64(path, value)?,
        "controller.hot_threshold" => sim.detector.hot_threshold = parse_u64(path, value)? as usize,
        "controller.class_priority_mapping" => class(sim, 0)?,
        "controller.class_priority_app" => class(sim, 1)?,
        "controller.class_priority_gc" => class(sim, 2)?,
        "controller.class_priority_wl" => class(sim, 3)?,
        "controller.reads_over_writes" => sim.scheduler.reads_over_writes = parse_bool(path, value)?,
        "controller.deadline_boost" => sim.scheduler.deadline_boost = parse_bool(path, value)?,
        "controller.greedy_lookahead" => sim.scheduler.greedy_lookahead = parse_bool(path, value)?,
        "controller.interleaving" => {
            sim.interleaving = match value {
                "ON" | "on" => Interleaving::On,
                "OFF" | "off" => Interleaving::Off,
                _ => return Err(bad(path, value, "ON or OFF")),
            }
        }
        "controller.read_deadline_ns" => sim.read_deadline = parse_optional_ns(path, value)?,
        "controller.write_deadline_ns" => sim.write_deadline = parse_optional_ns(path, value)?,
        "os.policy" => {
            sim.os.policy = match value {
                "FIFO" | "fifo" => OsPolicy::Fifo,
                "PRIORITY" | "priority" => OsPolicy::Priority,
                "FAIR_SHARE" | "fair_share" => OsPolicy::FairShare,
                _ => return Err(bad(path, value, "FIFO, PRIORITY or FAIR_SHARE")),
            }
        }
        "os.open_interface" => sim.os.open_interface = parse_bool(path, value)?,
        _ => return Err(ConfigError::UnknownKey(path.to_string())),
    }
    Ok(())
}

fn validate_device(sim: &SimConfig) -> Result<(), ConfigError> {
    let g = &sim.geometry;
    for (key, v) in [
        ("hardware.channels", g.channels),
        ("hardware.luns_per_channel", g.luns_per_channel),
        ("hardware.blocks_per_lun", g.blocks_per_lun),
        ("hardware.pages_per_block", g.pages_per_block),
        ("hardware.page_size_bytes", g.page_size_bytes),
    ] {
        if v == 0 {
            return Err(ConfigError::invalid(key, "must be at least 1"));
        }
    }
    let t = &sim.timing;
    for (key, v) in [
        ("hardware.t_cmd", t.t_cmd),
        ("hardware.t_data", t.t_data),
        ("hardware.t_read", t.t_read),
        ("hardware.t_prog_fast", t.t_prog_fast),
        ("hardware.t_prog_slow", t.t_prog_slow),
        ("hardware.t_erase", t.t_erase),
    ] {
        if v == 0 {
            return Err(ConfigError::invalid(key, "durations must be positive"));
        }
    }
    if sim.gc.greediness == 0 || sim.gc.greediness >= g.blocks_per_lun {
        return Err(ConfigError::invalid("controller.greediness_K", "must lie in [1, blocks_per_lun)"));
    }
    if sim.gc.trigger_floor() >= g.blocks_per_lun {
        return Err(ConfigError::invalid("controller.greediness_K", "leaves no block for data beyond the reserve"));
    }
    if sim.os.queue_depth == 0 {
        return Err(ConfigError::invalid("os.queue_depth", "must be at least 1"));
    }
    if logical_page_count(g, sim.overprovision) == 0 {
        return Err(ConfigError::invalid("controller.overprovision_fraction", "leaves no logical pages"));
    }
    if sim.detector.filters == 0 || sim.detector.bits_per_filter == 0 || sim.detector.window_writes == 0 {
        return Err(ConfigError::invalid("controller.detector_filters", "detector dimensions must be positive"));
    }
    if let MappingScheme::Dftl { cmt_capacity: 0 } = sim.scheme {
        return Err(ConfigError::invalid("controller.cmt_capacity", "must be at least 1"));
    }
    Ok(())
}

fn check_workload_entry(path: &str, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "threads" => {
            let names = parse_list(value);
            for name in &names {
                if name.contains('.') || name.contains('=') || name.contains('/') {
                    return Err(bad(path, value, "thread names without '.', '=' or '/'"));
                }
            }
            Ok(())
        }
        "precondition" => parse_precondition(path, value).map(drop),
        "window" => parse_u64(path, value).map(drop),
        _ => match key.split_once('.') {
            Some((_, field)) if THREAD_KEYS.contains(&field) => check_thread_field(path, field, value),
            _ => Err(ConfigError::UnknownKey(path.to_string())),
        },
    }
}

fn check_thread_field(path: &str, field: &str, value: &str) -> Result<(), ConfigError> {
    match field {
        "generator" => Generator::parse(path, value).map(drop),
        "depends_on" => Ok(()),
        "measured" | "hint_temperature" | "locality_tags" => parse_bool(path, value).map(drop),
        "hot_fraction" | "hot_write_prob" => {
            let v = parse_f64(path, value)?;
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(bad(path, value, "a fraction in [0, 1]"))
            }
        }
        "tag_priority" => parse_i32(path, value).map(drop),
        "deadline_ns" => parse_optional_ns(path, value).map(drop),
        _ => parse_u64(path, value).map(drop),
    }
}

fn parse_precondition(key: &str, value: &str) -> Result<PreconditionMode, ConfigError> {
    Ok(match value {
        "none" | "NONE" => PreconditionMode::None,
        "sequential" | "SEQUENTIAL" => PreconditionMode::Sequential,
        "random" | "RANDOM" => PreconditionMode::Random,
        "seq_then_random" | "SEQ_THEN_RANDOM" => PreconditionMode::SeqThenRandom,
        _ => return Err(bad(key, value, "none, sequential, random or seq_then_random")),
    })
}

fn precondition_name(mode: PreconditionMode) -> &'static str {
    match mode {
        PreconditionMode::None => "none",
        PreconditionMode::Sequential => "sequential",
        PreconditionMode::Random => "random",
        PreconditionMode::SeqThenRandom => "seq_then_random",
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    SequentialWriter,
    SequentialReader,
    PermutationWriter,
    RandomWriter,
    RandomReader,
    GraceHashJoin,
    ExtentAllocator,
}

impl Generator {
    const ALL: [(Generator, &'static str); 7] = [
        (Generator::SequentialWriter, "sequential_writer"),
        (Generator::SequentialReader, "sequential_reader"),
        (Generator::PermutationWriter, "permutation_writer"),
        (Generator::RandomWriter, "random_writer"),
        (Generator::RandomReader, "random_reader"),
        (Generator::GraceHashJoin, "grace_hash_join"),
        (Generator::ExtentAllocator, "extent_allocator"),
    ];

    fn parse(key: &str, value: &str) -> Result<Generator, ConfigError> {
        Self::ALL.iter().find(|(_, n)| *n == value).map(|(g, _)| *g).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|(_, n)| *n).collect();
            bad(key, value, &names.join(", "))
        })
    }

    pub fn name(self) -> &'static str {
        Self::ALL.iter().find(|(g, _)| *g == self).unwrap().1
    }

    /// Generator-specific keys; the common ones are always allowed.
    fn fields(self) -> &'static [&'static str] {
        match self {
            Generator::SequentialWriter => &["start", "count", "passes"],
            Generator::SequentialReader | Generator::PermutationWriter => &["start", "count"],
            Generator::RandomWriter => &["start", "count", "ios", "hot_fraction", "hot_write_prob", "hint_temperature"],
            Generator::RandomReader => &["start", "count", "ios", "tag_priority", "deadline_ns"],
            Generator::GraceHashJoin => &["start", "r_pages", "s_pages", "partitions", "locality_tags"],
            Generator::ExtentAllocator => &["start", "count", "extent_pages", "ops"],
        }
    }
}

const COMMON_THREAD_KEYS: [&str; 4] = ["generator", "window", "depends_on", "measured"];

/// One configured workload thread with every default filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct ThreadPlan {
    pub name: String,
    pub generator: Generator,
    pub window: usize,
    pub depends_on: Vec<String>,
    pub measured: bool,
    pub start: u64,
    pub count: u64,
    pub passes: u64,
    pub ios: u64,
    pub skew: Option<Skew>,
    pub hint_temperature: bool,
    pub tag_priority: i32,
    pub deadline: Option<u64>,
    pub r_pages: u64,
    pub s_pages: u64,
    pub partitions: u64,
    pub locality_tags: bool,
    pub extent_pages: u64,
    pub ops: u64,
}

impl ThreadPlan {
    fn resolve(
        config: &Config,
        name: &str,
        default_window: usize,
        logical_pages: u64,
    ) -> Result<ThreadPlan, ConfigError> {
        let prefix = format!("workload.{name}.");
        let fields: BTreeMap<&str, (&str, &str)> = config
            .entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|f| (f, (k.as_str(), v.as_str()))))
            .collect();
        let gen_key = format!("{prefix}generator");
        let generator = match fields.get("generator") {
            Some((k, v)) => Generator::parse(k, v)?,
            None => return Err(ConfigError::invalid(&gen_key, "every listed thread needs a generator")),
        };
        for (field, (key, _)) in &fields {
            if !COMMON_THREAD_KEYS.contains(field) && !generator.fields().contains(field) {
                return Err(ConfigError::invalid(key, format!("not a {} parameter", generator.name())));
            }
        }
        let uint = |f: &str, default: u64| -> Result<u64, ConfigError> {
            fields.get(f).map_or(Ok(default), |(k, v)| parse_u64(k, v))
        };
        let flag = |f: &str, default: bool| -> Result<bool, ConfigError> {
            fields.get(f).map_or(Ok(default), |(k, v)| parse_bool(k, v))
        };
        let frac =
            |f: &str| -> Result<Option<f64>, ConfigError> { fields.get(f).map(|(k, v)| parse_f64(k, v)).transpose() };
        let start = uint("start", 0)?;
        if start >= logical_pages {
            return Err(ConfigError::invalid(
                &format!("{prefix}start"),
                format!("beyond the {logical_pages} logical pages"),
            ));
        }
        let count = uint("count", logical_pages - start)?;
        if count == 0 || start + count > logical_pages {
            return Err(ConfigError::invalid(
                &format!("{prefix}count"),
                format!("range must be non-empty and within the {logical_pages} logical pages"),
            ));
        }
        let skew = match (frac("hot_fraction")?, frac("hot_write_prob")?) {
            (None, None) => None,
            (h, p) => Some(Skew { hot_fraction: h.unwrap_or(0.1), hot_write_prob: p.unwrap_or(0.9) }),
        };
        let deadline = match fields.get("deadline_ns") {
            Some((k, v)) => parse_optional_ns(k, v)?,
            None => None,
        };
        let window = uint("window", default_window as u64)? as usize;
        if window == 0 {
            return Err(ConfigError::invalid(&format!("{prefix}window"), "must be at least 1"));
        }
        let plan = ThreadPlan {
            name: name.to_string(),
            generator,
            window,
            depends_on: fields.get("depends_on").map(|(_, v)| parse_list(v)).unwrap_or_default(),
            measured: flag("measured", true)?,
            start,
            count,
            passes: uint("passes", 1)?,
            ios: uint("ios", count)?,
            skew,
            hint_temperature: flag("hint_temperature", false)?,
            tag_priority: fields.get("tag_priority").map_or(Ok(0), |(k, v)| parse_i32(k, v))?,
            deadline,
            r_pages: uint("r_pages", (count / 8).max(1))?,
            s_pages: uint("s_pages", (count / 4).max(1))?,
            partitions: uint("partitions", 4)?,
            locality_tags: flag("locality_tags", true)?,
            extent_pages: uint("extent_pages", 16)?,
            ops: uint("ops", 1000)?,
        };
        if generator == Generator::GraceHashJoin {
            let footprint = GraceHashJoin::new(plan.start, plan.r_pages, plan.s_pages, plan.partitions).footprint();
            if plan.start + footprint > logical_pages {
                return Err(ConfigError::invalid(
                    &format!("{prefix}r_pages"),
                    format!("join needs {footprint} pages from lpn {start}, beyond the {logical_pages} logical pages"),
                ));
            }
        }
        if generator == Generator::ExtentAllocator && (plan.extent_pages == 0 || plan.extent_pages > plan.count) {
            return Err(ConfigError::invalid(&format!("{prefix}extent_pages"), "must lie in [1, count]"));
        }
        Ok(plan)
    }

    pub fn build(&self) -> Box<dyn Workload> {
        let w = self.window;
        match self.generator {
            Generator::SequentialWriter => {
                Box::new(Windowed::new(SequentialWriter::new(self.start, self.count, self.passes), w))
            }
            Generator::SequentialReader => Box::new(Windowed::new(SequentialReader::new(self.start, self.count), w)),
            Generator::PermutationWriter => Box::new(Windowed::new(PermutationWriter::new(self.start, self.count), w)),
            Generator::RandomWriter => {
                let mut g = RandomWriter::new(self.start, self.count, self.ios);
                g.skew = self.skew;
                g.hint_temperature = self.hint_temperature;
                Box::new(Windowed::new(g, w))
            }
            Generator::RandomReader => {
                let mut g = RandomReader::new(self.start, self.count, self.ios);
                g.tag_priority = self.tag_priority;
                g.deadline = self.deadline;
                Box::new(Windowed::new(g, w))
            }
            Generator::GraceHashJoin => {
                let mut g = GraceHashJoin::new(self.start, self.r_pages, self.s_pages, self.partitions);
                g.locality_tags = self.locality_tags;
                Box::new(Windowed::new(g, w))
            }
            Generator::ExtentAllocator => {
                Box::new(Windowed::new(ExtentAllocator::new(self.start, self.count, self.extent_pages, self.ops), w))
            }
        }
    }

    fn echo(&self, out: &mut String) {
        let n = &self.name;
        let mut line = |k: &str, v: String| writeln!(out, "{n}.{k} = {v}").unwrap();
        line("generator", self.generator.name().to_string());
        line("window", self.window.to_string());
        line("depends_on", self.depends_on.join(","));
        line("measured", self.measured.to_string());
        for field in self.generator.fields() {
            let v = match *field {
                "start" => self.start.to_string(),
                "count" => self.count.to_string(),
                "passes" => self.passes.to_string(),
                "ios" => self.ios.to_string(),
                "hot_fraction" => match self.skew {
                    Some(s) => s.hot_fraction.to_string(),
                    None => continue,
                },
                "hot_write_prob" => match self.skew {
                    Some(s) => s.hot_write_prob.to_string(),
                    None => continue,
                },
                "hint_temperature" => self.hint_temperature.to_string(),
                "tag_priority" => self.tag_priority.to_string(),
                "deadline_ns" => self.deadline.map_or("none".to_string(), |d| d.to_string()),
                "r_pages" => self.r_pages.to_string(),
                "s_pages" => self.s_pages.to_string(),
                "partitions" => self.partitions.to_string(),
                "locality_tags" => self.locality_tags.to_string(),
                "extent_pages" => self.extent_pages.to_string(),
                "ops" => self.ops.to_string(),
                other => unreachable!("unrendered field {other}"),
            };
            line(field, v);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadPlan {
    pub precondition: PreconditionMode,
    pub window: usize,
    pub threads: Vec<ThreadPlan>,
}

impl WorkloadPlan {
    fn resolve(config: &Config, logical_pages: u64) -> Result<WorkloadPlan, ConfigError> {
        let precondition = match config.get("workload.precondition") {
            Some(v) => parse_precondition("workload.precondition", v)?,
            None => PreconditionMode::None,
        };
        let window = match config.get("workload.window") {
            Some(v) => parse_u64("workload.window", v)? as usize,
            None => DEFAULT_WINDOW,
        };
        if window == 0 {
            return Err(ConfigError::invalid("workload.window", "must be at least 1"));
        }
        let names = config.get("workload.threads").map(parse_list).unwrap_or_default();
        for (key, _) in config.entries() {
            if let Some(rest) = key.strip_prefix("workload.") {
                if let Some((thread, _)) = rest.split_once('.') {
                    if !names.iter().any(|n| n == thread) {
                        return Err(ConfigError::invalid(
                            key,
                            format!("thread {thread:?} is not listed in workload.threads"),
                        ));
                    }
                }
            }
        }
        let mut threads = Vec::new();
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(ConfigError::invalid("workload.threads", format!("duplicate thread {name:?}")));
            }
            let plan = ThreadPlan::resolve(config, name, window, logical_pages)?;
            for dep in &plan.depends_on {
                if !names.contains(dep) || dep == name {
                    return Err(ConfigError::invalid(
                        &format!("workload.{name}.depends_on"),
                        format!("{dep:?} is not another listed thread"),
                    ));
                }
            }
            threads.push(plan);
        }
        Ok(WorkloadPlan { precondition, window, threads })
    }

    /// Fresh thread instances: preparation threads first, then the configured ones,
    /// which wait for preparation to finish.
    pub fn build(&self, logical_pages: u64) -> Vec<ThreadSpec> {
        let mut specs = Vec::new();
        let mut previous: Option<String> = None;
        for (name, workload) in precondition(self.precondition, logical_pages, self.window) {
            let depends_on = previous.iter().cloned().collect();
            previous = Some(name.clone());
            specs.push(ThreadSpec { name, workload, depends_on, measured: false });
        }
        for plan in &self.threads {
            let mut depends_on = plan.depends_on.clone();
            depends_on.extend(previous.iter().cloned());
            specs.push(ThreadSpec {
                name: plan.name.clone(),
                workload: plan.build(),
                depends_on,
                measured: plan.measured,
            });
        }
        specs
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExperimentPlan {
    pub name: Option<String>,
    pub param: Option<String>,
    pub values: Vec<String>,
    pub seeds: Option<u64>,
}

impl ExperimentPlan {
    fn resolve(config: &Config) -> Result<ExperimentPlan, ConfigError> {
        Ok(ExperimentPlan {
            name: config.get("experiment.name").map(str::to_string),
            param: config.get("experiment.param").map(str::to_string),
            values: config.get("experiment.values").map(parse_list).unwrap_or_default(),
            seeds: config.get("experiment.seeds").map(|v| parse_u64("experiment.seeds", v)).transpose()?,
        })
    }
}

/// A fully defaulted configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub sim: SimConfig,
    pub logical_pages: u64,
    pub workload: WorkloadPlan,
    pub experiment: ExperimentPlan,
}

impl Resolved {
    pub fn threads(&self) -> Vec<ThreadSpec> {
        self.workload.build(self.logical_pages)
    }

    /// Every effective value as a config file that resolves to `self` again.
    pub fn echo(&self) -> String {
        let s = &self.sim;
        let (g, t) = (&s.geometry, &s.timing);
        let mut out = String::new();
        let mut advanced = Vec::new();
        if t.copyback {
            advanced.push("copyback");
        }
        if t.pipelined_program {
            advanced.push("pipelined_program");
        }
        if advanced.is_empty() {
            advanced.push("none");
        }
        section(
            &mut out,
            "hardware",
            vec![
                ("channels", g.channels.to_string()),
                ("luns_per_channel", g.luns_per_channel.to_string()),
                ("blocks_per_lun", g.blocks_per_lun.to_string()),
                ("pages_per_block", g.pages_per_block.to_string()),
                ("page_size_bytes", g.page_size_bytes.to_string()),
                (
                    "cell_type",
                    match t.cell_type {
                        CellType::Slc => "SLC".into(),
                        CellType::Mlc => "MLC".into(),
                    },
                ),
                ("t_cmd", t.t_cmd.to_string()),
                ("t_data", t.t_data.to_string()),
                ("t_read", t.t_read.to_string()),
                ("t_prog_fast", t.t_prog_fast.to_string()),
                ("t_prog_slow", t.t_prog_slow.to_string()),
                ("t_erase", t.t_erase.to_string()),
                ("advanced_commands", advanced.join(",")),
                ("ram_bytes", s.ram_bytes.to_string()),
                ("bbram_bytes", s.bbram_bytes.to_string()),
            ],
        );
        let mut controller = vec![(
            "scheme",
            match s.scheme {
                MappingScheme::PageMap => "pagemap".to_string(),
                MappingScheme::Dftl { .. } => "dftl".to_string(),
            },
        )];
        if let MappingScheme::Dftl { cmt_capacity } = s.scheme {
            controller.push(("cmt_capacity", cmt_capacity.to_string()));
        }
        let d: &DetectorConfig = &s.detector;
        let gc: &GcConfig = &s.gc;
        let p = &s.scheduler;
        let ns = |v: Option<u64>| v.map_or("none".to_string(), |d| d.to_string());
        controller.extend([
            ("overprovision_fraction", s.overprovision.to_string()),
            ("greediness_K", gc.greediness.to_string()),
            ("copyback_enabled", gc.copyback.to_string()),
            ("wl_enabled", s.wl_enabled.to_string()),
            ("staleness_factor", s.staleness_factor.to_string()),
            ("wl_scan_interval", s.wl_scan_interval.to_string()),
            ("detector_enabled", s.detector_enabled.to_string()),
            ("detector_filters", d.filters.to_string()),
            ("detector_bits_per_filter", d.bits_per_filter.to_string()),
            ("detector_hashes", d.hashes.to_string()),
            ("window_writes", d.window_writes.to_string()),
            ("hot_threshold", d.hot_threshold.to_string()),
            ("class_priority_mapping", p.class_priority[0].to_string()),
            ("class_priority_app", p.class_priority[1].to_string()),
            ("class_priority_gc", p.class_priority[2].to_string()),
            ("class_priority_wl", p.class_priority[3].to_string()),
            ("reads_over_writes", p.reads_over_writes.to_string()),
            ("deadline_boost", p.deadline_boost.to_string()),
            ("greedy_lookahead", p.greedy_lookahead.to_string()),
            (
                "interleaving",
                match s.interleaving {
                    Interleaving::On => "ON".into(),
                    Interleaving::Off => "OFF".into(),
                },
            ),
            ("read_deadline_ns", ns(s.read_deadline)),
            ("write_deadline_ns", ns(s.write_deadline)),
        ]);
        section(&mut out, "controller", controller);
        let os: &OsConfig = &s.os;
        section(
            &mut out,
            "os",
            vec![
                ("queue_depth", os.queue_depth.to_string()),
                (
                    "policy",
                    match os.policy {
                        OsPolicy::Fifo => "FIFO".into(),
                        OsPolicy::Priority => "PRIORITY".into(),
                        OsPolicy::FairShare => "FAIR_SHARE".into(),
                    },
                ),
                ("open_interface", os.open_interface.to_string()),
            ],
        );
        let w = &self.workload;
        let names: Vec<&str> = w.threads.iter().map(|t| t.name.as_str()).collect();
        out.push_str("[workload]\n");
        writeln!(out, "precondition = {}", precondition_name(w.precondition)).unwrap();
        writeln!(out, "window = {}", w.window).unwrap();
        writeln!(out, "threads = {}", names.join(",")).unwrap();
        for plan in &w.threads {
            plan.echo(&mut out);
        }
        let e = &self.experiment;
        let mut exp = Vec::new();
        if let Some(n) = &e.name {
            exp.push(("name", n.clone()));
        }
        if let Some(p) = &e.param {
            exp.push(("param", p.clone()));
        }
        if !e.values.is_empty() {
            exp.push(("values", e.values.join(",")));
        }
        if let Some(s) = e.seeds {
            exp.push(("seeds", s.to_string()));
        }
        if !exp.is_empty() {
            out.push('\n');
            section(&mut out, "experiment", exp);
        }
        out
    }
}

fn section(out: &mut String, name: &str, entries: Vec<(&str, String)>) {
    writeln!(out, "[{name}]").unwrap();
    for (k, v) in entries {
        writeln!(out, "{k} = {v}").unwrap();
    }
    out.push('\n');
}
