//! Messages threads send to the OS, and their one-line text encoding.
//!
//! ```text
//! SUBMIT_IO <READ|WRITE> <lpn> [priority=<i32>] [deadline=<ns after creation>]
//! TRIM <lpn>
//! TAG_PRIORITY <io id> <i32>
//! TAG_TEMPERATURE <first lpn> <last lpn> <HOT|COLD>
//! TAG_LOCALITY <group id> <lpn>[,<lpn>...]
//! ```
//!
//! Further kinds can be registered in a [`MessageRegistry`]; they parse into
//! [`Message::Custom`] and are forwarded to the controller untouched.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::io::{IoId, IoKind};
use crate::temperature::Temperature;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    SubmitIo {
        kind: IoKind,
        lpn: u64,
        priority: i32,
        deadline: Option<u64>,
    },
    Trim {
        lpn: u64,
    },
    TagPriority {
        io: IoId,
        priority: i32,
    },
    /// Inclusive lpn range.
    TagTemperature {
        start: u64,
        end: u64,
        temperature: Temperature,
    },
    TagLocality {
        group: u32,
        lpns: Vec<u64>,
    },
    Custom {
        kind: String,
        args: Vec<String>,
    },
}

impl Message {
    pub fn kind(&self) -> &str {
        match self {
            Message::SubmitIo { .. } => "SUBMIT_IO",
            Message::Trim { .. } => "TRIM",
            Message::TagPriority { .. } => "TAG_PRIORITY",
            Message::TagTemperature { .. } => "TAG_TEMPERATURE",
            Message::TagLocality { .. } => "TAG_LOCALITY",
            Message::Custom { kind, .. } => kind,
        }
    }

    pub fn is_tag(&self) -> bool {
        !matches!(self, Message::SubmitIo { .. } | Message::Trim { .. })
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())?;
        match self {
            Message::SubmitIo { kind, lpn, priority, deadline } => {
                write!(f, " {kind} {lpn}")?;
                if *priority != 0 {
                    write!(f, " priority={priority}")?;
                }
                if let Some(d) = deadline {
                    write!(f, " deadline={d}")?;
                }
                Ok(())
            }
            Message::Trim { lpn } => write!(f, " {lpn}"),
            Message::TagPriority { io, priority } => write!(f, " {io} {priority}"),
            Message::TagTemperature { start, end, temperature } => write!(f, " {start} {end} {temperature}"),
            Message::TagLocality { group, lpns } => {
                let list: Vec<String> = lpns.iter().map(u64::to_string).collect();
                write!(f, " {group} {}", list.join(","))
            }
            Message::Custom { args, .. } => args.iter().try_for_each(|a| write!(f, " {a}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error("empty message")]
    Empty,
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("{kind}: {reason}")]
    BadPayload { kind: String, reason: String },
}

/// Validates the arguments of a registered custom kind.
pub type PayloadCheck = fn(&[String]) -> Result<(), String>;

/// Message kinds accepted beyond the built-in ones.
#[derive(Clone, Debug, Default)]
pub struct MessageRegistry {
    custom: BTreeMap<String, PayloadCheck>,
}

impl MessageRegistry {
    pub fn register(&mut self, kind: &str, check: PayloadCheck) {
        self.custom.insert(kind.to_string(), check);
    }

    pub fn is_registered(&self, kind: &str) -> bool {
        self.custom.contains_key(kind)
    }

    pub fn parse(&self, line: &str) -> Result<Message, MessageError> {
        let mut words = line.split_whitespace();
        let kind = words.next().ok_or(MessageError::Empty)?;
        let args: Vec<&str> = words.collect();
        let bad = |reason: String| MessageError::BadPayload { kind: kind.to_string(), reason };
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(bad(format!("expected {n} arguments, got {}", args.len())))
            }
        };
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad(format!("not an unsigned integer: {s:?}")));
        let signed = |s: &str| s.parse::<i32>().map_err(|_| bad(format!("not an integer: {s:?}")));
        Ok(match kind {
            "SUBMIT_IO" => {
                if args.len() < 2 {
                    return Err(bad("expected <READ|WRITE> <lpn>".into()));
                }
                let io_kind = match args[0] {
                    "READ" => IoKind::Read,
                    "WRITE" => IoKind::Write,
                    other => return Err(bad(format!("io kind must be READ or WRITE, got {other:?}"))),
                };
                let (mut priority, mut deadline) = (0, None);
                for opt in &args[2..] {
                    match opt.split_once('=') {
                        Some(("priority", v)) => priority = signed(v)?,
                        Some(("deadline", v)) => deadline = Some(int(v)?),
                        _ => return Err(bad(format!("unknown option {opt:?}"))),
                    }
                }
                Message::SubmitIo { kind: io_kind, lpn: int(args[1])?, priority, deadline }
            }
            "TRIM" => {
                arity(1)?;
                Message::Trim { lpn: int(args[0])? }
            }
            "TAG_PRIORITY" => {
                arity(2)?;
                Message::TagPriority { io: IoId(int(args[0])?), priority: signed(args[1])? }
            }
            "TAG_TEMPERATURE" => {
                arity(3)?;
                let temperature = match args[2] {
                    "HOT" => Temperature::Hot,
                    "COLD" => Temperature::Cold,
                    other => return Err(bad(format!("temperature must be HOT or COLD, got {other:?}"))),
                };
                let (start, end) = (int(args[0])?, int(args[1])?);
                if start > end {
                    return Err(bad(format!("empty range {start}..={end}")));
                }
                Message::TagTemperature { start, end, temperature }
            }
            "TAG_LOCALITY" => {
                arity(2)?;
                let group = u32::try_from(int(args[0])?).map_err(|_| bad("group id out of range".into()))?;
                let lpns = args[1].split(',').map(int).collect::<Result<Vec<_>, _>>()?;
                Message::TagLocality { group, lpns }
            }
            other => match self.custom.get(other) {
                Some(check) => {
                    let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
                    check(&args).map_err(bad)?;
                    Message::Custom { kind: other.to_string(), args }
                }
                None => return Err(MessageError::UnknownKind(other.to_string())),
            },
        })
    }
}
