//! Instruction-event streams and their newline-delimited JSON encoding.
//!
//! Every line of a trace file is one JSON object describing one dynamic
//! instruction occurrence:
//!
//! ```text
//! {"pc":16,"kind":"mul"}
//! {"pc":20,"resources":["p1"],"latency":1,"reg_reads":[1],"reg_writes":[2]}
//! {"pc":24,"kind":"load","mem_reads":[{"addr":4096,"size":8}]}
//! {"pc":28,"kind":"jne","branch":{"kind":"conditional","taken":true,"target":16}}
//! ```
//!
//! Events carry the dynamic truth of the run (actual addresses, actual branch
//! outcomes). The simulator never re-derives control flow.

use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::{MachineConfig, ResourceId};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: negative latency {latency}")]
    NegativeLatency { line: usize, latency: f64 },
    #[error("line {line}: memory access at {addr:#x} of {size} bytes overflows the address space")]
    OverflowingAccess { line: usize, addr: u64, size: u64 },
    #[error("line {line}: read failed: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResolveError {
    #[error("event {seq} (pc {pc:#x}): unknown instruction kind `{name}`")]
    UnknownKind { seq: u64, pc: u64, name: String },
    #[error("event {seq} (pc {pc:#x}): unknown resource `{name}`")]
    UnknownResource { seq: u64, pc: u64, name: String },
    #[error("event {seq} (pc {pc:#x}): no kind and no inline resources/latency")]
    NoSemantics { seq: u64, pc: u64 },
}

/// A byte range `[addr, addr + size)` read or written by an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemAccess {
    pub addr: u64,
    pub size: u64,
}

impl MemAccess {
    /// Last byte touched by the access.
    pub fn last_byte(&self) -> u64 {
        self.addr + (self.size - 1)
    }

    fn check(&self, line: usize) -> Result<(), TraceError> {
        if self.size == 0 {
            return Err(TraceError::MalformedRecord {
                line,
                reason: format!("memory access at {:#x} has size 0", self.addr),
            });
        }
        if self.addr.checked_add(self.size).is_none() {
            return Err(TraceError::OverflowingAccess {
                line,
                addr: self.addr,
                size: self.size,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    #[default]
    None,
    Conditional,
    Direct,
    Indirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchInfo {
    pub kind: BranchKind,
    #[serde(default)]
    pub taken: bool,
    #[serde(default)]
    pub target: u64,
}

impl BranchInfo {
    pub fn is_branch(&self) -> bool {
        self.kind != BranchKind::None
    }

    fn check(&self, line: usize) -> Result<(), TraceError> {
        let reason = match self.kind {
            BranchKind::None if self.taken || self.target != 0 => {
                "branch of kind none must be not-taken with target 0"
            }
            BranchKind::Direct if !self.taken => "direct branches are always taken",
            _ => return Ok(()),
        };
        Err(TraceError::MalformedRecord {
            line,
            reason: reason.to_string(),
        })
    }
}

/// One dynamic instruction occurrence.
///
/// Execution semantics come either from `kind` (looked up in the machine's
/// kind table) or from inline `resources` and `latency`. Inline values win
/// field by field when both are present.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstructionEvent {
    pub seq: u64,
    pub pc: u64,
    pub kind: Option<String>,
    pub resources: Option<Vec<String>>,
    pub latency: Option<f64>,
    pub reg_reads: BTreeSet<u32>,
    pub reg_writes: BTreeSet<u32>,
    pub mem_reads: Vec<MemAccess>,
    pub mem_writes: Vec<MemAccess>,
    pub branch: BranchInfo,
}

impl InstructionEvent {
    /// An event whose semantics are given inline.
    pub fn inline(pc: u64, resources: &[&str], latency: f64) -> Self {
        InstructionEvent {
            pc,
            resources: Some(resources.iter().map(|r| r.to_string()).collect()),
            latency: Some(latency),
            ..Default::default()
        }
    }

    /// An event whose semantics come from the kind table.
    pub fn of_kind(pc: u64, kind: &str) -> Self {
        InstructionEvent {
            pc,
            kind: Some(kind.to_string()),
            ..Default::default()
        }
    }

    /// Short label used in per-instruction reports.
    pub fn label(&self) -> String {
        match (&self.kind, &self.resources) {
            (Some(kind), _) => kind.clone(),
            (None, Some(res)) if !res.is_empty() => res.join(" "),
            _ => String::from("-"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seq: Option<u64>,
    pc: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resources: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latency: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    reg_reads: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    reg_writes: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    mem_reads: Vec<MemAccess>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    mem_writes: Vec<MemAccess>,
    #[serde(default, skip_serializing_if = "is_not_branch")]
    branch: BranchInfo,
}

fn is_not_branch(b: &BranchInfo) -> bool {
    !b.is_branch()
}

/// Parses one record. `line` is 1-based and only used for diagnostics;
/// `default_seq` is used when the record carries no `seq`.
pub fn parse_record(
    text: &str,
    line: usize,
    default_seq: u64,
) -> Result<InstructionEvent, TraceError> {
    let rec: Record = serde_json::from_str(text).map_err(|e| TraceError::MalformedRecord {
        line,
        reason: e.to_string(),
    })?;
    if let Some(latency) = rec.latency {
        if !latency.is_finite() {
            return Err(TraceError::MalformedRecord {
                line,
                reason: format!("latency {latency} is not finite"),
            });
        }
        if latency < 0.0 {
            return Err(TraceError::NegativeLatency { line, latency });
        }
    }
    let inline_complete = rec.resources.is_some() && rec.latency.is_some();
    if rec.kind.is_none() && !inline_complete {
        return Err(TraceError::MalformedRecord {
            line,
            reason: "record needs either `kind` or both `resources` and `latency`".into(),
        });
    }
    for access in rec.mem_reads.iter().chain(&rec.mem_writes) {
        access.check(line)?;
    }
    rec.branch.check(line)?;
    Ok(InstructionEvent {
        seq: rec.seq.unwrap_or(default_seq),
        pc: rec.pc,
        kind: rec.kind,
        resources: rec.resources,
        latency: rec.latency,
        reg_reads: rec.reg_reads,
        reg_writes: rec.reg_writes,
        mem_reads: rec.mem_reads,
        mem_writes: rec.mem_writes,
        branch: rec.branch,
    })
}

/// Lazily parses a trace, one event per non-blank line.
pub struct TraceReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
    records: u64,
    last_seq: Option<u64>,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R) -> Self {
        TraceReader {
            lines: reader.lines(),
            line: 0,
            records: 0,
            last_seq: None,
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<InstructionEvent, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(text) => text,
                Err(source) => {
                    return Some(Err(TraceError::Io {
                        line: self.line + 1,
                        source,
                    }))
                }
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let result = parse_record(&text, self.line, self.records).and_then(|event| {
                if matches!(self.last_seq, Some(prev) if event.seq <= prev) {
                    return Err(TraceError::MalformedRecord {
                        line: self.line,
                        reason: format!("seq {} does not increase", event.seq),
                    });
                }
                Ok(event)
            });
            if let Ok(event) = &result {
                self.last_seq = Some(event.seq);
                self.records += 1;
            }
            return Some(result);
        }
    }
}

pub fn parse_trace<R: BufRead>(reader: R) -> TraceReader<R> {
    TraceReader::new(reader)
}

/// Parses a whole trace held in memory.
pub fn parse_trace_str(text: &str) -> Result<Vec<InstructionEvent>, TraceError> {
    parse_trace(text.as_bytes()).collect()
}

pub fn write_event(event: &InstructionEvent) -> String {
    let rec = Record {
        seq: Some(event.seq),
        pc: event.pc,
        kind: event.kind.clone(),
        resources: event.resources.clone(),
        latency: event.latency,
        reg_reads: event.reg_reads.clone(),
        reg_writes: event.reg_writes.clone(),
        mem_reads: event.mem_reads.clone(),
        mem_writes: event.mem_writes.clone(),
        branch: event.branch,
    };
    serde_json::to_string(&rec).expect("trace records always serialize")
}

pub fn write_trace<'a, I>(events: I) -> String
where
    I: IntoIterator<Item = &'a InstructionEvent>,
{
    let mut out = String::new();
    for event in events {
        out.push_str(&write_event(event));
        out.push('\n');
    }
    out
}

/// Renumbers `seq` from 0 in slice order.
pub fn renumber(events: &mut [InstructionEvent]) {
    for (i, e) in events.iter_mut().enumerate() {
        e.seq = i as u64;
    }
}

/// An event bound to a machine: resource names turned into ids and the
/// latency fixed. The frontend resource, when the machine has one, is
/// appended once.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedEvent<'a> {
    pub event: &'a InstructionEvent,
    pub resources: Vec<ResourceId>,
    /// Unscaled latency; the engine applies the machine's latency scale.
    pub latency: f64,
}

pub fn resolve_event<'a>(
    event: &'a InstructionEvent,
    config: &MachineConfig,
) -> Result<ResolvedEvent<'a>, ResolveError> {
    let kind = match &event.kind {
        Some(name) => Some(config.kind(name).ok_or_else(|| ResolveError::UnknownKind {
            seq: event.seq,
            pc: event.pc,
            name: name.clone(),
        })?),
        None => None,
    };
    let mut resources = match (&event.resources, kind) {
        (Some(names), _) => names
            .iter()
            .map(|name| {
                config
                    .resource_id(name)
                    .ok_or_else(|| ResolveError::UnknownResource {
                        seq: event.seq,
                        pc: event.pc,
                        name: name.clone(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?,
        (None, Some(kind)) => kind.resources.clone(),
        (None, None) => {
            return Err(ResolveError::NoSemantics {
                seq: event.seq,
                pc: event.pc,
            })
        }
    };
    let latency = match (event.latency, kind) {
        (Some(latency), _) => latency,
        (None, Some(kind)) => kind.latency,
        (None, None) => {
            return Err(ResolveError::NoSemantics {
                seq: event.seq,
                pc: event.pc,
            })
        }
    };
    if let Some(frontend) = config.frontend() {
        resources.push(frontend);
    }
    Ok(ResolvedEvent {
        event,
        resources,
        latency,
    })
}

pub fn resolve_trace<'a>(
    events: &'a [InstructionEvent],
    config: &MachineConfig,
) -> Result<Vec<ResolvedEvent<'a>>, ResolveError> {
    events.iter().map(|e| resolve_event(e, config)).collect()
}
