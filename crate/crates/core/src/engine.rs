//! The timing recurrence.
//!
//! Each instruction starts at the latest of: the earliest free window slot
//! (`t_min`), the availability of every location it reads (shadow registers
//! and shadow memory, including cache-line availability for loads) and the
//! availability of every resource it uses. It ends `latency` cycles later.
//! Each resource it uses then becomes available again `gap` cycles after
//! `max(t_min, t_avail)`.
//!
//! The window is a FIFO of end times. Once it is full, `t_min` tracks the
//! end time of its oldest entry (max-merged, so retirement is in order);
//! before that `t_min` stays 0.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rustc_hash::FxHashMap;
use serde::Serialize;
use thiserror::Error;

use crate::branch::PredictorState;
use crate::cache::{line_accesses, HierarchyState};
use crate::machine::{MachineConfig, ShadowGranularity};
use crate::trace::{resolve_trace, InstructionEvent, MemAccess, ResolveError, ResolvedEvent};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error("trace has zero total time")]
    ZeroTimeTrace,
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Bounded FIFO of in-flight end times.
#[derive(Debug, Clone)]
pub struct InstructionWindow {
    slots: VecDeque<f64>,
    capacity: usize,
    t_min: f64,
}

impl InstructionWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        InstructionWindow {
            slots: VecDeque::with_capacity(capacity),
            capacity,
            t_min: 0.0,
        }
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn occupancy(&self) -> usize {
        self.slots.len()
    }

    pub fn push(&mut self, t_end: f64) {
        if self.slots.len() == self.capacity {
            self.slots.pop_front();
        }
        self.slots.push_back(t_end);
        if self.slots.len() == self.capacity {
            let oldest = self.slots[0];
            self.t_min = self.t_min.max(oldest);
        }
    }
}

fn shadow_keys(
    granularity: ShadowGranularity,
    line_size: u64,
    first: u64,
    last: u64,
) -> impl Iterator<Item = u64> {
    let (step, lo) = match granularity {
        ShadowGranularity::Byte => (1, first),
        ShadowGranularity::Line => (line_size, first & !(line_size - 1)),
    };
    (0..=(last - lo) / step).map(move |i| lo + i * step)
}

/// Availability times of registers and memory locations. Absent entries
/// read as 0.
#[derive(Debug, Clone, Default)]
pub struct ShadowState {
    registers: FxHashMap<u32, f64>,
    memory: FxHashMap<u64, f64>,
    granularity: ShadowGranularity,
    line_size: u64,
}

impl ShadowState {
    pub fn new(granularity: ShadowGranularity, line_size: u64) -> Self {
        ShadowState {
            granularity,
            line_size,
            ..Default::default()
        }
    }

    pub fn register(&self, reg: u32) -> f64 {
        self.registers.get(&reg).copied().unwrap_or(0.0)
    }

    pub fn set_register(&mut self, reg: u32, t: f64) {
        self.registers.insert(reg, t);
    }

    fn keys(&self, first: u64, last: u64) -> impl Iterator<Item = u64> {
        shadow_keys(self.granularity, self.line_size, first, last)
    }

    /// Latest availability over the bytes `[first, last]`.
    pub fn memory(&self, first: u64, last: u64) -> f64 {
        self.keys(first, last)
            .filter_map(|k| self.memory.get(&k))
            .fold(0.0, |acc, &t| acc.max(t))
    }

    /// Raises the availability of bytes `[first, last]` to at least `t`.
    pub fn merge_memory(&mut self, first: u64, last: u64, t: f64) {
        for k in shadow_keys(self.granularity, self.line_size, first, last) {
            let slot = self.memory.entry(k).or_insert(0.0);
            if t > *slot {
                *slot = t;
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ResourceUsage {
    pub name: String,
    pub gap: f64,
    pub uses: u64,
    /// `uses * gap`.
    pub busy: f64,
    /// Availability after the last use. Every use advances it by at least
    /// `gap`, so it never falls below `busy`.
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PcUsage {
    pub label: String,
    pub count: u64,
    /// Scaled latency of the first occurrence.
    pub latency: f64,
    /// Explicit resources of one occurrence (frontend excluded).
    pub resources: Vec<String>,
    /// Resource name -> total uses by this pc (frontend included).
    pub uses: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CacheCounters {
    pub name: String,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
pub struct BranchCounters {
    pub predicted: u64,
    pub mispredicted: u64,
}

/// When one instruction ran, and the window bound in force at its issue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub t_min: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub total_cycles: f64,
    pub instruction_count: u64,
    pub resources: Vec<ResourceUsage>,
    pub per_pc: BTreeMap<u64, PcUsage>,
    pub caches: Vec<CacheCounters>,
    pub memory_accesses: u64,
    pub branch: Option<BranchCounters>,
    pub timeline: Option<Vec<Timing>>,
}

impl SimResult {
    pub fn t_ends(&self) -> Option<Vec<f64>> {
        self.timeline
            .as_ref()
            .map(|t| t.iter().map(|x| x.end).collect())
    }

    /// 0 for an empty trace.
    pub fn ipc(&self) -> f64 {
        if self.total_cycles > 0.0 {
            self.instruction_count as f64 / self.total_cycles
        } else {
            0.0
        }
    }

    /// Fraction of the run each resource was busy.
    ///
    /// A fraction above 1 is legal: when the last uses of a resource have a
    /// latency shorter than its gap, its issue slots run past the final
    /// completion. The checked invariant is `busy <= horizon`.
    pub fn occupancy(&self) -> Result<Vec<(String, f64)>, SimError> {
        if self.total_cycles <= 0.0 {
            return Err(SimError::ZeroTimeTrace);
        }
        if let Some(r) = self
            .resources
            .iter()
            .find(|r| r.busy > r.horizon + 1e-9 * r.horizon.max(1.0))
        {
            return Err(SimError::Invariant(format!(
                "resource {} busy {} beyond its horizon {}",
                r.name, r.busy, r.horizon
            )));
        }
        Ok(self
            .resources
            .iter()
            .map(|r| (r.name.clone(), r.busy / self.total_cycles))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Keep every instruction's [`Timing`].
    pub record_timeline: bool,
    /// Collect per-pc usage.
    pub per_pc: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            record_timeline: false,
            per_pc: true,
        }
    }
}

impl SimOptions {
    /// Totals and per-resource counters only; what sensitivity sweeps need.
    pub fn lean() -> Self {
        SimOptions {
            record_timeline: false,
            per_pc: false,
        }
    }

    pub fn with_timeline(mut self) -> Self {
        self.record_timeline = true;
        self
    }
}

/// Simulates `trace` on `config` with default options.
pub fn simulate(trace: &[InstructionEvent], config: &MachineConfig) -> Result<SimResult, SimError> {
    simulate_with(trace, config, SimOptions::default())
}

pub fn simulate_with(
    trace: &[InstructionEvent],
    config: &MachineConfig,
    options: SimOptions,
) -> Result<SimResult, SimError> {
    let resolved = resolve_trace(trace, config)?;
    Ok(simulate_resolved(&resolved, config, options))
}

struct Run<'c> {
    config: &'c MachineConfig,
    t_avail: Vec<f64>,
    uses: Vec<u64>,
    window: InstructionWindow,
    shadow: ShadowState,
    caches: Option<HierarchyState>,
    predictor: Option<PredictorState>,
}

impl<'c> Run<'c> {
    fn new(config: &'c MachineConfig) -> Self {
        let line_size = config.line_size().unwrap_or(64);
        Run {
            config,
            t_avail: vec![0.0; config.resources().len()],
            uses: vec![0; config.resources().len()],
            window: InstructionWindow::new(config.window_capacity),
            shadow: ShadowState::new(config.shadow_granularity, line_size),
            caches: (!config.cache_levels.is_empty())
                .then(|| HierarchyState::new(&config.cache_levels, config.memory_gap)),
            predictor: config
                .branch
                .enabled
                .then(|| PredictorState::new(&config.branch)),
        }
    }

    /// Runs every line of `access` through the hierarchy and folds the
    /// returned availabilities into shadow memory.
    fn update_caches(&mut self, access: &MemAccess) {
        let Some(caches) = self.caches.as_mut() else {
            return;
        };
        let line_size = caches.levels[0].config.line_size;
        for line in line_accesses(access, line_size) {
            let avail = caches.access_line(line);
            if avail > 0.0 {
                let first = access.addr.max(line);
                let last = access.last_byte().min(line + line_size - 1);
                self.shadow.merge_memory(first, last, avail);
            }
        }
    }

    /// One step of the recurrence.
    fn step(&mut self, ev: &ResolvedEvent<'_>) -> Timing {
        let event = ev.event;
        for access in &event.mem_reads {
            self.update_caches(access);
        }

        let t_min = self.window.t_min();
        let mut t_start = t_min;
        for &reg in &event.reg_reads {
            t_start = t_start.max(self.shadow.register(reg));
        }
        for access in &event.mem_reads {
            t_start = t_start.max(self.shadow.memory(access.addr, access.last_byte()));
        }
        for r in &ev.resources {
            t_start = t_start.max(self.t_avail[r.0]);
        }
        let t_end = t_start + ev.latency * self.config.latency_scale;

        for r in &ev.resources {
            let gap = self.config.resource(*r).gap;
            self.t_avail[r.0] = t_min.max(self.t_avail[r.0]) + gap;
            self.uses[r.0] += 1;
        }

        for access in &event.mem_writes {
            self.update_caches(access);
        }
        for &reg in &event.reg_writes {
            self.shadow.set_register(reg, t_end);
        }
        for access in &event.mem_writes {
            self.shadow
                .merge_memory(access.addr, access.last_byte(), t_end);
        }

        if event.branch.is_branch() {
            if let Some(predictor) = self.predictor.as_mut() {
                let delay = predictor.observe(event.pc, &event.branch);
                if let Some(frontend) = self.config.frontend() {
                    self.t_avail[frontend.0] += delay;
                }
            }
        }

        self.window.push(t_end);
        Timing {
            t_min,
            start: t_start,
            end: t_end,
        }
    }
}

/// Simulates an already resolved trace. Resolution does not depend on
/// weights, so sensitivity sweeps resolve once and call this per variant.
pub fn simulate_resolved(
    events: &[ResolvedEvent<'_>],
    config: &MachineConfig,
    options: SimOptions,
) -> SimResult {
    let mut run = Run::new(config);
    let mut total = 0.0f64;
    let mut timeline = options
        .record_timeline
        .then(|| Vec::with_capacity(events.len()));
    let mut per_pc: HashMap<u64, PcUsage> = HashMap::new();
    let frontend = config.frontend();

    for ev in events {
        let timing = run.step(ev);
        total = total.max(timing.end);
        if let Some(t) = timeline.as_mut() {
            t.push(timing);
        }
        if options.per_pc {
            let entry = per_pc.entry(ev.event.pc).or_insert_with(|| PcUsage {
                label: ev.event.label(),
                count: 0,
                latency: ev.latency * config.latency_scale,
                resources: ev
                    .resources
                    .iter()
                    .take(ev.resources.len() - usize::from(frontend.is_some()))
                    .map(|r| config.resource(*r).name.clone())
                    .collect(),
                uses: BTreeMap::new(),
            });
            entry.count += 1;
            for r in &ev.resources {
                *entry
                    .uses
                    .entry(config.resource(*r).name.clone())
                    .or_insert(0) += 1;
            }
        }
    }

    let resources = config
        .resources()
        .iter()
        .map(|r| ResourceUsage {
            name: r.name.clone(),
            gap: r.gap,
            uses: run.uses[r.id.0],
            busy: run.uses[r.id.0] as f64 * r.gap,
            horizon: run.t_avail[r.id.0],
        })
        .collect();
    let (caches, memory_accesses) = match &run.caches {
        Some(h) => (
            h.levels
                .iter()
                .map(|l| CacheCounters {
                    name: l.config.name.clone(),
                    hits: l.hits,
                    misses: l.misses,
                })
                .collect(),
            h.memory_accesses,
        ),
        None => (Vec::new(), 0),
    };

    SimResult {
        total_cycles: total,
        instruction_count: events.len() as u64,
        resources,
        per_pc: per_pc.into_iter().collect(),
        caches,
        memory_accesses,
        branch: run.predictor.as_ref().map(|p| BranchCounters {
            predicted: p.predicted,
            mispredicted: p.mispredicted,
        }),
        timeline,
    }
}
