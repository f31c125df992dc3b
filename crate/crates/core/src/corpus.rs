//! Built-in kernels: deterministic synthetic traces paired with the machine
//! they are meant to run on.

use std::collections::BTreeSet;

use crate::machine::MachineConfig;
use crate::trace::{renumber, BranchInfo, BranchKind, InstructionEvent, MemAccess};

pub const ROB_BLOCK_CONFIG: &str = include_str!("../data/rob-block.cfg");
pub const SKYLAKE_LIKE_CONFIG: &str = include_str!("../data/skylake-like.cfg");

/// Kernel names accepted by [`generate`].
pub const KERNELS: [&str; 4] = ["rob-block", "jacobi", "latency-chain", "stream"];

pub fn rob_block_config() -> MachineConfig {
    MachineConfig::from_toml(ROB_BLOCK_CONFIG).expect("shipped rob-block config is valid")
}

pub fn skylake_like_config() -> MachineConfig {
    MachineConfig::from_toml(SKYLAKE_LIKE_CONFIG).expect("shipped skylake-like config is valid")
}

/// What to generate. Unused parameters are ignored by kernels that do not
/// need them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelSpec {
    pub name: String,
    /// Loop iterations, chain length or number of loads.
    pub iters: usize,
    /// Buffer size in bytes, for `stream`.
    pub footprint: u64,
}

impl KernelSpec {
    pub fn new(name: &str) -> Self {
        let (iters, footprint) = match name {
            "jacobi" => (10_000, 0),
            "latency-chain" => (1000, 0),
            "stream" => (262_144, 16 << 20),
            _ => (1, 0),
        };
        KernelSpec {
            name: name.to_string(),
            iters,
            footprint,
        }
    }
}

/// Trace, machine, and the config text the machine was loaded from.
pub fn generate(spec: &KernelSpec) -> Option<(Vec<InstructionEvent>, MachineConfig, &'static str)> {
    let iters = spec.iters.max(1);
    Some(match spec.name.as_str() {
        "rob-block" => {
            let (t, c) = gen_rob_block();
            (t, c, ROB_BLOCK_CONFIG)
        }
        "jacobi" => {
            let (t, c) = gen_jacobi_like(iters);
            (t, c, SKYLAKE_LIKE_CONFIG)
        }
        "latency-chain" => {
            let (t, c) = gen_latency_chain(iters);
            (t, c, SKYLAKE_LIKE_CONFIG)
        }
        "stream" => {
            let (t, c) = gen_stream(iters, spec.footprint.max(64));
            (t, c, SKYLAKE_LIKE_CONFIG)
        }
        _ => return None,
    })
}

/// Ports of the 12-µop block whose retirement in a 4-entry window takes 4
/// cycles, with port 1 the only resource worth accelerating.
pub const ROB_BLOCK_PORTS: [(&str, &str); 12] = [
    ("mul", "p1"),
    ("sbb", "p0"),
    ("rol", "p6"),
    ("bsf", "p1"),
    ("rol", "p0"),
    ("pop", "p2"),
    ("mov", "p3"),
    ("sahf", "p6"),
    ("movsx", "p2"),
    ("sahf", "p0"),
    ("sbb", "p6"),
    ("xor", "p5"),
];

pub fn gen_rob_block() -> (Vec<InstructionEvent>, MachineConfig) {
    let mut trace: Vec<InstructionEvent> = ROB_BLOCK_PORTS
        .iter()
        .enumerate()
        .map(|(i, (_, port))| InstructionEvent::inline(i as u64 + 1, &[port], 1.0))
        .collect();
    renumber(&mut trace);
    (trace, rob_block_config())
}

// register numbering for the Jacobi-like body
const RDX: u32 = 1;
const RAX: u32 = 2;
const RCX: u32 = 3;
const RSP: u32 = 4;
const XMM0: u32 = 16;
const XMM1: u32 = 17;
const FLAGS: u32 = 32;

const STACK: u64 = 0x7fff_0000;
const ARRAY_A: u64 = 0x10_0000;
const ARRAY_B: u64 = 0x20_0000;
/// Elements per array; the index wraps so both arrays stay L1-resident.
const ARRAY_LEN: u64 = 512;

fn regs(list: &[u32]) -> BTreeSet<u32> {
    list.iter().copied().collect()
}

fn load(addr: u64) -> Vec<MemAccess> {
    vec![MemAccess { addr, size: 8 }]
}

/// The 17-instruction vectorized Jacobi loop body, iterated `iters` times.
///
/// Each row uses its instruction kind from the skylake-like machine
/// (for instance `vaddsd-load` = p016 p01 p015 p0156 p23, latency 4). Ten rows
/// load through p23 at 0.5 cycles each, so the steady state is 5 cycles
/// per iteration and p23-bound.
pub fn gen_jacobi_like(iters: usize) -> (Vec<InstructionEvent>, MachineConfig) {
    assert!(iters >= 1);
    let mut trace = Vec::with_capacity(iters * 17);
    for it in 0..iters as u64 {
        // element index of the current triple, starting at 1 so j-1 exists
        let j = 1 + (3 * it) % (ARRAY_LEN - 4);
        let a = |k: u64| ARRAY_A + 8 * k;
        let b = |k: u64| ARRAY_B + 8 * k;
        let last = it + 1 == iters as u64;

        let row = |pc: u64, kind: &str, reads: &[u32], writes: &[u32]| {
            let mut e = InstructionEvent::of_kind(pc, kind);
            e.reg_reads = regs(reads);
            e.reg_writes = regs(writes);
            e
        };
        let with_load = |mut e: InstructionEvent, addr| {
            e.mem_reads = load(addr);
            e
        };
        let with_store = |mut e: InstructionEvent, addr| {
            e.mem_writes = load(addr);
            e
        };

        trace.push(with_load(
            row(0x12bb, "mov-load", &[RSP], &[RDX]),
            STACK - 0x10,
        ));
        trace.push(with_load(
            row(0x12c0, "vmovsd-load", &[RDX, RAX], &[XMM0]),
            a(j),
        ));
        trace.push(with_load(
            row(0x12c5, "vaddsd-load", &[XMM0, RDX, RAX], &[XMM0]),
            a(j + 1),
        ));
        trace.push(with_load(
            row(0x12cb, "vaddsd-load", &[XMM0, RDX, RAX], &[XMM0]),
            a(j + 2),
        ));
        trace.push(row(0x12d1, "vmulsd", &[XMM0, XMM1], &[XMM0]));
        trace.push(with_load(
            row(0x12d5, "mov-load", &[RSP], &[RDX]),
            STACK - 0x18,
        ));
        trace.push(with_store(
            row(0x12da, "vmovsd-store", &[RDX, RAX, XMM0], &[]),
            b(j + 1),
        ));
        trace.push(with_load(
            row(0x12e0, "mov-load", &[RSP], &[RDX]),
            STACK - 0x18,
        ));
        trace.push(with_load(
            row(0x12e5, "vmovsd-load", &[RDX, RAX], &[XMM0]),
            b(j - 1),
        ));
        trace.push(with_load(
            row(0x12eb, "vaddsd-load", &[XMM0, RDX, RAX], &[XMM0]),
            b(j),
        ));
        trace.push(with_load(
            row(0x12f0, "vaddsd-load", &[XMM0, RDX, RAX], &[XMM0]),
            b(j + 1),
        ));
        trace.push(row(0x12f6, "vmulsd", &[XMM0, XMM1], &[XMM0]));
        trace.push(with_load(
            row(0x12fa, "mov-load", &[RSP], &[RDX]),
            STACK - 0x10,
        ));
        trace.push(with_store(
            row(0x12ff, "vmovsd-store", &[RDX, RAX, XMM0], &[]),
            a(j),
        ));
        trace.push(row(0x1304, "add", &[RAX], &[RAX, FLAGS]));
        trace.push(row(0x1308, "cmp", &[RAX, RCX], &[FLAGS]));
        let mut jne = row(0x130b, "jne", &[FLAGS], &[]);
        jne.branch = BranchInfo {
            kind: BranchKind::Conditional,
            taken: !last,
            target: 0x12bb,
        };
        trace.push(jne);
    }
    renumber(&mut trace);
    (trace, skylake_like_config())
}

/// `n` dependent instructions of latency 4 on an otherwise idle machine.
pub fn gen_latency_chain(n: usize) -> (Vec<InstructionEvent>, MachineConfig) {
    assert!(n >= 1);
    let mut trace: Vec<InstructionEvent> = (0..n)
        .map(|i| {
            let mut e = InstructionEvent::inline(0x2000 + 4 * (i as u64 % 64), &["p0156"], 4.0);
            e.reg_reads = regs(&[RAX]);
            e.reg_writes = regs(&[RAX]);
            e
        })
        .collect();
    // the first link has nothing to wait for
    trace[0].reg_reads.clear();
    renumber(&mut trace);
    (trace, skylake_like_config())
}

/// `n` independent 8-byte loads walking a `footprint`-byte buffer one
/// cache line at a time, wrapping around.
pub fn gen_stream(n: usize, footprint: u64) -> (Vec<InstructionEvent>, MachineConfig) {
    assert!(n >= 1);
    let config = skylake_like_config();
    let line = config.line_size().unwrap_or(64);
    let lines = (footprint / line).max(1);
    let mut trace: Vec<InstructionEvent> = (0..n as u64)
        .map(|i| {
            let mut e = InstructionEvent::of_kind(0x3000, "vmovsd-load");
            e.mem_reads = load(0x4000_0000 + (i % lines) * line);
            e.reg_writes = regs(&[XMM0]);
            e
        })
        .collect();
    renumber(&mut trace);
    (trace, config)
}
