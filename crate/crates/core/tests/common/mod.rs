#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::rngs::StdRng;
use rand::Rng;
use sensim::machine::CacheLevelConfig;
use sensim::trace::{renumber, InstructionEvent, MemAccess};
use sensim::{MachineBuilder, MachineConfig};

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i}")).collect()
}

/// A small random machine: 1..=6 resources, a window of 1..=16 and, half
/// the time, a two-level cache.
pub fn random_machine(rng: &mut StdRng, max_resources: usize) -> MachineConfig {
    let n = rng.gen_range(1..=max_resources);
    let mut b = MachineBuilder::new(rng.gen_range(1..=16));
    for name in names(n) {
        let gap = [0.25, 0.5, 1.0, 2.0, rng.gen_range(0.1..3.0)][rng.gen_range(0..5)];
        b = b.resource(&name, gap);
    }
    if rng.gen_bool(0.5) {
        b = b
            .cache(CacheLevelConfig {
                name: "L1".into(),
                total_size: 512,
                associativity: 2,
                line_size: 64,
                gap: 0.5,
            })
            .cache(CacheLevelConfig {
                name: "L2".into(),
                total_size: 2048,
                associativity: 4,
                line_size: 64,
                gap: rng.gen_range(0.5..2.0),
            })
            .memory_gap(rng.gen_range(1.0..6.0));
    }
    b.build().expect("random machine is valid")
}

/// Up to `max_events` inline events over the machine's resources with
/// random register and memory dependencies.
pub fn random_trace(
    rng: &mut StdRng,
    config: &MachineConfig,
    max_events: usize,
) -> Vec<InstructionEvent> {
    let resources: Vec<String> = config.resources().iter().map(|r| r.name.clone()).collect();
    let n = rng.gen_range(1..=max_events);
    let mut trace: Vec<InstructionEvent> = (0..n)
        .map(|i| {
            let used: Vec<&str> = (0..rng.gen_range(0..=3))
                .map(|_| resources[rng.gen_range(0..resources.len())].as_str())
                .collect();
            let latency = f64::from(rng.gen_range(0..=20u32)) * 0.25;
            let mut e = InstructionEvent::inline(0x1000 + 4 * (i as u64 % 32), &used, latency);
            let regs = |rng: &mut StdRng| -> BTreeSet<u32> {
                (0..rng.gen_range(0..=2))
                    .map(|_| rng.gen_range(0..8))
                    .collect()
            };
            e.reg_reads = regs(rng);
            e.reg_writes = regs(rng);
            let access = |rng: &mut StdRng| MemAccess {
                addr: rng.gen_range(0..8192),
                size: [1, 4, 8, 16][rng.gen_range(0..4)],
            };
            if rng.gen_bool(0.3) {
                e.mem_reads.push(access(rng));
            }
            if rng.gen_bool(0.2) {
                e.mem_writes.push(access(rng));
            }
            e
        })
        .collect();
    renumber(&mut trace);
    trace
}

/// Tree PLRU over ways `0..n`, keyed by the way range each node covers.
/// `true` sends the victim search to the upper half.
pub struct RangePlru {
    n: usize,
    upper: HashMap<(usize, usize), bool>,
}

impl RangePlru {
    pub fn new(n: usize) -> Self {
        RangePlru {
            n,
            upper: HashMap::new(),
        }
    }

    pub fn touch(&mut self, way: usize) {
        fn go(t: &mut RangePlru, lo: usize, hi: usize, way: usize) {
            if hi - lo < 2 {
                return;
            }
            let mid = lo + (hi - lo) / 2;
            let in_lower = way < mid;
            t.upper.insert((lo, hi), in_lower);
            if in_lower {
                go(t, lo, mid, way)
            } else {
                go(t, mid, hi, way)
            }
        }
        go(self, 0, self.n, way)
    }

    pub fn victim(&self) -> usize {
        fn go(t: &RangePlru, lo: usize, hi: usize) -> usize {
            if hi - lo < 2 {
                return lo;
            }
            let mid = lo + (hi - lo) / 2;
            if t.upper.get(&(lo, hi)).copied().unwrap_or(false) {
                go(t, mid, hi)
            } else {
                go(t, lo, mid)
            }
        }
        go(self, 0, self.n)
    }
}

/// Brute-force cache level: a table of ways per set plus [`RangePlru`].
pub struct RefLevel {
    line: u64,
    sets: u64,
    ways: Vec<Vec<Option<u64>>>,
    plru: Vec<RangePlru>,
}

impl RefLevel {
    pub fn new(size: u64, assoc: u64, line: u64) -> Self {
        let sets = size / (assoc * line);
        RefLevel {
            line,
            sets,
            ways: (0..sets).map(|_| vec![None; assoc as usize]).collect(),
            plru: (0..sets).map(|_| RangePlru::new(assoc as usize)).collect(),
        }
    }

    fn slot(&self, addr: u64) -> (usize, u64) {
        let block = addr / self.line;
        ((block % self.sets) as usize, block / self.sets)
    }

    /// Hit test with recency update on hit.
    pub fn lookup(&mut self, addr: u64) -> bool {
        let (s, tag) = self.slot(addr);
        match self.ways[s].iter().position(|w| *w == Some(tag)) {
            Some(w) => {
                self.plru[s].touch(w);
                true
            }
            None => false,
        }
    }

    pub fn fill(&mut self, addr: u64) {
        let (s, tag) = self.slot(addr);
        let w = match self.ways[s].iter().position(|w| w.is_none()) {
            Some(w) => w,
            None => self.plru[s].victim(),
        };
        self.ways[s][w] = Some(tag);
        self.plru[s].touch(w);
    }
}

/// Level index that served `addr` (`levels.len()` for memory), filling
/// every level above it.
pub fn ref_access(levels: &mut [RefLevel], addr: u64) -> usize {
    let mut hit = levels.len();
    for (i, l) in levels.iter_mut().enumerate() {
        if l.lookup(addr) {
            hit = i;
            break;
        }
    }
    for l in &mut levels[..hit] {
        l.fill(addr);
    }
    hit
}

/// True LRU set: most recent last.
pub struct LruSet {
    ways: usize,
    order: Vec<u64>,
}

impl LruSet {
    pub fn new(ways: usize) -> Self {
        LruSet {
            ways,
            order: Vec::new(),
        }
    }

    /// Returns `(hit, evicted)`.
    pub fn access(&mut self, tag: u64) -> (bool, Option<u64>) {
        if let Some(i) = self.order.iter().position(|&t| t == tag) {
            self.order.remove(i);
            self.order.push(tag);
            return (true, None);
        }
        let evicted = (self.order.len() == self.ways).then(|| self.order.remove(0));
        self.order.push(tag);
        (false, evicted)
    }
}

/// Random geometry: 1..=3 levels with growing capacity and one line size.
pub fn random_geometry(rng: &mut StdRng) -> Vec<CacheLevelConfig> {
    let line = 1u64 << rng.gen_range(4..=7);
    let mut sets = 1u64 << rng.gen_range(0..=3);
    let mut size = 0u64;
    let mut levels = Vec::new();
    for i in 0..rng.gen_range(1..=3) {
        let assoc = 1u64 << rng.gen_range(0..=3);
        while sets * assoc * line <= size {
            sets *= 2;
        }
        size = sets * assoc * line;
        levels.push(CacheLevelConfig {
            name: format!("L{}", i + 1),
            total_size: size,
            associativity: assoc,
            line_size: line,
            gap: 1.0,
        });
        sets <<= rng.gen_range(0..=2);
    }
    levels
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = std::time::Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
