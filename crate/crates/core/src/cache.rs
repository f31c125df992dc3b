//! Set-associative cache hierarchy with tree pseudo-LRU replacement.
//!
//! The hierarchy only decides *where* a line hits and charges bandwidth on
//! the levels the line travels through. Latency is assumed hidden by
//! prefetching, so a hit level translates into an availability time, not a
//! delay. Transfers into L1 are free.
//!
//! Misses fill every level above the hit level; the hierarchy is neither
//! inclusive nor exclusive. Write-back traffic is not modeled.

use crate::machine::CacheLevelConfig;
use crate::trace::MemAccess;

/// Distinct line addresses touched by `access`, in ascending order.
pub fn line_accesses(access: &MemAccess, line_size: u64) -> impl Iterator<Item = u64> {
    let mask = !(line_size - 1);
    let first = access.addr & mask;
    let last = access.last_byte() & mask;
    (0..=(last - first) / line_size).map(move |i| first + i * line_size)
}

/// One set: tags per way plus the PLRU tree.
///
/// The tree is stored heap-style: node `n` has children `2n + 1` and
/// `2n + 2`, and the leaves below the last internal level are the ways. A
/// `false` bit means "the victim is on the left".
#[derive(Debug, Clone, PartialEq)]
pub struct CacheSet {
    ways: Vec<Option<u64>>,
    plru: Vec<bool>,
}

impl CacheSet {
    pub fn new(associativity: usize) -> Self {
        assert!(
            associativity.is_power_of_two(),
            "PLRU needs a power-of-two associativity"
        );
        CacheSet {
            ways: vec![None; associativity],
            plru: vec![false; associativity - 1],
        }
    }

    pub fn associativity(&self) -> usize {
        self.ways.len()
    }

    pub fn find(&self, tag: u64) -> Option<usize> {
        self.ways.iter().position(|w| *w == Some(tag))
    }

    /// Flips the bits on the path to `way` so they point away from it.
    pub fn touch(&mut self, way: usize) {
        let (mut lo, mut hi, mut node) = (0, self.ways.len(), 0);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if way < mid {
                self.plru[node] = true;
                node = 2 * node + 1;
                hi = mid;
            } else {
                self.plru[node] = false;
                node = 2 * node + 2;
                lo = mid;
            }
        }
    }

    /// Way the tree points at.
    pub fn plru_victim(&self) -> usize {
        let (mut lo, mut hi, mut node) = (0, self.ways.len(), 0);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.plru[node] {
                node = 2 * node + 2;
                lo = mid;
            } else {
                node = 2 * node + 1;
                hi = mid;
            }
        }
        lo
    }

    /// Installs `tag`, preferring the lowest empty way, else the PLRU
    /// victim. Returns the way used and the evicted tag, if any.
    pub fn insert(&mut self, tag: u64) -> (usize, Option<u64>) {
        let way = self
            .ways
            .iter()
            .position(Option::is_none)
            .unwrap_or_else(|| self.plru_victim());
        let evicted = self.ways[way].replace(tag);
        self.touch(way);
        (way, evicted)
    }

    /// Looks up `tag`, touching on hit and filling on miss. Returns whether
    /// it hit.
    pub fn access(&mut self, tag: u64) -> bool {
        match self.find(tag) {
            Some(way) => {
                self.touch(way);
                true
            }
            None => {
                self.insert(tag);
                false
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CacheLevelState {
    pub config: CacheLevelConfig,
    sets: Vec<CacheSet>,
    pub t_avail: f64,
    pub hits: u64,
    pub misses: u64,
}

impl CacheLevelState {
    pub fn new(config: CacheLevelConfig) -> Self {
        let sets = (0..config.sets())
            .map(|_| CacheSet::new(config.associativity as usize))
            .collect();
        CacheLevelState {
            config,
            sets,
            t_avail: 0.0,
            hits: 0,
            misses: 0,
        }
    }

    fn locate(&self, line: u64) -> (usize, u64) {
        let block = line / self.config.line_size;
        let nsets = self.sets.len() as u64;
        ((block % nsets) as usize, block / nsets)
    }

    pub fn contains(&self, line: u64) -> bool {
        let (set, tag) = self.locate(line);
        self.sets[set].find(tag).is_some()
    }

    fn probe(&mut self, line: u64) -> bool {
        let (set, tag) = self.locate(line);
        match self.sets[set].find(tag) {
            Some(way) => {
                self.sets[set].touch(way);
                self.hits += 1;
                true
            }
            None => {
                self.misses += 1;
                false
            }
        }
    }

    fn fill(&mut self, line: u64) {
        let (set, tag) = self.locate(line);
        self.sets[set].insert(tag);
    }
}

/// Where a line was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HitLevel {
    /// Index into the configured levels, 0 = L1.
    Cache(usize),
    Memory,
}

#[derive(Debug, Clone)]
pub struct HierarchyState {
    pub levels: Vec<CacheLevelState>,
    pub memory_gap: f64,
    pub memory_t_avail: f64,
    pub memory_accesses: u64,
}

impl HierarchyState {
    pub fn new(levels: &[CacheLevelConfig], memory_gap: f64) -> Self {
        HierarchyState {
            levels: levels.iter().cloned().map(CacheLevelState::new).collect(),
            memory_gap,
            memory_t_avail: 0.0,
            memory_accesses: 0,
        }
    }

    /// Finds the nearest level holding `line` (memory always hits) and
    /// installs it in every level above.
    pub fn lookup_and_fill(&mut self, line: u64) -> HitLevel {
        let mut hit = HitLevel::Memory;
        for (i, level) in self.levels.iter_mut().enumerate() {
            if level.probe(line) {
                hit = HitLevel::Cache(i);
                break;
            }
        }
        let upper = match hit {
            HitLevel::Cache(i) => i,
            HitLevel::Memory => {
                self.memory_accesses += 1;
                self.levels.len()
            }
        };
        for level in &mut self.levels[..upper] {
            level.fill(line);
        }
        hit
    }

    /// Charges bandwidth on the path from L2 down to `hit` and returns the
    /// availability of the line: the latest `t_avail` on that path before
    /// the charge. L1 hits are free and return 0.
    pub fn consume_bandwidth(&mut self, hit: HitLevel) -> f64 {
        let cache_end = match hit {
            HitLevel::Cache(i) => i + 1,
            HitLevel::Memory => self.levels.len(),
        };
        let mut avail = 0.0f64;
        for level in self.levels.iter_mut().take(cache_end).skip(1) {
            avail = avail.max(level.t_avail);
            level.t_avail += level.config.gap;
        }
        if hit == HitLevel::Memory {
            avail = avail.max(self.memory_t_avail);
            self.memory_t_avail += self.memory_gap;
        }
        avail
    }

    /// Full access of one line: lookup, fill, bandwidth.
    pub fn access_line(&mut self, line: u64) -> f64 {
        let hit = self.lookup_and_fill(line);
        self.consume_bandwidth(hit)
    }
}
