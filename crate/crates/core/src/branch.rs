//! Branch prediction unit: an LRU branch target buffer plus a TAGE-style
//! direction predictor (bimodal base table and tagged tables indexed with
//! geometrically growing global history).
//!
//! Indirect branches reuse the BTB for their target and the tagged tables
//! are only consulted for conditional branches. There is no loop predictor.
//! A misprediction costs a fixed number of cycles on the frontend.

use serde::Deserialize;

use crate::trace::{BranchInfo, BranchKind};

const TAG_BITS: u32 = 9;
const CTR_MAX: i8 = 3;
const CTR_MIN: i8 = -4;
const MAX_HISTORY: usize = 128;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchConfig {
    pub enabled: bool,
    pub btb_sets: usize,
    pub btb_ways: usize,
    pub base_entries_log2: u32,
    pub tage_entries_log2: u32,
    /// One entry per tagged table, strictly increasing.
    pub history_lengths: Vec<usize>,
    pub misprediction_penalty: f64,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig {
            enabled: false,
            btb_sets: 64,
            btb_ways: 4,
            base_entries_log2: 12,
            tage_entries_log2: 10,
            history_lengths: vec![4, 8, 16, 32],
            misprediction_penalty: 15.0,
        }
    }
}

impl BranchConfig {
    pub fn tage_tables(&self) -> usize {
        self.history_lengths.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.btb_sets == 0 || self.btb_ways == 0 {
            return Err("BTB needs at least one set and one way".into());
        }
        if !(1..=24).contains(&self.base_entries_log2)
            || !(1..=24).contains(&self.tage_entries_log2)
        {
            return Err("table sizes must be between 2^1 and 2^24 entries".into());
        }
        if self.history_lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err("history lengths must be strictly increasing".into());
        }
        if self.history_lengths.first() == Some(&0) {
            return Err("history lengths must be positive".into());
        }
        if self
            .history_lengths
            .last()
            .is_some_and(|&h| h > MAX_HISTORY)
        {
            return Err(format!("history lengths are limited to {MAX_HISTORY} bits"));
        }
        if !(self.misprediction_penalty >= 0.0 && self.misprediction_penalty.is_finite()) {
            return Err("misprediction penalty must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub taken: bool,
    pub target: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BtbEntry {
    tag: u64,
    target: u64,
}

/// Set-associative BTB, each set kept in MRU-first order.
#[derive(Debug, Clone)]
pub struct Btb {
    sets: Vec<Vec<BtbEntry>>,
    ways: usize,
}

impl Btb {
    pub fn new(sets: usize, ways: usize) -> Self {
        Btb {
            sets: vec![Vec::with_capacity(ways); sets],
            ways,
        }
    }

    fn locate(&self, pc: u64) -> (usize, u64) {
        let n = self.sets.len() as u64;
        ((pc % n) as usize, pc / n)
    }

    pub fn lookup(&self, pc: u64) -> Option<u64> {
        let (set, tag) = self.locate(pc);
        self.sets[set]
            .iter()
            .find(|e| e.tag == tag)
            .map(|e| e.target)
    }

    /// Inserts or refreshes `pc -> target` as most recently used.
    pub fn insert(&mut self, pc: u64, target: u64) {
        let (set, tag) = self.locate(pc);
        let ways = self.ways;
        let entries = &mut self.sets[set];
        if let Some(pos) = entries.iter().position(|e| e.tag == tag) {
            entries.remove(pos);
        } else if entries.len() == ways {
            entries.pop();
        }
        entries.insert(0, BtbEntry { tag, target });
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct TaggedEntry {
    valid: bool,
    tag: u16,
    ctr: i8,
    useful: bool,
}

#[derive(Debug, Clone)]
struct TaggedTable {
    history: usize,
    entries: Vec<TaggedEntry>,
}

/// Result of probing the direction tables.
#[derive(Debug, Clone, Copy)]
struct Lookup {
    /// Longest-history table with a tag hit, and its slot.
    provider: Option<(usize, usize)>,
    /// Prediction the provider would be overruled by.
    alt_taken: bool,
    taken: bool,
}

#[derive(Debug, Clone)]
pub struct PredictorState {
    config: BranchConfig,
    btb: Btb,
    base: Vec<u8>,
    tables: Vec<TaggedTable>,
    history: u128,
    pub predicted: u64,
    pub mispredicted: u64,
}

fn fold(history: u128, length: usize, bits: u32) -> u64 {
    let mut h = if length >= 128 {
        history
    } else {
        history & ((1u128 << length) - 1)
    };
    let mask = (1u128 << bits) - 1;
    let mut out = 0u128;
    while h != 0 {
        out ^= h & mask;
        h >>= bits;
    }
    out as u64
}

fn mix(pc: u64) -> u64 {
    // cheap avalanche so nearby pcs spread across the tables
    let mut x = pc.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x ^= x >> 29;
    x
}

impl PredictorState {
    pub fn new(config: &BranchConfig) -> Self {
        let tables = config
            .history_lengths
            .iter()
            .map(|&history| TaggedTable {
                history,
                entries: vec![TaggedEntry::default(); 1 << config.tage_entries_log2],
            })
            .collect();
        PredictorState {
            config: config.clone(),
            btb: Btb::new(config.btb_sets, config.btb_ways),
            // weakly not-taken
            base: vec![1; 1 << config.base_entries_log2],
            tables,
            history: 0,
            predicted: 0,
            mispredicted: 0,
        }
    }

    fn base_index(&self, pc: u64) -> usize {
        (mix(pc) as usize) & (self.base.len() - 1)
    }

    fn slot(&self, table: usize, pc: u64) -> (usize, u16) {
        let bits = self.config.tage_entries_log2;
        let t = &self.tables[table];
        let h = mix(pc);
        let index = (h
            ^ (h >> bits)
            ^ fold(self.history, t.history, bits)
            ^ (table as u64).wrapping_mul(0x5bd1))
            & ((1 << bits) - 1);
        let tag = ((h >> 17)
            ^ fold(self.history, t.history, TAG_BITS)
            ^ (fold(self.history, t.history, TAG_BITS - 1) << 1))
            & ((1 << TAG_BITS) - 1);
        (index as usize, tag as u16)
    }

    fn lookup(&self, pc: u64) -> Lookup {
        let base_taken = self.base[self.base_index(pc)] >= 2;
        let mut hits = (0..self.tables.len()).rev().filter_map(|t| {
            let (index, tag) = self.slot(t, pc);
            let e = &self.tables[t].entries[index];
            (e.valid && e.tag == tag).then_some((t, index))
        });
        let provider = hits.next();
        let alt = hits.next();
        let taken_at = |(t, i): (usize, usize)| self.tables[t].entries[i].ctr >= 0;
        let alt_taken = alt.map_or(base_taken, taken_at);
        let taken = provider.map_or(base_taken, taken_at);
        Lookup {
            provider,
            alt_taken,
            taken,
        }
    }

    /// Predicts a branch without changing any state.
    pub fn predict(&self, pc: u64, kind: BranchKind) -> Prediction {
        let taken = match kind {
            BranchKind::Conditional => self.lookup(pc).taken,
            BranchKind::Direct | BranchKind::Indirect => true,
            BranchKind::None => false,
        };
        Prediction {
            taken,
            target: self.btb.lookup(pc),
        }
    }

    /// Trains the predictor with the actual outcome.
    pub fn update(&mut self, pc: u64, actual: &BranchInfo) {
        if actual.kind == BranchKind::Conditional {
            self.train_direction(pc, actual.taken);
        }
        if actual.taken {
            self.btb.insert(pc, actual.target);
        }
        if actual.kind != BranchKind::None {
            self.history = (self.history << 1) | u128::from(actual.taken);
        }
    }

    fn train_direction(&mut self, pc: u64, taken: bool) {
        let look = self.lookup(pc);
        let wrong = look.taken != taken;

        let first_longer = match look.provider {
            Some((t, _)) => t + 1,
            None => 0,
        };
        if wrong && first_longer < self.tables.len() {
            let candidates: Vec<(usize, usize, u16)> = (first_longer..self.tables.len())
                .map(|t| {
                    let (index, tag) = self.slot(t, pc);
                    (t, index, tag)
                })
                .collect();
            match candidates
                .iter()
                .find(|&&(t, i, _)| !self.tables[t].entries[i].useful)
            {
                Some(&(t, index, tag)) => {
                    self.tables[t].entries[index] = TaggedEntry {
                        valid: true,
                        tag,
                        ctr: if taken { 0 } else { -1 },
                        useful: false,
                    };
                }
                None => {
                    for &(t, i, _) in &candidates {
                        self.tables[t].entries[i].useful = false;
                    }
                }
            }
        }

        match look.provider {
            Some((t, i)) => {
                let e = &mut self.tables[t].entries[i];
                let provider_taken = e.ctr >= 0;
                if provider_taken != look.alt_taken {
                    e.useful = provider_taken == taken;
                }
                e.ctr = if taken {
                    (e.ctr + 1).min(CTR_MAX)
                } else {
                    (e.ctr - 1).max(CTR_MIN)
                };
            }
            None => {
                let i = self.base_index(pc);
                let c = &mut self.base[i];
                *c = if taken {
                    (*c + 1).min(3)
                } else {
                    c.saturating_sub(1)
                };
            }
        }
    }

    /// Predicts, scores and trains in one step; returns the frontend delay.
    pub fn observe(&mut self, pc: u64, actual: &BranchInfo) -> f64 {
        let prediction = self.predict(pc, actual.kind);
        let delay = misprediction_delay(&prediction, actual, &self.config);
        self.predicted += 1;
        if !is_correct(&prediction, actual) {
            self.mispredicted += 1;
        }
        self.update(pc, actual);
        delay
    }
}

fn is_correct(predicted: &Prediction, actual: &BranchInfo) -> bool {
    if predicted.taken != actual.taken {
        return false;
    }
    !actual.taken || predicted.target == Some(actual.target)
}

/// Cycles lost to a wrong direction or, for taken branches, a wrong or
/// missing target.
pub fn misprediction_delay(
    predicted: &Prediction,
    actual: &BranchInfo,
    config: &BranchConfig,
) -> f64 {
    if !config.enabled || is_correct(predicted, actual) {
        0.0
    } else {
        config.misprediction_penalty
    }
}
