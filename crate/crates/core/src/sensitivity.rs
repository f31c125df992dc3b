//! Sensitivity analysis: rerun the model with parameters accelerated and
//! measure the speedup `base / accelerated - 1`.
//!
//! Runs are independent and fan out over rayon; results are keyed by
//! (parameters, weight) so the report never depends on completion order.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{simulate_resolved, SimError, SimOptions};
use crate::machine::{ConfigError, MachineConfig, WeightVector};
use crate::trace::{resolve_trace, InstructionEvent};

/// Weights swept when none are given.
pub const DEFAULT_WEIGHTS: [f64; 4] = [1.01, 1.05, 1.10, 1.15];
/// Extra weights for estimating headroom.
pub const HEADROOM_WEIGHTS: [f64; 3] = [1.25, 1.5, 2.0];
pub const DEFAULT_THRESHOLD: f64 = 0.01;
/// Largest group generated by a bare `upto` subset request.
pub const DEFAULT_SUBSET_SIZE: usize = 3;
/// Upper bound on runs a generated subset sweep may request.
pub const MAX_SUBSET_RUNS: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("execution time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("duplicate sweep point {parameters} at weight {weight}")]
    DuplicatePoint { parameters: String, weight: f64 },
    #[error("subset sweep would need {0} runs (limit {MAX_SUBSET_RUNS})")]
    TooManySubsets(usize),
    #[error("empty parameter set")]
    EmptySubset,
}

pub fn speedup(base: f64, accelerated: f64) -> Result<f64, SensitivityError> {
    if base.is_nan() || base <= 0.0 {
        return Err(SensitivityError::NonPositiveTime(base));
    }
    if accelerated.is_nan() || accelerated <= 0.0 {
        return Err(SensitivityError::NonPositiveTime(accelerated));
    }
    Ok(base / accelerated - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityPoint {
    pub parameters: Vec<String>,
    pub weight: f64,
    pub time: f64,
    pub speedup: f64,
}

impl SensitivityPoint {
    /// `p0+p2` style label.
    pub fn label(&self) -> String {
        self.parameters.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub base_time: f64,
    pub points: Vec<SensitivityPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BottleneckVerdict {
    pub parameters: Vec<String>,
    pub max_speedup: f64,
    /// Weight at which `max_speedup` was observed.
    pub weight: f64,
    pub is_bottleneck: bool,
}

impl BottleneckVerdict {
    pub fn label(&self) -> String {
        self.parameters.join("+")
    }
}

/// Runs the base configuration plus one variant per (set, weight).
fn sweep(
    trace: &[InstructionEvent],
    config: &MachineConfig,
    jobs: Vec<(Vec<String>, f64)>,
) -> Result<SensitivityReport, SensitivityError> {
    for (i, (params, weight)) in jobs.iter().enumerate() {
        if params.is_empty() {
            return Err(SensitivityError::EmptySubset);
        }
        if jobs[..i].iter().any(|(p, w)| p == params && w == weight) {
            return Err(SensitivityError::DuplicatePoint {
                parameters: params.join("+"),
                weight: *weight,
            });
        }
    }
    let variants = jobs
        .iter()
        .map(|(params, weight)| config.apply_weights(&WeightVector::uniform(params, *weight)))
        .collect::<Result<Vec<_>, _>>()?;

    let resolved = resolve_trace(trace, config).map_err(SimError::from)?;
    let base_time = simulate_resolved(&resolved, config, SimOptions::lean()).total_cycles;

    let times: Vec<f64> = variants
        .par_iter()
        .map(|variant| simulate_resolved(&resolved, variant, SimOptions::lean()).total_cycles)
        .collect();

    let mut points = jobs
        .into_iter()
        .zip(times)
        .map(|((parameters, weight), time)| {
            Ok(SensitivityPoint {
                parameters,
                weight,
                time,
                speedup: speedup(base_time, time)?,
            })
        })
        .collect::<Result<Vec<_>, SensitivityError>>()?;
    points.sort_by(|a, b| {
        a.label()
            .cmp(&b.label())
            .then(a.weight.total_cmp(&b.weight))
    });
    Ok(SensitivityReport { base_time, points })
}

/// Accelerates each parameter alone at each weight.
pub fn sweep_single<S: AsRef<str>>(
    trace: &[InstructionEvent],
    config: &MachineConfig,
    parameters: &[S],
    weights: &[f64],
) -> Result<SensitivityReport, SensitivityError> {
    let jobs = parameters
        .iter()
        .flat_map(|p| {
            weights
                .iter()
                .map(move |&w| (vec![p.as_ref().to_string()], w))
        })
        .collect();
    sweep(trace, config, jobs)
}

/// Accelerates every member of each subset together.
pub fn sweep_subsets(
    trace: &[InstructionEvent],
    config: &MachineConfig,
    subsets: &[Vec<String>],
    weight: f64,
) -> Result<SensitivityReport, SensitivityError> {
    let jobs = subsets
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.sort();
            s.dedup();
            (s, weight)
        })
        .collect();
    sweep(trace, config, jobs)
}

/// All subsets of `parameters` with 2..=`max_size` members (singletons are
/// the job of [`sweep_single`]), in lexicographic order of member indices.
pub fn subsets_up_to(
    parameters: &[String],
    max_size: usize,
) -> Result<Vec<Vec<String>>, SensitivityError> {
    let n = parameters.len();
    let mut count = 0usize;
    let mut binom = 1usize;
    for k in 1..=max_size.min(n) {
        binom = binom * (n - k + 1) / k;
        if k >= 2 {
            count = count.saturating_add(binom);
        }
    }
    if count > MAX_SUBSET_RUNS {
        return Err(SensitivityError::TooManySubsets(count));
    }
    let mut out = Vec::with_capacity(count);
    let mut stack: Vec<usize> = Vec::new();
    fn rec(
        start: usize,
        n: usize,
        max: usize,
        stack: &mut Vec<usize>,
        params: &[String],
        out: &mut Vec<Vec<String>>,
    ) {
        for i in start..n {
            stack.push(i);
            if stack.len() >= 2 {
                out.push(stack.iter().map(|&j| params[j].clone()).collect());
            }
            if stack.len() < max {
                rec(i + 1, n, max, stack, params, out);
            }
            stack.pop();
        }
    }
    rec(0, n, max_size, &mut stack, parameters, &mut out);
    Ok(out)
}

/// One verdict per parameter set, most sensitive first.
pub fn classify(report: &SensitivityReport, threshold: f64) -> Vec<BottleneckVerdict> {
    let mut verdicts: Vec<BottleneckVerdict> = Vec::new();
    for p in &report.points {
        match verdicts.iter_mut().find(|v| v.parameters == p.parameters) {
            Some(v) => {
                if p.speedup > v.max_speedup {
                    v.max_speedup = p.speedup;
                    v.weight = p.weight;
                }
            }
            None => verdicts.push(BottleneckVerdict {
                parameters: p.parameters.clone(),
                max_speedup: p.speedup,
                weight: p.weight,
                is_bottleneck: false,
            }),
        }
    }
    for v in &mut verdicts {
        v.is_bottleneck = v.max_speedup > threshold;
    }
    // stable: ties keep report order
    verdicts.sort_by(|a, b| b.max_speedup.total_cmp(&a.max_speedup));
    verdicts
}
