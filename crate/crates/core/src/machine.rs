//! The modeled machine and its accelerated variants.
//!
//! A machine is a set of throughput-limited resources, each with a gap
//! (inverse throughput, in cycles per use), a table mapping instruction kinds
//! to multisets of those resources, an instruction window, an optional cache
//! hierarchy and an optional branch predictor.
//!
//! Configs are written in TOML:
//!
//! ```toml
//! frontend = "FRONTEND"
//! window = 224
//! memory_gap = 5.0
//!
//! [[resources]]
//! name = "p23"
//! gap = 0.5
//!
//! [kinds.vmovsd-load]
//! resources = ["p23"]
//! latency = 4
//!
//! [[caches]]
//! name = "L1"
//! size = 32768
//! assoc = 8
//! line = 64
//! gap = 0.5
//! ```
//!
//! Sensitivity analysis accelerates a machine through [`WeightVector`]s:
//! every resource name, `INST_LAT`, `INST_WINDOW`, `<LEVEL>_THR` for each
//! cache level below L1, and `MEM_THR` are accelerable parameters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::Deserialize;
use thiserror::Error;

use crate::branch::BranchConfig;

pub const INST_LAT: &str = "INST_LAT";
pub const INST_WINDOW: &str = "INST_WINDOW";
pub const MEM_THR: &str = "MEM_THR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("duplicate resource `{0}`")]
    DuplicateResource(String),
    #[error("resource name `{0}` is reserved")]
    ReservedName(String),
    #[error("kind `{kind}` references unknown resource `{resource}`")]
    UnknownResourceInKind { kind: String, resource: String },
    #[error("frontend resource `{0}` is not defined")]
    UnknownFrontend(String),
    #[error("`{name}`: gap must be positive and finite, got {gap}")]
    NonPositiveGap { name: String, gap: f64 },
    #[error("kind `{kind}`: latency must be finite and non-negative, got {latency}")]
    BadLatency { kind: String, latency: f64 },
    #[error("window capacity must be at least 1")]
    EmptyWindow,
    #[error("latency scale must be positive, got {0}")]
    BadLatencyScale(f64),
    #[error("cache level `{name}`: {reason}")]
    BadCacheLevel { name: String, reason: String },
    #[error("branch predictor: {0}")]
    BadBranchConfig(String),
    #[error("unknown accelerable parameter `{0}`")]
    UnknownParameter(String),
    #[error("weight for `{name}` must be >= 1, got {weight}")]
    InvalidWeight { name: String, weight: f64 },
}

/// Dense index of a resource within its machine. Stable across
/// [`MachineConfig::apply_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Resource {
    pub id: ResourceId,
    pub name: String,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionKind {
    pub name: String,
    /// Multiset: a resource may appear several times.
    pub resources: Vec<ResourceId>,
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheLevelConfig {
    pub name: String,
    pub total_size: u64,
    pub associativity: u64,
    pub line_size: u64,
    /// Cycles per line transferred into this level.
    pub gap: f64,
}

impl CacheLevelConfig {
    pub fn sets(&self) -> u64 {
        self.total_size / (self.associativity * self.line_size)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |reason: &str| ConfigError::BadCacheLevel {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.total_size == 0 || self.associativity == 0 || self.line_size == 0 {
            return Err(bad("size, associativity and line size must be positive"));
        }
        if !self.line_size.is_power_of_two() {
            return Err(bad("line size must be a power of two"));
        }
        if !self.associativity.is_power_of_two() {
            return Err(bad("associativity must be a power of two"));
        }
        if !self
            .total_size
            .is_multiple_of(self.associativity * self.line_size)
        {
            return Err(bad("size must be divisible by associativity x line size"));
        }
        if !(self.gap > 0.0 && self.gap.is_finite()) {
            return Err(bad("gap must be positive"));
        }
        Ok(())
    }
}

/// Granularity of the shadow memory used for memory dependencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadowGranularity {
    #[default]
    Byte,
    Line,
}

/// Something sensitivity analysis can accelerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Parameter {
    Resource(ResourceId),
    InstLatency,
    InstWindow,
    /// Bandwidth into cache level `n` (n >= 1; L1 is free).
    CacheBandwidth(usize),
    MemoryBandwidth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineConfig {
    resources: Vec<Resource>,
    by_name: HashMap<String, ResourceId>,
    kinds: BTreeMap<String, InstructionKind>,
    pub window_capacity: usize,
    frontend: Option<ResourceId>,
    pub latency_scale: f64,
    pub cache_levels: Vec<CacheLevelConfig>,
    pub memory_gap: f64,
    pub shadow_granularity: ShadowGranularity,
    pub branch: BranchConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResource {
    name: String,
    gap: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKind {
    #[serde(default)]
    resources: Vec<String>,
    latency: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCache {
    name: String,
    size: u64,
    assoc: u64,
    line: u64,
    gap: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    resources: Vec<RawResource>,
    frontend: Option<String>,
    window: usize,
    #[serde(default)]
    latency_scale: Option<f64>,
    #[serde(default)]
    kinds: BTreeMap<String, RawKind>,
    #[serde(default)]
    caches: Vec<RawCache>,
    #[serde(default)]
    memory_gap: Option<f64>,
    #[serde(default)]
    shadow_granularity: ShadowGranularity,
    #[serde(default)]
    branch: BranchConfig,
}

fn is_reserved(name: &str) -> bool {
    name == INST_LAT || name == INST_WINDOW || name == MEM_THR || name.ends_with("_THR")
}

fn check_gap(name: &str, gap: f64) -> Result<(), ConfigError> {
    if gap > 0.0 && gap.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::NonPositiveGap {
            name: name.to_string(),
            gap,
        })
    }
}

impl MachineConfig {
    /// Parses and validates a TOML machine description.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| ConfigError::Malformed(e.to_string()))?;

        let mut builder = MachineBuilder::new(raw.window);
        for r in &raw.resources {
            builder = builder.resource(&r.name, r.gap);
        }
        for (name, kind) in &raw.kinds {
            let res: Vec<&str> = kind.resources.iter().map(String::as_str).collect();
            builder = builder.kind(name, &res, kind.latency);
        }
        if let Some(frontend) = &raw.frontend {
            builder = builder.frontend(frontend);
        }
        if let Some(scale) = raw.latency_scale {
            builder = builder.latency_scale(scale);
        }
        for c in raw.caches {
            builder = builder.cache(CacheLevelConfig {
                name: c.name,
                total_size: c.size,
                associativity: c.assoc,
                line_size: c.line,
                gap: c.gap,
            });
        }
        if let Some(gap) = raw.memory_gap {
            builder = builder.memory_gap(gap);
        } else if !builder.caches.is_empty() {
            return Err(ConfigError::Malformed(
                "`memory_gap` is required when caches are configured".into(),
            ));
        }
        builder
            .shadow_granularity(raw.shadow_granularity)
            .branch(raw.branch)
            .build()
    }

    pub fn resources(&self) -> &[Resource] {
        &self.resources
    }

    pub fn resource(&self, id: ResourceId) -> &Resource {
        &self.resources[id.0]
    }

    pub fn resource_id(&self, name: &str) -> Option<ResourceId> {
        self.by_name.get(name).copied()
    }

    pub fn kind(&self, name: &str) -> Option<&InstructionKind> {
        self.kinds.get(name)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &InstructionKind> {
        self.kinds.values()
    }

    pub fn frontend(&self) -> Option<ResourceId> {
        self.frontend
    }

    /// Line size shared by every cache level, if there are caches.
    pub fn line_size(&self) -> Option<u64> {
        self.cache_levels.first().map(|l| l.line_size)
    }

    /// Looks up an accelerable parameter by its report name.
    pub fn parameter(&self, name: &str) -> Option<Parameter> {
        if let Some(id) = self.resource_id(name) {
            return Some(Parameter::Resource(id));
        }
        match name {
            INST_LAT => Some(Parameter::InstLatency),
            INST_WINDOW => Some(Parameter::InstWindow),
            MEM_THR if !self.cache_levels.is_empty() => Some(Parameter::MemoryBandwidth),
            _ => self
                .cache_levels
                .iter()
                .enumerate()
                .skip(1)
                .find(|(_, l)| bandwidth_name(&l.name) == name)
                .map(|(i, _)| Parameter::CacheBandwidth(i)),
        }
    }

    pub fn parameter_name(&self, p: Parameter) -> String {
        match p {
            Parameter::Resource(id) => self.resource(id).name.clone(),
            Parameter::InstLatency => INST_LAT.to_string(),
            Parameter::InstWindow => INST_WINDOW.to_string(),
            Parameter::CacheBandwidth(i) => bandwidth_name(&self.cache_levels[i].name),
            Parameter::MemoryBandwidth => MEM_THR.to_string(),
        }
    }

    /// Named resources, in id order.
    pub fn resource_parameters(&self) -> Vec<String> {
        self.resources.iter().map(|r| r.name.clone()).collect()
    }

    /// Every accelerable parameter: resources, then latency, window and
    /// cache bandwidths.
    pub fn all_parameters(&self) -> Vec<String> {
        let mut names = self.resource_parameters();
        names.push(INST_LAT.to_string());
        names.push(INST_WINDOW.to_string());
        for level in self.cache_levels.iter().skip(1) {
            names.push(bandwidth_name(&level.name));
        }
        if !self.cache_levels.is_empty() {
            names.push(MEM_THR.to_string());
        }
        names
    }

    /// Returns an accelerated copy. Throughput gaps are divided by their
    /// weight, `INST_LAT` divides the latency scale, and `INST_WINDOW`
    /// multiplies the window capacity (rounded half-up, at least 1).
    pub fn apply_weights(&self, weights: &WeightVector) -> Result<MachineConfig, ConfigError> {
        let mut out = self.clone();
        for (name, &weight) in weights.iter() {
            if !(weight >= 1.0 && weight.is_finite()) {
                return Err(ConfigError::InvalidWeight {
                    name: name.clone(),
                    weight,
                });
            }
            let param = self
                .parameter(name)
                .ok_or_else(|| ConfigError::UnknownParameter(name.clone()))?;
            match param {
                Parameter::Resource(id) => out.resources[id.0].gap /= weight,
                Parameter::InstLatency => out.latency_scale /= weight,
                Parameter::InstWindow => {
                    let scaled = (out.window_capacity as f64 * weight + 0.5).floor();
                    out.window_capacity = (scaled as usize).max(1);
                }
                Parameter::CacheBandwidth(i) => out.cache_levels[i].gap /= weight,
                Parameter::MemoryBandwidth => out.memory_gap /= weight,
            }
        }
        Ok(out)
    }
}

/// `L2` -> `L2_THR`.
pub fn bandwidth_name(level: &str) -> String {
    format!("{}_THR", level.to_uppercase())
}

/// Programmatic construction of a [`MachineConfig`]; validation happens in
/// [`MachineBuilder::build`].
#[derive(Debug, Clone)]
pub struct MachineBuilder {
    resources: Vec<(String, f64)>,
    kinds: Vec<(String, Vec<String>, f64)>,
    window: usize,
    frontend: Option<String>,
    latency_scale: f64,
    caches: Vec<CacheLevelConfig>,
    memory_gap: Option<f64>,
    shadow_granularity: ShadowGranularity,
    branch: BranchConfig,
}

impl MachineBuilder {
    pub fn new(window: usize) -> Self {
        MachineBuilder {
            resources: Vec::new(),
            kinds: Vec::new(),
            window,
            frontend: None,
            latency_scale: 1.0,
            caches: Vec::new(),
            memory_gap: None,
            shadow_granularity: ShadowGranularity::Byte,
            branch: BranchConfig::default(),
        }
    }

    pub fn resource(mut self, name: &str, gap: f64) -> Self {
        self.resources.push((name.to_string(), gap));
        self
    }

    pub fn kind(mut self, name: &str, resources: &[&str], latency: f64) -> Self {
        self.kinds.push((
            name.to_string(),
            resources.iter().map(|r| r.to_string()).collect(),
            latency,
        ));
        self
    }

    pub fn frontend(mut self, name: &str) -> Self {
        self.frontend = Some(name.to_string());
        self
    }

    pub fn latency_scale(mut self, scale: f64) -> Self {
        self.latency_scale = scale;
        self
    }

    pub fn cache(mut self, level: CacheLevelConfig) -> Self {
        self.caches.push(level);
        self
    }

    pub fn memory_gap(mut self, gap: f64) -> Self {
        self.memory_gap = Some(gap);
        self
    }

    pub fn shadow_granularity(mut self, g: ShadowGranularity) -> Self {
        self.shadow_granularity = g;
        self
    }

    pub fn branch(mut self, branch: BranchConfig) -> Self {
        self.branch = branch;
        self
    }

    pub fn build(self) -> Result<MachineConfig, ConfigError> {
        let mut resources = Vec::with_capacity(self.resources.len());
        let mut by_name = HashMap::new();
        for (i, (name, gap)) in self.resources.into_iter().enumerate() {
            if is_reserved(&name) {
                return Err(ConfigError::ReservedName(name));
            }
            check_gap(&name, gap)?;
            if by_name.insert(name.clone(), ResourceId(i)).is_some() {
                return Err(ConfigError::DuplicateResource(name));
            }
            resources.push(Resource {
                id: ResourceId(i),
                name,
                gap,
            });
        }

        let mut kinds = BTreeMap::new();
        for (name, res, latency) in self.kinds {
            if !(latency >= 0.0 && latency.is_finite()) {
                return Err(ConfigError::BadLatency {
                    kind: name,
                    latency,
                });
            }
            let ids = res
                .iter()
                .map(|r| {
                    by_name
                        .get(r)
                        .copied()
                        .ok_or_else(|| ConfigError::UnknownResourceInKind {
                            kind: name.clone(),
                            resource: r.clone(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            kinds.insert(
                name.clone(),
                InstructionKind {
                    name,
                    resources: ids,
                    latency,
                },
            );
        }

        let frontend = match self.frontend {
            Some(name) => Some(
                by_name
                    .get(&name)
                    .copied()
                    .ok_or(ConfigError::UnknownFrontend(name))?,
            ),
            None => None,
        };

        if self.window == 0 {
            return Err(ConfigError::EmptyWindow);
        }
        if !(self.latency_scale > 0.0 && self.latency_scale.is_finite()) {
            return Err(ConfigError::BadLatencyScale(self.latency_scale));
        }

        for level in &self.caches {
            level.validate()?;
            if is_reserved(&level.name) {
                return Err(ConfigError::ReservedName(level.name.clone()));
            }
        }
        for pair in self.caches.windows(2) {
            if pair[1].total_size <= pair[0].total_size {
                return Err(ConfigError::BadCacheLevel {
                    name: pair[1].name.clone(),
                    reason: "levels must be ordered by increasing capacity".into(),
                });
            }
            if pair[1].line_size != pair[0].line_size {
                return Err(ConfigError::BadCacheLevel {
                    name: pair[1].name.clone(),
                    reason: "all levels must share one line size".into(),
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for level in &self.caches {
            if !seen.insert(bandwidth_name(&level.name)) || by_name.contains_key(&level.name) {
                return Err(ConfigError::BadCacheLevel {
                    name: level.name.clone(),
                    reason: "duplicate level name".into(),
                });
            }
        }
        let memory_gap = self.memory_gap.unwrap_or(1.0);
        check_gap("memory", memory_gap)?;

        self.branch
            .validate()
            .map_err(ConfigError::BadBranchConfig)?;
        if self.branch.enabled && frontend.is_none() {
            return Err(ConfigError::BadBranchConfig(
                "an enabled predictor needs a frontend resource to delay".into(),
            ));
        }

        Ok(MachineConfig {
            resources,
            by_name,
            kinds,
            window_capacity: self.window,
            frontend,
            latency_scale: self.latency_scale,
            cache_levels: self.caches,
            memory_gap,
            shadow_granularity: self.shadow_granularity,
            branch: self.branch,
        })
    }
}

/// Acceleration weights keyed by parameter name. All weights must be >= 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightVector(BTreeMap<String, f64>);

impl WeightVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn uniform<S: AsRef<str>>(names: &[S], weight: f64) -> Self {
        WeightVector(
            names
                .iter()
                .map(|n| (n.as_ref().to_string(), weight))
                .collect(),
        )
    }

    pub fn with(mut self, name: &str, weight: f64) -> Self {
        self.0.insert(name.to_string(), weight);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.0.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        window = 4
        [[resources]]
        name = "p0"
        gap = 1
    "#;

    #[test]
    fn minimal_config_loads() {
        let c = MachineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.resources().len(), 1);
        assert_eq!(c.window_capacity, 4);
        assert_eq!(c.frontend(), None);
        assert!(c.cache_levels.is_empty());
        assert_eq!(c.latency_scale, 1.0);
    }

    #[test]
    fn kind_with_unknown_port_rejected() {
        let text = format!("{MINIMAL}\n[kinds.mul]\nresources = [\"p9\"]\nlatency = 3\n");
        assert!(matches!(
            MachineConfig::from_toml(&text),
            Err(ConfigError::UnknownResourceInKind { .. })
        ));
    }

    #[test]
    fn validation_errors() {
        let dup =
            "window = 1\n[[resources]]\nname=\"a\"\ngap=1\n[[resources]]\nname=\"a\"\ngap=2\n";
        assert!(matches!(
            MachineConfig::from_toml(dup),
            Err(ConfigError::DuplicateResource(_))
        ));
        let zero = "window = 1\n[[resources]]\nname=\"a\"\ngap=0\n";
        assert!(matches!(
            MachineConfig::from_toml(zero),
            Err(ConfigError::NonPositiveGap { .. })
        ));
        let reserved = "window = 1\n[[resources]]\nname=\"INST_LAT\"\ngap=1\n";
        assert!(matches!(
            MachineConfig::from_toml(reserved),
            Err(ConfigError::ReservedName(_))
        ));
        assert!(matches!(
            MachineConfig::from_toml("window = 1\nresources = []\nfrontend = \"x\"\n"),
            Err(ConfigError::UnknownFrontend(_))
        ));
        assert!(matches!(
            MachineConfig::from_toml("window = 0\nresources = []\n"),
            Err(ConfigError::EmptyWindow)
        ));
        assert!(matches!(
            MachineConfig::from_toml("window = [\n"),
            Err(ConfigError::Malformed(_))
        ));
    }

    #[test]
    fn cache_geometry_validation() {
        let level = |assoc, line| CacheLevelConfig {
            name: "L1".into(),
            total_size: 3 * 64 * 4,
            associativity: assoc,
            line_size: line,
            gap: 1.0,
        };
        let build = |l| MachineBuilder::new(1).cache(l).memory_gap(1.0).build();
        assert!(build(level(3, 64)).is_err());
        assert!(build(level(4, 48)).is_err());
        assert!(build(level(4, 64)).is_ok());
    }

    #[test]
    fn weights_divide_gaps() {
        let c = MachineConfig::from_toml(MINIMAL).unwrap();
        let fast = c
            .apply_weights(&WeightVector::new().with("p0", 2.0))
            .unwrap();
        assert_eq!(fast.resources()[0].gap, 0.5);
        assert_eq!(c.resources()[0].gap, 1.0);
    }

    #[test]
    fn window_weight_rounds_half_up() {
        let c = MachineConfig::from_toml(MINIMAL).unwrap();
        let w = |x| {
            c.apply_weights(&WeightVector::new().with(INST_WINDOW, x))
                .unwrap()
                .window_capacity
        };
        assert_eq!(w(2.0), 8);
        assert_eq!(w(1.125), 5);
        assert_eq!(w(1.1), 4);
    }

    #[test]
    fn empty_weights_are_identity() {
        let c = MachineConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.apply_weights(&WeightVector::new()).unwrap(), c);
    }

    #[test]
    fn bad_weights_rejected() {
        let c = MachineConfig::from_toml(MINIMAL).unwrap();
        assert!(matches!(
            c.apply_weights(&WeightVector::new().with("p0", 0.5)),
            Err(ConfigError::InvalidWeight { .. })
        ));
        assert!(matches!(
            c.apply_weights(&WeightVector::new().with("nope", 2.0)),
            Err(ConfigError::UnknownParameter(_))
        ));
        // no caches, so no memory bandwidth parameter
        assert!(c
            .apply_weights(&WeightVector::new().with(MEM_THR, 2.0))
            .is_err());
    }

    #[test]
    fn latency_weight_scales_globally() {
        let c = MachineConfig::from_toml(MINIMAL).unwrap();
        let fast = c
            .apply_weights(&WeightVector::new().with(INST_LAT, 4.0))
            .unwrap();
        assert_eq!(fast.latency_scale, 0.25);
    }
}
