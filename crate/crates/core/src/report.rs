//! Rendering of run reports, per-instruction usage tables and sensitivity
//! heatmaps.

use std::fmt::Write as _;

use serde::Serialize;

use crate::engine::{BranchCounters, SimError, SimResult};
use crate::sensitivity::{BottleneckVerdict, SensitivityReport};

pub const FORMAT_VERSION: u32 = 1;

/// One static instruction of the per-instruction table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstructionRow {
    pub pc: u64,
    pub label: String,
    /// Fraction of the run, aligned with [`InstructionTable::columns`].
    pub shares: Vec<f64>,
    pub latency: f64,
    pub resources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstructionTable {
    pub columns: Vec<String>,
    pub rows: Vec<InstructionRow>,
}

/// Share of each resource's capacity used by each pc:
/// `uses(pc, r) * gap(r) / total_cycles`. Resources nobody used are
/// dropped.
pub fn render_instruction_table(result: &SimResult) -> Result<InstructionTable, SimError> {
    if result.total_cycles <= 0.0 {
        return Err(SimError::ZeroTimeTrace);
    }
    let used: Vec<_> = result.resources.iter().filter(|r| r.uses > 0).collect();
    let columns = used.iter().map(|r| r.name.clone()).collect();
    let rows = result
        .per_pc
        .iter()
        .map(|(&pc, usage)| InstructionRow {
            pc,
            label: usage.label.clone(),
            shares: used
                .iter()
                .map(|r| {
                    usage.uses.get(&r.name).copied().unwrap_or(0) as f64 * r.gap
                        / result.total_cycles
                })
                .collect(),
            latency: usage.latency,
            resources: usage.resources.clone(),
        })
        .collect();
    Ok(InstructionTable { columns, rows })
}

/// Percentage with one decimal, ties to even.
pub fn format_percent(fraction: f64) -> String {
    let scaled = fraction * 1000.0;
    let rounded = scaled.round_ties_even();
    format!("{:.1}%", rounded / 10.0)
}

fn format_number(x: f64) -> String {
    format!("{x}")
}

impl InstructionTable {
    /// Fixed-width text rendering.
    pub fn to_text(&self) -> String {
        let mut header = vec!["PC".to_string(), "INSTRUCTION".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("LAT/RESOURCES".to_string());
        let mut lines: Vec<Vec<String>> = vec![header];
        for row in &self.rows {
            let mut cells = vec![format!("{:x}", row.pc), row.label.clone()];
            cells.extend(row.shares.iter().map(|&s| format_percent(s)));
            cells.push(format!(
                "{}/{}",
                format_number(row.latency),
                row.resources.join(" ")
            ));
            lines.push(cells);
        }
        let ncols = lines[0].len();
        let widths: Vec<usize> = (0..ncols)
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &lines {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    if c == 1 || c == ncols - 1 {
                        format!("{cell:<w$}", w = widths[c])
                    } else {
                        format!("{cell:>w$}", w = widths[c])
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize)]
struct ResourceRow<'a> {
    name: &'a str,
    gap: f64,
    uses: u64,
    busy: f64,
    occupancy: f64,
}

#[derive(Serialize)]
struct CacheRow {
    hits: u64,
    misses: u64,
}

#[derive(Serialize)]
struct JsonInstruction {
    pc: String,
    label: String,
    count: u64,
    latency: f64,
    resources: Vec<String>,
    shares: std::collections::BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct RunReport<'a> {
    format_version: u32,
    total_cycles: f64,
    instructions: u64,
    ipc: f64,
    resources: Vec<ResourceRow<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    caches: Option<std::collections::BTreeMap<String, CacheRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    memory_accesses: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    branch: Option<BranchCounters>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_instruction: Option<Vec<JsonInstruction>>,
}

/// Machine-readable run report. Key order is fixed, so equal results give
/// byte-identical documents.
pub fn run_report_json(result: &SimResult, per_instruction: bool) -> Result<String, SimError> {
    let total = result.total_cycles;
    let occupancy = |busy: f64| if total > 0.0 { busy / total } else { 0.0 };
    let caches = (!result.caches.is_empty()).then(|| {
        result
            .caches
            .iter()
            .map(|c| {
                (
                    c.name.clone(),
                    CacheRow {
                        hits: c.hits,
                        misses: c.misses,
                    },
                )
            })
            .collect()
    });
    let per_instruction = if per_instruction {
        let table = render_instruction_table(result)?;
        Some(
            table
                .rows
                .iter()
                .map(|row| JsonInstruction {
                    pc: format!("{:#x}", row.pc),
                    label: row.label.clone(),
                    count: result.per_pc[&row.pc].count,
                    latency: row.latency,
                    resources: row.resources.clone(),
                    shares: table
                        .columns
                        .iter()
                        .cloned()
                        .zip(row.shares.iter().copied())
                        .collect(),
                })
                .collect(),
        )
    } else {
        None
    };
    let report = RunReport {
        format_version: FORMAT_VERSION,
        total_cycles: total,
        instructions: result.instruction_count,
        ipc: result.ipc(),
        resources: result
            .resources
            .iter()
            .map(|r| ResourceRow {
                name: &r.name,
                gap: r.gap,
                uses: r.uses,
                busy: r.busy,
                occupancy: occupancy(r.busy),
            })
            .collect(),
        memory_accesses: caches.as_ref().map(|_| result.memory_accesses),
        caches,
        branch: result.branch,
        per_instruction,
    };
    let mut out = serde_json::to_string_pretty(&report).expect("report serializes");
    out.push('\n');
    Ok(out)
}

/// Human-readable run summary.
pub fn run_report_text(result: &SimResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "total cycles  {}", format_number(result.total_cycles));
    let _ = writeln!(out, "instructions  {}", result.instruction_count);
    let _ = writeln!(out, "ipc           {:.3}", result.ipc());
    if result.total_cycles > 0.0 {
        let _ = writeln!(out, "\nresource  uses  busy  occupancy");
        for r in &result.resources {
            let _ = writeln!(
                out,
                "{}  {}  {}  {}",
                r.name,
                r.uses,
                format_number(r.busy),
                format_percent(r.busy / result.total_cycles)
            );
        }
    }
    for c in &result.caches {
        let _ = writeln!(
            out,
            "cache {}: {} hits, {} misses",
            c.name, c.hits, c.misses
        );
    }
    if let Some(b) = result.branch {
        let _ = writeln!(
            out,
            "branches: {} predicted, {} mispredicted",
            b.predicted, b.mispredicted
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Csv,
    Svg,
}

pub fn emit_heatmap(report: &SensitivityReport, format: HeatmapFormat) -> String {
    match format {
        HeatmapFormat::Csv => heatmap_csv(report),
        HeatmapFormat::Svg => heatmap_svg(report),
    }
}

/// `parameter,weight,time,speedup`, rows sorted by (parameter, weight).
pub fn heatmap_csv(report: &SensitivityReport) -> String {
    let mut points: Vec<_> = report.points.iter().collect();
    points.sort_by(|a, b| {
        a.label()
            .cmp(&b.label())
            .then(a.weight.total_cmp(&b.weight))
    });
    let mut out = String::from("parameter,weight,time,speedup\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.label(),
            format_number(p.weight),
            format_number(p.time),
            format_number(p.speedup)
        );
    }
    out
}

/// 16 steps from white through red to black.
pub const COLOR_RAMP: [&str; 16] = [
    "#ffffff", "#ffdddd", "#ffbbbb", "#ff9999", "#ff7777", "#ff5555", "#ff3333", "#ff0000",
    "#dd0000", "#bb0000", "#990000", "#770000", "#550000", "#330000", "#1a0000", "#000000",
];

/// Ramp step for a speedup observed at `weight`: the fraction of the ideal
/// speedup `weight - 1` actually obtained.
pub fn ramp_index(speedup: f64, weight: f64) -> usize {
    let ideal = weight - 1.0;
    if ideal <= 0.0 || speedup <= 0.0 {
        return 0;
    }
    let ratio = (speedup / ideal).clamp(0.0, 1.0);
    (ratio * 15.0).round() as usize
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One bar per parameter set. Each bar stacks one segment per weight step
/// (lowest weight at the bottom), colored by how much of the ideal speedup
/// that step achieved; the bar height follows the best speedup.
pub fn heatmap_svg(report: &SensitivityReport) -> String {
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for p in &report.points {
        let label = p.label();
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push((p.weight, p.speedup)),
            None => groups.push((label, vec![(p.weight, p.speedup)])),
        }
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    for (_, steps) in &mut groups {
        steps.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let bar_w = 28.0;
    let spacing = 12.0;
    let plot_h = 200.0;
    let top = 20.0;
    let left = 40.0;
    let label_h = 80.0;
    let max_speedup = groups
        .iter()
        .flat_map(|(_, s)| s.iter().map(|&(_, sp)| sp))
        .fold(0.0f64, f64::max);
    let scale = if max_speedup > 0.0 {
        plot_h / max_speedup
    } else {
        0.0
    };
    let width = left + groups.len() as f64 * (bar_w + spacing) + spacing;
    let height = top + plot_h + label_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        out,
        r#"  <rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
    );
    let baseline = top + plot_h;
    let _ = writeln!(
        out,
        r##"  <line x1="{left}" y1="{baseline}" x2="{width}" y2="{baseline}" stroke="#444" stroke-width="1"/>"##
    );
    let _ = writeln!(
        out,
        r#"  <text x="4" y="{}" font-size="10" font-family="sans-serif">{}</text>"#,
        top + 4.0,
        xml_escape(&format!("{:.1}%", max_speedup * 100.0))
    );
    for (i, (label, steps)) in groups.iter().enumerate() {
        let x = left + spacing + i as f64 * (bar_w + spacing);
        let best = steps.iter().map(|&(_, s)| s).fold(0.0f64, f64::max);
        let _ = writeln!(
            out,
            r#"  <g class="bar" data-parameter="{}" data-max-speedup="{}">"#,
            xml_escape(label),
            format_number(best)
        );
        let bar_h = best.max(0.0) * scale;
        let seg_h = if steps.is_empty() {
            0.0
        } else {
            bar_h / steps.len() as f64
        };
        for (k, &(weight, sp)) in steps.iter().enumerate() {
            let y = baseline - (k as f64 + 1.0) * seg_h;
            let _ = writeln!(
                out,
                r##"    <rect x="{x}" y="{y}" width="{bar_w}" height="{seg_h}" fill="{}" stroke="#888" stroke-width="0.5"><title>{} w={} speedup={}</title></rect>"##,
                COLOR_RAMP[ramp_index(sp, weight)],
                xml_escape(label),
                format_number(weight),
                format_number(sp)
            );
        }
        let tx = x + bar_w / 2.0;
        let ty = baseline + 8.0;
        let _ = writeln!(
            out,
            r#"    <text x="{tx}" y="{ty}" font-size="10" font-family="sans-serif" transform="rotate(60 {tx} {ty})">{}</text>"#,
            xml_escape(label)
        );
        out.push_str("  </g>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// Text listing of verdicts.
pub fn verdicts_text(
    report: &SensitivityReport,
    verdicts: &[BottleneckVerdict],
    threshold: f64,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "base time  {}", format_number(report.base_time));
    let _ = writeln!(out, "threshold  {}", format_number(threshold));
    let width = verdicts
        .iter()
        .map(|v| v.label().len())
        .max()
        .unwrap_or(9)
        .max(9);
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  verdict",
        "parameter", "weight", "speedup"
    );
    for v in verdicts {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  {}",
            v.label(),
            format_number(v.weight),
            format_percent(v.max_speedup),
            if v.is_bottleneck { "BOTTLENECK" } else { "-" }
        );
    }
    out
}
