//! Report emission from a registry: comparison tables, training histories,
//! canonical trajectories and polyline SVG charts.
//!
//! Everything is derived from registry content only, so regenerating a
//! report is byte-identical. Absent inputs leave a `<file>.MISSING` marker
//! in place of the artifact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::dynamics::PlantSpec;
use crate::error::{CcdError, Result};
use crate::lifecycle::{
    deploy_name, eval_name, gen_name, trajectory_file, Comparison, Registry, COMPARISON_FILE, CONFIG_FILE,
    HISTORY_FILE,
};

pub const REPORT_DIR: &str = "report";
pub const RETURNS_TABLE: &str = "table1_returns.csv";
pub const SIGMA_TABLE: &str = "table2_sigma_ss.csv";
pub const RETURNS_CHART: &str = "returns.svg";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSummary {
    pub dir: PathBuf,
    pub written: Vec<String>,
    /// `(artifact, reason)` for every marker written.
    pub missing: Vec<(String, String)>,
}

impl ReportSummary {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

struct Writer {
    summary: ReportSummary,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.summary.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CcdError::io(&path, e))?;
        self.summary.written.push(name.to_string());
        Ok(())
    }

    fn missing(&mut self, name: &str, reason: String) -> Result<()> {
        let marker = format!("{name}.MISSING");
        let path = self.summary.dir.join(&marker);
        fs::write(&path, format!("MISSING: {reason}\n")).map_err(|e| CcdError::io(&path, e))?;
        self.summary.missing.push((name.to_string(), reason));
        Ok(())
    }
}

fn metric_label(plant: Option<&PlantSpec>, metric: &str) -> String {
    let unit = match (plant, metric) {
        (Some(PlantSpec::Suspension(_)), "x1" | "x3") => " (m)",
        (Some(PlantSpec::Suspension(_)), "x2" | "x4") => " (m/s)",
        (Some(PlantSpec::Suspension(_)), "u") => " (N)",
        _ => "",
    };
    format!("sigma_ss of {metric}{unit}")
}

/// Generations present in the registry, in order.
fn generations(reg: &Registry) -> Vec<usize> {
    (0..).take_while(|g| reg.contains(&gen_name(*g))).collect()
}

struct History {
    returns: Vec<f64>,
    design: Vec<(String, Vec<f64>)>,
}

fn parse_history(bytes: &[u8]) -> Result<History> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    let ret = header
        .iter()
        .position(|h| h == "avg_return")
        .ok_or_else(|| CcdError::Parse("history without avg_return".into()))?;
    // Design columns sit between mean_std and skipped_updates.
    let first = header.iter().position(|h| h == "mean_std").map_or(0, |i| i + 1);
    let last = header.iter().position(|h| h == "skipped_updates").unwrap_or(header.len());
    let mut h = History {
        returns: Vec::new(),
        design: header.iter().take(last).skip(first).map(|n| (n.to_string(), Vec::new())).collect(),
    };
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| CcdError::Parse(format!("bad history value in column {i}")))
        };
        h.returns.push(num(ret)?);
        for (k, (_, col)) in h.design.iter_mut().enumerate() {
            col.push(num(first + k)?);
        }
    }
    Ok(h)
}

/// A polyline chart; one series per training stage.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const L: f64 = 80.0;
    const R: f64 = 150.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

    let pts = series.iter().flat_map(|s| s.1.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        let pad = y0.abs().max(1.0) * 0.05;
        y0 -= pad;
        y1 += pad;
    }
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<polyline points="{L},{T} {L},{} {},{}" fill="none" stroke="black"/>"#,
        H - B,
        W - R,
        H - B
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(xv), H - B + 16.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, L - 6.0, sy(yv) + 4.0, tick(yv));
        let _ = writeln!(
            s,
            r##"<line x1="{L}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#dddddd"/>"##,
            W - R,
            y = sy(yv)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (L + W - R) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{y}" text-anchor="middle" transform="rotate(-90 18 {y})">{}</text>"#,
        escape(y_label),
        y = (T + H - B) / 2.0
    );
    for (k, (name, data)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = data
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            points.join(" ")
        );
        let ly = T + 16.0 * k as f64 + 8.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            W - R + 12.0,
            W - R + 32.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - R + 38.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn returns_table(cmp: &Comparison) -> Result<Vec<u8>> {
    let gens: Vec<_> = cmp.generations.iter().filter(|g| g.name != gen_name(0)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![String::new()];
    header.extend(gens.iter().map(|g| g.name.clone()));
    w.write_record(&header)?;
    let mut mean = vec!["Mean of returns".to_string()];
    mean.extend(gens.iter().map(|g| format!("{:.4}", g.mean)));
    w.write_record(&mean)?;
    let mut std = vec!["Std of returns".to_string()];
    std.extend(gens.iter().map(|g| format!("{:.4}", g.std)));
    w.write_record(&std)?;
    for (k, name) in gens.first().map(|g| g.design_names.clone()).unwrap_or_default().iter().enumerate() {
        let mut row = vec![format!("Design {name}")];
        row.extend(gens.iter().map(|g| format!("{:.4}", g.design[k])));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CcdError::Parse(e.to_string()))
}

fn sigma_table(cmp: &Comparison, plant: Option<&PlantSpec>) -> Result<Vec<u8>> {
    let cols: Vec<usize> = (0..cmp.generations.len())
        .filter(|&i| cmp.generations[i].name != gen_name(0))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Condition".to_string(), "Metric".to_string()];
    header.extend(cols.iter().map(|&i| cmp.generations[i].name.clone()));
    w.write_record(&header)?;
    for r in &cmp.sigma_ss {
        let mut row = vec![r.condition.to_string(), metric_label(plant, &r.metric)];
        row.extend(cols.iter().map(|&i| format!("{:.4}", r.values[i])));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CcdError::Parse(e.to_string()))
}

/// Writes the report for `reg` into `<out>/report`, replacing any previous
/// one.
pub fn write_report(reg: &Registry, out: &Path) -> Result<ReportSummary> {
    let dir = out.join(REPORT_DIR);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| CcdError::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| CcdError::io(&dir, e))?;
    let mut w = Writer {
        summary: ReportSummary {
            dir,
            ..Default::default()
        },
    };

    let gens = generations(reg);
    let plant = match gens.first() {
        Some(_) => {
            let text = reg.read_string(&gen_name(0), CONFIG_FILE)?;
            Some(ExperimentConfig::from_toml_str(&text, reg.root())?.plant)
        }
        None => None,
    };
    let last = gens.last().copied().unwrap_or(0).max(1);
    for g in 1..=last {
        if !reg.contains(&gen_name(g)) {
            w.missing(&format!("history-{}.csv", gen_name(g)), format!("registry has no {}", gen_name(g)))?;
        }
    }

    // Training histories, chained over the lifecycle: co-design, then
    // deployment fine-tuning, then the next co-design.
    let mut stages: Vec<(String, History)> = Vec::new();
    for g in 1..=last {
        for entry in [gen_name(g), deploy_name(g)] {
            if reg.contains(&entry) && reg.has_file(&entry, HISTORY_FILE) {
                let bytes = reg.read(&entry, HISTORY_FILE)?;
                w.put(&format!("history-{entry}.csv"), &bytes)?;
                stages.push((entry, parse_history(&bytes)?));
            }
        }
    }
    if stages.is_empty() {
        w.missing(RETURNS_CHART, "no training history in the registry".into())?;
    } else {
        let mut offset = 0.0;
        let mut ret_series = Vec::new();
        let mut design_series: Vec<(String, Vec<(String, Vec<(f64, f64)>)>)> = Vec::new();
        for (name, h) in &stages {
            let xs = |v: &[f64]| -> Vec<(f64, f64)> { v.iter().enumerate().map(|(i, &y)| (offset + i as f64, y)).collect() };
            ret_series.push((name.clone(), xs(&h.returns)));
            for (pname, col) in &h.design {
                match design_series.iter_mut().find(|d| &d.0 == pname) {
                    Some(d) => d.1.push((name.clone(), xs(col))),
                    None => design_series.push((pname.clone(), vec![(name.clone(), xs(col))])),
                }
            }
            offset += h.returns.len() as f64;
        }
        let chart = svg_line_chart("Average training return", "epoch (cumulative)", "return", &ret_series);
        w.put(RETURNS_CHART, chart.as_bytes())?;
        for (pname, series) in &design_series {
            let chart = svg_line_chart(&format!("Design parameter {pname}"), "epoch (cumulative)", pname, series);
            w.put(&format!("design-{pname}.svg"), chart.as_bytes())?;
        }
    }

    // Truth-plant comparison of the latest generation set.
    let eval = eval_name(last);
    if reg.contains(&eval) {
        let cmp: Comparison = serde_json::from_str(&reg.read_string(&eval, COMPARISON_FILE)?)?;
        w.put(RETURNS_TABLE, &returns_table(&cmp)?)?;
        w.put(SIGMA_TABLE, &sigma_table(&cmp, plant.as_ref())?)?;
        for g in cmp.generations.iter().filter(|g| g.name != gen_name(0)) {
            for k in 1..=cmp.canonical_states.len() {
                let file = trajectory_file(&g.name, k);
                w.put(&file, &reg.read(&eval, &file)?)?;
            }
        }
    } else {
        let reason = format!("registry has no {eval}; run `ccdtwin evaluate`");
        w.missing(RETURNS_TABLE, reason.clone())?;
        w.missing(SIGMA_TABLE, reason.clone())?;
        w.missing("trajectories", reason)?;
    }
    Ok(w.summary)
}
