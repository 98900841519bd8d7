//! Markdown summaries and SVG plots from finished runs.
//!
//! Every plot is drawn from a CSV written next to it, so the numbers behind
//! a figure can always be checked against the figure:
//!
//! | plot                      | data                      | source                        |
//! |---------------------------|---------------------------|-------------------------------|
//! | `coverage.svg`            | `coverage.csv`            | `metrics.csv` coverage columns |
//! | `success_vs_distance.svg` | `success_vs_distance.csv` | radio model in `summary.json` |
//! |                           | `success_observed.csv`    | closed sessions in `events.jsonl` |
//! | `battery.svg`             | `battery.csv`             | `metrics.csv` battery columns  |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};
use pfsim_core::radio::{success_probability, Outcome, RadioParams};
use pfsim_core::sim::metrics::{METRICS_COLUMNS, METRICS_SCHEMA_VERSION};
use pfsim_core::sim::{Event, EventLog};

use crate::artifacts::{self, EVENTS_FILE, METRICS_FILE, SUMMARY_FILE};
use crate::error::{CliError, Result};
use crate::simulate::Summary;
use crate::svg::{self, Chart, Series};

pub const REPORT_FILE: &str = "report.md";
pub const NO_DATA: &str = "no data";

/// Distance step of the model curve in `success_vs_distance.csv`.
const CURVE_STEP_M: f64 = 0.5;

/// `metrics.csv` as columns keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub columns: BTreeMap<String, Vec<f64>>,
    pub rows: usize,
}

impl MetricsTable {
    pub fn column(&self, name: &str) -> &[f64] {
        self.columns.get(name).map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn read_metrics(path: &Path) -> Result<MetricsTable> {
    let text = artifacts::read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(first) = lines.next() else {
        return Ok(MetricsTable::default());
    };
    let expected = format!("# pfsim metrics v{METRICS_SCHEMA_VERSION}");
    if first.trim() != expected {
        return Err(CliError::artifact(path, format!("expected `{expected}` on the first line")));
    }
    let Some(header) = lines.next() else {
        return Ok(MetricsTable::default());
    };
    let names: Vec<&str> = header.split(',').collect();
    if names != METRICS_COLUMNS {
        return Err(CliError::artifact(path, "unexpected column header"));
    }
    let mut table = MetricsTable::default();
    for name in &names {
        table.columns.insert(name.to_string(), Vec::new());
    }
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(CliError::artifact(path, format!("row {}: {} cells", row + 1, cells.len())));
        }
        for (name, cell) in names.iter().zip(cells) {
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::artifact(path, format!("row {}: `{name}` is not a number", row + 1)))?;
            table.columns.get_mut(*name).unwrap().push(v);
        }
        table.rows += 1;
    }
    Ok(table)
}

fn read_summary(path: &Path) -> Result<Option<Summary>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = artifacts::read_text(path)?;
    serde_json::from_str(&text).map(Some).map_err(|e| CliError::artifact(path, e.to_string()))
}

fn read_events(path: &Path) -> Result<Option<EventLog>> {
    if !path.exists() {
        return Ok(None);
    }
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    EventLog::read_jsonl(BufReader::new(file)).map(Some).map_err(|e| CliError::artifact(path, e.to_string()))
}

/// Least-squares slope of `y` against `x`; `None` with fewer than two
/// distinct `x`.
pub fn slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Model success probability on a regular distance grid that also contains
/// every anchor distance exactly.
pub fn success_curve(radio: &RadioParams) -> Vec<(f64, f64, f64)> {
    let last = radio.anchors.last().map_or(12.0, |a| a.distance_m) + 2.0;
    let mut d: Vec<f64> = (0..).map(|i| i as f64 * CURVE_STEP_M).take_while(|&x| x <= last).collect();
    d.extend(radio.anchors.iter().map(|a| a.distance_m));
    d.sort_by(f64::total_cmp);
    d.dedup();
    d.into_iter().map(|x| (x, success_probability(x, false, radio), success_probability(x, true, radio))).collect()
}

/// Observed success rate of closed sessions per 1 m distance bin:
/// `(bin centre, rate, sessions)`.
pub fn observed_success(events: &EventLog) -> Vec<(f64, f64, u64)> {
    let mut bins: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for e in events.events() {
        if let Event::SessionClosed { outcome, contact_distance_m, .. } = e {
            let b = bins.entry(contact_distance_m.floor().max(0.0) as u64).or_default();
            b.1 += 1;
            if *outcome == Outcome::Success {
                b.0 += 1;
            }
        }
    }
    bins.into_iter().map(|(b, (ok, n))| (b as f64 + 0.5, ok as f64 / n as f64, n)).collect()
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    artifacts::write_text(path, &text)
}

fn write_svg(path: &Path, chart: &Chart) -> Result<()> {
    artifacts::write_text(path, &svg::render(chart))
}

/// Writes plots, their data and `report.md` into `dir`; returns the markdown.
pub fn report_dir(dir: &Path) -> Result<String> {
    let metrics_path = dir.join(METRICS_FILE);
    if !metrics_path.exists() {
        return Err(CliError::artifact(&metrics_path, "missing; run `simulate` first"));
    }
    let metrics = read_metrics(&metrics_path)?;
    let summary = read_summary(&dir.join(SUMMARY_FILE))?;
    let events = read_events(&dir.join(EVENTS_FILE))?;

    let mut md = String::new();
    let title =
        summary.as_ref().map_or_else(|| dir.display().to_string(), |s| format!("{} (seed {})", s.scenario, s.seed));
    let _ = writeln!(md, "# {title}\n");
    let _ = writeln!(md, "Run directory: `{}`\n", dir.display());

    if metrics.rows == 0 {
        let _ = writeln!(md, "{NO_DATA}: `{METRICS_FILE}` has no rows.");
        artifacts::write_text(&dir.join(REPORT_FILE), &md)?;
        warn!("{}: {NO_DATA}", dir.display());
        return Ok(md);
    }

    if let Some(s) = &summary {
        let _ = writeln!(md, "| metric | value |\n|---|---|");
        let _ = writeln!(md, "| peers | {} |", s.peers);
        let _ = writeln!(md, "| simulated time | {} s |", s.ticks as f64 * s.tick_s);
        let _ = writeln!(md, "| sessions opened | {} |", s.sessions_opened);
        for o in Outcome::ALL {
            let _ = writeln!(md, "| {} | {} |", o.as_str(), s.outcomes.get(o.as_str()).copied().unwrap_or(0));
        }
        let _ = writeln!(md, "| messages | {} |", s.messages);
        let _ = writeln!(md, "| bytes exchanged | {} |", s.bytes_exchanged);
        let _ = writeln!(md, "| admissions | {} |", s.admissions);
        let flow = match s.flow_ratio {
            None => "n/a (single community)".to_string(),
            Some(x) if x.is_infinite() => "inf (nothing crossed communities)".to_string(),
            Some(x) => format!("{x:.3}"),
        };
        let _ = writeln!(md, "| flow ratio | {flow} |");
        let _ = writeln!(md, "| relay reachability | {} |", s.relay_reachability);
        let _ = writeln!(
            md,
            "| final battery (mean / min / max) | {:.2} / {:.2} / {:.2} % |",
            s.battery.mean_pct, s.battery.min_pct, s.battery.max_pct
        );
        md.push('\n');
    }

    // coverage vs time
    let t = metrics.column("time_s");
    let cov: Vec<(f64, f64, f64, f64)> = (0..metrics.rows)
        .map(|i| {
            (
                t[i],
                metrics.column("coverage_mean")[i],
                metrics.column("coverage_within")[i],
                metrics.column("coverage_cross")[i],
            )
        })
        .collect();
    write_csv(
        &dir.join("coverage.csv"),
        "time_s,coverage_mean,coverage_within,coverage_cross",
        cov.iter().map(|(t, m, w, c)| format!("{t},{m},{w},{c}")),
    )?;
    write_svg(
        &dir.join("coverage.svg"),
        &Chart {
            title: "Item coverage".into(),
            x_label: "time (s)".into(),
            y_label: "fraction of peers holding item".into(),
            series: vec![
                Series::line("mean", cov.iter().map(|c| (c.0, c.1)).collect()),
                Series::line("within", cov.iter().map(|c| (c.0, c.2)).collect()),
                Series::line("cross", cov.iter().map(|c| (c.0, c.3)).collect()),
            ],
            y_range: Some((0.0, 1.0)),
        },
    )?;
    let _ = writeln!(md, "![coverage](coverage.svg)\n");

    // battery vs time
    let hours: Vec<f64> = t.iter().map(|s| s / 3600.0).collect();
    let battery = metrics.column("battery_mean_pct");
    write_csv(
        &dir.join("battery.csv"),
        "time_h,battery_mean_pct,battery_min_pct,battery_max_pct",
        (0..metrics.rows).map(|i| {
            format!(
                "{},{},{},{}",
                hours[i],
                battery[i],
                metrics.column("battery_min_pct")[i],
                metrics.column("battery_max_pct")[i]
            )
        }),
    )?;
    write_svg(
        &dir.join("battery.svg"),
        &Chart {
            title: "Battery level".into(),
            x_label: "time (h)".into(),
            y_label: "battery (%)".into(),
            series: vec![
                Series::line("mean", hours.iter().copied().zip(battery.iter().copied()).collect()),
                Series::line(
                    "min",
                    hours.iter().copied().zip(metrics.column("battery_min_pct").iter().copied()).collect(),
                ),
            ],
            y_range: None,
        },
    )?;
    match slope(&hours, battery) {
        Some(s) => {
            let _ = writeln!(md, "Mean battery slope: {s:.2} %/h\n");
        }
        None => {
            let _ = writeln!(md, "Mean battery slope: {NO_DATA}\n");
        }
    }
    let _ = writeln!(md, "![battery](battery.svg)\n");

    // success vs distance
    if let Some(s) = &summary {
        let curve = success_curve(&s.radio);
        write_csv(
            &dir.join("success_vs_distance.csv"),
            "distance_m,p_clear,p_obstacles",
            curve.iter().map(|(d, c, o)| format!("{d},{c},{o}")),
        )?;
        let observed = events.as_ref().map(observed_success).unwrap_or_default();
        write_csv(
            &dir.join("success_observed.csv"),
            "distance_m,success_rate,sessions",
            observed.iter().map(|(d, r, n)| format!("{d},{r},{n}")),
        )?;
        let mut series = vec![
            Series::line("model, clear", curve.iter().map(|c| (c.0, c.1)).collect()),
            Series::line("model, obstacles", curve.iter().map(|c| (c.0, c.2)).collect()),
        ];
        if !observed.is_empty() {
            series.push(Series::dots("observed", observed.iter().map(|o| (o.0, o.1)).collect()));
        }
        write_svg(
            &dir.join("success_vs_distance.svg"),
            &Chart {
                title: "Connection success vs distance".into(),
                x_label: "distance (m)".into(),
                y_label: "success probability".into(),
                series,
                y_range: Some((0.0, 1.0)),
            },
        )?;
        let _ = writeln!(md, "![success vs distance](success_vs_distance.svg)\n");
        if observed.is_empty() {
            let _ = writeln!(md, "Observed sessions: {NO_DATA}\n");
        }
    }

    artifacts::write_text(&dir.join(REPORT_FILE), &md)?;
    info!("wrote report for {}", dir.display());
    Ok(md)
}

/// Reports on every directory; the combined markdown is returned.
pub fn report(dirs: &[PathBuf]) -> Result<String> {
    let mut all = String::new();
    for d in dirs {
        all.push_str(&report_dir(d)?);
        all.push('\n');
    }
    Ok(all)
}
