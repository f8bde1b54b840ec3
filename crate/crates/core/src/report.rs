//! Text summary and SVG curves from aggregate CSVs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::active_loop::{read_aggregate_csv, AggregateRow, Metric};
use crate::uncertainty::Strategy;

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing result files in {dir}: expected {expected:?}")]
    Missing { dir: PathBuf, expected: Vec<&'static str> },
    #[error("{file}: {reason}")]
    Parse { file: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Files written by [`write_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Reads `aggregate.csv` from `dir`, writes `summary.txt` and one SVG per
/// metric next to it, and returns the summary text.
pub fn write_report(dir: &Path) -> Result<(String, ReportFiles), ReportError> {
    let path = dir.join(AGGREGATE_FILE);
    if !path.is_file() {
        return Err(ReportError::Missing { dir: dir.to_path_buf(), expected: vec![AGGREGATE_FILE] });
    }
    let text = std::fs::read_to_string(&path)?;
    let rows = read_aggregate_csv(&text).map_err(|reason| ReportError::Parse { file: path.clone(), reason })?;
    let summary = summary_table(&rows);
    let summary_path = dir.join(SUMMARY_FILE);
    std::fs::write(&summary_path, &summary)?;
    let mut plots = Vec::new();
    for metric in Metric::ALL {
        let p = dir.join(format!("{}.svg", metric.name()));
        std::fs::write(&p, svg_plot(&rows, metric))?;
        plots.push(p);
    }
    Ok((summary, ReportFiles { summary: summary_path, plots }))
}

fn strategies_in(rows: &[AggregateRow]) -> Vec<Strategy> {
    Strategy::ALL.into_iter().filter(|s| rows.iter().any(|r| r.strategy == *s)).collect()
}

/// Final-iteration mean and std of every metric, per strategy. Numbers are
/// printed exactly as stored in the aggregate CSV.
pub fn summary_table(rows: &[AggregateRow]) -> String {
    let mut out = String::from("strategy\titer\tmetric\tmean\tstd\n");
    for s in strategies_in(rows) {
        let last = rows.iter().filter(|r| r.strategy == s).map(|r| r.iteration).max().unwrap_or(0);
        for metric in Metric::ALL {
            if let Some(r) = rows.iter().find(|r| r.strategy == s && r.iteration == last && r.metric == metric) {
                let _ = writeln!(out, "{s}\t{last}\t{}\t{}\t{}", metric.name(), r.summary.mean, r.summary.std);
            }
        }
    }
    out
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn color(s: Strategy) -> &'static str {
    match s {
        Strategy::Entropy => "#1f77b4",
        Strategy::Variance => "#d62728",
        Strategy::Random => "#7f7f7f",
    }
}

/// Line plot of one metric against iteration, one line per strategy with a
/// shaded mean +/- std band.
pub fn svg_plot(rows: &[AggregateRow], metric: Metric) -> String {
    let series: Vec<(Strategy, Vec<&AggregateRow>)> = strategies_in(rows)
        .into_iter()
        .map(|s| {
            let mut v: Vec<&AggregateRow> = rows.iter().filter(|r| r.strategy == s && r.metric == metric).collect();
            v.sort_by_key(|r| r.iteration);
            (s, v)
        })
        .collect();
    let all = series.iter().flat_map(|(_, v)| v.iter());
    let max_iter = all.clone().map(|r| r.iteration).max().unwrap_or(0).max(1) as f64;
    let lo = all.clone().map(|r| r.summary.mean - r.summary.std).fold(f64::INFINITY, f64::min);
    let hi = all.map(|r| r.summary.mean + r.summary.std).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |i: f64| MARGIN + i / max_iter * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        metric.name()
    );
    let (x0, x1, y0, y1) = (x(0.0), x(max_iter), y(lo), y(hi));
    let _ = writeln!(svg, r#"<path d="M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.3}</text>"#,
            x0 - 6.0,
            y(v) + 4.0
        );
    }
    for i in 0..=max_iter as usize {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{i}</text>"#,
            x(i as f64),
            y0 + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">iteration</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    for (k, (s, pts)) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let upper = pts.iter().map(|r| format!("{:.1},{:.1}", x(r.iteration as f64), y(r.summary.mean + r.summary.std)));
        let lower = pts.iter().rev().map(|r| format!("{:.1},{:.1}", x(r.iteration as f64), y(r.summary.mean - r.summary.std)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(svg, r#"<polygon points="{}" fill="{}" fill-opacity="0.15" stroke="none"/>"#, band.join(" "), color(*s));
        let line: Vec<String> = pts.iter().map(|r| format!("{:.1},{:.1}", x(r.iteration as f64), y(r.summary.mean))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, line.join(" "), color(*s));
        let ly = MARGIN + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-family="sans-serif" font-size="12" fill="{}">{s}</text>"#,
            WIDTH - MARGIN - 60.0,
            color(*s)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Summary;

    fn rows() -> Vec<AggregateRow> {
        let mut v = Vec::new();
        for s in Strategy::ALL {
            for it in 0..3 {
                for metric in Metric::ALL {
                    let mean = 0.1 * it as f64 + if s == Strategy::Variance { 0.05 } else { 0.0 };
                    v.push(AggregateRow { strategy: s, iteration: it, metric, summary: Summary { mean, std: 0.01 } });
                }
            }
        }
        v
    }

    #[test]
    fn summary_uses_final_iteration() {
        let text = summary_table(&rows());
        assert_eq!(text.lines().count(), 1 + 3 * 4);
        assert!(text.contains("variance\t2\taccuracy\t0.25\t0.01"));
    }

    #[test]
    fn svg_has_a_line_per_strategy() {
        let svg = svg_plot(&rows(), Metric::Accuracy);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches("<polygon").count(), 3);
    }

    #[test]
    fn empty_dir_reports_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_report(dir.path()).unwrap_err();
        assert!(err.to_string().contains(AGGREGATE_FILE));
    }
}
