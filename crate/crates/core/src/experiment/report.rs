//! Results table (text and CSV) and precision-recall plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{cell_dir, published_ap, RunReport};
use crate::detector::PrPoint;
use crate::error::{Error, Result};

/// One table row. AP values are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub cell: String,
    pub real: bool,
    pub cp: usize,
    pub gan: usize,
    pub variant: String,
    pub median_ap: Option<f64>,
    pub seed_aps: Vec<Option<f64>>,
    /// Published AP in percent.
    pub reference_ap: Option<f64>,
}

impl TableRow {
    pub fn is_missing(&self) -> bool {
        self.median_ap.is_none()
    }
}

pub fn table_rows(report: &RunReport) -> Vec<TableRow> {
    report
        .config
        .all_cells()
        .into_iter()
        .map(|c| TableRow {
            median_ap: report.median_ap(&c.name),
            seed_aps: report.cell_aps(&c.name),
            reference_ap: published_ap(&c.name),
            real: c.real,
            cp: c.cp,
            gan: c.gan,
            variant: c.gan_variant.label().to_string(),
            cell: c.name,
        })
        .collect()
}

const MISSING: &str = "missing";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| x.to_string())
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s == MISSING || s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Manifest {
        line,
        message: format!("`{s}` is not a number"),
    })
}

/// Columns: cell, real, cp, gan, variant, median_ap, reference_ap, then one
/// `ap_seed<N>` column per seed. Floats use the shortest exact decimal form.
pub fn write_table_csv(path: &Path, rows: &[TableRow], seeds: &[u64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["cell", "real", "cp", "gan", "variant", "median_ap", "reference_ap"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(seeds.iter().map(|s| format!("ap_seed{s}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.cell.clone(),
            r.real.to_string(),
            r.cp.to_string(),
            r.gan.to_string(),
            r.variant.clone(),
            opt(r.median_ap),
            r.reference_ap.map(|v| v.to_string()).unwrap_or_default(),
        ];
        rec.extend(r.seed_aps.iter().map(|a| opt(*a)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_table_csv(path: &Path) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let int = |k: usize| {
            field(k).parse::<usize>().map_err(|_| Error::Manifest {
                line,
                message: format!("column {k} is not a count"),
            })
        };
        rows.push(TableRow {
            cell: field(0).to_string(),
            real: field(1) == "true",
            cp: int(2)?,
            gan: int(3)?,
            variant: field(4).to_string(),
            median_ap: parse_opt(field(5), line)?,
            reference_ap: parse_opt(field(6), line)?,
            seed_aps: (7..rec.len())
                .map(|k| parse_opt(field(k), line))
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn text_table(rows: &[TableRow], seeds: &[u64]) -> String {
    let mut head = vec![
        "Training data".to_string(),
        "Real".into(),
        "C/P".into(),
        "GAN".into(),
        "AP % (median)".into(),
    ];
    head.extend(seeds.iter().map(|s| format!("seed {s}")));
    head.push("Published AP %".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                r.cell.clone(),
                if r.real { "yes".into() } else { "-".into() },
                if r.cp > 0 { r.cp.to_string() } else { "-".into() },
                if r.gan > 0 { r.gan.to_string() } else { "-".into() },
                pct(r.median_ap),
            ];
            v.extend(r.seed_aps.iter().map(|a| pct(*a)));
            v.push(r.reference_ap.map_or_else(|| "-".into(), |p| format!("{p:.2}")));
            v
        })
        .collect();
    let widths: Vec<usize> = (0..head.len())
        .map(|k| {
            body.iter()
                .map(|r| r[k].len())
                .chain([head[k].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join(" | ").trim_end().to_string() + "\n"
    };
    let mut out = line(&head);
    out += &(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-") + "\n");
    for r in &body {
        out += &line(r);
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Step-wise precision-recall curves, one polyline per seed.
fn pr_svg(title: &str, curves: &[(u64, f64, &[PrPoint])]) -> String {
    let (w, h, m) = (480.0, 400.0, 50.0);
    let sx = |r: f64| m + r * (w - 2.0 * m);
    let sy = |p: f64| h - m - p * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{v}</text>"#,
            sx(v),
            h - m + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#,
            m - 6.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">recall</text>"#,
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">precision</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="28" text-anchor="middle">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    for (i, (seed, ap, pts)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = format!("M {} {}", sx(0.0), sy(pts.first().map_or(0.0, |p| p.precision)));
        let mut prev_r = 0.0;
        for p in pts.iter() {
            let _ = write!(
                d,
                " L {} {} L {} {}",
                sx(prev_r),
                sy(p.precision),
                sx(p.recall),
                sy(p.precision)
            );
            prev_r = p.recall;
        }
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">seed {seed}: AP {:.2}%</text>"#,
            m + 10.0,
            m + 18.0 + 16.0 * i as f64,
            100.0 * ap
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutcome {
    pub table: String,
    pub rows: Vec<TableRow>,
    pub files: Vec<PathBuf>,
    /// Cells without an AP for every seed.
    pub missing: Vec<String>,
}

impl RenderOutcome {
    pub fn complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Write `results.txt`, `results.csv` and `plots/pr_<cell>.svg` into `dir`.
/// Cells lacking results are marked `missing` in the table and get no plot.
pub fn render_report(report: &RunReport, dir: &Path) -> Result<RenderOutcome> {
    let seeds: Vec<u64> = report.runs.iter().map(|r| r.seed).collect();
    let rows = table_rows(report);
    let table = text_table(&rows, &seeds);
    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let txt = dir.join("results.txt");
    fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
    let csv = dir.join("results.csv");
    write_table_csv(&csv, &rows, &seeds)?;
    let mut files = vec![txt, csv];
    let mut missing = Vec::new();
    for row in &rows {
        if row.is_missing() {
            missing.push(row.cell.clone());
            continue;
        }
        let curves: Vec<(u64, f64, &[PrPoint])> = report
            .runs
            .iter()
            .filter_map(|r| {
                let c = r.cells.iter().find(|c| c.name == row.cell)?;
                let ap = c.ap.as_ref()?;
                Some((r.seed, ap.ap, ap.curve.as_slice()))
            })
            .collect();
        let path = plots.join(format!("pr_{}.svg", cell_dir(&row.cell)));
        fs::write(&path, pr_svg(&row.cell, &curves)).map_err(|e| Error::io(&path, e))?;
        files.push(path);
    }
    Ok(RenderOutcome {
        table,
        rows,
        files,
        missing,
    })
}
