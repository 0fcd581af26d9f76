use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exrm,
    Dporm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Exrm => "exrm",
            Method::Dporm => "dporm",
        }
    }
}

/// One accuracy measurement. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub method: Method,
    pub train_world: String,
    pub eval_world: String,
    pub id_flag: bool,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub train_world: String,
    pub eval_world: String,
    pub id_flag: bool,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 when `n == 1`.
    pub std: f64,
    pub single_seed: bool,
}

/// EXRM-versus-DPORM comparison over matched cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinStat {
    /// Cells where EXRM accuracy is strictly higher.
    pub wins: usize,
    pub ties: usize,
    /// Matched cells, ties included.
    pub total: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinProportions {
    pub id: Option<WinStat>,
    pub ood: Option<WinStat>,
    pub all: Option<WinStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub cells: Vec<Cell>,
    pub win_proportion: WinProportions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub provenance: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<Row>,
    pub aggregates: Aggregates,
    /// Accuracy of the true reward on each evaluation set (the ceiling).
    pub oracle_accuracy: BTreeMap<String, f64>,
    pub finding: String,
}

impl EvalReport {
    /// Report over existing rows, e.g. re-aggregated from a `rows.csv`.
    pub fn from_rows(name: &str, provenance: &str, config_sha256: &str, rows: Vec<Row>) -> Result<Self, HarnessError> {
        let aggregates = aggregate(&rows)?;
        let seeds: Vec<u64> = rows
            .iter()
            .map(|r| r.seed)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            name: name.into(),
            provenance: provenance.into(),
            config_sha256: config_sha256.into(),
            seeds,
            finding: finding(&aggregates),
            rows,
            aggregates,
            oracle_accuracy: BTreeMap::new(),
        })
    }
}

/// Mean and sample standard deviation over `rows`, grouped by
/// `(method, train_world, eval_world)` in first-appearance order, plus the
/// EXRM win proportion over `(train_world, eval_world, seed)` cells where
/// both methods were measured.
pub fn aggregate(rows: &[Row]) -> Result<Aggregates, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    let mut order: Vec<(Method, &str, &str)> = Vec::new();
    let mut groups: BTreeMap<(Method, &str, &str), Vec<&Row>> = BTreeMap::new();
    for r in rows {
        let key = (r.method, r.train_world.as_str(), r.eval_world.as_str());
        let g = groups.entry(key).or_default();
        if g.is_empty() {
            order.push(key);
        }
        g.push(r);
    }
    let cells = order
        .iter()
        .map(|key| {
            let g = &groups[key];
            let n = g.len();
            let mean = g.iter().map(|r| r.accuracy).sum::<f64>() / n as f64;
            let std = if n > 1 {
                (g.iter().map(|r| (r.accuracy - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            Cell {
                method: key.0,
                train_world: key.1.to_string(),
                eval_world: key.2.to_string(),
                id_flag: g[0].id_flag,
                n,
                mean,
                std,
                single_seed: n == 1,
            }
        })
        .collect();

    let mut matched: BTreeMap<(&str, &str, u64), (Option<f64>, Option<f64>, bool)> = BTreeMap::new();
    for r in rows {
        let e = matched
            .entry((r.train_world.as_str(), r.eval_world.as_str(), r.seed))
            .or_insert((None, None, r.id_flag));
        match r.method {
            Method::Exrm => e.0 = Some(r.accuracy),
            Method::Dporm => e.1 = Some(r.accuracy),
        }
    }
    let stat = |keep: &dyn Fn(bool) -> bool| -> Option<WinStat> {
        let (mut wins, mut ties, mut total) = (0, 0, 0);
        for (ex, dp, id) in matched.values() {
            if let (Some(ex), Some(dp), true) = (ex, dp, keep(*id)) {
                total += 1;
                if ex > dp {
                    wins += 1;
                } else if ex == dp {
                    ties += 1;
                }
            }
        }
        (total > 0).then(|| WinStat {
            wins,
            ties,
            total,
            proportion: wins as f64 / total as f64,
        })
    };
    Ok(Aggregates {
        cells,
        win_proportion: WinProportions {
            id: stat(&|id| id),
            ood: stat(&|id| !id),
            all: stat(&|_| true),
        },
    })
}

/// Short statement comparing mean OOD (and ID) accuracy of the methods.
pub fn finding(agg: &Aggregates) -> String {
    let mean_of = |m: Method, id: bool| {
        let v: Vec<f64> = agg
            .cells
            .iter()
            .filter(|c| c.method == m && c.id_flag == id)
            .map(|c| c.mean)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut parts = Vec::new();
    for (label, id) in [("OOD", false), ("ID", true)] {
        if let (Some(ex), Some(dp)) = (mean_of(Method::Exrm, id), mean_of(Method::Dporm, id)) {
            let verdict = if ex > dp {
                "EXRM ahead"
            } else if ex < dp {
                "DPORM ahead"
            } else {
                "level"
            };
            parts.push(format!(
                "{label}: EXRM {:.1}% vs DPORM {:.1}% ({verdict}, {:+.1} points)",
                100.0 * ex,
                100.0 * dp,
                100.0 * (ex - dp)
            ));
        }
    }
    if let Some(w) = agg.win_proportion.ood {
        parts.push(format!("EXRM wins {}/{} OOD cells", w.wins, w.total));
    }
    if parts.is_empty() {
        "no EXRM/DPORM comparison available".into()
    } else {
        parts.join("; ")
    }
}

pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.1} ± {:.1}", 100.0 * mean, 100.0 * std)
}

/// Markdown table: one line per (method, train world), one column per
/// evaluation world, cells as `mean ± std` in percent.
pub fn render_table(agg: &Aggregates) -> String {
    let mut worlds: Vec<(&str, bool)> = Vec::new();
    let mut lines: Vec<(Method, &str)> = Vec::new();
    for c in &agg.cells {
        if !worlds.iter().any(|(w, _)| *w == c.eval_world) {
            worlds.push((&c.eval_world, c.id_flag));
        }
        if !lines.contains(&(c.method, c.train_world.as_str())) {
            lines.push((c.method, &c.train_world));
        }
    }
    let mut out = String::from("| Method | Train |");
    for (w, id) in &worlds {
        let _ = write!(out, " {w} ({}) |", if *id { "ID" } else { "OOD" });
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(worlds.len()));
    out.push('\n');
    for (m, train) in &lines {
        let _ = write!(out, "| {} | {train} |", m.name().to_uppercase());
        for (w, _) in &worlds {
            let cell = agg
                .cells
                .iter()
                .find(|c| c.method == *m && c.train_world == *train && c.eval_world == *w);
            match cell {
                Some(c) => {
                    let _ = write!(out, " {} |", format_cell(c.mean, c.std));
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    if let Some(w) = agg.win_proportion.ood {
        let _ = writeln!(out, "\nEXRM > DPORM in {}/{} OOD cells ({:.2}).", w.wins, w.total, w.proportion);
    }
    if let Some(w) = agg.win_proportion.id {
        let _ = writeln!(out, "EXRM > DPORM in {}/{} ID cells ({:.2}).", w.wins, w.total, w.proportion);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

pub fn rows_to_csv(rows: &[Row]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

pub fn rows_from_csv(bytes: &[u8]) -> Result<Vec<Row>, HarnessError> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers()?.clone();
    let expected = ["method", "train_world", "eval_world", "id_flag", "seed", "accuracy"];
    if headers.iter().ne(expected) {
        return Err(HarnessError::Schema(format!("unexpected CSV columns {headers:?}")));
    }
    Ok(r.deserialize().collect::<Result<Vec<Row>, _>>()?)
}

pub fn report_to_json(report: &EvalReport) -> Result<Vec<u8>, HarnessError> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `rows.csv` and/or `report.json`, plus `table.md`, into `dir`.
/// Refuses to write a report without rows.
pub fn emit_report(report: &EvalReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, HarnessError> {
    if report.rows.is_empty() || report.aggregates.cells.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        let p = dir.join("rows.csv");
        std::fs::write(&p, rows_to_csv(&report.rows)?)?;
        written.push(p);
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let p = dir.join("report.json");
        std::fs::write(&p, report_to_json(report)?)?;
        written.push(p);
    }
    let p = dir.join("table.md");
    std::fs::write(&p, render_table(&report.aggregates))?;
    written.push(p);
    Ok(written)
}
