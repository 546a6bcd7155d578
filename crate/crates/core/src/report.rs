//! Check records, experiment reports and their JSON/CSV serialization.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// `residual = |computed - oracle|`, passes when `residual <= bound`.
    Close,
    /// Relative version of `Close`.
    CloseRelative,
    /// `residual = computed - oracle`, passes when `residual >= -bound`.
    AtLeast,
    /// `residual = oracle - computed`, passes when `residual >= -bound`.
    AtMost,
    /// Boolean condition; `computed` is 1 or 0.
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub computed: f64,
    pub oracle: f64,
    pub residual: f64,
    pub bound: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<f64>,
}

impl Check {
    pub fn close(name: impl Into<String>, computed: f64, oracle: f64, tol: f64) -> Self {
        let residual = (computed - oracle).abs();
        Check {
            name: name.into(),
            kind: CheckKind::Close,
            computed,
            oracle,
            residual,
            bound: tol,
            pass: residual <= tol,
            certificate: None,
        }
    }

    pub fn close_rel(name: impl Into<String>, computed: f64, oracle: f64, tol: f64) -> Self {
        let residual = (computed - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE);
        Check {
            name: name.into(),
            kind: CheckKind::CloseRelative,
            computed,
            oracle,
            residual,
            bound: tol,
            pass: residual <= tol,
            certificate: None,
        }
    }

    pub fn at_least(name: impl Into<String>, computed: f64, lower: f64, slack: f64) -> Self {
        let residual = computed - lower;
        Check {
            name: name.into(),
            kind: CheckKind::AtLeast,
            computed,
            oracle: lower,
            residual,
            bound: slack,
            pass: residual >= -slack,
            certificate: None,
        }
    }

    pub fn at_most(name: impl Into<String>, computed: f64, upper: f64, slack: f64) -> Self {
        let residual = upper - computed;
        Check {
            name: name.into(),
            kind: CheckKind::AtMost,
            computed,
            oracle: upper,
            residual,
            bound: slack,
            pass: residual >= -slack,
            certificate: None,
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        let v = if ok { 1.0 } else { 0.0 };
        Check {
            name: name.into(),
            kind: CheckKind::Flag,
            computed: v,
            oracle: 1.0,
            residual: 1.0 - v,
            bound: 0.0,
            pass: ok,
            certificate: None,
        }
    }

    pub fn with_certificate(mut self, certificate: f64) -> Self {
        self.certificate = Some(certificate);
        self
    }

    /// Residual scaled so that values above 1 fail, for ranking.
    pub fn severity(&self) -> f64 {
        match self.kind {
            CheckKind::Close | CheckKind::CloseRelative => {
                if self.bound > 0.0 {
                    self.residual / self.bound
                } else if self.residual == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            CheckKind::AtLeast | CheckKind::AtMost => {
                if self.residual >= 0.0 {
                    0.0
                } else if self.bound > 0.0 {
                    -self.residual / self.bound
                } else {
                    f64::INFINITY
                }
            }
            CheckKind::Flag => self.residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub worst_check: Option<String>,
    pub worst_severity: f64,
    pub failures: Vec<String>,
}

impl Summary {
    pub fn of(records: &[Check]) -> Self {
        let passed = records.iter().filter(|c| c.pass).count();
        let mut worst: Option<&Check> = None;
        for c in records {
            let s = c.severity();
            if worst.map_or(true, |w| s > w.severity() || (s.is_nan() && !w.severity().is_nan())) {
                worst = Some(c);
            }
        }
        Summary {
            total: records.len(),
            passed,
            failed: records.len() - passed,
            worst_check: worst.map(|c| c.name.clone()),
            worst_severity: worst.map_or(0.0, |c| c.severity()),
            failures: records.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub version: String,
    /// Taken from `SOURCE_DATE_EPOCH` when set, so reruns stay identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl Provenance {
    pub fn new(seed: u64) -> Self {
        Provenance {
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: std::env::var("SOURCE_DATE_EPOCH").ok(),
        }
    }
}

/// Numeric table written as `<report>.<name>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format_number(*v)))?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Minimal line plot of every column against the first one, log-scaled
    /// in y when all values are positive.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const M: f64 = 50.0;
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
        let xs: Vec<f64> = self.rows.iter().map(|r| r[0]).collect();
        let series: Vec<usize> = (1..self.columns.len()).collect();
        let all: Vec<f64> = self
            .rows
            .iter()
            .flat_map(|r| r[1..].iter().copied())
            .filter(|v| v.is_finite())
            .collect();
        let log_y = !all.is_empty() && all.iter().all(|&v| v > 0.0);
        let ty = |v: f64| if log_y { v.log10() } else { v };
        let (x0, x1) = min_max(xs.iter().copied());
        let (y0, y1) = min_max(all.iter().map(|&v| ty(v)));
        let sx = |x: f64| M + (x - x0) / (x1 - x0).max(f64::MIN_POSITIVE) * (W - 2.0 * M);
        let sy = |y: f64| H - M - (y - y0) / (y1 - y0).max(f64::MIN_POSITIVE) * (H - 2.0 * M);
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{M}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{}{}</text>\n",
            self.name,
            if log_y { " (log10 y)" } else { "" }
        );
        for (i, &c) in series.iter().enumerate() {
            let pts: Vec<String> = self
                .rows
                .iter()
                .filter(|r| r[c].is_finite() && (!log_y || r[c] > 0.0))
                .map(|r| format!("{:.2},{:.2}", sx(r[0]), sy(ty(r[c]))))
                .collect();
            let color = colors[i % colors.len()];
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n\
                 <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
                pts.join(" "),
                W - M - 120.0,
                40.0 + 14.0 * i as f64,
                self.columns[c]
            ));
        }
        out.push_str(&format!(
            "<line x1=\"{M}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
             <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{0}\" stroke=\"black\"/>\n\
             <text x=\"{2}\" y=\"{3}\" font-family=\"sans-serif\" font-size=\"11\">{4}</text>\n</svg>\n",
            H - M,
            W - M,
            W / 2.0,
            H - 15.0,
            self.columns[0]
        ));
        out
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Shortest representation that round-trips.
fn format_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub experiment: String,
    pub config: serde_json::Value,
    pub records: Vec<Check>,
    pub summary: Summary,
    pub provenance: Provenance,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl Report {
    pub fn new(
        name: impl Into<String>,
        experiment: impl Into<String>,
        config: serde_json::Value,
        records: Vec<Check>,
        tables: Vec<Table>,
        seed: u64,
    ) -> Self {
        let summary = Summary::of(&records);
        Report {
            name: name.into(),
            experiment: experiment.into(),
            config,
            records,
            summary,
            provenance: Provenance::new(seed),
            tables,
        }
    }

    pub fn all_pass(&self) -> bool {
        self.summary.failed == 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Write `<name>.report.json`, one CSV per table and, when `plots` is
    /// set, one SVG per table. Returns the written paths.
    pub fn write(&self, dir: &Path, plots: bool) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join(format!("{}.report.json", self.name));
        fs::write(&path, self.to_json()? + "\n")?;
        written.push(path);
        for t in &self.tables {
            let path = dir.join(format!("{}.{}.csv", self.name, t.name));
            fs::write(&path, t.to_csv()?)?;
            written.push(path);
            if plots && t.rows.len() > 1 && t.columns.len() > 1 {
                let path = dir.join(format!("{}.{}.svg", self.name, t.name));
                fs::write(&path, t.to_svg())?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_constructors() {
        assert!(Check::close("a", 1.0, 1.0 + 1e-9, 1e-8).pass);
        assert!(!Check::close("a", 1.0, 1.1, 1e-8).pass);
        assert!(Check::close_rel("r", 1e10, 1e10 + 1.0, 1e-9).pass);
        assert!(Check::at_least("l", 1.0, 1.0 + 1e-9, 1e-8).pass);
        assert!(!Check::at_least("l", 1.0, 2.0, 1e-8).pass);
        assert!(Check::at_most("u", 2.0, 3.0, 0.0).pass);
        assert!(!Check::at_most("u", 3.5, 3.0, 0.0).pass);
        assert!(!Check::flag("f", false).pass);
        assert!(!Check::close("nan", f64::NAN, 1.0, 1.0).pass);
        assert!(!Check::at_least("nan", f64::NAN, 1.0, 1.0).pass);
    }

    #[test]
    fn summary_counts_and_worst() {
        let recs = vec![
            Check::close("ok", 1.0, 1.0, 1e-3),
            Check::close("meh", 1.0, 1.0005, 1e-3),
            Check::at_least("bad", 0.0, 1.0, 1e-3),
        ];
        let s = Summary::of(&recs);
        assert_eq!((s.total, s.passed, s.failed), (3, 2, 1));
        assert_eq!(s.worst_check.as_deref(), Some("bad"));
        assert_eq!(s.failures, vec!["bad".to_string()]);
    }

    #[test]
    fn csv_round_trips_numbers() {
        let mut t = Table::new("grid", &["r", "value"]);
        t.push(vec![0.1, 1.0 / 3.0]);
        t.push(vec![2.0, f64::NAN]);
        let s = t.to_csv().unwrap();
        let mut rdr = csv::Reader::from_reader(s.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0][1].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(&rows[1][1], "nan");
    }

    #[test]
    fn report_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("curve", &["r", "y"]);
        t.push(vec![1.0, 2.0]);
        t.push(vec![2.0, 4.0]);
        let rep = Report::new(
            "demo",
            "tau",
            serde_json::json!({"name": "demo"}),
            vec![Check::flag("x", true)],
            vec![t],
            3,
        );
        let files = rep.write(dir.path(), true).unwrap();
        assert_eq!(files.len(), 3);
        let json = fs::read_to_string(&files[0]).unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back.records, rep.records);
        assert!(fs::read_to_string(&files[2]).unwrap().starts_with("<svg"));
    }
}
