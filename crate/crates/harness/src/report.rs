//! Per-error-type result rows, their averages, and the text table.

use serde::{Deserialize, Serialize};

use vlnie_core::{Error, Result};

pub const AVERAGE_LABEL: &str = "Avg.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    pub auc: f64,
    pub atd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub error_type: String,
    pub sr: f64,
    pub spl: f64,
    /// SR on correct minus SR on perturbed episodes, in percent.
    pub delta_sr: f64,
    pub methods: Vec<MethodScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Column-wise mean of `rows`; absent for an empty report.
    pub average: Option<ReportRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn average_of(rows: &[ReportRow]) -> Option<ReportRow> {
    let first = rows.first()?;
    Some(ReportRow {
        error_type: AVERAGE_LABEL.to_string(),
        sr: mean(rows.iter().map(|r| r.sr)),
        spl: mean(rows.iter().map(|r| r.spl)),
        delta_sr: mean(rows.iter().map(|r| r.delta_sr)),
        methods: first
            .methods
            .iter()
            .enumerate()
            .map(|(i, m)| MethodScores {
                method: m.method.clone(),
                auc: mean(rows.iter().map(|r| r.methods[i].auc)),
                atd: mean(rows.iter().map(|r| r.methods[i].atd)),
            })
            .collect(),
    })
}

impl Report {
    /// Builds a report; every row must list the same methods in the same order.
    pub fn new(rows: Vec<ReportRow>) -> Result<Self> {
        if let Some(first) = rows.first() {
            let names: Vec<&str> = first.methods.iter().map(|m| m.method.as_str()).collect();
            for r in &rows {
                let these: Vec<&str> = r.methods.iter().map(|m| m.method.as_str()).collect();
                if these != names {
                    return Err(Error::Validation(format!(
                        "row {} lists methods {these:?}, expected {names:?}",
                        r.error_type
                    )));
                }
            }
        }
        let average = average_of(&rows);
        Ok(Report { rows, average })
    }

    /// Checks that the stored averages equal the recomputed ones.
    pub fn validate(&self) -> Result<()> {
        let expected = Report::new(self.rows.clone())?;
        if expected.average != self.average {
            return Err(Error::Validation("report averages do not match its rows".into()));
        }
        Ok(())
    }

    pub fn method_names(&self) -> Vec<&str> {
        self.rows
            .first()
            .map(|r| r.methods.iter().map(|m| m.method.as_str()).collect())
            .unwrap_or_default()
    }
}

/// Fixed-width text table: error type, SR, SPL, ΔSR%, then AUC and ATD per
/// method, with the averages last.
pub fn render_table(report: &Report) -> String {
    let mut header = vec!["Error type".to_string(), "SR".into(), "SPL".into(), "ΔSR%".into()];
    for m in report.method_names() {
        header.push(format!("{m} AUC"));
        header.push(format!("{m} ATD"));
    }
    let mut lines = vec![header];
    let cells = |r: &ReportRow| {
        let mut c = vec![
            r.error_type.clone(),
            format!("{:.2}", r.sr),
            format!("{:.2}", r.spl),
            format!("{:.2}", r.delta_sr),
        ];
        for m in &r.methods {
            c.push(format!("{:.2}", m.auc));
            c.push(format!("{:.2}", m.atd));
        }
        c
    };
    lines.extend(report.rows.iter().map(cells));
    lines.extend(report.average.iter().map(cells));
    let widths: Vec<usize> = (0..lines[0].len())
        .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, line) in lines.iter().enumerate() {
        let row: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                if i == 0 {
                    format!("{cell:<w$}", w = widths[i])
                } else {
                    format!("{cell:>w$}", w = widths[i])
                }
            })
            .collect();
        out.push_str(row.join("  ").trim_end());
        out.push('\n');
        if n == 0 {
            let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(rule));
            out.push('\n');
        }
    }
    out
}
