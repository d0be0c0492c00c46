//! Rank score, metric reports, and their CSV / markdown renderings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn rank_score(mpauc: f64, psds1: f64) -> f64 {
    mpauc + psds1
}

/// Test-set metrics of one system. A metric is absent when the system was
/// not trained on the corresponding dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psds1: Option<f64>,
    pub mpauc: Option<f64>,
    pub rank_score: Option<f64>,
}

impl MetricReport {
    pub fn new(psds1: Option<f64>, mpauc: Option<f64>) -> Self {
        let rank_score = match (psds1, mpauc) {
            (Some(p), Some(m)) => Some(rank_score(m, p)),
            _ => None,
        };
        MetricReport {
            psds1,
            mpauc,
            rank_score,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub stage: String,
    pub metrics: MetricReport,
}

pub const CSV_HEADER: &str = "system,stage,psds1,mpauc,rank_score";
const ABSENT: &str = "-";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| ABSENT.to_string(), |x| x.to_string())
}

fn fixed(v: Option<f64>) -> String {
    v.map_or_else(|| ABSENT.to_string(), |x| format!("{x:.3}"))
}

fn check_name(name: &str) -> Result<()> {
    if name.contains([',', '\n', '"']) {
        return Err(Error::Data(format!("report field '{name}' contains a separator")));
    }
    Ok(())
}

/// Full-precision CSV; floats use shortest round-trip formatting.
pub fn format_report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        check_name(&r.system)?;
        check_name(&r.stage)?;
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.system,
            r.stage,
            cell(m.psds1),
            cell(m.mpauc),
            cell(m.rank_score)
        ));
    }
    Ok(out)
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header '{CSV_HEADER}'"),
        });
    }
    let parse = |f: &str, line: usize| -> Result<Option<f64>> {
        if f == ABSENT {
            return Ok(None);
        }
        f.parse().map(Some).map_err(|_| Error::Parse {
            line,
            msg: format!("'{f}' is not a number"),
        })
    };
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                msg: "expected 5 fields".into(),
            });
        }
        rows.push(ReportRow {
            system: f[0].to_string(),
            stage: f[1].to_string(),
            metrics: MetricReport {
                psds1: parse(f[2], lineno)?,
                mpauc: parse(f[3], lineno)?,
                rank_score: parse(f[4], lineno)?,
            },
        });
    }
    Ok(rows)
}

/// Three-decimal markdown table.
pub fn format_report_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::from("| System | Stage | PSDS1 | mpAUC | Rank Score |\n");
    out.push_str("|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.system,
            r.stage,
            fixed(r.metrics.psds1),
            fixed(r.metrics.mpauc),
            fixed(r.metrics.rank_score)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_score_is_exact_sum() {
        assert_eq!(rank_score(0.750, 0.548), 1.298);
        assert!((rank_score(0.735, 0.569) - 1.303).abs() <= 0.001 + 1e-12);
        assert_eq!(rank_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn absent_metric_has_no_rank_score() {
        let r = MetricReport::new(Some(0.4), None);
        assert_eq!(r.rank_score, None);
        let r = MetricReport::new(Some(0.4), Some(0.7));
        assert_eq!(r.rank_score, Some(0.4 + 0.7));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            ReportRow {
                system: "seed0".into(),
                stage: "I1.S1".into(),
                metrics: MetricReport::new(Some(0.1 + 0.2), Some(1.0 / 3.0)),
            },
            ReportRow {
                system: "-MAESTRO".into(),
                stage: "I1.S2".into(),
                metrics: MetricReport::new(Some(0.5), None),
            },
        ];
        let text = format_report_csv(&rows).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with(",0.5,-,-"));
        assert_eq!(parse_report_csv(&text).unwrap(), rows);
        let md = format_report_markdown(&rows);
        assert!(md.contains("| seed0 | I1.S1 | 0.300 | 0.333 | 0.633 |"));
    }

    #[test]
    fn separators_in_names_rejected() {
        let rows = vec![ReportRow {
            system: "a,b".into(),
            stage: "x".into(),
            metrics: MetricReport::new(None, None),
        }];
        assert!(format_report_csv(&rows).is_err());
    }
}
