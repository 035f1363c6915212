use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::patterns::PatternAssignment;

/// Summary of one prune-and-fine-tune run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dense_macs: u64,
    pub effective_macs: u64,
    pub flops_reduction: f64,
    pub acc_dense: f64,
    pub acc_pruned: f64,
    pub acc_finetuned: f64,
    pub delta_acc: f64,
    pub episodes_run: usize,
    /// Seconds; only recorded when `report_wall_time` is set so that
    /// reports stay reproducible byte for byte by default.
    pub wall_time: Option<f64>,
    pub assignment: PatternAssignment,
    pub config: RunConfig,
    pub constraints_met: bool,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// The value exactly as given on the command line.
    pub x: String,
    pub acc_finetuned: f64,
    pub acc_pruned: f64,
    pub flops_reduction: f64,
    pub constraints_met: bool,
}

pub const SWEEP_HEADER: &str = "x\tacc_finetuned\tacc_pruned\tflops_reduction\tconstraints_met";

/// Tab-separated table sorted by numeric `x`.
pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        let (x, y) = (a.x.parse::<f64>().unwrap_or(f64::NAN), b.x.parse::<f64>().unwrap_or(f64::NAN));
        x.total_cmp(&y)
    });
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in sorted {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            r.x, r.acc_finetuned, r.acc_pruned, r.flops_reduction, r.constraints_met
        );
    }
    s
}

/// Parse a table written by [`sweep_tsv`].
pub fn parse_sweep_tsv(text: &str) -> Result<Vec<SweepRow>, super::HarnessError> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(super::HarnessError::Format("sweep table header".into()));
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| super::HarnessError::Format(format!("sweep value `{s}`")))
            };
            if f.len() != 5 {
                return Err(super::HarnessError::Format(format!("sweep row `{l}`")));
            }
            Ok(SweepRow {
                x: f[0].to_string(),
                acc_finetuned: num(f[1])?,
                acc_pruned: num(f[2])?,
                flops_reduction: num(f[3])?,
                constraints_met: f[4] == "true",
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sorted_numerically() {
        let row = |x: &str| SweepRow {
            x: x.into(),
            acc_finetuned: 0.5,
            acc_pruned: 0.4,
            flops_reduction: 0.6,
            constraints_met: true,
        };
        let t = sweep_tsv(&[row("10"), row("2"), row("4")]);
        let xs: Vec<String> = parse_sweep_tsv(&t).unwrap().into_iter().map(|r| r.x).collect();
        assert_eq!(xs, ["2", "4", "10"]);
    }
}
