use serde::{Deserialize, Serialize};

use super::metrics::{ArgsGranularity, Averaging};

/// Metric suite for a set of samples. Values are unrounded; rounding to
/// three decimals happens only in [`MetricsReport::render_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub boundary: u8,
    pub averaging: Averaging,
    pub args_granularity: ArgsGranularity,
    pub hits: usize,
    pub missed: usize,
    pub false_detections: usize,
    pub acc_p: f64,
    pub md: f64,
    pub fd: f64,
    pub rmse: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub n_tool_scored: usize,
    pub acc_args: Option<f64>,
    pub n_args_scored: usize,
    pub n_prediction_failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<LevelReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: u8,
    pub chain_lengths: String,
    pub n_samples: usize,
    /// None when no sample falls in the level.
    pub report: Option<MetricsReport>,
}

fn fmt3(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.3}"))
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("samples", self.n_samples.to_string()),
            ("Acc-P", fmt3(Some(self.acc_p))),
            ("MD", fmt3(Some(self.md))),
            ("FD", fmt3(Some(self.fd))),
            ("RMSE", fmt3(Some(self.rmse))),
            ("Precision", fmt3(self.precision)),
            ("Recall", fmt3(self.recall)),
            ("F1", fmt3(self.f1)),
            ("Acc-Args", fmt3(self.acc_args)),
            ("tool-scored", self.n_tool_scored.to_string()),
            ("args-scored", self.n_args_scored.to_string()),
            ("failures", self.n_prediction_failures.to_string()),
        ]
    }

    /// Aligned plain-text table, one metric per row; with levels, one column
    /// per level after the overall column.
    pub fn render_table(&self) -> String {
        let averaging = match self.averaging {
            Averaging::Macro => "macro",
            Averaging::Micro => "micro",
        };
        let args = match self.args_granularity {
            ArgsGranularity::Sample => "sample-level",
            ArgsGranularity::Tool => "tool-level",
        };
        let mut out = format!(
            "boundary {}; P/R/F1 {averaging}-averaged; Acc-Args {args}\n",
            self.boundary
        );

        let mut header = vec!["metric".to_owned(), "all".to_owned()];
        let mut columns = vec![self.rows()];
        for l in self.levels.iter().flatten() {
            header.push(format!("L{} ({})", l.level, l.chain_lengths));
            columns.push(match &l.report {
                Some(r) => r.rows(),
                None => self
                    .rows()
                    .into_iter()
                    .map(|(k, _)| (k, if k == "samples" { "0".into() } else { "-".into() }))
                    .collect(),
            });
        }
        let names: Vec<&str> = columns[0].iter().map(|(k, _)| *k).collect();
        let name_w = names
            .iter()
            .map(|n| n.len())
            .chain([header[0].len()])
            .max()
            .unwrap_or(0);
        let widths: Vec<usize> = columns
            .iter()
            .zip(&header[1..])
            .map(|(col, h)| col.iter().map(|(_, v)| v.len()).chain([h.len()]).max().unwrap_or(0))
            .collect();

        out.push_str(&format!("{:<name_w$}", header[0]));
        for (h, w) in header[1..].iter().zip(&widths) {
            out.push_str(&format!("  {h:>w$}"));
        }
        out.push('\n');
        for (i, name) in names.iter().enumerate() {
            out.push_str(&format!("{name:<name_w$}"));
            for (col, w) in columns.iter().zip(&widths) {
                out.push_str(&format!("  {:>w$}", col[i].1));
            }
            out.push('\n');
        }
        out
    }
}
