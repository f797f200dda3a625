use std::fmt::Write;

use super::{EfficiencyReport, MetricReport};

/// Row label shared by both tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableRow {
    pub approach: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Pipe table without padding.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        };
        line(&mut out, &self.headers);
        let _ = writeln!(out, "|{}", "---|".repeat(self.headers.len()));
        for row in &self.rows {
            line(&mut out, row);
        }
        out
    }

    /// Space-aligned columns; the first two are left aligned, the rest right aligned.
    pub fn to_aligned(&self) -> String {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|i| {
                std::iter::once(&self.headers)
                    .chain(&self.rows)
                    .map(|r| r.get(i).map_or(0, |c| c.chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for row in std::iter::once(&self.headers).chain(&self.rows) {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i < 2 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

fn s(x: &str) -> String {
    x.to_string()
}

/// Columns: rouge-1, bleu, Meteor, then BERTScore precision/recall/f1.
/// A `None` report renders as n/a cells.
pub fn metric_table(rows: &[(TableRow, Option<&MetricReport>)]) -> Table {
    Table {
        headers: vec![
            s("Approach"),
            s("Model"),
            s("rouge-1"),
            s("bleu"),
            s("Meteor"),
            s("BERTScore p/r/f1"),
        ],
        rows: rows
            .iter()
            .map(|(label, m)| {
                let mut row = vec![label.approach.clone(), label.model.clone()];
                match m {
                    Some(m) => row.extend([
                        format!("{:.3}", m.rouge1.f1),
                        format!("{:.3}", m.bleu),
                        format!("{:.3}", m.meteor),
                        format!(
                            "{:.3}/{:.3}/{:.3}",
                            m.bertscore.precision, m.bertscore.recall, m.bertscore.f1
                        ),
                    ]),
                    None => row.extend(std::iter::repeat_n(s("n/a"), 4)),
                }
                row
            })
            .collect(),
    }
}

/// Tokens with two decimals, seconds with four.
pub fn efficiency_table(rows: &[(TableRow, Option<&EfficiencyReport>)]) -> Table {
    Table {
        headers: vec![
            s("Approach"),
            s("Model"),
            s("Input Tokens"),
            s("Output Tokens"),
            s("Response Time (s)"),
        ],
        rows: rows
            .iter()
            .map(|(label, e)| {
                let mut row = vec![label.approach.clone(), label.model.clone()];
                match e {
                    Some(e) => row.extend([
                        format!("{:.2}", e.mean_input_tokens),
                        format!("{:.2}", e.mean_output_tokens),
                        format!("{:.4}", e.mean_response_time_s),
                    ]),
                    None => row.extend(std::iter::repeat_n(s("n/a"), 3)),
                }
                row
            })
            .collect(),
    }
}
