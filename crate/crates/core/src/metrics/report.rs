use std::fmt::Write as _;

use crate::metrics::Metric;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: Metric,
    pub value: f64,
    /// Samples, pairs or feature rows the value was computed from.
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, metric: Metric, value: f64, count: usize) {
        self.rows.push(MetricRow {
            metric,
            value,
            count,
        });
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric)
            .map(|r| r.value)
    }

    /// `metric,value,count` with values in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,count\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:?},{}", r.metric, r.value, r.count);
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let cells: Vec<[String; 3]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.metric.name().to_uppercase(),
                    format!("{:.6}", r.value),
                    r.count.to_string(),
                ]
            })
            .collect();
        let header = [
            "metric".to_string(),
            "value".to_string(),
            "count".to_string(),
        ];
        let widths: [usize; 3] = std::array::from_fn(|c| {
            cells
                .iter()
                .chain(std::iter::once(&header))
                .map(|row| row[c].len())
                .max()
                .unwrap_or(0)
        });
        let line = |row: &[String; 3]| {
            format!(
                "{:<w0$}  {:>w1$}  {:>w2$}\n",
                row[0],
                row[1],
                row[2],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2]
            )
        };
        let mut out = line(&header);
        for row in &cells {
            out.push_str(&line(row));
        }
        out
    }
}
