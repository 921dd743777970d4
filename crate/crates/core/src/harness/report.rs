//! Human-readable and CSV renderings of a [`ResultTable`].

use std::fmt::Write;

use super::config::Metric;
use super::experiment::ResultTable;

/// One aligned text table per metric: policies as rows, budgets as columns,
/// cells `mean ± se`.
pub fn render_text(table: &ResultTable) -> String {
    let mut out = String::new();
    for (i, &metric) in table.metrics.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let n_pairs = table
            .cells
            .iter()
            .find(|c| c.metric == metric)
            .map_or(0, |c| c.n_pairs);
        let _ = writeln!(out, "{} (mean ± se over {} pairs)", metric.name(), n_pairs);
        let mut rows = vec![std::iter::once("policy".to_string())
            .chain(table.budgets.iter().map(|b| format!("T={b}")))
            .collect::<Vec<_>>()];
        for policy in &table.policies {
            let mut row = vec![policy.clone()];
            for &b in &table.budgets {
                row.push(match table.cell(policy, b, metric) {
                    Some(c) => format!("{:.4} ± {:.4}", c.mean, c.std_err),
                    None => "-".into(),
                });
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, cell)| {
                    let pad = widths[j] - cell.chars().count();
                    if j == 0 {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  "));
        }
    }
    out
}

/// Flat CSV with one line per (policy, budget, metric) cell.
pub fn render_csv(table: &ResultTable) -> String {
    let mut out = String::from("policy,budget,metric,mean,std_err,n_pairs,n_users\n");
    for c in &table.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.policy,
            c.budget,
            c.metric.name(),
            c.mean,
            c.std_err,
            c.n_pairs,
            c.n_users
        );
    }
    out
}

/// Looks up a metric by its rendered name.
pub fn metric_by_name(name: &str) -> Option<Metric> {
    Metric::ALL.into_iter().find(|m| m.name() == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::ResultCell;

    fn table() -> ResultTable {
        let cell = |policy: &str, budget, mean| ResultCell {
            policy: policy.into(),
            budget,
            metric: Metric::LogLoss,
            mean,
            std_err: 0.01,
            n_pairs: 10,
            n_users: 2,
        };
        ResultTable {
            policies: vec!["greedy".into(), "random".into()],
            budgets: vec![5, 10],
            metrics: vec![Metric::LogLoss],
            targets: vec!["q1".into()],
            n_test_users: 2,
            cells: vec![
                cell("greedy", 5, 1.0),
                cell("greedy", 10, 0.5),
                cell("random", 5, 1.25),
                cell("random", 10, 0.75),
            ],
        }
    }

    #[test]
    fn text_rendering_is_stable() {
        let expected = "\
log_loss (mean ± se over 10 pairs)
policy              T=5             T=10
greedy  1.0000 ± 0.0100  0.5000 ± 0.0100
random  1.2500 ± 0.0100  0.7500 ± 0.0100
";
        assert_eq!(render_text(&table()), expected);
    }

    #[test]
    fn csv_has_one_line_per_cell() {
        let csv = render_csv(&table());
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(csv.lines().nth(1), Some("greedy,5,log_loss,1,0.01,10,2"));
    }
}
