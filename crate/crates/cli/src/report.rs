//! CSV and plain-text report writers.

use std::fmt::Write as _;

use sudf::metrics::MetricReport;

use crate::config::RunVariant;

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub report: MetricReport,
}

fn comment_block(comments: &[String]) -> String {
    comments.iter().map(|c| format!("# {c}\n")).collect()
}

fn values_csv(r: &MetricReport) -> String {
    r.values()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// `image,<metrics>` rows plus a `MEAN` row. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn metrics_csv(rows: &[EvalRow], mean: &MetricReport, comments: &[String]) -> String {
    let mut out = comment_block(comments);
    out.push_str("image,");
    out.push_str(&MetricReport::CSV_COLUMNS.join(","));
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{},{}", row.image, values_csv(&row.report));
    }
    let _ = writeln!(out, "MEAN,{}", values_csv(mean));
    out
}

/// Parses [`metrics_csv`] output back into `(image, report)` rows, including
/// the `MEAN` row. Comment lines are skipped.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<(String, MetricReport)>, String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or("empty metrics file")?;
    let expected = format!("image,{}", MetricReport::CSV_COLUMNS.join(","));
    if header != expected {
        return Err(format!("unexpected header '{header}'"));
    }
    lines
        .map(|line| {
            let mut parts = line.split(',');
            let image = parts.next().unwrap_or_default().to_string();
            let vals: Vec<f64> = parts
                .map(|p| p.parse::<f64>().map_err(|e| format!("{line}: {e}")))
                .collect::<Result<_, _>>()?;
            let arr: [f64; 9] = vals
                .try_into()
                .map_err(|_| format!("wrong column count in '{line}'"))?;
            Ok((image, MetricReport::from_values(arr)))
        })
        .collect()
}

/// Per-image outcome of one variant inside a bench run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: RunVariant,
    pub image: String,
    pub report: MetricReport,
    pub iterations: usize,
    pub termination: String,
}

pub fn bench_csv(rows: &[BenchRow], means: &[(RunVariant, MetricReport)], comments: &[String]) -> String {
    let mut out = comment_block(comments);
    out.push_str("variant,image,");
    out.push_str(&MetricReport::CSV_COLUMNS.join(","));
    out.push_str(",iterations,termination\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.variant,
            r.image,
            values_csv(&r.report),
            r.iterations,
            r.termination
        );
    }
    for (v, m) in means {
        let _ = writeln!(out, "{v},MEAN,{},,", values_csv(m));
    }
    out
}

/// Convergence statistics and wall-clock total of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: RunVariant,
    pub images: usize,
    pub failed: usize,
    pub mean_iterations: f64,
    pub loss_converged: usize,
    pub saliency_converged: usize,
    pub max_iterations: usize,
    pub wall_ms: f64,
}

pub fn summary_csv(rows: &[VariantSummary], comments: &[String]) -> String {
    let mut out = comment_block(comments);
    out.push_str(
        "variant,images,failed,mean_iterations,loss_converged,saliency_converged,max_iterations,wall_ms\n",
    );
    for s in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.variant,
            s.images,
            s.failed,
            s.mean_iterations,
            s.loss_converged,
            s.saliency_converged,
            s.max_iterations,
            s.wall_ms
        );
    }
    out
}

/// Position (1-based) of each variant per metric; `kldiv` ascending, the
/// rest descending, ties keep variant order.
#[allow(clippy::needless_range_loop)] // `col` indexes both metrics and positions
pub fn rank_positions(means: &[(RunVariant, MetricReport)]) -> Vec<[usize; 9]> {
    let mut pos = vec![[0usize; 9]; means.len()];
    for col in 0..MetricReport::CSV_COLUMNS.len() {
        let mut order: Vec<usize> = (0..means.len()).collect();
        let key = |i: usize| means[i].1.values()[col];
        order.sort_by(|&a, &b| {
            let (x, y) = (key(a), key(b));
            let ord = if MetricReport::lower_is_better(col) {
                x.total_cmp(&y)
            } else {
                y.total_cmp(&x)
            };
            ord.then(a.cmp(&b))
        });
        for (place, &i) in order.iter().enumerate() {
            pos[i][col] = place + 1;
        }
    }
    pos
}

/// Metric-by-variant table with the best three marked `(1)`, `(2)`, `(3)`.
pub fn ranking_table(means: &[(RunVariant, MetricReport)], summaries: &[VariantSummary]) -> String {
    let pos = rank_positions(means);
    let mut out = String::new();
    let _ = write!(out, "{:<12}", "metric");
    for (v, _) in means {
        let _ = write!(out, "{:>18}", v.as_str());
    }
    out.push('\n');
    for (col, name) in MetricReport::CSV_COLUMNS.iter().enumerate() {
        let _ = write!(out, "{:<12}", name);
        for (i, (_, m)) in means.iter().enumerate() {
            let mark = match pos[i][col] {
                p @ 1..=3 => format!(" ({p})"),
                _ => "    ".into(),
            };
            let _ = write!(out, "{:>18}", format!("{:.4}{mark}", m.values()[col]));
        }
        out.push('\n');
    }
    out.push_str("\n(1) best, (2) second, (3) third; kldiv lower is better, all others higher.\n");
    if !summaries.is_empty() {
        out.push('\n');
        let _ = writeln!(
            out,
            "{:<12}{:>8}{:>8}{:>12}{:>8}{:>8}{:>8}{:>12}",
            "variant", "images", "failed", "mean_iter", "loss", "sal", "max", "wall_ms"
        );
        for s in summaries {
            let _ = writeln!(
                out,
                "{:<12}{:>8}{:>8}{:>12.2}{:>8}{:>8}{:>8}{:>12.0}",
                s.variant.as_str(),
                s.images,
                s.failed,
                s.mean_iterations,
                s.loss_converged,
                s.saliency_converged,
                s.max_iterations,
                s.wall_ms
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(auc: f64, kl: f64) -> MetricReport {
        MetricReport {
            auc_borji: auc,
            kldiv: kl,
            ..Default::default()
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![EvalRow {
            image: "a".into(),
            report: MetricReport::from_values([0.1, 1.0 / 3.0, 0.2, 0.3, 0.4, 0.5, 0.6, 1e-17, 2.5]),
        }];
        let mean = rows[0].report;
        let text = metrics_csv(&rows, &mean, &["seed = 1".into()]);
        assert!(text.starts_with("# seed = 1\nimage,auc_borji,cc,f_beta,max_f,ave_f,precision,recall,nss,kldiv\n"));
        let back = parse_metrics_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], ("a".to_string(), rows[0].report));
        assert_eq!(back[1].0, "MEAN");
    }

    #[test]
    fn kldiv_ranks_ascending_others_descending() {
        let means = vec![
            (RunVariant::HfSlic, report(0.9, 2.0)),
            (RunVariant::HsSlic, report(0.8, 1.0)),
            (RunVariant::MrBaseline, report(0.7, 3.0)),
        ];
        let pos = rank_positions(&means);
        assert_eq!([pos[0][0], pos[1][0], pos[2][0]], [1, 2, 3]);
        assert_eq!([pos[0][8], pos[1][8], pos[2][8]], [2, 1, 3]);
        let table = ranking_table(&means, &[]);
        assert!(table.contains("0.9000 (1)"));
        assert!(table.contains("1.0000 (1)"));
    }

    #[test]
    fn ties_keep_variant_order() {
        let means = vec![
            (RunVariant::HfSlic, report(0.5, 1.0)),
            (RunVariant::HsSlic, report(0.5, 1.0)),
        ];
        let pos = rank_positions(&means);
        assert_eq!(pos[0][0], 1);
        assert_eq!(pos[1][0], 2);
    }
}
