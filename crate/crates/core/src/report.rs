// SPDX-License-Identifier: Apache-2.0

//! CSV and plain-text renderings of run logs and comparisons.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::harness::{Comparison, HistogramTable, IterationRecord, RunLog};
use crate::stats::{bin_edges, histogram};

pub const REPORT_BINS: usize = 10;
const BAR_WIDTH: usize = 40;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Histograms of one per-run quantity, one row per non-empty iteration, over
/// edges spanning the whole log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationHistograms {
    pub edges: Vec<f64>,
    pub rows: Vec<(u32, Vec<u64>)>,
}

pub fn iteration_histograms(
    log: &RunLog,
    bins: usize,
    value: impl Fn(&IterationRecord) -> Vec<f64>,
) -> IterationHistograms {
    let per_iter: Vec<(u32, Vec<f64>)> = log
        .iterations
        .iter()
        .map(|it| (it.iteration, value(it)))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let all = per_iter.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let edges = if lo.is_finite() { bin_edges(lo, hi, bins) } else { bin_edges(0.0, 1.0, bins) };
    let rows = per_iter
        .iter()
        .map(|(i, v)| (*i, histogram(v, &edges)))
        .collect();
    IterationHistograms { edges, rows }
}

/// Columns `iteration,bin_lo,bin_hi,count`.
pub fn write_histogram_csv<W: Write>(h: &IterationHistograms, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "bin_lo", "bin_hi", "count"])?;
    for (iteration, counts) in &h.rows {
        for (b, c) in counts.iter().enumerate() {
            w.write_record([
                iteration.to_string(),
                h.edges[b].to_string(),
                h.edges[b + 1].to_string(),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns `log,iteration,bin_lo,bin_hi,count`.
pub fn write_comparison_histogram_csv<W: Write>(h: &HistogramTable, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["log", "iteration", "bin_lo", "bin_hi", "count"])?;
    for (label, iteration, counts) in &h.rows {
        for (b, c) in counts.iter().enumerate() {
            w.write_record([
                label.clone(),
                iteration.to_string(),
                h.edges[b].to_string(),
                h.edges[b + 1].to_string(),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Columns `iteration,mean_a,max_a,mean_b,max_b`; missing iterations are empty.
pub fn write_series_csv<W: Write>(cmp: &Comparison, out: W) -> Result<(), ReportError> {
    let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "mean_a", "max_a", "mean_b", "max_b"])?;
    for r in &cmp.series {
        w.write_record([
            r.iteration.to_string(),
            cell(r.mean_a),
            cell(r.max_a),
            cell(r.mean_b),
            cell(r.max_b),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-width bar chart, one line per bin.
pub fn text_histogram(edges: &[f64], counts: &[u64]) -> String {
    let peak = counts.iter().copied().max().unwrap_or(0).max(1);
    let mut s = String::new();
    for (b, &c) in counts.iter().enumerate() {
        let close = if b + 1 == counts.len() { ']' } else { ')' };
        let bar = "#".repeat((c as usize * BAR_WIDTH).div_ceil(peak as usize));
        let _ = writeln!(s, "[{:>12.4}, {:>12.4}{close} {:>6} |{bar}", edges[b], edges[b + 1], c);
    }
    s
}

fn text_report(title: &str, h: &IterationHistograms) -> String {
    let mut s = format!("{title}\n");
    if h.rows.is_empty() {
        s.push_str("  (no runs)\n");
    }
    for (iteration, counts) in &h.rows {
        let _ = writeln!(s, "iteration {iteration}");
        s.push_str(&text_histogram(&h.edges, counts));
    }
    s
}

/// Plain-text summary of a comparison.
pub fn comparison_summary(cmp: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "final mean reward a: {:.6}", cmp.final_mean_a);
    let _ = writeln!(s, "final mean reward b: {:.6}", cmp.final_mean_b);
    let _ = writeln!(s, "mean ratio a/b: {:.2}", cmp.mean_ratio);
    match &cmp.mann_whitney {
        Some(mw) => {
            let _ = writeln!(s, "mann-whitney U (a > b): {:.1}, z {:.4}, p {:.3e}", mw.u, mw.z, mw.p_greater);
        }
        None => s.push_str("mann-whitney: not computed (empty final iteration)\n"),
    }
    s
}

/// Writes `reward_histogram.csv`, `pct_full_histogram.csv`, `histogram.txt`
/// and, when the log has iterations, `coverage.csv` from the last ledger.
pub fn write_report(log: &RunLog, dir: &Path, bins: usize) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir)?;
    let reward = iteration_histograms(log, bins, IterationRecord::rewards);
    let pct_full = iteration_histograms(log, bins, IterationRecord::pct_full);
    let mut written = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(std::fs::File) -> Result<(), ReportError>| -> Result<(), ReportError> {
        let path = dir.join(name);
        f(std::fs::File::create(&path)?)?;
        written.push(path);
        Ok(())
    };
    emit("reward_histogram.csv", &|f| write_histogram_csv(&reward, f))?;
    emit("pct_full_histogram.csv", &|f| write_histogram_csv(&pct_full, f))?;
    emit("histogram.txt", &|mut f| {
        f.write_all(text_report("reward", &reward).as_bytes())?;
        f.write_all(b"\n")?;
        f.write_all(text_report("pct_full_cycles", &pct_full).as_bytes())?;
        Ok(())
    })?;
    if let Some(last) = log.final_iteration() {
        emit("coverage.csv", &|f| Ok(last.ledger.write_csv(f)?))?;
    }
    Ok(written)
}

/// Writes `series.csv`, `reward_histogram.csv`, `pct_full_histogram.csv` and
/// `summary.txt`.
pub fn write_comparison(cmp: &Comparison, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir)?;
    let files = [
        "series.csv",
        "reward_histogram.csv",
        "pct_full_histogram.csv",
        "summary.txt",
    ];
    let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    write_series_csv(cmp, std::fs::File::create(&paths[0])?)?;
    write_comparison_histogram_csv(&cmp.reward_histogram, std::fs::File::create(&paths[1])?)?;
    write_comparison_histogram_csv(&cmp.pct_full_histogram, std::fs::File::create(&paths[2])?)?;
    std::fs::write(&paths[3], comparison_summary(cmp))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::CoverageLedger;
    use crate::dut::{Counters, SimResult};
    use crate::harness::{ExperimentConfig, LogHeader, Origin, RunRecord};
    use crate::stimulus::{sample_knobs, KnobSchema};
    use std::collections::BTreeMap;

    fn run(reward: f64) -> RunRecord {
        let schema = KnobSchema::for_config(&Default::default(), 4);
        RunRecord {
            origin: Origin::Random,
            knobs: sample_knobs(&schema, 0),
            seed: 0,
            result: SimResult {
                avg_fifo_depth: reward,
                pct_full_cycles: reward * 10.0,
                per_port_avg_depth: vec![0.0; 4],
                per_port_pct_full: vec![0.0; 4],
                coverage_hits: BTreeMap::new(),
                signal_hits: BTreeMap::new(),
                failed: false,
                failure_cycle: None,
                cycles_run: 1,
                counters: Counters::default(),
            },
            reward,
            action: None,
            predicted: None,
        }
    }

    fn log_with(iterations: Vec<Vec<f64>>) -> RunLog {
        RunLog {
            header: LogHeader::new(ExperimentConfig::default()),
            iterations: iterations
                .into_iter()
                .enumerate()
                .map(|(i, rewards)| IterationRecord {
                    iteration: i as u32,
                    mean_reward: 0.0,
                    max_reward: 0.0,
                    runs: rewards.into_iter().map(run).collect(),
                    entropy: 0.0,
                    epsilon: None,
                    surrogate_loss: None,
                    ledger: CoverageLedger::default(),
                    statements_added: Vec::new(),
                    termination: None,
                    valid: true,
                    error: None,
                })
                .collect(),
        }
    }

    fn csv_of(h: &IterationHistograms) -> String {
        let mut buf = Vec::new();
        write_histogram_csv(h, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_log_gives_header_only() {
        for log in [log_with(vec![]), log_with(vec![vec![]])] {
            let h = iteration_histograms(&log, 4, IterationRecord::rewards);
            assert_eq!(csv_of(&h), "iteration,bin_lo,bin_hi,count\n");
        }
    }

    #[test]
    fn known_rewards_bin_evenly() {
        let log = log_with(vec![vec![0.0, 0.0, 1.0, 1.0]]);
        let h = iteration_histograms(&log, 2, IterationRecord::rewards);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        assert_eq!(h.rows, vec![(0, vec![2, 2])]);
        assert_eq!(csv_of(&h), "iteration,bin_lo,bin_hi,count\n0,0,0.5,2\n0,0.5,1,2\n");
    }

    #[test]
    fn edges_span_all_iterations() {
        let log = log_with(vec![vec![0.0, 1.0], vec![3.0, 4.0]]);
        let h = iteration_histograms(&log, 4, IterationRecord::rewards);
        assert_eq!(h.edges, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.rows[0].1, vec![1, 1, 0, 0]);
        assert_eq!(h.rows[1].1, vec![0, 0, 0, 2]);
    }

    #[test]
    fn text_histogram_is_fixed_width() {
        let text = text_histogram(&[0.0, 0.5, 1.0], &[1, 2]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].find('|'), lines[1].find('|'));
        assert!(lines[1].ends_with(&"#".repeat(40)));
        assert!(lines[0].ends_with(&format!("|{}", "#".repeat(20))));
        assert!(lines[1].contains("1.0000]"));
    }

    #[test]
    fn report_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let log = log_with(vec![vec![0.0, 1.0, 2.0]]);
        let files = write_report(&log, dir.path(), 3).unwrap();
        let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["reward_histogram.csv", "pct_full_histogram.csv", "histogram.txt", "coverage.csv"]);
        let text = std::fs::read_to_string(dir.path().join("histogram.txt")).unwrap();
        assert!(text.starts_with("reward\niteration 0\n"));
    }
}
