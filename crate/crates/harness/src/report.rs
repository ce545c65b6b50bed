//! Summary tables and plot data from a run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flipscope_core::metrics::{
    compressed_size_report, gambler_stats, mean_pairwise_levenshtein, unique_subseq_count, GamblerStats,
    MetricReport,
};
use flipscope_core::seqcore::running_mean;
use flipscope_core::{BinarySequence, SequenceSet};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::run::{cells, CONFIG_FILE, RECORDS_FILE};
use crate::store::{latest_by_cell, CellBatch, RecordStore, Status};

pub const TABLES_DIR: &str = "tables";
pub const PLOTS_DIR: &str = "plots";
pub const SUBSEQ_KS: [usize; 5] = [5, 10, 15, 20, 25];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    /// Cells with no usable records.
    pub gaps: usize,
}

fn cell_state(batch: Option<&CellBatch>) -> &'static str {
    match batch {
        None => "missing",
        Some(b) if b.failed() => "failed",
        Some(_) => "ok",
    }
}

#[derive(Serialize)]
struct GamblerRow<'a> {
    cell: &'a str,
    declared_p: f64,
    status: &'static str,
    n_sequences: Option<usize>,
    n_flagged: Option<usize>,
    mean_of_means: Option<f64>,
    mean_alternation: Option<f64>,
    mean_longest_run: Option<f64>,
    config_digest: &'a str,
}

#[derive(Serialize)]
struct ComplexityRow<'a> {
    label: &'a str,
    declared_p: f64,
    metric: &'static str,
    k: Option<usize>,
    raw: Option<f64>,
    baseline: Option<f64>,
    ratio: Option<f64>,
    seed: u64,
    config_digest: &'a str,
}

#[derive(Serialize)]
struct JudgmentRow {
    concept: String,
    n: usize,
    x_len: usize,
    p_random: Option<f64>,
    method: Option<String>,
    flagged: Option<bool>,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    cell: String,
    status: &'static str,
    request_hashes: String,
    tree_file: Option<String>,
    note: Option<String>,
    config_digest: &'a str,
}

#[derive(Serialize)]
struct CurveRow {
    concept: String,
    n: usize,
    x_len: usize,
    depth: usize,
    mass: Option<f64>,
    status: &'static str,
    tree_file: Option<String>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn write<T: Serialize>(&mut self, sub: &str, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let path = self.dir.join(sub).join(name);
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        flipscope_llm::write_atomic(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }

    /// Header-only tables still need their header when no rows exist.
    fn write_raw(&mut self, sub: &str, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let path = self.dir.join(sub).join(name);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        flipscope_llm::write_atomic(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }
}

/// Write every table for the run in `run_dir`. Missing or failed cells show
/// up as rows with empty values.
pub fn report(run_dir: &Path) -> Result<ReportSummary> {
    let config = ExperimentConfig::load(&run_dir.join(CONFIG_FILE))?;
    let records_path = run_dir.join(RECORDS_FILE);
    let batches = if records_path.exists() {
        RecordStore::load(&records_path)?
    } else {
        Vec::new()
    };
    let latest = latest_by_cell(batches);
    std::fs::create_dir_all(run_dir.join(TABLES_DIR))?;
    std::fs::create_dir_all(run_dir.join(PLOTS_DIR))?;
    let mut w = Writer {
        dir: run_dir.to_path_buf(),
        files: Vec::new(),
    };
    let gaps = match config.kind {
        ExperimentKind::Generation => generation_tables(&config, &latest, &mut w)?,
        ExperimentKind::Judgment => judgment_tables(&config, &latest, &mut w)?,
        ExperimentKind::LearningCurve => curve_tables(&config, &latest, &mut w)?,
    };
    Ok(ReportSummary { files: w.files, gaps })
}

/// Parsed sequences with at least two flips from a complete cell.
fn usable_set(key: &str, p: f64, batch: Option<&CellBatch>) -> Option<SequenceSet> {
    let batch = batch.filter(|b| !b.failed())?;
    let seqs: Vec<BinarySequence> = batch
        .records
        .iter()
        .filter(|r| r.status == Status::Ok)
        .filter_map(|r| r.sequence.clone())
        .filter(|s| s.len() >= 2)
        .collect();
    (!seqs.is_empty()).then(|| SequenceSet::new(key, seqs).with_declared_p(p))
}

struct GenCell {
    key: String,
    p: f64,
    state: &'static str,
    flagged: usize,
    set: Option<SequenceSet>,
    stats: Option<GamblerStats>,
    complexity: Vec<(&'static str, Option<usize>, Option<MetricReport>)>,
}

fn complexity(set: Option<&SequenceSet>, config: &ExperimentConfig) -> Vec<(&'static str, Option<usize>, Option<MetricReport>)> {
    let seed = config.seed;
    let mut out: Vec<(&'static str, Option<usize>, Option<MetricReport>)> = SUBSEQ_KS
        .iter()
        .map(|&k| {
            (
                "unique_subsequences",
                Some(k),
                set.and_then(|s| unique_subseq_count(s, k, seed).ok()),
            )
        })
        .collect();
    out.push((
        "gzip_bytes",
        None,
        set.and_then(|s| compressed_size_report(s, seed).ok()),
    ));
    out.push((
        "mean_levenshtein",
        None,
        set.and_then(|s| mean_pairwise_levenshtein(s, config.levenshtein_pairs, seed).ok()),
    ));
    out
}

fn generation_tables(
    config: &ExperimentConfig,
    latest: &BTreeMap<String, CellBatch>,
    w: &mut Writer,
) -> Result<usize> {
    let digest = config.digest();
    let grid: Vec<(String, f64)> = cells(config)
        .into_iter()
        .map(|c| match c {
            crate::store::Cell::Generation { p } => (c.key(), p),
            _ => unreachable!("generation cells"),
        })
        .collect();
    let computed: Vec<GenCell> = grid
        .par_iter()
        .map(|(key, p)| {
            let batch = latest.get(key);
            let set = usable_set(key, *p, batch);
            let stats = set.as_ref().and_then(|s| gambler_stats(s).ok());
            let complexity = complexity(set.as_ref(), config);
            GenCell {
                key: key.clone(),
                p: *p,
                state: cell_state(batch),
                flagged: batch.map_or(0, |b| {
                    b.records.iter().filter(|r| r.status == Status::Flagged).count()
                }),
                set,
                stats,
                complexity,
            }
        })
        .collect();
    let gaps = computed.iter().filter(|c| c.stats.is_none()).count();

    w.write(
        TABLES_DIR,
        "gambler_stats.csv",
        computed.iter().map(|c| GamblerRow {
            cell: &c.key,
            declared_p: c.p,
            status: c.state,
            n_sequences: c.set.as_ref().map(SequenceSet::len),
            n_flagged: (c.state != "missing").then_some(c.flagged),
            mean_of_means: c.stats.as_ref().map(|s| s.mean_of_means),
            mean_alternation: c.stats.as_ref().map(|s| s.mean_alternation),
            mean_longest_run: c.stats.as_ref().map(|s| s.mean_longest_run),
            config_digest: &digest,
        }),
    )?;

    w.write(
        TABLES_DIR,
        "complexity.csv",
        computed.iter().flat_map(|c| {
            let digest = &digest;
            c.complexity.iter().map(move |(metric, k, rep)| ComplexityRow {
                label: &c.key,
                declared_p: c.p,
                metric,
                k: *k,
                raw: rep.as_ref().map(|r| r.raw),
                baseline: rep.as_ref().map(|r| r.baseline),
                ratio: rep.as_ref().and_then(|r| r.ratio),
                seed: config.seed,
                config_digest: digest,
            })
        }),
    )?;

    let mut running = Vec::new();
    let mut hist = Vec::new();
    let mut runs = Vec::new();
    let edges = GamblerStats::mean_bin_edges();
    for c in &computed {
        let p = c.p.to_string();
        if let Some(set) = &c.set {
            for (i, seq) in set.sequences.iter().enumerate() {
                for (t, m) in running_mean(seq).unwrap_or_default().into_iter().enumerate() {
                    running.push(vec![c.key.clone(), p.clone(), i.to_string(), (t + 1).to_string(), m.to_string()]);
                }
            }
        }
        if let Some(stats) = &c.stats {
            for (bin, ((lo, hi), count)) in edges.iter().zip(&stats.mean_histogram).enumerate() {
                hist.push(vec![
                    c.key.clone(),
                    p.clone(),
                    bin.to_string(),
                    format!("{lo:.2}"),
                    format!("{hi:.2}"),
                    count.to_string(),
                ]);
            }
            for (len, count) in &stats.longest_run_histogram {
                runs.push(vec![c.key.clone(), p.clone(), len.to_string(), count.to_string()]);
            }
        }
    }
    w.write_raw(
        PLOTS_DIR,
        "running_means.csv",
        &["cell", "declared_p", "sample", "t", "running_mean"],
        running,
    )?;
    w.write_raw(
        PLOTS_DIR,
        "mean_histogram.csv",
        &["cell", "declared_p", "bin", "lo", "hi", "count"],
        hist,
    )?;
    w.write_raw(
        PLOTS_DIR,
        "longest_run_histogram.csv",
        &["cell", "declared_p", "run_length", "count"],
        runs,
    )?;
    Ok(gaps)
}

fn trace_row<'a>(key: String, batch: Option<&CellBatch>, digest: &'a str) -> TraceRow<'a> {
    let record = batch.and_then(|b| b.records.first());
    TraceRow {
        cell: key,
        status: cell_state(batch),
        request_hashes: record.map(|r| r.request_hashes.join(";")).unwrap_or_default(),
        tree_file: record.and_then(|r| r.tree_file.clone()),
        note: record.and_then(|r| r.note.clone()),
        config_digest: digest,
    }
}

fn judgment_tables(
    config: &ExperimentConfig,
    latest: &BTreeMap<String, CellBatch>,
    w: &mut Writer,
) -> Result<usize> {
    let digest = config.digest();
    let mut rows = Vec::new();
    let mut trace = Vec::new();
    let mut gaps = 0;
    for cell in cells(config) {
        let crate::store::Cell::Judgment { concept, n } = &cell else {
            unreachable!("judgment cells")
        };
        let batch = latest.get(&cell.key());
        let record = batch.filter(|b| !b.failed()).and_then(|b| b.records.first());
        gaps += record.is_none() as usize;
        rows.push(JudgmentRow {
            concept: concept.to_bit_string(),
            n: *n,
            x_len: concept.len() * n,
            p_random: record.and_then(|r| r.value("p_random")),
            method: record.and_then(|r| r.method.clone()),
            flagged: record.map(|r| r.status == Status::Flagged),
        });
        trace.push(trace_row(cell.key(), batch, &digest));
    }
    w.write(TABLES_DIR, "judgment.csv", rows)?;
    w.write(TABLES_DIR, "judgment_trace.csv", trace)?;
    Ok(gaps)
}

fn curve_tables(
    config: &ExperimentConfig,
    latest: &BTreeMap<String, CellBatch>,
    w: &mut Writer,
) -> Result<usize> {
    let digest = config.digest();
    let mut rows = Vec::new();
    let mut trace = Vec::new();
    let mut gaps = 0;
    for cell in cells(config) {
        let crate::store::Cell::Curve { concept, n, depth } = &cell else {
            unreachable!("curve cells")
        };
        let batch = latest.get(&cell.key());
        let record = batch.filter(|b| !b.failed()).and_then(|b| b.records.first());
        gaps += record.is_none() as usize;
        rows.push(CurveRow {
            concept: concept.to_bit_string(),
            n: *n,
            x_len: concept.len() * n,
            depth: *depth,
            mass: record.and_then(|r| r.value("mass")),
            status: cell_state(batch),
            tree_file: record.and_then(|r| r.tree_file.clone()),
        });
        trace.push(trace_row(cell.key(), batch, &digest));
    }
    w.write(TABLES_DIR, "learning_curve.csv", rows)?;
    w.write(TABLES_DIR, "learning_curve_trace.csv", trace)?;
    Ok(gaps)
}
