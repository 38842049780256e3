//! Benchmark driver: runs the sampler on a synthetic stream and records one
//! metrics row per PE and batch.
//!
//! # CSV format
//!
//! Columns, in this order:
//!
//! | column | meaning |
//! |---|---|
//! | `run_id` | free-form label from the config |
//! | `batch` | 0-based batch index |
//! | `pe` | PE rank, or `-1` for the batch's global row |
//! | `insertions` | items inserted into the PE's reservoir (global row: maximum over PEs) |
//! | `scanned` | items processed (global row: sum) |
//! | `sel_rounds` | selection rounds this batch |
//! | `threshold` | global threshold after the batch, empty while unset |
//! | `sample_size` | global sample size after the batch |
//! | `bcasts`, `allreduces`, `gathers` | collectives issued this batch |
//! | `words` | words moved this batch (global row: maximum over PEs) |
//! | `wall_ns` | wall-clock time of the batch (global row: maximum over PEs) |
//!
//! Floats use Rust's shortest round-trip formatting. `wall_ns` is the only
//! column that changes between runs with the same config.

use std::io::Write;
use std::time::Instant;

use thiserror::Error;
use wrs_core::{
    CommCounters, CommError, Communicator, Mode, PeRng, SampleSize, Sampler, SamplerConfig,
    Selection, StreamError,
};

use crate::spmd::run_spmd;
use crate::workload::{derive_seed, WeightDist, Workload};

pub const CSV_HEADER: [&str; 13] = [
    "run_id",
    "batch",
    "pe",
    "insertions",
    "scanned",
    "sel_rounds",
    "threshold",
    "sample_size",
    "bcasts",
    "allreduces",
    "gathers",
    "words",
    "wall_ns",
];

const SAMPLER_TAG: u64 = 0x7361_6d70;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectVariant {
    /// Exact sample size with `pivots` pivots per selection round.
    Exact { pivots: usize },
    /// Sample size anywhere in the configured range.
    Range { pivots: usize },
    /// Centralized selection on PE 0.
    Gather,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub p: usize,
    pub size: SampleSize,
    /// Items per PE per batch.
    pub b: usize,
    pub batches: u64,
    pub mode: Mode,
    pub select: SelectVariant,
    pub weights: WeightDist,
    pub seed: u64,
    pub threads: usize,
}

impl RunConfig {
    /// Weighted, exact single-pivot run with uniform weights.
    pub fn new(p: usize, k: u64, b: usize, batches: u64) -> Self {
        RunConfig {
            run_id: "run".into(),
            p,
            size: SampleSize::Fixed(k),
            b,
            batches,
            mode: Mode::Weighted,
            select: SelectVariant::Exact { pivots: 1 },
            weights: WeightDist::Uniform,
            seed: 0,
            threads: p,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.p == 0 || self.b == 0 || self.batches == 0 || self.threads == 0 {
            return Err(ConfigError("p, b, batches and threads must be at least 1"));
        }
        match (self.select, self.size) {
            (SelectVariant::Exact { pivots: 0 } | SelectVariant::Range { pivots: 0 }, _) => {
                Err(ConfigError("pivot count must be at least 1"))
            }
            (_, SampleSize::Fixed(0)) => Err(ConfigError("k must be at least 1")),
            (SelectVariant::Range { .. }, SampleSize::Range { lower, upper })
                if lower >= 1 && lower < upper =>
            {
                Ok(())
            }
            (SelectVariant::Range { .. }, _) => {
                Err(ConfigError("range selection needs 1 <= k-lo < k-hi"))
            }
            (_, SampleSize::Range { .. }) => Err(ConfigError(
                "a size range is only valid with range selection",
            )),
            _ => Ok(()),
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        let selection = match self.select {
            SelectVariant::Exact { pivots } | SelectVariant::Range { pivots } => {
                Selection::Pivots(pivots)
            }
            SelectVariant::Gather => Selection::Gather { root: 0 },
        };
        SamplerConfig::new(self.mode, self.size, selection)
    }

    pub fn workload(&self) -> Workload {
        Workload {
            p: self.p,
            b: self.b,
            mode: self.mode,
            weights: self.weights,
            seed: self.seed,
        }
    }

    /// Generator for PE `rank`'s sampler.
    pub fn sampler_rng(&self, rank: usize) -> PeRng {
        PeRng::new(derive_seed(self.seed, &[SAMPLER_TAG]), rank as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid run config: {0}")]
pub struct ConfigError(pub &'static str);

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("PE {rank}: {source}")]
    Engine { rank: usize, source: StreamError },
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub batch: u64,
    /// `None` for the global row.
    pub pe: Option<usize>,
    pub insertions: u64,
    pub scanned: u64,
    pub sel_rounds: u32,
    pub threshold: Option<f64>,
    pub sample_size: u64,
    pub comm: CommCounters,
    pub wall_ns: u64,
}

impl MetricsRow {
    pub fn is_global(&self) -> bool {
        self.pe.is_none()
    }

    fn record(&self, run_id: &str) -> [String; 13] {
        [
            run_id.to_string(),
            self.batch.to_string(),
            self.pe.map_or("-1".into(), |p| p.to_string()),
            self.insertions.to_string(),
            self.scanned.to_string(),
            self.sel_rounds.to_string(),
            self.threshold.map_or(String::new(), |t| t.to_string()),
            self.sample_size.to_string(),
            self.comm.broadcasts.to_string(),
            self.comm.all_reduces.to_string(),
            self.comm.gathers.to_string(),
            self.comm.words.to_string(),
            self.wall_ns.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Mean over PEs of each PE's total insertions.
    pub mean_insertions: f64,
    /// Largest total insertions of any PE.
    pub max_insertions: u64,
    /// Selection rounds per batch that ran a selection.
    pub mean_rounds: f64,
    pub selections: u64,
    pub items: u64,
    pub wall_ns: u64,
    pub items_per_sec: f64,
}

impl Summary {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        let rows: [(&str, String); 7] = [
            ("mean_insertions", self.mean_insertions.to_string()),
            ("max_insertions", self.max_insertions.to_string()),
            ("mean_rounds", self.mean_rounds.to_string()),
            ("selections", self.selections.to_string()),
            ("items", self.items.to_string()),
            ("wall_ns", self.wall_ns.to_string()),
            ("items_per_sec", self.items_per_sec.to_string()),
        ];
        for (k, v) in rows {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub config: RunConfig,
    /// Per batch: the PE rows in rank order, then the global row.
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
}

impl RunOutput {
    pub fn global_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| r.is_global())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        write_csv(&self.config.run_id, &self.rows, out)
    }
}

pub fn write_csv<W: Write>(run_id: &str, rows: &[MetricsRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(row.record(run_id))?;
    }
    w.flush()?;
    Ok(())
}

fn diff(after: CommCounters, before: CommCounters) -> CommCounters {
    CommCounters {
        broadcasts: after.broadcasts - before.broadcasts,
        all_reduces: after.all_reduces - before.all_reduces,
        gathers: after.gathers - before.gathers,
        words: after.words - before.words,
    }
}

fn run_pe<C: Communicator>(
    config: &RunConfig,
    comm: &mut C,
) -> Result<(Vec<MetricsRow>, u64), StreamError> {
    let rank = comm.rank();
    let workload = config.workload();
    let mut sampler = Sampler::new(config.sampler_config(), rank, config.sampler_rng(rank))?;
    let mut rows = Vec::with_capacity(config.batches as usize);
    let mut items = Vec::with_capacity(config.b);
    for batch in 0..config.batches {
        workload.fill_batch(batch, rank, &mut items);
        let before = comm.counters();
        let start = Instant::now();
        let report = sampler.process_batch(comm, &items)?;
        let wall_ns = start.elapsed().as_nanos() as u64;
        rows.push(MetricsRow {
            batch,
            pe: Some(rank),
            insertions: report.insertions,
            scanned: report.scanned,
            sel_rounds: report.rounds,
            threshold: report.threshold.value(),
            sample_size: report.sample_size,
            comm: diff(comm.counters(), before),
            wall_ns,
        });
    }
    Ok((rows, sampler.totals().insertions))
}

fn global_row(pe_rows: &[MetricsRow]) -> MetricsRow {
    let first = &pe_rows[0];
    MetricsRow {
        batch: first.batch,
        pe: None,
        insertions: pe_rows.iter().map(|r| r.insertions).max().unwrap(),
        scanned: pe_rows.iter().map(|r| r.scanned).sum(),
        sel_rounds: first.sel_rounds,
        threshold: first.threshold,
        sample_size: first.sample_size,
        comm: CommCounters {
            words: pe_rows.iter().map(|r| r.comm.words).max().unwrap(),
            ..first.comm
        },
        wall_ns: pe_rows.iter().map(|r| r.wall_ns).max().unwrap(),
    }
}

/// Runs the configured stream to completion.
pub fn run(config: &RunConfig) -> Result<RunOutput, BenchError> {
    config.validate()?;
    let results = run_spmd(config.p, config.threads, |comm| run_pe(config, comm));

    let mut per_pe = Vec::with_capacity(config.p);
    let mut failures = Vec::new();
    for (rank, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => per_pe.push(v),
            Err(source) => failures.push(BenchError::Engine { rank, source }),
        }
    }
    // A PE that fails first makes its peers see a protocol violation; report
    // the original error.
    if !failures.is_empty() {
        let secondary = |e: &BenchError| {
            matches!(
                e,
                BenchError::Engine {
                    source: StreamError::Comm(CommError::ProtocolViolation { .. }),
                    ..
                }
            )
        };
        let idx = failures.iter().position(|e| !secondary(e)).unwrap_or(0);
        return Err(failures.swap_remove(idx));
    }

    let mut rows = Vec::with_capacity(config.batches as usize * (config.p + 1));
    for batch in 0..config.batches as usize {
        let start = rows.len();
        rows.extend(per_pe.iter().map(|(r, _)| r[batch].clone()));
        let global = global_row(&rows[start..]);
        rows.push(global);
    }

    let totals: Vec<u64> = per_pe.iter().map(|(_, t)| *t).collect();
    let globals: Vec<&MetricsRow> = rows.iter().filter(|r| r.is_global()).collect();
    let selections = globals.iter().filter(|r| r.sel_rounds > 0).count() as u64;
    let rounds: u64 = globals.iter().map(|r| u64::from(r.sel_rounds)).sum();
    let items = config.p as u64 * config.b as u64 * config.batches;
    let wall_ns: u64 = globals.iter().map(|r| r.wall_ns).sum();
    let summary = Summary {
        mean_insertions: totals.iter().sum::<u64>() as f64 / totals.len() as f64,
        max_insertions: totals.iter().copied().max().unwrap_or(0),
        mean_rounds: if selections == 0 {
            0.0
        } else {
            rounds as f64 / selections as f64
        },
        selections,
        items,
        wall_ns,
        items_per_sec: if wall_ns == 0 {
            0.0
        } else {
            items as f64 * 1e9 / wall_ns as f64
        },
    };
    Ok(RunOutput {
        config: config.clone(),
        rows,
        summary,
    })
}
