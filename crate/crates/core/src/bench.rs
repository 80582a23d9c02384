//! Scaling sweeps over generated graphs and a least-squares fit of the
//! timings.

use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use crate::attack::{generate_bipartite, AttackError};
use crate::engine::{run, EngineError, EngineOptions};
use crate::lockstep::DetectionParams;
use crate::store::{preprocess, PreprocessOptions, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Attack(#[from] AttackError),
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Template; `n_seeds` is overridden by the sweeps that vary it.
    pub params: DetectionParams,
    pub memory_budget: u64,
    pub block_size: usize,
    pub threads: usize,
    /// Each point is run this many times and the fastest run is kept.
    pub repetitions: usize,
    pub rng_seed: u64,
    pub timestamp_range: (u64, u64),
}

impl BenchConfig {
    pub fn new(params: DetectionParams) -> Self {
        Self {
            params,
            memory_budget: 64 << 20,
            block_size: crate::store::block_size_from_env(),
            threads: 1,
            repetitions: 3,
            rng_seed: 0,
            timestamp_range: (0, 100_000_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// "edges" or "seeds".
    pub sweep: &'static str,
    pub edges: u64,
    pub seeds: usize,
    pub wall_clock_s: f64,
    pub iterations: usize,
    pub shards: usize,
    pub blocks: u64,
    /// Largest per-iteration counts seen in the run.
    pub max_seeks: u64,
    pub max_block_reads: u64,
}

pub const CSV_HEADER: &str =
    "sweep,edges,seeds,wall_clock_s,iterations,shards,blocks,max_seeks,max_block_reads";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{},{},{},{},{}",
            self.sweep,
            self.edges,
            self.seeds,
            self.wall_clock_s,
            self.iterations,
            self.shards,
            self.blocks,
            self.max_seeks,
            self.max_block_reads
        )
    }
}

/// Host graph shape used by the sweeps: 50 edges per user and 12.5 per
/// product on average.
pub fn host_shape(edges: u64) -> (u32, u32) {
    ((edges / 50).max(1) as u32, (edges * 2 / 25).max(1) as u32)
}

fn measure(
    sweep: &'static str,
    dir: &Path,
    edges: u64,
    seeds: usize,
    cfg: &BenchConfig,
) -> Result<BenchRow, BenchError> {
    let graph = crate::store::BipartiteGraph::open(dir)?;
    let params = cfg.params.clone().with_seeds(seeds);
    let opts = EngineOptions {
        threads: cfg.threads,
        ..Default::default()
    };
    let mut best: Option<(Duration, BenchRow)> = None;
    for _ in 0..cfg.repetitions.max(1) {
        let det = run(&graph, &params, &opts)?;
        let meta = &det.report.meta;
        let row = BenchRow {
            sweep,
            edges,
            seeds,
            wall_clock_s: det.wall_clock.as_secs_f64(),
            iterations: meta.iterations,
            shards: meta.shards,
            blocks: meta.blocks,
            max_seeks: meta.trace.iter().map(|t| t.io.seeks).max().unwrap_or(0),
            max_block_reads: meta.trace.iter().map(|t| t.io.block_reads).max().unwrap_or(0),
        };
        if best.as_ref().is_none_or(|(d, _)| det.wall_clock < *d) {
            best = Some((det.wall_clock, row));
        }
    }
    Ok(best.expect("at least one repetition").1)
}

/// Generates and stores the sweep host graph with `edges` edges in `dir`.
pub fn prepare_host(dir: &Path, edges: u64, cfg: &BenchConfig) -> Result<(), BenchError> {
    let (users, products) = host_shape(edges);
    let g = generate_bipartite(users, products, edges, cfg.timestamp_range, cfg.rng_seed ^ edges)?;
    let mut opts = PreprocessOptions::new(cfg.memory_budget);
    opts.block_size = cfg.block_size;
    preprocess(&g, dir, &opts)?;
    Ok(())
}

/// One row per edge count, all at `seeds` seeds. Graphs are built under
/// `workdir`.
pub fn edge_sweep(
    workdir: &Path,
    edge_counts: &[u64],
    seeds: usize,
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>, BenchError> {
    let mut rows = Vec::new();
    for &edges in edge_counts {
        let dir = workdir.join(format!("edges-{edges}"));
        prepare_host(&dir, edges, cfg)?;
        rows.push(measure("edges", &dir, edges, seeds, cfg)?);
        log::info!(
            "edge sweep: {} edges in {:.3}s",
            edges,
            rows.last().unwrap().wall_clock_s
        );
    }
    Ok(rows)
}

/// One row per seed count on a single graph of `edges` edges.
pub fn seed_sweep(
    workdir: &Path,
    edges: u64,
    seed_counts: &[usize],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>, BenchError> {
    let dir = workdir.join(format!("edges-{edges}"));
    prepare_host(&dir, edges, cfg)?;
    let mut rows = Vec::new();
    for &seeds in seed_counts {
        rows.push(measure("seeds", &dir, edges, seeds, cfg)?);
        log::info!(
            "seed sweep: {} seeds in {:.3}s",
            seeds,
            rows.last().unwrap().wall_clock_s
        );
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`. None with fewer than two
/// distinct x values.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}
