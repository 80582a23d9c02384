//! Seed-driven iterative lockstep search over a stored graph.
//!
//! Every iteration runs three phases to completion, in order: a product
//! scan offering each product to the locksteps whose users recommended it,
//! a user scan offering each user to the locksteps whose products it
//! recommended, and an end-of-iteration pass that tightens each product's
//! time window and drops under-covered users. A lockstep whose membership
//! did not change during an iteration is dead and frozen. A lockstep whose
//! objective contribution would drop is reverted to its previous state and
//! frozen too, so the global objective never decreases.
//!
//! Within a phase, locksteps are split into contiguous chunks, one per
//! worker. Updates to a lockstep depend only on that lockstep and the
//! vertex adjacency, so results are identical for any thread count.

mod report;
mod seed;
mod update;

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use report::{DetectionReport, IterationTrace, ReportMeta, ReportedLockstep};
pub use seed::{seed_init, suggest_seeds};

use crate::lockstep::{lambda_weight, DetectionParams, Lockstep, ParamError};
use crate::store::{BipartiteGraph, StoreError};
use crate::{Recommendation, VertexId};
use seed::store_err;

pub const DEFAULT_MAX_ITERATIONS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineOptions {
    pub threads: usize,
    pub max_iterations: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Products,
    Users,
    EndIteration,
}

/// All seeds plus iteration bookkeeping.
#[derive(Debug, Clone)]
pub struct EngineState {
    pub locksteps: Vec<Lockstep>,
    pub iteration: usize,
    pub live_seed_count: usize,
    pub rng: ChaCha8Rng,
    pub phase: Phase,
    /// Live locksteps as they were when the current iteration began.
    snapshots: Vec<Option<Lockstep>>,
}

impl EngineState {
    pub fn new(locksteps: Vec<Lockstep>, rng: ChaCha8Rng) -> Self {
        let live_seed_count = locksteps.iter().filter(|c| c.alive).count();
        Self {
            locksteps,
            iteration: 0,
            live_seed_count,
            rng,
            phase: Phase::Products,
            snapshots: Vec::new(),
        }
    }

    pub fn begin_iteration(&mut self) {
        self.iteration += 1;
        self.phase = Phase::Products;
        self.snapshots = self
            .locksteps
            .iter()
            .map(|c| c.alive.then(|| c.clone()))
            .collect();
    }

    /// Offers one product (with its full adjacency) to every live lockstep.
    pub fn update_products(&mut self, product: VertexId, edges: &[Recommendation], params: &DetectionParams) {
        self.phase = Phase::Products;
        for c in self.locksteps.iter_mut().filter(|c| c.alive) {
            update::offer_product(c, product, edges, params);
        }
    }

    /// Offers one user (with its full adjacency) to every live lockstep.
    pub fn update_users(&mut self, user: VertexId, edges: &[Recommendation], params: &DetectionParams) {
        self.phase = Phase::Users;
        for c in self.locksteps.iter_mut().filter(|c| c.alive) {
            update::offer_user(c, user, edges, params);
        }
    }

    /// Window tightening, coverage sweep, monotonicity guard and liveness.
    pub fn end_iteration(&mut self, params: &DetectionParams) {
        self.end_iteration_in(params, None);
    }

    fn end_iteration_in(&mut self, params: &DetectionParams, pool: Option<&rayon::ThreadPool>) {
        self.phase = Phase::EndIteration;
        if self.snapshots.len() != self.locksteps.len() {
            // end_iteration without begin_iteration: compare against nothing
            self.snapshots = vec![None; self.locksteps.len()];
        }
        let iteration = self.iteration;
        let finish = |(c, snap): (&mut Lockstep, &mut Option<Lockstep>)| {
            if let Some(snap) = snap.take() {
                finish_lockstep(c, snap, iteration, params);
            }
        };
        let pairs = self.locksteps.iter_mut().zip(self.snapshots.iter_mut());
        match pool {
            Some(pool) => pool.install(|| {
                self.locksteps
                    .par_iter_mut()
                    .zip(self.snapshots.par_iter_mut())
                    .for_each(finish)
            }),
            None => pairs.for_each(finish),
        }
        self.live_seed_count = self.locksteps.iter().filter(|c| c.alive).count();
    }

    /// Sum of the per-lockstep contributions recorded at the last iteration end.
    pub fn objective(&self) -> u64 {
        self.locksteps.iter().map(|c| c.score()).sum()
    }
}

fn finish_lockstep(c: &mut Lockstep, snapshot: Lockstep, iteration: usize, params: &DetectionParams) {
    if !c.alive {
        return;
    }
    update::normalize(c, params);
    let score = c.contribution(params);
    if score < snapshot.score() {
        *c = snapshot;
        c.alive = false;
        return;
    }
    c.score = score;
    if c.users.is_empty() || c.products.is_empty() || c.same_membership(&snapshot) {
        c.alive = false;
    } else {
        c.last_change = iteration;
    }
}

/// Flat buffer of whole vertex adjacencies awaiting processing.
#[derive(Default)]
struct Batch {
    edges: Vec<Recommendation>,
    spans: Vec<(VertexId, usize, usize)>,
}

impl Batch {
    fn push(&mut self, vertex: VertexId, adj: &[Recommendation]) {
        let start = self.edges.len();
        self.edges.extend_from_slice(adj);
        self.spans.push((vertex, start, self.edges.len()));
    }

    fn clear(&mut self) {
        self.edges.clear();
        self.spans.clear();
    }

    fn iter(&self) -> impl Iterator<Item = (VertexId, &[Recommendation])> {
        self.spans.iter().map(|&(v, s, e)| (v, &self.edges[s..e]))
    }
}

/// Runs `work(base, chunk)` over contiguous lockstep chunks, in parallel
/// when a pool is given.
fn for_chunks<F>(locksteps: &mut [Lockstep], pool: Option<&rayon::ThreadPool>, work: F)
where
    F: Fn(usize, &mut [Lockstep]) + Sync,
{
    match pool {
        Some(pool) if locksteps.len() > 1 => {
            let chunk = locksteps.len().div_ceil(pool.current_num_threads() * 4).max(1);
            pool.install(|| {
                locksteps
                    .par_chunks_mut(chunk)
                    .enumerate()
                    .for_each(|(i, part)| work(i * chunk, part))
            });
        }
        _ => work(0, locksteps),
    }
}

/// Indices in `list` (ascending) that fall in `base..base + len`.
fn in_chunk<T: Copy>(list: &[T], key: impl Fn(T) -> usize, base: usize, len: usize) -> &[T] {
    let lo = list.partition_point(|&x| key(x) < base);
    let hi = list.partition_point(|&x| key(x) < base + len);
    &list[lo..hi]
}

struct Driver<'a> {
    graph: &'a BipartiteGraph,
    params: &'a DetectionParams,
    pool: Option<rayon::ThreadPool>,
    batch_records: usize,
}

impl Driver<'_> {
    fn product_phase(&self, state: &mut EngineState) -> Result<(), StoreError> {
        state.phase = Phase::Products;
        let mut index: Vec<Vec<u32>> = vec![Vec::new(); self.graph.num_users() as usize];
        for (i, c) in state.locksteps.iter().enumerate().filter(|(_, c)| c.alive) {
            for &u in &c.users {
                index[u as usize].push(i as u32);
            }
        }
        let params = self.params;
        let apply = |locksteps: &mut [Lockstep], batch: &Batch| {
            for_chunks(locksteps, self.pool.as_ref(), |base, part| {
                // per-lockstep edge buckets, reused across products
                let mut buckets: Vec<Vec<Recommendation>> = vec![Vec::new(); part.len()];
                let mut touched: Vec<usize> = Vec::new();
                for (product, adj) in batch.iter() {
                    for e in adj {
                        if !lambda_weight(e.weight, params.kappa, params.mode) {
                            continue;
                        }
                        let list = index.get(e.user as usize).map_or(&[][..], Vec::as_slice);
                        for &i in in_chunk(list, |i| i as usize, base, part.len()) {
                            let k = i as usize - base;
                            if buckets[k].is_empty() {
                                touched.push(k);
                            }
                            buckets[k].push(*e);
                        }
                    }
                    for &k in &touched {
                        update::offer_member_edges(&mut part[k], product, &buckets[k], params);
                        buckets[k].clear();
                    }
                    touched.clear();
                }
            });
        };
        self.scan(state, true, apply)
    }

    fn user_phase(&self, state: &mut EngineState) -> Result<(), StoreError> {
        state.phase = Phase::Users;
        let mut index: Vec<Vec<(u32, u32)>> = vec![Vec::new(); self.graph.num_products() as usize];
        for (i, c) in state.locksteps.iter().enumerate().filter(|(_, c)| c.alive) {
            for (k, slot) in c.products.iter().enumerate() {
                index[slot.product as usize].push((i as u32, k as u32));
            }
        }
        let params = self.params;
        let apply = |locksteps: &mut [Lockstep], batch: &Batch| {
            for_chunks(locksteps, self.pool.as_ref(), |base, part| {
                let mut buckets: Vec<Vec<(usize, Recommendation)>> = vec![Vec::new(); part.len()];
                let mut touched: Vec<usize> = Vec::new();
                for (user, adj) in batch.iter() {
                    for e in adj {
                        if !lambda_weight(e.weight, params.kappa, params.mode) {
                            continue;
                        }
                        let list = index.get(e.product as usize).map_or(&[][..], Vec::as_slice);
                        for &(i, slot) in in_chunk(list, |x| x.0 as usize, base, part.len()) {
                            let k = i as usize - base;
                            if buckets[k].is_empty() {
                                touched.push(k);
                            }
                            buckets[k].push((slot as usize, *e));
                        }
                    }
                    for &k in &touched {
                        update::offer_user_slots(&mut part[k], user, &buckets[k], params);
                        buckets[k].clear();
                    }
                    touched.clear();
                }
            });
        };
        self.scan(state, false, apply)
    }

    fn scan<F>(&self, state: &mut EngineState, products: bool, apply: F) -> Result<(), StoreError>
    where
        F: Fn(&mut [Lockstep], &Batch),
    {
        let mut batch = Batch::default();
        let locksteps = &mut state.locksteps;
        let visit = |v: VertexId, adj: &[Recommendation]| {
            batch.push(v, adj);
            if batch.edges.len() >= self.batch_records {
                apply(locksteps, &batch);
                batch.clear();
            }
            Ok::<_, Infallible>(())
        };
        if products {
            self.graph.scan_products(visit).map_err(store_err)?;
        } else {
            self.graph.scan_users(visit).map_err(store_err)?;
        }
        if !batch.spans.is_empty() {
            apply(&mut state.locksteps, &batch);
        }
        Ok(())
    }
}

/// A finished run: the serializable report plus in-memory extras.
#[derive(Debug)]
pub struct Detection {
    pub report: DetectionReport,
    /// Final engine state, ordinal ids.
    pub state: EngineState,
    /// Indices into `state.locksteps` of the reported locksteps.
    pub reported: Vec<usize>,
    pub wall_clock: Duration,
}

/// Runs detection until every seed is dead or the iteration cap is hit.
pub fn run(
    graph: &BipartiteGraph,
    params: &DetectionParams,
    opts: &EngineOptions,
) -> Result<Detection, EngineError> {
    params.validate()?;
    let started = Instant::now();
    let threads = opts.threads.max(1);
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| EngineError::ThreadPool(e.to_string()))?,
        )
    } else {
        None
    };
    let io_start = graph.io_counters();

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let seeds = seed_init(graph, params, &mut rng)?;
    let mut state = EngineState::new(seeds, rng);

    let driver = Driver {
        graph,
        params,
        pool,
        batch_records: (graph.manifest().memory_budget as usize / 2 / crate::store::RECORD_LEN).max(1024),
    };
    let mut trace = Vec::new();
    while state.live_seed_count > 0 && state.iteration < opts.max_iterations {
        let io_before = graph.io_counters();
        state.begin_iteration();
        let t0 = Instant::now();
        driver.product_phase(&mut state)?;
        let t1 = Instant::now();
        driver.user_phase(&mut state)?;
        let t2 = Instant::now();
        state.end_iteration_in(params, driver.pool.as_ref());
        log::debug!(
            "phases: products {:.3}s, users {:.3}s, end {:.3}s",
            (t1 - t0).as_secs_f64(),
            (t2 - t1).as_secs_f64(),
            t2.elapsed().as_secs_f64()
        );
        trace.push(IterationTrace {
            iteration: state.iteration,
            live_seeds: state.live_seed_count,
            objective: state.objective(),
            io: graph.io_counters().since(&io_before),
        });
        log::debug!(
            "iteration {}: {} live seeds, objective {}",
            state.iteration,
            state.live_seed_count,
            state.objective()
        );
    }
    let converged = state.live_seed_count == 0;
    if !converged {
        log::warn!(
            "iteration cap {} reached with {} live seeds",
            opts.max_iterations,
            state.live_seed_count
        );
    }

    let (reported, locksteps) = build_report_entries(graph, &state, params)?;
    let report = DetectionReport {
        meta: ReportMeta {
            params: params.clone(),
            dataset_id: graph.dataset_id().to_owned(),
            threads,
            max_iterations: opts.max_iterations,
            iterations: state.iteration,
            converged,
            seeds_total: state.locksteps.len(),
            seeds_dead: state.locksteps.len() - state.live_seed_count,
            shards: graph.num_shards(),
            blocks: graph.manifest().blocks,
            io: graph.io_counters().since(&io_start),
            trace,
            config: Default::default(),
        },
        locksteps,
    };
    Ok(Detection {
        report,
        state,
        reported,
        wall_clock: started.elapsed(),
    })
}

/// Locksteps meeting the size thresholds, with exact duplicates collapsed
/// onto the lowest seed.
fn build_report_entries(
    graph: &BipartiteGraph,
    state: &EngineState,
    params: &DetectionParams,
) -> Result<(Vec<usize>, Vec<ReportedLockstep>), StoreError> {
    let mut seen: BTreeSet<(Vec<VertexId>, Vec<VertexId>)> = BTreeSet::new();
    let mut reported = Vec::new();
    for (i, c) in state.locksteps.iter().enumerate() {
        if c.users.len() < params.n || c.products.len() < params.m {
            continue;
        }
        let mut products = c.product_ids();
        products.sort_unstable();
        if seen.insert((c.users.iter().copied().collect(), products)) {
            reported.push(i);
        }
    }
    if reported.is_empty() {
        return Ok((reported, Vec::new()));
    }
    let user_ids = graph.user_ids()?;
    let product_ids = graph.product_ids()?;
    let entries = reported
        .iter()
        .map(|&i| {
            let c = &state.locksteps[i];
            ReportedLockstep {
                seed: c.id,
                users: c.users.iter().map(|&u| user_ids[u as usize].clone()).collect(),
                products: c
                    .products
                    .iter()
                    .map(|s| product_ids[s.product as usize].clone())
                    .collect(),
                centers: c
                    .products
                    .iter()
                    .map(|s| (product_ids[s.product as usize].clone(), s.center))
                    .collect(),
                mode: params.mode,
                score: c.score(),
                iteration_converged: (!c.alive).then_some(c.last_change.max(1)),
            }
        })
        .collect();
    Ok((reported, entries))
}
