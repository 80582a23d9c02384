use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use orfel::attack::{
    evaluate_recall, generate_bipartite, inject_lockstep, AttackGroundTruth, AttackSpec, DEFAULT_COVERAGE,
};
use orfel::bench::{edge_sweep, linear_fit, seed_sweep, BenchConfig, BenchRow, CSV_HEADER};
use orfel::engine::{run, suggest_seeds, DetectionReport, EngineOptions, DEFAULT_MAX_ITERATIONS};
use orfel::store::{
    block_size_from_env, ingest, preprocess as build_store, write_edges, BipartiteGraph, PreprocessOptions,
    RawEdges, Schema,
};
use orfel::Mode;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{
    echo, BenchArgs, DetectArgs, EvalArgs, GenArgs, InjectArgs, InjectMode, Layer, PreprocessArgs, Suite,
};
use crate::error::{CliError, EXIT_NOT_CONVERGED, EXIT_OK};

pub const DEFAULT_MEMORY_BUDGET: u64 = 256 << 20;

pub struct Output {
    pub quiet: bool,
}

impl Output {
    /// Human-oriented line on stdout, suppressed by `--quiet`.
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    /// Machine-readable summary, always printed.
    fn summary(&self, value: serde_json::Value) {
        println!("{value}");
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

fn schema(separator: Option<char>, header: Option<bool>) -> Schema {
    Schema {
        separator: separator.unwrap_or(','),
        has_header: header.unwrap_or(false),
        ..Schema::default()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_edge_list(path: &Path, edges: &RawEdges, separator: char) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_edges(&mut out, edges, separator).map_err(|e| CliError::io(path, e))?;
    out.flush().map_err(|e| CliError::io(path, e))
}

fn load_edges(path: &Path, schema: &Schema) -> Result<RawEdges, CliError> {
    let bytes = read(path)?;
    let out = ingest(&bytes[..], schema)?;
    log_rejections(path, &out.report);
    Ok(out.edges)
}

fn log_rejections(path: &Path, report: &orfel::store::IngestReport) {
    if report.rejected > 0 {
        log::warn!("{}: {} lines rejected", path.display(), report.rejected);
        for r in &report.samples {
            log::warn!("  line {}: {}", r.line, r.reason);
        }
    }
    if report.duplicates > 0 {
        log::info!(
            "{}: {} duplicate lines dropped",
            path.display(),
            report.duplicates
        );
    }
}

pub fn gen(a: GenArgs, out: &Output) -> Result<u8, CliError> {
    let path = required(a.out.clone(), "out")?;
    let users = required(a.users, "users")?;
    let products = required(a.products, "products")?;
    let edges = required(a.edges, "edges")?;
    let range = (a.t_min.unwrap_or(0), a.t_max.unwrap_or(100_000_000));
    let seed = a.rng_seed.unwrap_or(0);
    let g = generate_bipartite(users, products, edges, range, seed)?;
    write_edge_list(&path, &g, ',')?;
    out.say(format!(
        "wrote {edges} edges over {users} users and {products} products to {}",
        path.display()
    ));
    out.summary(json!({
        "out": path,
        "users": users,
        "products": products,
        "edges": edges,
        "t_min": range.0,
        "t_max": range.1,
        "rng_seed": seed,
    }));
    Ok(EXIT_OK)
}

pub fn inject(mut a: InjectArgs, out: &Output) -> Result<u8, CliError> {
    if let Some(spec_path) = &a.spec {
        let text = read(spec_path)?;
        let spec: AttackSpec = serde_json::from_slice(&text).map_err(|e| CliError::format(spec_path, e))?;
        a = a.or(InjectArgs {
            users: Some(spec.n_users),
            products: Some(spec.n_products),
            dt: Some(spec.delta_t),
            mode: Some(match spec.mode {
                Mode::Defamation => InjectMode::Defamation,
                Mode::Promotion => InjectMode::Promotion,
            }),
            kappa: Some(spec.kappa),
            attacks: Some(spec.count),
            ..Default::default()
        });
    }
    let input = required(a.input.clone(), "input")?;
    let output = required(a.output.clone(), "output")?;
    let truth_path = required(a.truth.clone(), "truth")?;
    let n_users = required(a.users, "users")?;
    let n_products = required(a.products, "products")?;
    let dt = a.dt.unwrap_or(crate::config::DEFAULT_DT);
    let attacks = a.attacks.unwrap_or(1);
    let seed = a.rng_seed.unwrap_or(0);
    let schema = schema(a.separator, a.header);

    let plan: Vec<(Mode, usize)> = match a.mode.unwrap_or(InjectMode::Mixed) {
        InjectMode::Defamation => vec![(Mode::Defamation, attacks)],
        InjectMode::Promotion => vec![(Mode::Promotion, attacks)],
        InjectMode::Mixed => vec![
            (Mode::Defamation, attacks - attacks / 2),
            (Mode::Promotion, attacks / 2),
        ],
    };
    let mut graph = load_edges(&input, &schema)?;
    let host_edges = graph.edges.len();
    let mut truth = AttackGroundTruth::default();
    for (k, (mode, count)) in plan.into_iter().enumerate() {
        if count == 0 {
            continue;
        }
        let mut spec = AttackSpec::new(n_users, n_products, dt, mode).with_count(count);
        if let Some(kappa) = a.kappa {
            spec.kappa = kappa;
        }
        let t = inject_lockstep(&mut graph, &spec, seed.wrapping_add(k as u64))?;
        truth.attacks.extend(t.attacks);
    }
    write_edge_list(&output, &graph, schema.separator)?;
    write_file(&truth_path, truth.to_json().as_bytes())?;
    let added = graph.edges.len() - host_edges;
    out.say(format!(
        "injected {} attacks ({added} edges) into {}; ground truth in {}",
        truth.attacks.len(),
        output.display(),
        truth_path.display()
    ));
    out.summary(json!({
        "output": output,
        "truth": truth_path,
        "attacks": truth.attacks.len(),
        "edges_added": added,
        "edges_total": graph.edges.len(),
        "rng_seed": seed,
    }));
    Ok(EXIT_OK)
}

pub fn preprocess(a: PreprocessArgs, out: &Output) -> Result<u8, CliError> {
    let input = required(a.input.clone(), "input")?;
    let dir = required(a.out.clone(), "out")?;
    let budget = a.memory_budget.unwrap_or(DEFAULT_MEMORY_BUDGET);
    let block = a.block_size.unwrap_or_else(block_size_from_env);
    let schema = schema(a.separator, a.header);
    let started = Instant::now();

    let bytes = read(&input)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hasher.update(format!("\0{:?}|{}|{budget}|{block}", schema.separator, schema.has_header).as_bytes());
    let source_hash = hex::encode(hasher.finalize());

    let manifest_path = dir.join("manifest.json");
    if !a.force.unwrap_or(false) {
        if let Some(m) = BipartiteGraph::peek_manifest(&dir) {
            if m.source_hash.as_deref() == Some(source_hash.as_str()) && BipartiteGraph::open(&dir).is_ok() {
                out.say(format!("{} is up to date", dir.display()));
                out.summary(json!({
                    "manifest": manifest_path,
                    "up_to_date": true,
                    "users": m.num_users,
                    "products": m.num_products,
                    "edges": m.num_edges,
                    "shards": m.shards.len(),
                    "blocks": m.blocks,
                    "dataset_id": m.dataset_id,
                }));
                return Ok(EXIT_OK);
            }
        }
    }

    let ingested = ingest(&bytes[..], &schema)?;
    log_rejections(&input, &ingested.report);
    let mut opts = PreprocessOptions::new(budget);
    opts.block_size = block;
    opts.source_hash = Some(source_hash);
    let graph = build_store(&ingested.edges, &dir, &opts)?;
    let m = graph.manifest();
    let secs = started.elapsed().as_secs_f64();
    let io = graph.io_counters();
    out.say(format!(
        "{} users, {} products, {} edges in {} shards ({} blocks) in {secs:.3}s",
        m.num_users,
        m.num_products,
        m.num_edges,
        m.shards.len(),
        m.blocks
    ));
    log::info!(
        "preprocess took {secs:.3}s; bytes written {}",
        2 * m.dataset_bytes
    );
    out.summary(json!({
        "manifest": manifest_path,
        "up_to_date": false,
        "users": m.num_users,
        "products": m.num_products,
        "edges": m.num_edges,
        "shards": m.shards.len(),
        "blocks": m.blocks,
        "dataset_id": m.dataset_id,
        "lines": ingested.report.lines,
        "rejected": ingested.report.rejected,
        "duplicates_dropped": ingested.report.duplicates,
        "wall_clock_s": secs,
        "io": io,
        "bytes_written": 2 * m.dataset_bytes,
    }));
    Ok(EXIT_OK)
}

pub fn detect(mut a: DetectArgs, out: &Output) -> Result<u8, CliError> {
    let dir = required(a.graph.clone(), "graph")?;
    let report_path = required(a.out.clone(), "out")?;
    let graph = BipartiteGraph::open(&dir)?;
    let seeds = *a.seeds.get_or_insert_with(|| suggest_seeds(graph.num_edges()));
    let params = a.params(seeds);
    for w in params.warnings() {
        log::warn!("{w}");
    }
    let opts = EngineOptions {
        threads: a.threads.unwrap_or(1),
        max_iterations: a.max_iters.unwrap_or(DEFAULT_MAX_ITERATIONS),
    };
    let mut det = run(&graph, &params, &opts)?;
    det.report.meta.config = echo(&a);
    write_file(&report_path, det.report.to_json().as_bytes())?;
    let meta = &det.report.meta;
    let secs = det.wall_clock.as_secs_f64();
    out.say(format!(
        "{} locksteps in {} iterations ({}converged), {secs:.3}s; report in {}",
        det.report.locksteps.len(),
        meta.iterations,
        if meta.converged { "" } else { "not " },
        report_path.display()
    ));
    log::info!("detect took {secs:.3}s; {:?}", meta.io);
    out.summary(json!({
        "report": report_path,
        "locksteps": det.report.locksteps.len(),
        "iterations": meta.iterations,
        "converged": meta.converged,
        "seeds": seeds,
        "wall_clock_s": secs,
        "io": meta.io,
    }));
    if !meta.converged {
        log::warn!("iteration cap reached before all seeds died");
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e))
}

pub fn eval(a: EvalArgs, out: &Output) -> Result<u8, CliError> {
    let reports = required(a.reports.clone(), "report")?;
    let truth_path = required(a.truth.clone(), "truth")?;
    let coverage = a.coverage.unwrap_or(DEFAULT_COVERAGE);
    let truth: AttackGroundTruth = load_json(&truth_path)?;
    let mut locksteps = Vec::new();
    for path in &reports {
        let report: DetectionReport = load_json(path)?;
        locksteps.extend(report.locksteps);
    }
    let summary = evaluate_recall(&locksteps, &truth, coverage)?;
    out.say(format!(
        "{:>6}  {:<10}  {:<6}  {:>5}  {:>8}",
        "attack", "mode", "caught", "users", "products"
    ));
    for (m, attack) in summary.per_attack.iter().zip(&truth.attacks) {
        out.say(format!(
            "{:>6}  {:<10}  {:<6}  {:>5}  {:>8}",
            m.attack,
            m.mode.as_str(),
            if m.caught { "yes" } else { "no" },
            format!("{}/{}", m.users_matched, attack.users.len()),
            format!("{}/{}", m.products_matched, attack.products.len()),
        ));
    }
    out.say(format!(
        "recall {}/{} = {:.3}",
        summary.caught, summary.total, summary.recall
    ));
    out.summary(serde_json::to_value(&summary).expect("summary serializes"));
    Ok(EXIT_OK)
}

pub fn bench(a: BenchArgs, out: &Output) -> Result<u8, CliError> {
    let csv_path = a.out.clone().unwrap_or_else(|| PathBuf::from("bench.csv"));
    let suite = a.suite.unwrap_or(Suite::All);
    let mut cfg = BenchConfig::new(a.params());
    cfg.threads = a.threads.unwrap_or(1);
    cfg.repetitions = a.repetitions.unwrap_or(3);
    cfg.rng_seed = a.rng_seed.unwrap_or(0);
    if let Some(budget) = a.memory_budget {
        cfg.memory_budget = budget;
    }
    if let Some(block) = a.block_size {
        cfg.block_size = block;
    }
    let _tmp;
    let work = match &a.workdir {
        Some(dir) => dir.clone(),
        None => {
            let t = tempfile::tempdir().map_err(|e| CliError::Io(format!("temporary directory: {e}")))?;
            let p = t.path().to_path_buf();
            _tmp = t;
            p
        }
    };

    let mut rows: Vec<BenchRow> = Vec::new();
    let mut fits = serde_json::Map::new();
    if matches!(suite, Suite::Edges | Suite::All) {
        let counts = a
            .edge_counts
            .clone()
            .unwrap_or_else(|| vec![1_000_000, 2_000_000, 4_000_000, 8_000_000]);
        let part = edge_sweep(&work, &counts, a.seeds.unwrap_or(100), &cfg)?;
        let xs: Vec<f64> = part.iter().map(|r| r.edges as f64).collect();
        let ys: Vec<f64> = part.iter().map(|r| r.wall_clock_s).collect();
        fits.insert("edges".into(), json!(linear_fit(&xs, &ys)));
        rows.extend(part);
    }
    if matches!(suite, Suite::Seeds | Suite::All) {
        let counts = a
            .seed_counts
            .clone()
            .unwrap_or_else(|| vec![100, 500, 1000, 5000]);
        let part = seed_sweep(&work, a.graph_edges.unwrap_or(1_000_000), &counts, &cfg)?;
        let xs: Vec<f64> = part.iter().map(|r| r.seeds as f64).collect();
        let ys: Vec<f64> = part.iter().map(|r| r.wall_clock_s).collect();
        fits.insert("seeds".into(), json!(linear_fit(&xs, &ys)));
        if let (Some(first), Some(last)) = (part.first(), part.last()) {
            fits.insert(
                "seed_runtime_ratio".into(),
                json!(last.wall_clock_s / first.wall_clock_s),
            );
            fits.insert("seed_ratio".into(), json!(last.seeds as f64 / first.seeds as f64));
        }
        rows.extend(part);
    }

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    write_file(&csv_path, csv.as_bytes())?;
    let io_ok = rows.iter().all(|r| {
        let p = r.shards as u64;
        r.max_seeks <= p * p.max(2) && r.max_block_reads <= 2 * r.blocks
    });
    out.say(csv.trim_end());
    out.summary(json!({
        "csv": csv_path,
        "rows": rows.len(),
        "fits": fits,
        "io_within_bounds": io_ok,
    }));
    Ok(EXIT_OK)
}
