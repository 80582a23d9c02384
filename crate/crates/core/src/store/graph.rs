use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::format::{
    decode_records, encode_record, Manifest, ShardDescriptor, ShardHeader, FORMAT_VERSION, HEADER_LEN,
    RECORD_LEN,
};
use super::{FormatError, RawEdges, StoreError};
use crate::{Recommendation, VertexId};

pub const DEFAULT_BLOCK_SIZE: usize = 1 << 20;
const MANIFEST_FILE: &str = "manifest.json";

/// Block size from `ORFEL_BLOCK_SIZE`, falling back to 1 MiB.
pub fn block_size_from_env() -> usize {
    std::env::var("ORFEL_BLOCK_SIZE")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&b| b > 0)
        .unwrap_or(DEFAULT_BLOCK_SIZE)
}

#[derive(Debug, Clone)]
pub struct PreprocessOptions {
    /// Upper bound on a shard file's size in bytes.
    pub memory_budget: u64,
    pub block_size: usize,
    /// Recorded verbatim in the manifest; lets callers short-circuit re-runs.
    pub source_hash: Option<String>,
}

impl PreprocessOptions {
    pub fn new(memory_budget: u64) -> Self {
        Self {
            memory_budget,
            block_size: block_size_from_env(),
            source_hash: None,
        }
    }
}

/// Cumulative storage-layer counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoCounters {
    /// Non-sequential repositionings: one per shard or mirror file opened.
    pub seeks: u64,
    /// Reads of at most one block each.
    pub block_reads: u64,
    pub bytes_read: u64,
}

impl IoCounters {
    pub fn since(&self, earlier: &IoCounters) -> IoCounters {
        IoCounters {
            seeks: self.seeks - earlier.seeks,
            block_reads: self.block_reads - earlier.block_reads,
            bytes_read: self.bytes_read - earlier.bytes_read,
        }
    }
}

#[derive(Debug, Default)]
struct AtomicCounters {
    seeks: AtomicU64,
    block_reads: AtomicU64,
    bytes_read: AtomicU64,
}

/// Receives each vertex with its complete adjacency, in ascending vertex order.
pub trait ScanVisitor {
    type Error;

    fn visit(&mut self, vertex: VertexId, edges: &[Recommendation]) -> Result<(), Self::Error>;
}

impl<E, F> ScanVisitor for F
where
    F: FnMut(VertexId, &[Recommendation]) -> Result<(), E>,
{
    type Error = E;

    fn visit(&mut self, vertex: VertexId, edges: &[Recommendation]) -> Result<(), E> {
        self(vertex, edges)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScanError<E> {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("scan aborted by visitor")]
    Visitor(E),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeSummary {
    /// Vertices with at least one edge.
    pub active: u64,
    pub min: u64,
    pub max: u64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_users: u64,
    pub num_products: u64,
    pub num_edges: u64,
    pub shards: usize,
    pub user_degree: DegreeSummary,
    pub product_degree: DegreeSummary,
}

/// A preprocessed, immutable graph directory.
#[derive(Debug)]
pub struct BipartiteGraph {
    dir: PathBuf,
    manifest: Manifest,
    counters: AtomicCounters,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    fs::write(path, bytes).map_err(|e| StoreError::io(path, e))
}

fn write_dictionary(path: &Path, ids: &[String]) -> Result<(), StoreError> {
    let mut text = String::with_capacity(ids.iter().map(|s| s.len() + 1).sum());
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

/// Cuts the product-sorted records into shards: at most `capacity` records
/// each, boundaries only between products, balanced towards
/// ceil(records / capacity) shards.
fn shard_bounds(sorted: &[Recommendation], capacity: usize) -> Result<Vec<usize>, StoreError> {
    if sorted.is_empty() {
        return Ok(Vec::new());
    }
    let target_count = sorted.len().div_ceil(capacity);
    let target = sorted.len().div_ceil(target_count);
    let mut ends = Vec::with_capacity(target_count);
    let mut start = 0;
    let mut i = 0;
    while i < sorted.len() {
        let product = sorted[i].product;
        let mut j = i;
        while j < sorted.len() && sorted[j].product == product {
            j += 1;
        }
        if j - i > capacity {
            return Err(StoreError::Config(format!(
                "adjacency of product {product} ({} records) exceeds the memory budget ({capacity} records)",
                j - i
            )));
        }
        if j - start > capacity {
            ends.push(i);
            start = i;
        }
        if j - start >= target {
            ends.push(j);
            start = j;
        }
        i = j;
    }
    if start < sorted.len() {
        ends.push(sorted.len());
    }
    Ok(ends)
}

fn write_part(
    dir: &Path,
    name: String,
    part: &[Recommendation],
    key: fn(&Recommendation) -> VertexId,
    hasher: &mut Sha256,
) -> Result<ShardDescriptor, StoreError> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + part.len() * RECORD_LEN);
    bytes.extend_from_slice(&ShardHeader::new(part.len() as u64).encode());
    for rec in part {
        encode_record(rec, &mut bytes);
    }
    hasher.update(&bytes);
    write_file(&dir.join(&name), &bytes)?;
    Ok(ShardDescriptor {
        file: name,
        first_vertex: part.iter().map(key).min().unwrap_or(0),
        last_vertex: part.iter().map(key).max().unwrap_or(0),
        offset: HEADER_LEN as u64,
        records: part.len() as u64,
    })
}

/// Sorts the edges both ways and writes shards, mirror, dictionaries and
/// manifest into `dir`. Output bytes depend only on the edges and options.
pub fn preprocess(
    edges: &RawEdges,
    dir: &Path,
    opts: &PreprocessOptions,
) -> Result<BipartiteGraph, StoreError> {
    let block = opts.block_size as u64;
    if opts.block_size == 0 {
        return Err(StoreError::Config("block size must be positive".into()));
    }
    if opts.memory_budget < 2 * block {
        return Err(StoreError::Config(format!(
            "memory budget {} is below twice the block size {}",
            opts.memory_budget, block
        )));
    }
    if opts.memory_budget < (HEADER_LEN + RECORD_LEN) as u64 {
        return Err(StoreError::Config(format!(
            "memory budget {} cannot hold a shard header and one record",
            opts.memory_budget
        )));
    }
    for e in &edges.edges {
        if e.user as usize >= edges.user_ids.len() || e.product as usize >= edges.product_ids.len() {
            return Err(StoreError::Config(format!(
                "edge {e:?} references an ordinal outside the dictionaries"
            )));
        }
        if e.weight == 0 {
            return Err(StoreError::Config(format!("edge {e:?} has reserved weight 0")));
        }
    }
    fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;

    let capacity = ((opts.memory_budget as usize - HEADER_LEN) / RECORD_LEN).max(1);

    let mut by_product = edges.edges.clone();
    by_product.sort_unstable_by_key(|e| (e.product, e.user, e.timestamp, e.weight));
    let mut by_user = edges.edges.clone();
    by_user.sort_unstable_by_key(|e| (e.user, e.product, e.timestamp, e.weight));

    let ends = shard_bounds(&by_product, capacity)?;

    let mut hasher = Sha256::new();
    let mut shards = Vec::with_capacity(ends.len());
    let mut mirror = Vec::with_capacity(ends.len());
    let mut blocks = 0u64;
    let mut start = 0;
    for (k, &end) in ends.iter().enumerate() {
        let shard = write_part(
            dir,
            format!("shard-{k:04}.bin"),
            &by_product[start..end],
            |r| r.product,
            &mut hasher,
        )?;
        blocks += (HEADER_LEN as u64 + shard.records * RECORD_LEN as u64).div_ceil(block);
        shards.push(shard);
        mirror.push(write_part(
            dir,
            format!("mirror-{k:04}.bin"),
            &by_user[start..end],
            |r| r.user,
            &mut hasher,
        )?);
        start = end;
    }

    for ids in [&edges.user_ids, &edges.product_ids] {
        for id in ids.iter() {
            hasher.update(id.as_bytes());
            hasher.update(b"\n");
        }
        hasher.update(b"\0");
    }
    write_dictionary(&dir.join("users.dict"), &edges.user_ids)?;
    write_dictionary(&dir.join("products.dict"), &edges.product_ids)?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        num_users: edges.user_ids.len() as u64,
        num_products: edges.product_ids.len() as u64,
        num_edges: edges.edges.len() as u64,
        record_len: RECORD_LEN as u64,
        memory_budget: opts.memory_budget,
        block_size: block,
        dataset_bytes: (edges.edges.len() * RECORD_LEN) as u64,
        blocks,
        dataset_id: hex(&hasher.finalize()),
        source_hash: opts.source_hash.clone(),
        duplicates_dropped: 0,
        user_dictionary: "users.dict".into(),
        product_dictionary: "products.dict".into(),
        shards,
        mirror,
    };
    write_file(&dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(BipartiteGraph {
        dir: dir.to_owned(),
        manifest,
        counters: AtomicCounters::default(),
    })
}

/// Per-vertex grouping state carried across block and file boundaries.
struct Grouper {
    key_is_product: bool,
    current: Option<VertexId>,
    adjacency: Vec<Recommendation>,
    last_key: Option<VertexId>,
}

impl Grouper {
    fn key(&self, r: &Recommendation) -> VertexId {
        if self.key_is_product {
            r.product
        } else {
            r.user
        }
    }

    fn push<V: ScanVisitor>(
        &mut self,
        rec: Recommendation,
        visitor: &mut V,
    ) -> Result<(), ScanError<V::Error>> {
        let key = self.key(&rec);
        if let Some(last) = self.last_key {
            if key < last {
                return Err(ScanError::Store(StoreError::Format(FormatError::Manifest(
                    format!("records out of order: vertex {key} after {last}"),
                ))));
            }
        }
        self.last_key = Some(key);
        if self.current != Some(key) {
            self.flush(visitor)?;
            self.current = Some(key);
        }
        self.adjacency.push(rec);
        Ok(())
    }

    fn flush<V: ScanVisitor>(&mut self, visitor: &mut V) -> Result<(), ScanError<V::Error>> {
        if let Some(vertex) = self.current.take() {
            visitor
                .visit(vertex, &self.adjacency)
                .map_err(ScanError::Visitor)?;
            self.adjacency.clear();
        }
        Ok(())
    }
}

impl BipartiteGraph {
    /// Opens a directory written by [`preprocess`].
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
        let manifest = Manifest::from_json(&text)?;
        Ok(Self {
            dir: dir.to_owned(),
            manifest,
            counters: AtomicCounters::default(),
        })
    }

    /// Reads only the manifest, if one exists and parses.
    pub fn peek_manifest(dir: &Path) -> Option<Manifest> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
        Manifest::from_json(&text).ok()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn num_users(&self) -> u64 {
        self.manifest.num_users
    }

    pub fn num_products(&self) -> u64 {
        self.manifest.num_products
    }

    pub fn num_edges(&self) -> u64 {
        self.manifest.num_edges
    }

    pub fn num_shards(&self) -> usize {
        self.manifest.shards.len()
    }

    pub fn dataset_id(&self) -> &str {
        &self.manifest.dataset_id
    }

    pub fn io_counters(&self) -> IoCounters {
        IoCounters {
            seeks: self.counters.seeks.load(Ordering::Relaxed),
            block_reads: self.counters.block_reads.load(Ordering::Relaxed),
            bytes_read: self.counters.bytes_read.load(Ordering::Relaxed),
        }
    }

    fn read_dictionary(&self, name: &str, expected: u64) -> Result<Vec<String>, StoreError> {
        let path = self.dir.join(name);
        let file = File::open(&path).map_err(|e| StoreError::io(&path, e))?;
        let ids = BufReader::new(file)
            .lines()
            .collect::<io::Result<Vec<_>>>()
            .map_err(|e| StoreError::io(&path, e))?;
        if ids.len() as u64 != expected {
            return Err(FormatError::Manifest(format!(
                "{name} holds {} ids, manifest says {expected}",
                ids.len()
            ))
            .into());
        }
        Ok(ids)
    }

    /// Original user ids, indexed by ordinal.
    pub fn user_ids(&self) -> Result<Vec<String>, StoreError> {
        self.read_dictionary(&self.manifest.user_dictionary, self.manifest.num_users)
    }

    /// Original product ids, indexed by ordinal.
    pub fn product_ids(&self) -> Result<Vec<String>, StoreError> {
        self.read_dictionary(&self.manifest.product_dictionary, self.manifest.num_products)
    }

    /// Visits every product with at least one edge, ascending.
    pub fn scan_products<V: ScanVisitor>(&self, visitor: V) -> Result<(), ScanError<V::Error>> {
        self.scan(&self.manifest.shards, true, visitor)
    }

    /// Visits every user with at least one edge, ascending, via the mirror.
    pub fn scan_users<V: ScanVisitor>(&self, visitor: V) -> Result<(), ScanError<V::Error>> {
        self.scan(&self.manifest.mirror, false, visitor)
    }

    fn scan<V: ScanVisitor>(
        &self,
        parts: &[ShardDescriptor],
        key_is_product: bool,
        mut visitor: V,
    ) -> Result<(), ScanError<V::Error>> {
        let block = self.manifest.block_size as usize;
        let mut buf = vec![0u8; block];
        let mut pending: Vec<u8> = Vec::with_capacity(block + RECORD_LEN);
        let mut decoded = Vec::with_capacity(block / RECORD_LEN + 1);
        let mut grouper = Grouper {
            key_is_product,
            current: None,
            adjacency: Vec::new(),
            last_key: None,
        };

        for part in parts {
            let path = self.dir.join(&part.file);
            let mut file = File::open(&path).map_err(|e| StoreError::io(&path, e))?;
            self.counters.seeks.fetch_add(1, Ordering::Relaxed);
            pending.clear();
            let mut header: Option<ShardHeader> = None;
            let mut seen = 0u64;
            loop {
                let filled = read_block(&mut file, &mut buf).map_err(|e| StoreError::io(&path, e))?;
                if filled == 0 {
                    break;
                }
                self.counters.block_reads.fetch_add(1, Ordering::Relaxed);
                self.counters
                    .bytes_read
                    .fetch_add(filled as u64, Ordering::Relaxed);
                pending.extend_from_slice(&buf[..filled]);
                if header.is_none() {
                    if pending.len() < HEADER_LEN {
                        continue;
                    }
                    let h = ShardHeader::decode(&pending).map_err(StoreError::from)?;
                    if h.records != part.records {
                        return Err(StoreError::from(FormatError::CountMismatch {
                            declared: part.records,
                            actual: h.records,
                        })
                        .into());
                    }
                    header = Some(h);
                    pending.drain(..HEADER_LEN);
                }
                let whole = pending.len() / RECORD_LEN * RECORD_LEN;
                decoded.clear();
                decode_records(&pending[..whole], seen, &mut decoded).map_err(StoreError::from)?;
                seen += decoded.len() as u64;
                pending.drain(..whole);
                for rec in decoded.drain(..) {
                    grouper.push(rec, &mut visitor)?;
                }
            }
            let declared = header.map(|h| h.records).unwrap_or(0);
            if header.is_none() || !pending.is_empty() || seen != declared {
                return Err(StoreError::from(FormatError::CountMismatch {
                    declared,
                    actual: seen,
                })
                .into());
            }
        }
        grouper.flush(&mut visitor)
    }

    /// Exact counts plus degree summaries, from one scan of each ordering.
    pub fn stats(&self) -> Result<GraphStats, StoreError> {
        let summarize = |degrees: Vec<u64>| {
            let active = degrees.len() as u64;
            DegreeSummary {
                active,
                min: degrees.iter().copied().min().unwrap_or(0),
                max: degrees.iter().copied().max().unwrap_or(0),
                mean: if active == 0 {
                    0.0
                } else {
                    degrees.iter().sum::<u64>() as f64 / active as f64
                },
            }
        };
        let mut product_degrees = Vec::new();
        self.scan_products(|_, adj: &[Recommendation]| {
            product_degrees.push(adj.len() as u64);
            Ok::<_, std::convert::Infallible>(())
        })
        .map_err(unwrap_store)?;
        let mut user_degrees = Vec::new();
        self.scan_users(|_, adj: &[Recommendation]| {
            user_degrees.push(adj.len() as u64);
            Ok::<_, std::convert::Infallible>(())
        })
        .map_err(unwrap_store)?;
        Ok(GraphStats {
            num_users: self.manifest.num_users,
            num_products: self.manifest.num_products,
            num_edges: self.manifest.num_edges,
            shards: self.manifest.shards.len(),
            user_degree: summarize(user_degrees),
            product_degree: summarize(product_degrees),
        })
    }

    /// Writes the manifest again (used after updating `source_hash`).
    pub fn rewrite_manifest(&mut self, source_hash: Option<String>) -> Result<(), StoreError> {
        self.manifest.source_hash = source_hash;
        let path = self.dir.join(MANIFEST_FILE);
        let mut file = File::create(&path).map_err(|e| StoreError::io(&path, e))?;
        file.write_all(self.manifest.to_json().as_bytes())
            .map_err(|e| StoreError::io(&path, e))
    }
}

fn unwrap_store(err: ScanError<std::convert::Infallible>) -> StoreError {
    match err {
        ScanError::Store(e) => e,
        ScanError::Visitor(never) => match never {},
    }
}

/// Fills `buf` as far as the file allows; returns bytes read.
fn read_block(file: &mut File, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match file.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{ingest, Schema};

    fn tiny() -> RawEdges {
        ingest(
            "u1,p1,100,5\nu2,p1,110,5\nu1,p2,100,1\n".as_bytes(),
            &Schema::default(),
        )
        .unwrap()
        .edges
    }

    fn opts(budget: u64, block: usize) -> PreprocessOptions {
        PreprocessOptions {
            memory_budget: budget,
            block_size: block,
            source_hash: None,
        }
    }

    #[test]
    fn tiny_graph_is_one_shard_of_seventeen_byte_records() {
        let dir = tempfile::tempdir().unwrap();
        let g = preprocess(&tiny(), dir.path(), &opts(1 << 20, 4096)).unwrap();
        assert_eq!(g.num_shards(), 1);
        let bytes = fs::read(dir.path().join("shard-0000.bin")).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 17);
        let stats = g.stats().unwrap();
        assert_eq!((stats.num_users, stats.num_products, stats.num_edges), (2, 2, 3));
    }

    #[test]
    fn scans_deliver_whole_adjacencies() {
        let dir = tempfile::tempdir().unwrap();
        let g = preprocess(&tiny(), dir.path(), &opts(1 << 20, 4096)).unwrap();
        let mut products = Vec::new();
        g.scan_products(|v, adj: &[Recommendation]| {
            products.push((v, adj.len()));
            Ok::<_, ()>(())
        })
        .unwrap();
        assert_eq!(products, vec![(0, 2), (1, 1)]);
        let mut users = Vec::new();
        g.scan_users(|v, adj: &[Recommendation]| {
            users.push((v, adj.len()));
            Ok::<_, ()>(())
        })
        .unwrap();
        assert_eq!(users, vec![(0, 2), (1, 1)]);
    }

    #[test]
    fn empty_graph_scans_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let g = preprocess(&RawEdges::default(), dir.path(), &opts(1 << 20, 4096)).unwrap();
        let mut visits = 0;
        g.scan_products(|_, _: &[Recommendation]| {
            visits += 1;
            Ok::<_, ()>(())
        })
        .unwrap();
        assert_eq!(visits, 0);
        assert_eq!(g.num_shards(), 0);
    }

    #[test]
    fn visitor_failure_aborts_scan() {
        let dir = tempfile::tempdir().unwrap();
        let g = preprocess(&tiny(), dir.path(), &opts(1 << 20, 4096)).unwrap();
        let mut visits = 0;
        let err = g
            .scan_products(|_, _: &[Recommendation]| {
                visits += 1;
                Err("stop")
            })
            .unwrap_err();
        assert!(matches!(err, ScanError::Visitor("stop")));
        assert_eq!(visits, 1);
    }

    #[test]
    fn budget_must_cover_two_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let err = preprocess(&tiny(), dir.path(), &opts(4096, 4096)).unwrap_err();
        assert!(matches!(err, StoreError::Config(_)));
    }

    #[test]
    fn oversized_adjacency_is_a_config_error() {
        let mut edges = RawEdges {
            user_ids: (0..10).map(|i| format!("u{i}")).collect(),
            product_ids: vec!["p".into()],
            edges: Vec::new(),
        };
        for u in 0..10 {
            edges.edges.push(Recommendation::new(u, 0, 1, 1));
        }
        let dir = tempfile::tempdir().unwrap();
        // room for 5 records per shard
        let err = preprocess(&edges, dir.path(), &opts((HEADER_LEN + 5 * 17) as u64, 32)).unwrap_err();
        assert!(matches!(err, StoreError::Config(_)));
    }

    #[test]
    fn shard_bounds_respect_capacity_and_products() {
        let recs: Vec<_> = [3usize, 1, 4, 1, 5, 2]
            .iter()
            .enumerate()
            .flat_map(|(p, &deg)| (0..deg).map(move |u| Recommendation::new(u as u32, p as u32, 0, 1)))
            .collect();
        let ends = shard_bounds(&recs, 6).unwrap();
        assert_eq!(*ends.last().unwrap(), recs.len());
        let mut start = 0;
        for &end in &ends {
            assert!(end - start <= 6);
            assert!(end == recs.len() || recs[end - 1].product != recs[end].product);
            start = end;
        }
        // no 3-way split of [3,1,4,1,5,2] keeps every part <= 6
        assert_eq!(ends.len(), 4);
    }

    #[test]
    fn corrupt_shard_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let g = preprocess(&tiny(), dir.path(), &opts(1 << 20, 4096)).unwrap();
        let path = dir.path().join("shard-0000.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, bytes).unwrap();
        let err = g
            .scan_products(|_, _: &[Recommendation]| Ok::<_, ()>(()))
            .unwrap_err();
        assert!(matches!(err, ScanError::Store(StoreError::Format(_))));
    }
}
