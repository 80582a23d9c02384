#![allow(dead_code)]

use std::collections::BTreeSet;

use orfel::store::{preprocess, BipartiteGraph, PreprocessOptions, RawEdges};
use orfel::{Recommendation, VertexId};
use tempfile::TempDir;

pub fn store(edges: &RawEdges, budget: u64, block: usize) -> (TempDir, BipartiteGraph) {
    let dir = tempfile::tempdir().unwrap();
    let mut opts = PreprocessOptions::new(budget);
    opts.block_size = block;
    let graph = preprocess(edges, dir.path(), &opts).unwrap();
    (dir, graph)
}

pub fn store_default(edges: &RawEdges) -> (TempDir, BipartiteGraph) {
    store(edges, 64 << 20, 1 << 20)
}

/// Maps reported original ids back to ordinals.
pub fn ordinals(names: &[String], dictionary: &[String]) -> BTreeSet<VertexId> {
    names
        .iter()
        .map(|n| dictionary.iter().position(|d| d == n).unwrap() as VertexId)
        .collect()
}

pub fn block_edges(
    edges: &[Recommendation],
    users: &BTreeSet<VertexId>,
    products: &BTreeSet<VertexId>,
) -> Vec<Recommendation> {
    edges
        .iter()
        .filter(|e| users.contains(&e.user) && products.contains(&e.product))
        .copied()
        .collect()
}
