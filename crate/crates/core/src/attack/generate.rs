use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::AttackError;
use crate::store::RawEdges;
use crate::Recommendation;

/// Random bipartite graph: `n_edges` distinct (user, product) pairs drawn
/// uniformly, timestamps uniform in `lo..=hi`, weights uniform in 1..=5.
/// Users are named `u{i}` and products `p{j}`; every vertex is listed in the
/// dictionaries even if it ended up isolated.
pub fn generate_bipartite(
    n_users: u32,
    n_products: u32,
    n_edges: u64,
    timestamp_range: (u64, u64),
    rng_seed: u64,
) -> Result<RawEdges, AttackError> {
    let (lo, hi) = timestamp_range;
    if lo > hi {
        return Err(AttackError::Config(format!("empty timestamp range {lo}..={hi}")));
    }
    let pairs = n_users as u64 * n_products as u64;
    if n_edges > pairs {
        return Err(AttackError::Config(format!(
            "{n_edges} edges do not fit in {n_users} x {n_products} distinct pairs"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let cells: Vec<u64> = if n_edges.saturating_mul(2) <= pairs {
        let mut seen = HashSet::with_capacity(n_edges as usize);
        let mut cells = Vec::with_capacity(n_edges as usize);
        while (cells.len() as u64) < n_edges {
            let cell = rng.gen_range(0..pairs);
            if seen.insert(cell) {
                cells.push(cell);
            }
        }
        cells
    } else {
        let total =
            usize::try_from(pairs).map_err(|_| AttackError::Config("graph too dense to sample".into()))?;
        index::sample(&mut rng, total, n_edges as usize)
            .into_iter()
            .map(|c| c as u64)
            .collect()
    };
    let mut edges: Vec<Recommendation> = cells
        .into_iter()
        .map(|cell| {
            let user = (cell / n_products as u64) as u32;
            let product = (cell % n_products as u64) as u32;
            Recommendation::new(user, product, rng.gen_range(lo..=hi), rng.gen_range(1..=5))
        })
        .collect();
    edges.sort_unstable();
    Ok(RawEdges {
        user_ids: (0..n_users).map(|i| format!("u{i}")).collect(),
        product_ids: (0..n_products).map(|j| format!("p{j}")).collect(),
        edges,
    })
}
