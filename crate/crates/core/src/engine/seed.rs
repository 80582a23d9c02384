use std::collections::BTreeMap;
use std::convert::Infallible;

use rand::seq::index::sample;
use rand::Rng;

use crate::lockstep::{lambda_weight, Credit, DetectionParams, Lockstep, ProductSlot};
use crate::store::{BipartiteGraph, ScanError, StoreError};
use crate::{Recommendation, VertexId};

/// Seed count heuristic: `round(1000 * log10(edges))`, at least 1.
pub fn suggest_seeds(num_edges: u64) -> usize {
    if num_edges <= 1 {
        return 1;
    }
    ((1000.0 * (num_edges as f64).log10()).round() as usize).max(1)
}

pub(crate) fn store_err(e: ScanError<Infallible>) -> StoreError {
    match e {
        ScanError::Store(e) => e,
        ScanError::Visitor(never) => match never {},
    }
}

/// Builds `params.n_seeds` single-product locksteps.
///
/// Seed products are drawn uniformly from products with at least one edge
/// (without replacement unless there are fewer such products than seeds).
/// Each seed then samples up to `initial_users_per_seed` distinct users whose
/// edge on that product passes the weight constraint. Seeds whose product has
/// no passing edge start dead and empty.
pub fn seed_init<R: Rng>(
    graph: &BipartiteGraph,
    params: &DetectionParams,
    rng: &mut R,
) -> Result<Vec<Lockstep>, StoreError> {
    let mut active: Vec<VertexId> = Vec::new();
    graph
        .scan_products(|p, _: &[Recommendation]| {
            active.push(p);
            Ok::<_, Infallible>(())
        })
        .map_err(store_err)?;

    let mut seeds: Vec<Lockstep> = (0..params.n_seeds).map(Lockstep::new).collect();
    if active.is_empty() {
        for s in &mut seeds {
            s.alive = false;
        }
        return Ok(seeds);
    }

    let chosen: Vec<VertexId> = if params.n_seeds <= active.len() {
        sample(rng, active.len(), params.n_seeds)
            .into_iter()
            .map(|i| active[i])
            .collect()
    } else {
        (0..params.n_seeds)
            .map(|_| active[rng.gen_range(0..active.len())])
            .collect()
    };
    let mut by_product: BTreeMap<VertexId, Vec<usize>> = BTreeMap::new();
    for (seed, &p) in chosen.iter().enumerate() {
        by_product.entry(p).or_default().push(seed);
    }

    graph
        .scan_products(|p, adj: &[Recommendation]| {
            let Some(owners) = by_product.get(&p) else {
                return Ok::<_, Infallible>(());
            };
            // adjacency is sorted by (user, timestamp): keep each user's earliest passing edge
            let mut eligible: Vec<&Recommendation> = Vec::new();
            for e in adj {
                if lambda_weight(e.weight, params.kappa, params.mode)
                    && eligible.last().is_none_or(|l| l.user != e.user)
                {
                    eligible.push(e);
                }
            }
            for &seed in owners {
                let take = params.initial_users_per_seed.min(eligible.len());
                let picks = sample(rng, eligible.len(), take);
                let c = &mut seeds[seed];
                let credits: BTreeMap<VertexId, Credit> = picks
                    .into_iter()
                    .map(|i| {
                        let e = eligible[i];
                        (
                            e.user,
                            Credit {
                                timestamp: e.timestamp,
                                weight: e.weight,
                            },
                        )
                    })
                    .collect();
                c.users = credits.keys().copied().collect();
                if credits.is_empty() {
                    c.alive = false;
                } else {
                    c.products.push(ProductSlot::new(p, credits));
                }
            }
            Ok(())
        })
        .map_err(store_err)?;
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_suggestions() {
        assert_eq!(suggest_seeds(10), 1000);
        assert_eq!(suggest_seeds(100_000_000), 8000);
        // 1000 * log10(568_454) = 5754.7
        assert_eq!(suggest_seeds(568_454), 5755);
        // 1000 * log10(7_911_684) = 6898.3
        assert_eq!(suggest_seeds(7_911_684), 6898);
        assert_eq!(suggest_seeds(0), 1);
    }
}
