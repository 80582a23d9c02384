use std::collections::{BTreeMap, BTreeSet};

use super::mean_timestamp;
use crate::VertexId;

/// A recommendation credited to a lockstep product, keyed by user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Credit {
    pub timestamp: u64,
    pub weight: u8,
}

/// One product of a lockstep with its time center and credited edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductSlot {
    pub product: VertexId,
    /// Mean timestamp of `credits`.
    pub center: f64,
    pub credits: BTreeMap<VertexId, Credit>,
}

impl ProductSlot {
    pub fn new(product: VertexId, credits: BTreeMap<VertexId, Credit>) -> Self {
        let mut slot = Self {
            product,
            center: 0.0,
            credits,
        };
        slot.recompute_center();
        slot
    }

    pub fn recompute_center(&mut self) {
        self.center = mean_timestamp(self.credits.values().map(|c| c.timestamp)).unwrap_or(0.0);
    }
}

/// State of one seed: the users, the products in insertion order and the
/// edges currently credited between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Lockstep {
    /// Seed ordinal.
    pub id: usize,
    pub users: BTreeSet<VertexId>,
    pub products: Vec<ProductSlot>,
    pub alive: bool,
    /// Last iteration in which the (users, products) pair changed.
    pub last_change: usize,
    /// Objective contribution as of the last completed iteration.
    pub(crate) score: u64,
}

impl Lockstep {
    pub fn new(id: usize) -> Self {
        Self {
            id,
            users: BTreeSet::new(),
            products: Vec::new(),
            alive: true,
            last_change: 0,
            score: 0,
        }
    }

    pub fn product_ids(&self) -> Vec<VertexId> {
        self.products.iter().map(|s| s.product).collect()
    }

    pub fn slot_index(&self, product: VertexId) -> Option<usize> {
        self.products.iter().position(|s| s.product == product)
    }

    pub fn contains_product(&self, product: VertexId) -> bool {
        self.slot_index(product).is_some()
    }

    /// Number of products crediting `user`.
    pub fn coverage(&self, user: VertexId) -> usize {
        self.products
            .iter()
            .filter(|s| s.credits.contains_key(&user))
            .count()
    }

    /// Same users and same product set (order ignored).
    pub fn same_membership(&self, other: &Lockstep) -> bool {
        if self.users != other.users || self.products.len() != other.products.len() {
            return false;
        }
        let mut a = self.product_ids();
        let mut b = other.product_ids();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }

    /// Every stored center equals the mean of its credits.
    pub fn centers_consistent(&self) -> bool {
        self.products.iter().all(|s| {
            let mean = mean_timestamp(s.credits.values().map(|c| c.timestamp)).unwrap_or(0.0);
            mean == s.center
        })
    }

    /// Objective contribution recorded at the end of the last iteration.
    pub fn score(&self) -> u64 {
        self.score
    }

    /// All credited edges as (user, product, timestamp, weight).
    pub fn credited_edges(&self) -> impl Iterator<Item = (VertexId, VertexId, u64, u8)> + '_ {
        self.products.iter().flat_map(|s| {
            s.credits
                .iter()
                .map(move |(&u, c)| (u, s.product, c.timestamp, c.weight))
        })
    }
}
