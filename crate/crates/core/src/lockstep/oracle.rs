//! Exhaustive check of the lockstep definition on small instances.
//!
//! A pair (U, P) qualifies iff |P| >= m, |U| >= n and every user has at
//! least `ceil(rho * |P|)` products it recommended with a passing weight,
//! such that each product j admits one center t_j within `delta_t` of every
//! credited timestamp on j. Centers are searched over every window of span
//! `2 * delta_t` anchored at an edge timestamp; any feasible center covers a
//! subset of one of those windows.

use std::collections::{BTreeSet, HashMap};

use super::{lambda_weight, required_coverage, DetectionParams};
use crate::{Recommendation, VertexId};

/// Largest |users| * |products| the oracle will enumerate.
pub const ORACLE_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("instance of {users} users x {products} products exceeds the oracle limit")]
    TooLarge { users: usize, products: usize },
}

type Bits = Vec<u64>;

fn is_subset(a: &Bits, b: &Bits) -> bool {
    a.iter().zip(b).all(|(x, y)| x & !y == 0)
}

/// Maximal covered-user sets per product.
fn candidates(ts_users: &mut [(u64, usize)], words: usize, delta_t: u64) -> Vec<Bits> {
    ts_users.sort_unstable();
    let span = 2 * delta_t as u128;
    let mut sets: Vec<Bits> = Vec::new();
    for i in 0..ts_users.len() {
        let lo = ts_users[i].0 as u128;
        let mut bits = vec![0u64; words];
        for &(t, u) in &ts_users[i..] {
            if t as u128 - lo > span {
                break;
            }
            bits[u / 64] |= 1 << (u % 64);
        }
        sets.push(bits);
    }
    sets.sort();
    sets.dedup();
    let maximal: Vec<Bits> = sets
        .iter()
        .filter(|a| !sets.iter().any(|b| b != *a && is_subset(a, b)))
        .cloned()
        .collect();
    if maximal.is_empty() {
        vec![vec![0u64; words]]
    } else {
        maximal
    }
}

struct Search<'a> {
    options: &'a [Vec<Bits>],
    needed: usize,
    users: usize,
    coverage: Vec<usize>,
    /// Products from position k on where each user can still gain coverage.
    remaining: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn feasible(&self, k: usize) -> bool {
        (0..self.users).all(|u| self.coverage[u] + self.remaining[k][u] >= self.needed)
    }

    fn apply(&mut self, bits: &Bits, delta: isize) {
        for u in 0..self.users {
            if bits[u / 64] >> (u % 64) & 1 == 1 {
                self.coverage[u] = (self.coverage[u] as isize + delta) as usize;
            }
        }
    }

    fn run(&mut self, k: usize) -> bool {
        if !self.feasible(k) {
            return false;
        }
        if k == self.options.len() || self.coverage.iter().all(|&c| c >= self.needed) {
            return true;
        }
        let options = self.options;
        for bits in &options[k] {
            self.apply(bits, 1);
            let ok = self.run(k + 1);
            self.apply(bits, -1);
            if ok {
                return true;
            }
        }
        false
    }
}

/// Decides whether `users` x `products` is a valid lockstep under `params`,
/// considering only the given edges that fall inside that block.
pub fn verify_definition(
    users: &BTreeSet<VertexId>,
    products: &BTreeSet<VertexId>,
    edges: &[Recommendation],
    params: &DetectionParams,
) -> Result<bool, OracleError> {
    if users.len().saturating_mul(products.len()) > ORACLE_LIMIT {
        return Err(OracleError::TooLarge {
            users: users.len(),
            products: products.len(),
        });
    }
    if products.len() < params.m || users.len() < params.n || users.is_empty() {
        return Ok(false);
    }
    let needed = required_coverage(params.rho, products.len());
    let user_pos: HashMap<VertexId, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let product_pos: HashMap<VertexId, usize> = products.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let words = users.len().div_ceil(64);

    let mut per_product: Vec<Vec<(u64, usize)>> = vec![Vec::new(); products.len()];
    for e in edges {
        if !lambda_weight(e.weight, params.kappa, params.mode) {
            continue;
        }
        if let (Some(&u), Some(&p)) = (user_pos.get(&e.user), product_pos.get(&e.product)) {
            per_product[p].push((e.timestamp, u));
        }
    }
    let mut options: Vec<Vec<Bits>> = per_product
        .iter_mut()
        .map(|ts| candidates(ts, words, params.delta_t))
        .collect();
    // branch on the most constrained products first
    options.sort_by_key(|o| o.len());

    let mut remaining = vec![vec![0usize; users.len()]; options.len() + 1];
    for k in (0..options.len()).rev() {
        let mut row = remaining[k + 1].clone();
        for (u, slot) in row.iter_mut().enumerate() {
            if options[k].iter().any(|b| b[u / 64] >> (u % 64) & 1 == 1) {
                *slot += 1;
            }
        }
        remaining[k] = row;
    }

    let mut search = Search {
        options: &options,
        needed,
        users: users.len(),
        coverage: vec![0; users.len()],
        remaining,
    };
    Ok(search.run(0))
}
