use std::collections::HashMap;

use super::{lambda_weight, phi_within_window, required_coverage, DetectionParams, Lockstep};
use crate::VertexId;

/// Per-user score: the number of lockstep products this user recommended
/// inside the product's window with a passing weight, or 0 when that count
/// is below `ceil(rho * |P|)`.
///
/// `user_edges` holds (product, timestamp, weight); several edges onto one
/// product still count that product once.
pub fn q_score(user_edges: &[(VertexId, u64, u8)], lockstep: &Lockstep, params: &DetectionParams) -> u64 {
    let hits = lockstep
        .products
        .iter()
        .filter(|slot| {
            user_edges.iter().any(|&(p, t, w)| {
                p == slot.product
                    && phi_within_window(slot.center, t, params.delta_t)
                    && lambda_weight(w, params.kappa, params.mode)
            })
        })
        .count();
    threshold(hits, lockstep.products.len(), params)
}

fn threshold(sigma: usize, products: usize, params: &DetectionParams) -> u64 {
    if products > 0 && sigma >= required_coverage(params.rho, products) {
        sigma as u64
    } else {
        0
    }
}

impl Lockstep {
    /// Sum of [`q_score`] over member users, evaluated on credited edges.
    pub fn contribution(&self, params: &DetectionParams) -> u64 {
        let mut hits: HashMap<VertexId, usize> = HashMap::with_capacity(self.users.len());
        for slot in &self.products {
            for (&user, credit) in &slot.credits {
                if self.users.contains(&user)
                    && phi_within_window(slot.center, credit.timestamp, params.delta_t)
                    && lambda_weight(credit.weight, params.kappa, params.mode)
                {
                    *hits.entry(user).or_default() += 1;
                }
            }
        }
        hits.values()
            .map(|&sigma| threshold(sigma, self.products.len(), params))
            .sum()
    }
}

/// Global objective: sum of member scores over all given locksteps.
pub fn objective<'a, I>(locksteps: I, params: &DetectionParams) -> u64
where
    I: IntoIterator<Item = &'a Lockstep>,
{
    locksteps.into_iter().map(|c| c.contribution(params)).sum()
}
