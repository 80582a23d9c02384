//! Per-lockstep steps of one iteration. Each function touches exactly one
//! lockstep, so callers may partition locksteps across workers freely.

use std::collections::btree_map::Entry;
use std::collections::HashMap;

use crate::lockstep::{
    lambda_weight, mean_timestamp, phi_within_window, required_coverage, Credit, DetectionParams, Lockstep,
    ProductSlot,
};
use crate::{Recommendation, VertexId};

fn distance(t: u64, center: f64) -> f64 {
    (t as f64 - center).abs()
}

/// Offers `product` to the lockstep. `edges` may be the product's whole
/// adjacency; only λ-passing edges from current members are considered.
/// Returns true if the product was added or swapped in.
pub(crate) fn offer_product(
    c: &mut Lockstep,
    product: VertexId,
    edges: &[Recommendation],
    params: &DetectionParams,
) -> bool {
    let mut member: Vec<Recommendation> = edges
        .iter()
        .filter(|e| {
            e.product == product
                && c.users.contains(&e.user)
                && lambda_weight(e.weight, params.kappa, params.mode)
        })
        .copied()
        .collect();
    member.sort_unstable();
    offer_member_edges(c, product, &member, params)
}

/// Core of [`offer_product`]. `edges` must be the λ-passing edges of current
/// members onto `product`, sorted by user then timestamp.
pub(crate) fn offer_member_edges(
    c: &mut Lockstep,
    product: VertexId,
    edges: &[Recommendation],
    params: &DetectionParams,
) -> bool {
    if c.users.is_empty() || c.contains_product(product) {
        return false;
    }
    let needed = required_coverage(params.rho, c.users.len());
    let distinct = edges.chunk_by(|a, b| a.user == b.user).count();
    if distinct == 0 || distinct < needed {
        return false;
    }
    let full = c.products.len() >= params.m;
    if full {
        // a swap needs strictly more credits than some existing slot
        let smallest = c.products.iter().map(|s| s.credits.len()).min().unwrap_or(0);
        if distinct <= smallest {
            return false;
        }
    }
    let Some(center) = mean_timestamp(edges.iter().map(|e| e.timestamp)) else {
        return false;
    };

    // one credit per user: the in-window edge closest to the center
    let mut credits: Vec<(VertexId, Credit)> = Vec::with_capacity(distinct);
    for run in edges.chunk_by(|a, b| a.user == b.user) {
        let best = run
            .iter()
            .filter(|e| phi_within_window(center, e.timestamp, params.delta_t))
            .min_by(|a, b| {
                (distance(a.timestamp, center), a.timestamp)
                    .partial_cmp(&(distance(b.timestamp, center), b.timestamp))
                    .expect("finite distances")
            });
        if let Some(e) = best {
            credits.push((
                e.user,
                Credit {
                    timestamp: e.timestamp,
                    weight: e.weight,
                },
            ));
        }
    }
    if credits.len() < needed {
        return false;
    }

    if !full {
        c.products
            .push(ProductSlot::new(product, credits.into_iter().collect()));
        return true;
    }

    // Full lockstep: swap out the product with the smallest credited user
    // set that is a strict subset of the candidate's.
    let victim = c
        .products
        .iter()
        .enumerate()
        .filter(|(_, s)| s.credits.len() < credits.len() && is_subset(s.credits.keys(), &credits))
        .min_by_key(|(_, s)| (s.credits.len(), s.product))
        .map(|(i, _)| i);
    match victim {
        Some(i) => {
            c.products.remove(i);
            c.products
                .push(ProductSlot::new(product, credits.into_iter().collect()));
            true
        }
        None => false,
    }
}

/// Whether every key of the ascending `sub` appears in `sup` (ascending by
/// user).
fn is_subset<'a>(sub: impl Iterator<Item = &'a VertexId>, sup: &[(VertexId, Credit)]) -> bool {
    let mut rest = sup;
    for &u in sub {
        match rest.iter().position(|&(v, _)| v >= u) {
            Some(i) if rest[i].0 == u => rest = &rest[i + 1..],
            _ => return false,
        }
    }
    true
}

/// Offers `user` to the lockstep given its λ-passing edges onto lockstep
/// products, each tagged with the product's slot index. Edges within
/// `2 * delta_t` of the slot center count. Members get any missing credits;
/// non-members join when they cover `ceil(rho * |P|)` products.
pub(crate) fn offer_user_slots(
    c: &mut Lockstep,
    user: VertexId,
    hits: &[(usize, Recommendation)],
    params: &DetectionParams,
) -> bool {
    if c.products.is_empty() {
        return false;
    }
    let widened = 2 * params.delta_t;
    // best in-window edge per slot: closest to the center, then earliest
    let mut best: Vec<(usize, f64, Recommendation)> = hits
        .iter()
        .filter(|(k, e)| phi_within_window(c.products[*k].center, e.timestamp, widened))
        .map(|&(k, e)| (k, distance(e.timestamp, c.products[k].center), e))
        .collect();
    best.sort_by(|a, b| {
        (a.0, a.1, a.2.timestamp)
            .partial_cmp(&(b.0, b.1, b.2.timestamp))
            .expect("finite distances")
    });
    best.dedup_by_key(|h| h.0);
    let member = c.users.contains(&user);
    if !member && best.len() < required_coverage(params.rho, c.products.len()) {
        return false;
    }
    let mut changed = !member;
    for (k, _, e) in best {
        if let Entry::Vacant(v) = c.products[k].credits.entry(user) {
            v.insert(Credit {
                timestamp: e.timestamp,
                weight: e.weight,
            });
            changed = true;
        }
    }
    c.users.insert(user);
    changed
}

/// Convenience wrapper resolving slots by product id.
pub(crate) fn offer_user(
    c: &mut Lockstep,
    user: VertexId,
    edges: &[Recommendation],
    params: &DetectionParams,
) -> bool {
    let hits: Vec<(usize, Recommendation)> = edges
        .iter()
        .filter(|e| e.user == user && lambda_weight(e.weight, params.kappa, params.mode))
        .filter_map(|e| c.slot_index(e.product).map(|k| (k, *e)))
        .collect();
    offer_user_slots(c, user, &hits, params)
}

/// Keeps the largest set of credits whose timestamps span at most
/// `2 * delta_t` (earliest window on ties), then drops the credit farthest
/// from the mean until every survivor is within `delta_t` of it.
/// Returns true if any credit was removed.
pub(crate) fn tighten_slot(slot: &mut ProductSlot, delta_t: u64) -> bool {
    if slot.credits.is_empty() {
        return false;
    }
    let mut sorted: Vec<(u64, VertexId)> = slot.credits.iter().map(|(&u, c)| (c.timestamp, u)).collect();
    sorted.sort_unstable();
    let span = 2 * delta_t as u128;
    let (mut best_start, mut best_len) = (0, 0);
    let mut end = 0;
    for start in 0..sorted.len() {
        while end < sorted.len() && (sorted[end].0 - sorted[start].0) as u128 <= span {
            end += 1;
        }
        if end - start > best_len {
            best_start = start;
            best_len = end - start;
        }
    }
    // Trim the survivor farthest from the mean until all are within
    // delta_t. The farthest is always at one end of the sorted window; on a
    // distance tie the later timestamp goes, and among equal timestamps the
    // highest user id.
    let (mut lo, mut hi) = (best_start, best_start + best_len);
    let mut sum: u128 = sorted[lo..hi].iter().map(|&(t, _)| t as u128).sum();
    let limit = delta_t as f64;
    while hi - lo > 1 {
        let mean = (sum as f64) / ((hi - lo) as f64);
        let (left, right) = (distance(sorted[lo].0, mean), distance(sorted[hi - 1].0, mean));
        if left.max(right) <= limit {
            break;
        }
        if right >= left {
            hi -= 1;
            sum -= sorted[hi].0 as u128;
        } else {
            let t = sorted[lo].0;
            let run_end = lo + sorted[lo..hi].iter().take_while(|e| e.0 == t).count();
            let top = (lo..run_end).max_by_key(|&i| sorted[i].1).expect("nonempty run");
            sorted.swap(lo, top);
            lo += 1;
            sum -= t as u128;
        }
    }
    let removed = lo > 0 || hi < sorted.len();
    for &(_, user) in sorted[..lo].iter().chain(&sorted[hi..]) {
        slot.credits.remove(&user);
    }
    slot.recompute_center();
    removed
}

/// Window tightening for every product in insertion order, followed by a
/// coverage sweep, repeated until nothing changes. Products left without
/// credits are dropped.
pub(crate) fn normalize(c: &mut Lockstep, params: &DetectionParams) {
    loop {
        let mut changed = false;
        for slot in &mut c.products {
            changed |= tighten_slot(slot, params.delta_t);
        }
        let before = c.products.len();
        c.products.retain(|s| !s.credits.is_empty());
        changed |= c.products.len() != before;

        let required = required_coverage(params.rho, c.products.len());
        let mut coverage: HashMap<VertexId, usize> = HashMap::with_capacity(c.users.len());
        for slot in &c.products {
            for u in slot.credits.keys() {
                *coverage.entry(*u).or_default() += 1;
            }
        }
        let dropped: Vec<VertexId> = c
            .users
            .iter()
            .copied()
            .filter(|u| coverage.get(u).copied().unwrap_or(0) < required.max(1))
            .collect();
        let strays = coverage.keys().any(|u| !c.users.contains(u));
        if !dropped.is_empty() || strays {
            for u in &dropped {
                c.users.remove(u);
            }
            for slot in &mut c.products {
                slot.credits.retain(|u, _| c.users.contains(u));
                slot.recompute_center();
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mode;

    fn params() -> DetectionParams {
        DetectionParams::new(3, 3, 0.8, 100, Mode::Promotion)
    }

    fn lockstep_with_users(users: impl IntoIterator<Item = VertexId>) -> Lockstep {
        let mut c = Lockstep::new(0);
        c.users = users.into_iter().collect();
        c
    }

    fn slot(product: VertexId, credits: &[(VertexId, u64)]) -> ProductSlot {
        ProductSlot::new(
            product,
            credits
                .iter()
                .map(|&(u, t)| {
                    (
                        u,
                        Credit {
                            timestamp: t,
                            weight: 5,
                        },
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn product_added_when_enough_members_recommend_it() {
        let mut c = lockstep_with_users(0..5);
        let edges: Vec<_> = (0..4)
            .map(|u| Recommendation::new(u, 9, 1000 + u as u64, 5))
            .collect();
        assert!(offer_product(&mut c, 9, &edges, &params()));
        assert_eq!(c.product_ids(), vec![9]);
        assert_eq!(c.products[0].credits.len(), 4);
        assert_eq!(c.products[0].center, 1001.5);
    }

    #[test]
    fn lambda_failure_blocks_product() {
        let mut c = lockstep_with_users(0..5);
        let mut edges: Vec<_> = (0..4).map(|u| Recommendation::new(u, 9, 1000, 5)).collect();
        edges[0].weight = 1;
        assert!(!offer_product(&mut c, 9, &edges, &params()));
        assert!(c.products.is_empty());
    }

    #[test]
    fn out_of_window_recommendation_is_dropped_before_counting() {
        let mut c = lockstep_with_users(0..5);
        // mean = 1000 + 4*... the outlier sits far from the other three
        let mut edges: Vec<_> = (0..3).map(|u| Recommendation::new(u, 9, 1000, 5)).collect();
        edges.push(Recommendation::new(3, 9, 100_000, 5));
        assert!(!offer_product(&mut c, 9, &edges, &params()));
    }

    #[test]
    fn non_members_are_ignored() {
        let mut c = lockstep_with_users(0..2);
        let edges: Vec<_> = (0..6).map(|u| Recommendation::new(u, 9, 1000, 5)).collect();
        assert!(offer_product(&mut c, 9, &edges, &params()));
        assert_eq!(c.products[0].credits.len(), 2);
    }

    #[test]
    fn full_lockstep_swaps_strict_subset() {
        let p = params();
        let mut c = lockstep_with_users(0..5);
        c.products = vec![
            slot(1, &[(0, 1000), (1, 1000), (2, 1000), (3, 1000), (4, 1000)]),
            slot(2, &[(0, 1000), (1, 1000), (2, 1000), (3, 1000)]),
            slot(3, &[(0, 1000), (1, 1000), (2, 1000), (4, 1000)]),
        ];
        let edges: Vec<_> = (0..5).map(|u| Recommendation::new(u, 7, 2000, 5)).collect();
        assert!(offer_product(&mut c, 7, &edges, &p));
        // both 2 and 3 qualify with equal size; lowest ordinal goes
        assert_eq!(c.product_ids(), vec![1, 3, 7]);

        // equal user sets never swap
        let edges: Vec<_> = (0..5).map(|u| Recommendation::new(u, 8, 2000, 5)).collect();
        let mut d = c.clone();
        d.products.retain(|s| s.product != 3);
        d.products
            .push(slot(4, &[(0, 1), (1, 1), (2, 1), (3, 1), (4, 1)]));
        assert!(!offer_product(&mut d, 8, &edges, &p));
    }

    #[test]
    fn user_within_widened_window_joins() {
        let p = params();
        let mut c = lockstep_with_users([0]);
        c.products = vec![
            slot(1, &[(0, 1000)]),
            slot(2, &[(0, 5000)]),
            slot(3, &[(0, 9000)]),
        ];
        // ceil(0.8 * 3) = 3 products needed, edges at center + 1.5 dt
        let edges: Vec<_> = [1000u64, 5000, 9000]
            .iter()
            .enumerate()
            .map(|(k, &t)| Recommendation::new(7, k as u32 + 1, t + 150, 5))
            .collect();
        assert!(offer_user(&mut c, 7, &edges, &p));
        assert!(c.users.contains(&7));
        assert_eq!(c.coverage(7), 3);
        // centers stay fixed until the iteration ends
        assert_eq!(c.products[0].center, 1000.0);

        let far: Vec<_> = edges
            .iter()
            .map(|e| Recommendation {
                user: 8,
                timestamp: e.timestamp + 100,
                ..*e
            })
            .collect();
        assert!(!offer_user(&mut c, 8, &far, &p));

        // re-offering a member does not duplicate anything
        let before = c.clone();
        assert!(!offer_user(&mut c, 7, &edges, &p));
        assert_eq!(c, before);
    }

    #[test]
    fn window_keeps_largest_cluster() {
        let mut s = slot(1, &[(0, 0), (1, 10), (2, 20), (3, 5000)]);
        assert!(tighten_slot(&mut s, 100));
        assert_eq!(s.credits.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(s.center, 10.0);
    }

    #[test]
    fn window_ties_keep_the_earlier_cluster() {
        let mut s = slot(1, &[(0, 0), (1, 50), (2, 10_000), (3, 10_050)]);
        tighten_slot(&mut s, 100);
        assert_eq!(s.credits.keys().copied().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn trim_restores_window_containment() {
        // span 200 fits, but the mean (~190) is 190 away from the first point
        let mut s = slot(
            1,
            &[
                (0, 0),
                (1, 200),
                (2, 200),
                (3, 200),
                (4, 200),
                (5, 200),
                (6, 200),
                (7, 200),
                (8, 200),
                (9, 200),
            ],
        );
        assert!(tighten_slot(&mut s, 100));
        assert!(!s.credits.contains_key(&0));
        assert!(s
            .credits
            .values()
            .all(|c| phi_within_window(s.center, c.timestamp, 100)));
    }

    #[test]
    fn normalize_drops_under_covered_users() {
        let p = params();
        let mut c = lockstep_with_users(0..4);
        c.products = vec![
            slot(1, &[(0, 1000), (1, 1000), (2, 1000), (3, 9000)]),
            slot(2, &[(0, 1000), (1, 1000), (2, 1000), (3, 1000)]),
            slot(3, &[(0, 1000), (1, 1000), (2, 1000), (3, 1000)]),
        ];
        normalize(&mut c, &p);
        // user 3 lost product 1 to the window and now covers 2 < 3
        assert_eq!(c.users.iter().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(c.products.iter().all(|s| !s.credits.contains_key(&3)));
        assert!(c.centers_consistent());
    }

    #[test]
    fn normalize_is_a_fixed_point_on_clean_state() {
        let p = params();
        let mut c = lockstep_with_users(0..3);
        c.products = vec![
            slot(1, &[(0, 1000), (1, 1010), (2, 1020)]),
            slot(2, &[(0, 5000), (1, 5010), (2, 5020)]),
            slot(3, &[(0, 9000), (1, 9010), (2, 9020)]),
        ];
        let before = c.clone();
        normalize(&mut c, &p);
        assert_eq!(c, before);
    }
}
