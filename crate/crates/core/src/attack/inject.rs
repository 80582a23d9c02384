use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::store::RawEdges;
use crate::{Mode, Recommendation};

/// Shape of the attacks to inject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub n_users: usize,
    pub n_products: usize,
    pub delta_t: u64,
    pub mode: Mode,
    pub kappa: u8,
    /// Number of independent attacks of this shape.
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

impl AttackSpec {
    pub fn new(n_users: usize, n_products: usize, delta_t: u64, mode: Mode) -> Self {
        Self {
            n_users,
            n_products,
            delta_t,
            mode,
            kappa: mode.default_kappa(),
            count: 1,
        }
    }

    pub fn with_count(mut self, count: usize) -> Self {
        self.count = count;
        self
    }

    /// Ratings an attacker of this mode would give.
    pub fn rating_range(&self) -> Result<RangeInclusive<u8>, AttackError> {
        let range = match self.mode {
            Mode::Defamation => 1..=self.kappa.min(5),
            Mode::Promotion => self.kappa.max(1)..=5,
        };
        if range.is_empty() {
            return Err(AttackError::Config(format!(
                "no rating in 1..=5 passes kappa {} for {}",
                self.kappa, self.mode
            )));
        }
        Ok(range)
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.n_users == 0 || self.n_products == 0 {
            return Err(AttackError::Config(
                "attacks need at least one user and one product".into(),
            ));
        }
        if self.delta_t == 0 {
            return Err(AttackError::Config("delta_t must be positive".into()));
        }
        self.rating_range().map(|_| ())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedAttack {
    pub users: Vec<String>,
    pub products: Vec<String>,
    /// Product id -> base timestamp every attack edge on it is within
    /// `delta_t` of.
    pub per_product_center: BTreeMap<String, u64>,
    pub mode: Mode,
    pub kappa: u8,
    pub delta_t: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackGroundTruth {
    pub attacks: Vec<InjectedAttack>,
}

impl AttackGroundTruth {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("ground truth serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Appends `spec.count` attacks to `graph`. Each picks distinct random
/// existing users and products; every chosen product gets a base timestamp
/// drawn from the host's timestamp range and a rating on the mode's side
/// of kappa, and every chosen user rates it at the base plus a uniform
/// variation in `[-delta_t, delta_t]`. Existing edges are left untouched.
pub fn inject_lockstep(
    graph: &mut RawEdges,
    spec: &AttackSpec,
    rng_seed: u64,
) -> Result<AttackGroundTruth, AttackError> {
    spec.validate()?;
    let ratings = spec.rating_range()?;
    if spec.n_users > graph.num_users() || spec.n_products > graph.num_products() {
        return Err(AttackError::Config(format!(
            "attack of {} users x {} products does not fit a graph of {} x {}",
            spec.n_users,
            spec.n_products,
            graph.num_users(),
            graph.num_products()
        )));
    }
    let (lo, hi) = graph.timestamp_range().unwrap_or((0, 0));
    let dt = spec.delta_t as i128;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut truth = AttackGroundTruth::default();
    for _ in 0..spec.count {
        let mut users = index::sample(&mut rng, graph.num_users(), spec.n_users).into_vec();
        let mut products = index::sample(&mut rng, graph.num_products(), spec.n_products).into_vec();
        users.sort_unstable();
        products.sort_unstable();
        let mut centers = BTreeMap::new();
        for &p in &products {
            let base = rng.gen_range(lo..=hi);
            let rating = rng.gen_range(ratings.clone());
            for &u in &users {
                let t = (base as i128 + rng.gen_range(-dt..=dt)).clamp(0, u64::MAX as i128) as u64;
                graph
                    .edges
                    .push(Recommendation::new(u as u32, p as u32, t, rating));
            }
            centers.insert(graph.product_ids[p].clone(), base);
        }
        truth.attacks.push(InjectedAttack {
            users: users.iter().map(|&u| graph.user_ids[u].clone()).collect(),
            products: products.iter().map(|&p| graph.product_ids[p].clone()).collect(),
            per_product_center: centers,
            mode: spec.mode,
            kappa: spec.kappa,
            delta_t: spec.delta_t,
        });
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::generate_bipartite;
    use crate::lockstep::lambda_weight;

    fn host() -> RawEdges {
        generate_bipartite(200, 300, 3000, (1_000, 9_000_000), 5).unwrap()
    }

    #[test]
    fn promotion_attack_adds_full_block_of_high_ratings() {
        let mut g = host();
        let before = g.clone();
        let spec = AttackSpec::new(50, 25, 3600, Mode::Promotion);
        let truth = inject_lockstep(&mut g, &spec, 11).unwrap();
        let added = &g.edges[before.edges.len()..];
        assert_eq!(added.len(), 50 * 25);
        assert!(added.iter().all(|e| e.weight >= 4));
        assert_eq!(&g.edges[..before.edges.len()], &before.edges[..]);
        assert_eq!(g.user_ids, before.user_ids);
        let a = &truth.attacks[0];
        assert_eq!((a.users.len(), a.products.len()), (50, 25));
        for e in added {
            let center = a.per_product_center[&g.product_ids[e.product as usize]];
            assert!(e.timestamp.abs_diff(center) <= 3600);
            assert!(lambda_weight(e.weight, spec.kappa, spec.mode));
        }
    }

    #[test]
    fn single_edge_attack() {
        let mut g = host();
        let n = g.edges.len();
        let truth = inject_lockstep(&mut g, &AttackSpec::new(1, 1, 10, Mode::Defamation), 0).unwrap();
        assert_eq!(g.edges.len(), n + 1);
        assert!(g.edges[n].weight <= 2);
        assert_eq!(truth.attacks.len(), 1);
    }

    #[test]
    fn reproducible_and_counted() {
        let spec = AttackSpec::new(10, 5, 60, Mode::Defamation).with_count(3);
        let (mut a, mut b) = (host(), host());
        let ta = inject_lockstep(&mut a, &spec, 9).unwrap();
        let tb = inject_lockstep(&mut b, &spec, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert_eq!(ta.attacks.len(), 3);
        assert_eq!(AttackGroundTruth::from_json(&ta.to_json()).unwrap(), ta);
    }

    #[test]
    fn oversized_or_invalid_specs_fail() {
        let mut g = host();
        assert!(inject_lockstep(&mut g, &AttackSpec::new(201, 1, 10, Mode::Promotion), 0).is_err());
        assert!(inject_lockstep(&mut g, &AttackSpec::new(1, 1, 0, Mode::Promotion), 0).is_err());
        let mut bad = AttackSpec::new(1, 1, 10, Mode::Promotion);
        bad.kappa = 6;
        assert!(inject_lockstep(&mut g, &bad, 0).is_err());
        assert_eq!(g, host());
    }
}
