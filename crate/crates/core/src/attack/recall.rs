use std::collections::HashSet;

use serde::Serialize;

use super::{AttackError, AttackGroundTruth};
use crate::engine::ReportedLockstep;
use crate::Mode;

pub const DEFAULT_COVERAGE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackMatch {
    pub attack: usize,
    pub mode: Mode,
    pub caught: bool,
    /// Index of the best-overlapping reported lockstep of the same mode.
    pub lockstep: Option<usize>,
    pub users_matched: usize,
    pub products_matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallSummary {
    pub caught: usize,
    pub total: usize,
    pub recall: f64,
    pub per_attack: Vec<AttackMatch>,
}

/// Scores `locksteps` against injected attacks. An attack is caught when a
/// single reported lockstep of the same mode holds at least `coverage` of
/// the attack's users and at least `coverage` of
/// `min(|attack products|, |lockstep products|)` of its products. The
/// second bound accounts for locksteps being capped at `m` products while
/// attacks may be much wider.
pub fn evaluate_recall(
    locksteps: &[ReportedLockstep],
    truth: &AttackGroundTruth,
    coverage: f64,
) -> Result<RecallSummary, AttackError> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(AttackError::Config(format!("coverage {coverage} outside (0, 1]")));
    }
    if truth.attacks.is_empty() {
        return Err(AttackError::EmptyTruth);
    }
    let mut per_attack = Vec::with_capacity(truth.attacks.len());
    for (k, attack) in truth.attacks.iter().enumerate() {
        let users: HashSet<&str> = attack.users.iter().map(String::as_str).collect();
        let products: HashSet<&str> = attack.products.iter().map(String::as_str).collect();
        let mut best = AttackMatch {
            attack: k,
            mode: attack.mode,
            caught: false,
            lockstep: None,
            users_matched: 0,
            products_matched: 0,
        };
        for (i, l) in locksteps
            .iter()
            .enumerate()
            .filter(|(_, l)| l.mode == attack.mode)
        {
            let um = l.users.iter().filter(|u| users.contains(u.as_str())).count();
            let pm = l
                .products
                .iter()
                .filter(|p| products.contains(p.as_str()))
                .count();
            let wide = products.len().min(l.products.len());
            let caught = um > 0
                && pm > 0
                && um as f64 >= coverage * users.len() as f64 - 1e-9
                && pm as f64 >= coverage * wide as f64 - 1e-9;
            let better = (caught, um + pm) > (best.caught, best.users_matched + best.products_matched);
            if better {
                best = AttackMatch {
                    attack: k,
                    mode: attack.mode,
                    caught,
                    lockstep: Some(i),
                    users_matched: um,
                    products_matched: pm,
                };
            }
        }
        per_attack.push(best);
    }
    let caught = per_attack.iter().filter(|m| m.caught).count();
    let total = per_attack.len();
    Ok(RecallSummary {
        caught,
        total,
        recall: caught as f64 / total as f64,
        per_attack,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::attack::InjectedAttack;

    fn ids(prefix: &str, r: std::ops::Range<usize>) -> Vec<String> {
        r.map(|i| format!("{prefix}{i}")).collect()
    }

    fn attack(k: usize, mode: Mode) -> InjectedAttack {
        InjectedAttack {
            users: ids("u", k * 100..k * 100 + 10),
            products: ids("p", k * 100..k * 100 + 5),
            per_product_center: BTreeMap::new(),
            mode,
            kappa: mode.default_kappa(),
            delta_t: 10,
        }
    }

    fn found(a: &InjectedAttack) -> ReportedLockstep {
        ReportedLockstep {
            seed: 0,
            users: a.users.clone(),
            products: a.products.clone(),
            centers: BTreeMap::new(),
            mode: a.mode,
            score: 0,
            iteration_converged: Some(1),
        }
    }

    #[test]
    fn nineteen_of_twenty() {
        let truth = AttackGroundTruth {
            attacks: (0..20).map(|k| attack(k, Mode::ALL[k % 2])).collect(),
        };
        let report: Vec<_> = truth.attacks[..19].iter().map(found).collect();
        let r = evaluate_recall(&report, &truth, DEFAULT_COVERAGE).unwrap();
        assert_eq!((r.caught, r.total), (19, 20));
        assert!((r.recall - 0.95).abs() < 1e-12);
        assert!(!r.per_attack[19].caught);
    }

    #[test]
    fn identical_and_empty_reports() {
        let truth = AttackGroundTruth {
            attacks: vec![attack(0, Mode::Promotion), attack(1, Mode::Defamation)],
        };
        let same: Vec<_> = truth.attacks.iter().map(found).collect();
        assert_eq!(evaluate_recall(&same, &truth, 0.8).unwrap().recall, 1.0);
        assert_eq!(evaluate_recall(&[], &truth, 0.8).unwrap().recall, 0.0);
    }

    #[test]
    fn empty_truth_is_an_error() {
        assert!(matches!(
            evaluate_recall(&[], &AttackGroundTruth::default(), 0.8),
            Err(AttackError::EmptyTruth)
        ));
    }

    #[test]
    fn partial_overlap_and_mode() {
        let a = attack(0, Mode::Promotion);
        let truth = AttackGroundTruth {
            attacks: vec![a.clone()],
        };
        let mut l = found(&a);
        l.users.truncate(8);
        assert!(evaluate_recall(&[l.clone()], &truth, 0.8).unwrap().per_attack[0].caught);
        l.users.truncate(7);
        assert!(!evaluate_recall(&[l.clone()], &truth, 0.8).unwrap().per_attack[0].caught);
        let mut wrong_mode = found(&a);
        wrong_mode.mode = Mode::Defamation;
        assert_eq!(evaluate_recall(&[wrong_mode], &truth, 0.8).unwrap().caught, 0);
    }

    #[test]
    fn narrow_lockstep_inside_wide_attack_counts() {
        let mut a = attack(0, Mode::Promotion);
        a.products = ids("p", 0..100);
        let truth = AttackGroundTruth {
            attacks: vec![a.clone()],
        };
        let mut l = found(&a);
        l.products = ids("p", 0..20);
        l.products.extend(ids("q", 0..5));
        assert!(evaluate_recall(&[l.clone()], &truth, 0.8).unwrap().per_attack[0].caught);
        l.products.extend(ids("q", 5..6));
        assert!(!evaluate_recall(&[l], &truth, 0.8).unwrap().per_attack[0].caught);
    }
}
