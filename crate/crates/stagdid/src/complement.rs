//! Triple-difference complementary effects: the added value of the joint
//! treatment (d = 4) over the singular treatment (d = 2), per group-time
//! cell and aggregated with the joint-treated cohort sizes.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::aggregate::{AggregateKind, AggregateResult};
use crate::attgt::{AttGtEstimate, Contribution};
use crate::error::{Error, Result};
use crate::panel::TreatmentKind;

/// ATT(g, t, 4) - ATT(g, t, 2) with merged cluster contributions.
#[derive(Debug, Clone, Serialize)]
pub struct ComplementEstimate {
    pub g: i64,
    pub t: i64,
    pub delta: f64,
    pub att4: f64,
    pub att2: f64,
    /// Joint-side contributions plus sign-flipped singular-side ones.
    pub contributions: BTreeMap<usize, (Contribution, Contribution)>,
}

/// Difference one joint estimate against its singular counterpart at the
/// same (g, t).
pub fn complementary_att_gt(
    est4: &AttGtEstimate,
    est2: &AttGtEstimate,
) -> Result<ComplementEstimate> {
    if est4.d != TreatmentKind::Both || est2.d != TreatmentKind::OnlyA {
        return Err(Error::Pairing(format!(
            "expected d=4 and d=2 inputs, got d={} and d={}",
            est4.d.code(),
            est2.d.code()
        )));
    }
    if est4.g != est2.g || est4.t != est2.t {
        return Err(Error::Pairing(format!(
            "mismatched cells ({}, {}) vs ({}, {})",
            est4.g, est4.t, est2.g, est2.t
        )));
    }
    let mut contributions = BTreeMap::new();
    for (&u, &c) in &est4.cluster_contributions {
        contributions.insert(u, (c, Contribution::default()));
    }
    for (&u, &c) in &est2.cluster_contributions {
        contributions.entry(u).or_insert((Contribution::default(), Contribution::default())).1 = c;
    }
    Ok(ComplementEstimate {
        g: est4.g,
        t: est4.t,
        delta: est4.estimate - est2.estimate,
        att4: est4.estimate,
        att2: est2.estimate,
        contributions,
    })
}

/// Pair every (g, t) present in both input sets; cells present in only one
/// set are excluded and counted.
pub fn pair_complements(
    est4: &[AttGtEstimate],
    est2: &[AttGtEstimate],
) -> Result<(Vec<ComplementEstimate>, usize)> {
    let by_cell: BTreeMap<(i64, i64), &AttGtEstimate> =
        est2.iter().map(|e| ((e.g, e.t), e)).collect();
    let mut deltas = Vec::new();
    let mut excluded = 0usize;
    let mut matched = 0usize;
    for e4 in est4 {
        match by_cell.get(&(e4.g, e4.t)) {
            Some(e2) => {
                deltas.push(complementary_att_gt(e4, e2)?);
                matched += 1;
            }
            None => excluded += 1,
        }
    }
    excluded += est2.len() - matched;
    Ok((deltas, excluded))
}

/// Aggregate complementary effects over post-treatment cells with the
/// joint-treated (d = 4) cohort sizes as weights.
pub fn aggregate_complementary(
    deltas: &[ComplementEstimate],
    group_sizes: &BTreeMap<i64, f64>,
) -> Result<AggregateResult> {
    let post: Vec<&ComplementEstimate> = deltas.iter().filter(|d| d.t >= d.g).collect();
    if post.is_empty() {
        return Err(Error::EmptyAggregation(
            "no overlapping post-treatment complementary cells".into(),
        ));
    }
    let mut total = 0.0;
    for d in &post {
        total += group_sizes.get(&d.g).copied().ok_or_else(|| {
            Error::EmptyAggregation(format!("no group size for cohort {}", d.g))
        })?;
    }
    let mut theta = 0.0;
    let mut weights_used = BTreeMap::new();
    for d in &post {
        let w = group_sizes[&d.g] / total;
        theta += w * d.delta;
        weights_used.insert((d.g, d.t), w);
    }
    let mut cohorts: Vec<i64> = post.iter().map(|d| d.g).collect();
    cohorts.sort_unstable();
    cohorts.dedup();
    Ok(AggregateResult {
        kind: AggregateKind::Overall,
        theta,
        weights_used,
        cohorts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(d: TreatmentKind, g: i64, t: i64, value: f64) -> AttGtEstimate {
        AttGtEstimate {
            g,
            t,
            d,
            estimate: value,
            n_treated: 1.0,
            n_control: 1.0,
            cluster_contributions: BTreeMap::new(),
        }
    }

    #[test]
    fn delta_is_difference() {
        let e4 = est(TreatmentKind::Both, 2, 3, 3.0);
        let e2 = est(TreatmentKind::OnlyA, 2, 3, 1.0);
        let c = complementary_att_gt(&e4, &e2).unwrap();
        assert_eq!(c.delta, 2.0);
    }

    #[test]
    fn equal_inputs_give_zero() {
        let e4 = est(TreatmentKind::Both, 2, 3, 1.5);
        let e2 = est(TreatmentKind::OnlyA, 2, 3, 1.5);
        assert_eq!(complementary_att_gt(&e4, &e2).unwrap().delta, 0.0);
    }

    #[test]
    fn mismatched_cells_rejected() {
        let e4 = est(TreatmentKind::Both, 2, 3, 1.0);
        let e2 = est(TreatmentKind::OnlyA, 2, 4, 1.0);
        assert!(matches!(
            complementary_att_gt(&e4, &e2),
            Err(Error::Pairing(_))
        ));
        let wrong_d = est(TreatmentKind::OnlyB, 2, 3, 1.0);
        assert!(matches!(
            complementary_att_gt(&e4, &wrong_d),
            Err(Error::Pairing(_))
        ));
    }

    #[test]
    fn aggregate_equal_weights() {
        let deltas = vec![
            ComplementEstimate {
                g: 2,
                t: 2,
                delta: 2.0,
                att4: 2.0,
                att2: 0.0,
                contributions: BTreeMap::new(),
            },
            ComplementEstimate {
                g: 3,
                t: 3,
                delta: 4.0,
                att4: 4.0,
                att2: 0.0,
                contributions: BTreeMap::new(),
            },
        ];
        let sizes = BTreeMap::from([(2, 10.0), (3, 10.0)]);
        let r = aggregate_complementary(&deltas, &sizes).unwrap();
        assert!((r.theta - 3.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_singleton() {
        let deltas = vec![ComplementEstimate {
            g: 2,
            t: 4,
            delta: -0.7,
            att4: 0.0,
            att2: 0.7,
            contributions: BTreeMap::new(),
        }];
        let sizes = BTreeMap::from([(2, 3.0)]);
        let r = aggregate_complementary(&deltas, &sizes).unwrap();
        assert_eq!(r.theta, -0.7);
    }

    #[test]
    fn pairing_excludes_unmatched_cells() {
        let e4 = vec![
            est(TreatmentKind::Both, 2, 2, 3.0),
            est(TreatmentKind::Both, 2, 3, 3.0),
        ];
        let e2 = vec![
            est(TreatmentKind::OnlyA, 2, 2, 1.0),
            est(TreatmentKind::OnlyA, 4, 4, 1.0),
        ];
        let (deltas, excluded) = pair_complements(&e4, &e2).unwrap();
        assert_eq!(deltas.len(), 1);
        assert_eq!(excluded, 2);
    }

    #[test]
    fn empty_overlap_is_error() {
        let deltas: Vec<ComplementEstimate> = Vec::new();
        let sizes = BTreeMap::new();
        assert!(matches!(
            aggregate_complementary(&deltas, &sizes),
            Err(Error::EmptyAggregation(_))
        ));
    }
}
