//! Aggregation of group-time effects into the two summary estimands:
//! the overall effect of treatment participation (post-treatment cells,
//! group sizes as weights) and the event-study path by time since
//! treatment initiation.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::attgt::AttGtEstimate;
use crate::error::{Error, Result};
use crate::panel::{PanelDataset, TreatmentMask};

/// Which summary an [`AggregateResult`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AggregateKind {
    Overall,
    EventStudy { e: i64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateResult {
    pub kind: AggregateKind,
    pub theta: f64,
    /// (g, t) -> normalized weight; sums to one.
    pub weights_used: BTreeMap<(i64, i64), f64>,
    /// Cohorts contributing (composition report for event-study drift).
    pub cohorts: Vec<i64>,
}

/// Group sizes: total treated cell weight per cohort (mean across periods).
pub fn group_sizes(ds: &PanelDataset, mask: &TreatmentMask) -> BTreeMap<i64, f64> {
    group_sizes_weighted(ds, mask, None)
}

pub(crate) fn group_sizes_weighted(
    ds: &PanelDataset,
    mask: &TreatmentMask,
    mult: Option<&[f64]>,
) -> BTreeMap<i64, f64> {
    let mut sizes = BTreeMap::new();
    for (&unit, &g) in &mask.treated {
        let m = mult.map(|m| m[unit]).unwrap_or(1.0);
        *sizes.entry(g).or_insert(0.0) += m * ds.unit_size(unit);
    }
    sizes
}

/// Test hook: deliberately breaks the weight normalization so the validate
/// command's "weights sum to one" criterion can demonstrate a failure.
fn fault_scale() -> f64 {
    match std::env::var("STAGDID_FAULT") {
        Ok(v) if v == "aggregation-weights" => 1.1,
        _ => 1.0,
    }
}

/// Overall effect: group-size-weighted average of post-treatment (t >= g)
/// group-time effects, with weights normalized over included cells.
///
/// With `cohort_first`, effects are first averaged within cohort across
/// time, then weighted by group size (off by default).
pub fn aggregate_overall(
    estimates: &[AttGtEstimate],
    group_sizes: &BTreeMap<i64, f64>,
) -> Result<AggregateResult> {
    aggregate_overall_opts(estimates, group_sizes, false)
}

pub fn aggregate_overall_opts(
    estimates: &[AttGtEstimate],
    group_sizes: &BTreeMap<i64, f64>,
    cohort_first: bool,
) -> Result<AggregateResult> {
    let post: Vec<&AttGtEstimate> = estimates.iter().filter(|e| e.t >= e.g).collect();
    if post.is_empty() {
        return Err(Error::EmptyAggregation(
            "no post-treatment (t >= g) cells".into(),
        ));
    }
    let size_of = |g: i64| -> Result<f64> {
        group_sizes
            .get(&g)
            .copied()
            .ok_or_else(|| Error::EmptyAggregation(format!("no group size for cohort {g}")))
    };

    let mut weights_used = BTreeMap::new();
    if cohort_first {
        // Average within cohort first, then weight cohorts by size.
        let mut by_cohort: BTreeMap<i64, Vec<&AttGtEstimate>> = BTreeMap::new();
        for est in &post {
            by_cohort.entry(est.g).or_default().push(est);
        }
        let total: f64 = by_cohort
            .keys()
            .map(|&g| size_of(g))
            .sum::<Result<f64>>()?;
        for (&g, ests) in &by_cohort {
            let cell_w = size_of(g)? / total / ests.len() as f64;
            for est in ests {
                weights_used.insert((est.g, est.t), cell_w);
            }
        }
    } else {
        let total: f64 = post.iter().map(|e| size_of(e.g)).sum::<Result<f64>>()?;
        for est in &post {
            weights_used.insert((est.g, est.t), size_of(est.g)? / total);
        }
    }

    let theta: f64 = post
        .iter()
        .map(|e| weights_used[&(e.g, e.t)] * e.estimate)
        .sum();
    let fault = fault_scale();
    if fault != 1.0 {
        for w in weights_used.values_mut() {
            *w *= fault;
        }
    }
    let mut cohorts: Vec<i64> = post.iter().map(|e| e.g).collect();
    cohorts.sort_unstable();
    cohorts.dedup();
    Ok(AggregateResult {
        kind: AggregateKind::Overall,
        theta,
        weights_used,
        cohorts,
    })
}

/// Event-study path: for each event time e in the range, the group-size
/// weighted mean of ATT(g, g+e) over cohorts observing that event time.
/// Event times with no contributing cohort are omitted.
pub fn aggregate_event_study(
    estimates: &[AttGtEstimate],
    group_sizes: &BTreeMap<i64, f64>,
    e_range: (i64, i64),
) -> Result<Vec<AggregateResult>> {
    if e_range.0 > e_range.1 {
        return Err(Error::EmptyAggregation(format!(
            "empty event-time range [{}, {}]",
            e_range.0, e_range.1
        )));
    }
    let fault = fault_scale();
    let mut results = Vec::new();
    for e in e_range.0..=e_range.1 {
        let members: Vec<&AttGtEstimate> =
            estimates.iter().filter(|est| est.t - est.g == e).collect();
        if members.is_empty() {
            continue;
        }
        let mut total = 0.0;
        for est in &members {
            total += group_sizes.get(&est.g).copied().ok_or_else(|| {
                Error::EmptyAggregation(format!("no group size for cohort {}", est.g))
            })?;
        }
        let mut theta = 0.0;
        let mut weights_used = BTreeMap::new();
        for est in &members {
            let w = group_sizes[&est.g] / total;
            theta += w * est.estimate;
            weights_used.insert((est.g, est.t), w * fault);
        }
        let mut cohorts: Vec<i64> = members.iter().map(|m| m.g).collect();
        cohorts.sort_unstable();
        cohorts.dedup();
        results.push(AggregateResult {
            kind: AggregateKind::EventStudy { e },
            theta,
            weights_used,
            cohorts,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::TreatmentKind;

    fn est(g: i64, t: i64, value: f64) -> AttGtEstimate {
        AttGtEstimate {
            g,
            t,
            d: TreatmentKind::EverA,
            estimate: value,
            n_treated: 1.0,
            n_control: 1.0,
            cluster_contributions: BTreeMap::new(),
        }
    }

    #[test]
    fn overall_weighted_mean() {
        // cells {ATT=1.0, N=10}, {ATT=2.0, N=30} -> 1.75
        let estimates = vec![est(2, 2, 1.0), est(3, 3, 2.0)];
        let sizes = BTreeMap::from([(2, 10.0), (3, 30.0)]);
        let r = aggregate_overall(&estimates, &sizes).unwrap();
        assert!((r.theta - 1.75).abs() < 1e-12);
        let sum: f64 = r.weights_used.values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overall_singleton() {
        let estimates = vec![est(2, 4, 0.7)];
        let sizes = BTreeMap::from([(2, 5.0)]);
        let r = aggregate_overall(&estimates, &sizes).unwrap();
        assert_eq!(r.theta, 0.7);
    }

    #[test]
    fn overall_constant_effects() {
        let estimates = vec![est(2, 2, 1.3), est(2, 3, 1.3), est(4, 4, 1.3)];
        let sizes = BTreeMap::from([(2, 3.0), (4, 11.0)]);
        let r = aggregate_overall(&estimates, &sizes).unwrap();
        assert!((r.theta - 1.3).abs() < 1e-12);
    }

    #[test]
    fn overall_excludes_pretreatment_cells() {
        let estimates = vec![est(3, 1, 99.0), est(3, 3, 1.0)];
        let sizes = BTreeMap::from([(3, 1.0)]);
        let r = aggregate_overall(&estimates, &sizes).unwrap();
        assert_eq!(r.theta, 1.0);
        assert!(r.weights_used.keys().all(|&(g, t)| t >= g));
    }

    #[test]
    fn overall_no_post_cells_is_error() {
        let estimates = vec![est(5, 2, 1.0)];
        let sizes = BTreeMap::from([(5, 1.0)]);
        match aggregate_overall(&estimates, &sizes) {
            Err(Error::EmptyAggregation(_)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overall_invariant_to_size_rescaling() {
        let estimates = vec![est(2, 2, 1.0), est(3, 3, 2.0), est(3, 4, -0.4)];
        let s1 = BTreeMap::from([(2, 10.0), (3, 30.0)]);
        let s2 = BTreeMap::from([(2, 2.5), (3, 7.5)]);
        let r1 = aggregate_overall(&estimates, &s1).unwrap();
        let r2 = aggregate_overall(&estimates, &s2).unwrap();
        assert!((r1.theta - r2.theta).abs() < 1e-12);
    }

    #[test]
    fn overall_linear_in_effects() {
        let estimates = vec![est(2, 2, 1.0), est(3, 3, 2.0)];
        let scaled: Vec<AttGtEstimate> = estimates
            .iter()
            .map(|e| est(e.g, e.t, e.estimate * 3.0))
            .collect();
        let sizes = BTreeMap::from([(2, 1.0), (3, 2.0)]);
        let r1 = aggregate_overall(&estimates, &sizes).unwrap();
        let r2 = aggregate_overall(&scaled, &sizes).unwrap();
        assert!((r2.theta - 3.0 * r1.theta).abs() < 1e-12);
    }

    #[test]
    fn event_study_equal_weight_mean() {
        let estimates = vec![est(2, 2, 1.0), est(4, 4, 3.0)];
        let sizes = BTreeMap::from([(2, 5.0), (4, 5.0)]);
        let r = aggregate_event_study(&estimates, &sizes, (0, 0)).unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0].theta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn event_study_base_period_zero() {
        let estimates = vec![est(2, 1, 0.0), est(2, 2, 1.0)];
        let sizes = BTreeMap::from([(2, 1.0)]);
        let r = aggregate_event_study(&estimates, &sizes, (-1, 0)).unwrap();
        assert_eq!(r[0].kind, AggregateKind::EventStudy { e: -1 });
        assert_eq!(r[0].theta, 0.0);
    }

    #[test]
    fn event_study_singleton_cohort_traces_attgt() {
        let estimates = vec![est(2, 2, 1.0), est(2, 3, 1.5), est(2, 4, 2.5)];
        let sizes = BTreeMap::from([(2, 9.0)]);
        let r = aggregate_event_study(&estimates, &sizes, (0, 2)).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].theta, 1.0);
        assert_eq!(r[1].theta, 1.5);
        assert_eq!(r[2].theta, 2.5);
    }

    #[test]
    fn event_study_omits_uncovered_event_times() {
        let estimates = vec![est(2, 2, 1.0)];
        let sizes = BTreeMap::from([(2, 1.0)]);
        let r = aggregate_event_study(&estimates, &sizes, (0, 5)).unwrap();
        assert_eq!(r.len(), 1);
    }
}
