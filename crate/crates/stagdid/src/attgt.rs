//! Group-time average treatment effects ATT(g, t, d): unconditional
//! difference of weighted outcome-evolution means against never-treated
//! controls, and the regression-adjusted variant that predicts the
//! counterfactual evolution from control covariates.
//!
//! The base period is always g-1, for pre- and post-treatment t alike.
//! Cell weights are taken from period t.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::wls_fit;
use crate::panel::{PanelDataset, TreatmentKind, TreatmentMask};

/// Per-unit contribution to one ATT(g, t): weight and value on each side.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Contribution {
    pub treated_w: f64,
    pub treated_v: f64,
    pub control_w: f64,
    pub control_v: f64,
}

/// One group-time effect with its cluster-level contribution ledger.
#[derive(Debug, Clone, Serialize)]
pub struct AttGtEstimate {
    pub g: i64,
    pub t: i64,
    pub d: TreatmentKind,
    pub estimate: f64,
    pub n_treated: f64,
    pub n_control: f64,
    /// unit index -> contribution; sufficient to re-evaluate the estimate
    /// under perturbed cluster weights.
    pub cluster_contributions: BTreeMap<usize, Contribution>,
}

impl AttGtEstimate {
    /// Event time relative to treatment start.
    pub fn event_time(&self) -> i64 {
        self.t - self.g
    }

    /// Re-evaluate the estimate with per-unit weight multipliers (missing
    /// units multiply by 1).
    pub fn reevaluate(&self, unit_multipliers: &BTreeMap<usize, f64>) -> f64 {
        let mut tw = 0.0;
        let mut tv = 0.0;
        let mut cw = 0.0;
        let mut cv = 0.0;
        for (unit, c) in &self.cluster_contributions {
            let m = unit_multipliers.get(unit).copied().unwrap_or(1.0);
            tw += m * c.treated_w;
            tv += m * c.treated_w * c.treated_v;
            cw += m * c.control_w;
            cv += m * c.control_w * c.control_v;
        }
        if tw == 0.0 && cw == 0.0 {
            return 0.0;
        }
        tv / tw - cv / cw
    }
}

/// Estimation mode for the group-time effects.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimationMode {
    Unconditional,
    /// Regression adjustment on the named covariate columns.
    Conditional(Vec<String>),
}

fn delta_y(ds: &PanelDataset, unit: usize, g: i64, t: i64) -> f64 {
    ds.outcome(unit, t) - ds.outcome(unit, g - 1)
}

fn cell_weight(ds: &PanelDataset, mult: Option<&[f64]>, unit: usize, t: i64) -> f64 {
    let w = ds.weight(unit, t);
    match mult {
        Some(m) => w * m[unit],
        None => w,
    }
}

/// Unconditional estimator: weighted mean of the outcome evolution
/// from g-1 to t over cohort-g treated units, minus the same mean over
/// never-treated controls.
pub fn att_gt_unconditional(
    ds: &PanelDataset,
    mask: &TreatmentMask,
    g: i64,
    t: i64,
) -> Result<AttGtEstimate> {
    att_gt_unconditional_weighted(ds, mask, g, t, None)
}

pub(crate) fn att_gt_unconditional_weighted(
    ds: &PanelDataset,
    mask: &TreatmentMask,
    g: i64,
    t: i64,
    mult: Option<&[f64]>,
) -> Result<AttGtEstimate> {
    check_periods(ds, g, t)?;
    let cohort: Vec<usize> = mask
        .treated
        .iter()
        .filter(|(_, &gg)| gg == g)
        .map(|(&u, _)| u)
        .collect();
    if cohort.is_empty() {
        return Err(Error::EmptyCohort { g, d: mask.d.code() });
    }
    if mask.controls.is_empty() {
        return Err(Error::UnusableControl);
    }
    if t == g - 1 {
        return Ok(degenerate(ds, mask, g, t, mult, &cohort));
    }

    // The contribution ledger only serves diagnostics on the point
    // estimate; bootstrap draws (mult set) skip it.
    let keep_ledger = mult.is_none();
    let mut contributions = BTreeMap::new();
    let mut tw = 0.0;
    let mut tv = 0.0;
    for &u in &cohort {
        let w = cell_weight(ds, mult, u, t);
        let v = delta_y(ds, u, g, t);
        tw += w;
        tv += w * v;
        if keep_ledger {
            contributions.insert(
                u,
                Contribution {
                    treated_w: ds.weight(u, t),
                    treated_v: v,
                    ..Default::default()
                },
            );
        }
    }
    let mut cw = 0.0;
    let mut cv = 0.0;
    for &u in &mask.controls {
        let w = cell_weight(ds, mult, u, t);
        let v = delta_y(ds, u, g, t);
        cw += w;
        cv += w * v;
        if keep_ledger {
            contributions.insert(
                u,
                Contribution {
                    control_w: ds.weight(u, t),
                    control_v: v,
                    ..Default::default()
                },
            );
        }
    }
    Ok(AttGtEstimate {
        g,
        t,
        d: mask.d,
        estimate: tv / tw - cv / cw,
        n_treated: tw,
        n_control: cw,
        cluster_contributions: contributions,
    })
}

/// Regression-adjusted estimator: fit WLS of the outcome evolution on
/// (1, X) over controls, then average treated evolutions minus their
/// predicted counterfactual evolutions.
pub fn att_gt_conditional(
    ds: &PanelDataset,
    mask: &TreatmentMask,
    g: i64,
    t: i64,
    covariate_names: &[String],
) -> Result<AttGtEstimate> {
    att_gt_conditional_weighted(ds, mask, g, t, covariate_names, None)
}

pub(crate) fn att_gt_conditional_weighted(
    ds: &PanelDataset,
    mask: &TreatmentMask,
    g: i64,
    t: i64,
    covariate_names: &[String],
    mult: Option<&[f64]>,
) -> Result<AttGtEstimate> {
    check_periods(ds, g, t)?;
    let cohort: Vec<usize> = mask
        .treated
        .iter()
        .filter(|(_, &gg)| gg == g)
        .map(|(&u, _)| u)
        .collect();
    if cohort.is_empty() {
        return Err(Error::EmptyCohort { g, d: mask.d.code() });
    }
    if t == g - 1 {
        return Ok(degenerate(ds, mask, g, t, mult, &cohort));
    }
    let cov_idx: Vec<usize> = covariate_names
        .iter()
        .map(|n| {
            ds.covariate_names()
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Schema(format!("unknown covariate '{n}'")))
        })
        .collect::<Result<_>>()?;
    let k = cov_idx.len();
    if mask.controls.len() <= k + 1 {
        return Err(Error::InsufficientControls {
            have: mask.controls.len(),
            need: k + 1,
        });
    }

    // Covariates enter as pretreatment levels: values at the base period g-1.
    let design_row = |u: usize| -> Vec<f64> {
        let cells = ds.cell_covariates(u, g - 1);
        std::iter::once(1.0)
            .chain(cov_idx.iter().map(|&i| cells[i]))
            .collect()
    };

    let mut x = Vec::with_capacity(mask.controls.len());
    let mut y = Vec::with_capacity(mask.controls.len());
    let mut w = Vec::with_capacity(mask.controls.len());
    for &u in &mask.controls {
        x.push(design_row(u));
        y.push(delta_y(ds, u, g, t));
        w.push(cell_weight(ds, mult, u, t));
    }
    let fit = wls_fit(&x, &y, &w)?;

    let keep_ledger = mult.is_none();
    let mut contributions = BTreeMap::new();
    let mut tw = 0.0;
    let mut tv = 0.0;
    for &u in &cohort {
        let wu = cell_weight(ds, mult, u, t);
        let resid = delta_y(ds, u, g, t) - fit.predict(&design_row(u));
        tw += wu;
        tv += wu * resid;
        if keep_ledger {
            contributions.insert(
                u,
                Contribution {
                    treated_w: ds.weight(u, t),
                    treated_v: resid,
                    ..Default::default()
                },
            );
        }
    }
    let n_control: f64 = mask
        .controls
        .iter()
        .map(|&u| cell_weight(ds, mult, u, t))
        .sum();
    if keep_ledger {
        for &u in &mask.controls {
            contributions.insert(
                u,
                Contribution {
                    control_w: ds.weight(u, t),
                    control_v: 0.0,
                    ..Default::default()
                },
            );
        }
    }
    Ok(AttGtEstimate {
        g,
        t,
        d: mask.d,
        estimate: tv / tw,
        n_treated: tw,
        n_control,
        cluster_contributions: contributions,
    })
}

fn check_periods(ds: &PanelDataset, g: i64, t: i64) -> Result<()> {
    if g - 1 < ds.t_min() || g > ds.t_max() {
        return Err(Error::Data(format!(
            "cohort {g}: base period {} outside range [{}, {}]",
            g - 1,
            ds.t_min(),
            ds.t_max()
        )));
    }
    if t < ds.t_min() || t > ds.t_max() {
        return Err(Error::Data(format!(
            "period {t} outside range [{}, {}]",
            ds.t_min(),
            ds.t_max()
        )));
    }
    Ok(())
}

fn degenerate(
    ds: &PanelDataset,
    mask: &TreatmentMask,
    g: i64,
    t: i64,
    mult: Option<&[f64]>,
    cohort: &[usize],
) -> AttGtEstimate {
    // t = g-1: the evolution from g-1 to g-1 is identically zero.
    let n_treated = cohort.iter().map(|&u| cell_weight(ds, mult, u, t)).sum();
    let n_control = mask
        .controls
        .iter()
        .map(|&u| cell_weight(ds, mult, u, t))
        .sum();
    AttGtEstimate {
        g,
        t,
        d: mask.d,
        estimate: 0.0,
        n_treated,
        n_control,
        cluster_contributions: BTreeMap::new(),
    }
}

/// Why a cohort was skipped by [`compute_all_att_gt`].
#[derive(Debug, Clone, Serialize)]
pub struct SkipLog {
    pub g: i64,
    pub reason: String,
}

/// Every ATT(g, t) for the mask: g over observed cohorts, t over all periods
/// from t_min + 1, base period g-1 throughout. Cohorts failing preconditions
/// are skipped with a logged reason. Results are sorted by (g, t).
pub fn compute_all_att_gt(
    ds: &PanelDataset,
    mask: &TreatmentMask,
    mode: &EstimationMode,
) -> Result<(Vec<AttGtEstimate>, Vec<SkipLog>)> {
    compute_all_att_gt_weighted(ds, mask, mode, None)
}

pub(crate) fn compute_all_att_gt_weighted(
    ds: &PanelDataset,
    mask: &TreatmentMask,
    mode: &EstimationMode,
    mult: Option<&[f64]>,
) -> Result<(Vec<AttGtEstimate>, Vec<SkipLog>)> {
    let mut cohorts: Vec<i64> = mask.treated.values().copied().collect();
    cohorts.sort_unstable();
    cohorts.dedup();

    let mut estimates = Vec::new();
    let mut skips = Vec::new();
    'cohort: for &g in &cohorts {
        if g - 1 < ds.t_min() {
            skips.push(SkipLog {
                g,
                reason: format!("base period {} precedes panel start", g - 1),
            });
            continue;
        }
        let mut cohort_estimates = Vec::new();
        for t in (ds.t_min() + 1)..=ds.t_max() {
            let result = match mode {
                EstimationMode::Unconditional => {
                    att_gt_unconditional_weighted(ds, mask, g, t, mult)
                }
                EstimationMode::Conditional(covs) => {
                    att_gt_conditional_weighted(ds, mask, g, t, covs, mult)
                }
            };
            match result {
                Ok(est) => cohort_estimates.push(est),
                Err(e) => {
                    skips.push(SkipLog {
                        g,
                        reason: e.to_string(),
                    });
                    continue 'cohort;
                }
            }
        }
        estimates.extend(cohort_estimates);
    }
    if estimates.is_empty() {
        let detail = skips
            .iter()
            .map(|s| format!("cohort {}: {}", s.g, s.reason))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::NoEstimates(if detail.is_empty() {
            format!("mask d={} has no treated cohorts", mask.d.code())
        } else {
            detail
        }));
    }
    Ok((estimates, skips))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Cell, FirstCohort, PanelDataset, TreatmentProfile};
    use std::collections::BTreeMap;

    /// Build a panel where unit outcomes are given per period and treated
    /// units share cohort g = 2 on reform A.
    pub(crate) fn panel_from_outcomes(
        treated: &[(&str, Vec<f64>, f64)],
        controls: &[(&str, Vec<f64>, f64)],
        g: i64,
    ) -> PanelDataset {
        let mut cells = Vec::new();
        let mut profiles = BTreeMap::new();
        for (is_treated, group) in [(true, treated), (false, controls)] {
            for (id, ys, w) in group.iter() {
                profiles.insert(
                    id.to_string(),
                    TreatmentProfile {
                        first_a: if is_treated {
                            FirstCohort::Cohort(g)
                        } else {
                            FirstCohort::Never
                        },
                        first_b: FirstCohort::Never,
                    },
                );
                for (t, y) in ys.iter().enumerate() {
                    cells.push(Cell {
                        unit_id: id.to_string(),
                        period: t as i64,
                        outcome: *y,
                        weight: *w,
                        covariates: vec![],
                    });
                }
            }
        }
        PanelDataset::from_cells(cells, &profiles, vec![]).unwrap().0
    }

    fn masks(ds: &PanelDataset) -> Vec<TreatmentMask> {
        crate::panel::assign_treatment_masks(ds).unwrap()
    }

    #[test]
    fn weighted_difference_of_means() {
        // treated dY {3, 5} weights {1, 1}; control dY {1, 1} weights {1, 3}
        let ds = panel_from_outcomes(
            &[("t1", vec![0.0, 0.0, 3.0], 1.0), ("t2", vec![0.0, 0.0, 5.0], 1.0)],
            &[("c1", vec![0.0, 0.0, 1.0], 1.0), ("c2", vec![0.0, 0.0, 1.0], 3.0)],
            2,
        );
        let m = masks(&ds);
        let est = att_gt_unconditional(&ds, &m[0], 2, 2).unwrap();
        assert!((est.estimate - 3.0).abs() < 1e-12);
        assert_eq!(est.n_treated, 2.0);
        assert_eq!(est.n_control, 4.0);
    }

    #[test]
    fn identical_groups_give_zero() {
        let ds = panel_from_outcomes(
            &[("t1", vec![1.0, 2.0, 4.0], 2.0)],
            &[("c1", vec![0.0, 1.0, 3.0], 1.0), ("c2", vec![5.0, 6.0, 8.0], 4.0)],
            2,
        );
        let m = masks(&ds);
        let est = att_gt_unconditional(&ds, &m[0], 2, 2).unwrap();
        assert!(est.estimate.abs() < 1e-12);
    }

    #[test]
    fn base_period_is_degenerate_zero() {
        let ds = panel_from_outcomes(
            &[("t1", vec![1.0, 2.0, 4.0], 1.0)],
            &[("c1", vec![0.0, 9.0, 3.0], 1.0)],
            2,
        );
        let m = masks(&ds);
        let est = att_gt_unconditional(&ds, &m[0], 2, 1).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert!(est.cluster_contributions.is_empty());
    }

    #[test]
    fn empty_cohort_is_an_error() {
        let ds = panel_from_outcomes(
            &[("t1", vec![0.0, 0.0, 1.0], 1.0)],
            &[("c1", vec![0.0, 0.0, 0.0], 1.0)],
            2,
        );
        let m = masks(&ds);
        match att_gt_unconditional(&ds, &m[0], 1, 2) {
            Err(Error::EmptyCohort { g: 1, d: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reevaluate_reproduces_estimate() {
        let ds = panel_from_outcomes(
            &[("t1", vec![0.1, 0.4, 3.3], 2.0), ("t2", vec![-0.2, 0.0, 5.5], 1.5)],
            &[("c1", vec![0.3, 0.1, 1.2], 1.0), ("c2", vec![0.9, 0.2, 1.1], 3.0)],
            2,
        );
        let m = masks(&ds);
        let est = att_gt_unconditional(&ds, &m[0], 2, 2).unwrap();
        let identity = BTreeMap::new();
        assert!((est.reevaluate(&identity) - est.estimate).abs() < 1e-12);
    }

    fn panel_with_covariate(
        treated: &[(&str, Vec<f64>, f64, f64)],
        controls: &[(&str, Vec<f64>, f64, f64)],
        g: i64,
    ) -> PanelDataset {
        let mut cells = Vec::new();
        let mut profiles = BTreeMap::new();
        for (is_treated, group) in [(true, treated), (false, controls)] {
            for (id, ys, w, x) in group.iter() {
                profiles.insert(
                    id.to_string(),
                    TreatmentProfile {
                        first_a: if is_treated {
                            FirstCohort::Cohort(g)
                        } else {
                            FirstCohort::Never
                        },
                        first_b: FirstCohort::Never,
                    },
                );
                for (t, y) in ys.iter().enumerate() {
                    cells.push(Cell {
                        unit_id: id.to_string(),
                        period: t as i64,
                        outcome: *y,
                        weight: *w,
                        covariates: vec![*x],
                    });
                }
            }
        }
        PanelDataset::from_cells(cells, &profiles, vec!["x".into()])
            .unwrap()
            .0
    }

    #[test]
    fn conditional_with_no_covariates_matches_unconditional() {
        let ds = panel_with_covariate(
            &[("t1", vec![0.0, 0.0, 3.0], 1.0, 0.3), ("t2", vec![0.0, 0.0, 5.0], 2.0, 0.9)],
            &[
                ("c1", vec![0.0, 0.0, 1.0], 1.0, 0.1),
                ("c2", vec![0.0, 0.0, 2.0], 3.0, 0.8),
                ("c3", vec![0.0, 0.0, 0.5], 2.0, 0.5),
            ],
            2,
        );
        let m = masks(&ds);
        let uncond = att_gt_unconditional(&ds, &m[0], 2, 2).unwrap();
        let cond = att_gt_conditional(&ds, &m[0], 2, 2, &[]).unwrap();
        assert!((uncond.estimate - cond.estimate).abs() < 1e-12);
    }

    #[test]
    fn conditional_exact_linear_fit() {
        // controls obey dY = 2x exactly; treated all have x = 1, dY = 5
        let ds = panel_with_covariate(
            &[("t1", vec![0.0, 0.0, 5.0], 1.0, 1.0), ("t2", vec![0.0, 0.0, 5.0], 3.0, 1.0)],
            &[
                ("c1", vec![0.0, 0.0, 0.2], 1.0, 0.1),
                ("c2", vec![0.0, 0.0, 1.6], 2.0, 0.8),
                ("c3", vec![0.0, 0.0, 1.0], 1.0, 0.5),
            ],
            2,
        );
        let m = masks(&ds);
        let est = att_gt_conditional(&ds, &m[0], 2, 2, &["x".to_string()]).unwrap();
        assert!((est.estimate - 3.0).abs() < 1e-10, "{}", est.estimate);
    }

    #[test]
    fn conditional_constant_covariate_is_singular() {
        // constant covariate collides with the intercept
        let ds = panel_with_covariate(
            &[("t1", vec![0.0, 0.0, 5.0], 1.0, 1.0)],
            &[
                ("c1", vec![0.0, 0.0, 0.2], 1.0, 0.7),
                ("c2", vec![0.0, 0.0, 1.6], 2.0, 0.7),
                ("c3", vec![0.0, 0.0, 1.0], 1.0, 0.7),
            ],
            2,
        );
        let m = masks(&ds);
        match att_gt_conditional(&ds, &m[0], 2, 2, &["x".to_string()]) {
            Err(Error::SingularDesign { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn compute_all_enumerates_and_skips() {
        let ds = panel_from_outcomes(
            &[("t1", vec![0.0, 0.0, 1.0, 2.0], 1.0)],
            &[("c1", vec![0.0, 0.0, 0.0, 0.0], 1.0)],
            2,
        );
        let m = masks(&ds);
        let (ests, skips) =
            compute_all_att_gt(&ds, &m[0], &EstimationMode::Unconditional).unwrap();
        // t = 1, 2, 3 for cohort 2
        assert_eq!(ests.len(), 3);
        assert!(skips.is_empty());
        assert_eq!(ests[0].t, 1);
        assert_eq!(ests[0].estimate, 0.0); // base period
        assert!((ests[1].estimate - 1.0).abs() < 1e-12);
        assert!((ests[2].estimate - 2.0).abs() < 1e-12);
    }

    #[test]
    fn compute_all_skips_cohort_at_panel_start() {
        // cohort g = 0 has no base period and is skipped with a reason
        let ds = panel_from_outcomes(
            &[("t1", vec![0.0, 1.0, 2.0], 1.0)],
            &[("c1", vec![0.0, 0.0, 0.0], 1.0)],
            0,
        );
        let m = masks(&ds);
        match compute_all_att_gt(&ds, &m[0], &EstimationMode::Unconditional) {
            Err(Error::NoEstimates(msg)) => assert!(msg.contains("cohort 0"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_shift_of_period_t_cancels() {
        let base = panel_from_outcomes(
            &[("t1", vec![0.0, 0.1, 3.0], 1.0), ("t2", vec![0.4, 0.2, 5.0], 2.0)],
            &[("c1", vec![0.2, 0.0, 1.0], 1.0), ("c2", vec![0.8, 0.3, 1.5], 3.0)],
            2,
        );
        let shifted = panel_from_outcomes(
            &[("t1", vec![0.0, 0.1, 10.0], 1.0), ("t2", vec![0.4, 0.2, 12.0], 2.0)],
            &[("c1", vec![0.2, 0.0, 8.0], 1.0), ("c2", vec![0.8, 0.3, 8.5], 3.0)],
            2,
        );
        let mb = masks(&base);
        let ms = masks(&shifted);
        let e1 = att_gt_unconditional(&base, &mb[0], 2, 2).unwrap();
        let e2 = att_gt_unconditional(&shifted, &ms[0], 2, 2).unwrap();
        assert!((e1.estimate - e2.estimate).abs() < 1e-12);
    }

    #[test]
    fn weight_scaling_leaves_estimate_unchanged() {
        let a = panel_from_outcomes(
            &[("t1", vec![0.0, 0.0, 3.0], 1.0), ("t2", vec![0.0, 0.0, 5.0], 2.0)],
            &[("c1", vec![0.0, 0.0, 1.0], 1.0), ("c2", vec![0.0, 0.0, 2.0], 3.0)],
            2,
        );
        let b = panel_from_outcomes(
            &[("t1", vec![0.0, 0.0, 3.0], 7.0), ("t2", vec![0.0, 0.0, 5.0], 14.0)],
            &[("c1", vec![0.0, 0.0, 1.0], 7.0), ("c2", vec![0.0, 0.0, 2.0], 21.0)],
            2,
        );
        let ma = masks(&a);
        let mb = masks(&b);
        let e1 = att_gt_unconditional(&a, &ma[0], 2, 2).unwrap();
        let e2 = att_gt_unconditional(&b, &mb[0], 2, 2).unwrap();
        assert!((e1.estimate - e2.estimate).abs() < 1e-12);
    }
}
