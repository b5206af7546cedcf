//! Two-way fixed-effects baseline: weighted within-estimator via iterated
//! demeaning, used to demonstrate contamination bias under heterogeneous
//! effects. Always-treated units are excluded from the sample.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::wls_fit;
use crate::panel::{FirstCohort, PanelDataset};

/// Which treatment indicators enter the regression.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TwfeSpec {
    /// Include reform B's indicator alongside reform A's.
    pub include_b: bool,
    /// Include the product of the two indicators.
    pub include_interaction: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwfeFit {
    /// Coefficients in the order of `names`.
    pub coefficients: Vec<f64>,
    pub names: Vec<String>,
    pub residual_variance: f64,
    pub n_cells: usize,
}

impl TwfeFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }
}

const DEMEAN_TOL: f64 = 1e-10;
const DEMEAN_MAX_SWEEPS: usize = 500;

/// Iterated weighted demeaning by unit then period until the largest
/// adjustment falls below tolerance.
fn demean(values: &mut [f64], weights: &[f64], n_units: usize, n_periods: usize) {
    for _ in 0..DEMEAN_MAX_SWEEPS {
        let mut max_adjust = 0.0f64;
        for u in 0..n_units {
            let rows = u * n_periods..(u + 1) * n_periods;
            let sw: f64 = weights[rows.clone()].iter().sum();
            let mean: f64 = rows
                .clone()
                .map(|i| weights[i] * values[i])
                .sum::<f64>()
                / sw;
            for i in rows {
                values[i] -= mean;
            }
            max_adjust = max_adjust.max(mean.abs());
        }
        for p in 0..n_periods {
            let mut sw = 0.0;
            let mut sv = 0.0;
            for u in 0..n_units {
                let i = u * n_periods + p;
                sw += weights[i];
                sv += weights[i] * values[i];
            }
            let mean = sv / sw;
            for u in 0..n_units {
                values[u * n_periods + p] -= mean;
            }
            max_adjust = max_adjust.max(mean.abs());
        }
        if max_adjust < DEMEAN_TOL {
            break;
        }
    }
}

/// Weighted TWFE regression of the outcome on staggered treatment
/// indicators (and optionally their product), with unit and period fixed
/// effects absorbed by demeaning.
pub fn twfe_estimate(ds: &PanelDataset, spec: TwfeSpec) -> Result<TwfeFit> {
    twfe_estimate_weighted(ds, spec, None)
}

pub(crate) fn twfe_estimate_weighted(
    ds: &PanelDataset,
    spec: TwfeSpec,
    mult: Option<&[f64]>,
) -> Result<TwfeFit> {
    let units: Vec<usize> = (0..ds.n_units())
        .filter(|&u| !ds.profile(u).always_treated())
        .collect();
    let n_units = units.len();
    let n_periods = ds.n_periods();
    if n_units < 2 || n_periods < 2 {
        return Err(Error::InsufficientData(
            "TWFE needs at least 2 units and 2 periods".into(),
        ));
    }

    let mut names = vec!["treat_a".to_string()];
    if spec.include_b {
        names.push("treat_b".to_string());
    }
    if spec.include_interaction {
        names.push("treat_a_x_b".to_string());
    }

    let n_cells = n_units * n_periods;
    let mut y = Vec::with_capacity(n_cells);
    let mut weights = Vec::with_capacity(n_cells);
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n_cells); names.len()];
    for (row, &u) in units.iter().enumerate() {
        debug_assert_eq!(row * n_periods, y.len());
        let p = ds.profile(u);
        let on = |c: FirstCohort, t: i64| match c {
            FirstCohort::Cohort(g) => (t >= g) as u8 as f64,
            _ => 0.0,
        };
        for t in ds.periods() {
            y.push(ds.outcome(u, t));
            let w = ds.weight(u, t) * mult.map(|m| m[u]).unwrap_or(1.0);
            weights.push(w);
            let da = on(p.first_a, t);
            cols[0].push(da);
            let mut idx = 1;
            if spec.include_b {
                cols[idx].push(on(p.first_b, t));
                idx += 1;
            }
            if spec.include_interaction {
                cols[idx].push(da * on(p.first_b, t));
            }
        }
    }

    demean(&mut y, &weights, n_units, n_periods);
    for col in cols.iter_mut() {
        demean(col, &weights, n_units, n_periods);
    }
    for (j, col) in cols.iter().enumerate() {
        let ss: f64 = col
            .iter()
            .zip(&weights)
            .map(|(v, w)| w * v * v)
            .sum();
        if ss < 1e-12 {
            let _ = j;
            return Err(Error::CollinearTreatment);
        }
    }

    let rows: Vec<Vec<f64>> = (0..n_cells)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let fit = wls_fit(&rows, &y, &weights).map_err(|e| match e {
        Error::SingularDesign { .. } => Error::CollinearTreatment,
        other => other,
    })?;
    let sw: f64 = weights.iter().sum();
    Ok(TwfeFit {
        coefficients: fit.coefficients,
        names,
        residual_variance: fit.rss / sw,
        n_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attgt::att_gt_unconditional;
    use crate::panel::{assign_treatment_masks, Cell, PanelDataset, TreatmentProfile};
    use std::collections::BTreeMap;

    fn two_by_two(y_t_pre: f64, y_t_post: f64, y_c_pre: f64, y_c_post: f64) -> PanelDataset {
        let mut profiles = BTreeMap::new();
        profiles.insert(
            "t".to_string(),
            TreatmentProfile {
                first_a: FirstCohort::Cohort(1),
                first_b: FirstCohort::Never,
            },
        );
        profiles.insert(
            "c".to_string(),
            TreatmentProfile {
                first_a: FirstCohort::Never,
                first_b: FirstCohort::Never,
            },
        );
        let cells = vec![
            Cell { unit_id: "t".into(), period: 0, outcome: y_t_pre, weight: 1.0, covariates: vec![] },
            Cell { unit_id: "t".into(), period: 1, outcome: y_t_post, weight: 1.0, covariates: vec![] },
            Cell { unit_id: "c".into(), period: 0, outcome: y_c_pre, weight: 1.0, covariates: vec![] },
            Cell { unit_id: "c".into(), period: 1, outcome: y_c_post, weight: 1.0, covariates: vec![] },
        ];
        PanelDataset::from_cells(cells, &profiles, vec![]).unwrap().0
    }

    #[test]
    fn canonical_2x2_matches_simple_did() {
        let ds = two_by_two(1.0, 4.0, 2.0, 3.0);
        let fit = twfe_estimate(&ds, TwfeSpec { include_b: false, include_interaction: false })
            .unwrap();
        // simple DiD = (4-1) - (3-2) = 2
        assert!((fit.coefficient("treat_a").unwrap() - 2.0).abs() < 1e-10);

        let masks = assign_treatment_masks(&ds).unwrap();
        let att = att_gt_unconditional(&ds, &masks[0], 1, 1).unwrap();
        assert!((fit.coefficient("treat_a").unwrap() - att.estimate).abs() < 1e-10);
    }

    #[test]
    fn invariant_to_unit_and_period_constants() {
        let base = two_by_two(1.0, 4.0, 2.0, 3.0);
        // add +10 to unit t's outcomes and +5 to period 1's outcomes
        let shifted = two_by_two(11.0, 19.0, 2.0, 8.0);
        let f1 = twfe_estimate(&base, TwfeSpec { include_b: false, include_interaction: false })
            .unwrap();
        let f2 = twfe_estimate(&shifted, TwfeSpec { include_b: false, include_interaction: false })
            .unwrap();
        assert!(
            (f1.coefficient("treat_a").unwrap() - f2.coefficient("treat_a").unwrap()).abs() < 1e-8
        );
    }

    #[test]
    fn no_treatment_variation_is_collinear() {
        let mut profiles = BTreeMap::new();
        for id in ["a", "b"] {
            profiles.insert(
                id.to_string(),
                TreatmentProfile {
                    first_a: FirstCohort::Never,
                    first_b: FirstCohort::Never,
                },
            );
        }
        let cells: Vec<Cell> = ["a", "b"]
            .iter()
            .flat_map(|id| {
                (0..2).map(move |t| Cell {
                    unit_id: id.to_string(),
                    period: t,
                    outcome: t as f64,
                    weight: 1.0,
                    covariates: vec![],
                })
            })
            .collect();
        let ds = PanelDataset::from_cells(cells, &profiles, vec![]).unwrap().0;
        match twfe_estimate(&ds, TwfeSpec { include_b: false, include_interaction: false }) {
            Err(Error::CollinearTreatment) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
