//! One full estimation pass: group-time effects for the requested treatment
//! combinations, their overall and event-study aggregates, and optionally
//! the complementary (joint minus singular) effects.
//!
//! The pass is a pure function of the dataset, the spec, and an optional
//! per-unit weight multiplier, which is what lets the bootstrap re-run it
//! under perturbed cluster weights.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::aggregate::{
    aggregate_event_study, aggregate_overall_opts, group_sizes_weighted, AggregateResult,
};
use crate::attgt::{compute_all_att_gt_weighted, AttGtEstimate, EstimationMode, SkipLog};
use crate::complement::{aggregate_complementary, pair_complements, ComplementEstimate};
use crate::error::{Error, Result};
use crate::panel::{assign_treatment_masks, PanelDataset, TreatmentKind};

/// What to estimate in one pass.
#[derive(Debug, Clone)]
pub struct PipelineSpec {
    pub treatments: Vec<TreatmentKind>,
    pub mode: EstimationMode,
    /// Event-time range for the event-study aggregates.
    pub event_window: (i64, i64),
    /// Also compute joint-minus-singular complementary effects (requires
    /// treated units for both d = 4 and d = 2).
    pub complement: bool,
    /// Average within cohort before weighting by group size.
    pub cohort_first: bool,
    /// Extra per-unit weight multipliers (inverse-probability weights),
    /// keyed by unit id; absent units get 1.
    pub unit_weight_multipliers: Option<BTreeMap<String, f64>>,
}

impl PipelineSpec {
    pub fn unconditional(treatments: Vec<TreatmentKind>) -> PipelineSpec {
        PipelineSpec {
            treatments,
            mode: EstimationMode::Unconditional,
            event_window: (-5, 10),
            complement: false,
            cohort_first: false,
            unit_weight_multipliers: None,
        }
    }
}

/// Complementary-effect block of a pipeline pass.
#[derive(Debug, Clone)]
pub struct ComplementOutput {
    pub deltas: Vec<ComplementEstimate>,
    pub overall: AggregateResult,
    /// (g, t) cells present for only one of d = 4 and d = 2.
    pub excluded_cells: usize,
}

/// Everything one pass produces, keyed by treatment code d.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub attgt: BTreeMap<u8, Vec<AttGtEstimate>>,
    pub skips: BTreeMap<u8, Vec<SkipLog>>,
    pub group_sizes: BTreeMap<u8, BTreeMap<i64, f64>>,
    pub overall: BTreeMap<u8, AggregateResult>,
    pub event_study: BTreeMap<u8, Vec<AggregateResult>>,
    pub complement: Option<ComplementOutput>,
}

/// A scalar estimand the bootstrap can attach intervals to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum EstimandKey {
    Overall(u8),
    EventStudy(u8, i64),
    Complement,
}

impl fmt::Display for EstimandKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimandKey::Overall(d) => write!(f, "overall_d{d}"),
            EstimandKey::EventStudy(d, e) => write!(f, "eventstudy_d{d}_e{e}"),
            EstimandKey::Complement => write!(f, "complement"),
        }
    }
}

/// Treatment combinations with at least one treated unit.
pub fn available_treatments(ds: &PanelDataset) -> Result<Vec<TreatmentKind>> {
    let masks = assign_treatment_masks(ds)?;
    Ok(masks
        .iter()
        .filter(|m| !m.treated.is_empty())
        .map(|m| m.d)
        .collect())
}

/// Run one estimation pass. `mult` is a per-unit-index multiplier (bootstrap
/// cluster weights); it composes with the spec's unit weight multipliers.
pub fn run_pipeline(
    ds: &PanelDataset,
    spec: &PipelineSpec,
    mult: Option<&[f64]>,
) -> Result<PipelineOutput> {
    if spec.treatments.is_empty() && !spec.complement {
        return Err(Error::Config("no treatments requested".into()));
    }
    if let Some(m) = mult {
        if m.len() != ds.n_units() {
            return Err(Error::Dimension(format!(
                "multiplier length {} for {} units",
                m.len(),
                ds.n_units()
            )));
        }
    }
    let combined: Option<Vec<f64>> = match &spec.unit_weight_multipliers {
        Some(by_id) => {
            let mut v = Vec::with_capacity(ds.n_units());
            for u in 0..ds.n_units() {
                let base = by_id.get(ds.unit_id(u)).copied().unwrap_or(1.0);
                v.push(base * mult.map(|m| m[u]).unwrap_or(1.0));
            }
            Some(v)
        }
        None => mult.map(|m| m.to_vec()),
    };
    let combined = combined.as_deref();

    let masks = assign_treatment_masks(ds)?;
    let mask_of = |d: TreatmentKind| masks.iter().find(|m| m.d == d).expect("all masks built");

    // The complementary block needs d = 4 and d = 2 even when not requested.
    let mut wanted = spec.treatments.clone();
    if spec.complement {
        for d in [TreatmentKind::Both, TreatmentKind::OnlyA] {
            if !wanted.contains(&d) {
                wanted.push(d);
            }
        }
    }

    let mut attgt = BTreeMap::new();
    let mut skips = BTreeMap::new();
    let mut group_sizes = BTreeMap::new();
    let mut overall = BTreeMap::new();
    let mut event_study = BTreeMap::new();
    for &d in &wanted {
        let mask = mask_of(d);
        let (estimates, skip) = compute_all_att_gt_weighted(ds, mask, &spec.mode, combined)?;
        let sizes = group_sizes_weighted(ds, mask, combined);
        let requested = spec.treatments.contains(&d);
        if requested {
            overall.insert(
                d.code(),
                aggregate_overall_opts(&estimates, &sizes, spec.cohort_first)?,
            );
            event_study.insert(
                d.code(),
                aggregate_event_study(&estimates, &sizes, spec.event_window)?,
            );
        }
        attgt.insert(d.code(), estimates);
        skips.insert(d.code(), skip);
        group_sizes.insert(d.code(), sizes);
    }

    let complement = if spec.complement {
        let (deltas, excluded_cells) = pair_complements(
            &attgt[&TreatmentKind::Both.code()],
            &attgt[&TreatmentKind::OnlyA.code()],
        )?;
        let overall = aggregate_complementary(&deltas, &group_sizes[&TreatmentKind::Both.code()])?;
        Some(ComplementOutput {
            deltas,
            overall,
            excluded_cells,
        })
    } else {
        None
    };

    // Treatments computed only for the complement block stay out of the
    // reported per-d maps.
    for d in &wanted {
        if !spec.treatments.contains(d) {
            attgt.remove(&d.code());
            skips.remove(&d.code());
            group_sizes.remove(&d.code());
        }
    }

    Ok(PipelineOutput {
        attgt,
        skips,
        group_sizes,
        overall,
        event_study,
        complement,
    })
}

/// The scalar estimands of a pass, in deterministic key order.
pub fn estimand_points(out: &PipelineOutput) -> BTreeMap<EstimandKey, f64> {
    let mut points = BTreeMap::new();
    for (&d, agg) in &out.overall {
        points.insert(EstimandKey::Overall(d), agg.theta);
    }
    for (&d, aggs) in &out.event_study {
        for agg in aggs {
            if let crate::aggregate::AggregateKind::EventStudy { e } = agg.kind {
                points.insert(EstimandKey::EventStudy(d, e), agg.theta);
            }
        }
    }
    if let Some(c) = &out.complement {
        points.insert(EstimandKey::Complement, c.overall.theta);
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_panel, scenarios};

    #[test]
    fn pass_on_s4_covers_all_blocks() {
        let gen = generate_panel(&scenarios::s4(5)).unwrap();
        let spec = PipelineSpec {
            complement: true,
            ..PipelineSpec::unconditional(TreatmentKind::ALL.to_vec())
        };
        let out = run_pipeline(&gen.dataset, &spec, None).unwrap();
        assert_eq!(out.overall.len(), 4);
        assert!(out.complement.is_some());
        let points = estimand_points(&out);
        assert!(points.contains_key(&EstimandKey::Overall(1)));
        assert!(points.contains_key(&EstimandKey::Complement));
        assert!(points
            .keys()
            .any(|k| matches!(k, EstimandKey::EventStudy(1, 0))));
    }

    #[test]
    fn complement_without_requesting_d2_d4() {
        let gen = generate_panel(&scenarios::s4(5)).unwrap();
        let spec = PipelineSpec {
            complement: true,
            ..PipelineSpec::unconditional(vec![TreatmentKind::EverA])
        };
        let out = run_pipeline(&gen.dataset, &spec, None).unwrap();
        assert!(out.complement.is_some());
        // unrequested treatments do not leak into the per-d maps
        assert!(!out.attgt.contains_key(&2));
        assert_eq!(out.overall.len(), 1);
    }

    #[test]
    fn unit_multiplier_of_one_changes_nothing() {
        let gen = generate_panel(&scenarios::s1(2)).unwrap();
        let spec = PipelineSpec::unconditional(vec![TreatmentKind::EverA]);
        let base = run_pipeline(&gen.dataset, &spec, None).unwrap();
        let ones = vec![1.0; gen.dataset.n_units()];
        let same = run_pipeline(&gen.dataset, &spec, Some(&ones)).unwrap();
        assert_eq!(
            estimand_points(&base)[&EstimandKey::Overall(1)],
            estimand_points(&same)[&EstimandKey::Overall(1)]
        );
    }

    #[test]
    fn available_treatments_reflects_dgp() {
        let s1 = generate_panel(&scenarios::s1(0)).unwrap();
        let av = available_treatments(&s1.dataset).unwrap();
        assert_eq!(av, vec![TreatmentKind::EverA, TreatmentKind::OnlyA]);
        let s4 = generate_panel(&scenarios::s4(0)).unwrap();
        let av4 = available_treatments(&s4.dataset).unwrap();
        assert_eq!(av4, TreatmentKind::ALL.to_vec());
    }

    #[test]
    fn empty_request_is_config_error() {
        let gen = generate_panel(&scenarios::s1(0)).unwrap();
        let spec = PipelineSpec::unconditional(vec![]);
        assert!(matches!(
            run_pipeline(&gen.dataset, &spec, None),
            Err(Error::Config(_))
        ));
    }
}
