//! Synthetic panel generator with an analytically known effect surface.
//!
//! Unit category, treatment cohort, and cell weight are deterministic
//! functions of the configuration and the unit index, so the true effect
//! surface is recomputable from the configuration alone. The seed drives
//! only covariate noise, unit and period effects, attrition draws, and
//! outcome noise, none of which enter the truth.
//!
//! Scenarios (selected through the parameters):
//! - S1: homogeneous constant effect.
//! - S2: event-time heterogeneity with staggered adoption.
//! - S3: covariate-dependent trends (unconditional parallel trends violated,
//!   conditional version holds).
//! - S4: interaction, joint effect differing from the sum of singular ones.
//! - S5: outcome-independent attrition of control units driven by an
//!   observable covariate.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{inverse_mills, norm_cdf};
use crate::panel::{Cell, FirstCohort, PanelDataset, TreatmentProfile};
use crate::selection::FirstStageRow;

/// Base effect at event time 0 plus a linear event-time slope.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct EffectSpec {
    pub base: f64,
    #[serde(default)]
    pub slope: f64,
}

impl EffectSpec {
    pub fn at(&self, e: i64) -> f64 {
        self.base + self.slope * e as f64
    }
}

/// Attrition of control units: inclusion probability
/// Phi(intercept + slope * x), plus a loading of the implied inverse Mills
/// ratio on the outcome's linear time trend (what the correction removes).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SelectionSpec {
    pub intercept: f64,
    pub slope: f64,
    #[serde(default)]
    pub trend_coef: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DgpConfig {
    pub n_units: usize,
    pub n_periods: usize,
    /// Treatment cohorts (period indices, each >= 1).
    pub cohorts: Vec<i64>,
    pub share_a_only: f64,
    #[serde(default)]
    pub share_b_only: f64,
    #[serde(default)]
    pub share_both: f64,
    pub effect_a: EffectSpec,
    #[serde(default)]
    pub effect_b: EffectSpec,
    #[serde(default)]
    pub effect_both: EffectSpec,
    /// Loading of the unit covariate on a linear outcome time trend.
    #[serde(default)]
    pub trend_coef: f64,
    /// Treated-minus-control mean gap of the unit covariate.
    #[serde(default)]
    pub covariate_gap: f64,
    #[serde(default = "default_covariate_sd")]
    pub covariate_sd: f64,
    pub noise_sd: f64,
    #[serde(default = "default_walk_sd")]
    pub walk_sd: f64,
    #[serde(default)]
    pub selection: Option<SelectionSpec>,
    pub seed: u64,
}

fn default_covariate_sd() -> f64 {
    0.5
}

fn default_walk_sd() -> f64 {
    0.5
}

/// Which treatments a unit receives, with its cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitCategory {
    AOnly(i64),
    BOnly(i64),
    Both(i64),
    Never,
}

/// True effect surface implied by a configuration.
#[derive(Debug, Clone, Serialize)]
pub struct DgpTruth {
    /// (d, g, t) -> ATT for post-treatment cells (t >= g).
    pub att: BTreeMap<(u8, i64, i64), f64>,
    /// d -> overall effect.
    pub overall: BTreeMap<u8, f64>,
    /// (d, e) -> event-study effect for e >= 0.
    pub event_study: BTreeMap<(u8, i64), f64>,
    /// (g, t) -> complementary effect where both d=4 and d=2 cohorts exist.
    pub complement_by_gt: BTreeMap<(i64, i64), f64>,
    pub complement_overall: Option<f64>,
}

/// A generated panel with its truth and first-stage attrition records.
#[derive(Debug)]
pub struct GeneratedPanel {
    pub dataset: PanelDataset,
    pub truth: DgpTruth,
    /// One row per attrition-prone (control) unit; empty without selection.
    pub first_stage: Vec<FirstStageRow>,
    pub excluded_units: usize,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let shares = self.share_a_only + self.share_b_only + self.share_both;
        if !(0.0..=1.0).contains(&shares) {
            return Err(Error::Config(format!("treated shares sum to {shares}")));
        }
        if shares >= 1.0 {
            return Err(Error::Config(
                "no never-treated share left for controls".into(),
            ));
        }
        if self.n_units < 20 {
            return Err(Error::Config("n_units must be at least 20".into()));
        }
        if self.noise_sd < 0.0 || self.covariate_sd < 0.0 || self.walk_sd < 0.0 {
            return Err(Error::Config("negative standard deviation".into()));
        }
        if self.cohorts.is_empty() {
            return Err(Error::Config("empty cohort list".into()));
        }
        for &g in &self.cohorts {
            if g < 1 || g >= self.n_periods as i64 {
                return Err(Error::Config(format!(
                    "cohort {g} outside usable range [1, {})",
                    self.n_periods
                )));
            }
        }
        Ok(())
    }

    /// Deterministic unit category: contiguous share blocks with cohorts
    /// cycling inside each block.
    pub fn category_of(&self, i: usize) -> UnitCategory {
        let frac = (i as f64 + 0.5) / self.n_units as f64;
        let g = self.cohorts[i % self.cohorts.len()];
        if frac < self.share_a_only {
            UnitCategory::AOnly(g)
        } else if frac < self.share_a_only + self.share_b_only {
            UnitCategory::BOnly(g)
        } else if frac < self.share_a_only + self.share_b_only + self.share_both {
            UnitCategory::Both(g)
        } else {
            UnitCategory::Never
        }
    }

    /// Deterministic cell weight in {1, ..., 5}, mimicking small
    /// municipality cell counts.
    pub fn weight_of(&self, i: usize) -> f64 {
        1.0 + ((i as u64).wrapping_mul(2654435761) % 5) as f64
    }

    fn unit_id(&self, i: usize) -> String {
        format!("m{i:05}")
    }
}

/// Generate a synthetic panel and its truth.
pub fn generate_panel(config: &DgpConfig) -> Result<GeneratedPanel> {
    config.validate()?;
    let n = config.n_units;
    let np = config.n_periods as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    // Per-unit draws in a fixed order.
    let mut x = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    let mut sel_uniform = Vec::with_capacity(n);
    let categories: Vec<UnitCategory> = (0..n).map(|i| config.category_of(i)).collect();
    for i in 0..n {
        let treated = categories[i] != UnitCategory::Never;
        let xi = config.covariate_gap * treated as u8 as f64
            + config.covariate_sd * normal(&mut rng);
        x.push(xi);
        // covariate correlates with the unit effect
        alpha.push(xi + normal(&mut rng));
        sel_uniform.push(rng.gen::<f64>());
    }

    // Period effects: random walk so period shocks are serially dependent.
    let mut lambda = Vec::with_capacity(config.n_periods);
    let mut level = 0.0;
    for _ in 0..config.n_periods {
        level += config.walk_sd * normal(&mut rng);
        lambda.push(level);
    }

    let effect = |cat: UnitCategory, t: i64| -> f64 {
        match cat {
            UnitCategory::AOnly(g) if t >= g => config.effect_a.at(t - g),
            UnitCategory::BOnly(g) if t >= g => config.effect_b.at(t - g),
            UnitCategory::Both(g) if t >= g => config.effect_both.at(t - g),
            _ => 0.0,
        }
    };

    let mut cells = Vec::with_capacity(n * config.n_periods);
    let mut profiles = BTreeMap::new();
    let mut first_stage = Vec::new();
    let mut excluded_units = 0usize;
    for i in 0..n {
        let id = config.unit_id(i);
        let cat = categories[i];
        let mills_term = match &config.selection {
            Some(sel) => sel.trend_coef * inverse_mills(sel.intercept + sel.slope * x[i]),
            None => 0.0,
        };
        // Draw the unit's outcome noise regardless of attrition so the
        // retained units' data do not depend on other units' fates.
        let mut outcomes = Vec::with_capacity(config.n_periods);
        for t in 0..np {
            let noise = config.noise_sd * normal(&mut rng);
            let y = alpha[i]
                + lambda[t as usize]
                + config.trend_coef * x[i] * t as f64
                + mills_term * t as f64
                + effect(cat, t)
                + noise;
            outcomes.push(y);
        }

        let included = match (&config.selection, cat) {
            (Some(sel), UnitCategory::Never) => {
                let p = norm_cdf(sel.intercept + sel.slope * x[i]);
                let inc = sel_uniform[i] < p;
                first_stage.push(FirstStageRow {
                    unit_id: id.clone(),
                    included: inc,
                    covariates: vec![x[i]],
                });
                inc
            }
            _ => true,
        };
        if !included {
            excluded_units += 1;
            continue;
        }

        let profile = match cat {
            UnitCategory::AOnly(g) => TreatmentProfile {
                first_a: FirstCohort::Cohort(g),
                first_b: FirstCohort::Never,
            },
            UnitCategory::BOnly(g) => TreatmentProfile {
                first_a: FirstCohort::Never,
                first_b: FirstCohort::Cohort(g),
            },
            UnitCategory::Both(g) => TreatmentProfile {
                first_a: FirstCohort::Cohort(g),
                first_b: FirstCohort::Cohort(g),
            },
            UnitCategory::Never => TreatmentProfile {
                first_a: FirstCohort::Never,
                first_b: FirstCohort::Never,
            },
        };
        profiles.insert(id.clone(), profile);
        let w = config.weight_of(i);
        for t in 0..np {
            cells.push(Cell {
                unit_id: id.clone(),
                period: t,
                outcome: outcomes[t as usize],
                weight: w,
                covariates: vec![x[i]],
            });
        }
    }

    let (dataset, _) = PanelDataset::from_cells(cells, &profiles, vec!["x".into()])?;
    Ok(GeneratedPanel {
        dataset,
        truth: true_effects(config)?,
        first_stage,
        excluded_units,
    })
}

/// Analytic effect surface matching [`generate_panel`]'s construction.
pub fn true_effects(config: &DgpConfig) -> Result<DgpTruth> {
    config.validate()?;
    let t_max = config.n_periods as i64 - 1;

    // Replay the deterministic assignment: per-cohort weight totals for
    // each category.
    let mut w_a_only: BTreeMap<i64, f64> = BTreeMap::new();
    let mut w_b_only: BTreeMap<i64, f64> = BTreeMap::new();
    let mut w_both: BTreeMap<i64, f64> = BTreeMap::new();
    for i in 0..config.n_units {
        let w = config.weight_of(i);
        match config.category_of(i) {
            UnitCategory::AOnly(g) => *w_a_only.entry(g).or_insert(0.0) += w,
            UnitCategory::BOnly(g) => *w_b_only.entry(g).or_insert(0.0) += w,
            UnitCategory::Both(g) => *w_both.entry(g).or_insert(0.0) += w,
            UnitCategory::Never => {}
        }
    }

    let mut att = BTreeMap::new();
    let mut overall = BTreeMap::new();
    let mut event_study = BTreeMap::new();

    // d = 1 mixes the A-only and both categories by their weights.
    let att_of = |d: u8, g: i64, e: i64| -> Option<f64> {
        match d {
            1 => {
                let wa = w_a_only.get(&g).copied().unwrap_or(0.0);
                let wb = w_both.get(&g).copied().unwrap_or(0.0);
                if wa + wb == 0.0 {
                    return None;
                }
                Some(
                    (wa * config.effect_a.at(e) + wb * config.effect_both.at(e)) / (wa + wb),
                )
            }
            2 => w_a_only.get(&g).map(|_| config.effect_a.at(e)),
            3 => w_b_only.get(&g).map(|_| config.effect_b.at(e)),
            4 => w_both.get(&g).map(|_| config.effect_both.at(e)),
            _ => None,
        }
    };
    let sizes_of = |d: u8| -> BTreeMap<i64, f64> {
        match d {
            1 => {
                let mut s = w_a_only.clone();
                for (g, w) in &w_both {
                    *s.entry(*g).or_insert(0.0) += w;
                }
                s
            }
            2 => w_a_only.clone(),
            3 => w_b_only.clone(),
            4 => w_both.clone(),
            _ => BTreeMap::new(),
        }
    };

    for d in 1u8..=4 {
        let sizes = sizes_of(d);
        if sizes.is_empty() {
            continue;
        }
        let mut theta_num = 0.0;
        let mut theta_den = 0.0;
        for (&g, &ng) in &sizes {
            for t in g..=t_max {
                let v = att_of(d, g, t - g).expect("cohort present");
                att.insert((d, g, t), v);
                theta_num += ng * v;
                theta_den += ng;
            }
        }
        overall.insert(d, theta_num / theta_den);
        let e_max = sizes.keys().map(|&g| t_max - g).max().unwrap_or(0);
        for e in 0..=e_max {
            let mut num = 0.0;
            let mut den = 0.0;
            for (&g, &ng) in &sizes {
                if g + e <= t_max {
                    num += ng * att_of(d, g, e).expect("cohort present");
                    den += ng;
                }
            }
            if den > 0.0 {
                event_study.insert((d, e), num / den);
            }
        }
    }

    // Complementary effects over cohorts present in both d=4 and d=2,
    // weighted by the joint-treated sizes.
    let mut complement_by_gt = BTreeMap::new();
    let mut comp_num = 0.0;
    let mut comp_den = 0.0;
    for (&g, &ng) in &w_both {
        if !w_a_only.contains_key(&g) {
            continue;
        }
        for t in g..=t_max {
            let delta = config.effect_both.at(t - g) - config.effect_a.at(t - g);
            complement_by_gt.insert((g, t), delta);
            comp_num += ng * delta;
            comp_den += ng;
        }
    }
    let complement_overall = if comp_den > 0.0 {
        Some(comp_num / comp_den)
    } else {
        None
    };

    Ok(DgpTruth {
        att,
        overall,
        event_study,
        complement_by_gt,
        complement_overall,
    })
}

/// Scenario presets used by the validation suite and bundled fixtures.
pub mod scenarios {
    use super::*;

    /// S1: homogeneous constant effect tau = 2 of a single reform.
    pub fn s1(seed: u64) -> DgpConfig {
        DgpConfig {
            n_units: 200,
            n_periods: 20,
            cohorts: vec![7, 9, 11, 13],
            share_a_only: 0.5,
            share_b_only: 0.0,
            share_both: 0.0,
            effect_a: EffectSpec { base: 2.0, slope: 0.0 },
            effect_b: EffectSpec::default(),
            effect_both: EffectSpec::default(),
            trend_coef: 0.0,
            covariate_gap: 0.0,
            covariate_sd: 0.5,
            noise_sd: 1.0,
            walk_sd: 0.5,
            selection: None,
            seed,
        }
    }

    /// S2: staggered adoption with event-time-increasing effects.
    pub fn s2(seed: u64) -> DgpConfig {
        DgpConfig {
            cohorts: vec![6, 8, 10, 12, 14],
            effect_a: EffectSpec { base: 1.0, slope: 0.5 },
            ..s1(seed)
        }
    }

    /// S3: covariate-dependent trends; unconditional parallel trends
    /// violated, conditional version holds.
    pub fn s3(seed: u64) -> DgpConfig {
        DgpConfig {
            trend_coef: 1.0,
            covariate_gap: 0.5,
            ..s1(seed)
        }
    }

    /// S4: interaction, joint effect exceeding the singular one by 2.
    pub fn s4(seed: u64) -> DgpConfig {
        DgpConfig {
            share_a_only: 0.25,
            share_b_only: 0.2,
            share_both: 0.25,
            effect_a: EffectSpec { base: 1.0, slope: 0.0 },
            effect_b: EffectSpec { base: 0.5, slope: 0.0 },
            effect_both: EffectSpec { base: 3.0, slope: 0.0 },
            ..s1(seed)
        }
    }

    /// S4 variant with purely additive effects (no true interaction) and
    /// event-time dynamics, for the TWFE contamination contrast.
    pub fn s4_additive(seed: u64) -> DgpConfig {
        DgpConfig {
            share_a_only: 0.25,
            share_b_only: 0.2,
            share_both: 0.25,
            cohorts: vec![6, 8, 10, 12, 14],
            effect_a: EffectSpec { base: 1.0, slope: 0.4 },
            effect_b: EffectSpec { base: 0.5, slope: 0.2 },
            effect_both: EffectSpec { base: 1.5, slope: 0.6 },
            ..s1(seed)
        }
    }

    /// S5: attrition of control units with inclusion probability
    /// Phi(0.5 + x) and the implied Mills ratio loading on the trend.
    pub fn s5(seed: u64) -> DgpConfig {
        DgpConfig {
            covariate_sd: 1.0,
            selection: Some(SelectionSpec {
                intercept: 0.5,
                slope: 1.0,
                trend_coef: 1.0,
            }),
            ..s1(seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attgt::{att_gt_unconditional, compute_all_att_gt, EstimationMode};
    use crate::panel::assign_treatment_masks;

    #[test]
    fn noiseless_s1_recovers_tau_exactly() {
        let mut config = scenarios::s1(7);
        config.noise_sd = 0.0;
        let gen = generate_panel(&config).unwrap();
        let masks = assign_treatment_masks(&gen.dataset).unwrap();
        for (&unit, &g) in masks[0].treated.iter().take(3) {
            let _ = unit;
            for t in g..=gen.dataset.t_max() {
                let est = att_gt_unconditional(&gen.dataset, &masks[0], g, t).unwrap();
                assert!((est.estimate - 2.0).abs() < 1e-10, "g={g} t={t}: {}", est.estimate);
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let config = scenarios::s2(99);
        let a = generate_panel(&config).unwrap();
        let b = generate_panel(&config).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.dataset.write_csv(&mut buf_a).unwrap();
        b.dataset.write_csv(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn truth_matches_construction() {
        let config = scenarios::s2(1);
        let truth = true_effects(&config).unwrap();
        // tau(e) = 1 + 0.5 e by construction for the single reform
        for e in 0..5 {
            let v = truth.event_study[&(1, e)];
            assert!((v - (1.0 + 0.5 * e as f64)).abs() < 1e-12, "e={e}: {v}");
        }
        let s4 = scenarios::s4(1);
        let t4 = true_effects(&s4).unwrap();
        assert!((t4.complement_overall.unwrap() - 2.0).abs() < 1e-12);
        assert!((t4.overall[&2] - 1.0).abs() < 1e-12);
        assert!((t4.overall[&4] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn generated_panel_passes_ingestion_invariants() {
        let config = scenarios::s4(3);
        let gen = generate_panel(&config).unwrap();
        let ds = &gen.dataset;
        assert_eq!(ds.n_periods(), config.n_periods);
        for u in 0..ds.n_units() {
            for t in ds.periods() {
                assert!(ds.weight(u, t) > 0.0);
                assert!(ds.outcome(u, t).is_finite());
            }
        }
        let masks = assign_treatment_masks(ds).unwrap();
        for mask in &masks {
            if !mask.treated.is_empty() {
                compute_all_att_gt(ds, mask, &EstimationMode::Unconditional).unwrap();
            }
        }
    }

    #[test]
    fn s5_attrition_produces_first_stage_rows() {
        let config = scenarios::s5(11);
        let gen = generate_panel(&config).unwrap();
        assert!(!gen.first_stage.is_empty());
        assert!(gen.excluded_units > 0);
        let excluded_in_rows = gen.first_stage.iter().filter(|r| !r.included).count();
        assert_eq!(excluded_in_rows, gen.excluded_units);
    }

    #[test]
    fn infeasible_shares_rejected() {
        let mut config = scenarios::s1(0);
        config.share_a_only = 1.2;
        assert!(matches!(generate_panel(&config), Err(Error::Config(_))));
        config.share_a_only = 1.0;
        assert!(matches!(generate_panel(&config), Err(Error::Config(_))));
    }
}
