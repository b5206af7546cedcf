//! Randomized properties of the estimators and the panel codec.

use std::collections::BTreeMap;

use proptest::prelude::*;

use stagdid::attgt::att_gt_unconditional;
use stagdid::dgp::{generate_panel, DgpConfig, EffectSpec};
use stagdid::numerics::wls_fit;
use stagdid::panel::{assign_treatment_masks, load_panel_reader, CsvSchema};

fn small_dgp(seed: u64, n_units: usize, cohort: i64) -> DgpConfig {
    DgpConfig {
        n_units,
        n_periods: 8,
        cohorts: vec![cohort],
        share_a_only: 0.5,
        share_b_only: 0.0,
        share_both: 0.0,
        effect_a: EffectSpec { base: 1.0, slope: 0.0 },
        effect_b: EffectSpec { base: 0.0, slope: 0.0 },
        effect_both: EffectSpec { base: 0.0, slope: 0.0 },
        trend_coef: 0.0,
        covariate_gap: 0.0,
        covariate_sd: 0.5,
        noise_sd: 1.0,
        walk_sd: 0.5,
        selection: None,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Exporting a generated panel and re-reading it preserves every cell.
    #[test]
    fn panel_csv_round_trip(seed in 0u64..500, n_units in 20usize..40, cohort in 3i64..7) {
        let gen = generate_panel(&small_dgp(seed, n_units, cohort)).unwrap();
        let mut buf = Vec::new();
        gen.dataset.write_csv(&mut buf).unwrap();
        let schema = CsvSchema {
            covariates: gen.dataset.covariate_names().to_vec(),
            ..CsvSchema::default()
        };
        let (back, report) = load_panel_reader(buf.as_slice(), &schema).unwrap();
        prop_assert!(report.rejected_rows.is_empty());
        prop_assert_eq!(back.n_units(), gen.dataset.n_units());
        prop_assert_eq!(back.covariate_names(), gen.dataset.covariate_names());
        for u in 0..back.n_units() {
            prop_assert_eq!(back.unit_id(u), gen.dataset.unit_id(u));
            prop_assert_eq!(back.profile(u), gen.dataset.profile(u));
            for t in back.periods() {
                prop_assert_eq!(back.outcome(u, t), gen.dataset.outcome(u, t));
                prop_assert_eq!(back.weight(u, t), gen.dataset.weight(u, t));
                prop_assert_eq!(back.cell_covariates(u, t), gen.dataset.cell_covariates(u, t));
            }
        }
    }

    /// The group-time effect equals the weighted difference of outcome
    /// changes computed directly from the panel.
    #[test]
    fn attgt_matches_direct_weighted_means(seed in 0u64..500, cohort in 3i64..7, t_off in 0i64..2) {
        let gen = generate_panel(&small_dgp(seed, 30, cohort)).unwrap();
        let ds = &gen.dataset;
        let masks = assign_treatment_masks(ds).unwrap();
        let t = cohort + t_off;
        let est = att_gt_unconditional(ds, &masks[0], cohort, t).unwrap();

        let change = |u: usize| ds.outcome(u, t) - ds.outcome(u, cohort - 1);
        let mean = |units: &[usize]| {
            let wsum: f64 = units.iter().map(|&u| ds.weight(u, t)).sum();
            units.iter().map(|&u| ds.weight(u, t) * change(u)).sum::<f64>() / wsum
        };
        let treated: Vec<usize> = masks[0].treated.keys().copied().collect();
        let controls: Vec<usize> = masks[0].controls.iter().copied().collect();
        let direct = mean(&treated) - mean(&controls);
        prop_assert!((est.estimate - direct).abs() < 1e-10, "{} vs {}", est.estimate, direct);
    }

    /// Duplicating a design row is the same as doubling its weight.
    #[test]
    fn wls_row_duplication_equals_weight_doubling(
        rows in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.1f64..3.0), 6..20),
        dup in 0usize..6,
    ) {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| vec![1.0, r.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let w: Vec<f64> = rows.iter().map(|r| r.2).collect();

        let mut x2 = x.clone();
        let mut y2 = y.clone();
        let mut w2 = w.clone();
        x2.push(x[dup].clone());
        y2.push(y[dup]);
        w2.push(w[dup]);

        let mut w_doubled = w.clone();
        w_doubled[dup] *= 2.0;

        let a = wls_fit(&x2, &y2, &w2);
        let b = wls_fit(&x, &y, &w_doubled);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
                    prop_assert!((ca - cb).abs() < 1e-10, "{ca} vs {cb}");
                }
            }
            // both singular (e.g. all x equal) is acceptable
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "one fit singular: {a:?} vs {b:?}"),
        }
    }

    /// Multiplying every unit's weight by a constant leaves the whole
    /// pipeline unchanged.
    #[test]
    fn pipeline_is_weight_scale_invariant(seed in 0u64..500, cohort in 3i64..7) {
        use stagdid::panel::TreatmentKind;
        use stagdid::pipeline::{estimand_points, run_pipeline, PipelineSpec};

        let gen = generate_panel(&small_dgp(seed, 30, cohort)).unwrap();
        let spec = PipelineSpec {
            event_window: (-2, 3),
            ..PipelineSpec::unconditional(vec![TreatmentKind::EverA])
        };
        let base = estimand_points(&run_pipeline(&gen.dataset, &spec, None).unwrap());

        let scaled: BTreeMap<String, f64> = gen
            .dataset
            .unit_ids()
            .iter()
            .map(|id| (id.to_string(), 3.5))
            .collect();
        let scaled_spec = PipelineSpec { unit_weight_multipliers: Some(scaled), ..spec };
        let rescaled = estimand_points(&run_pipeline(&gen.dataset, &scaled_spec, None).unwrap());
        prop_assert_eq!(base.len(), rescaled.len());
        for (k, v) in &base {
            prop_assert!((v - rescaled[k]).abs() < 1e-10, "{}", k);
        }
    }
}
