//! Turns a [`RunConfig`] into a dataset and pipeline spec: input loading,
//! generator invocation, and the optional attrition correction.

use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::dgp::{generate_panel, DgpTruth};
use crate::error::{Error, Result};
use crate::panel::{load_panel_csv, CsvSchema, LoadReport, PanelDataset};
use crate::pipeline::{available_treatments, PipelineSpec};
use crate::selection::{
    augment_with_mills, fit_selection_model, ipw_weights, load_first_stage_csv, FirstStageRow,
};

/// A dataset plus the spec to run on it, ready for estimation.
pub struct PreparedRun {
    pub dataset: PanelDataset,
    pub spec: PipelineSpec,
    /// Truth for generated inputs.
    pub truth: Option<DgpTruth>,
    /// Ingestion report for CSV inputs.
    pub load_report: Option<LoadReport>,
    /// Units whose inclusion probability was clamped by the IPW trim.
    pub ipw_trimmed: usize,
}

pub fn prepare(config: &RunConfig) -> Result<PreparedRun> {
    config.check()?;
    let mut truth = None;
    let mut load_report = None;
    let mut first_stage: Vec<FirstStageRow> = Vec::new();

    let dataset = if let Some(path) = &config.input.csv {
        let schema = config.input.schema.clone().unwrap_or_else(CsvSchema::default);
        let (ds, report) = load_panel_csv(path, &schema)?;
        load_report = Some(report);
        ds
    } else {
        let dgp = config.dgp_config()?;
        let gen = generate_panel(&dgp)?;
        truth = Some(gen.truth);
        first_stage = gen.first_stage;
        gen.dataset
    };

    let mut dataset = dataset;
    let mut extra_covariates: Vec<String> = Vec::new();
    let mut unit_multipliers: Option<BTreeMap<String, f64>> = None;
    let mut ipw_trimmed = 0;

    if let Some(sel) = &config.selection {
        if sel.correction != "none" {
            if let Some(path) = &sel.first_stage_csv {
                first_stage = load_first_stage_csv(path)?;
            }
            if first_stage.is_empty() {
                return Err(Error::InsufficientData(
                    "selection correction requested without first-stage rows".into(),
                ));
            }
            let mut model = fit_selection_model(&first_stage)?;
            match sel.correction.as_str() {
                "mills" => {
                    // Units outside the first-stage sample (not subject to
                    // attrition) get predictions from their own covariates.
                    let names = match &sel.covariates {
                        Some(names) => names.clone(),
                        None => dataset.covariate_names().to_vec(),
                    };
                    let idx: Vec<usize> = names
                        .iter()
                        .map(|n| {
                            dataset
                                .covariate_names()
                                .iter()
                                .position(|c| c == n)
                                .ok_or_else(|| {
                                    Error::Schema(format!("unknown covariate '{n}'"))
                                })
                        })
                        .collect::<Result<_>>()?;
                    let rows: Vec<(String, Vec<f64>)> = (0..dataset.n_units())
                        .map(|u| {
                            let cells = dataset.cell_covariates(u, dataset.t_min());
                            (
                                dataset.unit_id(u).to_string(),
                                idx.iter().map(|&i| cells[i]).collect(),
                            )
                        })
                        .collect();
                    model.extend_predictions(
                        rows.iter().map(|(id, c)| (id.as_str(), c.as_slice())),
                    );
                    dataset = augment_with_mills(&dataset, &model)?;
                    extra_covariates.push("mills".to_string());
                }
                "ipw" => {
                    // Only attrition-prone units (those in the first stage)
                    // are reweighted; everyone else keeps weight 1.
                    let (weights, trimmed) = ipw_weights(&model, sel.trim)?;
                    ipw_trimmed = trimmed;
                    unit_multipliers = Some(weights);
                }
                _ => unreachable!("validated correction"),
            }
        }
    }

    let available = available_treatments(&dataset)?;
    let mut spec = config.pipeline_spec(&available, unit_multipliers)?;
    if !extra_covariates.is_empty() {
        use crate::attgt::EstimationMode;
        spec.mode = match spec.mode {
            EstimationMode::Unconditional => EstimationMode::Conditional(extra_covariates),
            EstimationMode::Conditional(mut covs) => {
                covs.extend(extra_covariates);
                EstimationMode::Conditional(covs)
            }
        };
    }

    Ok(PreparedRun {
        dataset,
        spec,
        truth,
        load_report,
        ipw_trimmed,
    })
}
