//! Attrition corrections: a two-step control-function augmentation (probit
//! first stage, inverse Mills ratio added as a covariate) and inverse
//! probability weighting from the same first stage.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{inverse_mills, norm_cdf, probit_fit, ProbitFit};
use crate::panel::PanelDataset;

/// One unit of the first-stage sample: was it retained in the estimation
/// sample, and its first-stage covariates.
#[derive(Debug, Clone)]
pub struct FirstStageRow {
    pub unit_id: String,
    pub included: bool,
    pub covariates: Vec<f64>,
}

/// Fitted first stage with per-unit inverse Mills ratios and inclusion
/// probabilities.
#[derive(Debug, Clone)]
pub struct SelectionModel {
    pub probit: ProbitFit,
    pub mills: BTreeMap<String, f64>,
    pub inclusion_prob: BTreeMap<String, f64>,
}

impl SelectionModel {
    /// Mills ratio and inclusion probability at a covariate row
    /// (intercept added internally, like the fit).
    pub fn predict(&self, covariates: &[f64]) -> (f64, f64) {
        let mut row = Vec::with_capacity(covariates.len() + 1);
        row.push(1.0);
        row.extend_from_slice(covariates);
        let z = self.probit.index(&row);
        (inverse_mills(z), norm_cdf(z))
    }

    /// Add predictions for units outside the first-stage sample (e.g. units
    /// not subject to attrition) so augmentation covers the whole panel.
    pub fn extend_predictions<'a, I>(&mut self, units: I)
    where
        I: IntoIterator<Item = (&'a str, &'a [f64])>,
    {
        for (id, covariates) in units {
            let (m, p) = self.predict(covariates);
            self.mills.entry(id.to_string()).or_insert(m);
            self.inclusion_prob.entry(id.to_string()).or_insert(p);
        }
    }
}

/// Fit the probit first stage on unit-level inclusion flags and store each
/// unit's inverse Mills ratio and inclusion probability at the fitted index.
pub fn fit_selection_model(rows: &[FirstStageRow]) -> Result<SelectionModel> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no first-stage rows".into()));
    }
    let k = rows[0].covariates.len();
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    let w = vec![1.0; rows.len()];
    for r in rows {
        if r.covariates.len() != k {
            return Err(Error::Dimension("ragged first-stage covariates".into()));
        }
        let mut row = Vec::with_capacity(k + 1);
        row.push(1.0);
        row.extend_from_slice(&r.covariates);
        x.push(row);
        y.push(r.included as u8 as f64);
    }
    let probit = probit_fit(&x, &y, &w)?;
    let mut mills = BTreeMap::new();
    let mut inclusion_prob = BTreeMap::new();
    for (r, row) in rows.iter().zip(&x) {
        let z = probit.index(row);
        mills.insert(r.unit_id.clone(), inverse_mills(z));
        inclusion_prob.insert(r.unit_id.clone(), norm_cdf(z));
    }
    Ok(SelectionModel {
        probit,
        mills,
        inclusion_prob,
    })
}

/// Append each unit's inverse Mills ratio as one trailing covariate column
/// ("mills"); downstream conditional estimation proceeds unchanged.
/// Applying twice is a dimension error; a unit missing from the model is a
/// coverage error.
pub fn augment_with_mills(ds: &PanelDataset, model: &SelectionModel) -> Result<PanelDataset> {
    let mut per_unit = BTreeMap::new();
    for unit in 0..ds.n_units() {
        let id = ds.unit_id(unit);
        let m = model
            .mills
            .get(id)
            .copied()
            .ok_or_else(|| Error::SelectionCoverage(id.to_string()))?;
        per_unit.insert(unit, m);
    }
    ds.with_appended_covariate("mills", &per_unit)
}

/// Inverse-probability weights 1 / clamp(p, low, high), with the count of
/// units whose probability was trimmed.
pub fn ipw_weights(
    model: &SelectionModel,
    trim: (f64, f64),
) -> Result<(BTreeMap<String, f64>, usize)> {
    let (low, high) = trim;
    if !(0.0 < low && low < high && high < 1.0) {
        return Err(Error::Config(format!(
            "invalid trim bounds ({low}, {high})"
        )));
    }
    let mut weights = BTreeMap::new();
    let mut trimmed = 0usize;
    for (id, &p) in &model.inclusion_prob {
        let clamped = p.clamp(low, high);
        if clamped != p {
            trimmed += 1;
        }
        weights.insert(id.clone(), 1.0 / clamped);
    }
    Ok((weights, trimmed))
}

/// Read first-stage rows from CSV: unit, included (0/1), then covariates.
pub fn load_first_stage_csv<P: AsRef<Path>>(path: P) -> Result<Vec<FirstStageRow>> {
    let file = std::fs::File::open(path.as_ref())?;
    load_first_stage_reader(file)
}

pub fn load_first_stage_reader<R: Read>(reader: R) -> Result<Vec<FirstStageRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    let unit_col = headers
        .iter()
        .position(|h| h == "unit")
        .ok_or_else(|| Error::Schema("missing column 'unit'".into()))?;
    let inc_col = headers
        .iter()
        .position(|h| h == "included")
        .ok_or_else(|| Error::Schema("missing column 'included'".into()))?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {}: {e}", i + 2)))?;
        let included = match record.get(inc_col).map(str::trim) {
            Some("0") => false,
            Some("1") => true,
            other => {
                return Err(Error::Data(format!(
                    "row {}: included flag must be 0 or 1, got {other:?}",
                    i + 2
                )))
            }
        };
        let mut covariates = Vec::new();
        for (c, field) in record.iter().enumerate() {
            if c == unit_col || c == inc_col {
                continue;
            }
            covariates.push(field.trim().parse::<f64>().map_err(|_| {
                Error::Data(format!("row {}: unparseable covariate '{field}'", i + 2))
            })?);
        }
        rows.push(FirstStageRow {
            unit_id: record.get(unit_col).unwrap_or("").trim().to_string(),
            included,
            covariates,
        });
    }
    Ok(rows)
}
