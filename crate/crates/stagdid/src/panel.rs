//! Panel data model: CSV ingestion, treatment-profile construction, cell
//! collapsing, and pretreatment balance diagnostics.
//!
//! A dataset is a balanced unit-by-period grid of cells. Each cell carries an
//! outcome, a positive weight (the number of underlying individuals), and a
//! covariate vector. Treatment timing lives in per-unit profiles; period
//! indices are plain integers and calendar semantics exist only in
//! [`map_reform_year_to_first_cohort`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First treated cohort of a unit under one reform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FirstCohort {
    Cohort(i64),
    /// Treated before the observation window; excluded from every sample.
    AlwaysTreated,
    Never,
}

impl FirstCohort {
    pub fn cohort(self) -> Option<i64> {
        match self {
            FirstCohort::Cohort(g) => Some(g),
            _ => None,
        }
    }
}

/// Per-unit treatment timing for the two reforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentProfile {
    pub first_a: FirstCohort,
    pub first_b: FirstCohort,
}

impl TreatmentProfile {
    pub fn never_treated(&self) -> bool {
        self.first_a == FirstCohort::Never && self.first_b == FirstCohort::Never
    }

    pub fn always_treated(&self) -> bool {
        self.first_a == FirstCohort::AlwaysTreated || self.first_b == FirstCohort::AlwaysTreated
    }
}

/// One municipality-by-cohort cell before dataset assembly.
#[derive(Debug, Clone)]
pub struct Cell {
    pub unit_id: String,
    pub period: i64,
    pub outcome: f64,
    pub weight: f64,
    pub covariates: Vec<f64>,
}

/// Treatment combinations of the two reforms (Table-1 style).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TreatmentKind {
    /// d=1: ever treated by reform A.
    EverA = 1,
    /// d=2: treated by reform A only.
    OnlyA = 2,
    /// d=3: treated by reform B only.
    OnlyB = 3,
    /// d=4: treated by both reforms.
    Both = 4,
}

impl TreatmentKind {
    pub const ALL: [TreatmentKind; 4] = [
        TreatmentKind::EverA,
        TreatmentKind::OnlyA,
        TreatmentKind::OnlyB,
        TreatmentKind::Both,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(d: u8) -> Option<TreatmentKind> {
        match d {
            1 => Some(TreatmentKind::EverA),
            2 => Some(TreatmentKind::OnlyA),
            3 => Some(TreatmentKind::OnlyB),
            4 => Some(TreatmentKind::Both),
            _ => None,
        }
    }
}

/// Treated and control unit sets for one treatment combination.
///
/// Treated units are keyed by their relevant first cohort g (reform A's for
/// d in {1, 2, 4}; reform B's for d = 3). Controls are the never-treated-by-
/// both set for every d.
#[derive(Debug, Clone)]
pub struct TreatmentMask {
    pub d: TreatmentKind,
    /// unit index -> first cohort g.
    pub treated: BTreeMap<usize, i64>,
    pub controls: BTreeSet<usize>,
}

/// A balanced unit-by-period panel. Immutable after construction.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    unit_index: BTreeMap<String, usize>,
    profiles: Vec<TreatmentProfile>,
    t_min: i64,
    t_max: i64,
    covariate_names: Vec<String>,
    // unit-major grids, one slot per (unit, period)
    outcomes: Vec<f64>,
    weights: Vec<f64>,
    covariates: Vec<f64>, // n_units * n_periods * k
}

/// What ingestion kept and dropped.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    /// (1-based data row number, reason)
    pub rejected_rows: Vec<(usize, String)>,
    pub dropped_units: Vec<String>,
}

impl LoadReport {
    pub fn dropped_count(&self) -> usize {
        self.dropped_units.len()
    }
}

impl PanelDataset {
    /// Assemble a balanced dataset from loose cells and per-unit profiles.
    ///
    /// Units lacking a cell for every period in the global range are dropped
    /// and reported. Duplicate (unit, period) pairs are a data error.
    pub fn from_cells(
        cells: Vec<Cell>,
        profiles: &BTreeMap<String, TreatmentProfile>,
        covariate_names: Vec<String>,
    ) -> Result<(PanelDataset, LoadReport)> {
        if cells.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = covariate_names.len();
        let t_min = cells.iter().map(|c| c.period).min().unwrap();
        let t_max = cells.iter().map(|c| c.period).max().unwrap();
        let n_periods = (t_max - t_min + 1) as usize;

        let mut by_unit: BTreeMap<String, BTreeMap<i64, Cell>> = BTreeMap::new();
        for cell in cells {
            if cell.covariates.len() != k {
                return Err(Error::Dimension(format!(
                    "unit {} period {}: {} covariates, expected {k}",
                    cell.unit_id,
                    cell.period,
                    cell.covariates.len()
                )));
            }
            if !(cell.weight > 0.0) || !cell.weight.is_finite() {
                return Err(Error::Data(format!(
                    "unit {} period {}: nonpositive weight",
                    cell.unit_id, cell.period
                )));
            }
            if !cell.outcome.is_finite() {
                return Err(Error::Data(format!(
                    "unit {} period {}: nonfinite outcome",
                    cell.unit_id, cell.period
                )));
            }
            let unit = by_unit.entry(cell.unit_id.clone()).or_default();
            if unit.insert(cell.period, cell.clone()).is_some() {
                return Err(Error::Data(format!(
                    "duplicate cell ({}, {})",
                    cell.unit_id, cell.period
                )));
            }
        }

        let mut report = LoadReport::default();
        let mut unit_ids = Vec::new();
        let mut unit_profiles = Vec::new();
        let mut outcomes = Vec::new();
        let mut weights = Vec::new();
        let mut covariates = Vec::new();
        for (unit_id, periods) in by_unit {
            if periods.len() != n_periods {
                report.dropped_units.push(unit_id);
                continue;
            }
            let profile = profiles.get(&unit_id).copied().unwrap_or(TreatmentProfile {
                first_a: FirstCohort::Never,
                first_b: FirstCohort::Never,
            });
            for (fc, label) in [(profile.first_a, "A"), (profile.first_b, "B")] {
                if let FirstCohort::Cohort(g) = fc {
                    if g < t_min || g > t_max {
                        return Err(Error::Data(format!(
                            "unit {unit_id}: reform {label} first cohort {g} outside period range [{t_min}, {t_max}]"
                        )));
                    }
                }
            }
            unit_profiles.push(profile);
            for (_, cell) in periods {
                outcomes.push(cell.outcome);
                weights.push(cell.weight);
                covariates.extend_from_slice(&cell.covariates);
            }
            unit_ids.push(unit_id);
        }
        if unit_ids.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let unit_index = unit_ids
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        Ok((
            PanelDataset {
                unit_ids,
                unit_index,
                profiles: unit_profiles,
                t_min,
                t_max,
                covariate_names,
                outcomes,
                weights,
                covariates,
            },
            report,
        ))
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        (self.t_max - self.t_min + 1) as usize
    }

    pub fn t_min(&self) -> i64 {
        self.t_min
    }

    pub fn t_max(&self) -> i64 {
        self.t_max
    }

    pub fn periods(&self) -> impl Iterator<Item = i64> {
        self.t_min..=self.t_max
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn unit_id(&self, unit: usize) -> &str {
        &self.unit_ids[unit]
    }

    pub fn unit_index_of(&self, id: &str) -> Option<usize> {
        self.unit_index.get(id).copied()
    }

    pub fn profile(&self, unit: usize) -> &TreatmentProfile {
        &self.profiles[unit]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    fn slot(&self, unit: usize, t: i64) -> usize {
        debug_assert!(t >= self.t_min && t <= self.t_max);
        unit * self.n_periods() + (t - self.t_min) as usize
    }

    pub fn outcome(&self, unit: usize, t: i64) -> f64 {
        self.outcomes[self.slot(unit, t)]
    }

    pub fn weight(&self, unit: usize, t: i64) -> f64 {
        self.weights[self.slot(unit, t)]
    }

    pub fn cell_covariates(&self, unit: usize, t: i64) -> &[f64] {
        let k = self.covariate_names.len();
        let s = self.slot(unit, t) * k;
        &self.covariates[s..s + k]
    }

    /// Mean cell weight of a unit across periods (its "size").
    pub fn unit_size(&self, unit: usize) -> f64 {
        let np = self.n_periods();
        self.weights[unit * np..(unit + 1) * np].iter().sum::<f64>() / np as f64
    }

    /// A copy with one extra covariate column appended for every cell of a
    /// unit (constant across its periods).
    pub fn with_appended_covariate(
        &self,
        name: &str,
        per_unit: &BTreeMap<usize, f64>,
    ) -> Result<PanelDataset> {
        if self.covariate_names.iter().any(|n| n == name) {
            return Err(Error::Dimension(format!(
                "covariate column {name} already present"
            )));
        }
        let k = self.covariate_names.len();
        let np = self.n_periods();
        let mut covariates = Vec::with_capacity(self.n_units() * np * (k + 1));
        for unit in 0..self.n_units() {
            let value = *per_unit
                .get(&unit)
                .ok_or_else(|| Error::SelectionCoverage(self.unit_ids[unit].clone()))?;
            for p in 0..np {
                let s = (unit * np + p) * k;
                covariates.extend_from_slice(&self.covariates[s..s + k]);
                covariates.push(value);
            }
        }
        let mut names = self.covariate_names.clone();
        names.push(name.to_string());
        Ok(PanelDataset {
            unit_ids: self.unit_ids.clone(),
            unit_index: self.unit_index.clone(),
            profiles: self.profiles.clone(),
            t_min: self.t_min,
            t_max: self.t_max,
            covariate_names: names,
            outcomes: self.outcomes.clone(),
            weights: self.weights.clone(),
            covariates,
        })
    }

    /// Serialize to the standard CSV schema (reform columns hold cohort
    /// indices; empty means never treated, "always" always treated).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "unit".to_string(),
            "period".to_string(),
            "outcome".to_string(),
            "weight".to_string(),
            "reform_a".to_string(),
            "reform_b".to_string(),
        ];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)
            .map_err(|e| Error::Data(e.to_string()))?;
        let fmt_cohort = |c: FirstCohort| match c {
            FirstCohort::Cohort(g) => g.to_string(),
            FirstCohort::AlwaysTreated => "always".to_string(),
            FirstCohort::Never => String::new(),
        };
        for unit in 0..self.n_units() {
            for t in self.periods() {
                let mut rec = vec![
                    self.unit_ids[unit].clone(),
                    t.to_string(),
                    format_float(self.outcome(unit, t)),
                    format_float(self.weight(unit, t)),
                    fmt_cohort(self.profiles[unit].first_a),
                    fmt_cohort(self.profiles[unit].first_b),
                ];
                rec.extend(self.cell_covariates(unit, t).iter().map(|v| format_float(*v)));
                w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn format_float(v: f64) -> String {
    // Shortest representation that round-trips exactly.
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

/// How reform columns in a CSV encode treatment timing.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ReformMapping {
    /// Columns hold calendar reform years; first cohort is
    /// `year - school_leaving_age`, with window bounds deciding
    /// always-treated / never.
    Calendar {
        school_leaving_age: i64,
        window: (i64, i64),
    },
    /// Columns already hold first-cohort period indices
    /// ("always" marks always-treated, empty means never).
    Cohort,
}

/// Column-name map for panel CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CsvSchema {
    pub unit: String,
    pub period: String,
    pub outcome: String,
    pub weight: String,
    pub reform_a: String,
    pub reform_b: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    pub mapping: ReformMapping,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            unit: "unit".into(),
            period: "period".into(),
            outcome: "outcome".into(),
            weight: "weight".into(),
            reform_a: "reform_a".into(),
            reform_b: "reform_b".into(),
            covariates: Vec::new(),
            mapping: ReformMapping::Cohort,
        }
    }
}

/// Map a calendar reform year to the first treated birth cohort.
///
/// Students finishing school at `school_leaving_age` are first exposed if
/// born in `reform_year - school_leaving_age`. Reforms before the window are
/// always-treated; after it (or absent), never treated.
pub fn map_reform_year_to_first_cohort(
    reform_year: Option<i64>,
    school_leaving_age: i64,
    window: (i64, i64),
) -> FirstCohort {
    debug_assert!(school_leaving_age >= 1 && window.0 <= window.1);
    match reform_year {
        None => FirstCohort::Never,
        Some(y) if y < window.0 => FirstCohort::AlwaysTreated,
        Some(y) if y > window.1 => FirstCohort::Never,
        Some(y) => FirstCohort::Cohort(y - school_leaving_age),
    }
}

fn parse_reform_field(raw: &str, schema: &CsvSchema, row: usize) -> Result<FirstCohort> {
    let raw = raw.trim();
    match &schema.mapping {
        ReformMapping::Calendar {
            school_leaving_age,
            window,
        } => {
            let year = if raw.is_empty() {
                None
            } else {
                Some(raw.parse::<i64>().map_err(|_| {
                    Error::Data(format!("row {row}: unparseable reform year '{raw}'"))
                })?)
            };
            Ok(map_reform_year_to_first_cohort(
                year,
                *school_leaving_age,
                *window,
            ))
        }
        ReformMapping::Cohort => {
            if raw.is_empty() {
                Ok(FirstCohort::Never)
            } else if raw == "always" {
                Ok(FirstCohort::AlwaysTreated)
            } else {
                Ok(FirstCohort::Cohort(raw.parse::<i64>().map_err(|_| {
                    Error::Data(format!("row {row}: unparseable cohort '{raw}'"))
                })?))
            }
        }
    }
}

/// Load a panel from CSV. See the schema for column mapping.
///
/// Rows with missing outcome, nonpositive weight, or missing covariates are
/// rejected with row-numbered diagnostics; units failing the balance rule
/// are dropped and counted. Conflicting reform timings for the same unit
/// resolve to the earlier cohort.
pub fn load_panel_csv<P: AsRef<Path>>(
    path: P,
    schema: &CsvSchema,
) -> Result<(PanelDataset, LoadReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    load_panel_reader(file, schema)
}

/// Same as [`load_panel_csv`] but from any reader (used by tests and fuzzing).
pub fn load_panel_reader<R: Read>(
    reader: R,
    schema: &CsvSchema,
) -> Result<(PanelDataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let c_unit = col(&schema.unit)?;
    let c_period = col(&schema.period)?;
    let c_outcome = col(&schema.outcome)?;
    let c_weight = col(&schema.weight)?;
    let c_ra = col(&schema.reform_a)?;
    let c_rb = col(&schema.reform_b)?;
    let c_cov: Vec<usize> = schema
        .covariates
        .iter()
        .map(|n| col(n))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    let mut profiles: BTreeMap<String, TreatmentProfile> = BTreeMap::new();
    let mut report = LoadReport::default();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.rejected_rows.push((row, format!("unparseable row: {e}")));
                continue;
            }
        };
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        let unit_id = field(c_unit).to_string();
        if unit_id.is_empty() {
            report.rejected_rows.push((row, "empty unit id".into()));
            continue;
        }
        let period: i64 = match field(c_period).parse() {
            Ok(p) => p,
            Err(_) => {
                report
                    .rejected_rows
                    .push((row, format!("unparseable period '{}'", field(c_period))));
                continue;
            }
        };
        let outcome: f64 = match field(c_outcome).parse() {
            Ok(v) if f64::is_finite(v) => v,
            _ => {
                report.rejected_rows.push((row, "missing or nonfinite outcome".into()));
                continue;
            }
        };
        let weight: f64 = match field(c_weight).parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => v,
            _ => {
                report.rejected_rows.push((row, "missing or nonpositive weight".into()));
                continue;
            }
        };
        let mut covariates = Vec::with_capacity(c_cov.len());
        let mut cov_ok = true;
        for &c in &c_cov {
            match field(c).parse::<f64>() {
                Ok(v) if v.is_finite() => covariates.push(v),
                _ => {
                    cov_ok = false;
                    break;
                }
            }
        }
        if !cov_ok {
            report.rejected_rows.push((row, "missing covariate value".into()));
            continue;
        }

        let first_a = parse_reform_field(field(c_ra), schema, row)?;
        let first_b = parse_reform_field(field(c_rb), schema, row)?;
        let profile = TreatmentProfile { first_a, first_b };
        profiles
            .entry(unit_id.clone())
            .and_modify(|p| {
                // Conflicting timings across rows resolve to the earlier one.
                p.first_a = earlier_cohort(p.first_a, first_a);
                p.first_b = earlier_cohort(p.first_b, first_b);
            })
            .or_insert(profile);

        cells.push(Cell {
            unit_id,
            period,
            outcome,
            weight,
            covariates,
        });
    }

    let (dataset, mut build_report) = PanelDataset::from_cells(cells, &profiles, schema.covariates.clone())?;
    build_report.rejected_rows = report.rejected_rows;
    Ok((dataset, build_report))
}

fn earlier_cohort(a: FirstCohort, b: FirstCohort) -> FirstCohort {
    use FirstCohort::*;
    match (a, b) {
        (AlwaysTreated, _) | (_, AlwaysTreated) => AlwaysTreated,
        (Cohort(x), Cohort(y)) => Cohort(x.min(y)),
        (Cohort(x), Never) | (Never, Cohort(x)) => Cohort(x),
        (Never, Never) => Never,
    }
}

/// Build the Table-1 treatment masks for d in {1, 2, 3, 4}.
///
/// Controls are always the never-treated-by-both set; always-treated units
/// appear in no set.
pub fn assign_treatment_masks(dataset: &PanelDataset) -> Result<Vec<TreatmentMask>> {
    let mut controls = BTreeSet::new();
    for unit in 0..dataset.n_units() {
        let p = dataset.profile(unit);
        if p.never_treated() {
            controls.insert(unit);
        }
    }
    if controls.is_empty() {
        return Err(Error::UnusableControl);
    }
    let mut masks: Vec<TreatmentMask> = TreatmentKind::ALL
        .iter()
        .map(|&d| TreatmentMask {
            d,
            treated: BTreeMap::new(),
            controls: controls.clone(),
        })
        .collect();
    for unit in 0..dataset.n_units() {
        let p = dataset.profile(unit);
        if p.always_treated() {
            continue;
        }
        let ga = p.first_a.cohort();
        let gb = p.first_b.cohort();
        match (ga, gb) {
            (Some(ga), None) => {
                masks[0].treated.insert(unit, ga); // d=1 ever A
                masks[1].treated.insert(unit, ga); // d=2 A only
            }
            (None, Some(gb)) => {
                masks[2].treated.insert(unit, gb); // d=3 B only
            }
            (Some(ga), Some(_)) => {
                masks[0].treated.insert(unit, ga); // d=1 ever A
                masks[3].treated.insert(unit, ga); // d=4 both, cohort = reform A's
            }
            (None, None) => {}
        }
    }
    Ok(masks)
}

/// One individual-level record prior to cell collapsing.
#[derive(Debug, Clone)]
pub struct IndividualRecord {
    pub unit_id: String,
    pub period: i64,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

/// Collapse individual records to municipality-by-cohort cells: outcome and
/// covariates are averaged, the weight is the record count.
pub fn collapse_to_cells(
    records: &[IndividualRecord],
    profiles: &BTreeMap<String, TreatmentProfile>,
    covariate_names: Vec<String>,
) -> Result<(PanelDataset, LoadReport)> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = covariate_names.len();
    let mut groups: BTreeMap<(String, i64), (f64, Vec<f64>, f64)> = BTreeMap::new();
    for r in records {
        if r.covariates.len() != k {
            return Err(Error::Dimension(format!(
                "record for unit {} has {} covariates, expected {k}",
                r.unit_id,
                r.covariates.len()
            )));
        }
        let entry = groups
            .entry((r.unit_id.clone(), r.period))
            .or_insert_with(|| (0.0, vec![0.0; k], 0.0));
        entry.0 += r.outcome;
        for (acc, v) in entry.1.iter_mut().zip(&r.covariates) {
            *acc += v;
        }
        entry.2 += 1.0;
    }
    let cells = groups
        .into_iter()
        .map(|((unit_id, period), (sum, cov_sum, count))| Cell {
            unit_id,
            period,
            outcome: sum / count,
            weight: count,
            covariates: cov_sum.iter().map(|v| v / count).collect(),
        })
        .collect();
    PanelDataset::from_cells(cells, profiles, covariate_names)
}

/// One row of a pretreatment balance table.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceRow {
    pub variable: String,
    pub difference: f64,
    pub p_value: f64,
}

/// Weighted treated-minus-control differences in pretreatment covariates,
/// with p-values from a two-sample weighted t statistic with
/// unequal-variance (Welch-Satterthwaite) degrees of freedom.
pub fn balance_table(
    dataset: &PanelDataset,
    mask: &TreatmentMask,
    variables: &[String],
    pre_period: i64,
) -> Result<Vec<BalanceRow>> {
    for (&unit, &g) in &mask.treated {
        if pre_period >= g {
            return Err(Error::Data(format!(
                "pre-period {pre_period} does not precede cohort {g} of unit {}",
                dataset.unit_id(unit)
            )));
        }
    }
    let mut rows = Vec::new();
    for var in variables {
        let idx = dataset
            .covariate_names()
            .iter()
            .position(|n| n == var)
            .ok_or_else(|| Error::Schema(format!("unknown covariate '{var}'")))?;
        let collect = |units: Box<dyn Iterator<Item = usize> + '_>| -> (Vec<f64>, Vec<f64>) {
            let mut vals = Vec::new();
            let mut ws = Vec::new();
            for unit in units {
                vals.push(dataset.cell_covariates(unit, pre_period)[idx]);
                ws.push(dataset.weight(unit, pre_period));
            }
            (vals, ws)
        };
        let (tv, tw) = collect(Box::new(mask.treated.keys().copied()));
        let (cv, cw) = collect(Box::new(mask.controls.iter().copied()));
        if tv.len() < 2 || cv.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "balance for '{var}': need at least 2 units per side (treated {}, control {})",
                tv.len(),
                cv.len()
            )));
        }
        let (tm, tvar) = weighted_mean_var(&tv, &tw);
        let (cm, cvar) = weighted_mean_var(&cv, &cw);
        let difference = tm - cm;
        let se2_t = tvar / tv.len() as f64;
        let se2_c = cvar / cv.len() as f64;
        let se = (se2_t + se2_c).sqrt();
        let p_value = if se == 0.0 {
            1.0
        } else {
            let t_stat = difference / se;
            let df = (se2_t + se2_c).powi(2)
                / (se2_t.powi(2) / (tv.len() as f64 - 1.0)
                    + se2_c.powi(2) / (cv.len() as f64 - 1.0));
            let dist = statrs::distribution::StudentsT::new(0.0, 1.0, df.max(1.0))
                .map_err(|e| Error::Data(e.to_string()))?;
            use statrs::distribution::ContinuousCDF;
            2.0 * (1.0 - dist.cdf(t_stat.abs()))
        };
        rows.push(BalanceRow {
            variable: var.clone(),
            difference,
            p_value,
        });
    }
    Ok(rows)
}

/// Weighted mean and (reliability-weighted) sample variance.
fn weighted_mean_var(vals: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mean = vals.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / sw;
    let sw2: f64 = w.iter().map(|w| w * w).sum();
    let denom = sw - sw2 / sw;
    if denom <= 0.0 {
        return (mean, 0.0);
    }
    let var = vals
        .iter()
        .zip(w)
        .map(|(v, w)| w * (v - mean).powi(2))
        .sum::<f64>()
        / denom;
    (mean, var)
}
