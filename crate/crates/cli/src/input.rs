//! CSV ingestion for observational data.

use std::path::Path;

use itr_core::Dataset;

use crate::CliError;

/// Column roles for one fit. `covariates` lists the anchor first.
#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub continuous: Vec<String>,
}

impl Columns {
    /// Moves `anchor` to the front of the covariate list.
    pub fn with_anchor(mut self, anchor: Option<&str>) -> Result<Self, CliError> {
        if let Some(a) = anchor {
            let pos = self
                .covariates
                .iter()
                .position(|c| c == a)
                .ok_or_else(|| CliError::Input(format!("anchor `{a}` is not among the covariates")))?;
            let name = self.covariates.remove(pos);
            self.covariates.insert(0, name);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub data: Dataset,
    /// Covariate names in model order, anchor first.
    pub names: Vec<String>,
    /// Mean and sd used for each standardized covariate.
    pub scaling: Vec<Option<(f64, f64)>>,
}

pub fn read_csv(path: &Path, cols: &Columns) -> Result<Table, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    parse_csv(file, cols)
}

pub fn parse_csv<R: std::io::Read>(reader: R, cols: &Columns) -> Result<Table, CliError> {
    if cols.covariates.is_empty() {
        return Err(CliError::Input("at least one covariate is required".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for c in cols.covariates.iter().chain([&cols.treatment, &cols.outcome]) {
        if !seen.insert(c) {
            return Err(CliError::Input(format!("column `{c}` is used twice")));
        }
    }
    for c in &cols.continuous {
        if !cols.covariates.contains(c) {
            return Err(CliError::Input(format!("continuous column `{c}` is not a covariate")));
        }
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::Input(format!("bad CSV header: {e}")))?.clone();
    let locate = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("column `{name}` not found in header")))
    };
    let a_col = locate(&cols.treatment)?;
    let y_col = locate(&cols.outcome)?;
    let x_cols = cols.covariates.iter().map(|c| locate(c)).collect::<Result<Vec<_>, _>>()?;

    let (mut rows, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| CliError::Input(format!("row {row}: {e}")))?;
        let cell = |j: usize| -> Result<f64, CliError> {
            let name = &header[j];
            let raw = rec.get(j).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
                return Err(CliError::Input(format!("missing value at row {row}, column `{name}`")));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| CliError::Input(format!("non-numeric value `{raw}` at row {row}, column `{name}`")))?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("non-finite value at row {row}, column `{name}`")));
            }
            Ok(v)
        };
        let av = cell(a_col)?;
        if av != 0.0 && av != 1.0 {
            return Err(CliError::Input(format!(
                "treatment must be 0 or 1, got {av} at row {row}, column `{}`",
                cols.treatment
            )));
        }
        a.push(av);
        y.push(cell(y_col)?);
        rows.push(x_cols.iter().map(|&j| cell(j)).collect::<Result<Vec<_>, _>>()?);
    }
    if rows.is_empty() {
        return Err(CliError::Input("CSV has no data rows".into()));
    }

    let mut scaling = vec![None; cols.covariates.len()];
    for (k, name) in cols.covariates.iter().enumerate() {
        if !cols.continuous.contains(name) {
            continue;
        }
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(CliError::Input(format!("continuous column `{name}` is constant")));
        }
        for r in rows.iter_mut() {
            r[k] = (r[k] - mean) / sd;
        }
        scaling[k] = Some((mean, sd));
    }
    let data = Dataset::new(rows, a, y).map_err(|e| CliError::Input(e.to_string()))?;
    Ok(Table {
        data,
        names: cols.covariates.clone(),
        scaling,
    })
}
