//! CSV ingestion and the sample writer used by `simulate --emit-samples`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use spps_core::{Dataset, Mode};

use crate::InputError;

/// Which columns play which role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRoles {
    pub indicator: String,
    pub outcome: Option<String>,
    /// Empty means every column other than the indicator and the outcome.
    pub covariates: Vec<String>,
}

fn is_missing_token(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | "nan")
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        InputError(format!(
            "column '{name}' not found (available: {})",
            headers.iter().collect::<Vec<_>>().join(", ")
        ))
        .into()
    })
}

/// Reads a headed CSV into a [`Dataset`], prepending the intercept.
///
/// Row numbers in error messages count data rows from 1 (the header is row 0).
pub fn parse_csv(path: &Path, roles: &ColumnRoles, mode: Mode) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| InputError(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| InputError(format!("cannot read header of {}: {e}", path.display())))?
        .clone();

    let ind_col = column_index(&headers, &roles.indicator)?;
    let out_col = roles
        .outcome
        .as_deref()
        .map(|o| column_index(&headers, o))
        .transpose()?;
    let cov_cols: Vec<usize> = if roles.covariates.is_empty() {
        (0..headers.len())
            .filter(|&j| j != ind_col && Some(j) != out_col)
            .collect()
    } else {
        roles
            .covariates
            .iter()
            .map(|c| column_index(&headers, c))
            .collect::<Result<_>>()?
    };
    if cov_cols.contains(&ind_col) || out_col.is_some_and(|o| cov_cols.contains(&o)) {
        bail!(InputError(
            "indicator and outcome columns cannot also be covariates".into()
        ));
    }

    let mut rows = Vec::new();
    let mut indicator = Vec::new();
    let mut outcome = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| InputError(format!("row {row}: {e}")))?;
        let cell = |j: usize| record.get(j).unwrap_or("");
        let numeric = |j: usize| -> Result<f64> {
            let raw = cell(j);
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                InputError(format!(
                    "row {row}, column '{}': '{raw}' is not a finite number",
                    &headers[j]
                ))
                .into()
            })
        };
        let a = match cell(ind_col) {
            "0" | "0.0" => false,
            "1" | "1.0" => true,
            other => bail!(InputError(format!(
                "row {row}, column '{}': indicator must be 0 or 1, got '{other}'",
                &headers[ind_col]
            ))),
        };
        if let Some(o) = out_col {
            if is_missing_token(cell(o)) {
                if mode != Mode::MissingData || a {
                    bail!(InputError(format!(
                        "row {row}, column '{}': outcome is missing; only allowed in missing mode where the indicator is 0",
                        &headers[o]
                    )));
                }
                outcome.push(f64::NAN);
            } else {
                outcome.push(numeric(o)?);
            }
        }
        rows.push(cov_cols.iter().map(|&j| numeric(j)).collect::<Result<Vec<f64>>>()?);
        indicator.push(a);
    }
    if rows.is_empty() {
        bail!(InputError(format!("{} has no data rows", path.display())));
    }
    let outcome = out_col.map(|_| outcome);
    Dataset::from_covariates(&rows, indicator, outcome).context("building dataset")
}

/// Header written by [`write_sample`].
pub const SAMPLE_HEADER: [&str; 8] = ["x1", "x2", "x3", "v1", "v2", "v3", "t", "y"];

/// Writes a simulated sample (design columns after the intercept, then `t` and `y`).
///
/// Values use the shortest round-trip representation, so [`parse_csv`] recovers them bit for bit.
pub fn write_sample<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SAMPLE_HEADER)?;
    let y = data.outcome().context("sample has no outcome")?;
    for (i, (&a, &yi)) in data.indicator().iter().zip(y).enumerate() {
        let mut rec: Vec<String> = data.row(i)[1..].iter().map(f64::to_string).collect();
        rec.push(if a { "1" } else { "0" }.to_owned());
        rec.push(yi.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Roles matching [`write_sample`]'s layout.
pub fn sample_roles() -> ColumnRoles {
    ColumnRoles {
        indicator: "t".into(),
        outcome: Some("y".into()),
        covariates: SAMPLE_HEADER[..6].iter().map(|s| s.to_string()).collect(),
    }
}
