//! CSV input for point and regression data.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, WceError};
use crate::wce::RegressionData;

/// Numeric table with its header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Parses a headed, comma-separated numeric table. Row numbers in errors are
/// 1-based data rows (the header is row 0); columns are 1-based.
pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if columns.is_empty() || columns.iter().all(String::is_empty) {
        return Err(WceError::MalformedCsv { row: 0, column: 0, message: "missing header".into() });
    }
    let width = columns.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        if record.len() != width {
            return Err(WceError::MalformedCsv {
                row,
                column: record.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| WceError::MalformedCsv {
                row,
                column: j + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(WceError::MalformedCsv { row, column: j + 1, message: format!("non-finite value {cell:?}") });
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(WceError::MalformedCsv { row: 1, column: 1, message: "no data rows".into() });
    }
    Ok(Table {
        columns,
        values: DMatrix::from_row_slice(rows, width, &values),
    })
}

pub fn read_table_path(path: &Path) -> Result<Table> {
    read_table(std::fs::File::open(path)?)
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Splits off the response column; the remaining columns plus an
    /// intercept form the design.
    pub fn into_regression(self, response: &str) -> Result<(RegressionData, Vec<String>)> {
        let j = self
            .column_index(response)
            .ok_or_else(|| WceError::InvalidConfig(format!("response column {response:?} not found")))?;
        let y = DVector::from_iterator(self.values.nrows(), self.values.column(j).iter().copied());
        let covariates = self.values.clone().remove_column(j);
        let mut names = vec!["(intercept)".to_string()];
        names.extend(self.columns.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, c)| c.clone()));
        Ok((RegressionData::with_intercept(&covariates, y)?, names))
    }
}
