//! Observation matrices with per-cell missingness.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

/// Rows are time indices (assumed i.i.d. events), columns are sites.
///
/// Unobserved cells hold `NaN` in `values` and `false` in `mask`; nothing
/// downstream reads a masked cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    site_ids: Vec<String>,
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingnessSummary {
    pub per_site_fraction_missing: Vec<f64>,
    /// Percentage of rows with every site observed.
    pub data_usage_efficiency: f64,
    pub per_row_observed_count: Vec<usize>,
}

fn is_missing_token(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

impl Dataset {
    pub fn new(site_ids: Vec<String>, values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::Schema(format!(
                "values {:?} and mask {:?} differ in shape",
                values.shape(),
                mask.shape()
            )));
        }
        if values.ncols() != site_ids.len() {
            return Err(Error::Schema(format!(
                "{} site ids for {} columns",
                site_ids.len(),
                values.ncols()
            )));
        }
        if site_ids.len() < 2 {
            return Err(Error::Schema("at least two sites are required".into()));
        }
        if values.nrows() == 0 {
            return Err(Error::Schema("at least one row is required".into()));
        }
        let mut seen = HashSet::new();
        for id in &site_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Schema(format!("duplicate site id `{id}`")));
            }
        }
        let mut values = values;
        for (v, &m) in values.iter_mut().zip(mask.iter()) {
            if !m {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::Schema("observed cells must be finite".into()));
            }
        }
        Ok(Self {
            site_ids,
            values,
            mask,
        })
    }

    /// Build from row vectors where `None` marks a missing cell.
    pub fn from_rows(site_ids: Vec<String>, rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let d = site_ids.len();
        let n = rows.len();
        let mut values = DMatrix::from_element(n, d, f64::NAN);
        let mut mask = DMatrix::from_element(n, d, false);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Schema(format!("row {i} has {} cells, expected {d}", row.len())));
            }
            for (j, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    values[(i, j)] = *v;
                    mask[(i, j)] = true;
                }
            }
        }
        Self::new(site_ids, values, mask)
    }

    /// Fully observed dataset from a value matrix with generated site ids.
    pub fn complete(values: DMatrix<f64>) -> Result<Self> {
        let ids = (0..values.ncols()).map(|j| format!("s{}", j + 1)).collect();
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(ids, values, mask)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_sites(&self) -> usize {
        self.values.ncols()
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    #[inline]
    pub fn get(&self, row: usize, site: usize) -> Option<f64> {
        if self.mask[(row, site)] {
            Some(self.values[(row, site)])
        } else {
            None
        }
    }

    /// Observed values of one site, in row order.
    pub fn observed_column(&self, site: usize) -> Vec<f64> {
        (0..self.n_rows()).filter_map(|i| self.get(i, site)).collect()
    }

    /// New dataset made of the given rows (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let d = self.n_sites();
        let values = DMatrix::from_fn(rows.len(), d, |i, j| self.values[(rows[i], j)]);
        let mask = DMatrix::from_fn(rows.len(), d, |i, j| self.mask[(rows[i], j)]);
        Self::new(self.site_ids.clone(), values, mask)
    }

    /// Same values with additional cells masked out.
    pub fn with_mask(&self, mask: DMatrix<bool>) -> Result<Self> {
        let combined = self.mask.zip_map(&mask, |a, b| a && b);
        Self::new(self.site_ids.clone(), self.values.clone(), combined)
    }

    /// Apply a transform to every observed cell of each site.
    pub fn map_observed<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(usize, f64) -> Result<f64>,
    {
        let mut values = self.values.clone();
        for j in 0..self.n_sites() {
            for i in 0..self.n_rows() {
                if self.mask[(i, j)] {
                    values[(i, j)] = f(j, self.values[(i, j)])?;
                }
            }
        }
        Self::new(self.site_ids.clone(), values, self.mask.clone())
    }
}

/// Read a CSV file with a header row of site identifiers.
pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::Schema(format!("duplicate header `{h}`")));
        }
    }
    let d = headers.len();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != d {
            return Err(Error::Parse {
                row: r + 1,
                column: record.len().min(d) + 1,
                message: format!("expected {d} cells, found {}", record.len()),
            });
        }
        let mut row = Vec::with_capacity(d);
        for (c, cell) in record.iter().enumerate() {
            if is_missing_token(cell) {
                row.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: r + 1,
                column: c + 1,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: r + 1,
                    column: c + 1,
                    message: format!("`{cell}` is not finite"),
                });
            }
            row.push(Some(v));
        }
        rows.push(row);
    }
    Dataset::from_rows(headers, &rows)
}

/// Write a dataset as CSV; missing cells become `NA`.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(ds.site_ids())?;
    for i in 0..ds.n_rows() {
        let row: Vec<String> = (0..ds.n_sites())
            .map(|j| match ds.get(i, j) {
                Some(v) => format!("{v:?}"),
                None => "NA".to_owned(),
            })
            .collect();
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(ds, std::io::BufWriter::new(file))
}

pub fn summarize_missingness(ds: &Dataset) -> MissingnessSummary {
    let n = ds.n_rows();
    let d = ds.n_sites();
    let per_row_observed_count: Vec<usize> = (0..n)
        .map(|i| (0..d).filter(|&j| ds.mask[(i, j)]).count())
        .collect();
    let per_site_fraction_missing = (0..d)
        .map(|j| (0..n).filter(|&i| !ds.mask[(i, j)]).count() as f64 / n as f64)
        .collect();
    let complete = per_row_observed_count.iter().filter(|&&c| c == d).count();
    MissingnessSummary {
        per_site_fraction_missing,
        data_usage_efficiency: 100.0 * complete as f64 / n as f64,
        per_row_observed_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        read_csv(s.as_bytes())
    }

    #[test]
    fn empty_cell_is_masked() {
        let ds = parse("a,b\n1,2\n3,\n5,6\n").unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.mask().iter().filter(|m| !**m).count(), 1);
        assert_eq!(ds.get(1, 1), None);
    }

    #[test]
    fn missing_tokens_are_case_insensitive() {
        let ds = parse("a,b\nNA,nan\nna,NaN\n1,2\n").unwrap();
        assert_eq!(ds.mask().iter().filter(|m| !**m).count(), 4);
    }

    #[test]
    fn duplicate_header_is_schema_error() {
        assert!(matches!(parse("a,a\n1,2\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn scientific_notation() {
        let ds = parse("a,b\n1e3,2\n").unwrap();
        assert_eq!(ds.get(0, 0), Some(1000.0));
    }

    #[test]
    fn malformed_number_reports_position() {
        match parse("a,b\n1,2\n3,x4\n") {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn infinite_values_rejected() {
        assert!(matches!(parse("a,b\ninf,2\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn efficiency_counts() {
        let full = Dataset::complete(DMatrix::from_element(10, 3, 1.0)).unwrap();
        assert_eq!(summarize_missingness(&full).data_usage_efficiency, 100.0);

        let ds = parse("a,b\n1,2\n3,\n5,6\n7,8\n").unwrap();
        let s = summarize_missingness(&ds);
        assert_eq!(s.data_usage_efficiency, 75.0);
        assert_eq!(s.per_row_observed_count, vec![2, 1, 2, 2]);
        assert_eq!(s.per_site_fraction_missing, vec![0.0, 0.25]);

        let none = parse("a,b\n1,\n,2\n").unwrap();
        assert_eq!(summarize_missingness(&none).data_usage_efficiency, 0.0);
    }
}
