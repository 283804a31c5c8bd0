//! CSV input and output.
//!
//! Study files have a header row whose first column is `y`; every other
//! column is a predictor. Test files may omit the `y` column.

use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use transridge_core::StudyData;

use crate::error::{CliError, CliResult};

/// Rows of a labelled or unlabelled table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> =
        reader.headers().map_err(|e| CliError::data(path, e.to_string()))?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(CliError::data(path, "missing header row"));
    }
    let labelled = header[0] == "y";
    let names: Vec<String> = header[usize::from(labelled)..].to_vec();
    if names.is_empty() {
        return Err(CliError::data(path, "no predictor columns"));
    }
    let mut values = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::data(path, e.to_string()))?;
        if record.len() != header.len() {
            return Err(CliError::data(path, format!("row {} has {} fields, expected {}", i + 1, record.len(), header.len())));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CliError::data(path, format!("row {}, column '{}': bad number '{field}'", i + 1, header[j])))?;
            if labelled && j == 0 {
                ys.push(v);
            } else {
                values.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::data(path, "no data rows"));
    }
    Ok(Table {
        x: DMatrix::from_row_slice(rows, names.len(), &values),
        y: labelled.then(|| DVector::from_vec(ys)),
        names,
    })
}

/// Reads a study file; the `y` column is mandatory.
pub fn read_study(path: &Path, study_id: usize) -> CliResult<(StudyData, Vec<String>)> {
    let table = read_table(path)?;
    let y = table.y.ok_or_else(|| CliError::data(path, "first column must be named 'y'"))?;
    let study = StudyData::new(table.x, y, study_id).map_err(|e| CliError::data(path, e.to_string()))?;
    Ok((study, table.names))
}

/// Headerless numeric matrix, one row per line.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::data(path, e.to_string()))?;
        let row = record
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| CliError::data(path, format!("bad number '{f}'"))))
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::data(path, "expected a square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn create_writer(path: &Path) -> CliResult<csv::Writer<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes `y` followed by the predictor columns.
pub fn write_study(path: &Path, names: &[String], x: &DMatrix<f64>, y: &DVector<f64>) -> CliResult<()> {
    let mut w = create_writer(path)?;
    let mut header = vec!["y".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..x.nrows() {
        let mut row = vec![fmt(y[i])];
        row.extend(x.row(i).iter().map(|&v| fmt(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Shortest representation that parses back to the same value.
pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.1 + 0.2, -3.5e-12, 4.0]);
        let y = DVector::from_vec(vec![0.5, -1.0 / 3.0]);
        let names = vec!["a".to_string(), "b".to_string()];
        write_study(&path, &names, &x, &y).unwrap();
        let (study, read_names) = read_study(&path, 4).unwrap();
        assert_eq!(study.x, x);
        assert_eq!(study.y, y);
        assert_eq!(study.study_id, 4);
        assert_eq!(read_names, names);
    }

    #[test]
    fn unlabelled_table_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "x1,x2\n1,2\n3,4\n").unwrap();
        let t = read_table(&path).unwrap();
        assert!(t.y.is_none());
        assert!(read_study(&path, 1).is_err());
        std::fs::write(&path, "y,x1\n1,abc\n").unwrap();
        assert!(read_table(&path).is_err());
        std::fs::write(&path, "y,x1\n").unwrap();
        assert!(read_table(&path).is_err());
        std::fs::write(&path, "y,x1\n1,2,3\n").unwrap();
        assert!(read_table(&path).is_err());
        assert!(read_table(&dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn square_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1,0.5\n0.5,1\n").unwrap();
        assert_eq!(read_matrix(&path).unwrap()[(1, 0)], 0.5);
        std::fs::write(&path, "1,0.5\n").unwrap();
        assert!(read_matrix(&path).is_err());
    }
}
