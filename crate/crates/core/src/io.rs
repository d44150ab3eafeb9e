//! CSV readers and writers for datasets, point clouds and dumped vectors.
//!
//! Files have no header. A labelled dataset row is `features..., label`;
//! a point cloud row is one point.

use std::path::Path;

use crate::error::{Error, Result};
use crate::Vector;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledData {
    pub features: Vec<Vector>,
    pub labels: Vec<f64>,
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv { path: path.to_path_buf(), source }
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| Error::Data {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("`{field}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first().map(|r: &Vec<f64>| r.len()) {
            if row.len() != first {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!("expected {first} columns, found {}", row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data { path: path.to_path_buf(), line: 0, reason: "no rows".into() });
    }
    Ok(rows)
}

fn write_rows<'a>(path: &Path, rows: impl Iterator<Item = Vec<f64>> + 'a) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    for row in rows {
        writer
            .write_record(row.iter().map(|x| format!("{x:.16e}")))
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| csv_err(path, e.into()))?;
    Ok(())
}

pub fn read_labelled_csv(path: &Path) -> Result<LabelledData> {
    let rows = read_rows(path)?;
    if rows[0].len() < 2 {
        return Err(Error::Data { path: path.to_path_buf(), line: 1, reason: "need features and a label".into() });
    }
    let mut features = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for row in rows {
        let (x, y) = row.split_at(row.len() - 1);
        features.push(Vector::from_column_slice(x));
        labels.push(y[0]);
    }
    Ok(LabelledData { features, labels })
}

pub fn write_labelled_csv(path: &Path, data: &LabelledData) -> Result<()> {
    write_rows(
        path,
        data.features.iter().zip(&data.labels).map(|(x, &y)| {
            let mut row: Vec<f64> = x.iter().copied().collect();
            row.push(y);
            row
        }),
    )
}

pub fn read_point_cloud(path: &Path) -> Result<Vec<Vector>> {
    Ok(read_rows(path)?.into_iter().map(Vector::from_vec).collect())
}

pub fn write_point_cloud(path: &Path, points: &[Vector]) -> Result<()> {
    write_rows(path, points.iter().map(|p| p.iter().copied().collect()))
}

/// One value per row, for scaling vectors and potentials.
pub fn write_vector(path: &Path, v: &Vector) -> Result<()> {
    write_rows(path, v.iter().map(|&x| vec![x]))
}
