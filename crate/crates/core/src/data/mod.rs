//! Datasets of unit-norm inputs with scalar labels.
//!
//! Inputs are stored row-major in one buffer. Every constructor either
//! normalizes rows to unit Euclidean norm or rejects rows that are not
//! already unit-norm, so downstream kernels can rely on `‖x‖₂ = 1`.

mod delimited;
mod idx;
mod kde;
mod mixture;
mod noise;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};

pub use delimited::read_csv;
pub use idx::{read_idx_images, read_idx_labels, IdxImages};
pub use kde::{kde_density, pca_project, scott_bandwidth, Bandwidth};
pub use mixture::{generate_mixture, random_centers, MixtureSpec};
pub use noise::flip_labels;

/// Tolerance on `‖x‖₂ − 1` accepted for inputs that are declared unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<f64>,
    d: usize,
    group_ids: Option<Vec<usize>>,
    clean_labels: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset from raw rows, scaling every row to unit norm.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Shape {
                    what: "input row",
                    expected: d,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
            normalize_row(&mut flat[i * d..], i)?;
        }
        Self::from_flat_unit(flat, labels, d)
    }

    /// Builds a dataset from a row-major buffer, scaling every row to unit norm.
    pub fn from_flat(mut inputs: Vec<f64>, labels: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Parameter("input dimension must be positive".into()));
        }
        for (i, row) in inputs.chunks_exact_mut(d).enumerate() {
            normalize_row(row, i)?;
        }
        Self::from_flat_unit(inputs, labels, d)
    }

    /// Builds a dataset from rows that are already unit-norm (checked).
    pub fn from_flat_unit(inputs: Vec<f64>, labels: Vec<f64>, d: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset("no samples".into()));
        }
        if d == 0 || inputs.len() != labels.len() * d {
            return Err(Error::Shape {
                what: "input buffer",
                expected: labels.len() * d.max(1),
                found: inputs.len(),
            });
        }
        for (i, row) in inputs.chunks_exact(d).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Domain(format!(
                    "sample {i} has norm {norm}, expected unit norm"
                )));
            }
        }
        Ok(Self {
            inputs,
            labels,
            d,
            group_ids: None,
            clean_labels: None,
        })
    }

    pub fn with_group_ids(mut self, group_ids: Vec<usize>) -> Result<Self> {
        crate::error::check_len("group ids", self.n(), group_ids.len())?;
        self.group_ids = Some(group_ids);
        Ok(self)
    }

    pub fn with_clean_labels(mut self, clean: Vec<f64>) -> Result<Self> {
        crate::error::check_len("clean labels", self.n(), clean.len())?;
        self.clean_labels = Some(clean);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks_exact(self.d)
    }

    /// Row-major input buffer.
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn group_ids(&self) -> Option<&[usize]> {
        self.group_ids.as_deref()
    }

    pub fn clean_labels(&self) -> Option<&[f64]> {
        self.clean_labels.as_deref()
    }

    /// Whether sample `i` carries a label different from its clean label.
    pub fn is_noisy(&self, i: usize) -> bool {
        self.clean_labels
            .as_ref()
            .is_some_and(|clean| clean[i] != self.labels[i])
    }

    pub(crate) fn labels_mut(&mut self) -> &mut Vec<f64> {
        &mut self.labels
    }

    /// Copy restricted to `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset("empty subset".into()));
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            check_index(i, self.n())?;
            inputs.extend_from_slice(self.row(i));
        }
        let pick = |v: &Vec<f64>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Self {
            inputs,
            labels: pick(&self.labels),
            d: self.d,
            group_ids: self
                .group_ids
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
            clean_labels: self.clean_labels.as_ref().map(pick),
        })
    }

    /// Copy with sample `i` removed.
    pub fn without(&self, i: usize) -> Result<Self> {
        check_index(i, self.n())?;
        if self.n() == 1 {
            return Err(Error::DegenerateRemoval);
        }
        let keep: Vec<usize> = (0..self.n()).filter(|&j| j != i).collect();
        self.subset(&keep)
    }

    /// First `n_first` samples and the following `n_second` samples.
    pub fn split(&self, n_first: usize, n_second: usize) -> Result<(Self, Self)> {
        if n_first + n_second > self.n() {
            return Err(Error::Parameter(format!(
                "cannot take {n_first} + {n_second} samples from {}",
                self.n()
            )));
        }
        let first: Vec<usize> = (0..n_first).collect();
        let second: Vec<usize> = (n_first..n_first + n_second).collect();
        Ok((self.subset(&first)?, self.subset(&second)?))
    }

    /// Largest deviation of a row norm from 1.
    pub fn max_norm_defect(&self) -> f64 {
        self.rows()
            .map(|r| (r.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&DatasetDump::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: DatasetDump = serde_json::from_str(text)?;
        dump.try_into()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn normalize_row(row: &mut [f64], index: usize) -> Result<()> {
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector { index });
    }
    row.iter_mut().for_each(|x| *x /= norm);
    // One more pass pulls the norm to within an ulp or two of 1.
    let again = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    row.iter_mut().for_each(|x| *x /= again);
    Ok(())
}

/// On-disk JSON layout: one nested array per input row.
#[derive(Serialize, Deserialize)]
struct DatasetDump {
    d: usize,
    inputs: Vec<Vec<f64>>,
    labels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group_ids: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clean_labels: Option<Vec<f64>>,
}

impl From<&Dataset> for DatasetDump {
    fn from(data: &Dataset) -> Self {
        Self {
            d: data.d,
            inputs: data.rows().map(<[f64]>::to_vec).collect(),
            labels: data.labels.clone(),
            group_ids: data.group_ids.clone(),
            clean_labels: data.clean_labels.clone(),
        }
    }
}

impl TryFrom<DatasetDump> for Dataset {
    type Error = Error;

    fn try_from(dump: DatasetDump) -> Result<Self> {
        let mut flat = Vec::with_capacity(dump.inputs.len() * dump.d);
        for row in &dump.inputs {
            crate::error::check_len("input row", dump.d, row.len())?;
            flat.extend_from_slice(row);
        }
        let mut data = Dataset::from_flat_unit(flat, dump.labels, dump.d)?;
        if let Some(g) = dump.group_ids {
            data = data.with_group_ids(g)?;
        }
        if let Some(c) = dump.clean_labels {
            data = data.with_clean_labels(c)?;
        }
        Ok(data)
    }
}

/// Where a dataset comes from on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum DataSource {
    /// A pair of IDX files: images (magic 0x803) and labels (magic 0x801).
    IdxPair { images: PathBuf, labels: PathBuf },
    /// One sample per row, label in the last column, header optional.
    Csv(PathBuf),
}

/// Loads a dataset and normalizes every input to unit norm.
///
/// With `class_filter = Some((a, b))` only samples whose class id is `a` or
/// `b` are kept, labelled `+1` and `-1` respectively. Without a filter the
/// raw label values are kept.
pub fn load_dataset(source: &DataSource, class_filter: Option<(i64, i64)>) -> Result<Dataset> {
    let (rows, d, classes) = match source {
        DataSource::IdxPair { images, labels } => {
            let imgs = idx::read_idx_images(&std::fs::read(images)?)?;
            let labs = idx::read_idx_labels(&std::fs::read(labels)?)?;
            if imgs.count != labs.len() {
                return Err(Error::Shape {
                    what: "IDX label count",
                    expected: imgs.count,
                    found: labs.len(),
                });
            }
            let d = imgs.rows * imgs.cols;
            let flat: Vec<f64> = imgs.pixels.iter().map(|&p| f64::from(p)).collect();
            let classes: Vec<f64> = labs.iter().map(|&l| f64::from(l)).collect();
            (flat, d, classes)
        }
        DataSource::Csv(path) => {
            let (flat, labels, d) = delimited::read_csv(&std::fs::read(path)?)?;
            (flat, d, labels)
        }
    };
    let (flat, labels) = match class_filter {
        None => (rows, classes),
        Some((pos, neg)) => {
            let mut kept = Vec::new();
            let mut labels = Vec::new();
            for (i, &c) in classes.iter().enumerate() {
                let value = if c == pos as f64 {
                    1.0
                } else if c == neg as f64 {
                    -1.0
                } else {
                    continue;
                };
                kept.extend_from_slice(&rows[i * d..(i + 1) * d]);
                labels.push(value);
            }
            if !labels.contains(&1.0) || !labels.contains(&-1.0) {
                return Err(Error::EmptyDataset(format!(
                    "class filter ({pos}, {neg}) leaves a class without samples"
                )));
            }
            (kept, labels)
        }
    };
    if labels.is_empty() {
        return Err(Error::EmptyDataset("file contains no samples".into()));
    }
    Dataset::from_flat(flat, labels, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_normalized() {
        let data = Dataset::from_rows(
            vec![vec![2.0, 0.0], vec![0.3, 0.4], vec![0.6, 0.8]],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap();
        assert!(data.max_norm_defect() < 1e-15);
        assert_eq!(data.row(1), &[0.6, 0.8]);
    }

    #[test]
    fn zero_row_is_rejected() {
        let err = Dataset::from_rows(vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![1.0, 1.0]);
        assert!(matches!(err, Err(Error::ZeroVector { index: 1 })));
    }

    #[test]
    fn without_and_subset_keep_metadata() {
        let data = Dataset::from_rows(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![1.0, -1.0, 1.0],
        )
        .unwrap()
        .with_group_ids(vec![0, 1, 2])
        .unwrap();
        let rest = data.without(1).unwrap();
        assert_eq!(rest.n(), 2);
        assert_eq!(rest.group_ids(), Some(&[0, 2][..]));
        assert!(matches!(data.without(3), Err(Error::Index { .. })));
        let single = data.subset(&[0]).unwrap();
        assert!(matches!(single.without(0), Err(Error::DegenerateRemoval)));
    }

    #[test]
    fn json_dump_round_trips() {
        let data = Dataset::from_rows(vec![vec![3.0, 4.0], vec![1.0, 0.0]], vec![1.0, -1.0])
            .unwrap()
            .with_clean_labels(vec![1.0, 1.0])
            .unwrap();
        let back = Dataset::from_json(&data.to_json().unwrap()).unwrap();
        assert_eq!(back, data);
        assert!(back.is_noisy(1) && !back.is_noisy(0));
    }
}
