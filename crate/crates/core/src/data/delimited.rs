//! Comma-separated samples: features first, label in the last column.
//! A first row that does not parse as numbers is taken as a header.

use crate::error::{Error, Result};

/// Returns `(row-major features, labels, d)`.
pub fn read_csv(bytes: &[u8]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(bytes);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut d = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            offset: e.position().map_or(0, csv::Position::byte),
            message: e.to_string(),
        })?;
        let offset = record.position().map_or(0, csv::Position::byte);
        let values: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    offset,
                    message: format!("row {}: {e}", row + 1),
                })
            }
        };
        if values.len() < 2 {
            return Err(Error::Parse {
                offset,
                message: format!("row {} needs at least one feature and a label", row + 1),
            });
        }
        let width = values.len() - 1;
        match d {
            None => d = Some(width),
            Some(w) if w != width => {
                return Err(Error::Parse {
                    offset,
                    message: format!("row {} has {width} features, expected {w}", row + 1),
                })
            }
            Some(_) => {}
        }
        features.extend_from_slice(&values[..width]);
        labels.push(values[width]);
    }
    match d {
        Some(d) => Ok((features, labels, d)),
        None => Err(Error::EmptyDataset("CSV contains no samples".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_optional() {
        let (x, y, d) = read_csv(b"a,b,label\n1,2,1\n3,4,-1\n").unwrap();
        assert_eq!((x, y, d), (vec![1.0, 2.0, 3.0, 4.0], vec![1.0, -1.0], 2));
        let (x, _, _) = read_csv(b"1,2,1\n").unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn bad_cell_reports_byte_offset() {
        match read_csv(b"1,2,1\n3,x,1\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(matches!(read_csv(b"1,2,1\n3,1\n"), Err(Error::Parse { .. })));
    }
}
