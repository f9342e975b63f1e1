use rand::seq::index::sample;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// Negates exactly `round(fraction * n)` labels chosen uniformly without
/// replacement. The labels before flipping are kept as clean labels (or the
/// existing clean labels are kept if present).
pub fn flip_labels(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("flip fraction {fraction} outside [0, 1]")));
    }
    if let Some(bad) = data.labels().iter().find(|y| y.abs() != 1.0) {
        return Err(Error::Parameter(format!("label {bad} is not +1 or -1")));
    }
    let n = data.n();
    let count = (fraction * n as f64).round() as usize;
    let clean = data.clean_labels().map_or_else(|| data.labels().to_vec(), <[f64]>::to_vec);
    let mut out = data.clone().with_clean_labels(clean)?;
    let mut rng = rng::split(seed, "label-flips");
    let labels = out.labels_mut();
    for i in sample(&mut rng, n, count) {
        labels[i] = -labels[i];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize) -> Dataset {
        let rows = (0..n).map(|i| vec![1.0, i as f64]).collect();
        let labels = (0..n).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
        Dataset::from_rows(rows, labels).unwrap()
    }

    #[test]
    fn exact_flip_counts() {
        let d = data(1000);
        let flipped = flip_labels(&d, 0.4, 5).unwrap();
        let changed = (0..1000).filter(|&i| flipped.is_noisy(i)).count();
        assert_eq!(changed, 400);
        assert_eq!(flipped.clean_labels().unwrap(), d.labels());
        assert_eq!(flipped, flip_labels(&d, 0.4, 5).unwrap());
    }

    #[test]
    fn extremes() {
        let d = data(10);
        let none = flip_labels(&d, 0.0, 1).unwrap();
        assert_eq!(none.labels(), d.labels());
        let all = flip_labels(&d, 1.0, 1).unwrap();
        assert!(all.labels().iter().zip(d.labels()).all(|(a, b)| *a == -b));
        assert!(matches!(flip_labels(&d, 1.5, 1), Err(Error::Parameter(_))));
    }
}
