//! Balanced accuracy and stream-level helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::train::network::NUM_CLASSES;

/// Mean per-class recall over the classes present in `labels`.
pub fn bas(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions, {} labels", preds.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("balanced accuracy of an empty set".into()));
    }
    let mut hit = [0usize; NUM_CLASSES];
    let mut total = [0usize; NUM_CLASSES];
    for (&p, &l) in preds.iter().zip(labels) {
        if l >= NUM_CLASSES {
            return Err(Error::LabelOutOfRange { label: l, classes: NUM_CLASSES });
        }
        total[l] += 1;
        hit[l] += (p == l) as usize;
    }
    let present: Vec<usize> = (0..NUM_CLASSES).filter(|&c| total[c] > 0).collect();
    Ok(present.iter().map(|&c| hit[c] as f64 / total[c] as f64).sum::<f64>() / present.len() as f64)
}

/// Replaces each prediction, with probability `rate`, by a different class
/// drawn uniformly.
pub fn inject_errors(preds: &[usize], rate: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    preds
        .iter()
        .map(|&p| {
            if rng.gen_bool(rate) {
                (p + rng.gen_range(1..NUM_CLASSES)) % NUM_CLASSES
            } else {
                p
            }
        })
        .collect()
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Median of a non-empty slice (mean of the two middle values for even
/// lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant() {
        let labels = [0, 1, 2, 3, 0, 1, 2, 3];
        assert_eq!(bas(&labels, &labels).unwrap(), 1.0);
        assert_eq!(bas(&[0; 8], &labels).unwrap(), 0.25);
    }

    #[test]
    fn crafted_confusion() {
        // recalls 1.0, 0.5, 0.0, 0.5
        let labels = [0, 0, 1, 1, 2, 2, 3, 3];
        let preds = [0, 0, 1, 0, 3, 3, 3, 2];
        assert_eq!(bas(&preds, &labels).unwrap(), 0.5);
    }

    #[test]
    fn only_present_classes_count() {
        assert_eq!(bas(&[1, 1, 0], &[1, 1, 1]).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn errors() {
        assert!(bas(&[], &[]).is_err());
        assert!(bas(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn injected_errors_always_change_class() {
        let p = vec![2; 1000];
        let q = inject_errors(&p, 1.0, 3);
        assert!(q.iter().all(|&c| c != 2));
        let q = inject_errors(&p, 0.1, 3);
        let changed = q.iter().filter(|&&c| c != 2).count();
        assert!((60..140).contains(&changed), "{changed}");
    }

    #[test]
    fn stats() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }
}
