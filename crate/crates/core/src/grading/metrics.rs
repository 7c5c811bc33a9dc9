use serde::Serialize;

use crate::error::{Error, Result};

/// Number of 0.1-wide grade ranges.
pub const BINS: usize = 10;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} grades vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidInput("no grades to compare".into()));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Root-mean-squared deviation.
pub fn rmsd(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    Ok((y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
}

/// Bin of a grade in [0, 1]: `[0,0.1)`, ..., `[0.8,0.9)`, `[0.9,1.0]`.
pub fn bin_index(grade: f64) -> usize {
    // the epsilon keeps grades such as 0.3 (stored as 0.29999...) in their bin
    ((grade * BINS as f64 + 1e-9).floor().max(0.0) as usize).min(BINS - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinWeights {
    /// One weight per input grade, same order.
    pub weights: Vec<f64>,
    pub counts: [usize; BINS],
    /// Total weight of each bin; empty bins get zero.
    pub shares: [f64; BINS],
}

/// Gives every non-empty grade bin the same total weight, split evenly
/// among its entries.
pub fn bin_weights(grades: &[f64]) -> Result<BinWeights> {
    if grades.is_empty() {
        return Err(Error::InvalidInput("no grades to weight".into()));
    }
    if let Some(g) = grades.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::Range(format!("grade {g} outside [0, 1]")));
    }
    let mut counts = [0usize; BINS];
    for &g in grades {
        counts[bin_index(g)] += 1;
    }
    let nonempty = counts.iter().filter(|&&c| c > 0).count();
    let share = 1.0 / nonempty as f64;
    let mut shares = [0.0; BINS];
    for (s, &c) in shares.iter_mut().zip(&counts) {
        if c > 0 {
            *s = share;
        }
    }
    let weights = grades
        .iter()
        .map(|&g| {
            let b = bin_index(g);
            shares[b] / counts[b] as f64
        })
        .collect();
    Ok(BinWeights {
        weights,
        counts,
        shares,
    })
}

fn check_weights(y: &[f64], y_hat: &[f64], w: &[f64]) -> Result<()> {
    check_pair(y, y_hat)?;
    if w.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} grades",
            w.len(),
            y.len()
        )));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::InvalidInput(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Weighted mean absolute error.
pub fn wmae(y: &[f64], y_hat: &[f64], w: &[f64]) -> Result<f64> {
    check_weights(y, y_hat, w)?;
    Ok(y.iter().zip(y_hat).zip(w).map(|((a, b), w)| w * (a - b).abs()).sum())
}

/// Weighted root-mean-squared deviation.
pub fn wrmsd(y: &[f64], y_hat: &[f64], w: &[f64]) -> Result<f64> {
    check_weights(y, y_hat, w)?;
    Ok(y.iter()
        .zip(y_hat)
        .zip(w)
        .map(|((a, b), w)| w * (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plain_examples() {
        assert_eq!(mae(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(rmsd(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(rmsd(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!((mae(&[0.2, 0.8], &[0.4, 0.4]).unwrap() - 0.3).abs() < 1e-12);
        // sqrt((0.04 + 0.16) / 2)
        assert!((rmsd(&[0.2, 0.8], &[0.4, 0.4]).unwrap() - 0.31623).abs() < 1e-5);
        assert!(mae(&[], &[]).is_err());
        assert!(rmsd(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn bin_weight_examples() {
        let uniform: Vec<f64> = (0..10).map(|i| i as f64 / 10.0 + 0.05).collect();
        assert!(bin_weights(&uniform).unwrap().weights.iter().all(|&w| w == 0.1));
        assert_eq!(bin_weights(&[0.05, 0.95, 0.95]).unwrap().weights, [0.5, 0.25, 0.25]);
        assert_eq!(bin_index(1.0), 9);
        assert_eq!(bin_index(0.9), 9);
        assert_eq!(bin_index(0.3), 3);
        assert_eq!(bin_index(0.0999), 0);
        let w = bin_weights(&[1.0, 0.95]).unwrap();
        assert_eq!(w.counts[9], 2);
        assert!(bin_weights(&[]).is_err());
        assert!(bin_weights(&[1.2]).is_err());
    }

    #[test]
    fn weighted_examples() {
        assert!((wmae(&[0.2, 0.8], &[0.4, 0.4], &[0.5, 0.5]).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(wmae(&[0.5], &[0.5], &[1.0]).unwrap(), 0.0);
        assert!(wmae(&[0.2, 0.8], &[0.4, 0.4], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn majority_predictor_is_penalized() {
        let mut y = vec![1.0; 90];
        y.extend([0.0; 10]);
        let y_hat = vec![1.0; 100];
        let w = bin_weights(&y).unwrap();
        assert!((mae(&y, &y_hat).unwrap() - 0.1).abs() < 1e-12);
        // two non-empty bins with half the weight each: the ten zeros carry
        // 0.05 apiece and are each off by 1
        assert!((wmae(&y, &y_hat, &w.weights).unwrap() - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metric_orderings(pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..50)) {
            let (y, y_hat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let w = bin_weights(&y).unwrap();
            let total: f64 = w.weights.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(w.weights.iter().all(|&x| x > 0.0));
            prop_assert!(mae(&y, &y_hat).unwrap() <= rmsd(&y, &y_hat).unwrap() + 1e-12);
            prop_assert!(wmae(&y, &y_hat, &w.weights).unwrap() <= wrmsd(&y, &y_hat, &w.weights).unwrap() + 1e-12);
            for (i, &g) in y.iter().enumerate() {
                for (j, &h) in y.iter().enumerate() {
                    if bin_index(g) == bin_index(h) {
                        prop_assert_eq!(w.weights[i], w.weights[j]);
                    }
                }
            }
        }

        #[test]
        fn adding_to_fullest_bin_lowers_its_weight(grades in prop::collection::vec(0.0f64..=1.0, 1..40)) {
            let before = bin_weights(&grades).unwrap();
            let fullest = (0..BINS).max_by_key(|&b| (before.counts[b], std::cmp::Reverse(b))).unwrap();
            let member = grades.iter().copied().find(|&g| bin_index(g) == fullest).unwrap();
            let mut more = grades.clone();
            more.push(member);
            let after = bin_weights(&more).unwrap();
            let idx = grades.iter().position(|&g| bin_index(g) == fullest).unwrap();
            prop_assert!(after.weights[idx] < before.weights[idx]);
        }
    }
}
