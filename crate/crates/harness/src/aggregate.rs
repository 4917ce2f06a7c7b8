use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample (n - 1) standard deviation. A single record has std 0.
pub fn aggregate(xs: &[f64]) -> Result<Summary> {
    let n = xs.len();
    if n == 0 {
        return Err(HarnessError::EmptyRecords);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        log::warn!("standard deviation of a single record reported as 0");
        0.0
    } else {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Summary { n, mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_records() {
        let s = aggregate(&[0.4, 0.5, 0.6]).unwrap();
        assert_eq!(s.n, 3);
        assert!((s.mean - 0.5).abs() < 1e-15);
        assert!((s.std - 0.1).abs() < 1e-15);
    }

    #[test]
    fn single_record_has_zero_std() {
        let s = aggregate(&[7.25]).unwrap();
        assert_eq!((s.mean, s.std), (7.25, 0.0));
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(aggregate(&[]), Err(HarnessError::EmptyRecords)));
    }

    #[test]
    fn matches_two_pass_oracle() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let s = aggregate(&xs).unwrap();
        let mut mean = 0.0;
        for (i, x) in xs.iter().enumerate() {
            mean += (x - mean) / (i + 1) as f64;
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 49.0;
        assert!((s.mean - mean).abs() < 1e-12 && (s.std - var.sqrt()).abs() < 1e-12);
    }
}
