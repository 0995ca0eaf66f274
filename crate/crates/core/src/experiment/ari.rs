use std::collections::HashMap;

use super::{ExperimentError, Result, Stage};

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index from the pair-counting contingency table.
///
/// When both labelings are trivial in the same way (all singletons, or one
/// cluster) the index is 0/0; it is defined as 1.0 there since the two
/// labelings agree on every pair.
pub fn compute_ari(truth: &[usize], estimate: &[usize]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(ExperimentError::msg(
            Stage::Evaluate,
            format!("ARI inputs differ in length: {} vs {}", truth.len(), estimate.len()),
        ));
    }
    if truth.len() < 2 {
        return Err(ExperimentError::msg(Stage::Evaluate, "ARI needs at least two items".into()));
    }
    let mut cells: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in truth.iter().zip(estimate) {
        *cells.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = cells.values().map(|&n| pairs(n)).sum();
    let sum_rows: f64 = rows.values().map(|&n| pairs(n)).sum();
    let sum_cols: f64 = cols.values().map(|&n| pairs(n)).sum();
    let expected = sum_rows * sum_cols / pairs(truth.len() as u64);
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_relabeled() {
        assert_eq!(compute_ari(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap(), 1.0);
        assert_eq!(compute_ari(&[0, 0, 1, 1, 2], &[7, 7, 3, 3, 9]).unwrap(), 1.0);
    }

    #[test]
    fn single_estimated_cluster_is_chance() {
        assert_eq!(compute_ari(&[0, 0, 1, 1, 2, 2], &[0; 6]).unwrap(), 0.0);
        assert!(compute_ari(&[0, 1, 2, 3], &[0; 4]).unwrap() <= 0.0);
    }

    #[test]
    fn errors() {
        assert!(compute_ari(&[0, 1], &[0]).is_err());
        assert!(compute_ari(&[0], &[0]).is_err());
    }
}
