//! Rank statistics.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooFew(usize),
    #[error("rank correlation undefined: {0} input is constant")]
    Constant(&'static str),
    #[error("non-finite observation")]
    NonFinite,
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<f64, StatsError> {
    if pred.len() != truth.len() {
        return Err(StatsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.len() < 2 {
        return Err(StatsError::TooFew(pred.len()));
    }
    if pred.iter().chain(truth).any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let rp = average_ranks(pred);
    let rt = average_ranks(truth);
    let n = rp.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in rp.iter().zip(&rt) {
        let (dx, dy) = (x - mean, y - mean);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::Constant("prediction"));
    }
    if syy == 0.0 {
        return Err(StatsError::Constant("truth"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    /// Textbook definition: ranks by counting, Pearson on the rank vectors.
    fn brute_force(x: &[f64], y: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&a| {
                    let less = v.iter().filter(|&&b| b < a).count() as f64;
                    let equal = v.iter().filter(|&&b| b == a).count() as f64;
                    less + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn identical_and_reversed_orderings() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [10.0, 20.0, 30.0, 40.0, 50.0];
        assert_eq!(spearman(&x, &y).unwrap(), 1.0);
        let r: Vec<f64> = y.iter().rev().copied().collect();
        assert_eq!(spearman(&x, &r).unwrap(), -1.0);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(
            average_ranks(&[3.0, 1.0, 3.0, 2.0]),
            vec![3.5, 1.0, 3.5, 2.0]
        );
    }

    #[test]
    fn errors() {
        assert_eq!(spearman(&[1.0], &[1.0]), Err(StatsError::TooFew(1)));
        assert_eq!(
            spearman(&[1.0, 2.0], &[1.0]),
            Err(StatsError::LengthMismatch(2, 1))
        );
        assert_eq!(
            spearman(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::Constant("prediction"))
        );
    }

    #[test]
    fn matches_brute_force_on_small_tied_inputs() {
        let mut r = rng::rng(3);
        for _ in 0..10_000 {
            let n = r.random_range(2..=8);
            // small integer support forces frequent ties
            let x: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64).collect();
            match spearman(&x, &y) {
                Ok(rho) => {
                    let want = brute_force(&x, &y);
                    assert!((rho - want).abs() < 1e-12, "{x:?} {y:?}: {rho} vs {want}");
                }
                Err(StatsError::Constant(_)) => {
                    assert!(x.iter().all(|&a| a == x[0]) || y.iter().all(|&b| b == y[0]));
                }
                Err(e) => panic!("{e}"),
            }
        }
    }
}
