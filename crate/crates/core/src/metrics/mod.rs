//! Holistic efficiency metrics and the two-client bias analysis.

mod bias;

pub use bias::{
    bias_fedavg, bias_monte_carlo, bias_safa_recurrence, bias_sigma_closed_form,
    classify_bias_case, pd_closed_form, BiasCase, BiasParams, BiasTrace, MonteCarloTrace,
};

use std::collections::BTreeSet;

/// Effective update ratio `|P - P ∩ K| / m`.
pub fn eur_empirical(picked: &[usize], crashed: &[usize], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let crashed: BTreeSet<usize> = crashed.iter().copied().collect();
    let picked: BTreeSet<usize> = picked.iter().copied().collect();
    picked.difference(&crashed).count() as f64 / m as f64
}

/// Expected EUR of selection-after-training: `1 - R` when crashes leave the
/// quota unfillable, `C` otherwise.
pub fn eur_theoretical(c: f64, r: f64) -> f64 {
    if c >= 1.0 - r {
        1.0 - r
    } else {
        c
    }
}

/// `sum_t m_sync(t) / (r m)` over the rounds given.
pub fn sync_ratio(per_round_m_sync: &[usize], m: usize) -> f64 {
    if per_round_m_sync.is_empty() || m == 0 {
        return 0.0;
    }
    let total: usize = per_round_m_sync.iter().sum();
    total as f64 / (per_round_m_sync.len() * m) as f64
}

/// Variance dividing by the count; 0 for an empty slice.
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Mean per-round population variance of the versions clients trained from.
/// Rounds where nobody trained are skipped.
pub fn version_variance(per_round_versions: &[Vec<f64>]) -> f64 {
    let rounds: Vec<f64> = per_round_versions
        .iter()
        .filter(|v| !v.is_empty())
        .map(|v| population_variance(v))
        .collect();
    if rounds.is_empty() {
        0.0
    } else {
        rounds.iter().sum::<f64>() / rounds.len() as f64
    }
}

/// Share of attempted local epochs that were thrown away.
pub fn futility(wasted: &[f64], attempted: &[f64]) -> f64 {
    let a: f64 = attempted.iter().sum();
    if a > 0.0 {
        wasted.iter().sum::<f64>() / a
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eur_examples() {
        assert_eq!(eur_empirical(&[], &[1, 2], 10), 0.0);
        assert_eq!(eur_empirical(&[1, 2, 3, 4, 5], &[4, 5, 9], 10), 0.3);
        assert_eq!(eur_empirical(&[0, 3], &[], 8), 0.25);
    }

    #[test]
    fn eur_theory_branches() {
        assert_eq!(eur_theoretical(0.5, 0.3), 0.5);
        assert!((eur_theoretical(0.9, 0.3) - 0.7).abs() < 1e-15);
        for c in [0.1, 0.5, 1.0] {
            assert_eq!(eur_theoretical(c, 0.0), c);
        }
    }

    #[test]
    fn full_sync_ratio_is_one() {
        assert_eq!(sync_ratio(&[10, 10, 10], 10), 1.0);
        assert_eq!(sync_ratio(&[5, 0], 10), 0.25);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(version_variance(&[vec![3.0, 3.0, 3.0]]), 0.0);
        assert_eq!(version_variance(&[vec![0.0, 2.0]]), 1.0);
        assert_eq!(version_variance(&[vec![0.0, 2.0], vec![], vec![5.0]]), 0.5);
    }

    #[test]
    fn futility_ratio() {
        assert_eq!(futility(&[1.0, 0.5], &[5.0, 5.0]), 0.15);
        assert_eq!(futility(&[], &[]), 0.0);
    }
}
