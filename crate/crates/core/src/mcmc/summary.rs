use serde::{Deserialize, Serialize};

use super::{ChainOutput, McmcError};
use crate::linalg::quantile_sorted;

/// Posterior median and central 95% interval of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn summarize(name: &str, values: &[f64]) -> Result<SummaryRow, McmcError> {
    if values.is_empty() {
        return Err(McmcError::EmptyChain);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SummaryRow {
        name: name.to_string(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile_sorted(&sorted, 0.5),
        lower: quantile_sorted(&sorted, 0.025),
        upper: quantile_sorted(&sorted, 0.975),
    })
}

/// One row per parameter. With `tau_as_variance`, `tau` is reported as
/// `A = 1/τ`.
pub fn posterior_summary(
    chain: &ChainOutput,
    tau_as_variance: bool,
) -> Result<Vec<SummaryRow>, McmcError> {
    if chain.is_empty() {
        return Err(McmcError::EmptyChain);
    }
    chain
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let col = chain.samples.column(k);
            if tau_as_variance && name == "tau" {
                let inv: Vec<f64> = col.iter().map(|t| 1.0 / t).collect();
                summarize("A", &inv)
            } else {
                summarize(name, col.as_slice())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_chain_has_degenerate_interval() {
        let r = summarize("c", &[3.5; 40]).unwrap();
        assert_eq!((r.median, r.lower, r.upper), (3.5, 3.5, 3.5));
    }

    #[test]
    fn integer_chain_median() {
        let v: Vec<f64> = (1..=10000).map(f64::from).collect();
        let r = summarize("i", &v).unwrap();
        assert_eq!(r.median, 5000.5);
        assert!((r.lower - 250.975).abs() < 1e-9);
    }

    #[test]
    fn quantiles_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.random_range(1..300);
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let r = summarize("r", &v).unwrap();
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |p: f64| {
                let h = (n - 1) as f64 * p;
                let lo = h.floor() as usize;
                s[lo] + (h - lo as f64) * (s[(lo + 1).min(n - 1)] - s[lo])
            };
            assert!((r.median - q(0.5)).abs() < 1e-12);
            assert!((r.lower - q(0.025)).abs() < 1e-12);
            assert!((r.upper - q(0.975)).abs() < 1e-12);
        }
    }

    #[test]
    fn tau_reported_as_variance() {
        let chain = ChainOutput {
            names: vec!["tau".into()],
            samples: DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 4.0]),
            theta: DMatrix::zeros(3, 0),
            log_posterior: vec![0.0; 3],
            blocks: vec![],
            infeasible: 0,
            audit: None,
        };
        let rows = posterior_summary(&chain, true).unwrap();
        assert_eq!(rows[0].name, "A");
        assert_eq!(rows[0].median, 0.5);
        assert!(matches!(summarize("x", &[]), Err(McmcError::EmptyChain)));
    }
}
