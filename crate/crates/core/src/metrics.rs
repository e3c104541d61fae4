//! Campaign metrics: success rates, expected attempts, token accounting,
//! and the per-query information-leakage fit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reference upper bound for high-bandwidth leakage, in bits per query.
pub const REFERENCE_BITS_PER_QUERY: f64 = 1.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("target {target_id} has {have} attempts, need {need}")]
    InsufficientAttempts {
        target_id: String,
        have: usize,
        need: usize,
    },
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("empty input")]
    EmptyInput,
    #[error("leakage fit is degenerate: fewer than 2 distinct query counts")]
    DegenerateFit,
}

/// Per-target ordered attempt outcomes for one campaign.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMatrix {
    pub mode: String,
    pub model: String,
    rows: Vec<TrialRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRow {
    pub target_id: String,
    /// Outcomes in generation order.
    pub outcomes: Vec<bool>,
}

impl TrialMatrix {
    pub fn new(mode: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            mode: mode.into(),
            model: model.into(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, target_id: impl Into<String>, outcomes: Vec<bool>) {
        self.rows.push(TrialRow {
            target_id: target_id.into(),
            outcomes,
        });
    }

    pub fn rows(&self) -> &[TrialRow] {
        &self.rows
    }

    pub fn target_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.target_id.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Fraction of targets where any of the first `k` attempts succeeded.
pub fn pass_at_k_empirical(trials: &TrialMatrix, k: usize) -> Result<f64, MetricsError> {
    if k < 1 {
        return Err(MetricsError::DomainError("k must be >= 1".to_string()));
    }
    if trials.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    for row in trials.rows() {
        if row.outcomes.len() < k {
            return Err(MetricsError::InsufficientAttempts {
                target_id: row.target_id.clone(),
                have: row.outcomes.len(),
                need: k,
            });
        }
    }
    let hits = trials
        .rows()
        .iter()
        .filter(|row| row.outcomes[..k].iter().any(|&b| b))
        .count();
    Ok(hits as f64 / trials.rows().len() as f64)
}

/// Unbiased pass@k estimator: `1 - C(n-c, k) / C(n, k)`, computed in the
/// numerically stable product form.
pub fn pass_at_k_unbiased(n: usize, c: usize, k: usize) -> Result<f64, MetricsError> {
    if c > n {
        return Err(MetricsError::DomainError(format!("c={c} exceeds n={n}")));
    }
    if k < 1 || k > n {
        return Err(MetricsError::DomainError(format!(
            "k={k} outside 1..={n}"
        )));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let product = (1..=k).fold(1.0_f64, |acc, i| {
        acc * (n - c - k + i) as f64 / (n - k + i) as f64
    });
    Ok(1.0 - product)
}

/// Mean number of candidate trials to hit the true value. `None` entries
/// are failed attacks and are charged the full budget λ.
pub fn enq(candidate_ranks: &[Option<usize>], lambda: usize) -> Result<f64, MetricsError> {
    if candidate_ranks.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut total = 0usize;
    for rank in candidate_ranks {
        match rank {
            Some(0) => {
                return Err(MetricsError::DomainError(
                    "ranks are 1-based; got 0".to_string(),
                ))
            }
            Some(r) => total += *r,
            None => total += lambda,
        }
    }
    Ok(total as f64 / candidate_ranks.len() as f64)
}

/// Per-method token statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenSummary {
    pub mean: f64,
    pub total: u64,
}

/// Aggregate prompt+completion token counts per attack, grouped by method
/// tag. Methods with no attacks are absent from the summary.
pub fn token_consumption(entries: &[(String, u64, u64)]) -> BTreeMap<String, TokenSummary> {
    let mut grouped: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for (method, prompt, completion) in entries {
        grouped
            .entry(method.clone())
            .or_default()
            .push(prompt + completion);
    }
    grouped
        .into_iter()
        .map(|(method, totals)| {
            let total: u64 = totals.iter().sum();
            let mean = total as f64 / totals.len() as f64;
            (method, TokenSummary { mean, total })
        })
        .collect()
}

/// One `(query budget, failure rate)` observation for the leakage fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakagePoint {
    pub n_queries: u32,
    pub error_rate: f64,
}

impl LeakagePoint {
    pub fn new(n_queries: u32, error_rate: f64) -> Result<Self, MetricsError> {
        if n_queries < 1 {
            return Err(MetricsError::DomainError("n_queries must be >= 1".into()));
        }
        if !(error_rate > 0.0 && error_rate <= 1.0) {
            return Err(MetricsError::DomainError(format!(
                "error_rate {error_rate} outside (0, 1]"
            )));
        }
        Ok(Self {
            n_queries,
            error_rate,
        })
    }
}

/// Result of fitting `log2(error_rate)` against the query count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageFit {
    pub slope: f64,
    pub intercept: f64,
    pub bits_per_query: f64,
    pub r2: f64,
}

impl LeakageFit {
    /// Flag fits that exceed the reference per-query leakage bound.
    pub fn exceeds_reference_bound(&self) -> bool {
        self.bits_per_query > REFERENCE_BITS_PER_QUERY
    }
}

/// Ordinary least squares of `log2(error_rate)` on `n_queries`. The slope
/// magnitude is the estimated information revealed per query, in bits.
pub fn fit_leakage_slope(points: &[LeakagePoint]) -> Result<LeakageFit, MetricsError> {
    let distinct: std::collections::BTreeSet<u32> =
        points.iter().map(|p| p.n_queries).collect();
    if distinct.len() < 2 {
        return Err(MetricsError::DegenerateFit);
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.n_queries as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.error_rate.log2()).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(LeakageFit {
        slope,
        intercept,
        bits_per_query: -slope,
        r2,
    })
}

/// Minimum queries needed for reliable recovery at error rate `epsilon`
/// given `bits_per_query` of leakage: `log2(1/epsilon) / bits_per_query`.
pub fn min_queries_bound(epsilon: f64, bits_per_query: f64) -> Result<f64, MetricsError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(MetricsError::DomainError(format!(
            "epsilon {epsilon} outside (0, 1)"
        )));
    }
    if bits_per_query <= 0.0 {
        return Err(MetricsError::DomainError(format!(
            "bits_per_query {bits_per_query} must be positive"
        )));
    }
    Ok((1.0 / epsilon).log2() / bits_per_query)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_target(outcomes: Vec<bool>) -> TrialMatrix {
        let mut m = TrialMatrix::new("blackbox", "sim");
        m.push_row("t1", outcomes);
        m
    }

    #[test]
    fn empirical_prefix_indicator() {
        let m = single_target(vec![false, true, false, false, true]);
        assert_eq!(pass_at_k_empirical(&m, 1).unwrap(), 0.0);
        assert_eq!(pass_at_k_empirical(&m, 2).unwrap(), 1.0);
        assert_eq!(pass_at_k_empirical(&m, 5).unwrap(), 1.0);
    }

    #[test]
    fn empirical_all_false() {
        let m = single_target(vec![false; 5]);
        for k in 1..=5 {
            assert_eq!(pass_at_k_empirical(&m, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn empirical_insufficient_attempts() {
        let m = single_target(vec![true]);
        assert!(matches!(
            pass_at_k_empirical(&m, 2),
            Err(MetricsError::InsufficientAttempts { .. })
        ));
    }

    #[test]
    fn unbiased_matches_closed_form() {
        // 1 - C(3,3)/C(5,3) = 1 - 1/10
        let v = pass_at_k_unbiased(5, 2, 3).unwrap();
        assert!((v - 0.9).abs() < 1e-12);
    }

    #[test]
    fn unbiased_degenerate_cases() {
        for k in 1..=6 {
            assert_eq!(pass_at_k_unbiased(6, 0, k).unwrap(), 0.0);
            assert_eq!(pass_at_k_unbiased(6, 6, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn unbiased_domain_errors() {
        assert!(pass_at_k_unbiased(5, 6, 1).is_err());
        assert!(pass_at_k_unbiased(5, 2, 0).is_err());
        assert!(pass_at_k_unbiased(5, 2, 6).is_err());
    }

    #[test]
    fn unbiased_monotone_in_k() {
        for n in 1..=8 {
            for c in 0..=n {
                let mut prev = 0.0;
                for k in 1..=n {
                    let v = pass_at_k_unbiased(n, c, k).unwrap();
                    assert!(v >= prev - 1e-12, "n={n} c={c} k={k}");
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn enq_arithmetic() {
        assert_eq!(enq(&[Some(1), Some(3), None], 20).unwrap(), 8.0);
        assert_eq!(enq(&[Some(1), Some(1)], 20).unwrap(), 1.0);
        assert_eq!(enq(&[], 20), Err(MetricsError::EmptyInput));
        assert!(enq(&[Some(0)], 20).is_err());
    }

    #[test]
    fn enq_uniform_rank_expectation() {
        // Uniform rank over a 4-candidate set has expectation 2.5.
        let ranks: Vec<Option<usize>> = (0..4000).map(|i| Some(i % 4 + 1)).collect();
        assert!((enq(&ranks, 20).unwrap() - 2.5).abs() < 1e-9);
    }

    #[test]
    fn token_consumption_grouping() {
        let entries = vec![
            ("blackbox".to_string(), 100, 50),
            ("blackbox".to_string(), 200, 100),
        ];
        let summary = token_consumption(&entries);
        let s = &summary["blackbox"];
        assert_eq!(s.total, 450);
        assert!((s.mean - 225.0).abs() < 1e-12);
        assert!(!summary.contains_key("graybox"));
    }

    #[test]
    fn token_consumption_empty() {
        assert!(token_consumption(&[]).is_empty());
    }

    #[test]
    fn leakage_fit_exact_geometric() {
        let points = vec![
            LeakagePoint::new(1, 0.5).unwrap(),
            LeakagePoint::new(2, 0.25).unwrap(),
            LeakagePoint::new(3, 0.125).unwrap(),
        ];
        let fit = fit_leakage_slope(&points).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.bits_per_query - 1.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(!fit.exceeds_reference_bound());
    }

    #[test]
    fn leakage_fit_degenerate() {
        let points = vec![
            LeakagePoint::new(3, 0.5).unwrap(),
            LeakagePoint::new(3, 0.25).unwrap(),
        ];
        assert_eq!(fit_leakage_slope(&points), Err(MetricsError::DegenerateFit));
    }

    #[test]
    fn leakage_point_domain() {
        assert!(LeakagePoint::new(0, 0.5).is_err());
        assert!(LeakagePoint::new(1, 0.0).is_err());
        assert!(LeakagePoint::new(1, 1.5).is_err());
        assert!(LeakagePoint::new(1, 1.0).is_ok());
    }

    #[test]
    fn reference_bound_flagging() {
        let fit = LeakageFit {
            slope: -1.6,
            intercept: 0.0,
            bits_per_query: 1.6,
            r2: 1.0,
        };
        assert!(fit.exceeds_reference_bound());
    }

    #[test]
    fn min_queries_bound_values() {
        assert_eq!(min_queries_bound(0.25, 1.0).unwrap(), 2.0);
        assert!((min_queries_bound(0.125, 1.5).unwrap() - 2.0).abs() < 1e-12);
        assert!((min_queries_bound(0.5, 1.5).unwrap() - 1.0 / 1.5).abs() < 1e-9);
        assert!(min_queries_bound(0.0, 1.0).is_err());
        assert!(min_queries_bound(0.5, 0.0).is_err());
    }
}
