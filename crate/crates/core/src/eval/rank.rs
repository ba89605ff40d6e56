//! Average-rank comparison of methods across datasets with the Friedman
//! statistic and the Nemenyi critical difference.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Studentized-range critical values `q_0.05 / sqrt(2)` for `k = 2..=10`.
const NEMENYI_Q05: [f64; 9] = [
    1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164,
];

/// Nemenyi `q` at alpha = 0.05 for `k` methods, if tabulated.
pub fn nemenyi_q(k: usize) -> Option<f64> {
    k.checked_sub(2).and_then(|i| NEMENYI_Q05.get(i)).copied()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// `ranks[d][m]`: rank of method `m` on dataset `d`, 1 = best.
    pub ranks: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
    pub friedman_statistic: f64,
    /// `None` when more methods are compared than the built-in table covers.
    pub nemenyi_cd: Option<f64>,
}

impl RankTable {
    pub const CSV_HEADER: &'static str = "method,mean_rank";

    pub fn csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (m, r) in self.methods.iter().zip(&self.mean_ranks) {
            out.push_str(&format!("{m},{r:?}\n"));
        }
        out
    }
}

/// Ranks of `scores` in descending order; tied scores share the mean of
/// the ranks they span.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Ranks `accuracy[m][d]` (method `m`, dataset `d`); every entry must be
/// present and finite.
pub fn rank_methods(
    methods: &[String],
    datasets: &[String],
    accuracy: &[Vec<Option<f64>>],
) -> Result<RankTable> {
    let (k, n) = (methods.len(), datasets.len());
    if k < 2 || n < 2 {
        return Err(invalid(format!(
            "ranking needs at least 2 methods and 2 datasets, got {k} and {n}"
        )));
    }
    if accuracy.len() != k || accuracy.iter().any(|row| row.len() != n) {
        return Err(invalid(format!("accuracy matrix must be {k} x {n}")));
    }
    let mut ranks = Vec::with_capacity(n);
    for (d, name) in datasets.iter().enumerate() {
        let mut column = Vec::with_capacity(k);
        for (m, row) in accuracy.iter().enumerate() {
            match row[d] {
                Some(a) if a.is_finite() => column.push(a),
                _ => {
                    return Err(invalid(format!(
                        "missing accuracy for method {} on dataset {name}",
                        methods[m]
                    )));
                }
            }
        }
        ranks.push(average_ranks(&column));
    }
    let mean_ranks: Vec<f64> = (0..k)
        .map(|m| ranks.iter().map(|r| r[m]).sum::<f64>() / n as f64)
        .collect();
    let (kf, nf) = (k as f64, n as f64);
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let friedman_statistic =
        12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0);
    let nemenyi_cd = nemenyi_q(k).map(|q| q * (kf * (kf + 1.0) / (6.0 * nf)).sqrt());
    Ok(RankTable {
        methods: methods.to_vec(),
        datasets: datasets.to_vec(),
        ranks,
        mean_ranks,
        friedman_statistic,
        nemenyi_cd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn dominant_method_ranks_first() {
        let acc = vec![vec![Some(0.9); 4], vec![Some(0.8); 4]];
        let t = rank_methods(&names("m", 2), &names("d", 4), &acc).unwrap();
        assert_eq!(t.mean_ranks, vec![1.0, 2.0]);
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[0.7, 0.7, 0.9]), vec![2.5, 2.5, 1.0]);
        assert_eq!(average_ranks(&[0.5, 0.5]), vec![1.5, 1.5]);
    }

    #[test]
    fn missing_entry_rejected() {
        let acc = vec![vec![Some(0.9), None], vec![Some(0.8), Some(0.7)]];
        assert!(rank_methods(&names("m", 2), &names("d", 2), &acc).is_err());
        assert!(rank_methods(&names("m", 1), &names("d", 2), &acc[..1]).is_err());
    }

    #[test]
    fn q_table_bounds() {
        assert_eq!(nemenyi_q(2), Some(1.960));
        assert_eq!(nemenyi_q(10), Some(3.164));
        assert_eq!(nemenyi_q(1), None);
        assert_eq!(nemenyi_q(11), None);
    }
}
