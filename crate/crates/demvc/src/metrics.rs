//! Unsupervised clustering evaluation: accuracy under optimal label mapping
//! (ACC), normalized mutual information (NMI), and the adjusted Rand index
//! (ARI), all computed from the contingency table of two labelings.

use crate::error::{DemvcError, Result};
use std::collections::BTreeMap;

fn validate(true_labels: &[usize], pred_labels: &[usize]) -> Result<()> {
    if true_labels.len() != pred_labels.len() {
        return Err(DemvcError::dimension(
            "labeled partition",
            &[true_labels.len()],
            &[pred_labels.len()],
        ));
    }
    if true_labels.is_empty() {
        return Err(DemvcError::Usage("metrics need at least one sample".into()));
    }
    Ok(())
}

/// Dense contingency table: counts[t][p] = number of samples with true class
/// t and predicted cluster p, after compressing both label alphabets.
fn contingency(true_labels: &[usize], pred_labels: &[usize]) -> Vec<Vec<u64>> {
    let t_ids = compress(true_labels);
    let p_ids = compress(pred_labels);
    let mut counts = vec![vec![0u64; p_ids.len()]; t_ids.len()];
    for (t, p) in true_labels.iter().zip(pred_labels) {
        counts[t_ids[t]][p_ids[p]] += 1;
    }
    counts
}

fn compress(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    ids
}

/// Maximum-total assignment of rows to columns of a profit matrix, padded to
/// square internally. Returns (total profit, column assigned to each row).
/// Hungarian method with potentials, O(S^3) on exact integer arithmetic.
pub(crate) fn hungarian_max(profit: &[Vec<u64>]) -> (u64, Vec<usize>) {
    let rows = profit.len();
    let cols = profit.first().map_or(0, Vec::len);
    let s = rows.max(cols);
    let max_val = profit
        .iter()
        .flat_map(|r| r.iter())
        .copied()
        .max()
        .unwrap_or(0) as i64;
    // minimize cost = max_val - profit on the padded square
    let cost = |i: usize, j: usize| -> i64 {
        max_val
            - if i < rows && j < cols {
                profit[i][j] as i64
            } else {
                0
            }
    };

    const INF: i64 = i64::MAX / 4;
    let mut u = vec![0i64; s + 1];
    let mut v = vec![0i64; s + 1];
    let mut matched_row = vec![0usize; s + 1]; // matched_row[j] = row (1-based) on column j
    let mut way = vec![0usize; s + 1];
    for i in 1..=s {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; s + 1];
        let mut used = vec![false; s + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=s {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=s {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; s];
    for j in 1..=s {
        if matched_row[j] > 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    let total: u64 = (0..rows)
        .map(|i| {
            let j = row_to_col[i];
            if j < cols {
                profit[i][j]
            } else {
                0
            }
        })
        .sum();
    (total, row_to_col)
}

/// Unsupervised clustering accuracy: the matched fraction under the best
/// one-to-one mapping between predicted clusters and true classes.
pub fn acc(true_labels: &[usize], pred_labels: &[usize]) -> Result<f64> {
    validate(true_labels, pred_labels)?;
    let counts = contingency(true_labels, pred_labels);
    let (matched, _) = hungarian_max(&counts);
    Ok(matched as f64 / true_labels.len() as f64)
}

/// Normalized mutual information with geometric-mean normalization:
/// I(true; pred) / sqrt(H(true) H(pred)), natural logarithms. Both partitions
/// trivial (single cluster each) gives 1.0; exactly one trivial gives 0.0.
pub fn nmi(true_labels: &[usize], pred_labels: &[usize]) -> Result<f64> {
    validate(true_labels, pred_labels)?;
    let counts = contingency(true_labels, pred_labels);
    let n = true_labels.len() as f64;
    let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..counts[0].len())
        .map(|j| counts.iter().map(|r| r[j]).sum())
        .collect();

    let entropy = |sums: &[u64]| -> f64 {
        sums.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_true = entropy(&row_sums);
    let h_pred = entropy(&col_sums);
    if h_true == 0.0 && h_pred == 0.0 {
        return Ok(1.0);
    }
    if h_true == 0.0 || h_pred == 0.0 {
        return Ok(0.0);
    }

    let mut mi = 0.0;
    for (t, row) in counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let joint = c as f64 / n;
            let marg = (row_sums[t] as f64 / n) * (col_sums[p] as f64 / n);
            mi += joint * (joint / marg).ln();
        }
    }
    Ok(mi / (h_true * h_pred).sqrt())
}

fn comb2(c: u64) -> f64 {
    (c as f64) * (c as f64 - 1.0) / 2.0
}

/// Adjusted Rand index: (Index - Expected) / (Max - Expected) over pair
/// counts. A degenerate denominator (both partitions trivial in the same
/// way) is defined as 1.0.
pub fn ari(true_labels: &[usize], pred_labels: &[usize]) -> Result<f64> {
    validate(true_labels, pred_labels)?;
    let counts = contingency(true_labels, pred_labels);
    let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..counts[0].len())
        .map(|j| counts.iter().map(|r| r[j]).sum())
        .collect();
    let n = true_labels.len() as u64;

    let index: f64 = counts
        .iter()
        .flat_map(|r| r.iter())
        .map(|&c| comb2(c))
        .sum();
    let sum_rows: f64 = row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = col_sums.iter().map(|&c| comb2(c)).sum();
    let total_pairs = comb2(n);
    if total_pairs == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total_pairs;
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom.abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_score_one() {
        let t = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(acc(&t, &t).unwrap(), 1.0);
        assert!((nmi(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!((ari(&t, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn acc_is_invariant_to_cluster_renaming() {
        let t = vec![0, 0, 1, 1];
        let p = vec![1, 1, 0, 0];
        assert_eq!(acc(&t, &p).unwrap(), 1.0);
    }

    #[test]
    fn acc_half_on_the_crossed_case() {
        let t = vec![0, 0, 1, 1];
        let p = vec![0, 1, 0, 1];
        assert_eq!(acc(&t, &p).unwrap(), 0.5);
    }

    #[test]
    fn nmi_zero_on_independent_partitions() {
        let t = vec![0, 0, 1, 1];
        let p = vec![0, 1, 0, 1];
        assert!(nmi(&t, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nmi_is_relabel_invariant() {
        let t = vec![0, 0, 1, 1, 2, 2];
        let p = vec![5, 5, 9, 9, 0, 0];
        assert!((nmi(&t, &p).unwrap() - 1.0).abs() < 1e-12);
        let p2 = vec![0, 0, 2, 1, 1, 2];
        let relabeled_t: Vec<usize> = t.iter().map(|&v| v + 7).collect();
        assert!((nmi(&t, &p2).unwrap() - nmi(&relabeled_t, &p2).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn nmi_trivial_partitions() {
        let ones = vec![3, 3, 3, 3];
        assert_eq!(nmi(&ones, &ones).unwrap(), 1.0);
        let split = vec![0, 1, 0, 1];
        assert_eq!(nmi(&ones, &split).unwrap(), 0.0);
        assert_eq!(nmi(&split, &ones).unwrap(), 0.0);
    }

    #[test]
    fn ari_hand_example_is_minus_half() {
        // contingency all ones: Index 0, Expected 2/3, Max 2
        let t = vec![0, 0, 1, 1];
        let p = vec![0, 1, 0, 1];
        assert!((ari(&t, &p).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn ari_is_relabel_invariant() {
        let t = vec![0, 0, 1, 1, 2, 2];
        let p = vec![1, 1, 2, 0, 0, 2];
        let p_renamed = vec![4, 4, 8, 6, 6, 8];
        assert!((ari(&t, &p).unwrap() - ari(&t, &p_renamed).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ari_degenerate_identical_trivial_partitions() {
        let singletons: Vec<usize> = (0..5).collect();
        assert_eq!(ari(&singletons, &singletons).unwrap(), 1.0);
        let all_one = vec![0; 5];
        assert_eq!(ari(&all_one, &all_one).unwrap(), 1.0);
    }

    #[test]
    fn unequal_lengths_are_rejected() {
        assert!(acc(&[0, 1], &[0]).is_err());
        assert!(nmi(&[], &[]).is_err());
    }

    // Brute-force ACC: try every injective mapping of predicted clusters
    // into true classes (padded with dummy classes when needed).
    fn acc_brute_force(true_labels: &[usize], pred_labels: &[usize]) -> f64 {
        let counts = contingency(true_labels, pred_labels);
        let n_true = counts.len();
        let n_pred = counts[0].len();
        let s = n_true.max(n_pred);
        let mut cols: Vec<usize> = (0..s).collect();
        let mut best = 0u64;
        permute(&mut cols, 0, &mut |perm| {
            let total: u64 = (0..n_pred)
                .map(|p| {
                    let t = perm[p];
                    if t < n_true {
                        counts[t][p]
                    } else {
                        0
                    }
                })
                .sum();
            if total > best {
                best = total;
            }
        });
        best as f64 / true_labels.len() as f64
    }

    fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    #[test]
    fn acc_matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let n = rng.gen_range(4..20);
            let kt = rng.gen_range(2..=5);
            let kp = rng.gen_range(2..=6);
            let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kt)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kp)).collect();
            let fast = acc(&t, &p).unwrap();
            let brute = acc_brute_force(&t, &p);
            assert!((fast - brute).abs() < 1e-12, "fast {fast} brute {brute}");
        }
    }

    #[test]
    fn ranges_hold_on_random_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let n = rng.gen_range(2..30);
            let kt = rng.gen_range(1..=4);
            let kp = rng.gen_range(1..=4);
            let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kt)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kp)).collect();
            let a = acc(&t, &p).unwrap();
            let m = nmi(&t, &p).unwrap();
            let r = ari(&t, &p).unwrap();
            assert!((0.0..=1.0).contains(&a));
            // the optimal mapping matches at least the largest contingency
            // cell, which is at least N / (used classes x used clusters)
            let used = |l: &[usize]| l.iter().collect::<std::collections::BTreeSet<_>>().len();
            assert!(a >= 1.0 / (used(&t) * used(&p)) as f64);
            assert!((-1e-12..=1.0 + 1e-12).contains(&m));
            assert!((-1.0..=1.0 + 1e-12).contains(&r));
        }
    }
}
