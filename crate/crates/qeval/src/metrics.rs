//! Rank and linear correlation with drop-aware pairing, plus score
//! histograms.
//!
//! All coefficients may be undefined (fewer than two points, or a constant
//! vector); undefined values surface as `None` and render as an em dash,
//! never as zero. Spearman uses average ranks for ties; Kendall is the
//! tau-b variant with tie correction in both rankings.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::parsing::{DropReason, ParseOutcome};

fn check_lengths(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    Ok(())
}

/// Average ranks (1-based); tied values share the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson's r. `None` when either vector is constant or too short.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    check_lengths(x, y)?;
    let n = x.len();
    if n < 2 {
        return Ok(None);
    }
    let mean_x = x.iter().sum::<f64>() / n as f64;
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mean_x;
        let dy = y[i] - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

/// Spearman's rho: Pearson correlation of average-ties ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    check_lengths(x, y)?;
    if x.len() < 2 {
        return Ok(None);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Strict inversions of `values` counted by merge sort.
fn count_inversions(values: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = values.split_at_mut(mid);
    let mut swaps = count_inversions(left) + count_inversions(right);

    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            merged.push(left[i]);
            i += 1;
        } else {
            // left[i] > right[j]: right[j] is inverted with every remaining
            // left element.
            swaps += (left.len() - i) as u64;
            merged.push(right[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&left[i..]);
    merged.extend_from_slice(&right[j..]);
    values.copy_from_slice(&merged);
    swaps
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let run = (j - i + 1) as u64;
        total += run * (run - 1) / 2;
        i = j + 1;
    }
    total
}

/// Kendall's tau-b:
/// `(concordant - discordant) / sqrt((n0 - n1)(n0 - n2))`
/// where n1 and n2 are the tied-pair counts of x and y. Computed via the
/// sort-and-merge formulation rather than pair enumeration.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<Option<f64>, MetricsError> {
    check_lengths(x, y)?;
    let n = x.len();
    if n < 2 {
        return Ok(None);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap()
            .then(y[a].partial_cmp(&y[b]).unwrap())
    });

    let n0 = n as u64 * (n as u64 - 1) / 2;

    // Tied pairs in x, and joint ties, from the (x, y)-sorted order.
    let mut n1 = 0u64;
    let mut n3 = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let run = (j - i + 1) as u64;
        n1 += run * (run - 1) / 2;
        let mut k = i;
        while k <= j {
            let mut m = k;
            while m + 1 <= j && y[order[m + 1]] == y[order[k]] {
                m += 1;
            }
            let joint = (m - k + 1) as u64;
            n3 += joint * (joint - 1) / 2;
            k = m + 1;
        }
        i = j + 1;
    }

    let mut y_sorted: Vec<f64> = {
        let mut ys: Vec<f64> = y.to_vec();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys
    };
    let n2 = tied_pairs(&y_sorted);
    y_sorted.clear();

    if n0 == n1 || n0 == n2 {
        return Ok(None);
    }

    let mut y_by_x: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let discordant = count_inversions(&mut y_by_x);

    let numerator = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * discordant as i128;
    let denom = ((n0 - n1) as u128 * (n0 - n2) as u128) as f64;
    Ok(Some(numerator as f64 / denom.sqrt()))
}

/// Order-aligned prediction/gold vectors and the drop tallies.
#[derive(Debug, Clone, Default)]
pub struct PairedScores {
    pub pred: Vec<f64>,
    pub gold: Vec<f64>,
    pub dropped: usize,
    pub dropped_backend: usize,
}

impl PairedScores {
    pub fn total(&self) -> usize {
        self.pred.len() + self.dropped + self.dropped_backend
    }
}

/// Pair parsed scores with their gold values. Only records carrying a score
/// enter the vectors; drops are tallied by reason, with backend failures
/// kept apart from the no-score drop count. An id with no gold score is a
/// hard error.
pub fn pair_scores(
    outcomes: &[(String, ParseOutcome)],
    gold: &HashMap<String, f64>,
) -> Result<PairedScores, MetricsError> {
    let mut paired = PairedScores::default();
    for (id, outcome) in outcomes {
        let gold_score = gold
            .get(id)
            .ok_or_else(|| MetricsError::UnknownInstance(id.clone()))?;
        match outcome {
            ParseOutcome::Score(s) => {
                paired.pred.push(*s);
                paired.gold.push(*gold_score);
            }
            ParseOutcome::Dropped(DropReason::BackendError) => paired.dropped_backend += 1,
            ParseOutcome::Dropped(_) => paired.dropped += 1,
        }
    }
    Ok(paired)
}

/// Correlation summary for one (pair, template, backend) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rho: Option<f64>,
    pub r: Option<f64>,
    pub tau: Option<f64>,
    pub n_used: usize,
    pub dropped: usize,
    pub dropped_backend: usize,
}

impl CorrelationReport {
    pub fn from_paired(paired: &PairedScores) -> Result<Self, MetricsError> {
        Ok(CorrelationReport {
            rho: spearman(&paired.pred, &paired.gold)?,
            r: pearson(&paired.pred, &paired.gold)?,
            tau: kendall_tau(&paired.pred, &paired.gold)?,
            n_used: paired.pred.len(),
            dropped: paired.dropped,
            dropped_backend: paired.dropped_backend,
        })
    }
}

/// Undefined coefficients render as an em dash, never as zero.
pub fn display_coeff(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => "—".to_string(),
    }
}

/// Equal-width histogram over [0,100].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
}

/// Bin scores into `bins` equal-width bins over [0,100]. The final bin is
/// closed on the right so a score of exactly 100 is counted.
pub fn histogram(scores: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let width = 100.0 / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &s in scores {
        let mut idx = (s / width).floor() as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        counts[idx] += 1;
    }
    let n = scores.len();
    let density: Vec<f64> = counts
        .iter()
        .map(|&c| {
            if n == 0 {
                0.0
            } else {
                c as f64 / (n as f64 * width)
            }
        })
        .collect();
    Histogram {
        bin_edges,
        counts,
        density,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Definitional oracles, deliberately built along different routes than
    // the implementations they check.

    fn ranks_by_counting(values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .map(|&v| {
                let below = values.iter().filter(|&&o| o < v).count() as f64;
                let equal = values.iter().filter(|&&o| o == v).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }

    fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len() as f64;
        if x.len() < 2 {
            return None;
        }
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        if vx == 0.0 || vy == 0.0 {
            None
        } else {
            Some(cov / (vx.sqrt() * vy.sqrt()))
        }
    }

    fn spearman_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
        pearson_oracle(&ranks_by_counting(x), &ranks_by_counting(y))
    }

    fn kendall_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len();
        if n < 2 {
            return None;
        }
        let mut concordant = 0i64;
        let mut discordant = 0i64;
        let mut ties_x = 0u64;
        let mut ties_y = 0u64;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 && dy == 0.0 {
                    continue;
                } else if dx == 0.0 {
                    ties_x += 1;
                } else if dy == 0.0 {
                    ties_y += 1;
                } else if dx * dy > 0.0 {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as u64;
        let tx = {
            let mut t = 0u64;
            for i in 0..n {
                for j in (i + 1)..n {
                    if x[i] == x[j] {
                        t += 1;
                    }
                }
            }
            t
        };
        let ty = {
            let mut t = 0u64;
            for i in 0..n {
                for j in (i + 1)..n {
                    if y[i] == y[j] {
                        t += 1;
                    }
                }
            }
            t
        };
        let _ = (ties_x, ties_y);
        if n0 == tx || n0 == ty {
            return None;
        }
        let denom = (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt();
        Some((concordant - discordant) as f64 / denom)
    }

    fn assert_close(a: Option<f64>, b: Option<f64>, what: &str) {
        match (a, b) {
            (Some(a), Some(b)) => {
                assert!((a - b).abs() < 1e-12, "{what}: {a} vs {b}");
            }
            (None, None) => {}
            _ => panic!("{what}: definedness mismatch: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn spearman_monotone_identity() {
        let x = [1.0, 2.0, 3.0];
        let y = [10.0, 20.0, 30.0];
        assert_eq!(spearman(&x, &y).unwrap(), Some(1.0));
    }

    #[test]
    fn spearman_reversal() {
        let x = [1.0, 2.0, 3.0];
        let y = [3.0, 2.0, 1.0];
        assert_eq!(spearman(&x, &y).unwrap(), Some(-1.0));
    }

    #[test]
    fn spearman_with_ties_matches_rank_oracle() {
        let x = [1.0, 2.0, 2.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        let got = spearman(&x, &y).unwrap();
        assert_close(got, spearman_oracle(&x, &y), "spearman ties");
        assert!((got.unwrap() - 0.9486832980505138).abs() < 1e-12);
    }

    #[test]
    fn pearson_affine() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_matches_definitional_oracle() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 1.0, 2.0, 5.0];
        let got = pearson(&x, &y).unwrap();
        assert_close(got, pearson_oracle(&x, &y), "pearson");
        assert!((got.unwrap() - 6.5 / 53.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn kendall_one_discordant_pair() {
        let x = [1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 2.0];
        let got = kendall_tau(&x, &y).unwrap().unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_identical_orderings() {
        let x = [1.0, 5.0, 9.0, 12.0];
        assert_eq!(kendall_tau(&x, &x).unwrap(), Some(1.0));
    }

    #[test]
    fn kendall_ties_match_enumeration_oracle() {
        let x = [1.0, 1.0, 2.0];
        let y = [1.0, 2.0, 3.0];
        let got = kendall_tau(&x, &y).unwrap();
        assert_close(got, kendall_oracle(&x, &y), "tau-b ties");
        assert!((got.unwrap() - 2.0 / 6.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_vectors_are_undefined() {
        let c = [5.0, 5.0, 5.0];
        let y = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&c, &y).unwrap(), None);
        assert_eq!(spearman(&c, &y).unwrap(), None);
        assert_eq!(kendall_tau(&c, &y).unwrap(), None);
        assert_eq!(pearson(&[1.0], &[2.0]).unwrap(), None);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(spearman(&[1.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0], &[1.0, 2.0]).is_err());
        assert!(kendall_tau(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pairing_skips_drops_and_tallies_by_kind() {
        let gold: HashMap<String, f64> =
            [("a", 10.0), ("b", 20.0), ("c", 30.0), ("d", 40.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
        let outcomes = vec![
            ("a".to_string(), ParseOutcome::Score(11.0)),
            ("b".to_string(), ParseOutcome::Dropped(DropReason::NoScore)),
            ("c".to_string(), ParseOutcome::Score(29.0)),
            (
                "d".to_string(),
                ParseOutcome::Dropped(DropReason::BackendError),
            ),
        ];
        let paired = pair_scores(&outcomes, &gold).unwrap();
        assert_eq!(paired.pred, vec![11.0, 29.0]);
        assert_eq!(paired.gold, vec![10.0, 30.0]);
        assert_eq!(paired.dropped, 1);
        assert_eq!(paired.dropped_backend, 1);
        assert_eq!(paired.total(), 4);
    }

    #[test]
    fn pairing_all_dropped_gives_undefined_coefficients() {
        let gold: HashMap<String, f64> = [("a".to_string(), 10.0)].into_iter().collect();
        let outcomes = vec![("a".to_string(), ParseOutcome::Dropped(DropReason::Echo))];
        let paired = pair_scores(&outcomes, &gold).unwrap();
        let report = CorrelationReport::from_paired(&paired).unwrap();
        assert_eq!(report.rho, None);
        assert_eq!(report.n_used, 0);
        assert_eq!(report.dropped, 1);
        assert_eq!(display_coeff(report.rho), "—");
    }

    #[test]
    fn pairing_unknown_id_is_fatal() {
        let gold = HashMap::new();
        let outcomes = vec![("ghost".to_string(), ParseOutcome::Score(50.0))];
        assert!(matches!(
            pair_scores(&outcomes, &gold),
            Err(MetricsError::UnknownInstance(_))
        ));
    }

    #[test]
    fn histogram_bins_and_density() {
        let h = histogram(&[0.0, 100.0], 2);
        assert_eq!(h.counts, vec![1, 1]);
        assert_eq!(h.bin_edges, vec![0.0, 50.0, 100.0]);
        let integral: f64 = h.density.iter().map(|d| d * 50.0).sum();
        assert!((integral - 1.0).abs() < 1e-12);

        let empty = histogram(&[], 4);
        assert_eq!(empty.counts, vec![0, 0, 0, 0]);
        assert!(empty.density.iter().all(|&d| d == 0.0));
    }

    proptest! {
        #[test]
        fn oracle_equivalence_on_random_tied_vectors(
            values in proptest::collection::vec((0u8..8, 0u8..8), 2..40)
        ) {
            let x: Vec<f64> = values.iter().map(|(a, _)| *a as f64).collect();
            let y: Vec<f64> = values.iter().map(|(_, b)| *b as f64).collect();
            assert_close(spearman(&x, &y).unwrap(), spearman_oracle(&x, &y), "spearman");
            assert_close(pearson(&x, &y).unwrap(), pearson_oracle(&x, &y), "pearson");
            assert_close(kendall_tau(&x, &y).unwrap(), kendall_oracle(&x, &y), "kendall");
        }

        #[test]
        fn rank_coefficients_are_monotone_transform_invariant(
            values in proptest::collection::vec((0u8..10, 0u8..10), 3..30)
        ) {
            let x: Vec<f64> = values.iter().map(|(a, _)| *a as f64).collect();
            let y: Vec<f64> = values.iter().map(|(_, b)| *b as f64).collect();
            // strictly increasing transform
            let fx: Vec<f64> = x.iter().map(|v| v * v * v + 2.0 * v + 1.0).collect();
            assert_close(spearman(&x, &y).unwrap(), spearman(&fx, &y).unwrap(), "spearman invariance");
            assert_close(kendall_tau(&x, &y).unwrap(), kendall_tau(&fx, &y).unwrap(), "tau invariance");
        }

        #[test]
        fn coefficients_are_symmetric_and_bounded(
            values in proptest::collection::vec((0u8..12, 0u8..12), 2..30)
        ) {
            let x: Vec<f64> = values.iter().map(|(a, _)| *a as f64).collect();
            let y: Vec<f64> = values.iter().map(|(_, b)| *b as f64).collect();
            for f in [spearman, pearson, kendall_tau] {
                let ab = f(&x, &y).unwrap();
                let ba = f(&y, &x).unwrap();
                assert_close(ab, ba, "symmetry");
                if let Some(v) = ab {
                    prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
                }
            }
        }

        #[test]
        fn histogram_counts_everything(scores in proptest::collection::vec(0.0f64..=100.0, 0..200)) {
            let h = histogram(&scores, 20);
            prop_assert_eq!(h.counts.iter().sum::<u64>() as usize, scores.len());
        }
    }
}
