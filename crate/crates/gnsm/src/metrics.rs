//! Ranking metrics for anomaly detection.
//!
//! Average precision uses the mean-precision-at-positives form (the mean
//! of precision over all ranks that hold a positive, i.e. over all
//! attainable detection thresholds), not interpolated AP. AUROC uses the
//! Mann-Whitney U statistic with midrank tie correction. Both are
//! invariant under strictly increasing transforms of the scores.

use serde::Serialize;

use crate::error::{Error, Result};

/// Scores with binary labels (1 = anomaly), validated to contain both
/// classes and only finite scores.
#[derive(Clone, Debug)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Validation("scores must be finite".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Validation("labels must be 0 or 1".into()));
        }
        let pos = labels.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::Validation(
                "need at least one positive and one negative label".into(),
            ));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Indices sorted by score descending; ties keep input order.
    fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("scores validated finite")
        });
        order
    }
}

/// Mean of precision over the ranks that hold a positive.
pub fn average_precision(scored: &ScoredSet) -> f64 {
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank0, &i) in scored.ranking().iter().enumerate() {
        if scored.labels[i] == 1 {
            tp += 1;
            sum += tp as f64 / (rank0 + 1) as f64;
        }
    }
    sum / tp as f64
}

/// Midranks (1-based) with ties averaged.
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the midrank.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUROC with midrank tie correction: the probability that
/// a random positive outscores a random negative (ties count half).
pub fn auroc(scored: &ScoredSet) -> f64 {
    let ranks = midranks(&scored.scores);
    let n_pos = scored.n_positives();
    let n_neg = scored.len() - n_pos;
    let rank_sum: f64 = ranks
        .iter()
        .zip(&scored.labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

/// One precision/recall point per rank of the descending score ordering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// The full precision-recall trace; `ap_from_pr_points` re-integrates it
/// back to the scalar AP.
pub fn pr_points(scored: &ScoredSet) -> Vec<PrPoint> {
    let n_pos = scored.n_positives() as f64;
    let mut tp = 0usize;
    let mut out = Vec::with_capacity(scored.len());
    for (rank0, &i) in scored.ranking().iter().enumerate() {
        if scored.labels[i] == 1 {
            tp += 1;
        }
        out.push(PrPoint {
            threshold: scored.scores[i],
            recall: tp as f64 / n_pos,
            precision: tp as f64 / (rank0 + 1) as f64,
        });
    }
    out
}

/// Mean precision over the points where recall increases (exactly the
/// ranks that hold a positive), i.e. the trapezoid-free mean-precision
/// form of AP.
pub fn ap_from_pr_points(points: &[PrPoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Validation("no precision-recall points".into()));
    }
    let mut prev_recall = 0.0;
    let mut sum = 0.0;
    let mut n_pos = 0usize;
    for p in points {
        if p.recall < prev_recall {
            return Err(Error::Validation("recall must be nondecreasing".into()));
        }
        if p.recall > prev_recall {
            sum += p.precision;
            n_pos += 1;
        }
        prev_recall = p.recall;
    }
    if n_pos == 0 {
        return Err(Error::Validation("recall never increases".into()));
    }
    Ok(sum / n_pos as f64)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Numeric(
            "correlation undefined for a constant sequence".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Spearman rank correlation: Pearson correlation of midranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Validation("length mismatch".into()));
    }
    if x.len() < 2 {
        return Err(Error::Validation("need at least 2 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("values must be finite".into()));
    }
    pearson(&midranks(x), &midranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn three_row_hand_example() {
        let s = set(&[0.9, 0.8, 0.1], &[1, 0, 1]);
        assert_relative_eq!(average_precision(&s), 5.0 / 6.0, epsilon = 1e-15);
        // Concordant pairs: 1 of 2.
        assert_relative_eq!(auroc(&s), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn perfect_and_reversed_rankings() {
        let s = set(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
        assert_eq!(average_precision(&s), 1.0);
        assert_eq!(auroc(&s), 1.0);
        let r = set(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]);
        assert_eq!(auroc(&r), 0.0);
        // Reversed AP: positives at ranks 3 and 4 -> (1/3 + 2/4)/2.
        assert_relative_eq!(
            average_precision(&r),
            (1.0 / 3.0 + 0.5) / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn ties_use_stable_order_for_ap_and_midranks_for_auroc() {
        let s = set(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]);
        // Stable order keeps input order: positives at ranks 1 and 3.
        assert_relative_eq!(
            average_precision(&s),
            (1.0 + 2.0 / 3.0) / 2.0,
            epsilon = 1e-15
        );
        // All-tied scores carry no ranking information.
        assert_relative_eq!(auroc(&s), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn midranks_match_hand_values() {
        assert_eq!(midranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(midranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn null_baseline_ap_approaches_positive_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 4000;
        let ratio = 0.2;
        let labels: Vec<u8> = (0..n).map(|i| u8::from((i as f64) < ratio * n as f64)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let s = ScoredSet::new(scores, labels).unwrap();
        let ap = average_precision(&s);
        assert!(
            (ap - ratio).abs() < 0.05,
            "null AP {ap} far from ratio {ratio}"
        );
        let a = auroc(&s);
        assert!((a - 0.5).abs() < 0.05, "null AUROC {a}");
    }

    #[test]
    fn pr_points_reintegrate_to_ap() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let n = 50 + trial * 37;
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let s = match ScoredSet::new(scores, labels) {
                Ok(s) => s,
                Err(_) => continue, // single-class draw
            };
            let ap = average_precision(&s);
            let pts = pr_points(&s);
            assert_eq!(pts.len(), s.len());
            let re = ap_from_pr_points(&pts).unwrap();
            assert!((ap - re).abs() < 1e-12, "AP {ap} vs re-integrated {re}");
            // Final recall is exactly 1.
            assert_eq!(pts.last().unwrap().recall, 1.0);
        }
    }

    #[test]
    fn ap_from_pr_points_validates() {
        assert!(ap_from_pr_points(&[]).is_err());
        let bad = [
            PrPoint { threshold: 1.0, recall: 0.5, precision: 1.0 },
            PrPoint { threshold: 0.5, recall: 0.2, precision: 1.0 },
        ];
        assert!(ap_from_pr_points(&bad).is_err());
    }

    #[test]
    fn spearman_hand_values() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        let rev = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&a, &rev).unwrap(), -1.0);
        // Monotone nonlinearity preserves rank correlation exactly.
        let exp: Vec<f64> = a.iter().map(|v| v.exp()).collect();
        assert_eq!(spearman(&a, &exp).unwrap(), 1.0);
        // Ties via midranks: hand-computed Pearson of ranks.
        let b = [5.0, 6.0, 7.0, 8.0, 7.0];
        let expected = 8.0 / 95.0f64.sqrt();
        assert_relative_eq!(spearman(&a, &b).unwrap(), expected, epsilon = 1e-12);
        assert!((spearman(&a, &b).unwrap() - 0.8208).abs() < 1e-4);
    }

    #[test]
    fn validation_errors() {
        assert!(ScoredSet::new(vec![1.0], vec![1]).is_err()); // single class
        assert!(ScoredSet::new(vec![1.0, 2.0], vec![0, 0]).is_err());
        assert!(ScoredSet::new(vec![f64::NAN, 2.0], vec![0, 1]).is_err());
        assert!(ScoredSet::new(vec![1.0, 2.0], vec![0, 2]).is_err());
        assert!(ScoredSet::new(vec![1.0], vec![0, 1]).is_err());
        assert!(spearman(&[1.0], &[2.0]).is_err());
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err()); // constant
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn prop_metrics_invariant_under_increasing_transforms(
            raw in proptest::collection::vec((-10.0f64..10.0, 0..2u8), 5..60),
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, l)| *l).collect();
            let Ok(s) = ScoredSet::new(scores.clone(), labels.clone()) else {
                return Ok(()); // single-class sample
            };
            let affine: Vec<f64> = scores.iter().map(|v| 3.0 * v + 7.0).collect();
            let expv: Vec<f64> = scores.iter().map(|v| v.exp()).collect();
            for t in [affine, expv] {
                let ts = ScoredSet::new(t, labels.clone()).unwrap();
                prop_assert!((average_precision(&s) - average_precision(&ts)).abs() < 1e-12);
                prop_assert!((auroc(&s) - auroc(&ts)).abs() < 1e-12);
            }
        }

        #[test]
        fn prop_ap_and_auroc_stay_in_unit_interval(
            raw in proptest::collection::vec((-1.0f64..1.0, 0..2u8), 4..40),
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, l)| *l).collect();
            let Ok(s) = ScoredSet::new(scores, labels) else { return Ok(()) };
            let ap = average_precision(&s);
            let roc = auroc(&s);
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert!((0.0..=1.0).contains(&roc));
        }
    }
}
