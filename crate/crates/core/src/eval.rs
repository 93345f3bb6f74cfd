//! Precision, recall and F1 for relation classification and tuple extraction,
//! threshold tuning, ensemble voting, error categories and paired bootstrap
//! significance. Everything is micro-averaged.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TupleStrings, NONE_LABEL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub predicted: String,
    /// Probability of the predicted label.
    pub confidence: f64,
    pub gold: String,
}

/// True positive, false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl core::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl From<Counts> for PrfReport {
    fn from(c: Counts) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        PrfReport {
            precision,
            recall,
            f1,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
        }
    }
}

/// Label after demoting low-confidence predictions to `None`.
pub fn thresholded_label(p: &ScoredPrediction, threshold: f64) -> &str {
    if p.predicted != NONE_LABEL && p.confidence < threshold {
        NONE_LABEL
    } else {
        &p.predicted
    }
}

fn classification_counts(p: &ScoredPrediction, threshold: f64) -> Counts {
    let label = thresholded_label(p, threshold);
    let mut c = Counts::default();
    if label != NONE_LABEL {
        if label == p.gold {
            c.tp += 1;
        } else {
            c.fp += 1;
        }
    }
    if p.gold != NONE_LABEL && label != p.gold {
        c.fn_ += 1;
    }
    c
}

/// `None` is never a positive class: it only contributes misses.
pub fn classification_prf(preds: &[ScoredPrediction], threshold: f64) -> PrfReport {
    let mut c = Counts::default();
    for p in preds {
        c += classification_counts(p, threshold);
    }
    c.into()
}

/// Threshold in `{0} ∪ confidences` maximizing F1, smallest on ties.
pub fn tune_threshold(preds: &[ScoredPrediction]) -> Result<(f64, PrfReport)> {
    if !preds.iter().any(|p| p.gold != NONE_LABEL) {
        return Err(Error::domain("threshold tuning needs at least one positive gold label"));
    }
    let mut candidates: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (0.0, classification_prf(preds, 0.0));
    for &t in &candidates {
        let r = classification_prf(preds, t);
        if r.f1 > best.1.f1 {
            best = (t, r);
        }
    }
    Ok(best)
}

/// `(threshold, precision, recall)` rows over the same candidate thresholds.
pub fn pr_curve(preds: &[ScoredPrediction]) -> Vec<(f64, f64, f64)> {
    let mut candidates: Vec<f64> = preds.iter().map(|p| p.confidence).collect();
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates
        .into_iter()
        .map(|t| {
            let r = classification_prf(preds, t);
            (t, r.precision, r.recall)
        })
        .collect()
}

fn check_aligned<A, B>(pred: &[A], gold: &[B]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::validation(
            "predictions",
            format!("{} predicted instances for {} gold instances", pred.len(), gold.len()),
        ));
    }
    Ok(())
}

fn set_counts<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> Counts {
    let tp = pred.intersection(gold).count();
    Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

pub fn tuple_counts(pred: &[BTreeSet<TupleStrings>], gold: &[BTreeSet<TupleStrings>]) -> Result<Vec<Counts>> {
    check_aligned(pred, gold)?;
    Ok(pred.iter().zip(gold).map(|(p, g)| set_counts(p, g)).collect())
}

/// Exact match on both entity strings and the relation.
pub fn tuple_set_prf(pred: &[BTreeSet<TupleStrings>], gold: &[BTreeSet<TupleStrings>]) -> Result<PrfReport> {
    let mut c = Counts::default();
    for x in tuple_counts(pred, gold)? {
        c += x;
    }
    Ok(c.into())
}

/// Entity-generation and relation-generation reports.
pub fn subtask_eval(
    pred: &[BTreeSet<TupleStrings>],
    gold: &[BTreeSet<TupleStrings>],
) -> Result<(PrfReport, PrfReport)> {
    check_aligned(pred, gold)?;
    let entities = |s: &BTreeSet<TupleStrings>| -> BTreeSet<String> {
        s.iter().flat_map(|t| [t.0.clone(), t.1.clone()]).collect()
    };
    let relations = |s: &BTreeSet<TupleStrings>| -> BTreeSet<String> { s.iter().map(|t| t.2.clone()).collect() };
    let (mut ce, mut cr) = (Counts::default(), Counts::default());
    for (p, g) in pred.iter().zip(gold) {
        ce += set_counts(&entities(p), &entities(g));
        cr += set_counts(&relations(p), &relations(g));
    }
    Ok((ce.into(), cr.into()))
}

/// Majority vote: a tuple survives when at least `⌊k/2⌋ + 1` of the `k` runs
/// produced it for the same instance.
pub fn ensemble_vote<T: Ord + Clone>(runs: &[Vec<BTreeSet<T>>], k: usize) -> Result<Vec<BTreeSet<T>>> {
    if runs.len() != k {
        return Err(Error::validation(
            "runs",
            format!("expected {k} runs, got {}", runs.len()),
        ));
    }
    let n = runs.first().map_or(0, Vec::len);
    if runs.iter().any(|r| r.len() != n) {
        return Err(Error::validation("runs", "runs disagree on the number of instances"));
    }
    let need = k / 2 + 1;
    Ok((0..n)
        .map(|i| {
            let mut votes: BTreeMap<&T, usize> = BTreeMap::new();
            for r in runs {
                for t in &r[i] {
                    *votes.entry(t).or_default() += 1;
                }
            }
            votes
                .into_iter()
                .filter(|&(_, v)| v >= need)
                .map(|(t, _)| t.clone())
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub order: usize,
    pub ent1: usize,
    pub ent2: usize,
    pub other: usize,
    /// All predicted tuples, the denominator of the percentages.
    pub predictions: usize,
}

impl ErrorCounts {
    pub fn percentages(&self) -> [f64; 4] {
        let pct = |x: usize| {
            if self.predictions == 0 {
                0.0
            } else {
                100.0 * x as f64 / self.predictions as f64
            }
        };
        [pct(self.order), pct(self.ent1), pct(self.ent2), pct(self.other)]
    }
}

/// Classifies each false positive, first matching rule wins: swapped
/// entities, wrong first entity, wrong second entity, anything else.
pub fn categorize_errors(
    pred: &[BTreeSet<TupleStrings>],
    gold: &[BTreeSet<TupleStrings>],
) -> Result<ErrorCounts> {
    check_aligned(pred, gold)?;
    let mut out = ErrorCounts::default();
    for (p, g) in pred.iter().zip(gold) {
        out.predictions += p.len();
        for t in p.difference(g) {
            let (e1, e2, r) = t;
            if g.contains(&(e2.clone(), e1.clone(), r.clone())) {
                out.order += 1;
            } else if g.iter().any(|(g1, g2, gr)| gr == r && g2 == e2 && g1 != e1) {
                out.ent1 += 1;
            } else if g.iter().any(|(g1, g2, gr)| gr == r && g1 == e1 && g2 != e2) {
                out.ent2 += 1;
            } else {
                out.other += 1;
            }
        }
    }
    Ok(out)
}

/// Per-instance counts of a classifier, for bootstrap testing.
pub fn classification_instance_counts(preds: &[ScoredPrediction], threshold: f64) -> Vec<Counts> {
    preds.iter().map(|p| classification_counts(p, threshold)).collect()
}

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Paired bootstrap over instances. Returns the fraction of resamples in
/// which system `a` fails to beat system `b` on F1; small values mean `a` is
/// significantly better.
pub fn paired_bootstrap(a: &[Counts], b: &[Counts], resamples: usize, seed: u64) -> Result<f64> {
    check_aligned(a, b)?;
    if a.is_empty() || resamples == 0 {
        return Err(Error::domain("bootstrap needs instances and resamples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = a.len();
    let mut not_better = 0usize;
    for _ in 0..resamples {
        let (mut ca, mut cb) = (Counts::default(), Counts::default());
        for _ in 0..n {
            let i = rng.random_range(0..n);
            ca += a[i];
            cb += b[i];
        }
        if PrfReport::from(ca).f1 <= PrfReport::from(cb).f1 {
            not_better += 1;
        }
    }
    Ok(not_better as f64 / resamples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn sp(pred: &str, conf: f64, gold: &str) -> ScoredPrediction {
        ScoredPrediction {
            predicted: pred.into(),
            confidence: conf,
            gold: gold.into(),
        }
    }

    fn t(a: &str, b: &str, r: &str) -> TupleStrings {
        (a.to_string(), b.to_string(), r.to_string())
    }

    fn set(ts: &[TupleStrings]) -> BTreeSet<TupleStrings> {
        ts.iter().cloned().collect()
    }

    #[test]
    fn classification_fixtures() {
        let all = [sp("a", 0.9, "a"), sp("b", 0.8, "b")];
        let r = classification_prf(&all, 0.0);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));

        let r = classification_prf(&[sp("a", 0.3, "a")], 0.5);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 0, 1));

        let four = [
            sp("a", 0.9, "a"),
            sp("b", 0.9, "None"),
            sp("None", 0.9, "c"),
            sp("None", 0.9, "None"),
        ];
        let r = classification_prf(&four, 0.0);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 1));
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn threshold_fixtures() {
        // errors all sit below 0.45, correct predictions at or above it
        let preds = [
            sp("a", 0.2, "None"),
            sp("b", 0.3, "None"),
            sp("a", 0.4, "None"),
            sp("a", 0.45, "a"),
            sp("b", 0.6, "b"),
            sp("a", 0.9, "a"),
        ];
        let (th, r) = tune_threshold(&preds).unwrap();
        assert_eq!(th, 0.45);
        assert_eq!(r.f1, 1.0);
        assert_eq!(classification_prf(&preds, th), r);

        let correct = [sp("a", 0.7, "a"), sp("b", 0.8, "b")];
        assert_eq!(tune_threshold(&correct).unwrap().0, 0.0);
        assert_eq!(tune_threshold(&[sp("a", 0.7, "a")]).unwrap().0, 0.0);
        assert!(tune_threshold(&[sp("a", 0.7, "None")]).is_err());
    }

    #[test]
    fn tuple_fixtures() {
        let r = tuple_set_prf(&[set(&[t("A", "B", "r")])], &[set(&[t("A", "C", "r")])]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        let r = tuple_set_prf(
            &[set(&[t("A", "B", "r"), t("A", "C", "r")])],
            &[set(&[t("A", "B", "r"), t("A", "D", "r")])],
        )
        .unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        let r = tuple_set_prf(&[set(&[])], &[set(&[t("A", "B", "r")])]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.fn_), (0.0, 0.0, 0.0, 1));
        assert!(tuple_set_prf(&[], &[set(&[])]).is_err());
    }

    #[test]
    fn subtask_fixtures() {
        let gold = [set(&[t("A", "B", "r")])];
        let (e, r) = subtask_eval(&gold, &gold).unwrap();
        assert_eq!((e.f1, r.f1), (1.0, 1.0));
        let (e, r) = subtask_eval(&[set(&[t("A", "B", "s")])], &gold).unwrap();
        assert_eq!((e.f1, r.f1), (1.0, 0.0));
    }

    #[test]
    fn vote_fixtures() {
        let x = t("A", "B", "r");
        let y = t("C", "D", "r");
        let runs: Vec<Vec<BTreeSet<TupleStrings>>> = (1..=5)
            .map(|run| {
                let mut s = BTreeSet::new();
                if run <= 3 {
                    s.insert(x.clone());
                }
                if run == 2 || run == 5 {
                    s.insert(y.clone());
                }
                vec![s]
            })
            .collect();
        assert_eq!(ensemble_vote(&runs, 5).unwrap(), vec![set(&[x.clone()])]);
        assert!(ensemble_vote(&runs[..2], 5).is_err());
        let same = vec![vec![set(&[x.clone(), y.clone()])]; 5];
        assert_eq!(ensemble_vote(&same, 5).unwrap(), same[0]);
    }

    #[test]
    fn error_category_fixtures() {
        let gold = [set(&[t("A", "B", "r")])];
        let cat = |p: TupleStrings| categorize_errors(&[set(&[p])], &gold).unwrap();
        assert_eq!(cat(t("B", "A", "r")).order, 1);
        assert_eq!(cat(t("X", "B", "r")).ent1, 1);
        assert_eq!(cat(t("A", "X", "r")).ent2, 1);
        let other = categorize_errors(&[set(&[t("A", "B", "r"), t("C", "D", "r")])], &[set(&[t("A", "B", "r")])]).unwrap();
        assert_eq!((other.other, other.predictions), (1, 2));
        assert_eq!(other.percentages(), [0.0, 0.0, 0.0, 50.0]);
    }

    #[test]
    fn bootstrap_prefers_the_better_system() {
        let good: Vec<Counts> = (0..40).map(|_| Counts { tp: 1, fp: 0, fn_: 0 }).collect();
        let bad: Vec<Counts> = (0..40)
            .map(|i| if i % 2 == 0 { Counts { tp: 1, fp: 0, fn_: 0 } } else { Counts { tp: 0, fp: 1, fn_: 1 } })
            .collect();
        assert!(paired_bootstrap(&good, &bad, 1000, 1).unwrap() < 0.01);
        assert!(paired_bootstrap(&bad, &good, 1000, 1).unwrap() > 0.99);
    }

    fn arb_preds() -> impl Strategy<Value = Vec<ScoredPrediction>> {
        let label = prop::sample::select(vec!["None", "a", "b"]);
        prop::collection::vec((label.clone(), 0.0f64..=1.0, label), 1..30).prop_map(|v| {
            v.into_iter().map(|(p, c, g)| sp(p, c, g)).collect()
        })
    }

    proptest! {
        #[test]
        fn recall_never_rises_with_threshold(preds in arb_preds(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(classification_prf(&preds, hi).recall <= classification_prf(&preds, lo).recall);
        }

        #[test]
        fn tuned_threshold_reproduces_its_score(preds in arb_preds()) {
            if let Ok((th, r)) = tune_threshold(&preds) {
                prop_assert_eq!(classification_prf(&preds, th), r);
            }
        }

        #[test]
        fn tuple_prf_ignores_order_and_duplicates(ids in prop::collection::vec(0u8..6, 0..10)) {
            let tuples: Vec<TupleStrings> = ids.iter().map(|i| t(&alloc::format!("e{i}"), "x", "r")).collect();
            let fwd: BTreeSet<_> = tuples.iter().cloned().collect();
            let rev: BTreeSet<_> = tuples.iter().rev().chain(tuples.iter()).cloned().collect();
            let gold = set(&[t("e1", "x", "r"), t("e2", "x", "r")]);
            prop_assert_eq!(
                tuple_set_prf(&[fwd], &[gold.clone()]).unwrap(),
                tuple_set_prf(&[rev], &[gold]).unwrap()
            );
        }

        #[test]
        fn vote_is_a_subset_of_the_union(sets in prop::collection::vec(prop::collection::btree_set(0u8..5, 0..5), 5)) {
            let runs: Vec<Vec<BTreeSet<u8>>> = sets.iter().map(|s| vec![s.clone()]).collect();
            let voted = ensemble_vote(&runs, 5).unwrap();
            let union: BTreeSet<u8> = sets.iter().flatten().copied().collect();
            prop_assert!(voted[0].is_subset(&union));
        }
    }
}
