//! Metrics checked against brute-force definitions.

use dcan::metrics::{auc_scores, binary_auc, evaluate, f1_scores, precision_at_k, top_k};
use dcan::numcore::RngStream;
use proptest::prelude::*;

/// Counts positive/negative pairs directly.
fn pair_auc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

fn f1_from(tp: usize, fp: usize, fn_: usize) -> f64 {
    if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// (tp, fp, fn) counted over an explicit list of (truth, prediction) cells.
fn counts(cells: impl Iterator<Item = (bool, bool)>) -> (usize, usize, usize) {
    cells.fold((0, 0, 0), |(tp, fp, fn_), (t, p)| match (t, p) {
        (true, true) => (tp + 1, fp, fn_),
        (false, true) => (tp, fp + 1, fn_),
        (true, false) => (tp, fp, fn_ + 1),
        _ => (tp, fp, fn_),
    })
}

fn random_instance(rng: &mut RngStream) -> (Vec<Vec<bool>>, Vec<Vec<f64>>) {
    let n = rng.between(1, 12);
    let m = rng.between(1, 6);
    let levels = rng.between(2, 10) as f64;
    let truth = (0..n).map(|_| (0..m).map(|_| rng.bernoulli(0.4)).collect()).collect();
    let scores = (0..n)
        .map(|_| (0..m).map(|_| (rng.uniform() * levels).floor() / levels).collect())
        .collect();
    (truth, scores)
}

#[test]
fn f1_matches_flattened_counts() {
    let mut rng = RngStream::new(21);
    for _ in 0..600 {
        let (truth, scores) = random_instance(&mut rng);
        let pred: Vec<Vec<bool>> = scores.iter().map(|r| r.iter().map(|&s| s >= 0.5).collect()).collect();
        let got = f1_scores(&truth, &pred).unwrap();
        let m = truth[0].len();
        let flat = truth.iter().flatten().copied().zip(pred.iter().flatten().copied());
        let (tp, fp, fn_) = counts(flat);
        assert!((got.micro - f1_from(tp, fp, fn_)).abs() <= 1e-12);
        let macro_: f64 = (0..m)
            .map(|j| {
                let (tp, fp, fn_) = counts(truth.iter().zip(&pred).map(|(t, p)| (t[j], p[j])));
                f1_from(tp, fp, fn_)
            })
            .sum::<f64>()
            / m as f64;
        assert!((got.macro_ - macro_).abs() <= 1e-12);
    }
}

#[test]
fn auc_matches_pair_counting() {
    let mut rng = RngStream::new(22);
    for _ in 0..600 {
        let (truth, scores) = random_instance(&mut rng);
        let got = auc_scores(&truth, &scores).unwrap();
        let m = truth[0].len();
        let mut defined = Vec::new();
        for j in 0..m {
            let l: Vec<bool> = truth.iter().map(|r| r[j]).collect();
            let s: Vec<f64> = scores.iter().map(|r| r[j]).collect();
            let want = pair_auc(&l, &s);
            match (got.per_label[j], want) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12),
                (None, None) => {}
                other => panic!("definedness differs: {other:?}"),
            }
            defined.extend(want);
        }
        let macro_ = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        match (got.macro_, macro_) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12),
            (a, b) => assert_eq!(a, b),
        }
        let fl: Vec<bool> = truth.iter().flatten().copied().collect();
        let fs: Vec<f64> = scores.iter().flatten().copied().collect();
        match (got.micro, pair_auc(&fl, &fs)) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12),
            (a, b) => assert_eq!(a, b),
        }
    }
}

#[test]
fn precision_at_k_matches_sorting_oracle() {
    let mut rng = RngStream::new(23);
    for _ in 0..500 {
        let (truth, scores) = random_instance(&mut rng);
        let m = truth[0].len();
        let k = rng.between(1, m);
        let got = precision_at_k(&truth, &scores, k).unwrap();
        let mut total = 0.0;
        for (t, s) in truth.iter().zip(&scores) {
            // selection by repeated arg-max, lowest index wins ties
            let mut taken = vec![false; m];
            let mut hits = 0;
            for _ in 0..k {
                let mut best = None;
                for j in 0..m {
                    if !taken[j] && best.is_none_or(|b: usize| s[j] > s[b]) {
                        best = Some(j);
                    }
                }
                let b = best.unwrap();
                taken[b] = true;
                hits += t[b] as usize;
            }
            total += hits as f64 / k as f64;
        }
        assert!((got - total / truth.len() as f64).abs() <= 1e-12);
    }
}

#[test]
fn worked_example_two_thirds() {
    // label A: TP=1 FP=1 FN=0; label B: TP=1 FP=0 FN=1
    let truth = vec![vec![true, true], vec![false, true]];
    let pred = vec![vec![true, true], vec![true, false]];
    let got = f1_scores(&truth, &pred).unwrap();
    assert_eq!(got.micro, 2.0 / 3.0);
    assert_eq!(got.macro_, 2.0 / 3.0);
}

#[test]
fn oracle_scores_give_perfect_metrics() {
    let truth = vec![vec![true, false, true], vec![false, true, false], vec![true, true, false]];
    let scores: Vec<Vec<f64>> = truth.iter().map(|r| r.iter().map(|&t| t as u8 as f64).collect()).collect();
    let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let r = evaluate(&labels, &truth, &scores, 0.5, 1).unwrap();
    assert_eq!(r.micro_f1, 1.0);
    assert_eq!(r.macro_f1, 1.0);
    assert_eq!(r.micro_auc, Some(1.0));
    assert_eq!(r.macro_auc, Some(1.0));
    assert_eq!(r.precision_at_k, 1.0);
}

#[test]
fn constant_scores_give_chance_auc() {
    let truth = vec![vec![true, false], vec![false, true], vec![true, true]];
    let scores = vec![vec![0.5; 2]; 3];
    let a = auc_scores(&truth, &scores).unwrap();
    assert_eq!(a.micro, Some(0.5));
    assert_eq!(a.macro_, Some(0.5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_invariant_under_monotone_transform(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let n = rng.between(2, 30);
        let labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.symmetric(3.0)).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 7.0).collect();
        prop_assert_eq!(binary_auc(&labels, &scores), binary_auc(&labels, &squashed));
    }

    #[test]
    fn metrics_invariant_under_example_permutation(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let (truth, scores) = random_instance(&mut rng);
        let mut order: Vec<usize> = (0..truth.len()).collect();
        rng.shuffle(&mut order);
        let t2: Vec<Vec<bool>> = order.iter().map(|&i| truth[i].clone()).collect();
        let s2: Vec<Vec<f64>> = order.iter().map(|&i| scores[i].clone()).collect();
        let labels: Vec<String> = (0..truth[0].len()).map(|j| format!("c{j}")).collect();
        let a = evaluate(&labels, &truth, &scores, 0.5, 3).unwrap();
        let b = evaluate(&labels, &t2, &s2, 0.5, 3).unwrap();
        prop_assert_eq!(a.micro_f1, b.micro_f1);
        prop_assert_eq!(a.macro_f1, b.macro_f1);
        prop_assert_eq!(a.micro_auc, b.micro_auc);
        prop_assert_eq!(a.macro_auc, b.macro_auc);
        prop_assert!((a.precision_at_k - b.precision_at_k).abs() < 1e-12);
    }

    #[test]
    fn top_k_is_sorted_and_stable(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let m = rng.between(1, 10);
        let s: Vec<f64> = (0..m).map(|_| (rng.uniform() * 4.0).floor()).collect();
        let k = rng.between(1, m);
        let top = top_k(&s, k);
        prop_assert_eq!(top.len(), k);
        for w in top.windows(2) {
            prop_assert!(s[w[0]] > s[w[1]] || (s[w[0]] == s[w[1]] && w[0] < w[1]));
        }
    }
}
