//! Multi-label evaluation: micro/macro F1, micro/macro ROC AUC and precision@k.
//!
//! Inputs are row-per-example matrices (`N × m`) given as slices of rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the label has no positives or no negatives.
    pub auc: Option<f64>,
}

/// The aggregate metrics plus a per-label breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub precision_at_k: f64,
    pub k: usize,
    pub per_label: Vec<LabelScores>,
}

/// Metric used for model selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MacroAuc,
    MicroAuc,
    MacroF1,
    MicroF1,
    PrecisionAtK,
}

impl EvalReport {
    /// Value of `metric`; undefined AUCs read as 0.
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::MacroAuc => self.macro_auc.unwrap_or(0.0),
            Metric::MicroAuc => self.micro_auc.unwrap_or(0.0),
            Metric::MacroF1 => self.macro_f1,
            Metric::MicroF1 => self.micro_f1,
            Metric::PrecisionAtK => self.precision_at_k,
        }
    }

    /// Flat `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| x.to_string());
        let mut out = String::new();
        out.push_str(&format!("macro_auc={}\n", opt(self.macro_auc)));
        out.push_str(&format!("micro_auc={}\n", opt(self.micro_auc)));
        out.push_str(&format!("macro_f1={}\n", self.macro_f1));
        out.push_str(&format!("micro_f1={}\n", self.micro_f1));
        out.push_str(&format!("precision_at_{}={}\n", self.k, self.precision_at_k));
        for l in &self.per_label {
            out.push_str(&format!(
                "label.{}.precision={}\nlabel.{}.recall={}\nlabel.{}.f1={}\nlabel.{}.auc={}\n",
                l.label,
                l.precision,
                l.label,
                l.recall,
                l.label,
                l.f1,
                l.label,
                opt(l.auc)
            ));
        }
        out
    }
}

fn check_shapes<A, B>(a: &[Vec<A>], b: &[Vec<B>]) -> Result<usize> {
    if a.is_empty() {
        return Err(Error::invalid("no examples"));
    }
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} vs {} examples", a.len(), b.len())));
    }
    let m = a[0].len();
    if m == 0 {
        return Err(Error::invalid("no labels"));
    }
    if a.iter().any(|r| r.len() != m) || b.iter().any(|r| r.len() != m) {
        return Err(Error::shape("rows of unequal label counts"));
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct F1Scores {
    pub micro: f64,
    pub macro_: f64,
    pub per_label: Vec<Confusion>,
}

/// Micro F1 pools confusion counts over all labels; macro F1 averages per-label
/// F1 with 0/0 read as 0.
pub fn f1_scores(y_true: &[Vec<bool>], y_pred: &[Vec<bool>]) -> Result<F1Scores> {
    let m = check_shapes(y_true, y_pred)?;
    let mut per_label = vec![Confusion::default(); m];
    for (t_row, p_row) in y_true.iter().zip(y_pred) {
        for (c, (&t, &p)) in per_label.iter_mut().zip(t_row.iter().zip(p_row)) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let pooled = per_label.iter().fold(Confusion::default(), |acc, c| Confusion {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    let macro_ = per_label.iter().map(Confusion::f1).sum::<f64>() / m as f64;
    Ok(F1Scores {
        micro: pooled.f1(),
        macro_,
        per_label,
    })
}

/// Rank-statistic AUC: probability a random positive outscores a random
/// negative, ties counted as one half. `None` without both classes.
pub fn binary_auc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    // sum of midranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&idx| labels[idx]).count();
        rank_sum += midrank * pos_in_group as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucScores {
    pub micro: Option<f64>,
    pub macro_: Option<f64>,
    pub per_label: Vec<Option<f64>>,
}

/// Micro AUC treats every (example, label) pair as one binary problem; macro
/// AUC averages over labels that have both classes.
pub fn auc_scores(y_true: &[Vec<bool>], y_score: &[Vec<f64>]) -> Result<AucScores> {
    let m = check_shapes(y_true, y_score)?;
    let per_label: Vec<Option<f64>> = (0..m)
        .map(|j| {
            let labels: Vec<bool> = y_true.iter().map(|r| r[j]).collect();
            let scores: Vec<f64> = y_score.iter().map(|r| r[j]).collect();
            binary_auc(&labels, &scores)
        })
        .collect();
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    let macro_ = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let flat_labels: Vec<bool> = y_true.iter().flatten().copied().collect();
    let flat_scores: Vec<f64> = y_score.iter().flatten().copied().collect();
    Ok(AucScores {
        micro: binary_auc(&flat_labels, &flat_scores),
        macro_,
        per_label,
    })
}

/// Indices of the `k` highest scores, ties broken by lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Mean over examples of the fraction of the top-`k` scored labels that are true.
pub fn precision_at_k(y_true: &[Vec<bool>], y_score: &[Vec<f64>], k: usize) -> Result<f64> {
    let m = check_shapes(y_true, y_score)?;
    if k == 0 || k > m {
        return Err(Error::invalid(format!("k = {k} with {m} labels")));
    }
    let total: f64 = y_true
        .iter()
        .zip(y_score)
        .map(|(t, s)| top_k(s, k).iter().filter(|&&j| t[j]).count() as f64 / k as f64)
        .sum();
    Ok(total / y_true.len() as f64)
}

/// Computes every metric. Scores at or above `threshold` count as predicted positives.
pub fn evaluate(
    labels: &[String],
    y_true: &[Vec<bool>],
    y_score: &[Vec<f64>],
    threshold: f64,
    k: usize,
) -> Result<EvalReport> {
    let m = check_shapes(y_true, y_score)?;
    if labels.len() != m {
        return Err(Error::shape(format!("{} label names for {m} labels", labels.len())));
    }
    let y_pred: Vec<Vec<bool>> = y_score
        .iter()
        .map(|r| r.iter().map(|&s| s >= threshold).collect())
        .collect();
    let f1 = f1_scores(y_true, &y_pred)?;
    let auc = auc_scores(y_true, y_score)?;
    let precision_at_k = precision_at_k(y_true, y_score, k.min(m))?;
    let per_label = labels
        .iter()
        .zip(&f1.per_label)
        .zip(&auc.per_label)
        .map(|((label, c), auc)| LabelScores {
            label: label.clone(),
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            auc: *auc,
        })
        .collect();
    Ok(EvalReport {
        macro_auc: auc.macro_,
        micro_auc: auc.micro,
        macro_f1: f1.macro_,
        micro_f1: f1.micro,
        precision_at_k,
        k: k.min(m),
        per_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(rows: &[&[u8]]) -> Vec<Vec<bool>> {
        rows.iter().map(|r| r.iter().map(|&v| v == 1).collect()).collect()
    }

    #[test]
    fn f1_worked_example() {
        // label A: TP=1, FP=1, FN=0; label B: TP=1, FP=0, FN=1
        let truth = b(&[&[1, 1], &[0, 1]]);
        let pred = b(&[&[1, 1], &[1, 0]]);
        let f = f1_scores(&truth, &pred).unwrap();
        assert_eq!(f.per_label[0], Confusion { tp: 1, fp: 1, fn_: 0 });
        assert_eq!(f.per_label[1], Confusion { tp: 1, fp: 0, fn_: 1 });
        assert_eq!(f.micro, 2.0 / 3.0);
        assert_eq!(f.macro_, 2.0 / 3.0);
    }

    #[test]
    fn f1_trivial_cases() {
        let truth = b(&[&[1, 0, 1], &[0, 1, 0]]);
        let f = f1_scores(&truth, &truth).unwrap();
        assert_eq!((f.micro, f.macro_), (1.0, 1.0));
        let none = b(&[&[0, 0, 0], &[0, 0, 0]]);
        let f = f1_scores(&truth, &none).unwrap();
        assert_eq!((f.micro, f.macro_), (0.0, 0.0));
        assert!(f1_scores(&[], &[]).is_err());
    }

    #[test]
    fn auc_cases() {
        let labels = [true, false, true, false];
        assert_eq!(binary_auc(&labels, &[0.9, 0.1, 0.8, 0.2]), Some(1.0));
        assert_eq!(binary_auc(&labels, &[0.5; 4]), Some(0.5));
        assert_eq!(binary_auc(&labels, &[-0.9, -0.1, -0.8, -0.2]), Some(0.0));
        assert_eq!(binary_auc(&[true, true], &[0.1, 0.2]), None);
        // one positive tied with one of two negatives: (1 + 0.5) / 2
        assert_eq!(binary_auc(&[true, false, false], &[0.5, 0.5, 0.1]), Some(0.75));
    }

    #[test]
    fn micro_auc_undefined_for_single_class() {
        let truth = b(&[&[1, 1], &[1, 1]]);
        let a = auc_scores(&truth, &[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        assert_eq!(a.micro, None);
        assert_eq!(a.macro_, None);
    }

    #[test]
    fn precision_at_k_cases() {
        let truth = b(&[&[1, 1, 0, 0, 0, 0]]);
        let scores = vec![vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4]];
        assert_eq!(precision_at_k(&truth, &scores, 5).unwrap(), 0.4);
        assert_eq!(precision_at_k(&truth, &scores, 2).unwrap(), 1.0);
        let rev = vec![vec![0.1, 0.2, 0.7, 0.6, 0.5, 0.4]];
        assert_eq!(precision_at_k(&truth, &rev, 4).unwrap(), 0.0);
        assert!(precision_at_k(&truth, &scores, 7).is_err());
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k(&[0.5, 0.9, 0.5, 0.5], 3), vec![1, 0, 2]);
    }

    #[test]
    fn report_kv_has_fixed_leading_keys() {
        let truth = b(&[&[1, 0], &[0, 1]]);
        let labels = vec!["a".to_string(), "b".to_string()];
        let r = evaluate(&labels, &truth, &[vec![0.9, 0.1], vec![0.2, 0.8]], 0.5, 5).unwrap();
        assert_eq!(r.k, 2);
        let kv = r.to_kv();
        let keys: Vec<&str> = kv.lines().take(5).map(|l| l.split('=').next().unwrap()).collect();
        assert_eq!(keys, ["macro_auc", "micro_auc", "macro_f1", "micro_f1", "precision_at_2"]);
        assert!(kv.contains("label.b.auc=1"));
    }
}
